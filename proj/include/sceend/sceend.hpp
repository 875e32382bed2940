#pragma once

#include "sceend/assignment.hpp"
#include "sceend/checkpoint.hpp"
#include "sceend/decode.hpp"
#include "sceend/losses.hpp"
#include "sceend/matrix.hpp"
#include "sceend/metrics.hpp"
#include "sceend/model.hpp"
#include "sceend/optim.hpp"
#include "sceend/rttm.hpp"
#include "sceend/sim.hpp"
#include "sceend/tape.hpp"
