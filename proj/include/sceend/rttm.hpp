#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sceend/decode.hpp"

namespace sceend {

/// Parse an RTTM file into one SegmentList per recording id.
/// Expected line shape:
///   SPEAKER <rec-id> 1 <start> <dur> <NA> <NA> <speaker> <NA> <NA>
inline std::map<std::string, SegmentList> rttm_read(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  std::map<std::string, SegmentList> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string kind;
    if (!(ss >> kind)) continue;  // blank line
    if (kind != "SPEAKER")
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected SPEAKER record");
    std::string rec, chan, na1, na2, spk;
    double start, dur;
    if (!(ss >> rec >> chan >> start >> dur >> na1 >> na2 >> spk))
      throw ParseError(path + ":" + std::to_string(lineno) + ": malformed SPEAKER line");
    if (dur <= 0.0)
      throw ParseError(path + ":" + std::to_string(lineno) + ": non-positive duration");
    auto& list = out[rec];
    list.rec_id = rec;
    list.segments.push_back({spk, start, dur});
  }
  return out;
}

/// Byte-stable writer; start/duration printed to 3 decimals.
inline void rttm_write(const std::vector<SegmentList>& lists, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for write: " + path);
  char buf[64];
  for (const auto& list : lists) {
    for (const Segment& s : list.segments) {
      std::snprintf(buf, sizeof(buf), "%.3f", s.start);
      std::string start = buf;
      std::snprintf(buf, sizeof(buf), "%.3f", s.duration);
      std::string dur = buf;
      f << "SPEAKER " << list.rec_id << " 1 " << start << " " << dur << " <NA> <NA> "
        << s.speaker << " <NA> <NA>\n";
    }
  }
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace sceend
