#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <random>
#include <utility>

#include "sceend/matrix.hpp"

namespace sceend {

constexpr double kBceEps = 1e-7;
constexpr double kLayerNormEps = 1e-5;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Records primitive ops in topological order together
/// with the activations their backward rules need. A tape built with
/// grad_enabled=false keeps values only (inference / stage-1 passes).
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_(grad_enabled) {}

  bool grad_enabled() const { return grad_; }

  /// New leaf. If grad_sink is non-null, backward() accumulates this
  /// leaf's gradient into *grad_sink (shape-matched, += semantics).
  Var input(Matrix v, Matrix* grad_sink = nullptr) {
    return push(std::move(v), nullptr, grad_sink);
  }
  Var constant(Matrix v) { return push(std::move(v), nullptr, nullptr); }

  const Matrix& value(Var v) const { return nodes_[check(v)].value; }
  const Matrix& grad_of(Var v) const { return nodes_[check(v)].grad; }
  size_t num_nodes() const { return nodes_.size(); }

  // ---------------------------------------------------------------- kernels

  Var matmul(Var a, Var b) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    Matrix C = sceend::matmul(A, B);
    return push(std::move(C), [this, a, b](int out) {
      const Matrix& g = nodes_[out].grad;
      auto G = as_eigen(g);
      as_eigen(nodes_[a.id].grad).noalias() += G * as_eigen(nodes_[b.id].value).transpose();
      as_eigen(nodes_[b.id].grad).noalias() += as_eigen(nodes_[a.id].value).transpose() * G;
    });
  }

  Var add(Var a, Var b) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (!A.same_shape(B)) throw ShapeError("add: shape mismatch");
    Matrix C = A;
    for (size_t i = 0; i < C.size(); ++i) C.data[i] += B.data[i];
    return push(std::move(C), [this, a, b](int out) {
      const Matrix& g = nodes_[out].grad;
      accumulate(a, g);
      accumulate(b, g);
    });
  }

  Var sub(Var a, Var b) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (!A.same_shape(B)) throw ShapeError("sub: shape mismatch");
    Matrix C = A;
    for (size_t i = 0; i < C.size(); ++i) C.data[i] -= B.data[i];
    return push(std::move(C), [this, a, b](int out) {
      const Matrix& g = nodes_[out].grad;
      accumulate(a, g);
      Matrix& gb = nodes_[b.id].grad;
      for (size_t i = 0; i < g.size(); ++i) gb.data[i] -= g.data[i];
    });
  }

  Var mul(Var a, Var b) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (!A.same_shape(B)) throw ShapeError("mul: shape mismatch");
    Matrix C = A;
    for (size_t i = 0; i < C.size(); ++i) C.data[i] *= B.data[i];
    return push(std::move(C), [this, a, b](int out) {
      const Matrix& g = nodes_[out].grad;
      Matrix& ga = nodes_[a.id].grad;
      Matrix& gb = nodes_[b.id].grad;
      const Matrix& A2 = nodes_[a.id].value;
      const Matrix& B2 = nodes_[b.id].value;
      for (size_t i = 0; i < g.size(); ++i) {
        ga.data[i] += g.data[i] * B2.data[i];
        gb.data[i] += g.data[i] * A2.data[i];
      }
    });
  }

  Var scale(Var a, double s) {
    Matrix C = value(a);
    for (double& v : C.data) v *= s;
    return push(std::move(C), [this, a, s](int out) {
      const Matrix& g = nodes_[out].grad;
      Matrix& ga = nodes_[a.id].grad;
      for (size_t i = 0; i < g.size(); ++i) ga.data[i] += s * g.data[i];
    });
  }

  /// a (R x C) + column vector b (R x 1) broadcast across columns.
  Var add_col_broadcast(Var a, Var b) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (B.cols != 1 || B.rows != A.rows) throw ShapeError("add_col_broadcast: bias shape");
    Matrix C = A;
    for (int i = 0; i < C.rows; ++i)
      for (int j = 0; j < C.cols; ++j) C(i, j) += B(i, 0);
    return push(std::move(C), [this, a, b](int out) {
      const Matrix& g = nodes_[out].grad;
      accumulate(a, g);
      Matrix& gb = nodes_[b.id].grad;
      for (int i = 0; i < g.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < g.cols; ++j) s += g(i, j);
        gb(i, 0) += s;
      }
    });
  }

  Var sigmoid(Var a) {
    Matrix C = value(a);
    for (double& v : C.data) v = sigmoid_scalar(v);
    return push(std::move(C), [this, a](int out) {
      const Matrix& g = nodes_[out].grad;
      const Matrix& y = nodes_[out].value;
      Matrix& ga = nodes_[a.id].grad;
      for (size_t i = 0; i < g.size(); ++i)
        ga.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
    });
  }

  Var tanh_(Var a) {
    Matrix C = value(a);
    for (double& v : C.data) v = std::tanh(v);
    return push(std::move(C), [this, a](int out) {
      const Matrix& g = nodes_[out].grad;
      const Matrix& y = nodes_[out].value;
      Matrix& ga = nodes_[a.id].grad;
      for (size_t i = 0; i < g.size(); ++i)
        ga.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
    });
  }

  Var relu(Var a) {
    Matrix C = value(a);
    for (double& v : C.data) v = v > 0.0 ? v : 0.0;
    return push(std::move(C), [this, a](int out) {
      const Matrix& g = nodes_[out].grad;
      const Matrix& x = nodes_[a.id].value;
      Matrix& ga = nodes_[a.id].grad;
      for (size_t i = 0; i < g.size(); ++i)
        if (x.data[i] > 0.0) ga.data[i] += g.data[i];
    });
  }

  /// Column-wise softmax with max subtraction.
  Var softmax_cols(Var a) {
    const Matrix& A = value(a);
    Matrix C(A.rows, A.cols);
    for (int j = 0; j < A.cols; ++j) {
      double mx = -1e300;
      for (int i = 0; i < A.rows; ++i) mx = std::max(mx, A(i, j));
      double sum = 0.0;
      for (int i = 0; i < A.rows; ++i) {
        double e = std::exp(A(i, j) - mx);
        C(i, j) = e;
        sum += e;
      }
      for (int i = 0; i < A.rows; ++i) C(i, j) /= sum;
    }
    return push(std::move(C), [this, a](int out) {
      const Matrix& g = nodes_[out].grad;
      const Matrix& y = nodes_[out].value;
      Matrix& ga = nodes_[a.id].grad;
      for (int j = 0; j < g.cols; ++j) {
        double dot = 0.0;
        for (int i = 0; i < g.rows; ++i) dot += g(i, j) * y(i, j);
        for (int i = 0; i < g.rows; ++i) ga(i, j) += y(i, j) * (g(i, j) - dot);
      }
    });
  }

  /// Per-column normalization over the row axis, then affine with
  /// gain/bias column vectors (R x 1). Population variance, eps inside sqrt.
  Var layer_norm(Var a, Var gain, Var bias, double eps = kLayerNormEps) {
    const Matrix& A = value(a);
    const Matrix& G = value(gain);
    const Matrix& B = value(bias);
    if (G.rows != A.rows || G.cols != 1 || B.rows != A.rows || B.cols != 1)
      throw ShapeError("layer_norm: gain/bias length must equal rows");
    const int R = A.rows;
    Matrix C(R, A.cols);
    Matrix xhat(R, A.cols);
    std::vector<double> inv_std(A.cols);
    for (int j = 0; j < A.cols; ++j) {
      double mean = 0.0;
      for (int i = 0; i < R; ++i) mean += A(i, j);
      mean /= R;
      double var = 0.0;
      for (int i = 0; i < R; ++i) {
        double d = A(i, j) - mean;
        var += d * d;
      }
      var /= R;
      double is = 1.0 / std::sqrt(var + eps);
      inv_std[j] = is;
      for (int i = 0; i < R; ++i) {
        xhat(i, j) = (A(i, j) - mean) * is;
        C(i, j) = G(i, 0) * xhat(i, j) + B(i, 0);
      }
    }
    auto xh = std::make_shared<Matrix>(std::move(xhat));
    auto istd = std::make_shared<std::vector<double>>(std::move(inv_std));
    return push(std::move(C), [this, a, gain, bias, xh, istd](int out) {
      const Matrix& g = nodes_[out].grad;
      const Matrix& G2 = nodes_[gain.id].value;
      Matrix& ga = nodes_[a.id].grad;
      Matrix& gg = nodes_[gain.id].grad;
      Matrix& gb = nodes_[bias.id].grad;
      const int R = g.rows;
      for (int j = 0; j < g.cols; ++j) {
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int i = 0; i < R; ++i) {
          double dxh = g(i, j) * G2(i, 0);
          sum_dxhat += dxh;
          sum_dxhat_xhat += dxh * (*xh)(i, j);
          gg(i, 0) += g(i, j) * (*xh)(i, j);
          gb(i, 0) += g(i, j);
        }
        const double is = (*istd)[j];
        for (int i = 0; i < R; ++i) {
          double dxh = g(i, j) * G2(i, 0);
          ga(i, j) += is * (dxh - sum_dxhat / R - (*xh)(i, j) * sum_dxhat_xhat / R);
        }
      }
    });
  }

  Var concat_vertical(Var a, Var b) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (A.cols != B.cols) throw ShapeError("concat_vertical: column count mismatch");
    Matrix C(A.rows + B.rows, A.cols);
    std::copy(A.data.begin(), A.data.end(), C.data.begin());
    std::copy(B.data.begin(), B.data.end(), C.data.begin() + A.size());
    return push(std::move(C), [this, a, b](int out) {
      const Matrix& g = nodes_[out].grad;
      Matrix& ga = nodes_[a.id].grad;
      Matrix& gb = nodes_[b.id].grad;
      for (size_t i = 0; i < ga.size(); ++i) ga.data[i] += g.data[i];
      for (size_t i = 0; i < gb.size(); ++i) gb.data[i] += g.data[ga.size() + i];
    });
  }

  /// Rows [r0, r1) of a.
  Var slice_rows(Var a, int r0, int r1) {
    const Matrix& A = value(a);
    if (r0 < 0 || r1 > A.rows || r0 >= r1) throw ShapeError("slice_rows: bad range");
    Matrix C(r1 - r0, A.cols);
    std::copy(A.data.begin() + static_cast<size_t>(r0) * A.cols,
              A.data.begin() + static_cast<size_t>(r1) * A.cols, C.data.begin());
    return push(std::move(C), [this, a, r0](int out) {
      const Matrix& g = nodes_[out].grad;
      Matrix& ga = nodes_[a.id].grad;
      size_t off = static_cast<size_t>(r0) * ga.cols;
      for (size_t i = 0; i < g.size(); ++i) ga.data[off + i] += g.data[i];
    });
  }

  Var transpose(Var a) {
    Matrix C = sceend::transpose(value(a));
    return push(std::move(C), [this, a](int out) {
      const Matrix& g = nodes_[out].grad;
      Matrix& ga = nodes_[a.id].grad;
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) ga(j, i) += g(i, j);
    });
  }

  /// Inverted dropout. Identity when the tape is not recording gradients
  /// or rate == 0.
  Var dropout(Var a, double rate, std::mt19937_64& rng) {
    if (!grad_ || rate <= 0.0) return a;
    const Matrix& A = value(a);
    const double keep = 1.0 - rate;
    auto mask = std::make_shared<Matrix>(A.rows, A.cols);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix C = A;
    for (size_t i = 0; i < C.size(); ++i) {
      double m = (u(rng) < keep) ? 1.0 / keep : 0.0;
      mask->data[i] = m;
      C.data[i] *= m;
    }
    return push(std::move(C), [this, a, mask](int out) {
      const Matrix& g = nodes_[out].grad;
      Matrix& ga = nodes_[a.id].grad;
      for (size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * mask->data[i];
    });
  }

  Var sum_all(Var a) {
    const Matrix& A = value(a);
    Matrix C(1, 1);
    for (double v : A.data) C.data[0] += v;
    return push(std::move(C), [this, a](int out) {
      const double g = nodes_[out].grad.data[0];
      Matrix& ga = nodes_[a.id].grad;
      for (double& v : ga.data) v += g;
    });
  }

  /// Summed binary cross-entropy of posteriors z against a constant 0/1
  /// target, with eps clamp. Scalar output.
  Var bce_vs_target(Var z, const Matrix& y, double eps = kBceEps) {
    const Matrix& Z = value(z);
    if (!Z.same_shape(y)) throw ShapeError("bce: shape mismatch");
    double loss = 0.0;
    for (size_t i = 0; i < Z.size(); ++i) {
      double zt = std::clamp(Z.data[i], eps, 1.0 - eps);
      loss -= y.data[i] * std::log(zt) + (1.0 - y.data[i]) * std::log(1.0 - zt);
    }
    Matrix C(1, 1);
    C.data[0] = loss;
    auto target = std::make_shared<Matrix>(y);
    return push(std::move(C), [this, z, target, eps](int out) {
      const double g = nodes_[out].grad.data[0];
      const Matrix& Z2 = nodes_[z.id].value;
      Matrix& gz = nodes_[z.id].grad;
      for (size_t i = 0; i < Z2.size(); ++i) {
        double raw = Z2.data[i];
        if (raw <= eps || raw >= 1.0 - eps) continue;  // clamp region: flat
        gz.data[i] += g * (raw - target->data[i]) / (raw * (1.0 - raw));
      }
    });
  }

  // --------------------------------------------------------------- backward

  /// Reverse accumulation from a scalar loss node. Gradients of leaves
  /// with a registered sink are added into their sinks.
  void backward(Var loss) {
    int lid = check(loss);
    if (nodes_[lid].value.rows != 1 || nodes_[lid].value.cols != 1)
      throw std::invalid_argument("backward: seed node must be scalar");
    if (!grad_) throw std::logic_error("backward on a no-grad tape");
    for (auto& n : nodes_) {
      n.grad = Matrix(n.value.rows, n.value.cols);
    }
    nodes_[lid].grad.data[0] = 1.0;
    for (int i = lid; i >= 0; --i) {
      if (nodes_[i].back) nodes_[i].back(i);
    }
    for (auto& n : nodes_) {
      if (!n.sink) continue;
      if (!n.sink->same_shape(n.grad)) *n.sink = Matrix(n.grad.rows, n.grad.cols);
      for (size_t i = 0; i < n.grad.size(); ++i) n.sink->data[i] += n.grad.data[i];
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(int)> back;
    Matrix* sink = nullptr;
  };

  int check(Var v) const {
    if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size())
      throw std::logic_error("invalid tape variable");
    return v.id;
  }

  void accumulate(Var a, const Matrix& g) {
    Matrix& ga = nodes_[a.id].grad;
    for (size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
  }

  Var push(Matrix v, std::function<void(int)> back, Matrix* sink = nullptr) {
    Node n;
    n.value = std::move(v);
    n.sink = sink;
    if (grad_) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  // Deque keeps value/grad references handed out by value() stable while
  // further ops are recorded.
  std::deque<Node> nodes_;
  bool grad_;
};

}  // namespace sceend
