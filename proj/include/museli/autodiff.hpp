#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "museli/types.hpp"

namespace museli {

// Reverse-mode tape over dense Eigen matrices. Nodes are created in
// topological order; backward() walks the tape in reverse. Parameter
// leaves accumulate their gradient into an external matrix so one grad
// buffer can be shared across many per-item tapes.
template <typename Scalar>
class Tape {
 public:
  using M = Mat<Scalar>;

  struct Node {
    M val;
    M grad;
    std::function<void(Tape&)> back;  // empty for constants
  };

  int size() const { return static_cast<int>(nodes_.size()); }
  const M& val(int id) const { return nodes_[id].val; }
  M& grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = M::Zero(n.val.rows(), n.val.cols());
    return n.grad;
  }

  int input(M v) {
    nodes_.push_back(Node{std::move(v), {}, {}});
    return size() - 1;
  }

  // Leaf whose gradient is flushed into *grad_out during backward().
  int param(const M& value, M* grad_out) {
    const int id = input(value);
    nodes_[id].back = [id, grad_out](Tape& t) {
      if (grad_out) *grad_out += t.grad(id);
    };
    return id;
  }

  int matmul(int a, int b) {
    const int id = input(val(a) * val(b));
    nodes_[id].back = [id, a, b](Tape& t) {
      const M& g = t.grad(id);
      t.grad(a).noalias() += g * t.val(b).transpose();
      t.grad(b).noalias() += t.val(a).transpose() * g;
    };
    return id;
  }

  // a * b^T
  int matmul_nt(int a, int b) {
    const int id = input(val(a) * val(b).transpose());
    nodes_[id].back = [id, a, b](Tape& t) {
      const M& g = t.grad(id);
      t.grad(a).noalias() += g * t.val(b);
      t.grad(b).noalias() += g.transpose() * t.val(a);
    };
    return id;
  }

  int add(int a, int b) {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
      throw std::invalid_argument("add: shape mismatch");
    const int id = input(val(a) + val(b));
    nodes_[id].back = [id, a, b](Tape& t) {
      t.grad(a) += t.grad(id);
      t.grad(b) += t.grad(id);
    };
    return id;
  }

  // Broadcast a 1 x n row vector over every row of a.
  int add_rowvec(int a, int row) {
    if (val(row).rows() != 1 || val(row).cols() != val(a).cols())
      throw std::invalid_argument("add_rowvec: shape mismatch");
    const int id = input(val(a).rowwise() + val(row).row(0));
    nodes_[id].back = [id, a, row](Tape& t) {
      t.grad(a) += t.grad(id);
      t.grad(row).row(0) += t.grad(id).colwise().sum();
    };
    return id;
  }

  int scale(int a, Scalar c) {
    const int id = input(val(a) * c);
    nodes_[id].back = [id, a, c](Tape& t) { t.grad(a) += t.grad(id) * c; };
    return id;
  }

  int mul_elem(int a, int b) {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
      throw std::invalid_argument("mul_elem: shape mismatch");
    const int id = input(val(a).cwiseProduct(val(b)));
    nodes_[id].back = [id, a, b](Tape& t) {
      t.grad(a) += t.grad(id).cwiseProduct(t.val(b));
      t.grad(b) += t.grad(id).cwiseProduct(t.val(a));
    };
    return id;
  }

  int sigmoid(int a) {
    M y = ((-val(a).array()).exp() + Scalar(1)).inverse().matrix();
    const int id = input(std::move(y));
    nodes_[id].back = [id, a](Tape& t) {
      const auto& y = t.val(id).array();
      t.grad(a).array() += t.grad(id).array() * y * (Scalar(1) - y);
    };
    return id;
  }

  // x * sigmoid(x)
  int swish(int a) {
    M s = ((-val(a).array()).exp() + Scalar(1)).inverse().matrix();
    M y = val(a).cwiseProduct(s);
    const int id = input(std::move(y));
    nodes_[id].back = [id, a, s = std::move(s)](Tape& t) {
      const auto& x = t.val(a).array();
      const auto& sg = s.array();
      t.grad(a).array() +=
          t.grad(id).array() * (sg + x * sg * (Scalar(1) - sg));
    };
    return id;
  }

  int concat_rows(int a, int b) {
    const int ra = static_cast<int>(val(a).rows());
    const int rb = static_cast<int>(val(b).rows());
    M y(ra + rb, val(a).cols());
    y.topRows(ra) = val(a);
    y.bottomRows(rb) = val(b);
    const int id = input(std::move(y));
    nodes_[id].back = [id, a, b, ra, rb](Tape& t) {
      t.grad(a) += t.grad(id).topRows(ra);
      t.grad(b) += t.grad(id).bottomRows(rb);
    };
    return id;
  }

  int slice_cols(int a, int start, int n) {
    const int id = input(val(a).middleCols(start, n));
    nodes_[id].back = [id, a, start, n](Tape& t) {
      t.grad(a).middleCols(start, n) += t.grad(id);
    };
    return id;
  }

  int concat_cols(const std::vector<int>& parts) {
    int cols = 0;
    for (int p : parts) cols += static_cast<int>(val(p).cols());
    M y(val(parts[0]).rows(), cols);
    int off = 0;
    for (int p : parts) {
      const int c = static_cast<int>(val(p).cols());
      y.middleCols(off, c) = val(p);
      off += c;
    }
    const int id = input(std::move(y));
    nodes_[id].back = [id, parts](Tape& t) {
      int off = 0;
      for (int p : parts) {
        const int c = static_cast<int>(t.val(p).cols());
        t.grad(p) += t.grad(id).middleCols(off, c);
        off += c;
      }
    };
    return id;
  }

  int row_softmax(int a) {
    M y = val(a);
    for (int r = 0; r < y.rows(); ++r) {
      const Scalar mx = y.row(r).maxCoeff();
      y.row(r) = (y.row(r).array() - mx).exp();
      y.row(r) /= y.row(r).sum();
    }
    const int id = input(std::move(y));
    nodes_[id].back = [id, a](Tape& t) {
      const M& y = t.val(id);
      const M& g = t.grad(id);
      M& ga = t.grad(a);
      for (int r = 0; r < y.rows(); ++r) {
        const Scalar dot = g.row(r).dot(y.row(r));
        ga.row(r).array() +=
            y.row(r).array() * (g.row(r).array() - dot);
      }
    };
    return id;
  }

  // Per-row layer normalization with learnable gain/bias (each 1 x d).
  int layer_norm(int a, int gain, int bias,
                 Scalar eps = Scalar(1e-5)) {
    const M& x = val(a);
    const int rows = static_cast<int>(x.rows());
    const int d = static_cast<int>(x.cols());
    M xhat(rows, d);
    Vec<Scalar> inv_std(rows);
    for (int r = 0; r < rows; ++r) {
      const Scalar mean = x.row(r).mean();
      auto centered = x.row(r).array() - mean;
      const Scalar var = centered.square().sum() / Scalar(d);
      inv_std(r) = Scalar(1) / std::sqrt(var + eps);
      xhat.row(r) = centered * inv_std(r);
    }
    M y = (xhat.array().rowwise() * val(gain).row(0).array()).rowwise() +
          val(bias).row(0).array();
    const int id = input(std::move(y));
    nodes_[id].back = [id, a, gain, bias, xhat = std::move(xhat),
                       inv_std = std::move(inv_std)](Tape& t) {
      const M& g = t.grad(id);
      const auto gn = t.val(gain).row(0).array();
      t.grad(gain).row(0).array() +=
          (g.array() * xhat.array()).colwise().sum();
      t.grad(bias).row(0).array() += g.array().colwise().sum();
      const int d = static_cast<int>(g.cols());
      M& ga = t.grad(a);
      for (int r = 0; r < g.rows(); ++r) {
        auto gy = g.row(r).array() * gn;  // dL/dxhat
        const Scalar m1 = gy.sum() / Scalar(d);
        const Scalar m2 = (gy * xhat.row(r).array()).sum() / Scalar(d);
        ga.row(r).array() +=
            inv_std(r) * (gy - m1 - xhat.row(r).array() * m2);
      }
    };
    return id;
  }

  // Strided 1-D convolution over rows (time). x: T x Cin, weight laid out
  // (kernel*Cin) x Cout, zero padding `pad` on both ends.
  int conv1d(int x, int w, int b, int kernel, int stride, int pad) {
    const M& xv = val(x);
    const int T = static_cast<int>(xv.rows());
    const int cin = static_cast<int>(xv.cols());
    const int t_out = (T + 2 * pad - kernel) / stride + 1;
    if (t_out < 1) throw std::invalid_argument("conv1d: input too short");
    M cols(t_out, kernel * cin);
    cols.setZero();
    for (int o = 0; o < t_out; ++o)
      for (int k = 0; k < kernel; ++k) {
        const int ti = o * stride + k - pad;
        if (ti >= 0 && ti < T) cols.block(o, k * cin, 1, cin) = xv.row(ti);
      }
    const int cols_id = input(std::move(cols));
    nodes_[cols_id].back = [cols_id, x, kernel, stride, pad, T,
                            cin](Tape& t) {
      const M& g = t.grad(cols_id);
      M& gx = t.grad(x);
      for (int o = 0; o < g.rows(); ++o)
        for (int k = 0; k < kernel; ++k) {
          const int ti = o * stride + k - pad;
          if (ti >= 0 && ti < T)
            gx.row(ti) += g.block(o, k * cin, 1, cin);
        }
    };
    return add_rowvec(matmul(cols_id, w), b);
  }

  // Depthwise convolution, kernel k x d, "same" zero padding.
  int depthwise_conv(int x, int kern, int bias) {
    const M& xv = val(x);
    const M& kv = val(kern);
    const int T = static_cast<int>(xv.rows());
    const int d = static_cast<int>(xv.cols());
    const int k = static_cast<int>(kv.rows());
    const int pad = (k - 1) / 2;
    M y = M::Zero(T, d);
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < k; ++j) {
        const int ti = t + j - pad;
        if (ti >= 0 && ti < T)
          y.row(t).array() += xv.row(ti).array() * kv.row(j).array();
      }
    y.rowwise() += val(bias).row(0);
    const int id = input(std::move(y));
    nodes_[id].back = [id, x, kern, bias, T, k, pad](Tape& t) {
      const M& g = t.grad(id);
      const M& xv = t.val(x);
      const M& kv = t.val(kern);
      M& gx = t.grad(x);
      M& gk = t.grad(kern);
      for (int ti = 0; ti < T; ++ti)
        for (int j = 0; j < k; ++j) {
          const int src = ti + j - pad;
          if (src >= 0 && src < T) {
            gx.row(src).array() += g.row(ti).array() * kv.row(j).array();
            gk.row(j).array() += g.row(ti).array() * xv.row(src).array();
          }
        }
      t.grad(bias).row(0) += g.colwise().sum();
    };
    return id;
  }

  // Gather rows of an embedding table by token id.
  int embed(int table, const std::vector<int>& ids) {
    const M& tv = val(table);
    M y(static_cast<int>(ids.size()), tv.cols());
    for (size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= tv.rows())
        throw std::invalid_argument("token id out of embedding range: " +
                                    std::to_string(ids[i]));
      y.row(static_cast<int>(i)) = tv.row(ids[i]);
    }
    const int id = input(std::move(y));
    nodes_[id].back = [id, table, ids](Tape& t) {
      const M& g = t.grad(id);
      M& gt = t.grad(table);
      for (size_t i = 0; i < ids.size(); ++i)
        gt.row(ids[i]) += g.row(static_cast<int>(i));
    };
    return id;
  }

  int mean_rows(int a) {
    const Scalar inv = Scalar(1) / Scalar(val(a).rows());
    const int id = input(val(a).colwise().sum() * inv);
    nodes_[id].back = [id, a, inv](Tape& t) {
      t.grad(a).rowwise() += t.grad(id).row(0) * inv;
    };
    return id;
  }

  // sum_k alpha(0,k) * H_k; alpha is a 1 x K row.
  int linear_comb(const std::vector<int>& hs, int alpha) {
    const int K = static_cast<int>(hs.size());
    if (K == 0) throw std::invalid_argument("linear_comb: empty layer list");
    if (val(alpha).cols() != K)
      throw std::invalid_argument("linear_comb: weight count mismatch");
    M y = M::Zero(val(hs[0]).rows(), val(hs[0]).cols());
    for (int k = 0; k < K; ++k) {
      if (val(hs[k]).rows() != y.rows() || val(hs[k]).cols() != y.cols())
        throw std::invalid_argument("linear_comb: layer shape mismatch");
      y += val(alpha)(0, k) * val(hs[k]);
    }
    const int id = input(std::move(y));
    nodes_[id].back = [id, hs, alpha, K](Tape& t) {
      const M& g = t.grad(id);
      for (int k = 0; k < K; ++k) {
        t.grad(hs[k]) += t.val(alpha)(0, k) * g;
        t.grad(alpha)(0, k) += g.cwiseProduct(t.val(hs[k])).sum();
      }
    };
    return id;
  }

  // -log softmax(logits)[label]; logits is 1 x N, result 1 x 1.
  int cross_entropy(int logits, int label) {
    const M& z = val(logits);
    const int n = static_cast<int>(z.cols());
    if (label < 0 || label >= n)
      throw std::invalid_argument("label out of range: " +
                                  std::to_string(label));
    const Scalar mx = z.maxCoeff();
    const Scalar lse = std::log((z.array() - mx).exp().sum()) + mx;
    M y(1, 1);
    y(0, 0) = lse - z(0, label);
    const int id = input(std::move(y));
    nodes_[id].back = [id, logits, label, lse](Tape& t) {
      const Scalar g = t.grad(id)(0, 0);
      const M& z = t.val(logits);
      M p = (z.array() - lse).exp().matrix();
      p(0, label) -= Scalar(1);
      t.grad(logits) += g * p;
    };
    return id;
  }

  // Seeds the root gradient and runs every node's backward in reverse
  // creation order.
  void backward(int root, Scalar seed = Scalar(1)) {
    grad(root).setConstant(seed);
    for (int i = size() - 1; i >= 0; --i)
      if (nodes_[i].back) nodes_[i].back(*this);
  }

 private:
  std::vector<Node> nodes_;
};

}  // namespace museli
