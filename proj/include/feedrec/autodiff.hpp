#pragma once

// A small reverse-mode tape over dense row-major matrices. Values are computed
// eagerly when an op is recorded; backward() walks the tape once in reverse.
// Sequences of different lengths are packed row-wise and described by
// Segments, so one tape op processes a whole batch of titles or users.

#include <Eigen/Dense>

#include <cassert>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "feedrec/errors.hpp"

namespace feedrec {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A packed sequence: rows [offset, offset + length). Only the first `valid`
/// rows are real; the rest are padding that is never attended to.
struct Segment {
  int offset = 0;
  int length = 0;
  int valid = 0;
};
using Segments = std::vector<Segment>;

/// Packs consecutive segments without padding.
inline Segments make_segments(const std::vector<int>& lengths) {
  Segments segs;
  segs.reserve(lengths.size());
  int offset = 0;
  for (int len : lengths) {
    segs.push_back({offset, len, len});
    offset += len;
  }
  return segs;
}

/// For every row covered by `segs`, the index of the segment owning it.
inline std::vector<int> segment_ids(const Segments& segs) {
  std::vector<int> ids;
  for (int s = 0; s < static_cast<int>(segs.size()); ++s) {
    for (int i = 0; i < segs[s].length; ++i) ids.push_back(s);
  }
  return ids;
}

template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
class Tape {
 public:
  using Mat = Matrix<T>;

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient accumulated so far; empty until something flows into it.
  const Mat& grad(Var v) const { return nodes_[v.id].grad; }
  std::size_t size() const { return nodes_.size(); }

  /// A leaf that receives no gradient.
  Var constant(Mat m) { return push(std::move(m), nullptr, false); }

  /// A leaf whose gradient is kept (readable through grad()).
  Var input(Mat m) { return push(std::move(m), nullptr, true); }

  /// Copies the parameter into the tape; backward accumulates into p.grad.
  Var param(Parameter<T>& p) {
    Parameter<T>* ptr = &p;
    return push(p.value, [ptr](Tape& t, int self) {
      add_into(ptr->grad, t.nodes_[self].grad, ptr->value.rows(), ptr->value.cols());
    });
  }

  /// Rows of an embedding table without copying the table.
  Var gather(Parameter<T>& table, std::vector<int> rows) {
    Mat out(static_cast<Eigen::Index>(rows.size()), table.value.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      check_row(rows[i], table.value.rows(), table.name);
      out.row(static_cast<Eigen::Index>(i)) = table.value.row(rows[i]);
    }
    Parameter<T>* ptr = &table;
    return push(std::move(out), [ptr, rows = std::move(rows)](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      if (ptr->grad.size() == 0) ptr->grad.setZero(ptr->value.rows(), ptr->value.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        ptr->grad.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
      }
    });
  }

  Var gather(Var x, std::vector<int> rows) {
    const Mat& xv = value(x);
    Mat out(static_cast<Eigen::Index>(rows.size()), xv.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      check_row(rows[i], xv.rows(), "tensor");
      out.row(static_cast<Eigen::Index>(i)) = xv.row(rows[i]);
    }
    return push(std::move(out), [x, rows = std::move(rows)](Tape& t, int self) {
      if (!t.nodes_[x.id].needs_grad) return;
      Mat& gx = t.ensure_grad(x);
      const Mat& g = t.nodes_[self].grad;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        gx.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
      }
    });
  }

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    return push(value(a) + value(b), [a, b](Tape& t, int self) {
      t.accumulate(a, t.nodes_[self].grad);
      t.accumulate(b, t.nodes_[self].grad);
    });
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    return push(value(a) - value(b), [a, b](Tape& t, int self) {
      t.accumulate(a, t.nodes_[self].grad);
      t.accumulate(b, -t.nodes_[self].grad);
    });
  }

  /// Elementwise product.
  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    return push(value(a).cwiseProduct(value(b)), [a, b](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      t.accumulate(a, g.cwiseProduct(t.value(b)));
      t.accumulate(b, g.cwiseProduct(t.value(a)));
    });
  }

  /// mul * a + add, elementwise with constants.
  Var affine(Var a, T mul, T add = T(0)) {
    Mat out = (value(a).array() * mul + add).matrix();
    return push(std::move(out), [a, mul](Tape& t, int self) {
      t.accumulate(a, t.nodes_[self].grad * mul);
    });
  }

  /// Adds a 1 x d row to every row of a.
  Var add_row(Var a, Var row) {
    const Mat& rv = value(row);
    if (rv.rows() != 1 || rv.cols() != value(a).cols()) shape_error("add_row", a, row);
    Mat out = value(a);
    out.rowwise() += rv.row(0);
    return push(std::move(out), [a, row](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      t.accumulate(a, g);
      t.accumulate(row, g.colwise().sum());
    });
  }

  Var matmul(Var a, Var b) {
    if (value(a).cols() != value(b).rows()) shape_error("matmul", a, b);
    Mat out = value(a) * value(b);
    return push(std::move(out), [a, b](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      t.accumulate(a, g * t.value(b).transpose());
      t.accumulate(b, t.value(a).transpose() * g);
    });
  }

  /// a * b^T.
  Var matmul_nt(Var a, Var b) {
    if (value(a).cols() != value(b).cols()) shape_error("matmul_nt", a, b);
    Mat out = value(a) * value(b).transpose();
    return push(std::move(out), [a, b](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      t.accumulate(a, g * t.value(b));
      t.accumulate(b, g.transpose() * t.value(a));
    });
  }

  Var concat_cols(Var a, Var b) {
    const Mat& av = value(a);
    const Mat& bv = value(b);
    if (av.rows() != bv.rows()) shape_error("concat_cols", a, b);
    Mat out(av.rows(), av.cols() + bv.cols());
    out << av, bv;
    const auto split = av.cols();
    return push(std::move(out), [a, b, split](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      t.accumulate(a, g.leftCols(split));
      t.accumulate(b, g.rightCols(g.cols() - split));
    });
  }

  Var reshape(Var a, int rows, int cols) {
    const Mat& av = value(a);
    if (static_cast<Eigen::Index>(rows) * cols != av.size()) {
      throw InputError("reshape size mismatch");
    }
    Mat out = Eigen::Map<const Mat>(av.data(), rows, cols);
    const auto r0 = av.rows();
    const auto c0 = av.cols();
    return push(std::move(out), [a, r0, c0](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      t.accumulate(a, Eigen::Map<const Mat>(g.data(), r0, c0));
    });
  }

  Var tanh(Var a) {
    Mat out = value(a).array().tanh().matrix();
    return push(std::move(out), [a](Tape& t, int self) {
      const Mat& y = t.nodes_[self].value;
      t.accumulate(a, (t.nodes_[self].grad.array() * (T(1) - y.array().square())).matrix());
    });
  }

  Var sigmoid(Var a) {
    Mat out = value(a).unaryExpr([](T x) { return stable_sigmoid(x); });
    return push(std::move(out), [a](Tape& t, int self) {
      const Mat& y = t.nodes_[self].value;
      t.accumulate(a, (t.nodes_[self].grad.array() * y.array() * (T(1) - y.array())).matrix());
    });
  }

  Var relu(Var a) {
    Mat out = value(a).cwiseMax(T(0));
    return push(std::move(out), [a](Tape& t, int self) {
      const Mat& x = t.value(a);
      t.accumulate(a, (t.nodes_[self].grad.array() * (x.array() > T(0)).template cast<T>()).matrix());
    });
  }

  Var abs(Var a) {
    Mat out = value(a).cwiseAbs();
    return push(std::move(out), [a](Tape& t, int self) {
      const Mat& x = t.value(a);
      t.accumulate(a, (t.nodes_[self].grad.array() * x.array().sign()).matrix());
    });
  }

  /// Tanh approximation of GELU; smooth, so finite differences behave.
  Var gelu(Var a) {
    const Mat& x = value(a);
    Mat out = x.unaryExpr([](T v) { return gelu_value(v); });
    return push(std::move(out), [a](Tape& t, int self) {
      const Mat& xv = t.value(a);
      t.accumulate(a, (t.nodes_[self].grad.array() *
                       xv.unaryExpr([](T v) { return gelu_derivative(v); }).array())
                          .matrix());
    });
  }

  /// Row-wise layer normalization with learned 1 x d gain and bias.
  Var layer_norm(Var x, Var gain, Var bias, T eps = T(1e-5)) {
    const Mat& xv = value(x);
    const Eigen::Index n = xv.rows();
    const Eigen::Index d = xv.cols();
    Mat xhat(n, d);
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const T mu = xv.row(i).mean();
      const T var = (xv.row(i).array() - mu).square().mean();
      inv_std(i) = T(1) / std::sqrt(var + eps);
      xhat.row(i) = (xv.row(i).array() - mu) * inv_std(i);
    }
    Mat out = xhat;
    out.array().rowwise() *= value(gain).row(0).array();
    out.rowwise() += value(bias).row(0);
    return push(std::move(out), [x, gain, bias, xhat = std::move(xhat),
                                 inv_std = std::move(inv_std)](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      const Mat& gv = t.value(gain);
      t.accumulate(bias, g.colwise().sum());
      t.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
      Mat dxhat = g;
      dxhat.array().rowwise() *= gv.row(0).array();
      Mat dx(g.rows(), g.cols());
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const T m1 = dxhat.row(i).mean();
        const T m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
        dx.row(i) = (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2) * inv_std(i);
      }
      t.accumulate(x, dx);
    });
  }

  /// Multi-head scaled dot-product self-attention within each segment. Keys
  /// beyond a segment's valid prefix are masked; padded query rows still get
  /// an output but never influence real rows.
  Var self_attention(Var q, Var k, Var v, const Segments& segs, int heads) {
    const Mat& qv = value(q);
    const Mat& kv = value(k);
    const Mat& vv = value(v);
    if (qv.rows() != kv.rows() || qv.rows() != vv.rows() || qv.cols() != kv.cols() ||
        qv.cols() != vv.cols()) {
      throw InputError("self_attention: q/k/v shape mismatch");
    }
    if (heads <= 0 || qv.cols() % heads != 0) {
      throw InputError("self_attention: width not divisible by head count");
    }
    const int dh = static_cast<int>(qv.cols()) / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    Mat out = Mat::Zero(qv.rows(), qv.cols());
    for (const Segment& s : segs) {
      if (s.valid == 0) continue;
      for (int h = 0; h < heads; ++h) {
        Mat p = attention_probs(qv, kv, s, h * dh, dh, scale);
        out.block(s.offset, h * dh, s.length, dh).noalias() =
            p * vv.block(s.offset, h * dh, s.valid, dh);
      }
    }
    return push(std::move(out), [q, k, v, segs, heads, dh, scale](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      const Mat& qv = t.value(q);
      const Mat& kv = t.value(k);
      const Mat& vv = t.value(v);
      Mat dq = Mat::Zero(qv.rows(), qv.cols());
      Mat dk = Mat::Zero(kv.rows(), kv.cols());
      Mat dv = Mat::Zero(vv.rows(), vv.cols());
      for (const Segment& s : segs) {
        if (s.valid == 0) continue;
        for (int h = 0; h < heads; ++h) {
          const int c = h * dh;
          Mat p = attention_probs(qv, kv, s, c, dh, scale);
          auto go = g.block(s.offset, c, s.length, dh);
          dv.block(s.offset, c, s.valid, dh).noalias() += p.transpose() * go;
          Mat dp = go * vv.block(s.offset, c, s.valid, dh).transpose();
          Mat ds(p.rows(), p.cols());
          for (Eigen::Index i = 0; i < p.rows(); ++i) {
            const T dot = dp.row(i).dot(p.row(i));
            ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
          }
          ds *= scale;
          dq.block(s.offset, c, s.length, dh).noalias() +=
              ds * kv.block(s.offset, c, s.valid, dh);
          dk.block(s.offset, c, s.valid, dh).noalias() +=
              ds.transpose() * qv.block(s.offset, c, s.length, dh);
        }
      }
      t.accumulate(q, dq);
      t.accumulate(k, dk);
      t.accumulate(v, dv);
    });
  }

  /// Per-row dot product of equally shaped a and b: N x 1.
  Var rowwise_dot(Var a, Var b) {
    check_same(a, b, "rowwise_dot");
    Mat out = value(a).cwiseProduct(value(b)).rowwise().sum();
    return push(std::move(out), [a, b](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;  // N x 1
      Mat ga = t.value(b);
      ga.array().colwise() *= g.col(0).array();
      Mat gb = t.value(a);
      gb.array().colwise() *= g.col(0).array();
      t.accumulate(a, ga);
      t.accumulate(b, gb);
    });
  }

  /// Softmax of an N x 1 logit column within each segment's valid prefix.
  /// Padding rows get weight 0.
  Var segment_softmax(Var logits, const Segments& segs) {
    const Mat& lv = value(logits);
    if (lv.cols() != 1) throw InputError("segment_softmax expects a column");
    Mat out = Mat::Zero(lv.rows(), 1);
    for (const Segment& s : segs) {
      if (s.valid == 0) continue;
      auto block = lv.block(s.offset, 0, s.valid, 1);
      const T m = block.maxCoeff();
      Mat e = (block.array() - m).exp().matrix();
      out.block(s.offset, 0, s.valid, 1) = e / e.sum();
    }
    return push(std::move(out), [logits, segs](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      const Mat& p = t.nodes_[self].value;
      Mat dl = Mat::Zero(p.rows(), 1);
      for (const Segment& s : segs) {
        if (s.valid == 0) continue;
        auto ps = p.block(s.offset, 0, s.valid, 1);
        auto gs = g.block(s.offset, 0, s.valid, 1);
        const T dot = ps.cwiseProduct(gs).sum();
        dl.block(s.offset, 0, s.valid, 1) = (ps.array() * (gs.array() - dot)).matrix();
      }
      t.accumulate(logits, dl);
    });
  }

  /// Scales row i of x by w(i, 0).
  Var mul_rows(Var w, Var x) {
    const Mat& wv = value(w);
    const Mat& xv = value(x);
    if (wv.cols() != 1 || wv.rows() != xv.rows()) shape_error("mul_rows", w, x);
    Mat out = xv;
    out.array().colwise() *= wv.col(0).array();
    return push(std::move(out), [w, x](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      Mat gx = g;
      gx.array().colwise() *= t.value(w).col(0).array();
      t.accumulate(x, gx);
      t.accumulate(w, g.cwiseProduct(t.value(x)).rowwise().sum());
    });
  }

  /// Sum of each segment's valid rows: one output row per segment; empty
  /// segments give a zero row.
  Var segment_sum(Var x, const Segments& segs) {
    const Mat& xv = value(x);
    Mat out = Mat::Zero(static_cast<Eigen::Index>(segs.size()), xv.cols());
    for (std::size_t s = 0; s < segs.size(); ++s) {
      if (segs[s].valid == 0) continue;
      out.row(static_cast<Eigen::Index>(s)) =
          xv.block(segs[s].offset, 0, segs[s].valid, xv.cols()).colwise().sum();
    }
    const auto rows = xv.rows();
    return push(std::move(out), [x, segs, rows](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      Mat gx = Mat::Zero(rows, g.cols());
      for (std::size_t s = 0; s < segs.size(); ++s) {
        for (int i = 0; i < segs[s].valid; ++i) {
          gx.row(segs[s].offset + i) = g.row(static_cast<Eigen::Index>(s));
        }
      }
      t.accumulate(x, gx);
    });
  }

  /// Multiplies x by the 1 x 1 value of s.
  Var scale_by(Var s, Var x) {
    if (value(s).size() != 1) throw InputError("scale_by expects a scalar");
    Mat out = value(x) * value(s)(0, 0);
    return push(std::move(out), [s, x](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      t.accumulate(x, g * t.value(s)(0, 0));
      Mat gs(1, 1);
      gs(0, 0) = g.cwiseProduct(t.value(x)).sum();
      t.accumulate(s, gs);
    });
  }

  /// -log softmax(row)[0] per row: the sampled-softmax click loss with the
  /// positive in column 0.
  Var softmax_xent_first(Var logits) {
    const Mat& lv = value(logits);
    Mat out(lv.rows(), 1);
    Mat probs(lv.rows(), lv.cols());
    for (Eigen::Index i = 0; i < lv.rows(); ++i) {
      const T m = lv.row(i).maxCoeff();
      auto e = (lv.row(i).array() - m).exp();
      const T z = e.sum();
      probs.row(i) = e / z;
      out(i, 0) = m + std::log(z) - lv(i, 0);
    }
    return push(std::move(out), [logits, probs = std::move(probs)](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      Mat dl = probs;
      dl.col(0).array() -= T(1);
      dl.array().colwise() *= g.col(0).array();
      t.accumulate(logits, dl);
    });
  }

  /// Binary cross-entropy of sigmoid(z) against labels, per row.
  Var bce_with_logits(Var z, Mat labels) {
    const Mat& zv = value(z);
    if (labels.rows() != zv.rows() || labels.cols() != zv.cols()) {
      throw InputError("bce_with_logits: label shape mismatch");
    }
    Mat out(zv.rows(), zv.cols());
    for (Eigen::Index i = 0; i < zv.size(); ++i) {
      const T x = zv.data()[i];
      out.data()[i] = std::max(x, T(0)) - x * labels.data()[i] + std::log1p(std::exp(-std::abs(x)));
    }
    return push(std::move(out), [z, labels = std::move(labels)](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      Mat dz = t.value(z).unaryExpr([](T x) { return stable_sigmoid(x); }) - labels;
      t.accumulate(z, dz.cwiseProduct(g));
    });
  }

  /// Cosine similarity per row; rows where either norm is below eps give 0
  /// with zero gradient.
  Var cosine_rows(Var a, Var b, T eps = T(1e-8)) {
    check_same(a, b, "cosine_rows");
    const Mat& av = value(a);
    const Mat& bv = value(b);
    Mat out = Mat::Zero(av.rows(), 1);
    for (Eigen::Index i = 0; i < av.rows(); ++i) {
      const T na = av.row(i).norm();
      const T nb = bv.row(i).norm();
      if (na < eps || nb < eps) continue;
      out(i, 0) = av.row(i).dot(bv.row(i)) / (na * nb);
    }
    return push(std::move(out), [a, b, eps](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      const Mat& av = t.value(a);
      const Mat& bv = t.value(b);
      const Mat& c = t.nodes_[self].value;
      Mat ga = Mat::Zero(av.rows(), av.cols());
      Mat gb = Mat::Zero(bv.rows(), bv.cols());
      for (Eigen::Index i = 0; i < av.rows(); ++i) {
        const T na = av.row(i).norm();
        const T nb = bv.row(i).norm();
        if (na < eps || nb < eps) continue;
        ga.row(i) = g(i, 0) * (bv.row(i) / (na * nb) - c(i, 0) * av.row(i) / (na * na));
        gb.row(i) = g(i, 0) * (av.row(i) / (na * nb) - c(i, 0) * bv.row(i) / (nb * nb));
      }
      t.accumulate(a, ga);
      t.accumulate(b, gb);
    });
  }

  Var mean(Var a) {
    const Mat& av = value(a);
    if (av.size() == 0) throw InputError("mean of an empty tensor");
    Mat out(1, 1);
    out(0, 0) = av.mean();
    const auto r = av.rows();
    const auto c = av.cols();
    return push(std::move(out), [a, r, c](Tape& t, int self) {
      const T g = t.nodes_[self].grad(0, 0) / static_cast<T>(r * c);
      t.accumulate(a, Mat::Constant(r, c, g));
    });
  }

  /// Inverted dropout; identity when rate is 0.
  Var dropout(Var a, T rate, std::mt19937_64& rng) {
    if (rate <= T(0)) return a;
    std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
    const Mat& av = value(a);
    Mat mask(av.rows(), av.cols());
    const T scale = T(1) / (T(1) - rate);
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : T(0);
    Mat out = av.cwiseProduct(mask);
    return push(std::move(out), [a, mask = std::move(mask)](Tape& t, int self) {
      t.accumulate(a, t.nodes_[self].grad.cwiseProduct(mask));
    });
  }

  /// Seeds d(root)/d(root) = 1 for a scalar root and propagates.
  void backward(Var root) {
    if (value(root).size() != 1) throw InputError("backward expects a scalar root");
    nodes_[root.id].grad = Mat::Ones(1, 1);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  static T stable_sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&, int)> backward;
    bool needs_grad = true;
  };

  static constexpr T kGeluC = T(0.7978845608028654);  // sqrt(2 / pi)
  static constexpr T kGeluA = T(0.044715);

  static T gelu_value(T x) {
    return T(0.5) * x * (T(1) + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
  }
  static T gelu_derivative(T x) {
    const T inner = kGeluC * (x + kGeluA * x * x * x);
    const T th = std::tanh(inner);
    const T dinner = kGeluC * (T(1) + T(3) * kGeluA * x * x);
    return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * dinner;
  }

  static Mat attention_probs(const Mat& q, const Mat& k, const Segment& s, int col, int dh,
                             T scale) {
    Mat scores = q.block(s.offset, col, s.length, dh) *
                 k.block(s.offset, col, s.valid, dh).transpose() * scale;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      const T m = scores.row(i).maxCoeff();
      scores.row(i) = (scores.row(i).array() - m).exp();
      scores.row(i) /= scores.row(i).sum();
    }
    return scores;
  }

  Var push(Mat value, std::function<void(Tape&, int)> backward, bool needs_grad = true) {
    nodes_.push_back({std::move(value), Mat(), std::move(backward), needs_grad});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Mat& ensure_grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  template <typename Expr>
  void accumulate(Var v, const Expr& g) {
    if (!nodes_[v.id].needs_grad) return;
    ensure_grad(v) += g;
  }

  template <typename Expr>
  static void add_into(Mat& dst, const Expr& g, Eigen::Index rows, Eigen::Index cols) {
    if (dst.size() == 0) dst.setZero(rows, cols);
    dst += g;
  }

  static void check_row(int row, Eigen::Index rows, const std::string& what) {
    if (row < 0 || row >= rows) {
      throw InputError("row " + std::to_string(row) + " out of range for " + what + " with " +
                       std::to_string(rows) + " rows");
    }
  }

  void check_same(Var a, Var b, const char* op) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) {
      shape_error(op, a, b);
    }
  }

  [[noreturn]] void shape_error(const char* op, Var a, Var b) const {
    throw InputError(std::string(op) + ": shape mismatch " + std::to_string(value(a).rows()) +
                     "x" + std::to_string(value(a).cols()) + " vs " +
                     std::to_string(value(b).rows()) + "x" + std::to_string(value(b).cols()));
  }

  std::vector<Node> nodes_;
};

}  // namespace feedrec
