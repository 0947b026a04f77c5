#pragma once

// Finite-difference helpers and a plain-Eigen Transformer reference shared by
// the encoder tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "feedrec/autodiff.hpp"
#include "feedrec/params.hpp"
#include "feedrec/transformer.hpp"

namespace testutil {

using feedrec::Matrix;
using Mat = Matrix<double>;

struct FdResult {
  double max_rel = 0;
  std::string worst;
  int checked = 0;
};

/// Central differences on `coords` random entries of each named parameter.
/// `loss(backward)` builds a fresh tape, returns the scalar loss, and runs
/// backward when asked.
inline FdResult fd_check(feedrec::ParamStore<double>& store, const std::vector<std::string>& names,
                         const std::function<double(bool)>& loss, int coords = 10,
                         std::uint64_t seed = 1, double h = 1e-5) {
  store.zero_grad();
  loss(true);
  std::mt19937_64 rng(seed);
  FdResult r;
  for (const auto& name : names) {
    feedrec::Parameter<double>& p = store.get(name);
    const Mat analytic = p.grad;
    std::uniform_int_distribution<Eigen::Index> pick(0, p.value.size() - 1);
    for (int c = 0; c < coords; ++c) {
      const Eigen::Index i = pick(rng);
      const double saved = p.value.data()[i];
      p.value.data()[i] = saved + h;
      const double up = loss(false);
      p.value.data()[i] = saved - h;
      const double down = loss(false);
      p.value.data()[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic.size() ? analytic.data()[i] : 0.0;
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      ++r.checked;
      if (rel > r.max_rel) {
        r.max_rel = rel;
        r.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

inline Mat random_matrix(int rows, int cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline void randomize(feedrec::ParamStore<double>& store, std::uint64_t seed, double sd = 0.3) {
  std::mt19937_64 rng(seed);
  for (auto& p : store.all()) {
    p->value += random_matrix(static_cast<int>(p->value.rows()), static_cast<int>(p->value.cols()), rng, sd);
  }
}

inline Mat layer_norm_ref(const Mat& x, const Mat& gain, const Mat& bias, double eps = 1e-5) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    out.row(i) = ((x.row(i).array() - mu) / std::sqrt(var + eps)).matrix().cwiseProduct(gain) + bias;
  }
  return out;
}

inline double gelu_ref(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

/// One pre-LN Transformer layer applied to a single row: attention over one
/// element returns its own value vector.
inline Mat single_row_layer_ref(const feedrec::TransformerWeights<double>& w, const Mat& x) {
  const Mat n1 = layer_norm_ref(x, w.ln1_gain->value, w.ln1_bias->value);
  const Mat v = n1 * w.wv->value + w.bv->value;
  const Mat h = x + v * w.wo->value + w.bo->value;
  const Mat n2 = layer_norm_ref(h, w.ln2_gain->value, w.ln2_bias->value);
  const Mat f = (n2 * w.w1->value + w.b1->value).unaryExpr(&gelu_ref);
  return h + f * w.w2->value + w.b2->value;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

}  // namespace testutil
