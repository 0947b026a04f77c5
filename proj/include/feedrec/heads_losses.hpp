#pragma once

// Prediction heads, the four training losses and training-sample assembly.
// Each loss exists twice: a closed-form scalar function, and a tape op
// composition used for training. Tests hold the two against each other.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "feedrec/autodiff.hpp"
#include "feedrec/errors.hpp"
#include "feedrec/feedback.hpp"
#include "feedrec/params.hpp"

namespace feedrec {

struct LossWeights {
  double alpha = 0.2;   // finish
  double beta = 0.15;   // dwell
  double gamma = 0.2;   // disentangle

  void validate() const {
    if (alpha < 0 || beta < 0 || gamma < 0) throw ConfigError("loss weights must be nonnegative");
  }
};

struct Scores {
  double click = 0;   // y-hat
  double finish = 0;  // z-hat
  double dwell = 0;   // t-hat
};

template <typename T>
struct Heads {
  Parameter<T>* finish = nullptr;  // W_z
  Parameter<T>* dwell = nullptr;   // W_t

  static Heads create(ParamStore<T>& store, int dim) {
    return {&store.add("heads.finish", dim, dim), &store.add("heads.dwell", dim, dim)};
  }
  void init(std::mt19937_64& rng, double sd) {
    init_normal(*finish, sd, rng);
    init_normal(*dwell, sd, rng);
  }

  /// Row-aligned scores for users U and candidates E (both N x d), N x 1 each.
  Var click(Tape<T>& tape, Var users, Var candidates) const {
    return tape.rowwise_dot(users, candidates);
  }
  Var finish_logit(Tape<T>& tape, Var users, Var candidates) const {
    return tape.rowwise_dot(users, tape.matmul_nt(candidates, tape.param(*finish)));
  }
  Var dwell_pred(Tape<T>& tape, Var users, Var candidates) const {
    return tape.relu(tape.rowwise_dot(users, tape.matmul_nt(candidates, tape.param(*dwell))));
  }
};

/// y = u.e, z = u.(Wz e), t = max(0, u.(Wt e)).
template <typename T>
Scores score(const Eigen::Ref<const Eigen::Matrix<T, Eigen::Dynamic, 1>>& u,
             const Eigen::Ref<const Eigen::Matrix<T, Eigen::Dynamic, 1>>& e, const Matrix<T>& w_finish,
             const Matrix<T>& w_dwell) {
  if (u.size() != e.size() || w_finish.rows() != u.size() || w_finish.cols() != e.size() ||
      w_dwell.rows() != u.size() || w_dwell.cols() != e.size()) {
    throw InputError("score: dimension mismatch");
  }
  Scores s;
  s.click = static_cast<double>(u.dot(e));
  s.finish = static_cast<double>(u.dot(w_finish * e));
  s.dwell = std::max(0.0, static_cast<double>(u.dot(w_dwell * e)));
  return s;
}

/// log2(min(t, t_max) + 1) / log2(t_max + 1).
inline double normalize_dwell(double t, double t_max = 1800.0) {
  if (!(t >= 0.0) || !(t_max > 0.0)) throw InputError("normalize_dwell needs t >= 0 and t_max > 0");
  return std::log2(std::min(t, t_max) + 1.0) / std::log2(t_max + 1.0);
}

/// Sampled softmax cross-entropy with the clicked news against K skips.
inline double loss_click(double positive, std::span<const double> negatives) {
  double m = positive;
  for (double n : negatives) m = std::max(m, n);
  double z = std::exp(positive - m);
  for (double n : negatives) z += std::exp(n - m);
  return -(positive - m - std::log(z));
}

inline double loss_finish(double logit, double label) {
  return std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::abs(logit)));
}

inline double loss_dwell(double predicted, double label) { return std::abs(label - predicted); }

/// Cosine between weak positive and weak negative interests; 0 if either is
/// (numerically) the zero vector.
template <typename Vec>
double loss_disentangle(const Vec& weak_pos, const Vec& weak_neg, double eps = 1e-8) {
  const double np = static_cast<double>(weak_pos.norm());
  const double nn = static_cast<double>(weak_neg.norm());
  if (np < eps || nn < eps) return 0.0;
  return static_cast<double>(weak_pos.dot(weak_neg)) / (np * nn);
}

inline double loss_total(double click, double finish, double dwell, double disentangle,
                         const LossWeights& w) {
  return click + w.alpha * finish + w.beta * dwell + w.gamma * disentangle;
}

struct TrainingSample {
  std::size_t impression = 0;  // index into the impression list
  std::string user_id;
  std::int64_t timestamp = 0;
  std::string positive;
  std::vector<std::string> negatives;
  double finish_label = 0;
  double dwell_label = 0;  // normalized
  std::int64_t dwell_seconds = 0;
};

struct SampleSet {
  std::vector<TrainingSample> samples;
  /// Impressions with clicks but no skipped news to contrast against.
  std::size_t dropped_impressions = 0;
};

/// Outcome of one click, keyed by (user, news, impression time).
struct ClickLabels {
  std::map<std::tuple<std::string, std::string, std::int64_t>, std::pair<std::int64_t, bool>> by_key;

  static ClickLabels index(std::span<const FeedbackRecord> feedback) {
    ClickLabels labels;
    for (const FeedbackRecord& r : feedback) {
      if (r.type != FeedbackType::kClick && r.type != FeedbackType::kFinish) continue;
      auto& slot = labels.by_key[{r.user_id, r.news_id, r.event_time}];
      if (r.type == FeedbackType::kClick) slot.first = r.dwell_time.value_or(0);
      if (r.type == FeedbackType::kFinish) slot.second = true;
    }
    return labels;
  }

  const std::pair<std::int64_t, bool>* find(const std::string& user, const std::string& news,
                                            std::int64_t time) const {
    auto it = by_key.find({user, news, time});
    return it == by_key.end() ? nullptr : &it->second;
  }
};

/// One sample per clicked news with K negatives drawn from the same
/// impression's skips: without replacement when there are at least K skips,
/// with replacement otherwise. Each impression draws from its own seeded
/// stream so the result does not depend on processing order.
inline SampleSet build_samples(std::span<const ImpressionLog> impressions,
                               std::span<const FeedbackRecord> feedback, int k,
                               std::uint64_t seed, double dwell_t_max = 1800.0) {
  if (k < 1) throw ConfigError("negative sampling ratio K must be >= 1");
  const ClickLabels labels = ClickLabels::index(feedback);
  SampleSet out;
  for (std::size_t i = 0; i < impressions.size(); ++i) {
    const ImpressionLog& imp = impressions[i];
    if (imp.clicked.empty()) continue;
    std::vector<std::string> skips;
    for (const auto& n : imp.shown_news) {
      if (std::find(imp.clicked.begin(), imp.clicked.end(), n) == imp.clicked.end()) {
        skips.push_back(n);
      }
    }
    if (skips.empty()) {
      ++out.dropped_impressions;
      continue;
    }
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i >> 32)};
    std::mt19937_64 rng(seq);
    for (const auto& clicked : imp.clicked) {
      TrainingSample s;
      s.impression = i;
      s.user_id = imp.user_id;
      s.timestamp = imp.timestamp;
      s.positive = clicked;
      if (static_cast<int>(skips.size()) >= k) {
        std::vector<std::string> pool = skips;
        std::shuffle(pool.begin(), pool.end(), rng);
        s.negatives.assign(pool.begin(), pool.begin() + k);
      } else {
        std::uniform_int_distribution<std::size_t> pick(0, skips.size() - 1);
        for (int j = 0; j < k; ++j) s.negatives.push_back(skips[pick(rng)]);
      }
      const auto* label = labels.find(imp.user_id, clicked, imp.timestamp);
      if (label == nullptr) {
        throw DataError("no click record for " + clicked + " in impression " + imp.impression_id);
      }
      s.dwell_seconds = label->first;
      s.finish_label = label->second ? 1.0 : 0.0;
      s.dwell_label = normalize_dwell(static_cast<double>(label->first), dwell_t_max);
      out.samples.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace feedrec
