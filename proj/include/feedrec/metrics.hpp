#pragma once

// Click-ranking metrics (AUC, MRR, nDCG@5, HR@5) and top-5 engagement
// metrics. oracle_metrics is a deliberately naive twin used by the tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "feedrec/errors.hpp"

namespace feedrec {

inline constexpr std::size_t kTopK = 5;

struct RankedCandidate {
  std::string news_id;
  double score = 0;
  bool clicked = false;
  bool shared = false;
  bool disliked = false;
  bool finished = false;
  std::optional<double> dwell_time;
};

struct RankedImpression {
  std::string impression_id;
  std::vector<RankedCandidate> candidates;
};

struct ClickMetrics {
  double auc = 0;
  double mrr = 0;
  double ndcg5 = 0;
  double hr5 = 0;
  std::size_t auc_impressions = 0;
  std::size_t rank_impressions = 0;
  /// Impressions lacking either a clicked or a skipped candidate (no AUC).
  std::size_t excluded_auc = 0;
  /// Impressions without any clicked candidate (no ranking metrics).
  std::size_t excluded_rank = 0;
};

/// Candidate indices ordered by descending score; ties keep input order.
inline std::vector<std::size_t> ranking_order(const RankedImpression& imp) {
  std::vector<std::size_t> order(imp.candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return imp.candidates[a].score > imp.candidates[b].score;
  });
  return order;
}

namespace detail {

inline void check_scores(const RankedImpression& imp) {
  for (const auto& c : imp.candidates) {
    if (!std::isfinite(c.score)) {
      throw InputError("non-finite score in impression " + imp.impression_id);
    }
  }
}

/// Rank-sum AUC with average ranks for ties.
inline double auc_rank_sum(const RankedImpression& imp, std::size_t positives,
                           std::size_t negatives) {
  const auto& c = imp.candidates;
  std::vector<std::size_t> asc(c.size());
  std::iota(asc.begin(), asc.end(), 0);
  std::sort(asc.begin(), asc.end(), [&](std::size_t a, std::size_t b) { return c[a].score < c[b].score; });
  double rank_sum = 0;
  for (std::size_t i = 0; i < asc.size();) {
    std::size_t j = i;
    while (j < asc.size() && c[asc[j]].score == c[asc[i]].score) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (c[asc[k]].clicked) rank_sum += avg_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(positives);
  const double n = static_cast<double>(negatives);
  return (rank_sum - p * (p + 1) / 2) / (p * n);
}

struct RankStats {
  double mrr = 0, ndcg5 = 0, hr5 = 0;
};

inline RankStats rank_stats(const RankedImpression& imp, const std::vector<std::size_t>& order,
                            std::size_t positives) {
  RankStats s;
  double dcg = 0;
  double rr = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (!imp.candidates[order[r]].clicked) continue;
    rr += 1.0 / static_cast<double>(r + 1);
    if (r < kTopK) {
      dcg += 1.0 / std::log2(static_cast<double>(r + 2));
      s.hr5 = 1.0;
    }
  }
  double ideal = 0;
  for (std::size_t r = 0; r < std::min(positives, kTopK); ++r) {
    ideal += 1.0 / std::log2(static_cast<double>(r + 2));
  }
  s.mrr = rr / static_cast<double>(positives);
  s.ndcg5 = dcg / ideal;
  return s;
}

inline void finish_means(ClickMetrics& m) {
  if (m.auc_impressions > 0) m.auc /= static_cast<double>(m.auc_impressions);
  if (m.rank_impressions > 0) {
    const double n = static_cast<double>(m.rank_impressions);
    m.mrr /= n;
    m.ndcg5 /= n;
    m.hr5 /= n;
  }
}

}  // namespace detail

/// Macro-averaged over impressions.
inline ClickMetrics click_metrics(std::span<const RankedImpression> impressions) {
  ClickMetrics m;
  for (const RankedImpression& imp : impressions) {
    detail::check_scores(imp);
    const auto positives = static_cast<std::size_t>(std::count_if(
        imp.candidates.begin(), imp.candidates.end(), [](const auto& c) { return c.clicked; }));
    const std::size_t negatives = imp.candidates.size() - positives;
    if (positives == 0 || negatives == 0) {
      ++m.excluded_auc;
    } else {
      m.auc += detail::auc_rank_sum(imp, positives, negatives);
      ++m.auc_impressions;
    }
    if (positives == 0) {
      ++m.excluded_rank;
      continue;
    }
    const auto s = detail::rank_stats(imp, ranking_order(imp), positives);
    m.mrr += s.mrr;
    m.ndcg5 += s.ndcg5;
    m.hr5 += s.hr5;
    ++m.rank_impressions;
  }
  detail::finish_means(m);
  return m;
}

/// Exhaustive pair counting and an explicit rank computation per candidate.
inline ClickMetrics oracle_metrics(std::span<const RankedImpression> impressions) {
  ClickMetrics m;
  for (const RankedImpression& imp : impressions) {
    detail::check_scores(imp);
    const auto& c = imp.candidates;
    double wins = 0;
    std::size_t pairs = 0;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (!c[i].clicked) continue;
      ++positives;
      for (std::size_t j = 0; j < c.size(); ++j) {
        if (c[j].clicked) continue;
        ++pairs;
        if (c[i].score > c[j].score) wins += 1.0;
        else if (c[i].score == c[j].score) wins += 0.5;
      }
    }
    if (pairs == 0) {
      ++m.excluded_auc;
    } else {
      m.auc += wins / static_cast<double>(pairs);
      ++m.auc_impressions;
    }
    if (positives == 0) {
      ++m.excluded_rank;
      continue;
    }
    // rank(i) = 1 + #{j beating i}, where j beats i on a higher score or an
    // equal score earlier in the input.
    std::vector<std::size_t> order(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
      std::size_t ahead = 0;
      for (std::size_t j = 0; j < c.size(); ++j) {
        if (c[j].score > c[i].score || (c[j].score == c[i].score && j < i)) ++ahead;
      }
      order[ahead] = i;
    }
    double rr = 0, dcg = 0, ideal = 0, hit = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (c[order[r]].clicked) {
        rr += 1.0 / static_cast<double>(r + 1);
        if (r < kTopK) {
          dcg += 1.0 / std::log2(static_cast<double>(r + 2));
          hit = 1.0;
        }
      }
    }
    for (std::size_t r = 0; r < positives && r < kTopK; ++r) {
      ideal += 1.0 / std::log2(static_cast<double>(r + 2));
    }
    m.mrr += rr / static_cast<double>(positives);
    m.ndcg5 += dcg / ideal;
    m.hr5 += hit;
    ++m.rank_impressions;
  }
  detail::finish_means(m);
  return m;
}

/// Per-shown-item base rates of the reference population.
struct EngagementTotals {
  std::size_t shown = 0;
  std::size_t shared = 0;
  std::size_t disliked = 0;
};

inline EngagementTotals engagement_totals(std::span<const RankedImpression> impressions) {
  EngagementTotals t;
  for (const auto& imp : impressions) {
    for (const auto& c : imp.candidates) {
      ++t.shown;
      t.shared += c.shared ? 1 : 0;
      t.disliked += c.disliked ? 1 : 0;
    }
  }
  return t;
}

struct EngagementMetrics {
  std::optional<double> share_ratio;
  std::optional<double> dislike_ratio;
  std::optional<double> finish_rate;
  std::optional<double> mean_dwell;
  std::size_t top_items = 0;
  std::size_t top_clicked = 0;
};

/// Pools every impression's top-5 by score. Ratios compare the top-5 rate to
/// the base rate in `totals`; absent when the base rate is zero.
inline EngagementMetrics engagement_metrics(std::span<const RankedImpression> impressions,
                                            const EngagementTotals& totals) {
  EngagementMetrics m;
  std::size_t shared = 0, disliked = 0, finished = 0, with_dwell = 0;
  double dwell_sum = 0;
  for (const auto& imp : impressions) {
    detail::check_scores(imp);
    const auto order = ranking_order(imp);
    for (std::size_t r = 0; r < std::min(kTopK, order.size()); ++r) {
      const RankedCandidate& c = imp.candidates[order[r]];
      ++m.top_items;
      shared += c.shared ? 1 : 0;
      disliked += c.disliked ? 1 : 0;
      if (!c.clicked) continue;
      ++m.top_clicked;
      finished += c.finished ? 1 : 0;
      if (c.dwell_time) {
        dwell_sum += *c.dwell_time;
        ++with_dwell;
      }
    }
  }
  if (m.top_items > 0 && totals.shown > 0) {
    const double items = static_cast<double>(m.top_items);
    const double shown = static_cast<double>(totals.shown);
    if (totals.shared > 0) {
      m.share_ratio = (static_cast<double>(shared) / items) /
                      (static_cast<double>(totals.shared) / shown);
    }
    if (totals.disliked > 0) {
      m.dislike_ratio = (static_cast<double>(disliked) / items) /
                        (static_cast<double>(totals.disliked) / shown);
    }
  }
  if (m.top_clicked > 0) {
    m.finish_rate = static_cast<double>(finished) / static_cast<double>(m.top_clicked);
  }
  if (with_dwell > 0) m.mean_dwell = dwell_sum / static_cast<double>(with_dwell);
  return m;
}

inline void to_json(nlohmann::json& j, const ClickMetrics& m) {
  j = {{"auc", m.auc},
       {"mrr", m.mrr},
       {"ndcg5", m.ndcg5},
       {"hr5", m.hr5},
       {"auc_impressions", m.auc_impressions},
       {"rank_impressions", m.rank_impressions},
       {"excluded_auc", m.excluded_auc},
       {"excluded_rank", m.excluded_rank}};
}

inline void to_json(nlohmann::json& j, const EngagementMetrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
  j = {{"share_ratio", opt(m.share_ratio)},
       {"dislike_ratio", opt(m.dislike_ratio)},
       {"finish_rate", opt(m.finish_rate)},
       {"mean_dwell", opt(m.mean_dwell)},
       {"top_items", m.top_items},
       {"top_clicked", m.top_clicked}};
}

}  // namespace feedrec
