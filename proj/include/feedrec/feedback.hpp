#pragma once

// Feedback taxonomy and the log-level operations every other module builds on:
// time quantization, derivation of finish/quick-close/skip records from raw
// click logs, and skip subsampling.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "feedrec/errors.hpp"

namespace feedrec {

/// Declaration order is the intra-second tie-break order used when sorting.
enum class FeedbackType : std::uint8_t {
  kClick = 0,
  kFinish = 1,
  kQuickClose = 2,
  kShare = 3,
  kDislike = 4,
  kSkip = 5,
};

inline constexpr int kFeedbackTypeCount = 6;

inline constexpr std::array<FeedbackType, kFeedbackTypeCount> kAllFeedbackTypes = {
    FeedbackType::kClick, FeedbackType::kFinish,  FeedbackType::kQuickClose,
    FeedbackType::kShare, FeedbackType::kDislike, FeedbackType::kSkip};

inline constexpr int index_of(FeedbackType t) { return static_cast<int>(t); }

inline constexpr std::string_view to_string(FeedbackType t) {
  switch (t) {
    case FeedbackType::kClick: return "click";
    case FeedbackType::kFinish: return "finish";
    case FeedbackType::kQuickClose: return "quick_close";
    case FeedbackType::kShare: return "share";
    case FeedbackType::kDislike: return "dislike";
    case FeedbackType::kSkip: return "skip";
  }
  return "?";
}

inline FeedbackType parse_feedback_type(std::string_view name) {
  for (FeedbackType t : kAllFeedbackTypes) {
    if (to_string(t) == name) return t;
  }
  throw InputError("unknown feedback type '" + std::string(name) + "'");
}

/// Types whose records carry the dwell time of the underlying click.
inline constexpr bool carries_dwell(FeedbackType t) {
  return t == FeedbackType::kClick || t == FeedbackType::kFinish ||
         t == FeedbackType::kQuickClose;
}

struct FeedbackRecord {
  std::string user_id;
  std::string news_id;
  FeedbackType type = FeedbackType::kClick;
  std::int64_t event_time = 0;
  std::optional<std::int64_t> dwell_time;

  friend bool operator==(const FeedbackRecord&, const FeedbackRecord&) = default;
};

/// Canonical order: user, then time, then news id, then type order.
inline bool chronological_less(const FeedbackRecord& a, const FeedbackRecord& b) {
  return std::tie(a.user_id, a.event_time, a.news_id, a.type) <
         std::tie(b.user_id, b.event_time, b.news_id, b.type);
}

inline void sort_chronologically(std::vector<FeedbackRecord>& records) {
  std::stable_sort(records.begin(), records.end(), chronological_less);
}

/// Throws DataError when dwell presence disagrees with the record type.
inline void validate(const FeedbackRecord& r) {
  if (carries_dwell(r.type) != r.dwell_time.has_value()) {
    throw DataError("record (" + r.user_id + ", " + r.news_id + ", " +
                    std::string(to_string(r.type)) + ") has inconsistent dwell_time");
  }
  if (r.dwell_time && *r.dwell_time < 0) {
    throw DataError("negative dwell_time for news " + r.news_id);
  }
}

struct ImpressionLog {
  std::string impression_id;
  std::string user_id;
  std::vector<std::string> shown_news;
  std::vector<std::string> clicked;
  std::int64_t timestamp = 0;

  friend bool operator==(const ImpressionLog&, const ImpressionLog&) = default;
};

inline void validate(const ImpressionLog& imp) {
  if (imp.shown_news.empty()) {
    throw DataError("impression " + imp.impression_id + " shows no news");
  }
  std::set<std::string_view> shown(imp.shown_news.begin(), imp.shown_news.end());
  if (shown.size() != imp.shown_news.size()) {
    throw DataError("impression " + imp.impression_id + " shows duplicate news");
  }
  for (const auto& c : imp.clicked) {
    if (!shown.contains(c)) {
      throw DataError("impression " + imp.impression_id + " clicked unshown news " + c);
    }
  }
}

struct NewsArticle {
  std::string news_id;
  std::vector<int> title_tokens;
  int category_id = 0;

  friend bool operator==(const NewsArticle&, const NewsArticle&) = default;
};

/// Largest dwell/interval bucket; 2^13 - 1 seconds is about 2.3 hours.
inline constexpr int kBucketCap = 12;

/// min(floor(log2(t + 1)), kBucketCap). Computed on integers where possible
/// so that exact powers of two never land one bucket low.
inline int quantize_time(double t) {
  if (!std::isfinite(t) || t < 0.0) {
    throw InputError("quantize_time expects a finite nonnegative time, got " + std::to_string(t));
  }
  if (t >= static_cast<double>((std::uint64_t{1} << (kBucketCap + 1)) - 1)) return kBucketCap;
  // floor(log2(t + 1)) == bit width of floor(t + 1) minus one, since the
  // bucket edges 2^k - 1 are integers.
  const auto whole = static_cast<std::uint64_t>(std::floor(t)) + 1;
  int bucket = -1;
  for (std::uint64_t v = whole; v != 0; v >>= 1) ++bucket;
  return std::min(bucket, kBucketCap);
}

/// The clicked half of an impression: dwell and completion of each click.
struct ClickOutcome {
  std::string news_id;
  std::optional<std::int64_t> dwell_time;
  bool finished = false;
};

struct RawImpression {
  ImpressionLog impression;
  std::vector<ClickOutcome> clicks;
};

/// Expands raw click logs into the six-type record stream. Clicked news emit
/// click (+ finish when finished, + quick_close when dwell < threshold);
/// shown-but-unclicked news emit skip; explicit records pass through.
inline std::vector<FeedbackRecord> derive_feedbacks(std::span<const RawImpression> raw_clicks,
                                                    std::span<const FeedbackRecord> raw_explicit,
                                                    double quick_close_threshold) {
  if (!(quick_close_threshold > 0.0)) {
    throw ConfigError("dwell threshold T must be positive");
  }
  std::vector<FeedbackRecord> out;
  for (const RawImpression& raw : raw_clicks) {
    const ImpressionLog& imp = raw.impression;
    validate(imp);
    std::set<std::string_view> clicked(imp.clicked.begin(), imp.clicked.end());
    for (const auto& news : imp.shown_news) {
      if (clicked.contains(news)) continue;
      out.push_back({imp.user_id, news, FeedbackType::kSkip, imp.timestamp, std::nullopt});
    }
    for (const auto& news : imp.clicked) {
      auto it = std::find_if(raw.clicks.begin(), raw.clicks.end(),
                             [&](const ClickOutcome& c) { return c.news_id == news; });
      if (it == raw.clicks.end() || !it->dwell_time) {
        throw DataError("click on " + news + " in impression " + imp.impression_id +
                        " lacks a dwell time");
      }
      const std::int64_t dwell = *it->dwell_time;
      if (dwell < 0) throw DataError("negative dwell time on " + news);
      out.push_back({imp.user_id, news, FeedbackType::kClick, imp.timestamp, dwell});
      if (it->finished) {
        out.push_back({imp.user_id, news, FeedbackType::kFinish, imp.timestamp, dwell});
      }
      if (static_cast<double>(dwell) < quick_close_threshold) {
        out.push_back({imp.user_id, news, FeedbackType::kQuickClose, imp.timestamp, dwell});
      }
    }
  }
  for (const FeedbackRecord& r : raw_explicit) {
    if (r.type != FeedbackType::kShare && r.type != FeedbackType::kDislike) {
      throw DataError("explicit feedback must be share or dislike, got " +
                      std::string(to_string(r.type)));
    }
    out.push_back(r);
  }
  sort_chronologically(out);
  return out;
}

/// Replaces every quick_close record with one re-derived from the click
/// records at a new threshold.
inline std::vector<FeedbackRecord> rederive_quick_close(std::span<const FeedbackRecord> records,
                                                        double quick_close_threshold) {
  if (!(quick_close_threshold > 0.0)) {
    throw ConfigError("dwell threshold T must be positive");
  }
  std::vector<FeedbackRecord> out;
  out.reserve(records.size());
  for (const FeedbackRecord& r : records) {
    if (r.type == FeedbackType::kQuickClose) continue;
    out.push_back(r);
    if (r.type == FeedbackType::kClick && r.dwell_time &&
        static_cast<double>(*r.dwell_time) < quick_close_threshold) {
      FeedbackRecord q = r;
      q.type = FeedbackType::kQuickClose;
      out.push_back(std::move(q));
    }
  }
  sort_chronologically(out);
  return out;
}

/// Keeps each skip with probability `rate`; other records always survive.
inline std::vector<FeedbackRecord> subsample_skips(std::span<const FeedbackRecord> records,
                                                   double rate, std::uint64_t seed) {
  if (!(rate > 0.0 && rate <= 1.0)) {
    throw ConfigError("skip subsample rate must lie in (0, 1], got " + std::to_string(rate));
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<FeedbackRecord> out;
  out.reserve(records.size());
  for (const FeedbackRecord& r : records) {
    if (r.type == FeedbackType::kSkip && rate < 1.0 && unit(rng) >= rate) continue;
    out.push_back(r);
  }
  return out;
}

/// One user's feedback grouped by type, each group chronological.
struct UserState {
  std::string user_id;
  std::array<std::vector<FeedbackRecord>, kFeedbackTypeCount> groups;

  const std::vector<FeedbackRecord>& of(FeedbackType t) const { return groups[index_of(t)]; }
  std::size_t count(FeedbackType t) const { return of(t).size(); }
  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.size();
    return n;
  }

  /// Re-merges the groups into the original chronological sequence.
  std::vector<FeedbackRecord> chronological() const {
    std::vector<FeedbackRecord> all;
    all.reserve(size());
    for (const auto& g : groups) all.insert(all.end(), g.begin(), g.end());
    sort_chronologically(all);
    return all;
  }
};

inline UserState build_user_state(std::string user_id, std::span<const FeedbackRecord> records) {
  UserState state;
  state.user_id = std::move(user_id);
  for (const FeedbackRecord& r : records) {
    if (r.user_id != state.user_id) continue;
    state.groups[index_of(r.type)].push_back(r);
  }
  for (auto& g : state.groups) sort_chronologically(g);
  return state;
}

}  // namespace feedrec
