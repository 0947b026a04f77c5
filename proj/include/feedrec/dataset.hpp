#pragma once

// Corpus views used by training and evaluation: chronological split, news
// lookup, and per-user feedback histories cut at an impression time.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "feedrec/errors.hpp"
#include "feedrec/feedback.hpp"
#include "feedrec/log_io.hpp"

namespace feedrec {

struct ChronologicalSplit {
  std::vector<ImpressionLog> train;
  std::vector<ImpressionLog> validation;
  std::vector<ImpressionLog> test;
};

/// Orders impressions by time and takes the last `test_fraction` as test and
/// the `validation_fraction` before that as validation.
inline ChronologicalSplit chronological_split(std::span<const ImpressionLog> impressions,
                                              double test_fraction = 0.25,
                                              double validation_fraction = 0.05) {
  if (test_fraction < 0 || validation_fraction < 0 || test_fraction + validation_fraction >= 1) {
    throw ConfigError("split fractions must be nonnegative and sum below 1");
  }
  std::vector<ImpressionLog> sorted(impressions.begin(), impressions.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return std::tie(a.timestamp, a.impression_id) < std::tie(b.timestamp, b.impression_id);
  });
  const auto n = sorted.size();
  const auto n_test = static_cast<std::size_t>(std::ceil(test_fraction * static_cast<double>(n)));
  const auto n_val =
      static_cast<std::size_t>(std::ceil(validation_fraction * static_cast<double>(n)));
  const std::size_t train_end = n - std::min(n, n_test + n_val);
  const std::size_t val_end = n - std::min(n, n_test);
  ChronologicalSplit split;
  split.train.assign(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(train_end));
  split.validation.assign(sorted.begin() + static_cast<std::ptrdiff_t>(train_end),
                          sorted.begin() + static_cast<std::ptrdiff_t>(val_end));
  split.test.assign(sorted.begin() + static_cast<std::ptrdiff_t>(val_end), sorted.end());
  return split;
}

/// How raw feedback is turned into model input histories.
struct HistoryOptions {
  double quick_close_threshold = 10.0;
  double skip_subsample = 0.1;
  std::uint64_t seed = 0;
  std::set<FeedbackType> drop;
};

class FeedIndex {
 public:
  FeedIndex(const Corpus& corpus, const HistoryOptions& options) {
    for (const NewsArticle& n : corpus.news) {
      if (!news_row_.emplace(n.news_id, static_cast<int>(titles_.size())).second) {
        throw DataError("duplicate news id " + n.news_id);
      }
      titles_.push_back(n.title_tokens);
    }
    std::vector<FeedbackRecord> records =
        rederive_quick_close(corpus.feedback, options.quick_close_threshold);
    std::erase_if(records, [&](const FeedbackRecord& r) { return options.drop.contains(r.type); });
    records = subsample_skips(records, options.skip_subsample, options.seed);
    for (FeedbackRecord& r : records) {
      if (!news_row_.contains(r.news_id)) throw DataError("feedback on unknown news " + r.news_id);
      by_user_[r.user_id].push_back(std::move(r));
    }
    for (auto& [_, v] : by_user_) sort_chronologically(v);
  }

  int news_row(const std::string& news_id) const {
    auto it = news_row_.find(news_id);
    if (it == news_row_.end()) throw DataError("unknown news id " + news_id);
    return it->second;
  }
  bool has_news(const std::string& news_id) const { return news_row_.contains(news_id); }
  const std::vector<std::vector<int>>& titles() const { return titles_; }
  std::size_t news_count() const { return titles_.size(); }

  /// The user's most recent `max_seq` records strictly before `before`.
  std::span<const FeedbackRecord> history(const std::string& user_id, std::int64_t before,
                                          int max_seq) const {
    auto it = by_user_.find(user_id);
    if (it == by_user_.end()) return {};
    const auto& v = it->second;
    auto end = std::lower_bound(v.begin(), v.end(), before,
                                [](const FeedbackRecord& r, std::int64_t t) { return r.event_time < t; });
    const auto count = std::min<std::ptrdiff_t>(end - v.begin(), max_seq);
    if (count == 0) return {};
    return {std::to_address(end - count), static_cast<std::size_t>(count)};
  }

  /// Full processed feedback of a user.
  std::span<const FeedbackRecord> records_of(const std::string& user_id) const {
    auto it = by_user_.find(user_id);
    if (it == by_user_.end()) return {};
    return it->second;
  }

 private:
  std::unordered_map<std::string, int> news_row_;
  std::vector<std::vector<int>> titles_;
  std::unordered_map<std::string, std::vector<FeedbackRecord>> by_user_;
};

}  // namespace feedrec
