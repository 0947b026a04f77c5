#pragma once

// Synthetic multi-feedback corpora. Users and news live in a shared latent
// topic space; click, dwell, finish, share and dislike behaviour are all driven
// by the user-news affinity so that strong feedbacks carry information that
// clicks alone do not.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "feedrec/errors.hpp"
#include "feedrec/feedback.hpp"
#include "feedrec/log_io.hpp"
#include "json.hpp"

namespace feedrec {

/// Two-component log-normal dwell model; means and sds are in log-seconds.
struct DwellMixture {
  double weight_fast = 0.25;
  double mean_fast = 1.3862943611198906;  // ln 4
  double sd_fast = 0.5;
  double weight_slow = 0.75;
  double mean_slow = 4.382026634673881;  // ln 80
  double sd_slow = 0.7;
};

struct LogNormalParams {
  double mu = 0.0;
  double sigma = 1.0;
};

struct GeneratorConfig {
  int n_users = 1000;
  int n_news = 4000;
  int n_impressions = 10000;
  int topic_count = 12;
  int user_interest_dim = 16;
  DwellMixture dwell_mixture;
  /// Per-user activity weights; skip counts inherit this heavy tail.
  LogNormalParams skip_count_lognormal;
  double share_prob = 0.004;
  double dislike_prob = 0.03;
  std::uint64_t seed = 42;

  int vocab_size = 1200;
  int title_len_min = 4;
  int title_len_max = 8;
  int shown_min = 5;
  int shown_max = 15;
  /// Fraction of eye-catching news clicked regardless of interest.
  double bait_fraction = 0.15;
  double click_bias = -2.8;
  double click_affinity_scale = 5.0;
  double bait_click_boost = 1.5;
  double dwell_affinity_slope = 5.0;
  double affinity_pivot = 0.35;
  double finish_bias = -0.3;
  double finish_affinity = 3.0;
  double finish_dwell = 1.0;
  std::int64_t finish_min_dwell = 10;
  double explicit_slope = 6.0;
  double skip_dislike_factor = 0.05;
  double quick_close_threshold = 10.0;
  std::int64_t start_time = 1598918400;  // 2020-09-01 UTC
  int span_days = 32;

  void validate() const {
    if (n_users <= 0 || n_news <= 0) throw ConfigError("n_users and n_news must be positive");
    if (n_impressions < n_users) throw ConfigError("n_impressions must be >= n_users");
    if (topic_count <= 0 || user_interest_dim <= 0) {
      throw ConfigError("topic_count and user_interest_dim must be positive");
    }
    auto prob = [](double p, const char* name) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
    };
    prob(share_prob, "share_prob");
    prob(dislike_prob, "dislike_prob");
    prob(bait_fraction, "bait_fraction");
    prob(dwell_mixture.weight_fast, "dwell_mixture.weight_fast");
    prob(dwell_mixture.weight_slow, "dwell_mixture.weight_slow");
    if (std::abs(dwell_mixture.weight_fast + dwell_mixture.weight_slow - 1.0) > 1e-9) {
      throw ConfigError("dwell mixture weights must sum to 1");
    }
    if (dwell_mixture.sd_fast <= 0 || dwell_mixture.sd_slow <= 0 ||
        skip_count_lognormal.sigma <= 0) {
      throw ConfigError("log-normal sds must be positive");
    }
    if (title_len_min < 1 || title_len_max < title_len_min) {
      throw ConfigError("invalid title length range");
    }
    if (shown_min < 2 || shown_max < shown_min || shown_max > n_news) {
      throw ConfigError("invalid impression size range");
    }
    if (vocab_size < kReservedTokens + 2 * topic_count + 2) {
      throw ConfigError("vocab_size too small for topic_count");
    }
    if (span_days <= 0) throw ConfigError("span_days must be positive");
    if (quick_close_threshold <= 0) throw ConfigError("quick_close_threshold must be positive");
  }

  static constexpr int kReservedTokens = 16;  // bait marker tokens
};

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = nlohmann::json{
      {"n_users", c.n_users},
      {"n_news", c.n_news},
      {"n_impressions", c.n_impressions},
      {"topic_count", c.topic_count},
      {"user_interest_dim", c.user_interest_dim},
      {"dwell_mixture",
       {{"weight_fast", c.dwell_mixture.weight_fast},
        {"mean_fast", c.dwell_mixture.mean_fast},
        {"sd_fast", c.dwell_mixture.sd_fast},
        {"weight_slow", c.dwell_mixture.weight_slow},
        {"mean_slow", c.dwell_mixture.mean_slow},
        {"sd_slow", c.dwell_mixture.sd_slow}}},
      {"skip_count_lognormal",
       {{"mu", c.skip_count_lognormal.mu}, {"sigma", c.skip_count_lognormal.sigma}}},
      {"share_prob", c.share_prob},
      {"dislike_prob", c.dislike_prob},
      {"seed", c.seed},
      {"vocab_size", c.vocab_size},
      {"title_len_min", c.title_len_min},
      {"title_len_max", c.title_len_max},
      {"shown_min", c.shown_min},
      {"shown_max", c.shown_max},
      {"bait_fraction", c.bait_fraction},
      {"click_bias", c.click_bias},
      {"click_affinity_scale", c.click_affinity_scale},
      {"bait_click_boost", c.bait_click_boost},
      {"dwell_affinity_slope", c.dwell_affinity_slope},
      {"affinity_pivot", c.affinity_pivot},
      {"finish_bias", c.finish_bias},
      {"finish_affinity", c.finish_affinity},
      {"finish_dwell", c.finish_dwell},
      {"finish_min_dwell", c.finish_min_dwell},
      {"explicit_slope", c.explicit_slope},
      {"skip_dislike_factor", c.skip_dislike_factor},
      {"quick_close_threshold", c.quick_close_threshold},
      {"start_time", c.start_time},
      {"span_days", c.span_days},
  };
}

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline std::string padded_id(const char* prefix, long value, long count) {
  int width = 1;
  for (long v = std::max(1L, count - 1); v >= 10; v /= 10) ++width;
  std::ostringstream os;
  os << prefix << std::setw(width) << std::setfill('0') << value;
  return os.str();
}

inline std::vector<double> unit_normal_vector(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  for (double& x : v) x = normal(rng);
  return v;
}

inline void normalize(std::vector<double>& v) {
  double n = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
  if (n > 0) {
    for (double& x : v) x /= n;
  }
}

}  // namespace detail

/// Whole-corpus generation. Output ordering is canonical (news by id,
/// impressions by time, feedback chronologically per user), so the bytes
/// depend only on the config.
/// Latent quantities behind one generated click, for checking the generator.
struct ClickTrace {
  double affinity = 0;
  std::int64_t dwell_time = 0;
  bool finished = false;
  bool shared = false;
  bool disliked = false;
};

inline Corpus generate_corpus(const GeneratorConfig& cfg, std::vector<ClickTrace>* trace = nullptr) {
  using detail::sigmoid;
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int dim = cfg.user_interest_dim;

  std::vector<std::vector<double>> centroids(cfg.topic_count);
  for (auto& c : centroids) {
    c = detail::unit_normal_vector(rng, dim);
    detail::normalize(c);
  }

  // Vocabulary layout: [0, reserved) bait markers, then common words, then one
  // block per topic.
  const int reserved = GeneratorConfig::kReservedTokens;
  const int common = std::max(1, (cfg.vocab_size - reserved) / 5);
  const int per_topic = (cfg.vocab_size - reserved - common) / cfg.topic_count;

  Corpus corpus;
  std::vector<std::vector<double>> news_latent(cfg.n_news);
  std::vector<bool> news_bait(cfg.n_news);
  std::uniform_int_distribution<int> topic_pick(0, cfg.topic_count - 1);
  std::uniform_int_distribution<int> title_len(cfg.title_len_min, cfg.title_len_max);
  for (int i = 0; i < cfg.n_news; ++i) {
    const int topic = topic_pick(rng);
    news_bait[i] = unit(rng) < cfg.bait_fraction;
    auto latent = centroids[topic];
    for (double& x : latent) x += 0.3 * normal(rng);
    detail::normalize(latent);
    news_latent[i] = std::move(latent);

    NewsArticle article;
    article.news_id = detail::padded_id("N", i, cfg.n_news);
    article.category_id = topic;
    const int len = title_len(rng);
    for (int k = 0; k < len; ++k) {
      int token;
      if (unit(rng) < 0.65) {
        token = reserved + common + topic * per_topic +
                static_cast<int>(unit(rng) * per_topic) % per_topic;
      } else {
        token = reserved + static_cast<int>(unit(rng) * common) % common;
      }
      article.title_tokens.push_back(token);
    }
    if (news_bait[i]) {
      article.title_tokens[0] = static_cast<int>(unit(rng) * reserved) % reserved;
    }
    corpus.news.push_back(std::move(article));
  }

  std::vector<std::vector<double>> user_latent(cfg.n_users);
  for (auto& u : user_latent) {
    const int a = topic_pick(rng);
    int b = topic_pick(rng);
    if (cfg.topic_count > 1) {
      while (b == a) b = topic_pick(rng);
    }
    u.assign(dim, 0.0);
    for (int k = 0; k < dim; ++k) {
      u[k] = centroids[a][k] + centroids[b][k] + 0.3 * normal(rng);
    }
    detail::normalize(u);
  }

  // Every user gets one impression; the rest follow heavy-tailed activity.
  std::lognormal_distribution<double> activity(cfg.skip_count_lognormal.mu,
                                               cfg.skip_count_lognormal.sigma);
  std::vector<double> weight(cfg.n_users);
  for (double& w : weight) w = activity(rng);
  std::vector<int> imp_count(cfg.n_users, 1);
  {
    long remaining = cfg.n_impressions - cfg.n_users;
    double weight_left = std::accumulate(weight.begin(), weight.end(), 0.0);
    for (int u = 0; u < cfg.n_users && remaining > 0; ++u) {
      const double p = u + 1 == cfg.n_users ? 1.0 : std::clamp(weight[u] / weight_left, 0.0, 1.0);
      std::binomial_distribution<long> draw(remaining, p);
      const long k = draw(rng);
      imp_count[u] += static_cast<int>(k);
      remaining -= k;
      weight_left -= weight[u];
    }
  }

  const std::int64_t span = static_cast<std::int64_t>(cfg.span_days) * 86400;
  const auto& mix = cfg.dwell_mixture;
  std::normal_distribution<double> fast_dwell(mix.mean_fast, mix.sd_fast);
  std::normal_distribution<double> slow_dwell(mix.mean_slow, mix.sd_slow);
  std::uniform_int_distribution<int> shown_size(cfg.shown_min, cfg.shown_max);
  std::uniform_int_distribution<int> news_pick(0, cfg.n_news - 1);

  struct PendingImpression {
    RawImpression raw;
    int user;
  };
  std::vector<PendingImpression> pending;
  std::vector<FeedbackRecord> explicit_records;
  for (int u = 0; u < cfg.n_users; ++u) {
    const std::string user_id = detail::padded_id("", u, cfg.n_users);
    std::vector<std::int64_t> times(imp_count[u]);
    std::uniform_int_distribution<std::int64_t> when(0, span - 1);
    for (auto& t : times) t = cfg.start_time + when(rng);
    std::sort(times.begin(), times.end());
    for (std::size_t i = 1; i < times.size(); ++i) times[i] = std::max(times[i], times[i - 1] + 60);

    std::unordered_set<int> seen;
    for (std::int64_t tau : times) {
      const int size = shown_size(rng);
      std::vector<int> shown;
      std::unordered_set<int> in_page;
      int attempts = 0;
      while (static_cast<int>(shown.size()) < size) {
        const int n = news_pick(rng);
        if (in_page.contains(n)) continue;
        // Prefer unseen news; repeats only once the catalog is exhausted.
        if (seen.contains(n) && ++attempts < 64) continue;
        in_page.insert(n);
        shown.push_back(n);
      }
      RawImpression raw;
      raw.impression.user_id = user_id;
      raw.impression.timestamp = tau;
      for (int n : shown) {
        seen.insert(n);
        const std::string& news_id = corpus.news[n].news_id;
        raw.impression.shown_news.push_back(news_id);
        const double a = std::inner_product(user_latent[u].begin(), user_latent[u].end(),
                                            news_latent[n].begin(), 0.0);
        const double bait = news_bait[n] ? 1.0 : 0.0;
        const double p_click =
            sigmoid(cfg.click_bias + cfg.click_affinity_scale * a + cfg.bait_click_boost * bait);
        if (unit(rng) < p_click) {
          const double p_fast = sigmoid(detail::logit(std::clamp(mix.weight_fast, 1e-6, 1 - 1e-6)) -
                                        cfg.dwell_affinity_slope * (a - cfg.affinity_pivot));
          const double log_dwell = unit(rng) < p_fast ? fast_dwell(rng) : slow_dwell(rng);
          const auto dwell = static_cast<std::int64_t>(std::llround(std::exp(log_dwell)));
          const double p_finish =
              sigmoid(cfg.finish_bias + cfg.finish_affinity * a +
                      cfg.finish_dwell * (std::log(dwell + 1.0) - std::log(61.0)));
          const bool finished = dwell >= cfg.finish_min_dwell && unit(rng) < p_finish;
          raw.impression.clicked.push_back(news_id);
          raw.clicks.push_back({news_id, dwell, finished});

          const std::int64_t after = tau + 1 + std::min<std::int64_t>(dwell, 30);
          const double tilt = sigmoid(cfg.explicit_slope * (a - cfg.affinity_pivot));
          const bool shared = unit(rng) < std::min(1.0, 2.0 * cfg.share_prob * tilt);
          if (shared) {
            explicit_records.push_back({user_id, news_id, FeedbackType::kShare, after, std::nullopt});
          }
          const bool disliked = unit(rng) < std::min(1.0, 2.0 * cfg.dislike_prob * (1.0 - tilt));
          if (disliked) {
            explicit_records.push_back(
                {user_id, news_id, FeedbackType::kDislike, after, std::nullopt});
          }
          if (trace != nullptr) trace->push_back({a, dwell, finished, shared, disliked});
        } else {
          const double tilt = sigmoid(cfg.explicit_slope * (a - cfg.affinity_pivot));
          if (unit(rng) <
              std::min(1.0, 2.0 * cfg.dislike_prob * cfg.skip_dislike_factor * (1.0 - tilt))) {
            explicit_records.push_back(
                {user_id, news_id, FeedbackType::kDislike, tau + 1, std::nullopt});
          }
        }
      }
      pending.push_back({std::move(raw), u});
    }
  }

  std::stable_sort(pending.begin(), pending.end(), [](const auto& a, const auto& b) {
    return std::tie(a.raw.impression.timestamp, a.user) <
           std::tie(b.raw.impression.timestamp, b.user);
  });
  std::vector<RawImpression> raws;
  raws.reserve(pending.size());
  for (std::size_t i = 0; i < pending.size(); ++i) {
    pending[i].raw.impression.impression_id =
        detail::padded_id("I", static_cast<long>(i), static_cast<long>(pending.size()));
    corpus.impressions.push_back(pending[i].raw.impression);
    raws.push_back(std::move(pending[i].raw));
  }
  corpus.feedback = derive_feedbacks(raws, explicit_records, cfg.quick_close_threshold);
  return corpus;
}

struct CountSummary {
  double median = 0;
  double p90 = 0;
  std::size_t max = 0;
  /// Users per log2 bin: bin k counts users with count in [2^k - 1, 2^(k+1) - 1).
  std::vector<std::size_t> log2_histogram;
};

struct CorpusStats {
  std::size_t n_users = 0;
  std::size_t n_news = 0;
  std::size_t n_impressions = 0;
  std::map<std::string, std::size_t> counts;
  std::optional<double> mean_dwell;
  std::map<std::string, std::vector<std::size_t>> per_user_counts;
  std::map<std::string, CountSummary> per_user_summary;

  std::size_t count(FeedbackType t) const {
    auto it = counts.find(std::string(to_string(t)));
    return it == counts.end() ? 0 : it->second;
  }
};

inline double quantile(std::vector<std::size_t> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return static_cast<double>(values[lo]) * (1 - frac) + static_cast<double>(values[hi]) * frac;
}

inline CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats s;
  s.n_news = corpus.news.size();
  s.n_impressions = corpus.impressions.size();
  std::map<std::string, std::size_t> user_index;
  for (const auto& imp : corpus.impressions) user_index.emplace(imp.user_id, 0);
  for (const auto& r : corpus.feedback) user_index.emplace(r.user_id, 0);
  std::size_t next = 0;
  for (auto& [_, idx] : user_index) idx = next++;
  s.n_users = user_index.size();

  for (FeedbackType t : kAllFeedbackTypes) {
    s.counts[std::string(to_string(t))] = 0;
    s.per_user_counts[std::string(to_string(t))].assign(s.n_users, 0);
  }
  double dwell_sum = 0;
  std::size_t dwell_n = 0;
  for (const auto& r : corpus.feedback) {
    const std::string name(to_string(r.type));
    ++s.counts[name];
    ++s.per_user_counts[name][user_index.at(r.user_id)];
    if (r.type == FeedbackType::kClick && r.dwell_time) {
      dwell_sum += static_cast<double>(*r.dwell_time);
      ++dwell_n;
    }
  }
  if (dwell_n > 0) s.mean_dwell = dwell_sum / static_cast<double>(dwell_n);
  for (const auto& [name, per_user] : s.per_user_counts) {
    CountSummary summary;
    summary.median = quantile(per_user, 0.5);
    summary.p90 = quantile(per_user, 0.9);
    for (std::size_t c : per_user) {
      summary.max = std::max(summary.max, c);
      const auto bin = static_cast<std::size_t>(quantize_time(static_cast<double>(c)));
      if (summary.log2_histogram.size() <= bin) summary.log2_histogram.resize(bin + 1, 0);
      ++summary.log2_histogram[bin];
    }
    s.per_user_summary[name] = std::move(summary);
  }
  return s;
}

inline nlohmann::json to_json(const CorpusStats& s) {
  nlohmann::json j;
  j["n_users"] = s.n_users;
  j["n_news"] = s.n_news;
  j["n_impressions"] = s.n_impressions;
  j["counts"] = s.counts;
  j["mean_dwell"] = s.mean_dwell ? nlohmann::json(*s.mean_dwell) : nlohmann::json(nullptr);
  for (const auto& [name, summary] : s.per_user_summary) {
    j["per_user"][name] = {{"median", summary.median},
                           {"p90", summary.p90},
                           {"max", summary.max},
                           {"log2_histogram", summary.log2_histogram}};
  }
  return j;
}

}  // namespace feedrec
