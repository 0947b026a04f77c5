#pragma once

// Training loop, Adam, split-level evaluation and the finite-difference
// gradient checker.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "feedrec/dataset.hpp"
#include "feedrec/errors.hpp"
#include "feedrec/heads_losses.hpp"
#include "feedrec/metrics.hpp"
#include "feedrec/model.hpp"

namespace feedrec {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 32;
  int epochs = 3;
  double dropout = 0.2;
  int negatives = 4;  // K
  LossWeights weights;
  double quick_close_threshold = 10.0;  // T, seconds
  double skip_subsample = 0.1;
  double dwell_t_max = 1800.0;
  double test_fraction = 0.25;
  double validation_fraction = 0.05;
  std::uint64_t seed = 7;
  ModelConfig model;
  ModelOptions options;
  std::set<FeedbackType> drop_feedback;
  bool disable_finish_loss = false;
  bool disable_dwell_loss = false;
  bool disable_disentangle_loss = false;
  /// Full-pass training loss (no dropout) before training and after each epoch.
  bool track_train_loss = true;
  bool validate_each_epoch = true;

  void validate() const {
    if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) {
      throw ConfigError("learning_rate must be finite and >= 0");
    }
    if (batch_size <= 0 || epochs < 0 || negatives < 1) {
      throw ConfigError("batch_size and negatives must be positive, epochs >= 0");
    }
    if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must lie in [0, 1)");
    if (!(quick_close_threshold > 0)) throw ConfigError("quick_close_threshold must be positive");
    if (!(skip_subsample > 0 && skip_subsample <= 1)) {
      throw ConfigError("skip_subsample must lie in (0, 1]");
    }
    if (!(dwell_t_max > 0)) throw ConfigError("dwell_t_max must be positive");
    weights.validate();
    model.validate();
  }

  LossSwitches loss_switches() const {
    return {weights, !disable_finish_loss, !disable_dwell_loss, !disable_disentangle_loss};
  }

  HistoryOptions history_options() const {
    return {quick_close_threshold, skip_subsample, seed ^ 0x9e3779b97f4a7c15ULL, drop_feedback};
  }
};

/// Adam with bias correction.
template <typename T>
class Adam {
 public:
  Adam(ParamStore<T>& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : store_(&store), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : store.all()) {
      m_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step() {
    ++t_;
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    const T c1 = static_cast<T>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
    const T c2 = static_cast<T>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
    const T lr = static_cast<T>(lr_), eps = static_cast<T>(eps_);
    auto& params = store_->all();
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter<T>& p = *params[i];
      if (p.grad.size() == 0) continue;
      m_[i] = b1 * m_[i] + (T(1) - b1) * p.grad;
      v_[i] = b2 * v_[i] + (T(1) - b2) * p.grad.cwiseAbs2();
      p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
    }
  }

  long steps() const { return t_; }

 private:
  ParamStore<T>* store_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix<T>> m_, v_;
};

/// Labels used to judge ranked impressions: clicks and finish from the
/// impression's click records, share/dislike from explicit records falling
/// in [impression time, next impression time of the same user).
class EvalLabels {
 public:
  explicit EvalLabels(const Corpus& corpus) : clicks_(ClickLabels::index(corpus.feedback)) {
    std::map<std::string, std::vector<std::int64_t>> times;
    for (const auto& imp : corpus.impressions) times[imp.user_id].push_back(imp.timestamp);
    for (auto& [_, v] : times) std::sort(v.begin(), v.end());
    for (const FeedbackRecord& r : corpus.feedback) {
      if (r.type != FeedbackType::kShare && r.type != FeedbackType::kDislike) continue;
      auto it = times.find(r.user_id);
      if (it == times.end()) continue;
      auto up = std::upper_bound(it->second.begin(), it->second.end(), r.event_time);
      if (up == it->second.begin()) continue;
      auto& flags = explicit_[{r.user_id, r.news_id, *(up - 1)}];
      (r.type == FeedbackType::kShare ? flags.first : flags.second) = true;
    }
  }

  RankedCandidate label(const ImpressionLog& imp, const std::string& news_id, double score) const {
    RankedCandidate c;
    c.news_id = news_id;
    c.score = score;
    c.clicked = std::find(imp.clicked.begin(), imp.clicked.end(), news_id) != imp.clicked.end();
    if (c.clicked) {
      if (const auto* l = clicks_.find(imp.user_id, news_id, imp.timestamp)) {
        c.dwell_time = static_cast<double>(l->first);
        c.finished = l->second;
      }
    }
    auto it = explicit_.find({imp.user_id, news_id, imp.timestamp});
    if (it != explicit_.end()) {
      c.shared = it->second.first;
      c.disliked = it->second.second;
    }
    return c;
  }

 private:
  ClickLabels clicks_;
  std::map<std::tuple<std::string, std::string, std::int64_t>, std::pair<bool, bool>> explicit_;
};

/// Scores every shown news of each impression by y-hat.
template <typename T>
std::vector<RankedImpression> rank_impressions(const FeedRecModel<T>& model, const FeedIndex& index,
                                               const EvalLabels& labels,
                                               std::span<const ImpressionLog> impressions,
                                               const ModelOptions& options,
                                               std::vector<CandidateScores>* raw = nullptr) {
  const Matrix<T> catalog = encode_catalog(model, index);
  std::vector<ScoreRequest> requests;
  requests.reserve(impressions.size());
  for (const auto& imp : impressions) requests.push_back({imp.user_id, imp.timestamp, imp.shown_news});
  auto scores = score_requests(model, index, catalog, std::span<const ScoreRequest>(requests), options);
  std::vector<RankedImpression> out;
  out.reserve(impressions.size());
  for (std::size_t i = 0; i < impressions.size(); ++i) {
    RankedImpression r;
    r.impression_id = impressions[i].impression_id;
    for (std::size_t c = 0; c < scores[i].news.size(); ++c) {
      r.candidates.push_back(labels.label(impressions[i], scores[i].news[c], scores[i].scores[c].click));
    }
    out.push_back(std::move(r));
  }
  if (raw != nullptr) *raw = std::move(scores);
  return out;
}

struct LossBreakdown {
  double total = 0, click = 0, finish = 0, dwell = 0, disentangle = 0;
  std::size_t samples = 0;

  void add(const LossBreakdown& b) {
    total += b.total * static_cast<double>(b.samples);
    click += b.click * static_cast<double>(b.samples);
    finish += b.finish * static_cast<double>(b.samples);
    dwell += b.dwell * static_cast<double>(b.samples);
    disentangle += b.disentangle * static_cast<double>(b.samples);
    samples += b.samples;
  }
  LossBreakdown averaged() const {
    LossBreakdown m = *this;
    if (samples == 0) return m;
    const double n = static_cast<double>(samples);
    m.total /= n;
    m.click /= n;
    m.finish /= n;
    m.dwell /= n;
    m.disentangle /= n;
    return m;
  }
};

template <typename T>
LossBreakdown read_losses(const Tape<T>& tape, const LossVars& lv) {
  auto v = [&](Var x) { return static_cast<double>(tape.value(x)(0, 0)); };
  return {v(lv.total), v(lv.click), v(lv.finish), v(lv.dwell), v(lv.disentangle), lv.samples};
}

/// Mean loss over all samples without dropout.
template <typename T>
LossBreakdown dataset_loss(const FeedRecModel<T>& model, const FeedIndex& index,
                           std::span<const TrainingSample> samples, const TrainConfig& cfg) {
  LossBreakdown sum;
  ForwardContext<T> ctx;
  std::vector<const TrainingSample*> batch;
  for (std::size_t begin = 0; begin < samples.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
    batch.clear();
    const std::size_t end = std::min(samples.size(), begin + static_cast<std::size_t>(cfg.batch_size));
    for (std::size_t i = begin; i < end; ++i) batch.push_back(&samples[i]);
    Tape<T> tape;
    auto lv = batch_loss<T>(tape, model, index, batch, cfg.options, cfg.loss_switches(), ctx);
    if (lv) sum.add(read_losses(tape, *lv));
  }
  return sum.averaged();
}

struct EpochReport {
  int epoch = 0;
  LossBreakdown running;  // mean over the epoch's batches, with dropout
  std::optional<LossBreakdown> train_loss;
  std::optional<double> validation_auc;
  double seconds = 0;
};

/// Everything derived from a corpus and a config before optimization.
struct PreparedData {
  ChronologicalSplit split;
  FeedIndex index;
  SampleSet samples;
  EvalLabels labels;
  std::size_t samples_without_history = 0;
};

inline PreparedData prepare_data(const Corpus& corpus, const TrainConfig& cfg) {
  for (const auto& n : corpus.news) {
    for (int tok : n.title_tokens) {
      if (tok < 0 || tok >= cfg.model.vocab_size) {
        throw InputError("token " + std::to_string(tok) + " of " + n.news_id +
                         " outside the model vocabulary");
      }
    }
  }
  auto split = chronological_split(corpus.impressions, cfg.test_fraction, cfg.validation_fraction);
  FeedIndex index(corpus, cfg.history_options());
  SampleSet samples = build_samples(split.train, corpus.feedback, cfg.negatives,
                                    cfg.seed ^ 0x2545f4914f6cdd1dULL, cfg.dwell_t_max);
  std::size_t without = 0;
  for (const auto& s : samples.samples) {
    if (index.history(s.user_id, s.timestamp, cfg.model.max_seq).empty()) ++without;
  }
  return {std::move(split), std::move(index), std::move(samples), EvalLabels(corpus), without};
}

template <typename T>
struct TrainResult {
  FeedRecModel<T> model;
  std::vector<EpochReport> epochs;
  std::optional<LossBreakdown> initial_loss;
  std::size_t dropped_impressions = 0;
  std::size_t samples_without_history = 0;
  std::size_t train_samples = 0;
  std::string rng_state;
};

using EpochCallback = std::function<void(const EpochReport&)>;

inline std::string rng_state_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

template <typename T>
TrainResult<T> train(const Corpus& corpus, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  PreparedData data = prepare_data(corpus, cfg);
  if (data.samples.samples.size() <= data.samples_without_history) {
    throw ConfigError("empty training set: no clicked impression with a prior history");
  }
  TrainResult<T> result{FeedRecModel<T>(cfg.model, cfg.seed), {}, std::nullopt,
                        data.samples.dropped_impressions, data.samples_without_history,
                        data.samples.samples.size(), {}};
  FeedRecModel<T>& model = result.model;
  const auto& samples = data.samples.samples;
  if (cfg.track_train_loss) {
    result.initial_loss = dataset_loss(model, data.index, std::span<const TrainingSample>(samples), cfg);
  }

  Adam<T> adam(model.store, cfg.learning_rate);
  std::mt19937_64 rng(cfg.seed ^ 0xd1b54a32d192ed03ULL);
  ForwardContext<T> ctx{true, static_cast<T>(cfg.dropout), &rng};
  std::vector<std::size_t> order(samples.size());
  std::vector<const TrainingSample*> batch;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    EpochReport report;
    report.epoch = epoch;
    LossBreakdown running;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      batch.clear();
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&samples[order[i]]);
      Tape<T> tape;
      auto lv = batch_loss<T>(tape, model, data.index, batch, cfg.options, cfg.loss_switches(), ctx);
      if (!lv) continue;
      model.store.zero_grad();
      tape.backward(lv->total);
      adam.step();
      running.add(read_losses(tape, *lv));
    }
    report.running = running.averaged();
    if (!std::isfinite(report.running.total)) {
      throw DataError("training diverged: non-finite loss in epoch " + std::to_string(epoch));
    }
    if (cfg.track_train_loss) {
      report.train_loss = dataset_loss(model, data.index, std::span<const TrainingSample>(samples), cfg);
    }
    if (cfg.validate_each_epoch && !data.split.validation.empty()) {
      auto ranked = rank_impressions(model, data.index, data.labels,
                                     std::span<const ImpressionLog>(data.split.validation), cfg.options);
      report.validation_auc = click_metrics(ranked).auc;
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (on_epoch) on_epoch(report);
    result.epochs.push_back(std::move(report));
  }
  result.rng_state = rng_state_string(rng);
  return result;
}

struct EvaluationReport {
  ClickMetrics click;
  EngagementMetrics engagement;
  std::vector<RankedImpression> ranked;
  std::vector<CandidateScores> scores;
};

/// Click and engagement metrics on a list of impressions. Engagement base
/// rates are those of the same impressions.
template <typename T>
EvaluationReport evaluate_impressions(const FeedRecModel<T>& model, const FeedIndex& index,
                                      const EvalLabels& labels,
                                      std::span<const ImpressionLog> impressions,
                                      const ModelOptions& options) {
  EvaluationReport r;
  r.ranked = rank_impressions(model, index, labels, impressions, options, &r.scores);
  r.click = click_metrics(r.ranked);
  r.engagement = engagement_metrics(r.ranked, engagement_totals(r.ranked));
  return r;
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradcheckOptions {
  int dim = 8;
  int heads = 2;
  std::uint64_t seed = 0;
  double step = 1e-4;
  double tolerance = 1e-3;
  double denominator_floor = 1e-6;
  /// Entries checked per tensor: the largest-gradient ones plus random ones.
  int entries_per_tensor = 12;
  /// Applied to the analytic gradients before comparison (fault injection).
  std::function<void(ParamStore<double>&)> corrupt;
};

struct GradGroupResult {
  std::string group;
  double max_relative_error = 0;
  std::string worst_entry;
  std::size_t checked = 0;
  bool pass = true;
};

struct GradcheckReport {
  std::vector<GradGroupResult> groups;
  bool pass = true;
  double seconds = 0;
};

inline std::string parameter_group(const std::string& name) {
  static const std::vector<std::pair<std::string, std::string>> prefixes = {
      {"news.tokens", "token_table"},
      {"news.title.", "title_transformer"},
      {"news.pool.", "title_pooling"},
      {"news.position", "feedback_embeddings"},
      {"news.type", "feedback_embeddings"},
      {"news.dwell", "feedback_embeddings"},
      {"news.interval", "feedback_embeddings"},
      {"user.hetero.", "hetero_transformer"},
      {"user.homo.", "homo_transformers"},
      {"user.query.", "queries"},
      {"user.plain_query.", "plain_queries"},
      {"user.gate.", "gates"},
      {"user.agg.", "aggregation_scalars"},
      {"heads.finish", "finish_head"},
      {"heads.dwell", "dwell_head"},
  };
  for (const auto& [prefix, group] : prefixes) {
    if (name.rfind(prefix, 0) == 0) return group;
  }
  return "other";
}

/// Three users whose histories contain every feedback type, each followed
/// by one impression with two clicks.
inline Corpus gradcheck_corpus(std::uint64_t seed, int vocab, int n_news = 24) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> token(1, vocab - 1), len(3, 6), news(0, n_news - 1),
      dwell(2, 400);
  Corpus c;
  for (int i = 0; i < n_news; ++i) {
    NewsArticle a;
    a.news_id = "N" + std::to_string(i);
    for (int k = len(rng); k > 0; --k) a.title_tokens.push_back(token(rng));
    c.news.push_back(std::move(a));
  }
  for (int u = 0; u < 3; ++u) {
    const std::string user = "U" + std::to_string(u);
    const std::int64_t t0 = 1000 * (u + 1);
    for (int i = 0; i < 9 + u; ++i) {
      FeedbackRecord r;
      r.user_id = user;
      r.news_id = c.news[static_cast<std::size_t>(news(rng))].news_id;
      r.type = kAllFeedbackTypes[static_cast<std::size_t>(i) % kFeedbackTypeCount];
      r.event_time = t0 + 7 * i * i;
      if (carries_dwell(r.type)) r.dwell_time = dwell(rng);
      c.feedback.push_back(r);
    }
    ImpressionLog imp;
    imp.impression_id = "I" + std::to_string(u);
    imp.user_id = user;
    imp.timestamp = t0 + 900;
    std::vector<int> ids(static_cast<std::size_t>(n_news));
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    for (int k = 0; k < 6; ++k) imp.shown_news.push_back(c.news[static_cast<std::size_t>(ids[static_cast<std::size_t>(k)])].news_id);
    imp.clicked = {imp.shown_news[0], imp.shown_news[1]};
    for (int k = 0; k < 2; ++k) {
      const std::int64_t d = dwell(rng);
      c.feedback.push_back({user, imp.clicked[static_cast<std::size_t>(k)], FeedbackType::kClick, imp.timestamp, d});
      if (k == 0) c.feedback.push_back({user, imp.clicked[0], FeedbackType::kFinish, imp.timestamp, d});
    }
    c.impressions.push_back(std::move(imp));
  }
  sort_chronologically(c.feedback);
  return c;
}

inline GradcheckReport gradcheck(const GradcheckOptions& opt) {
  const auto start = std::chrono::steady_clock::now();
  constexpr int kVocab = 40;
  ModelConfig mc;
  mc.dim = opt.dim;
  mc.heads = opt.heads;
  mc.ffn_dim = opt.dim;
  mc.vocab_size = kVocab;
  mc.max_seq = 16;
  mc.title_len = 8;
  const Corpus corpus = gradcheck_corpus(opt.seed, kVocab);
  FeedIndex index(corpus, HistoryOptions{10.0, 1.0, opt.seed, {}});
  const SampleSet set = build_samples(corpus.impressions, corpus.feedback, 4, opt.seed);
  std::vector<const TrainingSample*> batch;
  for (const auto& s : set.samples) batch.push_back(&s);

  FeedRecModel<double> model(mc, opt.seed);
  // Move away from the near-linear regime of the default init so that every
  // nonlinearity and gate is exercised.
  std::mt19937_64 rng(opt.seed + 1);
  std::normal_distribution<double> jitter(0.0, 0.3);
  for (auto& p : model.store.all()) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] += jitter(rng);
  }

  std::map<std::string, GradGroupResult> groups;
  const LossSwitches losses;
  ForwardContext<double> ctx;

  // The plain queries are only reachable with strong-to-weak attention off.
  for (const bool plain : {false, true}) {
    ModelOptions options;
    options.disable_strong_to_weak = plain;
    auto loss_value = [&]() {
      Tape<double> tape;
      auto lv = batch_loss<double>(tape, model, index, batch, options, losses, ctx);
      return tape.value(lv->total)(0, 0);
    };
    {
      Tape<double> tape;
      auto lv = batch_loss<double>(tape, model, index, batch, options, losses, ctx);
      model.store.zero_grad();
      tape.backward(lv->total);
    }
    if (opt.corrupt) opt.corrupt(model.store);
    for (auto& p : model.store.all()) {
      const std::string group = parameter_group(p->name);
      if ((group == "plain_queries") != plain) continue;
      const Matrix<double> analytic = p->grad;
      const auto n = static_cast<Eigen::Index>(p->value.size());
      std::vector<Eigen::Index> entries(static_cast<std::size_t>(n));
      std::iota(entries.begin(), entries.end(), 0);
      if (n > opt.entries_per_tensor) {
        const auto half = static_cast<std::size_t>(opt.entries_per_tensor / 2);
        std::partial_sort(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(half), entries.end(),
                          [&](Eigen::Index a, Eigen::Index b) {
                            return std::abs(analytic.data()[a]) > std::abs(analytic.data()[b]);
                          });
        std::shuffle(entries.begin() + static_cast<std::ptrdiff_t>(half), entries.end(), rng);
        entries.resize(static_cast<std::size_t>(opt.entries_per_tensor));
      }
      GradGroupResult& g = groups[group];
      g.group = group;
      for (Eigen::Index e : entries) {
        double& x = p->value.data()[e];
        const double saved = x;
        x = saved + opt.step;
        const double up = loss_value();
        x = saved - opt.step;
        const double down = loss_value();
        x = saved;
        const double numeric = (up - down) / (2 * opt.step);
        const double a = analytic.data()[e];
        const double rel = std::abs(a - numeric) /
                           std::max({std::abs(a), std::abs(numeric), opt.denominator_floor});
        ++g.checked;
        if (rel > g.max_relative_error || g.worst_entry.empty()) {
          g.max_relative_error = std::max(g.max_relative_error, rel);
          if (rel >= g.max_relative_error) g.worst_entry = p->name + "[" + std::to_string(e) + "]";
        }
      }
    }
  }
  GradcheckReport report;
  for (auto& [_, g] : groups) {
    g.pass = g.max_relative_error < opt.tolerance;
    report.pass = report.pass && g.pass;
    report.groups.push_back(g);
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace feedrec
