#pragma once

// The full recommender: news encoder + user encoder + heads, plus batched
// loss assembly and scoring on top of a FeedIndex.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "feedrec/autodiff.hpp"
#include "feedrec/dataset.hpp"
#include "feedrec/heads_losses.hpp"
#include "feedrec/model_config.hpp"
#include "feedrec/news_encoder.hpp"
#include "feedrec/params.hpp"
#include "feedrec/user_encoder.hpp"

namespace feedrec {

inline constexpr double kInitStddev = 0.02;

template <typename T>
class FeedRecModel {
 public:
  FeedRecModel(const ModelConfig& cfg, std::uint64_t seed) : config_(cfg) {
    cfg.validate();
    news = NewsEncoder<T>::create(store, cfg);
    user = UserEncoder<T>::create(store, cfg);
    heads = Heads<T>::create(store, cfg.dim);
    std::mt19937_64 rng(seed);
    news.init(rng, kInitStddev);
    user.init(rng, kInitStddev);
    heads.init(rng, kInitStddev);
  }

  FeedRecModel(const FeedRecModel&) = delete;
  FeedRecModel& operator=(const FeedRecModel&) = delete;
  FeedRecModel(FeedRecModel&&) noexcept = default;
  FeedRecModel& operator=(FeedRecModel&&) noexcept = default;

  const ModelConfig& config() const { return config_; }

  ParamStore<T> store;
  NewsEncoder<T> news;
  UserEncoder<T> user;
  Heads<T> heads;

 private:
  ModelConfig config_;
};

/// Packed user-encoder input for a set of histories. `title_row` maps a
/// news id to a row of the title-embedding tensor that will be used.
struct UserBatch {
  std::vector<FeedbackSlot> slots;
  std::vector<FeedbackType> types;
  Segments users;
};

template <typename TitleRow>
UserBatch pack_histories(std::span<const std::span<const FeedbackRecord>> histories,
                         TitleRow&& title_row, int max_seq) {
  UserBatch b;
  for (const auto& h : histories) {
    if (h.empty()) throw InputError("pack_histories: empty history");
    if (static_cast<int>(h.size()) > max_seq) throw InputError("history longer than max_seq");
    b.users.push_back({static_cast<int>(b.slots.size()), static_cast<int>(h.size()),
                       static_cast<int>(h.size())});
    std::optional<std::int64_t> prev;
    for (std::size_t i = 0; i < h.size(); ++i) {
      b.slots.push_back(make_slot(h[i], title_row(h[i].news_id), static_cast<int>(i), prev, max_seq));
      b.types.push_back(h[i].type);
      prev = h[i].event_time;
    }
  }
  return b;
}

template <typename T>
UserVars encode_users(Tape<T>& tape, const FeedRecModel<T>& model, Var titles,
                      const UserBatch& batch, const ModelOptions& options,
                      const ForwardContext<T>& ctx) {
  Var e = model.news.encode_feedbacks(tape, titles, batch.slots, EncodeMode::kHistory, options, ctx);
  return model.user.forward(tape, e, batch.users, batch.types, options, ctx);
}

/// Candidate-mode embeddings for the given title rows.
template <typename T>
Var encode_candidates(Tape<T>& tape, const FeedRecModel<T>& model, Var titles,
                      const std::vector<int>& title_rows, const ModelOptions& options,
                      const ForwardContext<T>& ctx) {
  std::vector<FeedbackSlot> slots;
  slots.reserve(title_rows.size());
  for (int r : title_rows) slots.push_back({r, FeedbackType::kClick, 0, 0, 0});
  return model.news.encode_feedbacks(tape, titles, slots, EncodeMode::kCandidate, options, ctx);
}

/// Which losses contribute gradient; all four are always computed.
struct LossSwitches {
  LossWeights weights;
  bool finish = true;
  bool dwell = true;
  bool disentangle = true;
};

struct LossVars {
  Var total, click, finish, dwell, disentangle;  // 1 x 1 batch means
  std::size_t samples = 0;
};

/// Builds the multi-task loss for a batch of samples on `tape`. Samples whose
/// user has no history before the impression are skipped; returns nullopt if
/// none remain.
template <typename T>
std::optional<LossVars> batch_loss(Tape<T>& tape, const FeedRecModel<T>& model,
                                   const FeedIndex& index,
                                   std::span<const TrainingSample* const> samples,
                                   const ModelOptions& options, const LossSwitches& losses,
                                   const ForwardContext<T>& ctx) {
  const int max_seq = model.config().max_seq;
  std::unordered_map<int, int> local_title;  // global news row -> batch row
  std::vector<std::vector<int>> titles;
  auto title_row = [&](const std::string& news_id) {
    const int g = index.news_row(news_id);
    auto [it, inserted] = local_title.emplace(g, static_cast<int>(titles.size()));
    if (inserted) titles.push_back(index.titles()[static_cast<std::size_t>(g)]);
    return it->second;
  };

  // One user row per (user, impression time).
  std::map<std::pair<std::string, std::int64_t>, int> user_of;
  std::vector<std::span<const FeedbackRecord>> histories;
  std::vector<int> sample_user;
  std::vector<const TrainingSample*> kept;
  for (const TrainingSample* s : samples) {
    auto key = std::make_pair(s->user_id, s->timestamp);
    auto it = user_of.find(key);
    if (it == user_of.end()) {
      auto h = index.history(s->user_id, s->timestamp, max_seq);
      if (h.empty()) continue;
      it = user_of.emplace(key, static_cast<int>(histories.size())).first;
      histories.push_back(h);
    }
    sample_user.push_back(it->second);
    kept.push_back(s);
  }
  if (kept.empty()) return std::nullopt;

  UserBatch ub = pack_histories(std::span<const std::span<const FeedbackRecord>>(histories),
                                title_row, max_seq);
  const int k = static_cast<int>(kept.front()->negatives.size());
  std::vector<int> cand_rows;
  std::vector<int> cand_user;
  std::vector<int> pos_rows;
  Matrix<T> finish_labels(static_cast<Eigen::Index>(kept.size()), 1);
  Matrix<T> dwell_labels(static_cast<Eigen::Index>(kept.size()), 1);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const TrainingSample& s = *kept[i];
    if (static_cast<int>(s.negatives.size()) != k) throw InputError("ragged negative counts");
    pos_rows.push_back(static_cast<int>(cand_rows.size()));
    cand_rows.push_back(title_row(s.positive));
    for (const auto& n : s.negatives) cand_rows.push_back(title_row(n));
    for (int j = 0; j <= k; ++j) cand_user.push_back(sample_user[i]);
    finish_labels(static_cast<Eigen::Index>(i), 0) = static_cast<T>(s.finish_label);
    dwell_labels(static_cast<Eigen::Index>(i), 0) = static_cast<T>(s.dwell_label);
  }

  Var title_emb = model.news.encode_titles(tape, titles, ctx);
  UserVars uv = encode_users(tape, model, title_emb, ub, options, ctx);
  Var cands = encode_candidates(tape, model, title_emb, cand_rows, options, ctx);

  const int n = static_cast<int>(kept.size());
  Var y = model.heads.click(tape, tape.gather(uv.u, cand_user), cands);
  LossVars out;
  out.samples = kept.size();
  out.click = tape.mean(tape.softmax_xent_first(tape.reshape(y, n, k + 1)));

  Var users = tape.gather(uv.u, sample_user);
  Var positives = tape.gather(cands, pos_rows);
  out.finish = tape.mean(
      tape.bce_with_logits(model.heads.finish_logit(tape, users, positives), finish_labels));
  Var t_hat = model.heads.dwell_pred(tape, users, positives);
  out.dwell = tape.mean(tape.abs(tape.sub(t_hat, tape.constant(dwell_labels))));
  out.disentangle = tape.mean(
      tape.cosine_rows(tape.gather(uv.weak_pos, sample_user), tape.gather(uv.weak_neg, sample_user)));

  const LossWeights& w = losses.weights;
  Var total = out.click;
  total = tape.add(total, tape.affine(out.finish, static_cast<T>(losses.finish ? w.alpha : 0.0)));
  total = tape.add(total, tape.affine(out.dwell, static_cast<T>(losses.dwell ? w.beta : 0.0)));
  total = tape.add(total,
                   tape.affine(out.disentangle, static_cast<T>(losses.disentangle ? w.gamma : 0.0)));
  out.total = total;
  return out;
}

/// Text embeddings of the whole catalog, computed in chunks without dropout.
template <typename T>
Matrix<T> encode_catalog(const FeedRecModel<T>& model, const FeedIndex& index,
                         std::size_t chunk = 512) {
  const auto& titles = index.titles();
  Matrix<T> out(static_cast<Eigen::Index>(titles.size()), model.config().dim);
  ForwardContext<T> ctx;
  for (std::size_t begin = 0; begin < titles.size(); begin += chunk) {
    const std::size_t end = std::min(titles.size(), begin + chunk);
    std::vector<std::vector<int>> part(titles.begin() + static_cast<std::ptrdiff_t>(begin),
                                       titles.begin() + static_cast<std::ptrdiff_t>(end));
    Tape<T> tape;
    Var e = model.news.encode_titles(tape, part, ctx);
    out.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)) =
        tape.value(e);
  }
  return out;
}

/// Scores of every candidate of one impression.
struct CandidateScores {
  std::vector<std::string> news;
  std::vector<Scores> scores;
};

struct ScoreRequest {
  std::string user_id;
  std::int64_t before = 0;
  std::vector<std::string> candidates;
};

/// Inference for a list of requests. Users without history get u = 0, which
/// scores every candidate 0.
template <typename T>
std::vector<CandidateScores> score_requests(const FeedRecModel<T>& model, const FeedIndex& index,
                                            const Matrix<T>& catalog,
                                            std::span<const ScoreRequest> requests,
                                            const ModelOptions& options,
                                            std::size_t batch_users = 64) {
  std::vector<CandidateScores> out(requests.size());
  const int max_seq = model.config().max_seq;
  ForwardContext<T> ctx;
  for (std::size_t begin = 0; begin < requests.size(); begin += batch_users) {
    const std::size_t end = std::min(requests.size(), begin + batch_users);
    Tape<T> tape;
    Var titles = tape.constant(catalog);
    std::vector<std::span<const FeedbackRecord>> histories;
    std::vector<std::size_t> with_history;
    for (std::size_t r = begin; r < end; ++r) {
      out[r].news = requests[r].candidates;
      out[r].scores.assign(requests[r].candidates.size(), Scores{});
      auto h = index.history(requests[r].user_id, requests[r].before, max_seq);
      if (h.empty()) continue;
      histories.push_back(h);
      with_history.push_back(r);
    }
    if (histories.empty()) continue;
    UserBatch ub = pack_histories(std::span<const std::span<const FeedbackRecord>>(histories),
                                  [&](const std::string& id) { return index.news_row(id); },
                                  max_seq);
    UserVars uv = encode_users(tape, model, titles, ub, options, ctx);
    std::vector<int> cand_rows, cand_user;
    for (std::size_t u = 0; u < with_history.size(); ++u) {
      for (const auto& id : requests[with_history[u]].candidates) {
        cand_rows.push_back(index.news_row(id));
        cand_user.push_back(static_cast<int>(u));
      }
    }
    if (cand_rows.empty()) continue;
    Var cands = encode_candidates(tape, model, titles, cand_rows, options, ctx);
    Var users = tape.gather(uv.u, cand_user);
    const auto& y = tape.value(model.heads.click(tape, users, cands));
    const auto& z = tape.value(model.heads.finish_logit(tape, users, cands));
    const auto& t = tape.value(model.heads.dwell_pred(tape, users, cands));
    Eigen::Index row = 0;
    for (std::size_t u = 0; u < with_history.size(); ++u) {
      auto& dst = out[with_history[u]].scores;
      for (auto& s : dst) {
        s.click = static_cast<double>(y(row, 0));
        s.finish = static_cast<double>(z(row, 0));
        s.dwell = static_cast<double>(t(row, 0));
        ++row;
      }
    }
  }
  return out;
}

}  // namespace feedrec
