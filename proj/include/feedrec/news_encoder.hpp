#pragma once

// News encoder: a title Transformer with additive-attention pooling produces
// the text embedding; position, feedback-type, dwell and interval embeddings
// are added on top for history records.

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "feedrec/autodiff.hpp"
#include "feedrec/feedback.hpp"
#include "feedrec/model_config.hpp"
#include "feedrec/params.hpp"
#include "feedrec/transformer.hpp"

namespace feedrec {

enum class EncodeMode { kHistory, kCandidate };

/// Everything the encoder needs about one feedback besides its title.
struct FeedbackSlot {
  int title_row = 0;
  FeedbackType type = FeedbackType::kClick;
  int position = 0;
  int dwell_bucket = 0;
  int interval_bucket = 0;
};

/// Buckets are computed with quantize_time; the interval bucket is 0 for the
/// first record of a sequence.
inline FeedbackSlot make_slot(const FeedbackRecord& record, int title_row, int position,
                              std::optional<std::int64_t> prev_event_time, int max_seq) {
  if (position < 0 || position >= max_seq) {
    throw InputError("position " + std::to_string(position) + " outside [0, " +
                     std::to_string(max_seq) + ")");
  }
  FeedbackSlot slot;
  slot.title_row = title_row;
  slot.type = record.type;
  slot.position = position;
  slot.dwell_bucket =
      record.dwell_time ? quantize_time(static_cast<double>(*record.dwell_time)) : 0;
  slot.interval_bucket =
      prev_event_time
          ? quantize_time(static_cast<double>(std::max<std::int64_t>(0, record.event_time - *prev_event_time)))
          : 0;
  return slot;
}

template <typename T>
struct NewsEncoder {
  Parameter<T>* tokens = nullptr;
  TransformerWeights<T> title;
  Parameter<T>* pool_w = nullptr;
  Parameter<T>* pool_b = nullptr;
  Parameter<T>* pool_query = nullptr;
  Parameter<T>* position = nullptr;
  Parameter<T>* type = nullptr;
  Parameter<T>* dwell = nullptr;
  Parameter<T>* interval = nullptr;
  int heads = 1;
  int title_len = 30;
  int max_seq = 50;

  static NewsEncoder create(ParamStore<T>& store, const ModelConfig& cfg) {
    NewsEncoder e;
    e.tokens = &store.add("news.tokens", cfg.vocab_size, cfg.dim);
    e.title = TransformerWeights<T>::create(store, "news.title", cfg.dim, cfg.ffn_dim);
    e.pool_w = &store.add("news.pool.w", cfg.dim, cfg.dim);
    e.pool_b = &store.add("news.pool.b", 1, cfg.dim);
    e.pool_query = &store.add("news.pool.query", 1, cfg.dim);
    e.position = &store.add("news.position", cfg.max_seq, cfg.dim);
    e.type = &store.add("news.type", kFeedbackTypeCount, cfg.dim);
    e.dwell = &store.add("news.dwell", kBucketCap + 1, cfg.dim);
    e.interval = &store.add("news.interval", kBucketCap + 1, cfg.dim);
    e.heads = cfg.heads;
    e.title_len = cfg.title_len;
    e.max_seq = cfg.max_seq;
    return e;
  }

  void init(std::mt19937_64& rng, double sd) {
    title.init(rng, sd);
    for (Parameter<T>* p : {tokens, pool_w, pool_query, position, type, dwell, interval}) {
      init_normal(*p, sd, rng);
    }
  }

  /// Text embeddings for a batch of titles, one output row per title. Titles
  /// longer than title_len are truncated. With pad_to > 0 every title is
  /// padded to that length with masked rows.
  Var encode_titles(Tape<T>& tape, const std::vector<std::vector<int>>& titles,
                    const ForwardContext<T>& ctx, int pad_to = 0) const {
    std::vector<int> token_rows;
    Segments segs;
    for (const auto& t : titles) {
      if (t.empty()) throw InputError("cannot encode an empty title");
      const int valid = std::min<int>(static_cast<int>(t.size()), title_len);
      const int length = std::max(valid, pad_to);
      segs.push_back({static_cast<int>(token_rows.size()), length, valid});
      for (int i = 0; i < length; ++i) token_rows.push_back(i < valid ? t[i] : 0);
    }
    Var x = ctx.maybe_dropout(tape, tape.gather(*tokens, std::move(token_rows)));
    Var h = transformer_layer(tape, title, x, segs, heads, ctx);
    // Additive attention: score_k = q . tanh(W h_k + b).
    Var keys = tape.tanh(linear(tape, h, *pool_w, *pool_b));
    std::vector<int> zeros(static_cast<std::size_t>(tape.value(h).rows()), 0);
    Var logits = tape.rowwise_dot(keys, tape.gather(*pool_query, std::move(zeros)));
    Var weights = tape.segment_softmax(logits, segs);
    return tape.segment_sum(tape.mul_rows(weights, h), segs);
  }

  /// Sums the per-feedback embeddings. Candidate mode keeps only text and
  /// position: type, dwell and interval are undefined before a click.
  Var encode_feedbacks(Tape<T>& tape, Var titles, const std::vector<FeedbackSlot>& slots,
                       EncodeMode mode, const ModelOptions& options,
                       const ForwardContext<T>& ctx) const {
    std::vector<int> title_rows, positions, types, dwells, intervals;
    for (const FeedbackSlot& s : slots) {
      if (s.position < 0 || s.position >= max_seq) {
        throw InputError("feedback position " + std::to_string(s.position) + " out of range");
      }
      title_rows.push_back(s.title_row);
      positions.push_back(s.position);
      types.push_back(index_of(s.type));
      dwells.push_back(std::clamp(s.dwell_bucket, 0, kBucketCap));
      intervals.push_back(std::clamp(s.interval_bucket, 0, kBucketCap));
    }
    Var e = tape.gather(titles, std::move(title_rows));
    if (!options.disable_position) e = tape.add(e, tape.gather(*position, std::move(positions)));
    if (mode == EncodeMode::kHistory) {
      if (!options.disable_type) e = tape.add(e, tape.gather(*type, std::move(types)));
      if (!options.disable_dwell) e = tape.add(e, tape.gather(*dwell, std::move(dwells)));
      if (!options.disable_interval) {
        e = tape.add(e, tape.gather(*interval, std::move(intervals)));
      }
    }
    return ctx.maybe_dropout(tape, e);
  }
};

}  // namespace feedrec
