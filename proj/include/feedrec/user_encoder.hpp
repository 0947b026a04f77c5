#pragma once

// User encoder: heterogeneous Transformer over the mixed feedback sequence,
// per-type homogeneous Transformers, strong-to-weak attention and gated
// aggregation into the user embedding u.
//
// Every tensor is batched over users: a user's feedback occupies one Segment
// of the packed input, and every per-user vector is one row of an S x d
// output. Empty feedback groups give zero rows.

#include <array>
#include <random>
#include <string>
#include <vector>

#include "feedrec/autodiff.hpp"
#include "feedrec/feedback.hpp"
#include "feedrec/model_config.hpp"
#include "feedrec/params.hpp"
#include "feedrec/transformer.hpp"

namespace feedrec {

/// Hidden rows regrouped by feedback type; rows of a group keep chronological
/// order within each user, and segs[type][user] points into rows[type].
struct GroupedSequences {
  std::array<Var, kFeedbackTypeCount> rows;
  std::array<Segments, kFeedbackTypeCount> segs;
};

struct AttentionResult {
  Var pooled;   // S x d
  Var weights;  // N x 1, zero on padding
};

template <typename T>
Var hetero_transform(Tape<T>& tape, const TransformerWeights<T>& weights, Var sequence,
                     const Segments& users, int heads, const ForwardContext<T>& ctx,
                     bool disabled = false) {
  for (const Segment& s : users) {
    if (s.valid == 0) throw InputError("user feedback sequence is empty");
  }
  if (disabled) return sequence;
  return transformer_layer(tape, weights, sequence, users, heads, ctx);
}

/// Partitions the valid rows of `hidden` by type. `row_types` has one entry
/// per row of `hidden`; entries of padding rows are ignored.
template <typename T>
GroupedSequences group_by_type(Tape<T>& tape, Var hidden, const Segments& users,
                               const std::vector<FeedbackType>& row_types) {
  if (row_types.size() != static_cast<std::size_t>(tape.value(hidden).rows())) {
    throw InputError("group_by_type: one type label per row required");
  }
  GroupedSequences g;
  std::array<std::vector<int>, kFeedbackTypeCount> picks;
  for (const Segment& s : users) {
    std::array<int, kFeedbackTypeCount> counts{};
    std::array<int, kFeedbackTypeCount> starts{};
    for (int t = 0; t < kFeedbackTypeCount; ++t) starts[t] = static_cast<int>(picks[t].size());
    for (int i = 0; i < s.valid; ++i) {
      const int t = index_of(row_types[s.offset + i]);
      picks[t].push_back(s.offset + i);
      ++counts[t];
    }
    for (int t = 0; t < kFeedbackTypeCount; ++t) g.segs[t].push_back({starts[t], counts[t], counts[t]});
  }
  for (int t = 0; t < kFeedbackTypeCount; ++t) g.rows[t] = tape.gather(hidden, std::move(picks[t]));
  return g;
}

template <typename T>
Var homo_transform(Tape<T>& tape, const TransformerWeights<T>& weights, Var group,
                   const Segments& segs, int heads, const ForwardContext<T>& ctx,
                   bool disabled = false) {
  if (disabled || tape.value(group).rows() == 0) return group;
  return transformer_layer(tape, weights, group, segs, heads, ctx);
}

/// Softmax(query . r_k) pooling within each segment; row_queries holds the
/// query of each row's segment.
template <typename T>
AttentionResult attend(Tape<T>& tape, Var rows, const Segments& segs, Var row_queries) {
  Var logits = tape.rowwise_dot(rows, row_queries);
  Var weights = tape.segment_softmax(logits, segs);
  return {tape.segment_sum(tape.mul_rows(weights, rows), segs), weights};
}

/// Repeats per-segment query rows (S x d) once per member row.
template <typename T>
Var expand_queries(Tape<T>& tape, Var per_segment, const Segments& segs) {
  return tape.gather(per_segment, segment_ids(segs));
}

template <typename T>
Var broadcast_param(Tape<T>& tape, Parameter<T>& row, std::size_t n) {
  return tape.gather(row, std::vector<int>(n, 0));
}

/// sigmoid(v . [a; b]) per row, then delta * a + (1 - delta) * b.
template <typename T>
std::pair<Var, Var> gate(Tape<T>& tape, Var a, Var b, Parameter<T>& v) {
  Var delta = tape.sigmoid(tape.matmul(tape.concat_cols(a, b), tape.param(v)));
  Var mixed = tape.add(tape.mul_rows(delta, a), tape.mul_rows(tape.affine(delta, T(-1), T(1)), b));
  return {mixed, delta};
}

struct UserVars {
  Var u;
  Var strong_pos, strong_neg, weak_pos, weak_neg;
  Var explicit_pos, explicit_neg;            // u^p_e, u^n_e
  Var implicit_pos, implicit_neg;            // u^p_i, u^n_i
  Var click_pos, skip_pos, click_neg, skip_neg;  // u^p_c, u^p_n, u^n_c, u^n_n
  Var delta_strong_pos, delta_strong_neg, delta_weak_pos, delta_weak_neg;
  Var hidden;
  GroupedSequences groups;                      // heterogeneous outputs by type
  std::array<Var, kFeedbackTypeCount> type_reprs;  // homogeneous outputs R^x
  std::vector<Var> attention_weights;
};

template <typename T>
struct UserEncoder {
  TransformerWeights<T> hetero;
  std::array<TransformerWeights<T>, kFeedbackTypeCount> homo;
  Parameter<T>* query_share = nullptr;
  Parameter<T>* query_dislike = nullptr;
  // Independent queries used only when strong-to-weak attention is ablated.
  Parameter<T>* query_finish = nullptr;
  Parameter<T>* query_quick_close = nullptr;
  Parameter<T>* query_click_pos = nullptr;
  Parameter<T>* query_skip_pos = nullptr;
  Parameter<T>* query_click_neg = nullptr;
  Parameter<T>* query_skip_neg = nullptr;
  Parameter<T>* gate_strong_pos = nullptr;
  Parameter<T>* gate_strong_neg = nullptr;
  Parameter<T>* gate_weak_pos = nullptr;
  Parameter<T>* gate_weak_neg = nullptr;
  Parameter<T>* weight_strong_pos = nullptr;
  Parameter<T>* weight_weak_pos = nullptr;
  Parameter<T>* weight_strong_neg = nullptr;
  Parameter<T>* weight_weak_neg = nullptr;
  int heads = 1;

  static UserEncoder create(ParamStore<T>& store, const ModelConfig& cfg) {
    UserEncoder e;
    const int d = cfg.dim;
    e.hetero = TransformerWeights<T>::create(store, "user.hetero", d, cfg.ffn_dim);
    for (FeedbackType t : kAllFeedbackTypes) {
      e.homo[index_of(t)] = TransformerWeights<T>::create(
          store, "user.homo." + std::string(to_string(t)), d, cfg.ffn_dim);
    }
    e.query_share = &store.add("user.query.share", 1, d);
    e.query_dislike = &store.add("user.query.dislike", 1, d);
    e.query_finish = &store.add("user.plain_query.finish", 1, d);
    e.query_quick_close = &store.add("user.plain_query.quick_close", 1, d);
    e.query_click_pos = &store.add("user.plain_query.click_pos", 1, d);
    e.query_skip_pos = &store.add("user.plain_query.skip_pos", 1, d);
    e.query_click_neg = &store.add("user.plain_query.click_neg", 1, d);
    e.query_skip_neg = &store.add("user.plain_query.skip_neg", 1, d);
    e.gate_strong_pos = &store.add("user.gate.strong_pos", 2 * d, 1);
    e.gate_strong_neg = &store.add("user.gate.strong_neg", 2 * d, 1);
    e.gate_weak_pos = &store.add("user.gate.weak_pos", 2 * d, 1);
    e.gate_weak_neg = &store.add("user.gate.weak_neg", 2 * d, 1);
    e.weight_strong_pos = &store.add("user.agg.strong_pos", 1, 1);
    e.weight_weak_pos = &store.add("user.agg.weak_pos", 1, 1);
    e.weight_strong_neg = &store.add("user.agg.strong_neg", 1, 1);
    e.weight_weak_neg = &store.add("user.agg.weak_neg", 1, 1);
    e.heads = cfg.heads;
    return e;
  }

  /// Gates start at zero (delta = 0.5); the aggregation weights start at
  /// (1, 1, -1, -1) so negative interests initially subtract.
  void init(std::mt19937_64& rng, double sd) {
    hetero.init(rng, sd);
    for (auto& h : homo) h.init(rng, sd);
    for (Parameter<T>* q : {query_share, query_dislike, query_finish, query_quick_close,
                            query_click_pos, query_skip_pos, query_click_neg, query_skip_neg}) {
      init_normal(*q, sd, rng);
    }
    init_constant(*weight_strong_pos, 1.0);
    init_constant(*weight_weak_pos, 1.0);
    init_constant(*weight_strong_neg, -1.0);
    // Zero, not -1: with near-uniform attention at init w^n equals w^p, and
    // the two click/skip terms would cancel out of u.
    init_constant(*weight_weak_neg, 0.0);
  }

  /// Full user modeling pass. `sequence` is the packed feedback embedding
  /// matrix E, `users` one segment per user and `row_types` the type of each
  /// row of E.
  UserVars forward(Tape<T>& tape, Var sequence, const Segments& users,
                   const std::vector<FeedbackType>& row_types, const ModelOptions& options,
                   const ForwardContext<T>& ctx) const {
    UserVars out;
    out.hidden = hetero_transform(tape, hetero, sequence, users, heads, ctx, options.disable_hetero);
    out.groups = group_by_type(tape, out.hidden, users, row_types);
    for (FeedbackType t : kAllFeedbackTypes) {
      const int i = index_of(t);
      out.type_reprs[i] = homo_transform(tape, homo[i], out.groups.rows[i], out.groups.segs[i],
                                         heads, ctx, options.disable_homo);
    }
    auto rows_of = [&](FeedbackType t) { return out.type_reprs[index_of(t)]; };
    auto segs_of = [&](FeedbackType t) -> const Segments& { return out.groups.segs[index_of(t)]; };
    auto pooled = [&](FeedbackType t, Var per_user_query) {
      AttentionResult r = attend(tape, rows_of(t), segs_of(t),
                                 expand_queries(tape, per_user_query, segs_of(t)));
      out.attention_weights.push_back(r.weights);
      return r.pooled;
    };
    auto learned = [&](FeedbackType t, Parameter<T>& q) {
      AttentionResult r = attend(
          tape, rows_of(t), segs_of(t),
          broadcast_param(tape, q, static_cast<std::size_t>(tape.value(rows_of(t)).rows())));
      out.attention_weights.push_back(r.weights);
      return r.pooled;
    };

    out.explicit_pos = learned(FeedbackType::kShare, *query_share);
    out.explicit_neg = learned(FeedbackType::kDislike, *query_dislike);
    if (options.disable_strong_to_weak) {
      out.implicit_pos = learned(FeedbackType::kFinish, *query_finish);
      out.implicit_neg = learned(FeedbackType::kQuickClose, *query_quick_close);
      out.click_pos = learned(FeedbackType::kClick, *query_click_pos);
      out.skip_pos = learned(FeedbackType::kSkip, *query_skip_pos);
      out.click_neg = learned(FeedbackType::kClick, *query_click_neg);
      out.skip_neg = learned(FeedbackType::kSkip, *query_skip_neg);
    } else {
      out.implicit_pos = pooled(FeedbackType::kFinish, out.explicit_pos);
      out.implicit_neg = pooled(FeedbackType::kQuickClose, out.explicit_neg);
      Var pos_query = tape.add(out.explicit_pos, out.implicit_pos);
      Var neg_query = tape.add(out.explicit_neg, out.implicit_neg);
      out.click_pos = pooled(FeedbackType::kClick, pos_query);
      out.skip_pos = pooled(FeedbackType::kSkip, pos_query);
      out.click_neg = pooled(FeedbackType::kClick, neg_query);
      out.skip_neg = pooled(FeedbackType::kSkip, neg_query);
    }
    aggregate(tape, out);
    return out;
  }

  /// Gated strong/weak mixing and the final four-way weighted sum.
  void aggregate(Tape<T>& tape, UserVars& out) const {
    std::tie(out.strong_pos, out.delta_strong_pos) =
        gate(tape, out.explicit_pos, out.implicit_pos, *gate_strong_pos);
    std::tie(out.strong_neg, out.delta_strong_neg) =
        gate(tape, out.explicit_neg, out.implicit_neg, *gate_strong_neg);
    std::tie(out.weak_pos, out.delta_weak_pos) =
        gate(tape, out.click_pos, out.skip_pos, *gate_weak_pos);
    std::tie(out.weak_neg, out.delta_weak_neg) =
        gate(tape, out.click_neg, out.skip_neg, *gate_weak_neg);
    Var u = tape.scale_by(tape.param(*weight_strong_pos), out.strong_pos);
    u = tape.add(u, tape.scale_by(tape.param(*weight_weak_pos), out.weak_pos));
    u = tape.add(u, tape.scale_by(tape.param(*weight_strong_neg), out.strong_neg));
    u = tape.add(u, tape.scale_by(tape.param(*weight_weak_neg), out.weak_neg));
    out.u = u;
  }
};

}  // namespace feedrec
