#pragma once

// One pre-norm Transformer layer over packed segments:
//   h = x + Wo * MHSA(LN1(x))
//   y = h + W2 * GELU(W1 * LN2(h) + b1) + b2

#include <random>
#include <string>

#include "feedrec/autodiff.hpp"
#include "feedrec/params.hpp"

namespace feedrec {

/// Per-call switches shared by all forward passes.
template <typename T>
struct ForwardContext {
  bool training = false;
  T dropout = T(0);
  std::mt19937_64* rng = nullptr;

  Var maybe_dropout(Tape<T>& tape, Var x) const {
    if (!training || dropout <= T(0) || rng == nullptr) return x;
    return tape.dropout(x, dropout, *rng);
  }
};

template <typename T>
struct TransformerWeights {
  Parameter<T>* ln1_gain = nullptr;
  Parameter<T>* ln1_bias = nullptr;
  Parameter<T>* wq = nullptr;
  Parameter<T>* bq = nullptr;
  Parameter<T>* wk = nullptr;
  Parameter<T>* bk = nullptr;
  Parameter<T>* wv = nullptr;
  Parameter<T>* bv = nullptr;
  Parameter<T>* wo = nullptr;
  Parameter<T>* bo = nullptr;
  Parameter<T>* ln2_gain = nullptr;
  Parameter<T>* ln2_bias = nullptr;
  Parameter<T>* w1 = nullptr;
  Parameter<T>* b1 = nullptr;
  Parameter<T>* w2 = nullptr;
  Parameter<T>* b2 = nullptr;

  static TransformerWeights create(ParamStore<T>& store, const std::string& prefix, int dim,
                                   int ffn_dim) {
    TransformerWeights w;
    w.ln1_gain = &store.add(prefix + ".ln1.gain", 1, dim);
    w.ln1_bias = &store.add(prefix + ".ln1.bias", 1, dim);
    w.wq = &store.add(prefix + ".attn.wq", dim, dim);
    w.bq = &store.add(prefix + ".attn.bq", 1, dim);
    w.wk = &store.add(prefix + ".attn.wk", dim, dim);
    w.bk = &store.add(prefix + ".attn.bk", 1, dim);
    w.wv = &store.add(prefix + ".attn.wv", dim, dim);
    w.bv = &store.add(prefix + ".attn.bv", 1, dim);
    w.wo = &store.add(prefix + ".attn.wo", dim, dim);
    w.bo = &store.add(prefix + ".attn.bo", 1, dim);
    w.ln2_gain = &store.add(prefix + ".ln2.gain", 1, dim);
    w.ln2_bias = &store.add(prefix + ".ln2.bias", 1, dim);
    w.w1 = &store.add(prefix + ".ffn.w1", dim, ffn_dim);
    w.b1 = &store.add(prefix + ".ffn.b1", 1, ffn_dim);
    w.w2 = &store.add(prefix + ".ffn.w2", ffn_dim, dim);
    w.b2 = &store.add(prefix + ".ffn.b2", 1, dim);
    return w;
  }

  void init(std::mt19937_64& rng, double sd) {
    init_constant(*ln1_gain, 1.0);
    init_constant(*ln2_gain, 1.0);
    for (Parameter<T>* m : {wq, wk, wv, wo, w1, w2}) init_normal(*m, sd, rng);
  }
};

template <typename T>
Var linear(Tape<T>& tape, Var x, Parameter<T>& w, Parameter<T>& b) {
  return tape.add_row(tape.matmul(x, tape.param(w)), tape.param(b));
}

/// Position-wise feed-forward sub-block with its residual: h + FFN(LN2(h)).
template <typename T>
Var feed_forward_block(Tape<T>& tape, const TransformerWeights<T>& w, Var h,
                       const ForwardContext<T>& ctx) {
  Var n = tape.layer_norm(h, tape.param(*w.ln2_gain), tape.param(*w.ln2_bias));
  Var f = linear(tape, tape.gelu(linear(tape, n, *w.w1, *w.b1)), *w.w2, *w.b2);
  return tape.add(h, ctx.maybe_dropout(tape, f));
}

template <typename T>
Var transformer_layer(Tape<T>& tape, const TransformerWeights<T>& w, Var x, const Segments& segs,
                      int heads, const ForwardContext<T>& ctx) {
  Var n = tape.layer_norm(x, tape.param(*w.ln1_gain), tape.param(*w.ln1_bias));
  Var q = linear(tape, n, *w.wq, *w.bq);
  Var k = linear(tape, n, *w.wk, *w.bk);
  Var v = linear(tape, n, *w.wv, *w.bv);
  Var a = tape.self_attention(q, k, v, segs, heads);
  Var o = linear(tape, a, *w.wo, *w.bo);
  Var h = tape.add(x, ctx.maybe_dropout(tape, o));
  return feed_forward_block(tape, w, h, ctx);
}

}  // namespace feedrec
