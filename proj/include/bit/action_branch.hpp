// Transformer action branch over M tokens plus the single-head
// cross-attention that couples tokens and frames.
//
// Nothing here ever forms a frames x frames product: self-attention runs on
// tokens only (M x M scores) and cross-attention produces M x T / T x M maps.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "bit/layers.hpp"

namespace bit {

struct TransformerConfig {
  int heads = 4;
  int input_layers = 2;
  int update_layers = 1;
  int ff_mult = 4;
  double dropout = 0.1;
};

template <typename S>
struct TokenState {
  ad::Var<S> refined;   // M x H
  ad::Var<S> probs;     // M x (A + 1), rows sum to one
  ad::Var<S> combined;  // M x (H + A + 1)
};

template <typename S>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  // canonical_keys sorts key/value rows by content before attending, so the
  // result does not depend on the order in which keys arrive, bit for bit.
  MultiHeadAttention(ad::ParameterStore<S>& store, const std::string& name, Index width, int heads, Rng& rng,
                     bool canonical_keys = false)
      : width_(width), heads_(heads), canonical_(canonical_keys), name_(name) {
    if (heads < 1 || width % heads != 0) throw std::invalid_argument(name + ": heads must divide the width");
    q_ = Linear<S>(store, name + ".q", width, width, rng);
    k_ = Linear<S>(store, name + ".k", width, width, rng);
    v_ = Linear<S>(store, name + ".v", width, width, rng);
    o_ = Linear<S>(store, name + ".o", width, width, rng);
  }

  ad::Var<S> operator()(ad::Tape<S>& t, ad::Var<S> query, ad::Var<S> key, ad::Var<S> value) const {
    typename ad::Tape<S>::Scope scope(t, name_);
    ad::Var<S> q = q_(t, query), k = k_(t, key), v = v_(t, value);
    if (canonical_) {
      const std::vector<Index> order = content_order(k.value(), v.value());
      k = ad::gather_rows(k, order);
      v = ad::gather_rows(v, order);
    }
    const Index d = width_ / heads_;
    const S inv = S(1) / std::sqrt(static_cast<S>(d));
    std::vector<ad::Var<S>> outs;
    for (int h = 0; h < heads_; ++h) {
      ad::Var<S> qh = ad::slice_cols(q, h * d, d);
      ad::Var<S> kh = ad::slice_cols(k, h * d, d);
      ad::Var<S> vh = ad::slice_cols(v, h * d, d);
      ad::Var<S> attn = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv));
      outs.push_back(ad::matmul(attn, vh));
    }
    return o_(t, heads_ == 1 ? outs.front() : ad::concat_cols(outs));
  }

  static std::size_t count(Index width) { return 4 * Linear<S>::count(width, width); }

 private:
  // Lexicographic order of rows of [a | b].
  static std::vector<Index> content_order(const Matrix<S>& a, const Matrix<S>& b) {
    std::vector<Index> order(static_cast<std::size_t>(a.rows()));
    std::iota(order.begin(), order.end(), Index{0});
    const auto less = [&](Index i, Index j) {
      for (Index c = 0; c < a.cols(); ++c) {
        if (a(i, c) != a(j, c)) return a(i, c) < a(j, c);
      }
      for (Index c = 0; c < b.cols(); ++c) {
        if (b(i, c) != b(j, c)) return b(i, c) < b(j, c);
      }
      return false;
    };
    std::stable_sort(order.begin(), order.end(), less);
    return order;
  }

  Index width_ = 0;
  int heads_ = 1;
  bool canonical_ = false;
  std::string name_;
  Linear<S> q_, k_, v_, o_;
};

template <typename S>
struct CrossAttentionResult {
  ad::Var<S> updated;    // queries + attended values, Q x H
  ad::Var<S> attention;  // Q x K, rows sum to one
};

// One attention head, so the returned map is directly the query/key alignment.
template <typename S>
class SingleHeadCrossAttention {
 public:
  SingleHeadCrossAttention() = default;
  SingleHeadCrossAttention(ad::ParameterStore<S>& store, const std::string& name, Index width, Rng& rng)
      : width_(width), name_(name) {
    query_norm_ = LayerNorm<S>(store, name + ".query_norm", width);
    kv_norm_ = LayerNorm<S>(store, name + ".kv_norm", width);
    q_ = Linear<S>(store, name + ".q", width, width, rng);
    k_ = Linear<S>(store, name + ".k", width, width, rng);
    v_ = Linear<S>(store, name + ".v", width, width, rng);
    o_ = Linear<S>(store, name + ".o", width, width, rng);
  }

  CrossAttentionResult<S> operator()(ad::Tape<S>& t, ad::Var<S> query, ad::Var<S> query_pos, ad::Var<S> kv,
                                     ad::Var<S> kv_pos) const {
    typename ad::Tape<S>::Scope scope(t, name_);
    if (query.rows() < 1 || kv.rows() < 1) throw std::invalid_argument(name_ + ": empty sequence");
    ad::Var<S> qn = query_norm_(t, query);
    ad::Var<S> kvn = kv_norm_(t, kv);
    ad::Var<S> q = q_(t, ad::add(qn, query_pos));
    ad::Var<S> k = k_(t, ad::add(kvn, kv_pos));
    ad::Var<S> v = v_(t, kvn);
    const S inv = S(1) / std::sqrt(static_cast<S>(width_));
    ad::Var<S> attn = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), inv));
    ad::Var<S> out = ad::add(query, o_(t, ad::matmul(attn, v)));
    return {out, attn};
  }

  static std::size_t count(Index width) { return 2 * LayerNorm<S>::count(width) + 4 * Linear<S>::count(width, width); }

 private:
  Index width_ = 0;
  std::string name_;
  LayerNorm<S> query_norm_, kv_norm_;
  Linear<S> q_, k_, v_, o_;
};

template <typename S>
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ad::ParameterStore<S>& store, const std::string& name, Index width, int mult, Rng& rng) {
    up_ = Linear<S>(store, name + ".up", width, width * mult, rng);
    down_ = Linear<S>(store, name + ".down", width * mult, width, rng);
  }

  ad::Var<S> operator()(ad::Tape<S>& t, ad::Var<S> x, double rate, const RunMode& mode) const {
    return down_(t, dropout(ad::relu(up_(t, x)), rate, mode));
  }

  static std::size_t count(Index width, int mult) {
    return Linear<S>::count(width, width * mult) + Linear<S>::count(width * mult, width);
  }

 private:
  Linear<S> up_, down_;
};

// Token transformer. With cross-attention layers (input block) each layer is
// cross-attention to frames, self-attention, feed-forward; without (update
// blocks) the cross-attention sublayer is absent. Pre-norm residual layout;
// positional encodings are added to queries and keys of every attention.
template <typename S>
class TokenTransformer {
 public:
  TokenTransformer() = default;
  TokenTransformer(ad::ParameterStore<S>& store, const std::string& name, Index width, int num_classes,
                   int layers, bool cross, const TransformerConfig& cfg, Rng& rng)
      : cross_(cross), dropout_(cfg.dropout), name_(name) {
    if (cross_) memory_norm_ = LayerNorm<S>(store, name + ".memory_norm", width);
    for (int i = 0; i < layers; ++i) {
      const std::string p = name + ".layer" + std::to_string(i);
      Layer l;
      if (cross_) {
        l.cross_norm = LayerNorm<S>(store, p + ".cross_norm", width);
        l.cross = MultiHeadAttention<S>(store, p + ".cross_attn", width, cfg.heads, rng);
      }
      l.self_norm = LayerNorm<S>(store, p + ".self_norm", width);
      l.self = MultiHeadAttention<S>(store, p + ".self_attn", width, cfg.heads, rng, true);
      l.ff_norm = LayerNorm<S>(store, p + ".ff_norm", width);
      l.ff = FeedForward<S>(store, p + ".ff", width, cfg.ff_mult, rng);
      layers_.push_back(l);
    }
    final_norm_ = LayerNorm<S>(store, name + ".final_norm", width);
    head_ = Linear<S>(store, name + ".classifier", width, num_classes + 1, rng);
  }

  // frames/frame_pos are only read when the transformer has cross-attention.
  TokenState<S> operator()(ad::Tape<S>& t, ad::Var<S> tokens, ad::Var<S> token_pos, ad::Var<S> frames,
                           ad::Var<S> frame_pos, const RunMode& mode) const {
    typename ad::Tape<S>::Scope scope(t, name_);
    ad::Var<S> x = tokens;
    ad::Var<S> memory, memory_key;
    if (cross_) {
      if (!frames.valid() || frames.rows() < 1) throw std::invalid_argument(name_ + ": empty frame sequence");
      memory = memory_norm_(t, frames);
      memory_key = ad::add(memory, frame_pos);
    }
    for (const Layer& l : layers_) {
      if (cross_) {
        ad::Var<S> y = l.cross_norm(t, x);
        x = ad::add(x, dropout(l.cross(t, ad::add(y, token_pos), memory_key, memory), dropout_, mode));
      }
      ad::Var<S> y = l.self_norm(t, x);
      ad::Var<S> qk = ad::add(y, token_pos);
      x = ad::add(x, dropout(l.self(t, qk, qk, y), dropout_, mode));
      y = l.ff_norm(t, x);
      x = ad::add(x, dropout(l.ff(t, y, dropout_, mode), dropout_, mode));
    }
    ad::Var<S> refined = final_norm_(t, x);
    ad::Var<S> probs = ad::softmax_rows(head_(t, refined));
    return {refined, probs, ad::concat_cols<S>({refined, probs})};
  }

  static std::size_t count(Index width, int num_classes, int layers, bool cross, const TransformerConfig& cfg) {
    std::size_t per_layer = LayerNorm<S>::count(width) + MultiHeadAttention<S>::count(width) +
                            LayerNorm<S>::count(width) + FeedForward<S>::count(width, cfg.ff_mult);
    if (cross) per_layer += LayerNorm<S>::count(width) + MultiHeadAttention<S>::count(width);
    return (cross ? LayerNorm<S>::count(width) : 0) + per_layer * static_cast<std::size_t>(layers) +
           LayerNorm<S>::count(width) + Linear<S>::count(width, num_classes + 1);
  }

 private:
  struct Layer {
    LayerNorm<S> cross_norm;
    MultiHeadAttention<S> cross;
    LayerNorm<S> self_norm;
    MultiHeadAttention<S> self;
    LayerNorm<S> ff_norm;
    FeedForward<S> ff;
  };

  bool cross_ = false;
  double dropout_ = 0.0;
  std::string name_;
  LayerNorm<S> memory_norm_;
  std::vector<Layer> layers_;
  LayerNorm<S> final_norm_;
  Linear<S> head_;
};

}  // namespace bit
