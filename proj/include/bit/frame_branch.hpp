// Convolutional frame branch: a 1x1 input projection followed by dual
// dilated residual layers and a framewise classifier.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bit/layers.hpp"

namespace bit {

struct ConvStageConfig {
  int layers = 10;
  int hidden = 64;
  double dropout = 0.5;
  int dilation_base = 2;
};

template <typename S>
struct FrameState {
  ad::Var<S> refined;   // T x H
  ad::Var<S> probs;     // T x A, rows sum to one
  ad::Var<S> combined;  // T x (H + A)
};

template <typename S>
class ConvStage {
 public:
  ConvStage() = default;

  ConvStage(ad::ParameterStore<S>& store, std::string name, Index in_channels, int num_classes,
            ConvStageConfig cfg, Rng& rng)
      : cfg_(cfg), name_(std::move(name)) {
    if (cfg.layers < 1 || cfg.hidden < 1 || cfg.dilation_base < 1) {
      throw std::invalid_argument("conv stage: layers, hidden and dilation base must be >= 1");
    }
    const Index H = cfg.hidden;
    in_proj_ = Linear<S>(store, name_ + ".in_proj", in_channels, H, rng);
    for (int i = 0; i < cfg.layers; ++i) {
      const std::string p = name_ + ".layer" + std::to_string(i);
      const double bound = 1.0 / std::sqrt(static_cast<double>(3 * H));
      Layer l;
      l.w_a = &store.add(p + ".conv_a.weight", uniform_init<S>(3 * H, H, bound, rng));
      l.b_a = &store.add(p + ".conv_a.bias", uniform_init<S>(1, H, bound, rng));
      l.w_b = &store.add(p + ".conv_b.weight", uniform_init<S>(3 * H, H, bound, rng));
      l.b_b = &store.add(p + ".conv_b.bias", uniform_init<S>(1, H, bound, rng));
      l.fuse = Linear<S>(store, p + ".fuse", 2 * H, H, rng);
      layers_.push_back(l);
    }
    classifier_ = Linear<S>(store, name_ + ".classifier", H, num_classes, rng);
  }

  // Dilations of layer i, applied in parallel and summed through the fuse map.
  std::pair<Index, Index> dilations(int i) const {
    return {ipow(cfg_.dilation_base, cfg_.layers - 1 - i), ipow(cfg_.dilation_base, i)};
  }

  // Largest |t - s| for which input frame t can influence output frame s.
  Index receptive_radius() const {
    Index r = 0;
    for (int i = 0; i < cfg_.layers; ++i) {
      const auto [a, b] = dilations(i);
      r += std::max(a, b);
    }
    return r;
  }

  FrameState<S> operator()(ad::Tape<S>& t, ad::Var<S> x, const RunMode& mode) const {
    typename ad::Tape<S>::Scope scope(t, name_);
    if (x.rows() < 1) throw std::invalid_argument(name_ + ": empty input");
    ad::Var<S> f = in_proj_(t, x);
    for (int i = 0; i < cfg_.layers; ++i) {
      const Layer& l = layers_[static_cast<std::size_t>(i)];
      const auto [da, db] = dilations(i);
      ad::Var<S> a = ad::conv_temporal(f, t.parameter(*l.w_a), t.parameter(*l.b_a), da);
      ad::Var<S> b = ad::conv_temporal(f, t.parameter(*l.w_b), t.parameter(*l.b_b), db);
      ad::Var<S> g = ad::relu(l.fuse(t, ad::concat_cols<S>({a, b})));
      g = dropout(g, cfg_.dropout, mode);
      f = ad::add(f, g);
      if (!f.value().allFinite()) throw NumericError(name_ + " layer " + std::to_string(i) + ": non-finite activation");
    }
    ad::Var<S> probs = ad::softmax_rows(classifier_(t, f));
    return {f, probs, ad::concat_cols<S>({f, probs})};
  }

  static std::size_t count(Index in_channels, int num_classes, const ConvStageConfig& cfg) {
    const Index H = cfg.hidden;
    const std::size_t per_layer = 2 * static_cast<std::size_t>(3 * H * H + H) + Linear<S>::count(2 * H, H);
    return Linear<S>::count(in_channels, H) + per_layer * static_cast<std::size_t>(cfg.layers) +
           Linear<S>::count(H, num_classes);
  }

  const ConvStageConfig& config() const { return cfg_; }

 private:
  struct Layer {
    ad::Parameter<S>* w_a = nullptr;
    ad::Parameter<S>* b_a = nullptr;
    ad::Parameter<S>* w_b = nullptr;
    ad::Parameter<S>* b_b = nullptr;
    Linear<S> fuse;
  };

  static Index ipow(int base, int e) {
    Index r = 1;
    for (int i = 0; i < e; ++i) r *= base;
    return r;
  }

  ConvStageConfig cfg_;
  std::string name_;
  Linear<S> in_proj_;
  std::vector<Layer> layers_;
  Linear<S> classifier_;
};

}  // namespace bit
