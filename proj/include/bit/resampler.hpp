// Temporal downsampling to one feature per predicted segment, and the
// matching upsampling of features and attention maps.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bit/data.hpp"
#include "bit/layers.hpp"

namespace bit {

// Partition of [0, T) into runs of the framewise argmax.
struct SegmentMap {
  std::vector<std::pair<Index, Index>> intervals;
  std::vector<Index> middle;         // floor((start + end - 1) / 2)
  std::vector<Index> frame_segment;  // segment index of every frame

  Index num_segments() const { return static_cast<Index>(intervals.size()); }
  Index num_frames() const { return static_cast<Index>(frame_segment.size()); }
};

inline SegmentMap segment_map_from_labels(const FrameLabels& labels) {
  SegmentMap m;
  for (const auto& s : labels_to_segments(labels)) {
    const auto k = static_cast<Index>(m.intervals.size());
    m.intervals.emplace_back(s.start, s.end);
    m.middle.push_back((s.start + s.end - 1) / 2);
    m.frame_segment.insert(m.frame_segment.end(), static_cast<std::size_t>(s.length()), k);
  }
  return m;
}

// Row argmax, first index on ties.
template <typename S>
FrameLabels argmax_rows(const Matrix<S>& probs) {
  FrameLabels out(static_cast<std::size_t>(probs.rows()));
  for (Index t = 0; t < probs.rows(); ++t) {
    Index best = 0;
    probs.row(t).maxCoeff(&best);
    out[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }
  return out;
}

template <typename S>
SegmentMap segment_map_from_probs(const Matrix<S>& probs) {
  return segment_map_from_labels(argmax_rows(probs));
}

enum class AttentionKind {
  row_stochastic,     // token -> frames map, every row sums to one
  column_stochastic,  // frame -> tokens map, every column sums to one
};

// Index/factor vectors that turn an M x K pooled map into an M x T map.
template <typename S>
std::pair<std::vector<Index>, std::vector<S>> expansion(const SegmentMap& seg, AttentionKind kind) {
  std::vector<Index> index = seg.frame_segment;
  std::vector<S> factor(index.size(), S(1));
  if (kind == AttentionKind::row_stochastic) {
    for (std::size_t t = 0; t < index.size(); ++t) {
      const auto [s, e] = seg.intervals[static_cast<std::size_t>(index[t])];
      factor[t] = S(1) / static_cast<S>(e - s);
    }
  }
  return {std::move(index), std::move(factor)};
}

template <typename S>
Matrix<S> upsample_attention(const Matrix<S>& pooled, const SegmentMap& seg, AttentionKind kind) {
  if (pooled.cols() != seg.num_segments()) throw std::invalid_argument("upsample_attention: segment count mismatch");
  const auto [index, factor] = expansion<S>(seg, kind);
  Matrix<S> out(pooled.rows(), seg.num_frames());
  for (std::size_t t = 0; t < index.size(); ++t) out.col(static_cast<Index>(t)) = pooled.col(index[t]) * factor[t];
  return out;
}

template <typename S>
ad::Var<S> upsample_attention(ad::Var<S> pooled, const SegmentMap& seg, AttentionKind kind) {
  if (pooled.cols() != seg.num_segments()) throw std::invalid_argument("upsample_attention: segment count mismatch");
  auto [index, factor] = expansion<S>(seg, kind);
  return ad::expand_cols(pooled, std::move(index), std::move(factor));
}

template <typename S>
struct PooledFrameState {
  ad::Var<S> values;     // K x H
  ad::Var<S> positions;  // K x H, encodings of the middle frames
};

// Average-pools frame features over each segment and refines the pooled
// sequence with a gated recurrent pass.
template <typename S>
class Downsampler {
 public:
  Downsampler() = default;
  Downsampler(ad::ParameterStore<S>& store, const std::string& name, Index width, Rng& rng) : name_(name) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(width));
    wx_ = &store.add(name + ".gru.input_weight", uniform_init<S>(width, 3 * width, bound, rng));
    wh_ = &store.add(name + ".gru.hidden_weight", uniform_init<S>(width, 3 * width, bound, rng));
    bx_ = &store.add(name + ".gru.input_bias", uniform_init<S>(1, 3 * width, bound, rng));
    bh_ = &store.add(name + ".gru.hidden_bias", uniform_init<S>(1, 3 * width, bound, rng));
  }

  // Mean-pooled features before the recurrent refinement.
  static ad::Var<S> pool(ad::Var<S> frames, const SegmentMap& seg) { return ad::segment_mean(frames, seg.intervals); }

  PooledFrameState<S> operator()(ad::Tape<S>& t, ad::Var<S> frames, ad::Var<S> frame_pos,
                                 const SegmentMap& seg) const {
    typename ad::Tape<S>::Scope scope(t, name_);
    ad::Var<S> pooled = pool(frames, seg);
    ad::Var<S> refined =
        ad::gru(pooled, t.parameter(*wx_), t.parameter(*wh_), t.parameter(*bx_), t.parameter(*bh_));
    return {refined, ad::gather_rows(frame_pos, seg.middle)};
  }

  static std::size_t count(Index width) { return static_cast<std::size_t>(2 * 3 * width * width + 2 * 3 * width); }

 private:
  std::string name_;
  ad::Parameter<S>* wx_ = nullptr;
  ad::Parameter<S>* wh_ = nullptr;
  ad::Parameter<S>* bx_ = nullptr;
  ad::Parameter<S>* bh_ = nullptr;
};

// Copies each pooled row to the frames of its segment and merges the copy
// with the previous frame-branch output through a fully-connected layer.
template <typename S>
class Upsampler {
 public:
  Upsampler() = default;
  Upsampler(ad::ParameterStore<S>& store, const std::string& name, Index prev_width, Index width, Rng& rng)
      : merge_(store, name + ".merge", prev_width + width, width, rng) {}

  static ad::Var<S> copy(ad::Var<S> pooled, const SegmentMap& seg) {
    if (pooled.rows() != seg.num_segments()) throw std::invalid_argument("upsample: pooled rows do not match segments");
    return ad::gather_rows(pooled, seg.frame_segment);
  }

  ad::Var<S> operator()(ad::Tape<S>& t, ad::Var<S> pooled, const SegmentMap& seg, ad::Var<S> prev_combined) const {
    return merge_(t, ad::concat_cols<S>({prev_combined, copy(pooled, seg)}));
  }

  static std::size_t count(Index prev_width, Index width) { return Linear<S>::count(prev_width + width, width); }

 private:
  Linear<S> merge_;
};

}  // namespace bit
