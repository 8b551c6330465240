// The bi-level network: one input block and B-1 update blocks, each with a
// convolutional frame branch and a transformer action branch.
#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bit/action_branch.hpp"
#include "bit/data.hpp"
#include "bit/frame_branch.hpp"
#include "bit/resampler.hpp"

namespace bit {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class MatchingMode { one_to_one, one_to_many, transcript };

struct BitConfig {
  int input_dim = 2048;
  int num_classes = 48;
  int num_blocks = 4;
  int num_tokens = 60;
  int hidden = 64;
  // Per-block flags (size num_blocks). Empty means downsampling in every
  // block from the third on, i.e. all update blocks except the first.
  std::vector<bool> downsample;
  MatchingMode matching = MatchingMode::one_to_one;
  int conv_layers = 10;
  double conv_dropout = 0.5;
  int dilation_base = 2;
  TransformerConfig transformer;

  bool transcript_mode() const { return matching == MatchingMode::transcript; }

  bool downsample_at(int block) const {
    if (downsample.empty()) return block >= 2;
    return downsample.at(static_cast<std::size_t>(block));
  }

  ConvStageConfig conv() const { return {conv_layers, hidden, conv_dropout, dilation_base}; }

  void validate() const {
    if (num_blocks < 2) throw UsageError("num_blocks must be >= 2 (one input and at least one update block)");
    if (num_tokens < 1) throw UsageError("num_tokens must be >= 1");
    if (input_dim < 1 || num_classes < 1 || hidden < 1) throw UsageError("input_dim, num_classes, hidden must be >= 1");
    if (!downsample.empty() && downsample.size() != static_cast<std::size_t>(num_blocks)) {
      throw UsageError("downsample flags must have one entry per block");
    }
    if (!downsample.empty() && downsample.front()) throw UsageError("the input block cannot downsample");
    if (transformer.heads < 1 || hidden % transformer.heads != 0) throw UsageError("heads must divide hidden");
  }
};

// Per-block outputs. Attention maps exist for update blocks only, so
// token_attention[i] / frame_attention[i] belong to block i + 2 (1-based).
template <typename S>
struct BlockOutputs {
  std::vector<Matrix<S>> frame_probs;      // T x A
  std::vector<Matrix<S>> token_probs;      // M x (A + 1)
  std::vector<Matrix<S>> token_attention;  // M x T, rows sum to one
  std::vector<Matrix<S>> frame_attention;  // M x T, columns sum to one

  int num_blocks() const { return static_cast<int>(frame_probs.size()); }
  Index num_frames() const { return frame_probs.front().rows(); }
  Index num_tokens() const { return token_probs.front().rows(); }
};

template <typename S>
struct ForwardVars {
  std::vector<ad::Var<S>> frame_probs;
  std::vector<ad::Var<S>> token_probs;
  std::vector<ad::Var<S>> token_attention;
  std::vector<ad::Var<S>> frame_attention;

  BlockOutputs<S> values() const {
    BlockOutputs<S> out;
    for (const auto& v : frame_probs) out.frame_probs.push_back(v.value());
    for (const auto& v : token_probs) out.token_probs.push_back(v.value());
    for (const auto& v : token_attention) out.token_attention.push_back(v.value());
    for (const auto& v : frame_attention) out.frame_attention.push_back(v.value());
    return out;
  }
};

template <typename S>
class BitNetwork {
 public:
  BitNetwork(BitConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    const Index H = cfg_.hidden;
    const int A = cfg_.num_classes;
    input_conv_ = ConvStage<S>(store_, "block1.frame", cfg_.input_dim, A, cfg_.conv(), rng);
    input_frame_proj_ = Linear<S>(store_, "block1.frame_proj", H + A, H, rng);
    input_transformer_ = TokenTransformer<S>(store_, "block1.action", H, A, cfg_.transformer.input_layers, true,
                                             cfg_.transformer, rng);
    if (cfg_.transcript_mode()) {
      class_embedding_ = &store_.add("class_embedding", normal_init<S>(A, H, 1.0, rng));
    } else {
      token_encoding_ = &store_.add("token_encoding", normal_init<S>(cfg_.num_tokens, H, 1.0, rng));
    }
    for (int b = 1; b < cfg_.num_blocks; ++b) {
      const std::string p = "block" + std::to_string(b + 1);
      UpdateBlock u;
      u.downsample = cfg_.downsample_at(b);
      u.token_proj = Linear<S>(store_, p + ".token_proj", H + A + 1, H, rng);
      u.frame_proj = Linear<S>(store_, p + ".frame_proj", H + A, H, rng);
      u.token_attn = SingleHeadCrossAttention<S>(store_, p + ".token_cross_attn", H, rng);
      u.transformer = TokenTransformer<S>(store_, p + ".action", H, A, cfg_.transformer.update_layers, false,
                                          cfg_.transformer, rng);
      u.token_out_proj = Linear<S>(store_, p + ".token_out_proj", H + A + 1, H, rng);
      u.frame_attn = SingleHeadCrossAttention<S>(store_, p + ".frame_cross_attn", H, rng);
      if (u.downsample) {
        u.downsampler = Downsampler<S>(store_, p + ".downsample", H, rng);
        u.upsampler = Upsampler<S>(store_, p + ".upsample", H + A, H, rng);
      }
      u.conv = ConvStage<S>(store_, p + ".frame", H, A, cfg_.conv(), rng);
      blocks_.push_back(std::move(u));
    }
  }

  BitNetwork(const BitNetwork&) = delete;
  BitNetwork& operator=(const BitNetwork&) = delete;

  const BitConfig& config() const { return cfg_; }
  ad::ParameterStore<S>& parameters() { return store_; }
  const ad::ParameterStore<S>& parameters() const { return store_; }

  // features: T x D. transcript is required in transcript mode and ignored otherwise.
  ForwardVars<S> forward(ad::Tape<S>& t, const Matrix<S>& features, const Transcript* transcript,
                         const RunMode& mode) const {
    if (features.rows() < 1) throw UsageError("forward: empty video");
    if (features.cols() != cfg_.input_dim) {
      throw UsageError("forward: feature dim " + std::to_string(features.cols()) + " != configured " +
                       std::to_string(cfg_.input_dim));
    }
    if (mode.training && mode.rng == nullptr) throw UsageError("forward: training mode needs an rng");
    const Index T = features.rows();
    const Index H = cfg_.hidden;

    ad::Var<S> tokens, token_pos;
    if (cfg_.transcript_mode()) {
      if (transcript == nullptr || transcript->empty()) throw UsageError("transcript mode requires a transcript");
      std::vector<Index> ids;
      for (int c : *transcript) {
        if (c < 0 || c >= cfg_.num_classes) throw UsageError("transcript class id out of range");
        ids.push_back(c);
      }
      tokens = ad::gather_rows(t.parameter(*class_embedding_), ids);
      token_pos = t.constant(sinusoidal_encoding<S>(static_cast<Index>(ids.size()), H));
    } else {
      tokens = t.constant(Matrix<S>::Zero(cfg_.num_tokens, H));
      token_pos = t.parameter(*token_encoding_);
    }
    ad::Var<S> frame_pos = t.constant(sinusoidal_encoding<S>(T, H));

    ForwardVars<S> out;
    FrameState<S> fs = input_conv_(t, t.constant(features), mode);
    ad::Var<S> frames = input_frame_proj_(t, fs.combined);
    TokenState<S> ts = input_transformer_(t, tokens, token_pos, frames, frame_pos, mode);
    out.frame_probs.push_back(fs.probs);
    out.token_probs.push_back(ts.probs);

    for (const UpdateBlock& u : blocks_) {
      ad::Var<S> tok = u.token_proj(t, ts.combined);
      ad::Var<S> frm = u.frame_proj(t, fs.combined);
      ad::Var<S> kv = frm, kv_pos = frame_pos;
      SegmentMap seg;
      if (u.downsample) {
        seg = segment_map_from_probs(fs.probs.value());
        PooledFrameState<S> pooled = u.downsampler(t, frm, frame_pos, seg);
        kv = pooled.values;
        kv_pos = pooled.positions;
      }
      // Tokens read frames, then refine among themselves.
      CrossAttentionResult<S> to_tokens = u.token_attn(t, tok, token_pos, kv, kv_pos);
      ts = u.transformer(t, to_tokens.updated, token_pos, {}, {}, mode);
      // Frames read the refined tokens.
      ad::Var<S> tok_out = u.token_out_proj(t, ts.combined);
      CrossAttentionResult<S> to_frames = u.frame_attn(t, kv, kv_pos, tok_out, token_pos);
      ad::Var<S> token_map = to_tokens.attention;               // M x K
      ad::Var<S> frame_map = ad::transpose(to_frames.attention);  // M x K
      ad::Var<S> frame_in = to_frames.updated;
      if (u.downsample) {
        frame_in = u.upsampler(t, to_frames.updated, seg, fs.combined);
        token_map = upsample_attention(token_map, seg, AttentionKind::row_stochastic);
        frame_map = upsample_attention(frame_map, seg, AttentionKind::column_stochastic);
      }
      fs = u.conv(t, frame_in, mode);
      out.frame_probs.push_back(fs.probs);
      out.token_probs.push_back(ts.probs);
      out.token_attention.push_back(token_map);
      out.frame_attention.push_back(frame_map);
    }
    return out;
  }

  BlockOutputs<S> infer(const Matrix<S>& features, const Transcript* transcript = nullptr) const {
    ad::Tape<S> t(false);
    return forward(t, features, transcript, RunMode{}).values();
  }

 private:
  struct UpdateBlock {
    bool downsample = false;
    Linear<S> token_proj;
    Linear<S> frame_proj;
    SingleHeadCrossAttention<S> token_attn;
    TokenTransformer<S> transformer;
    Linear<S> token_out_proj;
    SingleHeadCrossAttention<S> frame_attn;
    Downsampler<S> downsampler;
    Upsampler<S> upsampler;
    ConvStage<S> conv;
  };

  BitConfig cfg_;
  ad::ParameterStore<S> store_;
  ConvStage<S> input_conv_;
  Linear<S> input_frame_proj_;
  TokenTransformer<S> input_transformer_;
  ad::Parameter<S>* token_encoding_ = nullptr;
  ad::Parameter<S>* class_embedding_ = nullptr;
  std::vector<UpdateBlock> blocks_;
};

// Learnable scalar count derived from the configuration alone.
inline std::size_t parameter_count(const BitConfig& cfg) {
  using S = double;
  cfg.validate();
  const Index H = cfg.hidden;
  const int A = cfg.num_classes;
  const auto conv = cfg.conv();
  std::size_t n = ConvStage<S>::count(cfg.input_dim, A, conv) + Linear<S>::count(H + A, H) +
                  TokenTransformer<S>::count(H, A, cfg.transformer.input_layers, true, cfg.transformer);
  n += static_cast<std::size_t>((cfg.transcript_mode() ? A : cfg.num_tokens) * H);
  for (int b = 1; b < cfg.num_blocks; ++b) {
    n += 2 * Linear<S>::count(H + A + 1, H) + Linear<S>::count(H + A, H);
    n += 2 * SingleHeadCrossAttention<S>::count(H);
    n += TokenTransformer<S>::count(H, A, cfg.transformer.update_layers, false, cfg.transformer);
    if (cfg.downsample_at(b)) n += Downsampler<S>::count(H) + Upsampler<S>::count(H + A, H);
    n += ConvStage<S>::count(H, A, conv);
  }
  return n;
}

// Framewise class distribution implied by the action branch: each frame
// mixes the class distributions of non-null tokens with its attention
// weights. Tokens whose argmax is the null class are masked and the
// remaining attention renormalised per frame. Empty when every token is null.
template <typename S>
std::optional<Matrix<S>> action_branch_distribution(const Matrix<S>& token_probs, const Matrix<S>& frame_attention) {
  const Index M = token_probs.rows();
  const Index A = token_probs.cols() - 1;
  Matrix<S> attn = frame_attention;
  bool any = false;
  Matrix<S> cls(M, A);
  for (Index m = 0; m < M; ++m) {
    Index best = 0;
    token_probs.row(m).maxCoeff(&best);
    if (best == A) {
      attn.row(m).setZero();
    } else {
      any = true;
    }
    const S mass = token_probs.row(m).head(A).sum();
    cls.row(m) = mass > S(0) ? (token_probs.row(m).head(A) / mass).eval() : Matrix<S>::Constant(1, A, S(1) / A);
  }
  if (!any) return std::nullopt;
  for (Index t = 0; t < attn.cols(); ++t) {
    const S col = attn.col(t).sum();
    if (col > S(0)) {
      attn.col(t) /= col;
    } else {
      // No attention left on any non-null token: spread uniformly over them.
      for (Index m = 0; m < M; ++m) {
        Index best = 0;
        token_probs.row(m).maxCoeff(&best);
        attn(m, t) = best == A ? S(0) : S(1);
      }
      attn.col(t) /= attn.col(t).sum();
    }
  }
  return Matrix<S>(attn.transpose() * cls);
}

// Final framewise labels: argmax of the mean of the frame-branch and
// action-branch distributions of the last block.
template <typename S>
FrameLabels predict(const BlockOutputs<S>& out) {
  if (out.num_blocks() < 2) throw UsageError("predict: needs at least one update block");
  const Matrix<S>& frame = out.frame_probs.back();
  const auto action = action_branch_distribution(out.token_probs.back(), out.frame_attention.back());
  if (!action) return argmax_rows(frame);
  const Matrix<S> mean = (frame + *action) * S(0.5);
  return argmax_rows(mean);
}

}  // namespace bit
