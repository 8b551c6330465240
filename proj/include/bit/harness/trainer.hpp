// Training loop, evaluation, and report serialisation.
#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "bit/harness/config.hpp"
#include "bit/harness/optimizer.hpp"
#include "bit/metrics.hpp"
#include "bit/network.hpp"
#include "bit/supervision.hpp"

namespace bit {

inline std::string overlap_key(double tau) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%.2f", tau);
  return buf;
}

inline void to_json(Json& j, const F1Counts& c) { j = Json{{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}}; }
inline void from_json(const Json& j, F1Counts& c) {
  c.tp = j.at("tp").get<std::size_t>();
  c.fp = j.at("fp").get<std::size_t>();
  c.fn = j.at("fn").get<std::size_t>();
}

inline void to_json(Json& j, const VideoEval& v) {
  j = Json{{"video", v.video_id}, {"frames", v.frames}, {"correct", v.correct}, {"acc", v.acc}, {"edit", v.edit}};
  for (std::size_t i = 0; i < kOverlaps.size(); ++i) {
    j["f1"][overlap_key(kOverlaps[i])] = v.f1[i];
    j["counts"][overlap_key(kOverlaps[i])] = v.counts[i];
  }
}

inline void from_json(const Json& j, VideoEval& v) {
  v.video_id = j.at("video").get<std::string>();
  v.frames = j.at("frames").get<std::size_t>();
  v.correct = j.at("correct").get<std::size_t>();
  v.acc = j.at("acc").get<double>();
  v.edit = j.at("edit").get<double>();
  for (std::size_t i = 0; i < kOverlaps.size(); ++i) {
    v.f1[i] = j.at("f1").at(overlap_key(kOverlaps[i])).get<double>();
    v.counts[i] = j.at("counts").at(overlap_key(kOverlaps[i])).get<F1Counts>();
  }
}

inline void to_json(Json& j, const EvalReport& r) {
  j = Json{{"acc", r.acc}, {"edit", r.edit}, {"videos", r.videos}};
  for (std::size_t i = 0; i < kOverlaps.size(); ++i) {
    j["f1"][overlap_key(kOverlaps[i])] = r.f1[i];
    j["counts"][overlap_key(kOverlaps[i])] = r.counts[i];
  }
}

inline void from_json(const Json& j, EvalReport& r) {
  r.acc = j.at("acc").get<double>();
  r.edit = j.at("edit").get<double>();
  r.videos = j.value("videos", std::vector<VideoEval>{});
  for (std::size_t i = 0; i < kOverlaps.size(); ++i) {
    r.f1[i] = j.at("f1").at(overlap_key(kOverlaps[i])).get<double>();
    r.counts[i] = j.at("counts").at(overlap_key(kOverlaps[i])).get<F1Counts>();
  }
}

inline void write_report_csv(std::ostream& out, const EvalReport& r) {
  out << "video,frames,acc,edit";
  for (double tau : kOverlaps) {
    const std::string k = std::to_string(static_cast<int>(tau * 100 + 0.5));
    out << ",f1@" << k << ",tp@" << k << ",fp@" << k << ",fn@" << k;
  }
  out << '\n';
  for (const auto& v : r.videos) {
    out << v.video_id << ',' << v.frames << ',' << v.acc << ',' << v.edit;
    for (std::size_t i = 0; i < kOverlaps.size(); ++i) {
      out << ',' << v.f1[i] << ',' << v.counts[i].tp << ',' << v.counts[i].fp << ',' << v.counts[i].fn;
    }
    out << '\n';
  }
}

template <typename S>
FrameLabels predict_video(const BitNetwork<S>& net, const Video& v) {
  const Matrix<S> x = v.features.values.template cast<S>();
  const Transcript* tr = net.config().transcript_mode() ? &v.transcript : nullptr;
  return predict(net.infer(x, tr));
}

template <typename S>
EvalReport evaluate(const BitNetwork<S>& net, const Dataset& ds, std::optional<int> background = std::nullopt) {
  std::vector<VideoEval> rows;
  for (const auto& v : ds.videos) rows.push_back(evaluate_video(v.features.video_id, predict_video(net, v), v.labels, background));
  return aggregate(std::move(rows));
}

// Mean of Acc, Edit and the three F1 values; used to pick the best epoch.
inline double summary_score(const EvalReport& r) {
  return (r.acc + r.edit + r.f1[0] + r.f1[1] + r.f1[2]) / 5.0;
}

struct StepLosses {
  double frame = 0, token = 0, cross_attention = 0, smoothing = 0, total = 0;
  Index num_tokens = 0;
};

template <typename S>
StepLosses train_step(BitNetwork<S>& net, Adam<S>& opt, const Video& v, const TrainConfig& cfg, Rng& rng) {
  ad::Tape<S> tape(true);
  const Matrix<S> x = v.features.values.template cast<S>();
  const Transcript* tr = net.config().transcript_mode() ? &v.transcript : nullptr;
  const ForwardVars<S> fwd = net.forward(tape, x, tr, RunMode{true, &rng});
  const SegmentAnnotation segments = labels_to_segments(v.labels);
  // Matching reads detached values of the last block only.
  const BlockOutputs<S> last = [&] {
    BlockOutputs<S> o;
    o.frame_probs.push_back(fwd.frame_probs.back().value());
    o.token_probs.push_back(fwd.token_probs.back().value());
    o.frame_attention.push_back(fwd.frame_attention.back().value());
    return o;
  }();
  const Matching matching = compute_matching(segments, last, cfg.matching());
  const LossTerms<S> l = total_loss(tape, fwd, v.labels, segments, matching, cfg.loss);
  StepLosses out{static_cast<double>(l.frame.value()(0, 0)), static_cast<double>(l.token.value()(0, 0)),
                 static_cast<double>(l.cross_attention.value()(0, 0)), static_cast<double>(l.smoothing.value()(0, 0)),
                 static_cast<double>(l.total.value()(0, 0)), last.num_tokens()};
  if (!std::isfinite(out.total)) return out;
  net.parameters().zero_grad();
  tape.backward(l.total);
  opt.clip_grad_norm(cfg.grad_clip);
  opt.step();
  return out;
}

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0;
  double median_loss = 0;
  double seconds = 0;
  std::vector<std::string> video_ids;
  std::vector<Index> num_tokens;
  std::optional<EvalReport> validation;
};

inline Json epoch_json(const EpochLog& e) {
  Json j{{"epoch", e.epoch},
         {"mean_loss", e.mean_loss},
         {"median_loss", e.median_loss},
         {"seconds", e.seconds},
         {"videos", e.video_ids},
         {"num_tokens", e.num_tokens}};
  if (e.validation) {
    j["validation"] = {{"acc", e.validation->acc}, {"edit", e.validation->edit}};
    for (std::size_t i = 0; i < kOverlaps.size(); ++i) j["validation"]["f1"][overlap_key(kOverlaps[i])] = e.validation->f1[i];
  }
  return j;
}

struct TrainHooks {
  std::ostream* log = nullptr;  // JSON lines, one per epoch
  // Called after every epoch; returning true stops training.
  std::function<bool(const EpochLog&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  int best_epoch = 0;
  std::optional<EvalReport> best_validation;
};

// One video per optimisation step, matching recomputed each step. When a
// validation set is given the parameters of the best epoch are restored.
template <typename S>
TrainResult train(BitNetwork<S>& net, const Dataset& train_set, const Dataset* validation, const TrainConfig& cfg,
                  const TrainHooks& hooks = {}) {
  cfg.validate();
  if (train_set.videos.empty()) throw DataError("training split is empty");
  Rng rng(cfg.seed);
  Adam<S> opt(net.parameters(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  std::vector<std::size_t> order(train_set.videos.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  double best_score = -1;
  std::vector<Matrix<S>> best_params;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = epoch;
    std::vector<double> losses;
    for (std::size_t step = 0; step < order.size(); ++step) {
      const Video& v = train_set.videos[order[step]];
      const StepLosses l = train_step(net, opt, v, cfg, rng);
      if (!std::isfinite(l.total)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << " step " << step << " video " << v.features.video_id
            << " (frame " << l.frame << ", token " << l.token << ", cross " << l.cross_attention << ", smooth "
            << l.smoothing << ")";
        throw NumericError(msg.str());
      }
      losses.push_back(l.total);
      log.video_ids.push_back(v.features.video_id);
      log.num_tokens.push_back(l.num_tokens);
    }
    log.mean_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
    std::vector<double> sorted = losses;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    log.median_loss = sorted.size() % 2 == 1 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    if (validation != nullptr) {
      log.validation = evaluate(net, *validation);
      const double score = summary_score(*log.validation);
      if (score > best_score) {
        best_score = score;
        result.best_epoch = epoch;
        result.best_validation = log.validation;
        best_params.clear();
        for (const auto& p : net.parameters().parameters()) best_params.push_back(p.value);
      }
    } else {
      result.best_epoch = epoch;
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (hooks.log != nullptr) *hooks.log << epoch_json(log).dump() << std::endl;
    result.epochs.push_back(log);
    if (hooks.on_epoch && hooks.on_epoch(result.epochs.back())) break;
  }
  if (!best_params.empty()) {
    std::size_t i = 0;
    for (auto& p : net.parameters().parameters()) p.value = best_params[i++];
  }
  return result;
}

}  // namespace bit
