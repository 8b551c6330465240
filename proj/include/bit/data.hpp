// Dataset types, the standard action-segmentation directory layout, and a
// synthetic Markov-chain dataset generator.
//
// Layout under a dataset root:
//   mapping.txt             "<id> <name>" per line
//   groundTruth/<vid>.txt   one class name per frame
//   features/<vid>.npy      D x T array (transposed to T x D on load)
//   splits/<split>.bundle   one "<vid>.txt" (or "<vid>") per line
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "bit/autodiff.hpp"
#include "bit/npy.hpp"

namespace bit {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IntegrityError : public DataError {
 public:
  using DataError::DataError;
};

class ActionVocabulary {
 public:
  ActionVocabulary() = default;
  explicit ActionVocabulary(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.empty()) throw DataError("vocabulary is empty");
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i].empty()) throw DataError("empty class name at id " + std::to_string(i));
      if (!index_.emplace(names_[i], static_cast<int>(i)).second) throw DataError("duplicate class name: " + names_[i]);
    }
  }

  int size() const { return static_cast<int>(names_.size()); }
  // Extra class used for tokens that represent no segment.
  int null_id() const { return size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }

  int id_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DataError("unknown class name: " + name);
    return it->second;
  }

  bool operator==(const ActionVocabulary& o) const { return names_ == o.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
};

struct VideoFeatures {
  Matrix<float> values;  // T x D
  std::string video_id;
};

using FrameLabels = std::vector<int>;
using Transcript = std::vector<int>;

// Half-open frame interval [start, end) labelled with one class.
struct Segment {
  int label = 0;
  Index start = 0;
  Index end = 0;

  Index length() const { return end - start; }
  bool operator==(const Segment&) const = default;
};

using SegmentAnnotation = std::vector<Segment>;

struct Video {
  VideoFeatures features;
  FrameLabels labels;
  Transcript transcript;
};

struct Dataset {
  ActionVocabulary vocab;
  std::vector<Video> videos;
};

inline SegmentAnnotation labels_to_segments(const FrameLabels& labels) {
  SegmentAnnotation segs;
  const auto n = static_cast<Index>(labels.size());
  Index start = 0;
  for (Index t = 1; t <= n; ++t) {
    if (t == n || labels[static_cast<std::size_t>(t)] != labels[static_cast<std::size_t>(start)]) {
      segs.push_back({labels[static_cast<std::size_t>(start)], start, t});
      start = t;
    }
  }
  return segs;
}

inline FrameLabels segments_to_labels(const SegmentAnnotation& segs) {
  FrameLabels labels;
  for (const auto& s : segs) labels.insert(labels.end(), static_cast<std::size_t>(s.length()), s.label);
  return labels;
}

inline Transcript transcript_of(const FrameLabels& labels) {
  Transcript tr;
  for (const auto& s : labels_to_segments(labels)) tr.push_back(s.label);
  return tr;
}

// Contiguous, covering [0, T), non-empty, adjacent labels differ.
inline bool is_valid_annotation(const SegmentAnnotation& segs, Index T) {
  Index pos = 0;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    if (segs[i].start != pos || segs[i].length() < 1) return false;
    if (i > 0 && segs[i].label == segs[i - 1].label) return false;
    pos = segs[i].end;
  }
  return pos == T && !segs.empty();
}

inline ActionVocabulary read_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary file " + path.string());
  std::vector<std::pair<int, std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    int id = 0;
    std::string name;
    if (!(ls >> id >> name)) continue;
    rows.emplace_back(id, name);
  }
  std::sort(rows.begin(), rows.end());
  std::vector<std::string> names;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].first != static_cast<int>(i)) throw DataError(path.string() + ": class ids must be 0..A-1");
    names.push_back(rows[i].second);
  }
  return ActionVocabulary(std::move(names));
}

inline FrameLabels read_labels(const std::filesystem::path& path, const ActionVocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open label file " + path.string());
  FrameLabels labels;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    labels.push_back(vocab.id_of(line.substr(b, e - b + 1)));
  }
  if (labels.empty()) throw DataError(path.string() + ": no labels");
  return labels;
}

// Reads a D x T feature file into a T x D matrix.
inline VideoFeatures read_features(const std::filesystem::path& path, std::string video_id) {
  if (!std::filesystem::exists(path)) throw DataError("missing feature file " + path.string());
  const npy::Array2D a = npy::read(path.string());
  VideoFeatures f;
  f.video_id = std::move(video_id);
  f.values.resize(a.cols, a.rows);
  for (std::int64_t d = 0; d < a.rows; ++d) {
    for (std::int64_t t = 0; t < a.cols; ++t) {
      f.values(t, d) = static_cast<float>(a.data[static_cast<std::size_t>(d * a.cols + t)]);
    }
  }
  if (!f.values.allFinite()) throw DataError(path.string() + ": non-finite feature values");
  return f;
}

inline std::vector<std::string> read_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split file " + path.string());
  std::vector<std::string> ids;
  std::string line;
  while (in >> line) {
    if (line.size() > 4 && line.ends_with(".txt")) line.resize(line.size() - 4);
    ids.push_back(line);
  }
  return ids;
}

// Features longer than the labels by at most this many frames are truncated.
inline constexpr Index kMaxLengthSlack = 2;

inline Dataset load_dataset(const std::filesystem::path& root, const std::string& split_name,
                            const std::filesystem::path& vocab_file) {
  Dataset ds;
  ds.vocab = read_vocabulary(vocab_file);
  for (const auto& vid : read_split(root / "splits" / (split_name + ".bundle"))) {
    Video v;
    v.labels = read_labels(root / "groundTruth" / (vid + ".txt"), ds.vocab);
    v.features = read_features(root / "features" / (vid + ".npy"), vid);
    const auto T = static_cast<Index>(v.labels.size());
    const Index diff = v.features.values.rows() - T;
    if (diff < 0 || diff > kMaxLengthSlack) {
      throw IntegrityError(vid + ": feature length " + std::to_string(v.features.values.rows()) +
                           " does not match label length " + std::to_string(T));
    }
    if (diff > 0) v.features.values.conservativeResize(T, Eigen::NoChange);
    v.transcript = transcript_of(v.labels);
    ds.videos.push_back(std::move(v));
  }
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& root, const std::string& split_name) {
  return load_dataset(root, split_name, root / "mapping.txt");
}

struct SyntheticSpec {
  int num_videos = 20;
  int num_classes = 6;
  int min_segments = 5;
  int max_segments = 8;
  int min_segment_length = 40;
  int max_segment_length = 50;
  int feature_dim = 32;
  double separation = 3.0;
  double noise = 0.3;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_videos < 1 || num_classes < 1 || min_segments < 1 || min_segment_length < 1 || feature_dim < 1) {
      throw DataError("synthetic spec: counts must be >= 1");
    }
    if (max_segments < min_segments || max_segment_length < min_segment_length) {
      throw DataError("synthetic spec: max below min");
    }
    if (num_classes < 2 && max_segments > 1) throw DataError("synthetic spec: need 2 classes for multiple segments");
    if (!(noise >= 0) || !std::isfinite(separation)) throw DataError("synthetic spec: invalid scales");
  }
};

// Segments follow a first-order Markov chain over classes with no
// self-transitions; frame features are a per-class prototype plus i.i.d.
// Gaussian noise.
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int A = spec.num_classes;

  std::vector<std::string> names;
  for (int a = 0; a < A; ++a) names.push_back("action_" + std::to_string(a));

  Matrix<double> prototypes(A, spec.feature_dim);
  for (Index i = 0; i < prototypes.size(); ++i) prototypes.data()[i] = spec.separation * gauss(rng);

  Matrix<double> transition = Matrix<double>::Zero(A, A);
  for (int a = 0; a < A; ++a) {
    for (int b = 0; b < A; ++b) transition(a, b) = a == b ? 0.0 : 0.1 + unit(rng);
    if (A > 1) transition.row(a) /= transition.row(a).sum();
  }

  Dataset ds;
  ds.vocab = ActionVocabulary(names);
  std::uniform_int_distribution<int> seg_count(spec.min_segments, spec.max_segments);
  std::uniform_int_distribution<int> seg_len(spec.min_segment_length, spec.max_segment_length);
  std::uniform_int_distribution<int> first_class(0, A - 1);
  for (int v = 0; v < spec.num_videos; ++v) {
    Video video;
    const int n = seg_count(rng);
    int cls = first_class(rng);
    for (int s = 0; s < n; ++s) {
      if (s > 0) {
        const double u = unit(rng);
        double acc = 0;
        int next = cls == 0 ? 1 : 0;
        for (int b = 0; b < A; ++b) {
          acc += transition(cls, b);
          if (transition(cls, b) > 0 && u < acc) {
            next = b;
            break;
          }
        }
        cls = next;
      }
      video.labels.insert(video.labels.end(), static_cast<std::size_t>(seg_len(rng)), cls);
    }
    const auto T = static_cast<Index>(video.labels.size());
    video.features.video_id = "synthetic_" + std::to_string(v);
    video.features.values.resize(T, spec.feature_dim);
    for (Index t = 0; t < T; ++t) {
      for (Index d = 0; d < spec.feature_dim; ++d) {
        const double noise = spec.noise > 0 ? spec.noise * gauss(rng) : 0.0;
        video.features.values(t, d) = static_cast<float>(prototypes(video.labels[static_cast<std::size_t>(t)], d) + noise);
      }
    }
    video.transcript = transcript_of(video.labels);
    ds.videos.push_back(std::move(video));
  }
  return ds;
}

inline void write_split(const std::filesystem::path& path, const std::vector<std::string>& ids) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& id : ids) out << id << ".txt\n";
}

// Writes a dataset in the standard layout with splits "all", "train.split1"
// (first 80% of videos) and "test.split1" (the rest).
inline void write_dataset(const Dataset& ds, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root / "groundTruth");
  fs::create_directories(root / "features");
  fs::create_directories(root / "splits");
  {
    std::ofstream map(root / "mapping.txt");
    for (int a = 0; a < ds.vocab.size(); ++a) map << a << ' ' << ds.vocab.name(a) << '\n';
  }
  std::vector<std::string> ids;
  for (const auto& v : ds.videos) {
    const std::string& id = v.features.video_id;
    ids.push_back(id);
    std::ofstream gt(root / "groundTruth" / (id + ".txt"));
    for (int l : v.labels) gt << ds.vocab.name(l) << '\n';
    const Matrix<float> dt = v.features.values.transpose();  // D x T row-major
    npy::write_f32((root / "features" / (id + ".npy")).string(), dt.rows(), dt.cols(), dt.data());
  }
  const auto cut = static_cast<std::ptrdiff_t>((ids.size() * 4 + 4) / 5);
  write_split(root / "splits" / "all.bundle", ids);
  write_split(root / "splits" / "train.split1.bundle", {ids.begin(), ids.begin() + cut});
  write_split(root / "splits" / "test.split1.bundle", {ids.begin() + cut, ids.end()});
}

}  // namespace bit
