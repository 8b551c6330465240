// Forward-pass timing against video length, with a frame-level
// self-attention layer timed by the same harness for reference.
#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <cmath>
#include <ostream>
#include <vector>

#include "bit/layers.hpp"
#include "bit/network.hpp"

namespace bit {

struct BenchRow {
  Index frames = 0;
  double network_seconds = 0;
  double reference_seconds = 0;
};

// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// Single-head self-attention over all T frames of width H. Score rows are
// produced in chunks so memory stays O(chunk * T); compute is O(T^2 H).
template <typename S>
Matrix<S> frame_self_attention(const Matrix<S>& x, const Matrix<S>& wq, const Matrix<S>& wk, const Matrix<S>& wv,
                               Index chunk = 256) {
  const Matrix<S> q = x * wq, k = x * wk, v = x * wv;
  const S inv = S(1) / std::sqrt(static_cast<S>(x.cols()));
  Matrix<S> out(x.rows(), v.cols());
  for (Index r = 0; r < x.rows(); r += chunk) {
    const Index n = std::min(chunk, x.rows() - r);
    Matrix<S> scores = (q.middleRows(r, n) * k.transpose()) * inv;
    scores = ad::softmax_rows_value(scores);
    out.middleRows(r, n).noalias() = scores * v;
  }
  return out;
}

template <typename S>
double median_seconds(int repeats, const std::function<void()>& fn) {
  fn();  // warm-up: first-touch allocations and caches
  std::vector<double> t;
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

// Features are synthetic Gaussian draws; in transcript mode a transcript of
// num_tokens alternating classes is used.
template <typename S>
std::vector<BenchRow> bench(const BitNetwork<S>& net, const std::vector<Index>& lengths, int repeats,
                            std::uint64_t seed) {
  Rng rng(seed);
  const BitConfig& cfg = net.config();
  const Index H = cfg.hidden;
  const Matrix<S> wq = normal_init<S>(H, H, 1.0 / std::sqrt(static_cast<double>(H)), rng);
  const Matrix<S> wk = normal_init<S>(H, H, 1.0 / std::sqrt(static_cast<double>(H)), rng);
  const Matrix<S> wv = normal_init<S>(H, H, 1.0 / std::sqrt(static_cast<double>(H)), rng);
  Transcript tr;
  for (int m = 0; m < cfg.num_tokens; ++m) tr.push_back(m % cfg.num_classes);

  std::vector<BenchRow> rows;
  for (Index T : lengths) {
    const Matrix<S> x = normal_init<S>(T, cfg.input_dim, 1.0, rng);
    const Matrix<S> frames = normal_init<S>(T, H, 1.0, rng);
    BenchRow row;
    row.frames = T;
    row.network_seconds = median_seconds<S>(repeats, [&] { (void)net.infer(x, &tr); });
    row.reference_seconds = median_seconds<S>(repeats, [&] { (void)frame_self_attention(frames, wq, wk, wv); });
    rows.push_back(row);
  }
  return rows;
}

inline void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "frames,network_seconds,reference_seconds\n";
  for (const auto& r : rows) out << r.frames << ',' << r.network_seconds << ',' << r.reference_seconds << '\n';
}

// Log-log SVG plot of both timing curves.
inline void write_bench_svg(std::ostream& out, const std::vector<BenchRow>& rows) {
  const double W = 640, Hh = 420, pad = 60;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& r : rows) {
    xmin = std::min(xmin, std::log10(static_cast<double>(r.frames)));
    xmax = std::max(xmax, std::log10(static_cast<double>(r.frames)));
    for (double v : {r.network_seconds, r.reference_seconds}) {
      ymin = std::min(ymin, std::log10(std::max(v, 1e-9)));
      ymax = std::max(ymax, std::log10(std::max(v, 1e-9)));
    }
  }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  const auto px = [&](double lx) { return pad + (lx - xmin) / (xmax - xmin) * (W - 2 * pad); };
  const auto py = [&](double ly) { return Hh - pad - (ly - ymin) / (ymax - ymin) * (Hh - 2 * pad); };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << Hh << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << pad << "\" y1=\"" << Hh - pad << "\" x2=\"" << W - pad << "\" y2=\"" << Hh - pad
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << Hh - pad << "\" stroke=\"black\"/>\n";
  const auto series = [&](auto get, const char* color, const char* label, double ly) {
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& r : rows) out << px(std::log10(static_cast<double>(r.frames))) << ',' << py(std::log10(std::max(get(r), 1e-9))) << ' ';
    out << "\"/>\n<text x=\"" << pad + 10 << "\" y=\"" << ly << "\" fill=\"" << color << "\">" << label << "</text>\n";
  };
  series([](const BenchRow& r) { return r.network_seconds; }, "steelblue", "network forward", pad - 30);
  series([](const BenchRow& r) { return r.reference_seconds; }, "firebrick", "frame self-attention", pad - 12);
  out << "<text x=\"" << W / 2 - 60 << "\" y=\"" << Hh - 20 << "\">frames (log scale)</text>\n";
  out << "<text x=\"10\" y=\"" << Hh / 2 << "\" transform=\"rotate(-90 10 " << Hh / 2 << ")\">seconds (log scale)</text>\n";
  for (const auto& r : rows) {
    out << "<text x=\"" << px(std::log10(static_cast<double>(r.frames))) - 15 << "\" y=\"" << Hh - pad + 18 << "\" font-size=\"11\">"
        << r.frames << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace bit
