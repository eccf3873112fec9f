#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "jcae/image_io.hpp"
#include "jcae/loss.hpp"

namespace jcae {

namespace detail {

inline void require_same_size(const Image& a, const Image& b, const char* op) {
  if (!a.same_size(b) || a.size() == 0) {
    throw ShapeError(std::string(op) + ": images must be non-empty and equally sized (" +
                     std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
                     std::to_string(b.width) + "x" + std::to_string(b.height) + ")");
  }
}

/// 256-level bin of a [0,1] intensity (values outside are clamped).
inline std::size_t gray_bin(double v) { return quantize_pixel(v); }

inline Image difference(const Image& a, const Image& b) {
  Image out(a.width, a.height);
  for (std::size_t i = 0; i < a.size(); ++i) out.pixels[i] = a.pixels[i] - b.pixels[i];
  return out;
}

}  // namespace detail

/// Shannon entropy in bits of the 256-bin gray-level histogram.
inline double entropy(const Image& img) {
  std::array<double, 256> hist{};
  for (double v : img.pixels) hist[detail::gray_bin(v)] += 1.0;
  const double n = static_cast<double>(img.size());
  double h = 0.0;
  for (double c : hist) {
    if (c > 0.0) h -= (c / n) * std::log2(c / n);
  }
  return h;
}

/// Mutual information in bits from the 256 x 256 joint histogram; empty
/// cells contribute 0.
inline double mutual_information(const Image& x, const Image& y) {
  detail::require_same_size(x, y, "mutual_information");
  std::vector<double> joint(256 * 256, 0.0);
  std::array<double, 256> px{}, py{};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t a = detail::gray_bin(x.pixels[i]), b = detail::gray_bin(y.pixels[i]);
    joint[a * 256 + b] += 1.0;
    px[a] += 1.0;
    py[b] += 1.0;
  }
  const double n = static_cast<double>(x.size());
  double mi = 0.0;
  for (std::size_t a = 0; a < 256; ++a) {
    if (px[a] == 0.0) continue;
    for (std::size_t b = 0; b < 256; ++b) {
      const double c = joint[a * 256 + b];
      if (c == 0.0) continue;
      mi += (c / n) * std::log2((c * n) / (px[a] * py[b]));
    }
  }
  return std::max(mi, 0.0);
}

struct Correlation {
  double r = 0.0;
  /// True when either input has zero variance; r is then reported as 0.
  bool degenerate = false;
};

inline Correlation pearson(const Image& x, const Image& y) {
  detail::require_same_size(x, y, "pearson");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x.pixels[i];
    my += y.pixels[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x.pixels[i] - mx, dy = y.pixels[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return {0.0, true};
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), false};
}

/// MI(F;A) + MI(F;B).
inline double mi(const Image& fused, const Image& ir, const Image& vis) {
  return mutual_information(fused, ir) + mutual_information(fused, vis);
}

/// Mean of r(F,A) and r(F,B).
inline double cc(const Image& fused, const Image& ir, const Image& vis, bool* degenerate = nullptr) {
  const Correlation a = pearson(fused, ir), b = pearson(fused, vis);
  if (degenerate) *degenerate = *degenerate || a.degenerate || b.degenerate;
  return 0.5 * (a.r + b.r);
}

/// r(F - B, A) + r(F - A, B).
inline double scd(const Image& fused, const Image& ir, const Image& vis, bool* degenerate = nullptr) {
  detail::require_same_size(fused, ir, "scd");
  detail::require_same_size(fused, vis, "scd");
  const Correlation a = pearson(detail::difference(fused, vis), ir);
  const Correlation b = pearson(detail::difference(fused, ir), vis);
  if (degenerate) *degenerate = *degenerate || a.degenerate || b.degenerate;
  return a.r + b.r;
}

struct QcvOptions {
  std::size_t region = 16;
  double sigma = 2.0;
  /// Intensities are multiplied by this before filtering (0-255 scale).
  double intensity_scale = 255.0;
};

namespace detail {

inline double clamped(const Image& img, std::ptrdiff_t y, std::ptrdiff_t x) {
  y = std::clamp<std::ptrdiff_t>(y, 0, static_cast<std::ptrdiff_t>(img.height) - 1);
  x = std::clamp<std::ptrdiff_t>(x, 0, static_cast<std::ptrdiff_t>(img.width) - 1);
  return img.pixels[static_cast<std::size_t>(y) * img.width + static_cast<std::size_t>(x)];
}

/// Squared Sobel gradient magnitude with replicated borders.
inline Image sobel_energy(const Image& img) {
  Image out(img.width, img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const auto p = [&](int dy, int dx) {
        return clamped(img, static_cast<std::ptrdiff_t>(y) + dy, static_cast<std::ptrdiff_t>(x) + dx);
      };
      const double gx = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
      const double gy = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
      out.at(y, x) = gx * gx + gy * gy;
    }
  }
  return out;
}

/// Separable Gaussian blur (radius ceil(3 sigma)) with replicated borders.
inline Image gaussian_blur(const Image& img, double sigma) {
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  const std::vector<double> k = gaussian_kernel(static_cast<std::size_t>(2 * radius + 1), sigma);
  Image tmp(img.width, img.height), out(img.width, img.height);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      double s = 0.0;
      for (std::ptrdiff_t i = -radius; i <= radius; ++i)
        s += k[static_cast<std::size_t>(i + radius)] *
             clamped(img, static_cast<std::ptrdiff_t>(y), static_cast<std::ptrdiff_t>(x) + i);
      tmp.at(y, x) = s;
    }
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      double s = 0.0;
      for (std::ptrdiff_t i = -radius; i <= radius; ++i)
        s += k[static_cast<std::size_t>(i + radius)] *
             clamped(tmp, static_cast<std::ptrdiff_t>(y) + i, static_cast<std::ptrdiff_t>(x));
      out.at(y, x) = s;
    }
  return out;
}

/// Saliency-weighted regional distortion of `fused` against one source.
inline double qcv_single(const Image& source, const Image& fused, const QcvOptions& opt) {
  Image diff(source.width, source.height), scaled(source.width, source.height);
  for (std::size_t i = 0; i < source.size(); ++i) {
    diff.pixels[i] = opt.intensity_scale * (source.pixels[i] - fused.pixels[i]);
    scaled.pixels[i] = opt.intensity_scale * source.pixels[i];
  }
  const Image distortion = gaussian_blur(diff, opt.sigma);
  const Image saliency = sobel_energy(scaled);
  double weighted = 0.0, weight_total = 0.0, plain = 0.0;
  std::size_t regions = 0;
  for (std::size_t y0 = 0; y0 < source.height; y0 += opt.region) {
    for (std::size_t x0 = 0; x0 < source.width; x0 += opt.region) {
      const std::size_t y1 = std::min(y0 + opt.region, source.height);
      const std::size_t x1 = std::min(x0 + opt.region, source.width);
      double lambda = 0.0, d = 0.0;
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) {
          lambda += saliency.at(y, x);
          d += distortion.at(y, x) * distortion.at(y, x);
        }
      d /= static_cast<double>((y1 - y0) * (x1 - x0));
      weighted += lambda * d;
      weight_total += lambda;
      plain += d;
      ++regions;
    }
  }
  // A flat source has no saliency; fall back to the unweighted mean.
  if (weight_total <= 0.0) return plain / static_cast<double>(regions);
  return weighted / weight_total;
}

}  // namespace detail

/// Chen-Varshney-style distortion (lower is better): per 16x16 region, the
/// source's summed squared Sobel magnitude weights the mean squared
/// Gaussian-filtered (sigma 2) source-minus-fused difference; the two
/// sources' scores are averaged. Computed on the 0-255 intensity scale.
inline double qcv(const Image& fused, const Image& ir, const Image& vis, const QcvOptions& opt = {}) {
  detail::require_same_size(fused, ir, "qcv");
  detail::require_same_size(fused, vis, "qcv");
  return 0.5 * (detail::qcv_single(ir, fused, opt) + detail::qcv_single(vis, fused, opt));
}

inline Tensor<double> image_tensor(const Image& img) {
  return Tensor<double>(Shape{img.height, img.width}, img.pixels);
}

/// Mean of ssim(F,A) and ssim(F,B), using the training loss's SSIM.
inline double ssim_metric(const Image& fused, const Image& ir, const Image& vis,
                          const LossConfig& cfg = {}) {
  detail::require_same_size(fused, ir, "ssim_metric");
  detail::require_same_size(fused, vis, "ssim_metric");
  const Tensor<double> f = image_tensor(fused);
  return 0.5 * (ssim(f, image_tensor(ir), cfg) + ssim(f, image_tensor(vis), cfg));
}

inline constexpr std::array<const char*, 5> kMetricNames = {"mi", "cc", "qcv", "scd", "ssim"};

struct MetricValues {
  double mi = 0.0;
  double cc = 0.0;
  double qcv = 0.0;
  double scd = 0.0;
  double ssim = 0.0;
  bool degenerate = false;

  std::array<double, 5> as_array() const { return {mi, cc, qcv, scd, ssim}; }
  static MetricValues from_array(const std::array<double, 5>& v) { return {v[0], v[1], v[2], v[3], v[4]}; }
};

inline MetricValues evaluate_triple(const Image& fused, const Image& ir, const Image& vis) {
  MetricValues m;
  m.mi = mi(fused, ir, vis);
  m.cc = cc(fused, ir, vis, &m.degenerate);
  m.qcv = qcv(fused, ir, vis);
  m.scd = scd(fused, ir, vis, &m.degenerate);
  m.ssim = ssim_metric(fused, ir, vis);
  return m;
}

// ---------------------------------------------------------------------------
// Paired-sample t-test

namespace detail {

/// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double md = m;
    double num = md * (b - md) * x / ((a + 2.0 * md - 1.0) * (a + 2.0 * md));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    num = -(a + md) * (a + b + md) * x / ((a + 2.0 * md) * (a + 2.0 * md + 1.0));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < eps) break;
  }
  return h;
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double regularized_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// Two-sided tail probability P(|T| >= |t|) for Student's t with `df` degrees.
inline double student_t_two_sided(double t, double df) {
  if (std::isinf(t)) return 0.0;
  return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

struct PairedTTest {
  double mean_difference = 0.0;
  double t = 0.0;
  double df = 0.0;
  double p_value = 1.0;
  bool significant = false;  // p < 0.05
};

inline constexpr double kSignificanceLevel = 0.05;

/// Two-sided paired-sample t-test on x[i] - y[i]. With zero spread of the
/// differences, p is 1 for a zero mean difference and 0 otherwise.
inline PairedTTest paired_t(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("paired_t: sequences differ in length");
  if (x.size() < 2) throw ShapeError("paired_t: need at least two pairs");
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mean += x[i] - y[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = (x[i] - y[i]) - mean;
    ss += d * d;
  }
  PairedTTest r;
  r.mean_difference = mean;
  r.df = n - 1.0;
  const double sd = std::sqrt(ss / (n - 1.0));
  const double se = sd / std::sqrt(n);
  // Spread below rounding noise of the mean counts as zero.
  if (se <= 1e-14 * std::max(1.0, std::abs(mean))) {
    r.t = mean == 0.0 ? 0.0 : std::copysign(INFINITY, mean);
    r.p_value = mean == 0.0 ? 1.0 : 0.0;
  } else {
    r.t = mean / se;
    r.p_value = student_t_two_sided(r.t, r.df);
  }
  r.significant = r.p_value < kSignificanceLevel;
  return r;
}

// ---------------------------------------------------------------------------
// Reports

struct PairMetrics {
  std::string name;
  MetricValues values;
};

struct MetricReport {
  std::vector<PairMetrics> rows;
  MetricValues mean;
  /// Per-metric p-values against a baseline, in kMetricNames order.
  std::optional<std::array<double, 5>> p_values;
  std::size_t baseline_matched = 0;
};

inline MetricValues mean_of(const std::vector<PairMetrics>& rows) {
  if (rows.empty()) throw Error("metric report: no pairs");
  std::array<double, 5> acc{};
  bool degenerate = false;
  for (const auto& r : rows) {
    const auto v = r.values.as_array();
    for (std::size_t k = 0; k < 5; ++k) acc[k] += v[k];
    degenerate = degenerate || r.values.degenerate;
  }
  for (double& a : acc) a /= static_cast<double>(rows.size());
  MetricValues m = MetricValues::from_array(acc);
  m.degenerate = degenerate;
  return m;
}

inline MetricReport make_report(std::vector<PairMetrics> rows) {
  MetricReport report;
  report.mean = mean_of(rows);
  report.rows = std::move(rows);
  return report;
}

/// Adds paired-t p-values of each metric against `baseline`, matching rows
/// by pair name.
inline void attach_significance(MetricReport& report, const MetricReport& baseline) {
  std::map<std::string, const MetricValues*> base;
  for (const auto& r : baseline.rows) base[r.name] = &r.values;
  std::array<std::vector<double>, 5> xs, ys;
  std::size_t matched = 0;
  for (const auto& r : report.rows) {
    auto it = base.find(r.name);
    if (it == base.end()) continue;
    ++matched;
    const auto a = r.values.as_array(), b = it->second->as_array();
    for (std::size_t k = 0; k < 5; ++k) {
      xs[k].push_back(a[k]);
      ys[k].push_back(b[k]);
    }
  }
  if (matched < 2) throw Error("baseline shares fewer than two pair names with this report");
  std::array<double, 5> p{};
  for (std::size_t k = 0; k < 5; ++k) p[k] = paired_t(xs[k], ys[k]).p_value;
  report.p_values = p;
  report.baseline_matched = matched;
}

namespace detail {

inline std::string number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string report_name(std::string name) {
  for (char& c : name)
    if (std::isspace(static_cast<unsigned char>(c)) || c == '=') c = '_';
  return name;
}

inline std::string metric_fields(const MetricValues& v) {
  const auto a = v.as_array();
  std::string out;
  for (std::size_t k = 0; k < 5; ++k) out += std::string(" ") + kMetricNames[k] + "=" + number(a[k]);
  return out;
}

}  // namespace detail

/// Line-oriented key=value report:
///   pair name=<stem> mi=.. cc=.. qcv=.. scd=.. ssim=.. degenerate=<0|1>
///   mean count=<n> mi=.. cc=.. qcv=.. scd=.. ssim=..
///   pvalue matched=<n> mi=.. cc=.. qcv=.. scd=.. ssim=..   (with a baseline)
inline std::string format_key_value(const MetricReport& report) {
  std::string out;
  for (const auto& r : report.rows) {
    out += "pair name=" + detail::report_name(r.name) + detail::metric_fields(r.values) +
           " degenerate=" + (r.values.degenerate ? "1" : "0") + "\n";
  }
  out += "mean count=" + std::to_string(report.rows.size()) + detail::metric_fields(report.mean) + "\n";
  if (report.p_values) {
    out += "pvalue matched=" + std::to_string(report.baseline_matched) +
           detail::metric_fields(MetricValues::from_array(*report.p_values)) + "\n";
  }
  return out;
}

/// Reads the `pair` lines of a key=value report (other lines are ignored)
/// and recomputes the means.
inline MetricReport parse_key_value(std::string_view text) {
  std::vector<PairMetrics> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string kind;
    if (!(fields >> kind) || kind != "pair") continue;
    std::map<std::string, std::string> kv;
    std::string token;
    while (fields >> token) {
      const auto eq = token.find('=');
      if (eq == std::string::npos) throw Error("report line " + std::to_string(line_no) + ": bad field '" + token + "'");
      kv[token.substr(0, eq)] = token.substr(eq + 1);
    }
    PairMetrics row;
    if (!kv.count("name")) throw Error("report line " + std::to_string(line_no) + ": missing name");
    row.name = kv["name"];
    std::array<double, 5> v{};
    for (std::size_t k = 0; k < 5; ++k) {
      auto it = kv.find(kMetricNames[k]);
      if (it == kv.end()) {
        throw Error("report line " + std::to_string(line_no) + ": missing " + kMetricNames[k]);
      }
      v[k] = std::stod(it->second);
    }
    row.values = MetricValues::from_array(v);
    row.values.degenerate = kv["degenerate"] == "1";
    rows.push_back(std::move(row));
  }
  return make_report(std::move(rows));
}

/// Human-readable aligned table.
inline std::string format_table(const MetricReport& report) {
  std::size_t name_width = 4;
  for (const auto& r : report.rows) name_width = std::max(name_width, r.name.size());
  std::ostringstream os;
  const auto header = [&] {
    os << std::left << std::setw(static_cast<int>(name_width)) << "pair";
    for (const char* m : {"MI", "CC", "Q_cv", "SCD", "SSIM"}) os << std::right << std::setw(13) << m;
    os << '\n';
  };
  const auto row = [&](const std::string& name, const MetricValues& v, bool flag) {
    os << std::left << std::setw(static_cast<int>(name_width)) << name << std::right << std::fixed
       << std::setprecision(4);
    for (double x : v.as_array()) os << std::setw(13) << x;
    if (flag) os << "  *";
    os << '\n';
  };
  header();
  for (const auto& r : report.rows) row(r.name, r.values, r.values.degenerate);
  row("mean", report.mean, false);
  if (report.p_values) {
    os << std::left << std::setw(static_cast<int>(name_width)) << "p" << std::right << std::fixed
       << std::setprecision(4);
    for (double p : *report.p_values) os << std::setw(12) << p << (p < kSignificanceLevel ? '*' : ' ');
    os << '\n';
  }
  if (std::any_of(report.rows.begin(), report.rows.end(), [](const auto& r) { return r.values.degenerate; })) {
    os << "* zero-variance input; affected correlations reported as 0\n";
  }
  return os.str();
}

}  // namespace jcae
