#include "gprodom/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <stdexcept>

namespace gprodom::pre {

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_trace(const AScan& trace) {
  if (trace.dt <= 0.0) throw std::invalid_argument("trace dt must be positive");
  if (trace.samples.size() < 16) {
    throw std::invalid_argument("trace too short: " + std::to_string(trace.samples.size()) +
                                " samples (minimum 16)");
  }
}

std::pair<double, double> resolve_band(const PreprocessConfig& cfg, double sample_rate) {
  const double nyquist = 0.5 * sample_rate;
  const double lo = cfg.f_lo > 0.0 ? cfg.f_lo : 0.1 * nyquist;
  const double hi = cfg.f_hi > 0.0 ? cfg.f_hi : 0.8 * nyquist;
  return {lo, hi};
}

}  // namespace

std::vector<Biquad> design_butterworth_bandpass(int order, double f_lo, double f_hi,
                                                double sample_rate) {
  if (order < 1) throw std::invalid_argument("filter order must be >= 1");
  const double nyquist = 0.5 * sample_rate;
  if (!(0.0 < f_lo && f_lo < f_hi && f_hi < nyquist)) {
    throw std::invalid_argument("band [" + std::to_string(f_lo) + ", " + std::to_string(f_hi) +
                                "] Hz outside (0, " + std::to_string(nyquist) + ") Hz");
  }
  using cplx = std::complex<double>;
  const double fs2 = 2.0 * sample_rate;
  const double w_lo = fs2 * std::tan(kPi * f_lo / sample_rate);
  const double w_hi = fs2 * std::tan(kPi * f_hi / sample_rate);
  const double w0 = std::sqrt(w_lo * w_hi);
  const double bw = w_hi - w_lo;

  // analog bandpass poles from the lowpass prototype
  std::vector<cplx> poles;
  for (int k = 0; k < order; ++k) {
    const double theta = kPi * (2.0 * k + order + 1.0) / (2.0 * order);
    const cplx proto(std::cos(theta), std::sin(theta));
    const cplx pb = proto * (bw / 2.0);
    const cplx root = std::sqrt(pb * pb - cplx(w0 * w0, 0.0));
    poles.push_back(pb + root);
    poles.push_back(pb - root);
  }

  // bilinear transform
  std::vector<cplx> zpoles;
  zpoles.reserve(poles.size());
  for (const cplx& s : poles) zpoles.push_back((cplx(fs2, 0.0) + s) / (cplx(fs2, 0.0) - s));

  // pair conjugates into sections; real poles pair among themselves
  std::vector<cplx> upper, real_poles;
  for (const cplx& z : zpoles) {
    if (std::abs(z.imag()) > 1e-10) {
      if (z.imag() > 0.0) upper.push_back(z);
    } else {
      real_poles.push_back(z);
    }
  }
  auto by_real = [](const cplx& a, const cplx& b) {
    return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
  };
  std::sort(upper.begin(), upper.end(), by_real);
  std::sort(real_poles.begin(), real_poles.end(), by_real);

  std::vector<Biquad> sections;
  for (const cplx& z : upper) {
    Biquad s;
    s.b0 = 1.0;
    s.b1 = 0.0;
    s.b2 = -1.0;  // one zero at z=+1 and one at z=-1
    s.a1 = -2.0 * z.real();
    s.a2 = std::norm(z);
    sections.push_back(s);
  }
  for (std::size_t i = 0; i + 1 < real_poles.size(); i += 2) {
    Biquad s;
    s.b0 = 1.0;
    s.b1 = 0.0;
    s.b2 = -1.0;
    s.a1 = -(real_poles[i].real() + real_poles[i + 1].real());
    s.a2 = real_poles[i].real() * real_poles[i + 1].real();
    sections.push_back(s);
  }

  // normalize gain to 1 at the digital center frequency
  const double f_center = (sample_rate / kPi) * std::atan(w0 / fs2);
  const double w = 2.0 * kPi * f_center / sample_rate;
  const cplx z(std::cos(w), std::sin(w));
  cplx h(1.0, 0.0);
  for (const Biquad& s : sections) {
    h *= (s.b0 * z * z + s.b1 * z + s.b2) / (z * z + s.a1 * z + s.a2);
  }
  const double gain = 1.0 / std::abs(h);
  sections.front().b0 *= gain;
  sections.front().b1 *= gain;
  sections.front().b2 *= gain;
  return sections;
}

namespace {

// direct form II transposed, explicit state
void run_biquad(const Biquad& s, std::vector<double>& x, double s1_init, double s2_init) {
  double s1 = s1_init, s2 = s2_init;
  for (double& v : x) {
    const double y = s.b0 * v + s1;
    s1 = s.b1 * v - s.a1 * y + s2;
    s2 = s.b2 * v - s.a2 * y;
    v = y;
  }
}

// unit-step steady state of the section's DF2T state
std::pair<double, double> biquad_zi(const Biquad& s) {
  const double h1 = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
  const double z2 = s.b2 - s.a2 * h1;
  const double z1 = s.b1 - s.a1 * h1 + z2;
  return {z1, z2};
}

std::vector<double> sos_filter_zi(const std::vector<Biquad>& sections, std::vector<double> x) {
  for (const Biquad& s : sections) {
    const auto [z1, z2] = biquad_zi(s);
    const double x0 = x.empty() ? 0.0 : x.front();
    run_biquad(s, x, z1 * x0, z2 * x0);
  }
  return x;
}

}  // namespace

std::vector<double> sos_filter(const std::vector<Biquad>& sections, const std::vector<double>& x) {
  std::vector<double> y = x;
  for (const Biquad& s : sections) run_biquad(s, y, 0.0, 0.0);
  return y;
}

std::vector<double> sos_filtfilt(const std::vector<Biquad>& sections, const std::vector<double>& x) {
  const std::size_t n = x.size();
  if (n < 2) return x;
  const std::size_t pad = std::min<std::size_t>(3 * (2 * sections.size() + 1), n - 1);

  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) ext.push_back(2.0 * x.front() - x[pad - i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 0; i < pad; ++i) ext.push_back(2.0 * x.back() - x[n - 2 - i]);

  ext = sos_filter_zi(sections, std::move(ext));
  std::reverse(ext.begin(), ext.end());
  ext = sos_filter_zi(sections, std::move(ext));
  std::reverse(ext.begin(), ext.end());

  return std::vector<double>(ext.begin() + static_cast<std::ptrdiff_t>(pad),
                             ext.begin() + static_cast<std::ptrdiff_t>(pad + n));
}

AScan butterworth_bandpass(const AScan& trace, const PreprocessConfig& cfg) {
  check_trace(trace);
  const double fs = 1.0 / trace.dt;
  const auto [lo, hi] = resolve_band(cfg, fs);
  const auto sections = design_butterworth_bandpass(cfg.filter_order, lo, hi, fs);
  AScan out = trace;
  out.samples = sos_filtfilt(sections, trace.samples);
  return out;
}

AScan sec_gain(const AScan& trace, const PreprocessConfig& cfg) {
  check_trace(trace);
  if (cfg.sec.alpha < 0.0 || cfg.sec.p < 0.0) {
    throw std::invalid_argument("sec gain requires alpha >= 0 and p >= 0");
  }
  const double t_start = trace.t0 + cfg.sec.t0;
  if (t_start < 0.0) throw std::invalid_argument("sec gain requires non-negative trace start time");

  double t_ref = 0.0;
  for (std::size_t k = 0; k < trace.samples.size(); ++k) {
    const double t = t_start + static_cast<double>(k) * trace.dt;
    if (t > 0.0) {
      t_ref = t;
      break;
    }
  }
  if (t_ref == 0.0) t_ref = trace.dt;

  AScan out = trace;
  for (std::size_t k = 0; k < out.samples.size(); ++k) {
    const double t = t_start + static_cast<double>(k) * trace.dt;
    const double spread = cfg.sec.p == 0.0 ? 1.0 : std::pow(t / t_ref, cfg.sec.p);
    out.samples[k] *= spread * std::exp(cfg.sec.alpha * t);
  }
  return out;
}

AScan dewow(const AScan& trace, int window) {
  check_trace(trace);
  const int n = static_cast<int>(trace.samples.size());
  if (window < 3 || window % 2 == 0 || window > n) {
    throw std::invalid_argument("dewow window must be odd and within [3, " + std::to_string(n) +
                                "], got " + std::to_string(window));
  }
  const int half = window / 2;
  AScan out = trace;
  // prefix sums for O(n) truncated-window means
  std::vector<double> prefix(static_cast<std::size_t>(n) + 1, 0.0);
  for (int i = 0; i < n; ++i) prefix[static_cast<std::size_t>(i) + 1] = prefix[static_cast<std::size_t>(i)] + trace.samples[static_cast<std::size_t>(i)];
  for (int i = 0; i < n; ++i) {
    const int a = std::max(0, i - half);
    const int b = std::min(n - 1, i + half);
    const double mean = (prefix[static_cast<std::size_t>(b) + 1] - prefix[static_cast<std::size_t>(a)]) / static_cast<double>(b - a + 1);
    out.samples[static_cast<std::size_t>(i)] -= mean;
  }
  return out;
}

namespace {

std::vector<double> scaling_filter(const std::string& family) {
  if (family == "haar" || family == "db1") {
    return {0.7071067811865476, 0.7071067811865476};
  }
  if (family == "db2") {
    return {0.48296291314469025, 0.8365163037378079, 0.22414386804185735, -0.12940952255092145};
  }
  if (family == "db4") {
    return {0.23037781330885523, 0.7148465705525415, 0.6308807679295904, -0.02798376941698385,
            -0.18703481171888114, 0.030841381835986965, 0.032883011666982945, -0.010597401784997278};
  }
  throw std::invalid_argument("unknown wavelet family: " + family);
}

// one periodized analysis level: x (even length) -> (approx, detail)
void dwt_level(const std::vector<double>& x, const std::vector<double>& g,
               const std::vector<double>& h, std::vector<double>& approx,
               std::vector<double>& detail) {
  const std::size_t n = x.size();
  const std::size_t half = n / 2;
  approx.assign(half, 0.0);
  detail.assign(half, 0.0);
  for (std::size_t i = 0; i < half; ++i) {
    double a = 0.0, d = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double v = x[(2 * i + k) % n];
      a += g[k] * v;
      d += h[k] * v;
    }
    approx[i] = a;
    detail[i] = d;
  }
}

std::vector<double> idwt_level(const std::vector<double>& approx, const std::vector<double>& detail,
                               const std::vector<double>& g, const std::vector<double>& h) {
  const std::size_t n = 2 * approx.size();
  std::vector<double> x(n, 0.0);
  for (std::size_t i = 0; i < approx.size(); ++i) {
    for (std::size_t k = 0; k < g.size(); ++k) {
      const std::size_t m = (2 * i + k) % n;
      x[m] += approx[i] * g[k] + detail[i] * h[k];
    }
  }
  return x;
}

}  // namespace

AScan wavelet_denoise(const AScan& trace, const PreprocessConfig& cfg) {
  check_trace(trace);
  const int levels = cfg.wavelet.levels;
  if (levels < 1) throw std::invalid_argument("wavelet levels must be >= 1");
  const std::size_t n = trace.samples.size();
  const std::size_t block = std::size_t{1} << levels;
  if (n < block) {
    throw std::invalid_argument("trace of " + std::to_string(n) + " samples too short for " +
                                std::to_string(levels) + " wavelet levels");
  }
  const std::vector<double> g = scaling_filter(cfg.wavelet.family);
  std::vector<double> h(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) {
    h[k] = (k % 2 == 0 ? 1.0 : -1.0) * g[g.size() - 1 - k];
  }

  // reflect-pad to a multiple of 2^levels so every level halves evenly
  std::size_t padded = ((n + block - 1) / block) * block;
  std::vector<double> x(trace.samples);
  x.reserve(padded);
  for (std::size_t i = 0; x.size() < padded; ++i) {
    x.push_back(trace.samples[n - 2 - (i % (n - 1))]);
  }

  std::vector<std::vector<double>> details(static_cast<std::size_t>(levels));
  std::vector<double> approx = std::move(x);
  for (int l = 0; l < levels; ++l) {
    std::vector<double> a, d;
    dwt_level(approx, g, h, a, d);
    details[static_cast<std::size_t>(l)] = std::move(d);
    approx = std::move(a);
  }

  if (cfg.wavelet.threshold_rule == "universal") {
    std::vector<double> mags;
    for (double v : details[0]) mags.push_back(std::abs(v));
    std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(mags.size() / 2), mags.end());
    const double mad = mags[mags.size() / 2];
    const double sigma = mad / 0.6745;
    const double thr = sigma * std::sqrt(2.0 * std::log(static_cast<double>(n)));
    for (auto& level : details) {
      for (double& v : level) {
        const double mag = std::abs(v) - thr;
        v = mag > 0.0 ? (v > 0.0 ? mag : -mag) : 0.0;
      }
    }
  } else if (cfg.wavelet.threshold_rule != "none") {
    throw std::invalid_argument("unknown wavelet threshold rule: " + cfg.wavelet.threshold_rule);
  }

  for (int l = levels - 1; l >= 0; --l) {
    approx = idwt_level(approx, details[static_cast<std::size_t>(l)], g, h);
  }

  AScan out = trace;
  out.samples.assign(approx.begin(), approx.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

AScan preprocess_chain(const AScan& trace, const PreprocessConfig& cfg) {
  AScan out = butterworth_bandpass(trace, cfg);
  out = sec_gain(out, cfg);
  out = dewow(out, cfg.dewow_window);
  out = wavelet_denoise(out, cfg);
  return out;
}

std::vector<BScan> assemble_bscans(const std::vector<AScan>& traces, const PreprocessConfig& cfg) {
  if (traces.size() < 2) throw std::invalid_argument("assemble_bscans needs at least 2 traces");
  if (cfg.bscan_width < 2) throw std::invalid_argument("B-scan width must be >= 2");
  if (cfg.trace_spacing <= 0.0) throw std::invalid_argument("trace spacing must be positive");
  const int stride = cfg.bscan_stride > 0 ? cfg.bscan_stride : cfg.bscan_width / 2;

  const std::size_t rows = traces.front().samples.size();
  std::vector<double> positions;
  positions.reserve(traces.size());
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const AScan& t = traces[i];
    if (!t.position.has_value()) {
      throw std::invalid_argument("trace " + std::to_string(i) + " has no along-track position");
    }
    if (t.samples.size() != rows || t.dt != traces.front().dt) {
      throw std::invalid_argument("trace " + std::to_string(i) + " sample grid differs from trace 0");
    }
    if (i > 0 && *t.position <= positions.back()) {
      throw std::invalid_argument("positions not strictly increasing at trace " + std::to_string(i));
    }
    positions.push_back(*t.position);
  }

  const double span = positions.back() - positions.front();
  const int grid_cols = static_cast<int>(std::floor(span / cfg.trace_spacing)) + 1;
  if (grid_cols < cfg.bscan_width) {
    throw std::invalid_argument("span " + std::to_string(span) + " m too short for width " +
                                std::to_string(cfg.bscan_width) + " at spacing " +
                                std::to_string(cfg.trace_spacing) + " m");
  }

  // per-row linear interpolation onto the uniform grid
  std::vector<double> grid(static_cast<std::size_t>(grid_cols) * rows);
  std::size_t seg = 0;
  for (int j = 0; j < grid_cols; ++j) {
    const double xq = positions.front() + static_cast<double>(j) * cfg.trace_spacing;
    while (seg + 2 < positions.size() && positions[seg + 1] < xq) ++seg;
    const double x0 = positions[seg], x1 = positions[seg + 1];
    const double w = std::clamp((xq - x0) / (x1 - x0), 0.0, 1.0);
    const auto& a = traces[seg].samples;
    const auto& b = traces[seg + 1].samples;
    for (std::size_t r = 0; r < rows; ++r) {
      grid[r * static_cast<std::size_t>(grid_cols) + static_cast<std::size_t>(j)] =
          a[r] + w * (b[r] - a[r]);
    }
  }

  std::vector<BScan> out;
  for (int start = 0; start + cfg.bscan_width <= grid_cols; start += stride) {
    BScan scan;
    scan.height = static_cast<int>(rows);
    scan.width = cfg.bscan_width;
    scan.dt = traces.front().dt;
    scan.t0 = traces.front().t0;
    scan.trace_spacing = cfg.trace_spacing;
    scan.start_position = positions.front() + static_cast<double>(start) * cfg.trace_spacing;
    scan.data.resize(rows * static_cast<std::size_t>(cfg.bscan_width));
    for (std::size_t r = 0; r < rows; ++r) {
      const double* src = grid.data() + r * static_cast<std::size_t>(grid_cols) + static_cast<std::size_t>(start);
      std::copy(src, src + cfg.bscan_width, scan.data.begin() + static_cast<std::ptrdiff_t>(r * static_cast<std::size_t>(cfg.bscan_width)));
    }
    out.push_back(std::move(scan));
  }
  return out;
}

void normalize_inplace(BScan& scan) {
  if (scan.data.empty()) return;
  const double n = static_cast<double>(scan.data.size());
  const double mean = std::accumulate(scan.data.begin(), scan.data.end(), 0.0) / n;
  double var = 0.0;
  for (double v : scan.data) var += (v - mean) * (v - mean);
  var /= n;
  const double inv = 1.0 / std::max(std::sqrt(var), 1e-12);
  for (double& v : scan.data) v = (v - mean) * inv;
}

}  // namespace gprodom::pre
