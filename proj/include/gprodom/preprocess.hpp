#pragma once

#include <optional>
#include <string>
#include <vector>

namespace gprodom::pre {

/// One radar trace: amplitude vs two-way travel time at a single antenna
/// position. Position is along-track, set once traces are stitched.
struct AScan {
  std::vector<double> samples;
  double dt = 0.0;  // sample interval, seconds
  double t0 = 0.0;  // trace start time, seconds
  std::optional<double> position;  // along-track, meters
};

/// L time-aligned traces over distance, row-major (rows = time samples,
/// columns = traces on a uniform along-track grid).
struct BScan {
  int height = 0;  // samples per trace
  int width = 0;   // L columns
  std::vector<double> data;
  double dt = 0.0;
  double t0 = 0.0;
  double trace_spacing = 0.0;   // meters per column
  double start_position = 0.0;  // along-track position of column 0

  double at(int row, int col) const { return data[static_cast<std::size_t>(row) * width + col]; }
  double center_position() const { return start_position + 0.5 * (width - 1) * trace_spacing; }
};

struct SecConfig {
  double alpha = 0.0;  // exponential attenuation compensation, 1/s
  double p = 0.0;      // spreading exponent
  double t0 = 0.0;     // time-zero offset added to the trace start time, s
};

struct WaveletConfig {
  std::string family = "db4";  // "haar" | "db2" | "db4"
  int levels = 4;
  std::string threshold_rule = "universal";  // "universal" | "none"
};

struct PreprocessConfig {
  double f_lo = 0.0;  // Hz; 0 selects 0.1 x Nyquist at apply time
  double f_hi = 0.0;  // Hz; 0 selects 0.8 x Nyquist at apply time
  int filter_order = 4;
  SecConfig sec;
  int dewow_window = 31;  // samples, odd
  WaveletConfig wavelet;
  int bscan_width = 64;        // L, columns per B-scan
  double trace_spacing = 0.02;  // meters per column
  int bscan_stride = 0;        // columns between window starts; 0 = L/2
};

// --- Butterworth bandpass -------------------------------------------------

struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;  // numerator
  double a1 = 0.0, a2 = 0.0;            // denominator (a0 = 1)
};

// Order-n analog Butterworth bandpass mapped by the bilinear transform with
// frequency prewarping, as second-order sections. -3 dB lands exactly on
// f_lo and f_hi.
std::vector<Biquad> design_butterworth_bandpass(int order, double f_lo, double f_hi,
                                                double sample_rate);

// Single causal pass, zero initial state (used for impulse responses).
std::vector<double> sos_filter(const std::vector<Biquad>& sections, const std::vector<double>& x);

// Zero-phase forward-backward pass with odd-reflection padding and
// steady-state initial conditions.
std::vector<double> sos_filtfilt(const std::vector<Biquad>& sections, const std::vector<double>& x);

// --- per-trace operations -------------------------------------------------

AScan butterworth_bandpass(const AScan& trace, const PreprocessConfig& cfg);

// Sample k is multiplied by g(t_k) = (t_k/t_ref)^p * exp(alpha * t_k) with
// t_k = t0 + k*dt and t_ref the first strictly positive sample time.
AScan sec_gain(const AScan& trace, const PreprocessConfig& cfg);

// Subtracts a centered running mean; edge windows are truncated.
AScan dewow(const AScan& trace, int window);

// Multi-level periodized orthogonal DWT, soft threshold on the detail
// coefficients (universal threshold, sigma from the MAD of the finest
// details), reconstruct.
AScan wavelet_denoise(const AScan& trace, const PreprocessConfig& cfg);

// bandpass -> SEC gain -> dewow -> wavelet denoise
AScan preprocess_chain(const AScan& trace, const PreprocessConfig& cfg);

// --- B-scan assembly --------------------------------------------------------

// Resamples traces (strictly monotone positions required) onto a uniform
// along-track grid by per-row linear interpolation between neighboring
// traces, then windows the grid into width-L B-scans at the configured
// column stride.
std::vector<BScan> assemble_bscans(const std::vector<AScan>& traces, const PreprocessConfig& cfg);

// Zero mean, unit variance over the whole B-scan (network input conditioning).
void normalize_inplace(BScan& scan);

}  // namespace gprodom::pre
