#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gprodom::io {

// Deterministic double formatting (round-trip exact) so metric files are
// byte-identical across reruns.
std::string format_double(double v);

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

Csv read_csv(const std::string& path);
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& content);

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index);

// 64-bit FNV-1a, used for run-directory config hashes.
std::uint64_t fnv1a(const std::string& text);

struct PlotSeries {
  std::string name;
  std::string color;
  std::vector<double> x;
  std::vector<double> y;
};

// Minimal SVG line plot with axes and a legend (equal-aspect x/y).
void write_svg_plot(const std::string& path, const std::vector<PlotSeries>& series,
                    const std::string& title);

}  // namespace gprodom::io
