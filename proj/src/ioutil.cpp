#include "gprodom/ioutil.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace gprodom::io {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Csv read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("missing file: " + path);
  Csv out;
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty csv: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::stringstream hs(line);
  std::string tok;
  while (std::getline(hs, tok, ',')) out.header.push_back(tok);
  std::size_t row = 0;
  while (std::getline(is, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> vals;
    std::stringstream ls(line);
    while (std::getline(ls, tok, ',')) {
      try {
        vals.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw std::runtime_error(path + " row " + std::to_string(row) + ": not a number: " + tok);
      }
    }
    if (vals.size() != out.header.size()) {
      throw std::runtime_error(path + " row " + std::to_string(row) + ": expected " +
                               std::to_string(out.header.size()) + " fields, got " +
                               std::to_string(vals.size()));
    }
    out.rows.push_back(std::move(vals));
  }
  return out;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) os << ',';
    os << header[i];
  }
  os << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) os << ',';
      os << format_double(row[i]);
    }
    os << '\n';
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("missing file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << content;
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(base ^ (stream * 0x9e3779b97f4a7c15ULL)) ^ index);
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_svg_plot(const std::string& path, const std::vector<PlotSeries>& series,
                    const std::string& title) {
  double min_x = 0.0, max_x = 1.0, min_y = 0.0, max_y = 1.0;
  bool first = true;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (first) {
        min_x = max_x = s.x[i];
        min_y = max_y = s.y[i];
        first = false;
      } else {
        min_x = std::min(min_x, s.x[i]);
        max_x = std::max(max_x, s.x[i]);
        min_y = std::min(min_y, s.y[i]);
        max_y = std::max(max_y, s.y[i]);
      }
    }
  }
  const double span = std::max({max_x - min_x, max_y - min_y, 1e-9});
  const double cx = 0.5 * (min_x + max_x), cy = 0.5 * (min_y + max_y);
  const double half = 0.55 * span;
  const int size = 640, margin = 60;
  auto px = [&](double x) { return margin + (x - (cx - half)) / (2 * half) * (size - 2 * margin); };
  auto py = [&](double y) { return size - margin - (y - (cy - half)) / (2 * half) * (size - 2 * margin); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
      << "\" viewBox=\"0 0 " << size << " " << size << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << size - 2 * margin
      << "\" height=\"" << size - 2 * margin << "\" fill=\"none\" stroke=\"#888\"/>\n";
  svg << "<text x=\"" << size / 2 << "\" y=\"28\" text-anchor=\"middle\" font-size=\"16\">" << title
      << "</text>\n";
  int legend_y = margin + 16;
  for (const auto& s : series) {
    svg << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      svg << format_double(px(s.x[i])) << ',' << format_double(py(s.y[i])) << ' ';
    }
    svg << "\"/>\n";
    svg << "<text x=\"" << margin + 8 << "\" y=\"" << legend_y << "\" font-size=\"12\" fill=\""
        << s.color << "\">" << s.name << "</text>\n";
    legend_y += 16;
  }
  svg << "<text x=\"" << size / 2 << "\" y=\"" << size - 16
      << "\" text-anchor=\"middle\" font-size=\"12\">x (m)</text>\n";
  svg << "<text x=\"18\" y=\"" << size / 2 << "\" font-size=\"12\" transform=\"rotate(-90 18 "
      << size / 2 << ")\" text-anchor=\"middle\">y (m)</text>\n";
  svg << "</svg>\n";
  write_text(path, svg.str());
}

}  // namespace gprodom::io
