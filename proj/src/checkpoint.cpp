#include "gprodom/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace gprodom::nn {

namespace {

constexpr char kMagic[8] = {'G', 'P', 'R', 'O', 'D', 'O', 'M', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double v) {
  put_u64(os, std::bit_cast<std::uint64_t>(v));
}

bool get_u32(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return true;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("truncated container");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

}  // namespace

void write_container(const std::string& path, const std::vector<NamedTensor>& records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  put_u32(os, kVersion);
  for (const auto& rec : records) {
    put_u32(os, static_cast<std::uint32_t>(rec.name.size()));
    os.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
    put_u32(os, static_cast<std::uint32_t>(rec.tensor.rank()));
    for (int i = 0; i < rec.tensor.rank(); ++i) {
      put_u64(os, static_cast<std::uint64_t>(rec.tensor.extent(i)));
    }
    for (double v : rec.tensor.values()) put_f64(os, v);
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<NamedTensor> read_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("not a tensor container: " + path);
  }
  std::uint32_t version = 0;
  if (!get_u32(is, version) || version != kVersion) {
    throw std::runtime_error("unsupported container version in " + path);
  }
  std::vector<NamedTensor> out;
  std::uint32_t name_len = 0;
  while (get_u32(is, name_len)) {
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw std::runtime_error("truncated container: " + path);
    std::uint32_t rank = 0;
    if (!get_u32(is, rank) || rank > 4) throw std::runtime_error("bad record rank in " + path);
    Shape shape(rank);
    std::int64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<int>(get_u64(is));
      count *= shape[i];
    }
    std::vector<double> data(static_cast<std::size_t>(count));
    for (auto& v : data) v = get_f64(is);
    out.push_back({std::move(name), Tensor::from_data(std::move(shape), std::move(data))});
  }
  return out;
}

void save_checkpoint(const std::string& path, const ParamStore& store) {
  std::vector<NamedTensor> records;
  for (const auto& name : store.names()) records.push_back({name, store.at(name)});
  write_container(path, records);
}

void load_checkpoint(const std::string& path, ParamStore& store) {
  const auto records = read_container(path);
  for (const auto& rec : records) {
    Tensor& dst = store.at(rec.name);
    if (dst.shape() != rec.tensor.shape()) {
      throw std::runtime_error("checkpoint shape mismatch for " + rec.name + ": file " +
                               shape_str(rec.tensor.shape()) + " vs model " + shape_str(dst.shape()));
    }
    dst.values() = rec.tensor.values();
  }
  // every model entry must have been covered
  if (records.size() != store.names().size()) {
    throw std::runtime_error("checkpoint record count mismatch for " + path);
  }
}

}  // namespace gprodom::nn
