#pragma once

#include <string>
#include <vector>

#include "gprodom/params.hpp"
#include "gprodom/tensor.hpp"

namespace gprodom::nn {

// Flat binary tensor container, also used for persisted B-scan stores.
// Layout: magic "GPRODOM1", version u32, then per-record:
//   name length u32, UTF-8 name, rank u32, extents u64[rank], f64 payload.
// All integers and doubles little-endian. Records are read until EOF.

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

void write_container(const std::string& path, const std::vector<NamedTensor>& records);
std::vector<NamedTensor> read_container(const std::string& path);

// ParamStore round-trip: records are written sorted by name so identical
// stores serialize to identical bytes.
void save_checkpoint(const std::string& path, const ParamStore& store);
void load_checkpoint(const std::string& path, ParamStore& store);

}  // namespace gprodom::nn
