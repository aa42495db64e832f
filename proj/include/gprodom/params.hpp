#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "gprodom/tensor.hpp"

namespace gprodom::nn {

/// Named parameter set for a model: trainable tensors plus non-trainable
/// buffers (batch-norm running statistics). Names are unique and stable;
/// they key the checkpoint round-trip.
class ParamStore {
 public:
  // init: "zeros", "ones", or "he" (Gaussian, std = sqrt(2 / fan_in))
  Tensor create(const std::string& name, Shape shape, const std::string& init,
                std::int64_t fan_in, std::mt19937_64& rng);
  Tensor create_buffer(const std::string& name, Shape shape, double fill);

  bool contains(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  std::vector<std::string> names() const;            // all entries, sorted
  std::vector<std::string> trainable_names() const;  // sorted

  std::int64_t trainable_count() const;  // total scalar parameter count

  void zero_grads();

  // Deep copy (used for best-checkpoint snapshots).
  ParamStore clone() const;
  // Copies values from `other` into identically named entries; throws on
  // any mismatch in the name set or shapes.
  void load_values_from(const ParamStore& other);

 private:
  struct Entry {
    Tensor tensor;
    bool trainable = false;
  };
  std::map<std::string, Entry> entries_;
};

}  // namespace gprodom::nn
