#include "gprodom/params.hpp"

#include <cmath>
#include <stdexcept>

namespace gprodom::nn {

Tensor ParamStore::create(const std::string& name, Shape shape, const std::string& init,
                          std::int64_t fan_in, std::mt19937_64& rng) {
  if (entries_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Tensor t;
  if (init == "zeros") {
    t = Tensor::zeros(std::move(shape), true);
  } else if (init == "ones") {
    t = Tensor::full(std::move(shape), 1.0, true);
  } else if (init == "he") {
    if (fan_in < 1) throw std::invalid_argument("he init requires fan_in >= 1 for " + name);
    t = Tensor::zeros(std::move(shape), true);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : t.values()) v = dist(rng);
  } else {
    throw std::invalid_argument("unknown init kind: " + init);
  }
  entries_[name] = Entry{t, true};
  return t;
}

Tensor ParamStore::create_buffer(const std::string& name, Shape shape, double fill) {
  if (entries_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Tensor t = Tensor::full(std::move(shape), fill, false);
  entries_[name] = Entry{t, false};
  return t;
}

bool ParamStore::contains(const std::string& name) const { return entries_.count(name) > 0; }

Tensor& ParamStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second.tensor;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second.tensor;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

std::vector<std::string> ParamStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) {
    if (v.trainable) out.push_back(k);
  }
  return out;
}

std::int64_t ParamStore::trainable_count() const {
  std::int64_t n = 0;
  for (const auto& [k, v] : entries_) {
    if (v.trainable) n += v.tensor.size();
  }
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [k, v] : entries_) {
    if (v.trainable) v.tensor.zero_grad();
  }
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [k, v] : entries_) out.entries_[k] = Entry{v.tensor.clone(), v.trainable};
  return out;
}

void ParamStore::load_values_from(const ParamStore& other) {
  if (entries_.size() != other.entries_.size()) {
    throw std::invalid_argument("parameter set size mismatch on load");
  }
  for (auto& [k, v] : entries_) {
    auto it = other.entries_.find(k);
    if (it == other.entries_.end()) throw std::invalid_argument("missing parameter on load: " + k);
    if (it->second.tensor.shape() != v.tensor.shape()) {
      throw std::invalid_argument("parameter shape mismatch on load: " + k);
    }
    v.tensor.values() = it->second.tensor.values();
  }
}

}  // namespace gprodom::nn
