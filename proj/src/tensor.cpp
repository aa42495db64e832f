#include "gprodom/tensor.hpp"

#include <numeric>
#include <stdexcept>

namespace gprodom::nn {

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) {
    if (e <= 0) throw std::invalid_argument("tensor extent must be positive, got shape " + shape_str(s));
    n *= e;
  }
  return n;
}

Tensor::Node& Tensor::n() {
  if (!node_) throw std::runtime_error("use of undefined tensor");
  return *node_;
}

const Tensor::Node& Tensor::n() const {
  if (!node_) throw std::runtime_error("use of undefined tensor");
  return *node_;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t;
  const auto count = shape_numel(shape);
  t.node_ = std::make_shared<Node>();
  t.node_->shape = std::move(shape);
  t.node_->data.assign(static_cast<std::size_t>(count), value);
  t.node_->requires_grad = requires_grad;
  t.node_->tracked = requires_grad;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  const auto count = shape_numel(shape);
  if (static_cast<std::int64_t>(values.size()) != count) {
    throw std::invalid_argument("data length " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape));
  }
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->shape = std::move(shape);
  t.node_->data = std::move(values);
  t.node_->requires_grad = requires_grad;
  t.node_->tracked = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return n().shape; }
int Tensor::rank() const { return static_cast<int>(n().shape.size()); }

int Tensor::extent(int axis) const {
  const auto& s = n().shape;
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::size() const { return static_cast<std::int64_t>(n().data.size()); }

std::vector<double>& Tensor::values() { return n().data; }
const std::vector<double>& Tensor::values() const { return n().data; }

double Tensor::item() const {
  if (size() != 1) {
    throw std::invalid_argument("item() requires a scalar, got shape " + shape_str(shape()));
  }
  return n().data[0];
}

bool Tensor::requires_grad() const { return n().requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  n().requires_grad = flag;
  if (flag) n().tracked = true;
}

bool Tensor::tracked() const { return n().tracked; }
void Tensor::set_tracked(bool flag) { n().tracked = flag; }

bool Tensor::has_grad() const { return defined() && !n().grad.empty(); }

std::vector<double>& Tensor::grad() {
  auto& node = n();
  if (node.grad.empty()) node.grad.assign(node.data.size(), 0.0);
  return node.grad;
}

const std::vector<double>& Tensor::grad() const {
  const auto& node = n();
  if (node.grad.empty()) throw std::runtime_error("tensor has no gradient");
  return node.grad;
}

void Tensor::accumulate_grad(const std::vector<double>& g) {
  auto& dst = grad();
  if (g.size() != dst.size()) {
    throw std::invalid_argument("gradient length " + std::to_string(g.size()) +
                                " does not match tensor of shape " + shape_str(shape()));
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

void Tensor::zero_grad() {
  auto& node = n();
  if (!node.grad.empty()) node.grad.assign(node.data.size(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->shape = n().shape;
  t.node_->data = n().data;
  t.node_->requires_grad = n().requires_grad;
  t.node_->tracked = n().tracked;
  return t;
}

void Tape::record(std::function<void()> backward) {
  records_.push_back(std::move(backward));
}

void Tape::backward(Tensor& loss) {
  if (records_.empty()) throw std::runtime_error("backward on an empty tape");
  if (loss.size() != 1) {
    throw std::invalid_argument("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.tracked()) {
    throw std::runtime_error("loss does not depend on any tracked tensor");
  }
  loss.grad()[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
}

}  // namespace gprodom::nn
