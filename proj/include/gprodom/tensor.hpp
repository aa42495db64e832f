#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace gprodom::nn {

// Extents, outermost first. Rank 1..4; the network uses NCHW for rank 4.
using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

/// Dense double-precision tensor with an optional gradient buffer.
/// Copying a Tensor copies the handle, not the storage; two handles to the
/// same node see each other's writes. Use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  int extent(int axis) const;
  std::int64_t size() const;

  std::vector<double>& values();
  const std::vector<double>& values() const;

  double item() const;  // scalar convenience; throws if size() != 1

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  // True when this tensor participates in gradient flow (a leaf with
  // requires_grad, or an op output derived from one while a tape was active).
  bool tracked() const;
  void set_tracked(bool flag);

  bool has_grad() const;
  std::vector<double>& grad();              // allocates zeros on first use
  const std::vector<double>& grad() const;  // throws if absent
  void accumulate_grad(const std::vector<double>& g);
  void zero_grad();

  Tensor clone() const;  // deep copy of data (grad not copied)

  // Node identity, used by the tape and the optimizer for bookkeeping.
  const void* id() const { return node_.get(); }

 private:
  struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool tracked = false;
  };
  std::shared_ptr<Node> node_;
  Node& n();
  const Node& n() const;
};

/// Ordered record of executed operations. Ops append their backward closure
/// in execution order, which is a topological order of the data flow, so
/// replaying the records once in reverse propagates gradients correctly and
/// sums contributions when a tensor feeds several consumers.
/// One writer per tape; a tape belongs to a single training context.
class Tape {
 public:
  void record(std::function<void()> backward);
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  void clear() { records_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays every record once, newest first.
  // Throws if loss is not a tracked scalar or the tape is empty.
  void backward(Tensor& loss);

 private:
  std::vector<std::function<void()>> records_;
};

}  // namespace gprodom::nn
