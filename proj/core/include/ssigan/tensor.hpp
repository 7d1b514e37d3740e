#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace ssigan::ad {

enum class Mode { kTraining, kInference };

using Shape = std::vector<std::int64_t>;

std::string shape_to_string(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a backward pass touches it
  bool requires_grad = false;

  std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

// Lightweight handle over shared tensor storage. Copies alias the same data.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v);

  bool defined() const { return node != nullptr; }
  const Shape& shape() const { return node->shape; }
  std::int64_t size() const { return node->size(); }
  std::int64_t dim(int i) const { return node->shape[i]; }
  int ndim() const { return static_cast<int>(node->shape.size()); }

  double* data() { return node->values.data(); }
  const double* data() const { return node->values.data(); }
  double* grad() { return node->grad.data(); }
  const double* grad() const { return node->grad.data(); }
  bool requires_grad() const { return node->requires_grad; }
  void set_requires_grad(bool v) { node->requires_grad = v; }
  void zero_grad() {
    if (!node->grad.empty()) node->grad.assign(node->values.size(), 0.0);
  }

  double item() const;

  std::shared_ptr<TensorData> node;
};

// Reverse-mode tape: records closures during the forward pass and replays
// them in exact reverse order. One tape per training step; not thread-safe.
class Tape {
 public:
  void record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }

  // Seeds the (scalar) loss gradient with 1 and propagates adjoints.
  void backward(Tensor& loss);

  void clear() { steps_.clear(); }
  std::size_t size() const { return steps_.size(); }

 private:
  std::vector<std::function<void()>> steps_;
};

}  // namespace ssigan::ad
