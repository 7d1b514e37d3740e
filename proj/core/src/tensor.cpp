#include "ssigan/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace ssigan::ad {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, bool requires_grad) {
  node = std::make_shared<TensorData>();
  node->shape = std::move(shape);
  node->values.assign(static_cast<std::size_t>(shape_numel(node->shape)), 0.0);
  node->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  const auto n = shape_numel(shape);
  if (n != static_cast<std::int64_t>(values.size()))
    throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                " values do not fill shape " +
                                shape_to_string(shape));
  node = std::make_shared<TensorData>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v) {
  return Tensor(Shape{1}, std::vector<double>{v});
}

double Tensor::item() const {
  if (size() != 1)
    throw std::logic_error("item() on tensor of size " +
                           std::to_string(size()));
  return node->values[0];
}

void Tape::backward(Tensor& loss) {
  if (loss.size() != 1)
    throw std::logic_error("backward: loss must be scalar, got shape " +
                           shape_to_string(loss.shape()));
  loss.node->ensure_grad();
  loss.node->grad[0] = 1.0;
  // run in reverse, destroying each closure right after it fires so the
  // activations it captured are released as the pass walks down the tape
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
    (*it)();
    *it = nullptr;
  }
  steps_.clear();
}

}  // namespace ssigan::ad
