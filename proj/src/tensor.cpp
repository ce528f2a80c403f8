#include "rulex/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "rulex/error.hpp"

namespace rulex {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<float> values, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  for (auto e : shape) require(e > 0, ErrorKind::Dimension, "tensor extents must be positive: " + shape_str(shape));
  require(shape_numel(shape) == values.size(), ErrorKind::Dimension,
          "shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) + " values");
  impl_->shape = std::move(shape);
  impl_->data.assign(values.begin(), values.end());
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t;
  for (auto e : shape) require(e > 0, ErrorKind::Dimension, "tensor extents must be positive: " + shape_str(shape));
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->data.assign(shape_numel(shape), 0.0f);
  t.impl_->shape = std::move(shape);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  require(defined(), ErrorKind::Contract, "use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  require(axis < s.size(), ErrorKind::Index, "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<float> Tensor::data() {
  require(defined(), ErrorKind::Contract, "use of undefined tensor");
  return impl_->data;
}

std::span<const float> Tensor::data() const {
  require(defined(), ErrorKind::Contract, "use of undefined tensor");
  return impl_->data;
}

float Tensor::item() const {
  require(numel() == 1, ErrorKind::Contract, "item() requires a single-element tensor, got " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  require(defined(), ErrorKind::Contract, "use of undefined tensor");
  impl_->requires_grad = on;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<float> Tensor::grad() {
  require(has_grad(), ErrorKind::Contract, "tensor has no gradient buffer");
  return impl_->grad;
}

std::span<const float> Tensor::grad() const {
  require(has_grad(), ErrorKind::Contract, "tensor has no gradient buffer");
  return impl_->grad;
}

std::span<float> Tensor::ensure_grad() {
  require(defined(), ErrorKind::Contract, "use of undefined tensor");
  if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (has_grad()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>(*impl_);
  return t;
}

bool Graph::should_record(std::initializer_list<const Tensor*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void Graph::record(std::string op, std::vector<Tensor> inputs, Tensor output, std::function<void()> backward) {
  output.set_requires_grad(true);
  nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(output), std::move(backward)});
}

void Graph::backward(const Tensor& loss) {
  require(loss.defined() && loss.numel() == 1, ErrorKind::Contract,
          "backward() requires a scalar loss, got " + (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  require(loss.requires_grad(), ErrorKind::Contract, "loss does not depend on any tensor that requires grad");

  for (auto& node : nodes_) {
    node.output.ensure_grad();
    node.output.zero_grad();
  }
  for (auto& node : nodes_)
    for (auto& in : node.inputs)
      if (in.requires_grad()) in.ensure_grad();

  Tensor seed = loss;
  seed.ensure_grad()[0] = 1.0f;

  visit_order_.clear();
  visit_order_.reserve(nodes_.size());
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    visit_order_.push_back(i);
    nodes_[i].backward();
  }
}

void Graph::clear() {
  nodes_.clear();
  visit_order_.clear();
}

}  // namespace rulex
