#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace rulex {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
// 64-byte aligned storage. Vectorized kernels peel unaligned leading
// elements, so the summation order (and the last bits of a result) would
// otherwise depend on where the allocator happened to place a buffer.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};
using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

struct TensorImpl {
  Shape shape;
  FloatBuffer data;
  FloatBuffer grad;  // empty until first needed
  bool requires_grad = false;
};
}  // namespace detail

// Dense row-major float tensor. Copies share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<float> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<float> data();
  std::span<const float> data() const;
  float item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  std::span<float> grad();
  std::span<const float> grad() const;
  // Allocates a zero gradient buffer if none is present.
  std::span<float> ensure_grad();
  void zero_grad();

  Tensor clone() const;
  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Tape of executed differentiable operations. Ops append a backward closure
// when recording is on and any input requires a gradient; backward() replays
// the closures in exact reverse order.
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return recording_; }
  bool should_record(std::initializer_list<const Tensor*> inputs) const;

  void record(std::string op, std::vector<Tensor> inputs, Tensor output,
              std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and accumulates into every requires_grad
  // input. Intermediate gradients are reset first, so repeated calls on the
  // same tape are reproducible once leaf gradients are zeroed.
  void backward(const Tensor& loss);

  std::size_t num_ops() const noexcept { return nodes_.size(); }
  const std::string& op_name(std::size_t i) const { return nodes_.at(i).op; }
  // Order in which the last backward() visited nodes (indices into the tape).
  const std::vector<std::size_t>& last_backward_order() const noexcept { return visit_order_; }

  void clear();

 private:
  struct Node {
    std::string op;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };
  bool recording_;
  std::vector<Node> nodes_;
  std::vector<std::size_t> visit_order_;
};

}  // namespace rulex
