#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace llie {

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  bool is_leaf = true;
  bool recorded = false;  // produced by an op currently on the tape

  TensorImpl() = default;
  TensorImpl(const TensorImpl&) = delete;
  TensorImpl& operator=(const TensorImpl&) = delete;
  ~TensorImpl();  // hands data and grad back to the buffer pool
};

// Per-thread recycling of large float buffers. Training allocates the same
// shapes every step; reusing them avoids page-faulting fresh memory each
// time. Contents of an acquired buffer are unspecified.
std::vector<float> acquire_buffer(std::size_t n);
void release_buffer(std::vector<float>&& buf);

// RAII scratch buffer from the pool.
struct ScratchBuffer {
  std::vector<float> v;
  explicit ScratchBuffer(std::size_t n) : v(acquire_buffer(n)) {}
  ~ScratchBuffer() { release_buffer(std::move(v)); }
  ScratchBuffer(const ScratchBuffer&) = delete;
  ScratchBuffer& operator=(const ScratchBuffer&) = delete;
  float* data() { return v.data(); }
};

}  // namespace detail

// Dense float tensor with shared storage. Copying a Tensor copies the
// handle, not the data; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_vector(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(int i) const;
  int rank() const { return static_cast<int>(shape().size()); }
  std::int64_t numel() const;

  std::span<const float> data() const;
  // Direct write access for initializers, loaders and the optimizer.
  std::span<float> mutable_data();

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  void zero_grad();

  float item() const;
  Tensor clone() const;
  Tensor detach() const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// ---- recording ----------------------------------------------------------

bool grad_enabled();

// Disables recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Number of nodes currently recorded on this thread's tape.
std::size_t graph_size();
// Drops the tape without running backward.
void clear_graph();

// Runs the tape in reverse from a scalar loss, accumulating (+=) into the
// grad of every requires_grad tensor that the loss depends on, then clears
// the tape. Throws if the loss is not a scalar or was not recorded (including
// a second call without re-running the forward pass).
void backward(const Tensor& loss);

namespace detail {

// Appends a node to the tape. `run` is invoked during backward once the
// output's gradient is complete.
void record(const Tensor& output, std::function<void()> run);

// Whether any of the inputs needs a gradient and recording is on.
bool should_record(std::initializer_list<const Tensor*> inputs);

// grad += src, allocating the grad buffer on first use.
void accumulate_grad(TensorImpl& t, std::span<const float> src);
std::vector<float>& ensure_grad(TensorImpl& t);

}  // namespace detail

}  // namespace llie
