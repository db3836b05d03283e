#include "llie/tensor.hpp"

#include <algorithm>
#include <unordered_map>

#include "llie/errors.hpp"

namespace llie {

namespace {

struct Node {
  std::shared_ptr<detail::TensorImpl> output;
  std::function<void()> run;
};

struct Tape {
  std::vector<Node> nodes;
  bool grad_enabled = true;

  void clear() {
    for (auto& n : nodes) n.output->recorded = false;
    nodes.clear();
  }
  ~Tape() { clear(); }
};

Tape& tape() {
  thread_local Tape t;
  return t;
}

// Buffers below kMinPooled floats go straight back to malloc; the pool keeps
// at most kMaxPooledBytes and only hands out exact size matches.
constexpr std::size_t kMinPooled = 1 << 14;
constexpr std::size_t kMaxPooledBytes = std::size_t(512) << 20;

struct BufferPool {
  std::unordered_map<std::size_t, std::vector<std::vector<float>>> free;
  std::size_t bytes = 0;
  bool alive = true;
  ~BufferPool() { alive = false; }
};

BufferPool& pool() {
  thread_local BufferPool p;
  return p;
}

}  // namespace

namespace detail {

std::vector<float> acquire_buffer(std::size_t n) {
  auto& p = pool();
  if (n >= kMinPooled && p.alive) {
    auto it = p.free.find(n);
    if (it != p.free.end() && !it->second.empty()) {
      std::vector<float> v = std::move(it->second.back());
      it->second.pop_back();
      p.bytes -= n * sizeof(float);
      return v;
    }
  }
  std::vector<float> v;
  v.resize(n);
  return v;
}

void release_buffer(std::vector<float>&& buf) {
  auto& p = pool();
  const std::size_t n = buf.size();
  if (n < kMinPooled || !p.alive || buf.capacity() != n || p.bytes + n * sizeof(float) > kMaxPooledBytes) {
    std::vector<float>().swap(buf);
    return;
  }
  p.bytes += n * sizeof(float);
  p.free[n].push_back(std::move(buf));
}

TensorImpl::~TensorImpl() {
  release_buffer(std::move(data));
  release_buffer(std::move(grad));
}

}  // namespace detail

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  for (auto d : shape)
    if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape));
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->data = detail::acquire_buffer(static_cast<std::size_t>(numel_of(shape)));
  std::fill(impl->data.begin(), impl->data.end(), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_vector(Shape shape, std::vector<float> values, bool requires_grad) {
  if (numel_of(shape) != static_cast<std::int64_t>(values.size()))
    throw ShapeError("from_vector: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return full({}, value, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::int64_t Tensor::dim(int i) const {
  const auto& s = impl_->shape;
  if (i < 0) i += static_cast<int>(s.size());
  if (i < 0 || i >= static_cast<int>(s.size())) throw ShapeError("dim index out of range for " + shape_str(s));
  return s[static_cast<std::size_t>(i)];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

std::span<const float> Tensor::data() const { return impl_->data; }
std::span<float> Tensor::mutable_data() { return impl_->data; }

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const float> Tensor::grad() const { return impl_->grad; }
std::span<float> Tensor::mutable_grad() { return detail::ensure_grad(*impl_); }

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = detail::acquire_buffer(impl_->data.size());
  std::copy(impl_->data.begin(), impl_->data.end(), impl->data.begin());
  impl->requires_grad = impl_->requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::detach() const {
  Tensor t = clone();
  t.impl_->requires_grad = false;
  return t;
}

bool grad_enabled() { return tape().grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(tape().grad_enabled) { tape().grad_enabled = false; }
NoGradGuard::~NoGradGuard() { tape().grad_enabled = previous_; }

std::size_t graph_size() { return tape().nodes.size(); }
void clear_graph() { tape().clear(); }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ShapeError("backward on undefined tensor");
  if (loss.numel() != 1) throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  auto& t = tape();
  if (!loss.impl()->recorded)
    throw Error("backward: loss was not recorded on this thread's graph (already consumed, or no input requires grad)");

  detail::ensure_grad(*loss.impl())[0] += 1.0f;
  for (auto it = t.nodes.rbegin(); it != t.nodes.rend(); ++it) {
    auto& out = *it->output;
    if (out.grad.empty()) continue;  // not reachable from the loss
    it->run();
    if (!out.is_leaf) detail::release_buffer(std::move(out.grad));
  }
  t.clear();
}

namespace detail {

void record(const Tensor& output, std::function<void()> run) {
  auto& impl = *output.impl();
  impl.requires_grad = true;
  impl.is_leaf = false;
  impl.recorded = true;
  tape().nodes.push_back(Node{output.impl_ptr(), std::move(run)});
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!tape().grad_enabled) return false;
  for (const Tensor* t : inputs)
    if (t && t->defined() && t->requires_grad()) return true;
  return false;
}

std::vector<float>& ensure_grad(TensorImpl& t) {
  if (t.grad.empty()) {
    t.grad = acquire_buffer(t.data.size());
    std::fill(t.grad.begin(), t.grad.end(), 0.0f);
  }
  return t.grad;
}

void accumulate_grad(TensorImpl& t, std::span<const float> src) {
  auto& g = ensure_grad(t);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
}

}  // namespace detail

}  // namespace llie
