#pragma once

// Reverse-mode autodiff over dense double tensors. Graph nodes are
// shared_ptr-owned; each op captures its parents and a backprop closure.
// Dense matrix kernels are delegated to Eigen, everything else is hand-rolled.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace endoseq {

// ---------------------------------------------------------------------------
// errors

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};

struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

struct TrainingError : std::runtime_error {
  explicit TrainingError(const std::string& msg) : std::runtime_error("training error: " + msg) {}
};

// ---------------------------------------------------------------------------
// shapes

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

// ---------------------------------------------------------------------------
// rng
//
// mt19937_64 is fully pinned by the standard, so raw draws are portable.
// Distribution shaping (uniform, gaussian, shuffle) is done by hand because
// the std distribution objects are implementation-defined.

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return gen_(); }

  // [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller with cached spare
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  std::size_t below(std::size_t n) {
    if (n == 0) throw ContractError("Rng::below: n must be positive");
    return static_cast<std::size_t>(next_u64() % n);
  }

  // Fisher-Yates; std::shuffle is implementation-defined, this one is not.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  // Deterministic named substream, independent of draw order on the parent.
  Rng stream(std::string_view name) const {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    return Rng(splitmix(seed_ ^ h));
  }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::uint64_t seed_;
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// grad mode

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

struct NoGrad {
  bool prev;
  NoGrad() : prev(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGrad() { detail::grad_mode_flag() = prev; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;
};

// ---------------------------------------------------------------------------
// tensor

struct TensorData {
  Shape shape;
  std::vector<double> v;
  std::vector<double> g;  // allocated lazily
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorData>> parents;
  std::function<void(TensorData&)> backprop;

  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() : d_(std::make_shared<TensorData>()) {}

  explicit Tensor(Shape shape, double fill = 0.0) : d_(std::make_shared<TensorData>()) {
    d_->shape = std::move(shape);
    d_->v.assign(shape_numel(d_->shape), fill);
  }

  Tensor(Shape shape, std::vector<double> values) : d_(std::make_shared<TensorData>()) {
    if (shape_numel(shape) != values.size())
      throw DimensionError("tensor init: shape " + shape_str(shape) + " does not hold " +
                           std::to_string(values.size()) + " values");
    d_->shape = std::move(shape);
    d_->v = std::move(values);
  }

  static Tensor scalar(double x, bool requires_grad = false) {
    Tensor t(Shape{1}, std::vector<double>{x});
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (double& x : t.d_->v) x = rng.gaussian() * stddev;
    return t;
  }

  const Shape& shape() const { return d_->shape; }
  std::size_t ndim() const { return d_->shape.size(); }
  std::size_t size() const { return d_->v.size(); }
  std::size_t dim(std::size_t i) const { return d_->shape.at(i); }

  const std::vector<double>& values() const { return d_->v; }
  std::vector<double>& values() { return d_->v; }

  const std::vector<double>& grad() const {
    d_->ensure_grad();
    return d_->g;
  }
  std::vector<double>& grad() {
    d_->ensure_grad();
    return d_->g;
  }
  bool has_grad() const { return d_->g.size() == d_->v.size(); }

  double item() const {
    if (size() != 1) throw ContractError("item: tensor has " + std::to_string(size()) + " elements");
    return d_->v[0];
  }

  double at(std::initializer_list<std::size_t> idx) const {
    auto st = row_major_strides(d_->shape);
    std::size_t flat = 0, i = 0;
    for (std::size_t k : idx) flat += k * st[i++];
    return d_->v[flat];
  }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool on) { d_->requires_grad = on; }

  void zero_grad() {
    if (!d_->g.empty()) std::fill(d_->g.begin(), d_->g.end(), 0.0);
  }

  // Breaks the graph: value copy, no parents, no grad requirement.
  Tensor detach() const {
    Tensor t(d_->shape, d_->v);
    return t;
  }

  // Reverse-mode pass from a scalar root. Interior grads are reset each call;
  // leaf grads accumulate across calls until zero_grad.
  void backward() const {
    if (size() != 1)
      throw ContractError("backward: loss must be scalar, got shape " + shape_str(d_->shape));
    std::vector<TensorData*> order;
    topo_sort(order);
    for (TensorData* n : order) {
      if (!n->parents.empty()) {
        n->ensure_grad();
        std::fill(n->g.begin(), n->g.end(), 0.0);
      }
    }
    d_->ensure_grad();
    d_->g[0] = d_->parents.empty() ? d_->g[0] + 1.0 : 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backprop) (*it)->backprop(**it);
  }

  std::shared_ptr<TensorData> node() const { return d_; }

  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}

 private:
  void topo_sort(std::vector<TensorData*>& order) const {
    std::unordered_set<TensorData*> seen;
    std::vector<std::pair<TensorData*, std::size_t>> stack;
    stack.emplace_back(d_.get(), 0);
    seen.insert(d_.get());
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        TensorData* p = node->parents[idx++].get();
        if (seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<TensorData> d_;
};

namespace detail {

inline Tensor make_op(Shape shape, std::vector<double> values,
                      std::vector<Tensor> parents,
                      std::function<void(TensorData&)> backprop) {
  Tensor out(std::move(shape), std::move(values));
  if (!grad_enabled()) return out;
  bool track = false;
  for (const Tensor& p : parents)
    if (p.requires_grad()) track = true;
  if (!track) return out;
  auto node = out.node();
  node->requires_grad = true;
  for (const Tensor& p : parents)
    if (p.requires_grad()) node->parents.push_back(p.node());
  node->backprop = std::move(backprop);
  return out;
}

// Accumulate src into dst->g if dst participates in the graph.
inline bool wants_grad(const std::shared_ptr<TensorData>& p) { return p->requires_grad; }

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
}

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_op(a.shape(), std::move(v), {a, b}, [pa, pb](TensorData& self) {
    if (detail::wants_grad(pa)) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.g.size(); ++i) pa->g[i] += self.g[i];
    }
    if (detail::wants_grad(pb)) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.g.size(); ++i) pb->g[i] += self.g[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] - b.values()[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_op(a.shape(), std::move(v), {a, b}, [pa, pb](TensorData& self) {
    if (detail::wants_grad(pa)) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.g.size(); ++i) pa->g[i] += self.g[i];
    }
    if (detail::wants_grad(pb)) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.g.size(); ++i) pb->g[i] -= self.g[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_op(a.shape(), std::move(v), {a, b}, [pa, pb](TensorData& self) {
    if (detail::wants_grad(pa)) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.g.size(); ++i) pa->g[i] += self.g[i] * pb->v[i];
    }
    if (detail::wants_grad(pb)) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.g.size(); ++i) pb->g[i] += self.g[i] * pa->v[i];
    }
  });
}

inline Tensor add_const(const Tensor& a, double c) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + c;
  auto pa = a.node();
  return detail::make_op(a.shape(), std::move(v), {a}, [pa](TensorData& self) {
    if (!detail::wants_grad(pa)) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.g.size(); ++i) pa->g[i] += self.g[i];
  });
}

inline Tensor mul_const(const Tensor& a, double c) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * c;
  auto pa = a.node();
  return detail::make_op(a.shape(), std::move(v), {a}, [pa, c](TensorData& self) {
    if (!detail::wants_grad(pa)) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.g.size(); ++i) pa->g[i] += self.g[i] * c;
  });
}

// out = a * s, s a 1-element tensor (learnable scalar gate)
inline Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw DimensionError("scale_by: scale must be scalar, got " + shape_str(s.shape()));
  double sv = s.values()[0];
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * sv;
  auto pa = a.node(), ps = s.node();
  return detail::make_op(a.shape(), std::move(v), {a, s}, [pa, ps, sv](TensorData& self) {
    if (detail::wants_grad(pa)) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.g.size(); ++i) pa->g[i] += self.g[i] * sv;
    }
    if (detail::wants_grad(ps)) {
      ps->ensure_grad();
      double acc = 0.0;
      for (std::size_t i = 0; i < self.g.size(); ++i) acc += self.g[i] * pa->v[i];
      ps->g[0] += acc;
    }
  });
}

inline Tensor neg(const Tensor& a) { return mul_const(a, -1.0); }

inline Tensor relu(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
  auto pa = a.node();
  return detail::make_op(a.shape(), std::move(v), {a}, [pa](TensorData& self) {
    if (!detail::wants_grad(pa)) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.g.size(); ++i)
      if (pa->v[i] > 0.0) pa->g[i] += self.g[i];
  });
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / (1.0 + std::exp(-a.values()[i]));
  auto pa = a.node();
  auto out_v = std::make_shared<std::vector<double>>(v);
  return detail::make_op(a.shape(), std::move(v), {a}, [pa, out_v](TensorData& self) {
    if (!detail::wants_grad(pa)) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.g.size(); ++i) {
      double s = (*out_v)[i];
      pa->g[i] += self.g[i] * s * (1.0 - s);
    }
  });
}

inline Tensor tanh_act(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(a.values()[i]);
  auto pa = a.node();
  auto out_v = std::make_shared<std::vector<double>>(v);
  return detail::make_op(a.shape(), std::move(v), {a}, [pa, out_v](TensorData& self) {
    if (!detail::wants_grad(pa)) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.g.size(); ++i) {
      double t = (*out_v)[i];
      pa->g[i] += self.g[i] * (1.0 - t * t);
    }
  });
}

// tanh approximation; smooth everywhere, which keeps finite-difference
// checks clean (no kinks in the feed-forward path)
inline Tensor gelu(const Tensor& a) {
  constexpr double kA = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kC = 0.044715;
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double x = a.values()[i];
    v[i] = 0.5 * x * (1.0 + std::tanh(kA * (x + kC * x * x * x)));
  }
  auto pa = a.node();
  return detail::make_op(a.shape(), std::move(v), {a}, [pa](TensorData& self) {
    if (!detail::wants_grad(pa)) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.g.size(); ++i) {
      double x = pa->v[i];
      double u = kA * (x + kC * x * x * x);
      double t = std::tanh(u);
      double du = kA * (1.0 + 3.0 * kC * x * x);
      pa->g[i] += self.g[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
    }
  });
}

inline Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::min(std::max(a.values()[i], lo), hi);
  auto pa = a.node();
  return detail::make_op(a.shape(), std::move(v), {a}, [pa, lo, hi](TensorData& self) {
    if (!detail::wants_grad(pa)) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.g.size(); ++i)
      if (pa->v[i] >= lo && pa->v[i] <= hi) pa->g[i] += self.g[i];
  });
}

inline Tensor abs_t(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::fabs(a.values()[i]);
  auto pa = a.node();
  return detail::make_op(a.shape(), std::move(v), {a}, [pa](TensorData& self) {
    if (!detail::wants_grad(pa)) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.g.size(); ++i) {
      double x = pa->v[i];
      if (x > 0.0)
        pa->g[i] += self.g[i];
      else if (x < 0.0)
        pa->g[i] -= self.g[i];
    }
  });
}

// ---------------------------------------------------------------------------
// reductions

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double x : a.values()) acc += x;
  auto pa = a.node();
  return detail::make_op({1}, {acc}, {a}, [pa](TensorData& self) {
    if (!detail::wants_grad(pa)) return;
    pa->ensure_grad();
    for (double& gi : pa->g) gi += self.g[0];
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ContractError("mean: empty tensor");
  double acc = 0.0;
  for (double x : a.values()) acc += x;
  double inv = 1.0 / static_cast<double>(a.size());
  auto pa = a.node();
  return detail::make_op({1}, {acc * inv}, {a}, [pa, inv](TensorData& self) {
    if (!detail::wants_grad(pa)) return;
    pa->ensure_grad();
    for (double& gi : pa->g) gi += self.g[0] * inv;
  });
}

// ---------------------------------------------------------------------------
// shape ops

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape) +
                         " changes element count");
  auto pa = a.node();
  return detail::make_op(std::move(shape), a.values(), {a}, [pa](TensorData& self) {
    if (!detail::wants_grad(pa)) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.g.size(); ++i) pa->g[i] += self.g[i];
  });
}

namespace detail {

// Swap two axes. Dimensions are collapsed to [outer, A, mid, B, inner] with
// the inner run copied contiguously.
inline void transpose_copy(const Shape& in_shape, const double* in, double* out,
                           std::size_t ax1, std::size_t ax2) {
  std::size_t outer = 1, mid = 1, inner = 1;
  for (std::size_t i = 0; i < ax1; ++i) outer *= in_shape[i];
  for (std::size_t i = ax1 + 1; i < ax2; ++i) mid *= in_shape[i];
  for (std::size_t i = ax2 + 1; i < in_shape.size(); ++i) inner *= in_shape[i];
  const std::size_t A = in_shape[ax1], B = in_shape[ax2];
  // in index: ((o*A + a)*mid + m)*B + b, times inner
  // out index: ((o*B + b)*mid + m)*A + a, times inner
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t m = 0; m < mid; ++m)
        for (std::size_t b = 0; b < B; ++b) {
          const double* src = in + (((o * A + a) * mid + m) * B + b) * inner;
          double* dst = out + (((o * B + b) * mid + m) * A + a) * inner;
          std::copy(src, src + inner, dst);
        }
}

}  // namespace detail

inline Tensor transpose(const Tensor& a, std::size_t ax1, std::size_t ax2) {
  if (ax1 >= a.ndim() || ax2 >= a.ndim())
    throw DimensionError("transpose: axes out of range for " + shape_str(a.shape()));
  if (ax1 == ax2) return reshape(a, a.shape());
  if (ax1 > ax2) std::swap(ax1, ax2);
  Shape out_shape = a.shape();
  std::swap(out_shape[ax1], out_shape[ax2]);
  std::vector<double> v(a.size());
  detail::transpose_copy(a.shape(), a.values().data(), v.data(), ax1, ax2);
  auto pa = a.node();
  Shape in_shape = a.shape();
  return detail::make_op(out_shape, std::move(v), {a},
                         [pa, out_shape, ax1, ax2](TensorData& self) {
                           if (!detail::wants_grad(pa)) return;
                           pa->ensure_grad();
                           std::vector<double> tmp(self.g.size());
                           detail::transpose_copy(out_shape, self.g.data(), tmp.data(), ax1, ax2);
                           for (std::size_t i = 0; i < tmp.size(); ++i) pa->g[i] += tmp[i];
                         });
}

inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
  if (axis >= a.ndim()) throw DimensionError("slice: axis out of range for " + shape_str(a.shape()));
  if (start + len > a.dim(axis))
    throw DimensionError("slice: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") exceeds axis " + std::to_string(axis) + " of " + shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.ndim(); ++i) inner *= a.dim(i);
  const std::size_t n = a.dim(axis);
  std::vector<double> v(shape_numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o)
    std::copy(a.values().data() + (o * n + start) * inner,
              a.values().data() + (o * n + start + len) * inner, v.data() + o * len * inner);
  auto pa = a.node();
  return detail::make_op(out_shape, std::move(v), {a},
                         [pa, outer, inner, n, start, len](TensorData& self) {
                           if (!detail::wants_grad(pa)) return;
                           pa->ensure_grad();
                           for (std::size_t o = 0; o < outer; ++o) {
                             const double* src = self.g.data() + o * len * inner;
                             double* dst = pa->g.data() + (o * n + start) * inner;
                             for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                           }
                         });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no tensors given");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw DimensionError("concat: axis out of range for " + shape_str(s0));
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != s0.size())
      throw DimensionError("concat: rank mismatch " + shape_str(s0) + " vs " + shape_str(p.shape()));
    for (std::size_t i = 0; i < s0.size(); ++i)
      if (i != axis && p.dim(i) != s0[i])
        throw DimensionError("concat: shapes " + shape_str(s0) + " and " + shape_str(p.shape()) +
                             " differ off-axis");
    total += p.dim(axis);
  }
  Shape out_shape = s0;
  out_shape[axis] = total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<double> v(shape_numel(out_shape));
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    std::size_t n = p.dim(axis);
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(p.values().data() + o * n * inner, p.values().data() + (o + 1) * n * inner,
                v.data() + (o * total + offset) * inner);
    offset += n;
  }
  std::vector<std::size_t> sizes;
  std::vector<std::shared_ptr<TensorData>> nodes;
  for (const Tensor& p : parts) {
    sizes.push_back(p.dim(axis));
    nodes.push_back(p.node());
  }
  return detail::make_op(out_shape, std::move(v), parts,
                         [nodes, sizes, outer, inner, total](TensorData& self) {
                           std::size_t offset = 0;
                           for (std::size_t k = 0; k < nodes.size(); ++k) {
                             std::size_t n = sizes[k];
                             if (detail::wants_grad(nodes[k])) {
                               nodes[k]->ensure_grad();
                               for (std::size_t o = 0; o < outer; ++o) {
                                 const double* src = self.g.data() + (o * total + offset) * inner;
                                 double* dst = nodes[k]->g.data() + o * n * inner;
                                 for (std::size_t i = 0; i < n * inner; ++i) dst[i] += src[i];
                               }
                             }
                             offset += n;
                           }
                         });
}

// ---------------------------------------------------------------------------
// matmul
//
// Supports (...,m,k)x(k,n), (m,k)x(...,k,n) and matching batched stacks.
// The 2D right-hand side collapses to a single GEMM, which is the hot path.

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() < 2)
    throw DimensionError("matmul: needs rank >= 2, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const std::size_t m = a.dim(a.ndim() - 2), k = a.dim(a.ndim() - 1);
  const std::size_t k2 = b.dim(b.ndim() - 2), n = b.dim(b.ndim() - 1);
  if (k != k2)
    throw DimensionError("matmul: inner dims of " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " do not match");
  Shape a_lead(a.shape().begin(), a.shape().end() - 2);
  Shape b_lead(b.shape().begin(), b.shape().end() - 2);
  if (!a_lead.empty() && !b_lead.empty() && a_lead != b_lead)
    throw DimensionError("matmul: batch dims of " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " do not match");
  const Shape& lead = a_lead.empty() ? b_lead : a_lead;
  const std::size_t batch = shape_numel(lead);
  Shape out_shape = lead;
  out_shape.push_back(m);
  out_shape.push_back(n);

  using detail::ECMap;
  using detail::EMap;
  std::vector<double> v(shape_numel(out_shape));
  const bool a_batched = !a_lead.empty(), b_batched = !b_lead.empty();
  if (!b_batched) {
    ECMap A(a.values().data(), batch * m, k);
    ECMap B(b.values().data(), k, n);
    EMap O(v.data(), batch * m, n);
    O.noalias() = A * B;
  } else if (!a_batched) {
    ECMap A(a.values().data(), m, k);
    for (std::size_t s = 0; s < batch; ++s) {
      ECMap B(b.values().data() + s * k * n, k, n);
      EMap O(v.data() + s * m * n, m, n);
      O.noalias() = A * B;
    }
  } else {
    for (std::size_t s = 0; s < batch; ++s) {
      ECMap A(a.values().data() + s * m * k, m, k);
      ECMap B(b.values().data() + s * k * n, k, n);
      EMap O(v.data() + s * m * n, m, n);
      O.noalias() = A * B;
    }
  }

  auto pa = a.node(), pb = b.node();
  return detail::make_op(
      out_shape, std::move(v), {a, b},
      [pa, pb, m, k, n, batch, a_batched, b_batched](TensorData& self) {
        using detail::ECMap;
        using detail::EMap;
        if (!b_batched) {
          ECMap G(self.g.data(), batch * m, n);
          if (detail::wants_grad(pa)) {
            pa->ensure_grad();
            ECMap B(pb->v.data(), k, n);
            EMap DA(pa->g.data(), batch * m, k);
            DA.noalias() += G * B.transpose();
          }
          if (detail::wants_grad(pb)) {
            pb->ensure_grad();
            ECMap A(pa->v.data(), batch * m, k);
            EMap DB(pb->g.data(), k, n);
            DB.noalias() += A.transpose() * G;
          }
        } else if (!a_batched) {
          if (detail::wants_grad(pa)) pa->ensure_grad();
          if (detail::wants_grad(pb)) pb->ensure_grad();
          for (std::size_t s = 0; s < batch; ++s) {
            ECMap G(self.g.data() + s * m * n, m, n);
            if (detail::wants_grad(pa)) {
              ECMap B(pb->v.data() + s * k * n, k, n);
              EMap DA(pa->g.data(), m, k);
              DA.noalias() += G * B.transpose();
            }
            if (detail::wants_grad(pb)) {
              ECMap A(pa->v.data(), m, k);
              EMap DB(pb->g.data() + s * k * n, k, n);
              DB.noalias() += A.transpose() * G;
            }
          }
        } else {
          if (detail::wants_grad(pa)) pa->ensure_grad();
          if (detail::wants_grad(pb)) pb->ensure_grad();
          for (std::size_t s = 0; s < batch; ++s) {
            ECMap G(self.g.data() + s * m * n, m, n);
            if (detail::wants_grad(pa)) {
              ECMap B(pb->v.data() + s * k * n, k, n);
              EMap DA(pa->g.data() + s * m * k, m, k);
              DA.noalias() += G * B.transpose();
            }
            if (detail::wants_grad(pb)) {
              ECMap A(pa->v.data() + s * m * k, m, k);
              EMap DB(pb->g.data() + s * k * n, k, n);
              DB.noalias() += A.transpose() * G;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// softmax

inline Tensor softmax(const Tensor& a, std::size_t axis) {
  if (axis >= a.ndim()) throw DimensionError("softmax: axis out of range for " + shape_str(a.shape()));
  std::size_t pre = 1, post = 1;
  const std::size_t n = a.dim(axis);
  for (std::size_t i = 0; i < axis; ++i) pre *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.ndim(); ++i) post *= a.dim(i);
  std::vector<double> v(a.size());
  const double* x = a.values().data();
  for (std::size_t p = 0; p < pre; ++p)
    for (std::size_t q = 0; q < post; ++q) {
      const std::size_t base = p * n * post + q;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x[base + j * post]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double e = std::exp(x[base + j * post] - mx);
        v[base + j * post] = e;
        z += e;
      }
      double inv = 1.0 / z;
      for (std::size_t j = 0; j < n; ++j) v[base + j * post] *= inv;
    }
  auto pa = a.node();
  auto out_v = std::make_shared<std::vector<double>>(v);
  return detail::make_op(a.shape(), std::move(v), {a},
                         [pa, out_v, pre, post, n](TensorData& self) {
                           if (!detail::wants_grad(pa)) return;
                           pa->ensure_grad();
                           const std::vector<double>& w = *out_v;
                           for (std::size_t p = 0; p < pre; ++p)
                             for (std::size_t q = 0; q < post; ++q) {
                               const std::size_t base = p * n * post + q;
                               double dot = 0.0;
                               for (std::size_t j = 0; j < n; ++j)
                                 dot += self.g[base + j * post] * w[base + j * post];
                               for (std::size_t j = 0; j < n; ++j)
                                 pa->g[base + j * post] +=
                                     w[base + j * post] * (self.g[base + j * post] - dot);
                             }
                         });
}

// ---------------------------------------------------------------------------
// masking
//
// Masked logits get a large negative constant; after max-subtracted softmax
// the weight underflows to exactly 0.0, so padded content can never leak.

inline constexpr double kMaskFill = -1e30;

// a: (B, ..., Lk); mask: B x Lk row-major, 1 = keep.
inline Tensor masked_fill_lastdim(const Tensor& a, const std::vector<int>& mask, double value) {
  if (a.ndim() < 2) throw DimensionError("masked_fill: needs rank >= 2, got " + shape_str(a.shape()));
  const std::size_t B = a.dim(0), L = a.dim(a.ndim() - 1);
  if (mask.size() != B * L)
    throw DimensionError("masked_fill: mask size " + std::to_string(mask.size()) +
                         " does not cover " + shape_str(a.shape()));
  const std::size_t mid = a.size() / (B * L);
  std::vector<double> v(a.values());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t m = 0; m < mid; ++m)
      for (std::size_t j = 0; j < L; ++j)
        if (mask[b * L + j] == 0) v[(b * mid + m) * L + j] = value;
  auto pa = a.node();
  auto mask_copy = std::make_shared<std::vector<int>>(mask);
  return detail::make_op(a.shape(), std::move(v), {a},
                         [pa, mask_copy, B, mid, L](TensorData& self) {
                           if (!detail::wants_grad(pa)) return;
                           pa->ensure_grad();
                           for (std::size_t b = 0; b < B; ++b)
                             for (std::size_t m = 0; m < mid; ++m)
                               for (std::size_t j = 0; j < L; ++j)
                                 if ((*mask_copy)[b * L + j] != 0)
                                   pa->g[(b * mid + m) * L + j] += self.g[(b * mid + m) * L + j];
                         });
}

// scores: (..., Lq, Lk); positions with k > q get `value`.
inline Tensor causal_fill(const Tensor& scores, double value) {
  if (scores.ndim() < 2)
    throw DimensionError("causal_fill: needs rank >= 2, got " + shape_str(scores.shape()));
  const std::size_t Lq = scores.dim(scores.ndim() - 2), Lk = scores.dim(scores.ndim() - 1);
  const std::size_t outer = scores.size() / (Lq * Lk);
  std::vector<double> v(scores.values());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t q = 0; q < Lq; ++q)
      for (std::size_t j = q + 1; j < Lk; ++j) v[(o * Lq + q) * Lk + j] = value;
  auto pa = scores.node();
  return detail::make_op(scores.shape(), std::move(v), {scores},
                         [pa, outer, Lq, Lk](TensorData& self) {
                           if (!detail::wants_grad(pa)) return;
                           pa->ensure_grad();
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t q = 0; q < Lq; ++q)
                               for (std::size_t j = 0; j <= q && j < Lk; ++j)
                                 pa->g[(o * Lq + q) * Lk + j] += self.g[(o * Lq + q) * Lk + j];
                         });
}

// ---------------------------------------------------------------------------
// broadcast adds

// a: (..., d) + bias: (d)
inline Tensor add_bias(const Tensor& a, const Tensor& bias) {
  if (bias.ndim() != 1 || a.ndim() < 1 || a.dim(a.ndim() - 1) != bias.dim(0))
    throw DimensionError("add_bias: " + shape_str(a.shape()) + " vs " + shape_str(bias.shape()));
  const std::size_t d = bias.dim(0), rows = a.size() / d;
  std::vector<double> v(a.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) v[r * d + j] = a.values()[r * d + j] + bias.values()[j];
  auto pa = a.node(), pb = bias.node();
  return detail::make_op(a.shape(), std::move(v), {a, bias}, [pa, pb, rows, d](TensorData& self) {
    if (detail::wants_grad(pa)) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.g.size(); ++i) pa->g[i] += self.g[i];
    }
    if (detail::wants_grad(pb)) {
      pb->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) pb->g[j] += self.g[r * d + j];
    }
  });
}

// a: (B, L, d) + p: (L, d), broadcast over batch
inline Tensor add_seq_bias(const Tensor& a, const Tensor& p) {
  if (a.ndim() != 3 || p.ndim() != 2 || a.dim(1) != p.dim(0) || a.dim(2) != p.dim(1))
    throw DimensionError("add_seq_bias: " + shape_str(a.shape()) + " vs " + shape_str(p.shape()));
  const std::size_t B = a.dim(0), rest = a.dim(1) * a.dim(2);
  std::vector<double> v(a.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < rest; ++i) v[b * rest + i] = a.values()[b * rest + i] + p.values()[i];
  auto pa = a.node(), pp = p.node();
  return detail::make_op(a.shape(), std::move(v), {a, p}, [pa, pp, B, rest](TensorData& self) {
    if (detail::wants_grad(pa)) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.g.size(); ++i) pa->g[i] += self.g[i];
    }
    if (detail::wants_grad(pp)) {
      pp->ensure_grad();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < rest; ++i) pp->g[i] += self.g[b * rest + i];
    }
  });
}

// a: any shape + s: 1-element tensor, broadcast everywhere
inline Tensor add_scalar_tensor(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw DimensionError("add_scalar_tensor: addend must be scalar");
  double sv = s.values()[0];
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + sv;
  auto pa = a.node(), ps = s.node();
  return detail::make_op(a.shape(), std::move(v), {a, s}, [pa, ps](TensorData& self) {
    if (detail::wants_grad(pa)) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.g.size(); ++i) pa->g[i] += self.g[i];
    }
    if (detail::wants_grad(ps)) {
      ps->ensure_grad();
      double acc = 0.0;
      for (double gi : self.g) acc += gi;
      ps->g[0] += acc;
    }
  });
}

// H: (B, L, d) scaled per (batch, feature): out[b,l,j] = H[b,l,j] * s[b,j]
inline Tensor rowwise_scale(const Tensor& h, const Tensor& s) {
  if (h.ndim() != 3 || s.ndim() != 2 || h.dim(0) != s.dim(0) || h.dim(2) != s.dim(1))
    throw DimensionError("rowwise_scale: " + shape_str(h.shape()) + " vs " + shape_str(s.shape()));
  const std::size_t B = h.dim(0), L = h.dim(1), d = h.dim(2);
  std::vector<double> v(h.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t j = 0; j < d; ++j)
        v[(b * L + l) * d + j] = h.values()[(b * L + l) * d + j] * s.values()[b * d + j];
  auto ph = h.node(), ps = s.node();
  return detail::make_op(h.shape(), std::move(v), {h, s}, [ph, ps, B, L, d](TensorData& self) {
    if (detail::wants_grad(ph)) {
      ph->ensure_grad();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l)
          for (std::size_t j = 0; j < d; ++j)
            ph->g[(b * L + l) * d + j] += self.g[(b * L + l) * d + j] * ps->v[b * d + j];
    }
    if (detail::wants_grad(ps)) {
      ps->ensure_grad();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l)
          for (std::size_t j = 0; j < d; ++j)
            ps->g[b * d + j] += self.g[(b * L + l) * d + j] * ph->v[(b * L + l) * d + j];
    }
  });
}

// ---------------------------------------------------------------------------
// embedding lookup

// table: (V, d); ids: B x L row-major. out: (B, L, d)
inline Tensor gather_rows(const Tensor& table, const std::vector<int>& ids, std::size_t B,
                          std::size_t L) {
  if (table.ndim() != 2) throw DimensionError("gather_rows: table must be 2D, got " + shape_str(table.shape()));
  if (ids.size() != B * L) throw DimensionError("gather_rows: id count mismatch");
  const std::size_t V = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= V)
      throw ContractError("gather_rows: id " + std::to_string(id) + " outside table of " +
                          std::to_string(V) + " rows");
  std::vector<double> v(B * L * d);
  for (std::size_t i = 0; i < B * L; ++i)
    std::copy(table.values().data() + static_cast<std::size_t>(ids[i]) * d,
              table.values().data() + (static_cast<std::size_t>(ids[i]) + 1) * d, v.data() + i * d);
  auto pt = table.node();
  auto ids_copy = std::make_shared<std::vector<int>>(ids);
  return detail::make_op({B, L, d}, std::move(v), {table}, [pt, ids_copy, d](TensorData& self) {
    if (!detail::wants_grad(pt)) return;
    pt->ensure_grad();
    for (std::size_t i = 0; i < ids_copy->size(); ++i) {
      double* dst = pt->g.data() + static_cast<std::size_t>((*ids_copy)[i]) * d;
      const double* src = self.g.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

// ---------------------------------------------------------------------------
// fused losses / similarity

// logits: (B, T, V); targets, mask: B x T row-major. Mean NLL over mask=1.
inline Tensor masked_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                                   const std::vector<int>& mask) {
  if (logits.ndim() != 3)
    throw DimensionError("cross_entropy: logits must be (B,T,V), got " + shape_str(logits.shape()));
  const std::size_t B = logits.dim(0), T = logits.dim(1), V = logits.dim(2);
  if (targets.size() != B * T || mask.size() != B * T)
    throw DimensionError("cross_entropy: targets/mask do not cover (B,T)");
  std::size_t n = 0;
  for (int m : mask) n += (m != 0);
  if (n == 0) throw ContractError("cross_entropy: all target positions masked");
  const double* x = logits.values().data();
  auto mx = std::make_shared<std::vector<double>>(B * T, 0.0);
  auto logz = std::make_shared<std::vector<double>>(B * T, 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < B * T; ++i) {
    if (mask[i] == 0) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= V)
      throw ContractError("cross_entropy: target id " + std::to_string(targets[i]) +
                          " outside vocab of " + std::to_string(V));
    const double* row = x + i * V;
    double m = row[0];
    for (std::size_t v = 1; v < V; ++v) m = std::max(m, row[v]);
    double z = 0.0;
    for (std::size_t v = 0; v < V; ++v) z += std::exp(row[v] - m);
    (*mx)[i] = m;
    (*logz)[i] = std::log(z);
    loss += m + (*logz)[i] - row[targets[i]];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  loss *= inv_n;
  auto pl = logits.node();
  auto tgt = std::make_shared<std::vector<int>>(targets);
  auto msk = std::make_shared<std::vector<int>>(mask);
  return detail::make_op({1}, {loss}, {logits},
                         [pl, tgt, msk, mx, logz, B, T, V, inv_n](TensorData& self) {
                           if (!detail::wants_grad(pl)) return;
                           pl->ensure_grad();
                           const double g0 = self.g[0] * inv_n;
                           for (std::size_t i = 0; i < B * T; ++i) {
                             if ((*msk)[i] == 0) continue;
                             const double* row = pl->v.data() + i * V;
                             double* grow = pl->g.data() + i * V;
                             const double shift = (*mx)[i] + (*logz)[i];
                             for (std::size_t v = 0; v < V; ++v)
                               grow[v] += g0 * std::exp(row[v] - shift);
                             grow[(*tgt)[i]] -= g0;
                           }
                         });
}

// Flattened cosine similarity between two same-size tensors -> scalar.
// Zero-norm inputs yield 0 with zero gradient.
inline Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size())
    throw DimensionError("cosine: sizes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " differ");
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a.values()[i] * b.values()[i];
    na2 += a.values()[i] * a.values()[i];
    nb2 += b.values()[i] * b.values()[i];
  }
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  const bool degenerate = (na == 0.0 || nb == 0.0);
  const double cosv = degenerate ? 0.0 : dot / (na * nb);
  auto pa = a.node(), pb = b.node();
  return detail::make_op({1}, {cosv}, {a, b},
                         [pa, pb, na, nb, cosv, degenerate](TensorData& self) {
                           if (degenerate) return;
                           const double g0 = self.g[0];
                           if (detail::wants_grad(pa)) {
                             pa->ensure_grad();
                             for (std::size_t i = 0; i < pa->v.size(); ++i)
                               pa->g[i] += g0 * (pb->v[i] / (na * nb) - cosv * pa->v[i] / (na * na));
                           }
                           if (detail::wants_grad(pb)) {
                             pb->ensure_grad();
                             for (std::size_t i = 0; i < pb->v.size(); ++i)
                               pb->g[i] += g0 * (pa->v[i] / (na * nb) - cosv * pb->v[i] / (nb * nb));
                           }
                         });
}

// ---------------------------------------------------------------------------
// layer norm (fused, last axis, biased variance)

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-6) {
  if (x.ndim() < 1) throw DimensionError("layer_norm: rank 0 input");
  const std::size_t d = x.dim(x.ndim() - 1);
  if (gain.size() != d || bias.size() != d)
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match last dim of " +
                         shape_str(x.shape()));
  const std::size_t rows = x.size() / d;
  std::vector<double> v(x.size());
  auto istd = std::make_shared<std::vector<double>>(rows);
  auto mu = std::make_shared<std::vector<double>>(rows);
  const double inv_d = 1.0 / static_cast<double>(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.values().data() + r * d;
    double m = 0.0;
    for (std::size_t j = 0; j < d; ++j) m += row[j];
    m *= inv_d;
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - m) * (row[j] - m);
    var *= inv_d;
    const double is = 1.0 / std::sqrt(var + eps);
    (*mu)[r] = m;
    (*istd)[r] = is;
    for (std::size_t j = 0; j < d; ++j)
      v[r * d + j] = gain.values()[j] * (row[j] - m) * is + bias.values()[j];
  }
  auto px = x.node(), pg = gain.node(), pb = bias.node();
  return detail::make_op(
      x.shape(), std::move(v), {x, gain, bias}, [px, pg, pb, mu, istd, rows, d](TensorData& self) {
        const double inv_d = 1.0 / static_cast<double>(d);
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* xrow = px->v.data() + r * d;
          const double* grow = self.g.data() + r * d;
          const double m = (*mu)[r], is = (*istd)[r];
          if (detail::wants_grad(pg)) {
            pg->ensure_grad();
            for (std::size_t j = 0; j < d; ++j) pg->g[j] += grow[j] * (xrow[j] - m) * is;
          }
          if (detail::wants_grad(pb)) {
            pb->ensure_grad();
            for (std::size_t j = 0; j < d; ++j) pb->g[j] += grow[j];
          }
          if (detail::wants_grad(px)) {
            px->ensure_grad();
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              dxhat[j] = grow[j] * pg->v[j];
              const double xh = (xrow[j] - m) * is;
              sum_dxhat += dxhat[j];
              sum_dxhat_xhat += dxhat[j] * xh;
            }
            for (std::size_t j = 0; j < d; ++j) {
              const double xh = (xrow[j] - m) * is;
              px->g[r * d + j] +=
                  is * (dxhat[j] - inv_d * sum_dxhat - xh * inv_d * sum_dxhat_xhat);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// init

// Gaussian draw + QR. rows <= cols gives orthonormal rows, otherwise
// orthonormal columns. R-diagonal signs are fixed so the result is the
// unique factor and stays deterministic.
inline Tensor orthogonal_init(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows == 0 || cols == 0)
    throw ContractError("orthogonal_init: zero dimension (" + std::to_string(rows) + ", " +
                        std::to_string(cols) + ")");
  const std::size_t big = std::max(rows, cols), small = std::min(rows, cols);
  Eigen::MatrixXd m(big, small);
  for (std::size_t i = 0; i < big; ++i)
    for (std::size_t j = 0; j < small; ++j) m(i, j) = rng.gaussian();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  Eigen::MatrixXd r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (std::size_t j = 0; j < small; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  Tensor out({rows, cols});
  if (rows <= cols) {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) out.values()[i * cols + j] = q(j, i);
  } else {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) out.values()[i * cols + j] = q(i, j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// finite differences

struct FdReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool pass = true;
};

namespace detail {
inline double fd_rel_error(double fd, double an) {
  return std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1.0});
}
}  // namespace detail

// Central-difference check of f's gradient at x. f must rebuild its graph
// from x's current values on every call.
inline FdReport finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                                        double eps = 1e-5, double tol = 1e-4) {
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor y = f(x);
  y.backward();
  std::vector<double> analytic = x.grad();
  FdReport rep;
  NoGrad ng;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x.values()[i];
    x.values()[i] = orig + eps;
    const double fp = f(x).item();
    x.values()[i] = orig - eps;
    const double fm = f(x).item();
    x.values()[i] = orig;
    const double fd = (fp - fm) / (2.0 * eps);
    const double err = detail::fd_rel_error(fd, analytic[i]);
    if (err > rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst_index = i;
    }
  }
  rep.pass = rep.max_rel_error <= tol;
  return rep;
}

// Same check for a parameter embedded in a larger model: `analytic` is the
// already-computed gradient, `loss_value` re-evaluates the loss on demand.
inline FdReport fd_check_param(const std::function<double()>& loss_value, Tensor param,
                               const std::vector<double>& analytic, double eps = 1e-5,
                               double tol = 1e-4) {
  if (analytic.size() != param.size())
    throw ContractError("fd_check_param: gradient size does not match parameter");
  FdReport rep;
  NoGrad ng;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double orig = param.values()[i];
    param.values()[i] = orig + eps;
    const double fp = loss_value();
    param.values()[i] = orig - eps;
    const double fm = loss_value();
    param.values()[i] = orig;
    const double fd = (fp - fm) / (2.0 * eps);
    const double err = detail::fd_rel_error(fd, analytic[i]);
    if (err > rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst_index = i;
    }
  }
  rep.pass = rep.max_rel_error <= tol;
  return rep;
}

}  // namespace endoseq
