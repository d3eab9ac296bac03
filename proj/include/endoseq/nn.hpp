#pragma once

// Small module layer over the tensor core: named parameter registry plus
// Linear and LayerNorm building blocks.

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "endoseq/tensor.hpp"

namespace endoseq {

struct Param {
  std::string name;
  Tensor tensor;
  bool no_decay = false;  // layer-norm gains/biases, bias vectors, scalar gates
};

// Registration order is fixed at model construction and drives checkpoint
// layout and optimizer state, so it must stay deterministic.
class ParamRegistry {
 public:
  void add(const std::string& name, const Tensor& t, bool no_decay) {
    if (index_.count(name)) throw ContractError("ParamRegistry: duplicate parameter '" + name + "'");
    index_[name] = items_.size();
    items_.push_back({name, t, no_decay});
  }

  std::vector<Param>& items() { return items_; }
  const std::vector<Param>& items() const { return items_; }

  Param& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("ParamRegistry: no parameter '" + name + "'");
    return items_[it->second];
  }
  const Param& at(const std::string& name) const {
    return const_cast<ParamRegistry*>(this)->at(name);
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const Param& p : items_) n += p.tensor.size();
    return n;
  }

  std::size_t trainable_elements() const {
    std::size_t n = 0;
    for (const Param& p : items_)
      if (p.tensor.requires_grad()) n += p.tensor.size();
    return n;
  }

  void zero_grad() {
    for (Param& p : items_) p.tensor.zero_grad();
  }

 private:
  std::vector<Param> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Linear {
  Tensor w;  // (in, out)
  Tensor b;  // (out)
  bool has_bias = true;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true)
      : w(Tensor::randn({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)))),
        has_bias(bias) {
    w.set_requires_grad(true);
    if (bias) {
      b = Tensor({out}, 0.0);
      b.set_requires_grad(true);
    }
  }

  Tensor operator()(const Tensor& x) const {
    Tensor y = matmul(x, w);
    return has_bias ? add_bias(y, b) : y;
  }

  void register_into(ParamRegistry& reg, const std::string& prefix) {
    reg.add(prefix + ".w", w, false);
    if (has_bias) reg.add(prefix + ".b", b, true);
  }
};

struct LayerNormModule {
  Tensor gain;
  Tensor bias;
  double eps = 1e-6;

  LayerNormModule() = default;
  explicit LayerNormModule(std::size_t d) : gain({d}, 1.0), bias({d}, 0.0) {
    gain.set_requires_grad(true);
    bias.set_requires_grad(true);
  }

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }

  void register_into(ParamRegistry& reg, const std::string& prefix) {
    reg.add(prefix + ".gain", gain, true);
    reg.add(prefix + ".bias", bias, true);
  }
};

}  // namespace endoseq
