#ifndef MIR_ENGINE_PARAM_HPP
#define MIR_ENGINE_PARAM_HPP

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mir/common.hpp"
#include "mir/tensor.hpp"

namespace mir::engine {

// A named learnable tensor. Frozen params (trainable=false) accumulate no
// gradient and are never touched by the optimizer.
template <class T>
struct ParamT {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;  // empty while frozen
  bool trainable = true;

  ParamT(std::string n, BasicTensor<T> v, bool train = true)
      : name(std::move(n)), value(std::move(v)), trainable(train) {
    if (trainable) grad = BasicTensor<T>::zeros(value.shape);
  }

  void set_trainable(bool train) {
    trainable = train;
    grad = train ? BasicTensor<T>::zeros(value.shape) : BasicTensor<T>{};
  }
};

// Insertion-ordered parameter collection; iteration order is part of the
// determinism contract.
template <class T>
class ParamStore {
 public:
  ParamT<T>& add(const std::string& name, BasicTensor<T> value, bool trainable = true) {
    require(index_.find(name) == index_.end(), Err::ConfigMismatch,
            "duplicate parameter name '" + name + "'");
    params_.push_back(std::make_unique<ParamT<T>>(name, std::move(value), trainable));
    index_[name] = params_.size() - 1;
    return *params_.back();
  }

  ParamT<T>& get(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), Err::ConfigMismatch, "unknown parameter '" + name + "'");
    return *params_[it->second];
  }

  const ParamT<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), Err::ConfigMismatch, "unknown parameter '" + name + "'");
    return *params_[it->second];
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t size() const { return params_.size(); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grads() {
    for (auto& p : params_) p->grad.fill(T(0));
  }

  std::int64_t total_values() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
  }

  std::int64_t trainable_values() const {
    std::int64_t n = 0;
    for (const auto& p : params_)
      if (p->trainable) n += p->value.numel();
    return n;
  }

 private:
  std::vector<std::unique_ptr<ParamT<T>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace mir::engine

#endif  // MIR_ENGINE_PARAM_HPP
