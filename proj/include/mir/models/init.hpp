#ifndef MIR_MODELS_INIT_HPP
#define MIR_MODELS_INIT_HPP

#include <cmath>
#include <cstdint>
#include <string>

#include "mir/engine/param.hpp"
#include "mir/rng.hpp"
#include "mir/tensor.hpp"

namespace mir::models {

// Glorot/Xavier uniform: U(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out)).
template <class T>
BasicTensor<T> glorot_uniform(const Shape& shape, std::int64_t fan_in, std::int64_t fan_out,
                              Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  BasicTensor<T> t(shape);
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-limit, limit));
  return t;
}

// Every parameter draws from its own stream keyed by (seed, name), so the
// initial value of one layer never depends on how many layers precede it.
template <class T>
engine::ParamT<T>& add_glorot(engine::ParamStore<T>& ps, const std::string& name, Shape shape,
                              std::int64_t fan_in, std::int64_t fan_out, std::uint64_t seed) {
  Rng rng(derive_seed(seed, tag_hash(name.c_str())));
  return ps.add(name, glorot_uniform<T>(std::move(shape), fan_in, fan_out, rng));
}

template <class T>
engine::ParamT<T>& add_zeros(engine::ParamStore<T>& ps, const std::string& name, Shape shape) {
  return ps.add(name, BasicTensor<T>::zeros(std::move(shape)));
}

template <class T>
engine::ParamT<T>& add_ones(engine::ParamStore<T>& ps, const std::string& name, Shape shape) {
  return ps.add(name, BasicTensor<T>::full(std::move(shape), T(1)));
}

}  // namespace mir::models

#endif  // MIR_MODELS_INIT_HPP
