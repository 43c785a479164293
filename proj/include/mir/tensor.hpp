#ifndef MIR_TENSOR_HPP
#define MIR_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mir/common.hpp"

namespace mir {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// Dense row-major n-dimensional array. Training and verification run on
// double; the float instantiation backs the 32-bit inference path used by
// the latency bench.
template <class T>
struct BasicTensor {
  Shape shape;
  std::vector<T> data;

  BasicTensor() = default;

  explicit BasicTensor(Shape s) : shape(std::move(s)) {
    for (auto d : shape)
      require(d > 0, Err::ShapeMismatch, "tensor dims must be positive, got " + shape_str(shape));
    data.assign(static_cast<std::size_t>(numel_of(shape)), T(0));
  }

  BasicTensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    require(static_cast<std::int64_t>(data.size()) == numel_of(shape), Err::ShapeMismatch,
            "data length does not match shape " + shape_str(shape));
  }

  static BasicTensor zeros(Shape s) { return BasicTensor(std::move(s)); }

  static BasicTensor full(Shape s, T v) {
    BasicTensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
  }

  static BasicTensor scalar(T v) { return BasicTensor({1}, {v}); }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  bool same_shape(const BasicTensor& other) const { return shape == other.shape; }

  bool all_finite() const {
    for (const T& x : data)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <class U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  void fill(T v) {
    for (auto& x : data) x = v;
  }
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

}  // namespace mir

#endif  // MIR_TENSOR_HPP
