#ifndef MIR_ENGINE_ADAM_HPP
#define MIR_ENGINE_ADAM_HPP

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mir/common.hpp"
#include "mir/engine/param.hpp"
#include "mir/tensor.hpp"

namespace mir::engine {

// Adam with bias correction. Moment buffers are keyed by parameter name so
// they survive checkpoint round-trips; frozen parameters are skipped entirely.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore<double>& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& p : params) {
      if (!p->trainable) continue;
      Slot& s = slot(p->name, p->value.numel());
      for (std::int64_t i = 0; i < p->value.numel(); ++i) {
        const double g = p->grad[i];
        s.m[static_cast<std::size_t>(i)] =
            beta1_ * s.m[static_cast<std::size_t>(i)] + (1.0 - beta1_) * g;
        s.v[static_cast<std::size_t>(i)] =
            beta2_ * s.v[static_cast<std::size_t>(i)] + (1.0 - beta2_) * g * g;
        const double mhat = s.m[static_cast<std::size_t>(i)] / bc1;
        const double vhat = s.v[static_cast<std::size_t>(i)] / bc2;
        p->value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  double lr() const { return lr_; }
  std::uint64_t steps() const { return t_; }

  // serialization hooks for checkpoints
  const std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> state() const {
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> out;
    for (const auto& [name, s] : slots_) out[name] = {s.m, s.v};
    return out;
  }

  void restore(std::uint64_t steps,
               const std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>&
                   state) {
    t_ = steps;
    slots_.clear();
    for (const auto& [name, mv] : state) {
      Slot s;
      s.m = mv.first;
      s.v = mv.second;
      slots_[name] = std::move(s);
    }
  }

 private:
  struct Slot {
    std::vector<double> m;
    std::vector<double> v;
  };

  Slot& slot(const std::string& name, std::int64_t n) {
    auto it = slots_.find(name);
    if (it == slots_.end()) {
      Slot s;
      s.m.assign(static_cast<std::size_t>(n), 0.0);
      s.v.assign(static_cast<std::size_t>(n), 0.0);
      it = slots_.emplace(name, std::move(s)).first;
    }
    require(static_cast<std::int64_t>(it->second.m.size()) == n, Err::ShapeMismatch,
            "adam: moment size mismatch for '" + name + "'");
    return it->second;
  }

  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::map<std::string, Slot> slots_;
};

}  // namespace mir::engine

#endif  // MIR_ENGINE_ADAM_HPP
