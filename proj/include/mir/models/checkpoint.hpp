#ifndef MIR_MODELS_CHECKPOINT_HPP
#define MIR_MODELS_CHECKPOINT_HPP

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mir/common.hpp"
#include "mir/engine/adam.hpp"
#include "mir/tensor.hpp"

namespace mir::models {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct OptimizerSlot {
  std::string name;
  std::vector<double> m;
  std::vector<double> v;
};

// Everything needed to resume or serve a model: the config echo (canonical
// JSON), the run seed, every named tensor in 64-bit, per-parameter trainable
// flags, and optionally the Adam moment buffers.
//
// File layout ("MILC" format): magic, u16 version, length-prefixed config
// text, u64 seed, tensor records (u32 name length, name, u32 rank, u32 dims,
// little-endian f64 payload, record CRC32), freeze table (u32 count, then
// name + u8 flag entries), optional optimizer block, whole-file CRC32.
struct Checkpoint {
  std::uint16_t version = kCheckpointVersion;
  std::string config_json;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::vector<std::pair<std::string, bool>> freeze;
  bool has_optimizer = false;
  std::uint64_t optimizer_steps = 0;
  std::vector<OptimizerSlot> optimizer;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// The "model" discriminator of the config echo ("cnn_lstm" / "toy_swin").
inline std::string checkpoint_model_kind(const Checkpoint& c) {
  const auto j = nlohmann::json::parse(c.config_json, nullptr, false);
  require(!j.is_discarded() && j.is_object() && j.contains("model") &&
              j.at("model").is_string(),
          Err::ConfigMismatch, "checkpoint config has no model tag");
  return j.at("model").get<std::string>();
}

// Capture a model (and optionally its optimizer) into a Checkpoint. The model
// contract: `params` store, `config_json()`, `state_tensors()` for
// non-learnable tensors, `mark_loaded()` after a restore.
template <class Model>
Checkpoint snapshot_model(Model& model, std::uint64_t seed, const engine::Adam* opt = nullptr) {
  Checkpoint c;
  c.config_json = model.config_json();
  c.seed = seed;
  for (const auto& p : model.params) {
    c.tensors.emplace_back(p->name, p->value);
    c.freeze.emplace_back(p->name, p->trainable);
  }
  for (const auto& [name, tensor] : model.state_tensors()) c.tensors.emplace_back(name, *tensor);
  if (opt != nullptr) {
    c.has_optimizer = true;
    c.optimizer_steps = opt->steps();
    for (const auto& [name, mv] : opt->state()) c.optimizer.push_back({name, mv.first, mv.second});
  }
  return c;
}

// Load a Checkpoint back into a compatible model. The config echo must match
// the model's own canonical config exactly; every parameter and state tensor
// must be present with its exact shape.
template <class Model>
void restore_model(Model& model, const Checkpoint& c, engine::Adam* opt = nullptr) {
  require(c.config_json == model.config_json(), Err::ConfigMismatch,
          "checkpoint config does not match the model: " + c.config_json);
  for (auto& p : model.params) {
    const Tensor* t = c.find(p->name);
    require(t != nullptr, Err::ConfigMismatch, "checkpoint is missing tensor '" + p->name + "'");
    require(t->shape == p->value.shape, Err::ConfigMismatch,
            "checkpoint tensor '" + p->name + "' has shape " + shape_str(t->shape) +
                ", expected " + shape_str(p->value.shape));
    p->value = *t;
  }
  for (const auto& [name, flag] : c.freeze) {
    require(model.params.contains(name), Err::ConfigMismatch,
            "checkpoint freeze table names unknown parameter '" + name + "'");
    model.params.get(name).set_trainable(flag);
  }
  for (auto& [name, tensor] : model.state_tensors()) {
    const Tensor* t = c.find(name);
    require(t != nullptr, Err::ConfigMismatch, "checkpoint is missing tensor '" + name + "'");
    require(t->shape == tensor->shape, Err::ConfigMismatch,
            "checkpoint tensor '" + name + "' has shape " + shape_str(t->shape) + ", expected " +
                shape_str(tensor->shape));
    *tensor = *t;
  }
  model.mark_loaded();
  if (opt != nullptr && c.has_optimizer) {
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> state;
    for (const auto& slot : c.optimizer) state[slot.name] = {slot.m, slot.v};
    opt->restore(c.optimizer_steps, state);
  }
}

}  // namespace mir::models

#endif  // MIR_MODELS_CHECKPOINT_HPP
