#ifndef MIR_MODELS_TOY_SWIN_HPP
#define MIR_MODELS_TOY_SWIN_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mir/engine/param.hpp"
#include "mir/engine/tape.hpp"
#include "mir/models/cnn_lstm.hpp"  // kBnEpsilon/kLnEpsilon + init helpers
#include "mir/models/init.hpp"
#include "mir/rng.hpp"
#include "mir/tensor.hpp"

namespace mir::models {

using Dim3 = std::array<std::int64_t, 3>;

// Additive attention-mask sentinel standing in for -inf; large enough that the
// masked weight underflows to exactly 0 after softmax, finite enough to never
// produce NaN through (-inf)*0 paths.
inline constexpr double kMaskNegative = -1e9;

// ---------------------------------------------------------------------------
// Window ops over token grids shaped [B, T, H, W, D]. All data movement is
// expressed as GatherPlans so the tape provides the (trivial) gradients.
// ---------------------------------------------------------------------------

namespace detail {

inline std::int64_t window_count(const Dim3& grid, const Dim3& win) {
  return (grid[0] / win[0]) * (grid[1] / win[1]) * (grid[2] / win[2]);
}

inline std::shared_ptr<const engine::GatherPlan> partition_plan(std::int64_t b, const Dim3& grid,
                                                                std::int64_t d, const Dim3& win) {
  const std::int64_t nt = grid[0] / win[0], nh = grid[1] / win[1], nw = grid[2] / win[2];
  const std::int64_t n_tok = win[0] * win[1] * win[2];
  const std::int64_t n_win = nt * nh * nw;
  auto plan = std::make_shared<engine::GatherPlan>();
  plan->src_numel = b * grid[0] * grid[1] * grid[2] * d;
  plan->out_shape = {b * n_win, n_tok, d};
  plan->index.resize(static_cast<std::size_t>(b * n_win * n_tok * d));
  std::size_t o = 0;
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t bt = 0; bt < nt; ++bt)
      for (std::int64_t bh = 0; bh < nh; ++bh)
        for (std::int64_t bw = 0; bw < nw; ++bw)
          for (std::int64_t dt = 0; dt < win[0]; ++dt)
            for (std::int64_t dh = 0; dh < win[1]; ++dh)
              for (std::int64_t dw = 0; dw < win[2]; ++dw) {
                const std::int64_t t = bt * win[0] + dt;
                const std::int64_t h = bh * win[1] + dh;
                const std::int64_t w = bw * win[2] + dw;
                const std::int64_t base =
                    (((bi * grid[0] + t) * grid[1] + h) * grid[2] + w) * d;
                for (std::int64_t di = 0; di < d; ++di) plan->index[o++] = base + di;
              }
  return plan;
}

inline std::shared_ptr<const engine::GatherPlan> reverse_plan(std::int64_t b, const Dim3& grid,
                                                              std::int64_t d, const Dim3& win) {
  const std::int64_t nh = grid[1] / win[1], nw = grid[2] / win[2];
  const std::int64_t n_tok = win[0] * win[1] * win[2];
  const std::int64_t n_win = window_count(grid, win);
  auto plan = std::make_shared<engine::GatherPlan>();
  plan->src_numel = b * n_win * n_tok * d;
  plan->out_shape = {b, grid[0], grid[1], grid[2], d};
  plan->index.resize(static_cast<std::size_t>(plan->src_numel));
  std::size_t o = 0;
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t t = 0; t < grid[0]; ++t)
      for (std::int64_t h = 0; h < grid[1]; ++h)
        for (std::int64_t w = 0; w < grid[2]; ++w) {
          const std::int64_t w_idx =
              ((t / win[0]) * nh + h / win[1]) * nw + w / win[2];
          const std::int64_t tok =
              ((t % win[0]) * win[1] + h % win[1]) * win[2] + w % win[2];
          const std::int64_t base = ((bi * n_win + w_idx) * n_tok + tok) * d;
          for (std::int64_t di = 0; di < d; ++di) plan->index[o++] = base + di;
        }
  return plan;
}

// out[p] = src[(p + roll) mod extent] along T/H/W; roll components may be
// negative.
inline std::shared_ptr<const engine::GatherPlan> roll_plan(std::int64_t b, const Dim3& grid,
                                                           std::int64_t d, const Dim3& roll) {
  Dim3 r{};
  for (int a = 0; a < 3; ++a) r[a] = ((roll[a] % grid[a]) + grid[a]) % grid[a];
  auto plan = std::make_shared<engine::GatherPlan>();
  plan->src_numel = b * grid[0] * grid[1] * grid[2] * d;
  plan->out_shape = {b, grid[0], grid[1], grid[2], d};
  plan->index.resize(static_cast<std::size_t>(plan->src_numel));
  std::size_t o = 0;
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t t = 0; t < grid[0]; ++t)
      for (std::int64_t h = 0; h < grid[1]; ++h)
        for (std::int64_t w = 0; w < grid[2]; ++w) {
          const std::int64_t st = (t + r[0]) % grid[0];
          const std::int64_t sh = (h + r[1]) % grid[1];
          const std::int64_t sw = (w + r[2]) % grid[2];
          const std::int64_t base =
              (((bi * grid[0] + st) * grid[1] + sh) * grid[2] + sw) * d;
          for (std::int64_t di = 0; di < d; ++di) plan->index[o++] = base + di;
        }
  return plan;
}

// Split one interleaved [nB*n, 3D] projection into per-head [nB*heads, n, hd]
// tensors; `which` selects Q (0), K (1) or V (2). Column layout of the fused
// projection is [Q | K | V], head-major within each D-wide block.
inline std::shared_ptr<const engine::GatherPlan> head_split_plan(std::int64_t nb, std::int64_t n,
                                                                 std::int64_t d, std::int64_t heads,
                                                                 std::int64_t which) {
  const std::int64_t hd = d / heads;
  auto plan = std::make_shared<engine::GatherPlan>();
  plan->src_numel = nb * n * 3 * d;
  plan->out_shape = {nb * heads, n, hd};
  plan->index.resize(static_cast<std::size_t>(nb * heads * n * hd));
  std::size_t o = 0;
  for (std::int64_t bi = 0; bi < nb; ++bi)
    for (std::int64_t head = 0; head < heads; ++head)
      for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t base = (bi * n + i) * 3 * d + which * d + head * hd;
        for (std::int64_t e = 0; e < hd; ++e) plan->index[o++] = base + e;
      }
  return plan;
}

// Inverse of the head split: [nB*heads, n, hd] -> [nB, n, D].
inline std::shared_ptr<const engine::GatherPlan> head_merge_plan(std::int64_t nb, std::int64_t n,
                                                                 std::int64_t d,
                                                                 std::int64_t heads) {
  const std::int64_t hd = d / heads;
  auto plan = std::make_shared<engine::GatherPlan>();
  plan->src_numel = nb * heads * n * hd;
  plan->out_shape = {nb, n, d};
  plan->index.resize(static_cast<std::size_t>(nb * n * d));
  std::size_t o = 0;
  for (std::int64_t bi = 0; bi < nb; ++bi)
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t di = 0; di < d; ++di) {
        const std::int64_t head = di / hd, e = di % hd;
        plan->index[o++] = ((bi * heads + head) * n + i) * hd + e;
      }
  return plan;
}

}  // namespace detail

// [B,T,H,W,D] -> [B*nW, wt*wh*ww, D]; window dims must divide the grid.
template <class T>
typename engine::TapeT<T>::Ref partition_windows3d(engine::TapeT<T>& t,
                                                   typename engine::TapeT<T>::Ref tokens,
                                                   const Dim3& win) {
  const auto& v = t.val(tokens);
  require(v.rank() == 5, Err::ShapeMismatch, "partition_windows3d needs [B,T,H,W,D]");
  const Dim3 grid{v.dim(1), v.dim(2), v.dim(3)};
  for (int a = 0; a < 3; ++a)
    require(win[a] >= 1 && grid[a] % win[a] == 0, Err::NotDivisible,
            "partition_windows3d: window " + std::to_string(win[a]) +
                " does not divide extent " + std::to_string(grid[a]));
  return t.gather(tokens, detail::partition_plan(v.dim(0), grid, v.dim(4), win));
}

// Inverse of partition_windows3d for a known batch size and grid.
template <class T>
typename engine::TapeT<T>::Ref reverse_windows3d(engine::TapeT<T>& t,
                                                 typename engine::TapeT<T>::Ref windows,
                                                 std::int64_t b, const Dim3& grid,
                                                 const Dim3& win) {
  const auto& v = t.val(windows);
  require(v.rank() == 3, Err::ShapeMismatch, "reverse_windows3d needs [nB,n,D]");
  for (int a = 0; a < 3; ++a)
    require(win[a] >= 1 && grid[a] % win[a] == 0, Err::NotDivisible,
            "reverse_windows3d: window does not divide extent");
  require(v.dim(0) == b * detail::window_count(grid, win) &&
              v.dim(1) == win[0] * win[1] * win[2],
          Err::ShapeMismatch, "reverse_windows3d: window tensor does not match grid");
  return t.gather(windows, detail::reverse_plan(b, grid, v.dim(2), win));
}

// Circular roll of the grid content by -shift (position p receives the token
// that lived at p + shift). Shifts are taken modulo the extents.
template <class T>
typename engine::TapeT<T>::Ref cyclic_shift3d(engine::TapeT<T>& t,
                                              typename engine::TapeT<T>::Ref tokens,
                                              const Dim3& shift) {
  const auto& v = t.val(tokens);
  require(v.rank() == 5, Err::ShapeMismatch, "cyclic_shift3d needs [B,T,H,W,D]");
  return t.gather(tokens,
                  detail::roll_plan(v.dim(0), {v.dim(1), v.dim(2), v.dim(3)}, v.dim(4), shift));
}

template <class T>
typename engine::TapeT<T>::Ref cyclic_unshift3d(engine::TapeT<T>& t,
                                                typename engine::TapeT<T>::Ref tokens,
                                                const Dim3& shift) {
  return cyclic_shift3d(t, tokens, Dim3{-shift[0], -shift[1], -shift[2]});
}

// Additive mask for shifted-window attention, [nW, n, n] with entries in
// {0, -1e9}. Tokens are labeled by the three per-axis regions
// [0, E-w) / [E-w, E-s) / [E-s, E); a pair may attend iff the labels match,
// which reproduces attention over the displaced (pre-shift) windows.
template <class T>
BasicTensor<T> build_shift_mask(const Dim3& grid, const Dim3& win, const Dim3& shift) {
  for (int a = 0; a < 3; ++a)
    require(win[a] >= 1 && grid[a] % win[a] == 0, Err::NotDivisible,
            "build_shift_mask: window does not divide extent");
  const std::int64_t n_tok = win[0] * win[1] * win[2];
  const std::int64_t n_win = detail::window_count(grid, win);
  auto label = [](std::int64_t pos, std::int64_t e, std::int64_t w, std::int64_t s) {
    s = ((s % e) + e) % e;
    if (pos < e - w) return std::int64_t(0);
    return pos < e - s ? std::int64_t(1) : std::int64_t(2);
  };
  // Region id per grid cell, then the regular partition groups them exactly
  // like partition_plan enumerates tokens.
  std::vector<std::int64_t> region;
  region.reserve(static_cast<std::size_t>(n_win * n_tok));
  for (std::int64_t bt = 0; bt < grid[0] / win[0]; ++bt)
    for (std::int64_t bh = 0; bh < grid[1] / win[1]; ++bh)
      for (std::int64_t bw = 0; bw < grid[2] / win[2]; ++bw)
        for (std::int64_t dt = 0; dt < win[0]; ++dt)
          for (std::int64_t dh = 0; dh < win[1]; ++dh)
            for (std::int64_t dw = 0; dw < win[2]; ++dw) {
              const std::int64_t lt = label(bt * win[0] + dt, grid[0], win[0], shift[0]);
              const std::int64_t lh = label(bh * win[1] + dh, grid[1], win[1], shift[1]);
              const std::int64_t lw = label(bw * win[2] + dw, grid[2], win[2], shift[2]);
              region.push_back((lt * 3 + lh) * 3 + lw);
            }
  BasicTensor<T> mask = BasicTensor<T>::zeros({n_win, n_tok, n_tok});
  for (std::int64_t w = 0; w < n_win; ++w) {
    const std::int64_t* r = region.data() + w * n_tok;
    T* m = mask.data.data() + w * n_tok * n_tok;
    for (std::int64_t i = 0; i < n_tok; ++i)
      for (std::int64_t j = 0; j < n_tok; ++j)
        if (r[i] != r[j]) m[i * n_tok + j] = static_cast<T>(kMaskNegative);
  }
  return mask;
}

// Windowed multi-head self-attention over [nB, n, D] windows. Q/K/V come from
// one fused [D, 3D] projection; scores are scaled by 1/sqrt(D/heads), the
// optional additive mask is broadcast per window, heads are concatenated and
// output-projected. No relative position bias.
template <class T>
typename engine::TapeT<T>::Ref wmsa3d(engine::TapeT<T>& t, typename engine::TapeT<T>::Ref windows,
                                      typename engine::TapeT<T>::Ref wqkv,
                                      typename engine::TapeT<T>::Ref bqkv,
                                      typename engine::TapeT<T>::Ref wproj,
                                      typename engine::TapeT<T>::Ref bproj, std::int64_t heads,
                                      std::shared_ptr<const BasicTensor<T>> mask = nullptr) {
  const auto& v = t.val(windows);
  require(v.rank() == 3, Err::ShapeMismatch, "wmsa3d needs windows [nB,n,D]");
  const std::int64_t nb = v.dim(0), n = v.dim(1), d = v.dim(2);
  require(heads >= 1 && d % heads == 0, Err::HeadsDontDivide,
          "wmsa3d: " + std::to_string(heads) + " heads do not divide dim " + std::to_string(d));
  const auto& vq = t.val(wqkv);
  require(vq.rank() == 2 && vq.dim(0) == d && vq.dim(1) == 3 * d, Err::ShapeMismatch,
          "wmsa3d: qkv weight must be [D,3D]");
  const auto& vp = t.val(wproj);
  require(vp.rank() == 2 && vp.dim(0) == d && vp.dim(1) == d, Err::ShapeMismatch,
          "wmsa3d: proj weight must be [D,D]");
  const std::int64_t hd = d / heads;

  using Ref = typename engine::TapeT<T>::Ref;
  Ref qkv = t.dense(t.reshape(windows, {nb * n, d}), wqkv, bqkv, engine::Activation::None);
  Ref q = t.gather(qkv, detail::head_split_plan(nb, n, d, heads, 0));
  Ref k = t.gather(qkv, detail::head_split_plan(nb, n, d, heads, 1));
  Ref vv = t.gather(qkv, detail::head_split_plan(nb, n, d, heads, 2));
  Ref scores = t.scale(t.bmm_nt(q, k), static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd))));
  if (mask) scores = t.add_window_mask(scores, mask, static_cast<int>(heads));
  Ref ctx = t.bmm(t.softmax_lastdim(scores), vv);
  Ref merged = t.gather(ctx, detail::head_merge_plan(nb, n, d, heads));
  Ref out = t.dense(t.reshape(merged, {nb * n, d}), wproj, bproj, engine::Activation::None);
  return t.reshape(out, {nb, n, d});
}

// Concatenate each 2x2 spatial neighborhood (top-left block first), layer-norm
// the 4D vector, then linearly reduce with `reduce_w` [4D, D_out] (no bias).
template <class T>
typename engine::TapeT<T>::Ref patch_merge(engine::TapeT<T>& t,
                                           typename engine::TapeT<T>::Ref tokens,
                                           typename engine::TapeT<T>::Ref gamma,
                                           typename engine::TapeT<T>::Ref beta,
                                           typename engine::TapeT<T>::Ref reduce_w) {
  const auto& v = t.val(tokens);
  require(v.rank() == 5, Err::ShapeMismatch, "patch_merge needs [B,T,H,W,D]");
  const std::int64_t b = v.dim(0), ft = v.dim(1), h = v.dim(2), w = v.dim(3), d = v.dim(4);
  require(h % 2 == 0 && w % 2 == 0, Err::OddSpatialDims,
          "patch_merge: spatial dims must be even, got " + shape_str(v.shape));
  const auto& vr = t.val(reduce_w);
  require(vr.rank() == 2 && vr.dim(0) == 4 * d, Err::ShapeMismatch,
          "patch_merge: reduce weight must be [4D, D_out]");
  const std::int64_t d_out = vr.dim(1);

  auto plan = std::make_shared<engine::GatherPlan>();
  plan->src_numel = v.numel();
  plan->out_shape = {b, ft, h / 2, w / 2, 4 * d};
  plan->index.resize(static_cast<std::size_t>(v.numel()));
  static constexpr std::int64_t kOff[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  std::size_t o = 0;
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t ti = 0; ti < ft; ++ti)
      for (std::int64_t i = 0; i < h / 2; ++i)
        for (std::int64_t j = 0; j < w / 2; ++j)
          for (const auto& off : kOff) {
            const std::int64_t base =
                (((bi * ft + ti) * h + 2 * i + off[0]) * w + 2 * j + off[1]) * d;
            for (std::int64_t di = 0; di < d; ++di) plan->index[o++] = base + di;
          }
  using Ref = typename engine::TapeT<T>::Ref;
  Ref cat = t.gather(tokens, std::move(plan));
  Ref nrm = t.layernorm(cat, gamma, beta, static_cast<T>(kLnEpsilon));
  Ref red = t.matmul(t.reshape(nrm, {b * ft * (h / 2) * (w / 2), 4 * d}), reduce_w);
  return t.reshape(red, {b, ft, h / 2, w / 2, d_out});
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

// Video classifier: 3D patch embedding, stages of paired transformer blocks
// (regular window, then shifted window), patch merging between stages, global
// average pool, and a small classification head. Dimensions are toy-scale by
// default; the structure (not the scale) mirrors the reference video design.
struct ToySwinConfig {
  std::int64_t frames = 8;
  std::int64_t height = 32;
  std::int64_t width = 32;
  std::int64_t in_channels = 3;
  Dim3 patch = {2, 4, 4};
  std::int64_t embed_dim = 32;
  std::vector<std::int64_t> depths = {2, 2};
  std::vector<std::int64_t> heads = {2, 4};
  Dim3 window = {2, 2, 2};
  double mlp_ratio = 4.0;
  std::int64_t head_hidden = 64;   // 0 skips the hidden dense layer
  double head_dropout = 0.5;
  std::int64_t num_classes = 8;
};

inline void to_json(nlohmann::json& j, const ToySwinConfig& c) {
  j = nlohmann::json{{"model", "toy_swin"},
                     {"frames", c.frames},
                     {"height", c.height},
                     {"width", c.width},
                     {"in_channels", c.in_channels},
                     {"patch", std::vector<std::int64_t>(c.patch.begin(), c.patch.end())},
                     {"embed_dim", c.embed_dim},
                     {"depths", c.depths},
                     {"heads", c.heads},
                     {"window", std::vector<std::int64_t>(c.window.begin(), c.window.end())},
                     {"mlp_ratio", c.mlp_ratio},
                     {"head_hidden", c.head_hidden},
                     {"head_dropout", c.head_dropout},
                     {"num_classes", c.num_classes}};
}

inline ToySwinConfig toy_swin_config_from_json(const nlohmann::json& j,
                                               Err bad = Err::ConfigMismatch) {
  require(j.is_object() && j.value("model", std::string()) == "toy_swin", bad,
          "expected a toy_swin model config");
  static const std::set<std::string> allowed = {
      "model",  "frames",    "height",    "width",       "in_channels",
      "patch",  "embed_dim", "depths",    "heads",       "window",
      "mlp_ratio", "head_hidden", "head_dropout", "num_classes"};
  for (const auto& item : j.items())
    require(allowed.count(item.key()) > 0, bad,
            "unknown toy_swin config key '" + item.key() + "'");
  ToySwinConfig c;
  auto dim3 = [&](const char* key, Dim3 def) {
    if (!j.contains(key)) return def;
    const auto v = j.at(key).get<std::vector<std::int64_t>>();
    require(v.size() == 3, bad, std::string("'") + key + "' must have 3 entries");
    return Dim3{v[0], v[1], v[2]};
  };
  c.frames = j.value("frames", c.frames);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.patch = dim3("patch", c.patch);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.depths = j.value("depths", c.depths);
  c.heads = j.value("heads", c.heads);
  c.window = dim3("window", c.window);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.head_dropout = j.value("head_dropout", c.head_dropout);
  c.num_classes = j.value("num_classes", c.num_classes);
  return c;
}

enum class FreezePolicy { AllTrainable, PaperPolicy };

template <class T>
class ToySwinModelT {
 public:
  using Tape = engine::TapeT<T>;
  using Ref = typename Tape::Ref;

  ToySwinConfig cfg;
  engine::ParamStore<T> params;

  ToySwinModelT(const ToySwinConfig& c, std::uint64_t seed) : cfg(c) {
    require(!cfg.depths.empty() && cfg.depths.size() == cfg.heads.size(), Err::ShapeMismatch,
            "toy_swin: depths and heads must be non-empty and the same length");
    require(cfg.frames >= 1 && cfg.height >= 1 && cfg.width >= 1 && cfg.in_channels >= 1 &&
                cfg.embed_dim >= 1 && cfg.mlp_ratio > 0 && cfg.head_hidden >= 0 &&
                cfg.num_classes >= 1,
            Err::ShapeMismatch, "toy_swin: config dimensions must be positive");
    const std::int64_t pdim = cfg.patch[0] * cfg.patch[1] * cfg.patch[2] * cfg.in_channels;
    add_glorot(params, "patch_embed.w", {pdim, cfg.embed_dim}, pdim, cfg.embed_dim, seed);
    add_zeros(params, "patch_embed.b", {cfg.embed_dim});
    std::int64_t dim = cfg.embed_dim;
    for (std::size_t s = 0; s < cfg.depths.size(); ++s) {
      require(cfg.heads[s] >= 1 && dim % cfg.heads[s] == 0, Err::HeadsDontDivide,
              "toy_swin: stage " + std::to_string(s) + " dim " + std::to_string(dim) +
                  " not divisible by " + std::to_string(cfg.heads[s]) + " heads");
      require(cfg.depths[s] >= 1, Err::ShapeMismatch, "toy_swin: stage depth must be >= 1");
      for (std::int64_t bi = 0; bi < cfg.depths[s]; ++bi) {
        const std::string p = block_prefix(s, bi);
        add_ones(params, p + "ln1.gamma", {dim});
        add_zeros(params, p + "ln1.beta", {dim});
        add_glorot(params, p + "attn.qkv.w", {dim, 3 * dim}, dim, 3 * dim, seed);
        add_zeros(params, p + "attn.qkv.b", {3 * dim});
        add_glorot(params, p + "attn.proj.w", {dim, dim}, dim, dim, seed);
        add_zeros(params, p + "attn.proj.b", {dim});
        add_ones(params, p + "ln2.gamma", {dim});
        add_zeros(params, p + "ln2.beta", {dim});
        const std::int64_t mh = mlp_hidden(dim);
        add_glorot(params, p + "mlp.fc1.w", {dim, mh}, dim, mh, seed);
        add_zeros(params, p + "mlp.fc1.b", {mh});
        add_glorot(params, p + "mlp.fc2.w", {mh, dim}, mh, dim, seed);
        add_zeros(params, p + "mlp.fc2.b", {dim});
      }
      if (s + 1 < cfg.depths.size()) {
        const std::string m = "merge" + std::to_string(s) + ".";
        add_ones(params, m + "norm.gamma", {4 * dim});
        add_zeros(params, m + "norm.beta", {4 * dim});
        add_glorot(params, m + "reduce.w", {4 * dim, 2 * dim}, 4 * dim, 2 * dim, seed);
        dim *= 2;
      }
    }
    if (cfg.head_hidden > 0) {
      add_glorot(params, "head.hidden.w", {dim, cfg.head_hidden}, dim, cfg.head_hidden, seed);
      add_zeros(params, "head.hidden.b", {cfg.head_hidden});
    }
    const std::int64_t head_in = cfg.head_hidden > 0 ? cfg.head_hidden : dim;
    add_glorot(params, "head.out.w", {head_in, cfg.num_classes}, head_in, cfg.num_classes, seed);
    add_zeros(params, "head.out.b", {cfg.num_classes});
  }

  // x [B, frames, height, width, in_channels] -> probabilities [B, classes].
  // `l2_refs`, when supplied, receives the regularized parameter refs (the
  // classification head's output kernel).
  Ref forward(Tape& t, Ref x, engine::Mode mode, std::uint64_t seed,
              std::vector<Ref>* l2_refs = nullptr) {
    const auto& vx = t.val(x);
    require(vx.rank() == 5 && vx.dim(1) == cfg.frames && vx.dim(2) == cfg.height &&
                vx.dim(3) == cfg.width && vx.dim(4) == cfg.in_channels,
            Err::ShapeMismatch,
            "toy_swin: expected input [B," + std::to_string(cfg.frames) + "," +
                std::to_string(cfg.height) + "," + std::to_string(cfg.width) + "," +
                std::to_string(cfg.in_channels) + "], got " + shape_str(vx.shape));
    require(cfg.frames % cfg.patch[0] == 0 && cfg.height % cfg.patch[1] == 0 &&
                cfg.width % cfg.patch[2] == 0,
            Err::ShapeMismatch, "toy_swin: patch size must divide the input extents");
    const std::int64_t b = vx.dim(0);
    auto P = [&](const std::string& name) { return t.param(params.get(name)); };

    Dim3 grid{cfg.frames / cfg.patch[0], cfg.height / cfg.patch[1], cfg.width / cfg.patch[2]};
    std::int64_t dim = cfg.embed_dim;
    Ref tok = t.gather(x, patch_plan(b));
    const std::int64_t pdim = cfg.patch[0] * cfg.patch[1] * cfg.patch[2] * cfg.in_channels;
    tok = t.dense(t.reshape(tok, {b * grid[0] * grid[1] * grid[2], pdim}), P("patch_embed.w"),
                  P("patch_embed.b"), engine::Activation::None);
    tok = t.reshape(tok, {b, grid[0], grid[1], grid[2], dim});

    for (std::size_t s = 0; s < cfg.depths.size(); ++s) {
      for (std::int64_t bi = 0; bi < cfg.depths[s]; ++bi) {
        // Odd blocks shift by half a window; axes whose extent does not
        // exceed the window are capped to the extent and never shifted.
        Dim3 win{}, shift{};
        bool any_shift = false;
        for (int a = 0; a < 3; ++a) {
          win[a] = std::min(cfg.window[a], grid[a]);
          shift[a] = (bi % 2 == 1 && grid[a] > win[a]) ? win[a] / 2 : 0;
          any_shift = any_shift || shift[a] != 0;
        }
        const std::string p = block_prefix(s, bi);
        Ref skip = tok;
        Ref h = t.layernorm(tok, P(p + "ln1.gamma"), P(p + "ln1.beta"),
                            static_cast<T>(kLnEpsilon));
        if (any_shift) h = cyclic_shift3d(t, h, shift);
        Ref win_tok = partition_windows3d(t, h, win);
        std::shared_ptr<const BasicTensor<T>> mask;
        if (any_shift)
          mask = std::make_shared<const BasicTensor<T>>(build_shift_mask<T>(grid, win, shift));
        Ref attn = wmsa3d(t, win_tok, P(p + "attn.qkv.w"), P(p + "attn.qkv.b"),
                          P(p + "attn.proj.w"), P(p + "attn.proj.b"), cfg.heads[s], mask);
        h = reverse_windows3d(t, attn, b, grid, win);
        if (any_shift) h = cyclic_unshift3d(t, h, shift);
        tok = t.add(skip, h);

        Ref skip2 = tok;
        Ref m = t.layernorm(tok, P(p + "ln2.gamma"), P(p + "ln2.beta"),
                            static_cast<T>(kLnEpsilon));
        const std::int64_t rows = b * grid[0] * grid[1] * grid[2];
        m = t.reshape(m, {rows, dim});
        m = t.gelu(t.dense(m, P(p + "mlp.fc1.w"), P(p + "mlp.fc1.b"), engine::Activation::None));
        m = t.dense(m, P(p + "mlp.fc2.w"), P(p + "mlp.fc2.b"), engine::Activation::None);
        tok = t.add(skip2, t.reshape(m, {b, grid[0], grid[1], grid[2], dim}));
      }
      if (s + 1 < cfg.depths.size()) {
        const std::string m = "merge" + std::to_string(s) + ".";
        tok = patch_merge(t, tok, P(m + "norm.gamma"), P(m + "norm.beta"), P(m + "reduce.w"));
        grid[1] /= 2;
        grid[2] /= 2;
        dim *= 2;
      }
    }

    Ref gap = t.mean_tokens(t.reshape(tok, {b, grid[0] * grid[1] * grid[2], dim}));
    Ref g = gap;
    if (cfg.head_hidden > 0)
      g = t.dense(g, P("head.hidden.w"), P("head.hidden.b"), engine::Activation::Relu);
    g = t.dropout(g, static_cast<T>(cfg.head_dropout), mode,
                  derive_seed(seed, tag_hash("head_drop")));
    Ref out_w = P("head.out.w");
    if (l2_refs) l2_refs->push_back(out_w);
    return t.dense(g, out_w, P("head.out.b"), engine::Activation::Softmax);
  }

  std::string config_json() const {
    nlohmann::json j = cfg;
    return j.dump();
  }

  std::vector<std::pair<std::string, BasicTensor<T>*>> state_tensors() { return {}; }
  void mark_loaded() {}

  template <class U>
  ToySwinModelT<U> cast() const {
    ToySwinModelT<U> dst(cfg, 0);
    for (const auto& p : params) {
      auto& d = dst.params.get(p->name);
      d.value = p->value.template cast<U>();
      d.set_trainable(p->trainable);
    }
    return dst;
  }

  // Parameter names left trainable by FreezePolicy::PaperPolicy: the final
  // block of the last stage keeps its attention projections and both layer
  // norms, the classification head stays trainable, everything else (that
  // block's MLP included) freezes.
  std::vector<std::string> paper_policy_trainable() const {
    const std::size_t s = cfg.depths.size() - 1;
    const std::string p = block_prefix(s, cfg.depths[s] - 1);
    std::vector<std::string> names = {p + "ln1.gamma",    p + "ln1.beta",
                                      p + "attn.qkv.w",   p + "attn.qkv.b",
                                      p + "attn.proj.w",  p + "attn.proj.b",
                                      p + "ln2.gamma",    p + "ln2.beta"};
    if (cfg.head_hidden > 0) {
      names.push_back("head.hidden.w");
      names.push_back("head.hidden.b");
    }
    names.push_back("head.out.w");
    names.push_back("head.out.b");
    return names;
  }

  void apply_freeze(FreezePolicy policy) {
    if (policy == FreezePolicy::AllTrainable) {
      for (auto& p : params) p->set_trainable(true);
      return;
    }
    const auto list = paper_policy_trainable();
    const std::set<std::string> keep(list.begin(), list.end());
    for (auto& p : params) p->set_trainable(keep.count(p->name) > 0);
  }

 private:
  static std::string block_prefix(std::size_t stage, std::int64_t block) {
    return "stage" + std::to_string(stage) + ".block" + std::to_string(block) + ".";
  }

  std::int64_t mlp_hidden(std::int64_t dim) const {
    const auto h = static_cast<std::int64_t>(std::llround(cfg.mlp_ratio * static_cast<double>(dim)));
    return h < 1 ? 1 : h;
  }

  std::shared_ptr<const engine::GatherPlan> patch_plan(std::int64_t b) const {
    const Dim3 g{cfg.frames / cfg.patch[0], cfg.height / cfg.patch[1], cfg.width / cfg.patch[2]};
    const std::int64_t c = cfg.in_channels;
    const std::int64_t pdim = cfg.patch[0] * cfg.patch[1] * cfg.patch[2] * c;
    auto plan = std::make_shared<engine::GatherPlan>();
    plan->src_numel = b * cfg.frames * cfg.height * cfg.width * c;
    plan->out_shape = {b, g[0], g[1], g[2], pdim};
    plan->index.resize(static_cast<std::size_t>(plan->src_numel));
    std::size_t o = 0;
    for (std::int64_t bi = 0; bi < b; ++bi)
      for (std::int64_t i = 0; i < g[0]; ++i)
        for (std::int64_t j = 0; j < g[1]; ++j)
          for (std::int64_t k = 0; k < g[2]; ++k)
            for (std::int64_t dt = 0; dt < cfg.patch[0]; ++dt)
              for (std::int64_t dh = 0; dh < cfg.patch[1]; ++dh)
                for (std::int64_t dw = 0; dw < cfg.patch[2]; ++dw) {
                  const std::int64_t base =
                      (((bi * cfg.frames + i * cfg.patch[0] + dt) * cfg.height +
                        j * cfg.patch[1] + dh) *
                           cfg.width +
                       k * cfg.patch[2] + dw) *
                      c;
                  for (std::int64_t ci = 0; ci < c; ++ci) plan->index[o++] = base + ci;
                }
    return plan;
  }
};

using ToySwinModel = ToySwinModelT<double>;

}  // namespace mir::models

#endif  // MIR_MODELS_TOY_SWIN_HPP
