#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <array>
#include <cmath>
#include <cstring>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "doctest.h"
#include "mir/engine/adam.hpp"
#include "mir/io.hpp"
#include "mir/models/checkpoint.hpp"
#include "mir/models/cnn_lstm.hpp"
#include "mir/models/toy_swin.hpp"
#include "support/gradcheck.hpp"
#include "support/tempdir.hpp"

using namespace mir;
using namespace mir::models;
using engine::Adam;
using engine::Mode;
using engine::Tape;
using mir::testing::grad_check;
using mir::testing::random_tensor;
using mir::testing::TempDir;

namespace {

const std::vector<double> kUniform8(8, 1.0);

CnnLstmConfig tiny_cnn_cfg() {
  CnnLstmConfig c;
  c.input_length = 20;
  c.input_channels = 4;
  c.conv_filters1 = 4;
  c.conv_filters2 = 8;
  c.lstm_units = 4;
  c.hidden_dense = 4;
  c.dropout_rate = 0.0;
  return c;
}

ToySwinConfig tiny_swin_cfg() {
  ToySwinConfig c;
  c.frames = 4;
  c.height = 16;
  c.width = 16;
  c.patch = {2, 4, 4};
  c.embed_dim = 8;
  c.depths = {2, 2};
  c.heads = {2, 2};
  c.window = {2, 2, 2};
  c.mlp_ratio = 2.0;
  c.head_hidden = 4;
  c.head_dropout = 0.0;
  return c;
}

std::vector<int> random_labels(std::int64_t n, Rng& rng) {
  std::vector<int> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = static_cast<int>(rng.below(8));
  return out;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

// Central finite differences in parameter space: perturb sampled coordinates
// of every trainable parameter and compare against the tape gradients left by
// `with_grads`. `value` recomputes the loss from the current parameter values.
struct ParamFdReport {
  double worst = 0.0;
  std::int64_t checked = 0;
  std::int64_t skipped = 0;
  std::string detail;
};

template <class WithGrads, class Value>
ParamFdReport param_space_fd(engine::ParamStore<double>& ps, WithGrads&& with_grads, Value&& value,
                             Rng& rng, int coords_per_param, double h = 1e-5) {
  ps.zero_grads();
  with_grads();
  ParamFdReport rep;
  for (auto& p : ps) {
    if (!p->trainable) continue;
    for (int c = 0; c < coords_per_param; ++c) {
      const auto i =
          static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(p->value.numel())));
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double up = value();
      p->value[i] = orig - h;
      const double dn = value();
      p->value[i] = orig;
      const double numeric = (up - dn) / (2.0 * h);
      const double a = p->grad[i];
      const double denom = std::abs(a) + std::abs(numeric);
      if (denom < 1e-8) {
        ++rep.skipped;
        continue;
      }
      const double diff = std::abs(a - numeric);
      const double rel = diff < 1e-8 ? 0.0 : diff / denom;  // FD noise floor
      ++rep.checked;
      if (rel > rep.worst) {
        rep.worst = rel;
        rep.detail = p->name + "[" + std::to_string(i) + "] analytic=" + std::to_string(a) +
                     " numeric=" + std::to_string(numeric);
      }
    }
  }
  return rep;
}

// Reference attention over the displaced (pre-shift) window groups, computed
// with plain loops on the original token grid. Per axis the group boundaries
// sit at {0, s, s+w, s+2w, ...}; a token pair may attend iff all three group
// indices match. This is the semantics the cyclic-shift + mask pipeline must
// reproduce exactly.
Tensor brute_shifted_attention(const Tensor& x, const Dim3& win, const Dim3& shift,
                               std::int64_t heads, const Tensor& wqkv, const Tensor& bqkv,
                               const Tensor& wproj, const Tensor& bproj) {
  const std::int64_t B = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3), D = x.dim(4);
  const std::int64_t hd = D / heads;
  const Dim3 grid{T, H, W};
  auto axis_group = [&](std::int64_t o, int axis) {
    const std::int64_t e = grid[static_cast<std::size_t>(axis)];
    const std::int64_t w = win[static_cast<std::size_t>(axis)];
    const std::int64_t s = ((shift[static_cast<std::size_t>(axis)] % e) + e) % e;
    if (s == 0) return o / w;
    return o < s ? std::int64_t(0) : (o - s) / w + 1;
  };
  Tensor out(x.shape);
  for (std::int64_t b = 0; b < B; ++b) {
    std::map<std::tuple<std::int64_t, std::int64_t, std::int64_t>,
             std::vector<std::array<std::int64_t, 3>>>
        groups;
    for (std::int64_t t = 0; t < T; ++t)
      for (std::int64_t h = 0; h < H; ++h)
        for (std::int64_t w = 0; w < W; ++w)
          groups[{axis_group(t, 0), axis_group(h, 1), axis_group(w, 2)}].push_back({t, h, w});
    for (const auto& [key, members] : groups) {
      (void)key;
      const auto n = static_cast<std::int64_t>(members.size());
      auto tok_at = [&](std::int64_t i, std::int64_t d) {
        const auto& m = members[static_cast<std::size_t>(i)];
        return x[(((b * T + m[0]) * H + m[1]) * W + m[2]) * D + d];
      };
      std::vector<double> qkv(static_cast<std::size_t>(n * 3 * D), 0.0);
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t col = 0; col < 3 * D; ++col) {
          double acc = bqkv[col];
          for (std::int64_t d = 0; d < D; ++d) acc += tok_at(i, d) * wqkv[d * 3 * D + col];
          qkv[static_cast<std::size_t>(i * 3 * D + col)] = acc;
        }
      std::vector<double> merged(static_cast<std::size_t>(n * D), 0.0);
      for (std::int64_t head = 0; head < heads; ++head) {
        auto q = [&](std::int64_t i, std::int64_t e) {
          return qkv[static_cast<std::size_t>(i * 3 * D + head * hd + e)];
        };
        auto k = [&](std::int64_t i, std::int64_t e) {
          return qkv[static_cast<std::size_t>(i * 3 * D + D + head * hd + e)];
        };
        auto v = [&](std::int64_t i, std::int64_t e) {
          return qkv[static_cast<std::size_t>(i * 3 * D + 2 * D + head * hd + e)];
        };
        for (std::int64_t i = 0; i < n; ++i) {
          std::vector<double> sc(static_cast<std::size_t>(n));
          double mx = -1e300;
          for (std::int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::int64_t e = 0; e < hd; ++e) acc += q(i, e) * k(j, e);
            sc[static_cast<std::size_t>(j)] = acc / std::sqrt(static_cast<double>(hd));
            mx = std::max(mx, sc[static_cast<std::size_t>(j)]);
          }
          double den = 0.0;
          for (auto& s : sc) {
            s = std::exp(s - mx);
            den += s;
          }
          for (std::int64_t e = 0; e < hd; ++e) {
            double acc = 0.0;
            for (std::int64_t j = 0; j < n; ++j) acc += sc[static_cast<std::size_t>(j)] * v(j, e);
            merged[static_cast<std::size_t>(i * D + head * hd + e)] = acc / den;
          }
        }
      }
      for (std::int64_t i = 0; i < n; ++i) {
        const auto& m = members[static_cast<std::size_t>(i)];
        for (std::int64_t col = 0; col < D; ++col) {
          double acc = bproj[col];
          for (std::int64_t d = 0; d < D; ++d)
            acc += merged[static_cast<std::size_t>(i * D + d)] * wproj[d * D + col];
          out[(((b * T + m[0]) * H + m[1]) * W + m[2]) * D + col] = acc;
        }
      }
    }
  }
  return out;
}

// The same pipeline the model runs: shift, partition, masked attention,
// reverse, unshift.
Tensor run_shifted_pipeline(const Tensor& x, const Dim3& win, const Dim3& shift,
                            std::int64_t heads, const Tensor& wqkv, const Tensor& bqkv,
                            const Tensor& wproj, const Tensor& bproj) {
  Tape t;
  const Dim3 grid{x.dim(1), x.dim(2), x.dim(3)};
  auto xr = t.input(x);
  auto shifted = cyclic_shift3d(t, xr, shift);
  auto part = partition_windows3d(t, shifted, win);
  auto mask = std::make_shared<const Tensor>(build_shift_mask<double>(grid, win, shift));
  auto att = wmsa3d(t, part, t.input(wqkv), t.input(bqkv), t.input(wproj), t.input(bproj), heads,
                    mask);
  auto rev = reverse_windows3d(t, att, x.dim(0), grid, win);
  auto res = cyclic_unshift3d(t, rev, shift);
  return t.val(res);
}

}  // namespace

// ---------------------------------------------------------------------------
// CNN-LSTM
// ---------------------------------------------------------------------------

TEST_CASE("cnn_lstm: output shape, row normalization, probability codomain") {
  CnnLstmModel m(CnnLstmConfig{}, 42);
  Rng rng(1);
  const Tensor x = random_tensor({2, 100, 4}, rng, 0.5);
  Tape t;
  auto out = m.forward(t, t.input(x), Mode::Train, 11);
  const auto& v = t.val(out);
  REQUIRE(v.shape == Shape{2, 8});
  for (std::int64_t b = 0; b < 2; ++b) {
    double sum = 0.0;
    for (std::int64_t k = 0; k < 8; ++k) {
      const double p = v[b * 8 + k];
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
      sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }

  Tape t2;
  const Tensor bad = random_tensor({2, 50, 4}, rng, 0.5);
  CHECK_THROWS_WITH_AS(m.forward(t2, t2.input(bad), Mode::Train, 11),
                       doctest::Contains("ShapeMismatch"), Error);
}

TEST_CASE("cnn_lstm: eval forwards are deterministic and draw no randomness") {
  CnnLstmModel m(CnnLstmConfig{}, 9);
  Rng rng(2);
  const Tensor x = random_tensor({3, 100, 4}, rng, 0.5);

  // One train-mode pass first: initializes batch-norm statistics and shows
  // that train mode does consume randomness (dropout is active).
  const std::uint64_t before_train = Rng::global_draws();
  {
    Tape t;
    m.forward(t, t.input(x), Mode::Train, 5);
  }
  CHECK(Rng::global_draws() > before_train);

  const std::uint64_t before_eval = Rng::global_draws();
  Tensor a, b;
  {
    Tape t;
    a = t.val(m.forward(t, t.input(x), Mode::Eval, 5));
  }
  {
    Tape t;
    b = t.val(m.forward(t, t.input(x), Mode::Eval, 77));  // seed must not matter in eval
  }
  CHECK(Rng::global_draws() == before_eval);
  CHECK(bitwise_equal(a, b));
}

TEST_CASE("cnn_lstm: parameter initialization is seed-deterministic per name") {
  CnnLstmModel a(CnnLstmConfig{}, 7);
  CnnLstmModel b(CnnLstmConfig{}, 7);
  CnnLstmModel c(CnnLstmConfig{}, 8);
  bool any_diff = false;
  for (const auto& p : a.params) {
    CHECK(bitwise_equal(p->value, b.params.get(p->name).value));
    if (!bitwise_equal(p->value, c.params.get(p->name).value)) any_diff = true;
  }
  CHECK(any_diff);

  // Forget-gate bias quarter starts at 1 (gate order [i,f,g,o]).
  const auto& bias = a.params.get("lstm1.b").value;
  const std::int64_t h = CnnLstmConfig{}.lstm_units;
  for (std::int64_t i = 0; i < 4 * h; ++i)
    CHECK(bias[i] == (i >= h && i < 2 * h ? 1.0 : 0.0));
}

TEST_CASE("cnn_lstm: end-to-end gradient check at a tiny config") {
  for (int trial = 0; trial < 10; ++trial) {
    CnnLstmModel m(tiny_cnn_cfg(), 100 + static_cast<std::uint64_t>(trial));
    Rng rng(derive_seed(4000, static_cast<std::uint64_t>(trial)));
    const Tensor x = random_tensor({2, 20, 4}, rng, 0.8);
    const auto labels = random_labels(2, rng);

    auto f = [&](Tape& t, const std::vector<Tape::Ref>& leaves) {
      auto probs = m.forward(t, leaves[0], Mode::Train, 3);
      return t.weighted_sce(probs, labels, kUniform8);
    };
    auto res = grad_check(f, {x});
    CHECK_MESSAGE(res.ok, res.detail);
    CHECK(res.checked > 0);

    auto with_grads = [&] {
      Tape t;
      auto probs = m.forward(t, t.input(x), Mode::Train, 3);
      t.backward(t.weighted_sce(probs, labels, kUniform8));
    };
    auto value = [&] {
      Tape t;
      auto probs = m.forward(t, t.input(x), Mode::Train, 3);
      return t.val(t.weighted_sce(probs, labels, kUniform8))[0];
    };
    auto rep = param_space_fd(m.params, with_grads, value, rng, 3);
    CHECK_MESSAGE(rep.worst <= 1e-4, rep.detail);
    CHECK(rep.checked > 0);
  }
}

// ---------------------------------------------------------------------------
// Window ops
// ---------------------------------------------------------------------------

TEST_CASE("partition_windows3d: counts, degenerate window, roundtrip, divisibility") {
  Rng rng(31);
  const Tensor x = random_tensor({1, 4, 4, 4, 2}, rng);
  Tape t;
  auto xr = t.input(x);

  auto p = partition_windows3d(t, xr, {2, 2, 2});
  CHECK(t.val(p).shape == Shape{8, 8, 2});  // 8 windows of 8 tokens

  auto whole = partition_windows3d(t, xr, {4, 4, 4});
  CHECK(t.val(whole).shape == Shape{1, 64, 2});

  auto back = reverse_windows3d(t, p, 1, {4, 4, 4}, {2, 2, 2});
  CHECK(bitwise_equal(t.val(back), x));

  CHECK_THROWS_WITH_AS(partition_windows3d(t, xr, {3, 2, 2}), doctest::Contains("NotDivisible"),
                       Error);
}

TEST_CASE("cyclic_shift3d: identity, forced swap, modulo, roundtrip") {
  Tape t;
  Rng rng(32);
  const Tensor x = random_tensor({2, 4, 4, 4, 3}, rng);
  auto xr = t.input(x);

  CHECK(bitwise_equal(t.val(cyclic_shift3d(t, xr, {0, 0, 0})), x));

  // T=2: shifting by one swaps the two frames.
  const Tensor two({1, 2, 1, 1, 1}, {10.0, 20.0});
  auto swapped = cyclic_shift3d(t, t.input(two), {1, 0, 0});
  CHECK(t.val(swapped)[0] == 20.0);
  CHECK(t.val(swapped)[1] == 10.0);

  auto round = cyclic_unshift3d(t, cyclic_shift3d(t, xr, {1, 2, 3}), {1, 2, 3});
  CHECK(bitwise_equal(t.val(round), x));

  // Shifts are modular: 5 = 1, -3 = 1, 4 = 0 on extent 4.
  auto a = cyclic_shift3d(t, xr, {5, -3, 4});
  auto b = cyclic_shift3d(t, xr, {1, 1, 0});
  CHECK(bitwise_equal(t.val(a), t.val(b)));
}

TEST_CASE("build_shift_mask: zero shift, wrapped 1-D window, codomain") {
  const auto zero = build_shift_mask<double>({4, 4, 4}, {2, 2, 2}, {0, 0, 0});
  for (std::int64_t i = 0; i < zero.numel(); ++i) CHECK(zero[i] == 0.0);

  // 1-D reduction: extent 4, window 2, shift 1. The second (wrapped) window
  // holds the last real token and the wrapped first token: exactly the two
  // cross pairs are masked.
  const auto m = build_shift_mask<double>({1, 1, 4}, {1, 1, 2}, {0, 0, 1});
  REQUIRE(m.shape == Shape{2, 2, 2});
  CHECK(m[0] == 0.0);
  CHECK(m[1] == 0.0);
  CHECK(m[2] == 0.0);
  CHECK(m[3] == 0.0);
  CHECK(m[4] == 0.0);      // (0,0) same region
  CHECK(m[5] == -1e9);     // (0,1) cross
  CHECK(m[6] == -1e9);     // (1,0) cross
  CHECK(m[7] == 0.0);      // (1,1) same region

  // Codomain and zero diagonal over assorted configurations.
  const std::array<std::array<Dim3, 3>, 3> cases = {{
      {{{4, 4, 4}, {2, 2, 2}, {1, 1, 1}}},
      {{{2, 4, 8}, {2, 2, 2}, {0, 1, 1}}},
      {{{6, 4, 4}, {3, 2, 2}, {1, 1, 0}}},
  }};
  for (const auto& c : cases) {
    const auto mask = build_shift_mask<double>(c[0], c[1], c[2]);
    const std::int64_t n = mask.dim(1);
    for (std::int64_t w = 0; w < mask.dim(0); ++w)
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
          const double v = mask[(w * n + i) * n + j];
          CHECK((v == 0.0 || v == -1e9));
          if (i == j) CHECK(v == 0.0);
        }
  }
}

TEST_CASE("wmsa3d: single-token window and diagonal mask reduce to projections") {
  Rng rng(33);
  const std::int64_t D = 4, heads = 2;
  const Tensor wqkv = random_tensor({D, 3 * D}, rng);
  const Tensor bqkv = random_tensor({3 * D}, rng);
  const Tensor wproj = random_tensor({D, D}, rng);
  const Tensor bproj = random_tensor({D}, rng);

  auto project = [&](const std::vector<double>& tok) {
    // v = tok . W_v + b_v (columns [2D, 3D)), then out = v . W_proj + b_proj
    std::vector<double> v(static_cast<std::size_t>(D));
    for (std::int64_t c = 0; c < D; ++c) {
      double acc = bqkv[2 * D + c];
      for (std::int64_t d = 0; d < D; ++d) acc += tok[static_cast<std::size_t>(d)] * wqkv[d * 3 * D + 2 * D + c];
      v[static_cast<std::size_t>(c)] = acc;
    }
    std::vector<double> out(static_cast<std::size_t>(D));
    for (std::int64_t c = 0; c < D; ++c) {
      double acc = bproj[c];
      for (std::int64_t d = 0; d < D; ++d) acc += v[static_cast<std::size_t>(d)] * wproj[d * D + c];
      out[static_cast<std::size_t>(c)] = acc;
    }
    return out;
  };

  SUBCASE("single token per window") {
    const Tensor x = random_tensor({3, 1, D}, rng);
    Tape t;
    auto out = wmsa3d(t, t.input(x), t.input(wqkv), t.input(bqkv), t.input(wproj),
                      t.input(bproj), heads);
    REQUIRE(t.val(out).shape == Shape{3, 1, D});
    for (std::int64_t w = 0; w < 3; ++w) {
      std::vector<double> tok(static_cast<std::size_t>(D));
      for (std::int64_t d = 0; d < D; ++d) tok[static_cast<std::size_t>(d)] = x[w * D + d];
      const auto expect = project(tok);
      for (std::int64_t d = 0; d < D; ++d)
        CHECK(t.val(out)[w * D + d] == doctest::Approx(expect[static_cast<std::size_t>(d)]).epsilon(1e-12));
    }
  }

  SUBCASE("diagonal mask pins each token to itself") {
    const std::int64_t n = 3;
    const Tensor x = random_tensor({2, n, D}, rng);
    Tensor mask = Tensor::zeros({1, n, n});
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j)
        if (i != j) mask[i * n + j] = -1e9;
    Tape t;
    auto out = wmsa3d(t, t.input(x), t.input(wqkv), t.input(bqkv), t.input(wproj),
                      t.input(bproj), heads, std::make_shared<const Tensor>(mask));
    for (std::int64_t w = 0; w < 2; ++w)
      for (std::int64_t i = 0; i < n; ++i) {
        std::vector<double> tok(static_cast<std::size_t>(D));
        for (std::int64_t d = 0; d < D; ++d) tok[static_cast<std::size_t>(d)] = x[(w * n + i) * D + d];
        const auto expect = project(tok);
        for (std::int64_t d = 0; d < D; ++d)
          CHECK(t.val(out)[(w * n + i) * D + d] ==
                doctest::Approx(expect[static_cast<std::size_t>(d)]).epsilon(1e-10));
      }
  }

  SUBCASE("heads must divide the embedding dim") {
    const Tensor x = random_tensor({1, 2, D}, rng);
    Tape t;
    CHECK_THROWS_WITH_AS(wmsa3d(t, t.input(x), t.input(wqkv), t.input(bqkv), t.input(wproj),
                                t.input(bproj), 3),
                         doctest::Contains("HeadsDontDivide"), Error);
  }
}

TEST_CASE("wmsa3d: gradient check with an active mask") {
  // Window 1 is split into two regions so some attention weights are exactly
  // zeroed; gradients must still match finite differences.
  const std::int64_t nb = 2, n = 4, D = 4, heads = 2;
  Tensor mask = Tensor::zeros({2, n, n});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      const bool same = (i < 2) == (j < 2);
      if (!same) mask[(1 * n + i) * n + j] = -1e9;
    }
  auto mask_ptr = std::make_shared<const Tensor>(mask);

  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(derive_seed(4100, static_cast<std::uint64_t>(trial)));
    std::vector<Tensor> inputs = {
        random_tensor({nb, n, D}, rng, 0.7), random_tensor({D, 3 * D}, rng, 0.7),
        random_tensor({3 * D}, rng, 0.7),    random_tensor({D, D}, rng, 0.7),
        random_tensor({D}, rng, 0.7)};
    auto f = [&](Tape& t, const std::vector<Tape::Ref>& in) {
      auto out = wmsa3d(t, in[0], in[1], in[2], in[3], in[4], heads, mask_ptr);
      // reduce to a scalar via a fixed weighted sum that hits every element
      auto flat = t.reshape(out, {1, nb * n * D});
      Tensor w({nb * n * D, 1});
      Rng wr(99);
      for (auto& v : w.data) v = wr.uniform(-1.0, 1.0);
      return t.matmul(flat, t.input(w));
    };
    auto res = grad_check(f, inputs);
    CHECK_MESSAGE(res.ok, res.detail);
    CHECK(res.checked > 0);
  }
}

TEST_CASE("shifted-window pipeline equals displaced-window brute force") {
  struct Case {
    Shape xshape;
    Dim3 win, shift;
    std::int64_t heads;
  };
  const std::vector<Case> cases = {
      {{1, 4, 4, 4, 8}, {2, 2, 2}, {1, 1, 1}, 2},  // the reference configuration
      {{1, 4, 4, 4, 8}, {2, 2, 2}, {1, 1, 1}, 4},
      {{2, 2, 4, 4, 6}, {2, 2, 2}, {0, 1, 1}, 3},  // no temporal shift (capped axis)
      {{1, 6, 4, 4, 4}, {3, 2, 2}, {1, 1, 0}, 2},  // asymmetric window and shift
  };
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const auto& c = cases[ci];
    for (int trial = 0; trial < 3; ++trial) {
      Rng rng(derive_seed(4200, static_cast<std::uint64_t>(ci), static_cast<std::uint64_t>(trial)));
      const std::int64_t D = c.xshape[4];
      const Tensor x = random_tensor(c.xshape, rng);
      const Tensor wqkv = random_tensor({D, 3 * D}, rng, 0.5);
      const Tensor bqkv = random_tensor({3 * D}, rng, 0.5);
      const Tensor wproj = random_tensor({D, D}, rng, 0.5);
      const Tensor bproj = random_tensor({D}, rng, 0.5);

      const Tensor got = run_shifted_pipeline(x, c.win, c.shift, c.heads, wqkv, bqkv, wproj, bproj);
      const Tensor want =
          brute_shifted_attention(x, c.win, c.shift, c.heads, wqkv, bqkv, wproj, bproj);
      REQUIRE(got.shape == want.shape);
      double worst = 0.0;
      for (std::int64_t i = 0; i < got.numel(); ++i)
        worst = std::max(worst, std::abs(got[i] - want[i]));
      CHECK_MESSAGE(worst <= 1e-5, "case " << ci << " trial " << trial << " max abs diff "
                                           << worst);
    }
  }
}

TEST_CASE("patch_merge: shape, selector behavior, odd dims, gradient") {
  SUBCASE("shape arithmetic") {
    Rng rng(34);
    Tape t;
    auto out = patch_merge(t, t.input(random_tensor({1, 2, 4, 4, 8}, rng)),
                           t.input(Tensor::full({32}, 1.0)), t.input(Tensor::zeros({32})),
                           t.input(random_tensor({32, 16}, rng)));
    CHECK(t.val(out).shape == Shape{1, 2, 2, 2, 16});
  }

  SUBCASE("identity-like selector keeps the top-left features") {
    // Fill every 2x2 neighborhood with a balanced +/-1 pattern: the 4D concat
    // vector then has exactly mean 0 and variance 1, so the layer norm is the
    // identity up to the epsilon. A [I;0] reduction must return the first 2D
    // entries, whose first D values are the top-left neighbor's features.
    const std::int64_t D = 8;
    Tensor x = Tensor::zeros({1, 1, 4, 4, D});
    Rng rng(35);
    for (std::int64_t i = 0; i < 2; ++i)
      for (std::int64_t j = 0; j < 2; ++j) {
        std::vector<double> signs(static_cast<std::size_t>(4 * D));
        for (std::size_t k = 0; k < signs.size(); ++k) signs[k] = k < signs.size() / 2 ? 1.0 : -1.0;
        deterministic_shuffle(signs, rng);
        std::size_t k = 0;
        for (const auto& off : {std::pair{0, 0}, std::pair{0, 1}, std::pair{1, 0}, std::pair{1, 1}})
          for (std::int64_t d = 0; d < D; ++d)
            x[((2 * i + off.first) * 4 + 2 * j + off.second) * D + d] = signs[k++];
      }
    Tensor reduce = Tensor::zeros({4 * D, 2 * D});
    for (std::int64_t d = 0; d < 2 * D; ++d) reduce[d * 2 * D + d] = 1.0;
    Tape t;
    auto out = patch_merge(t, t.input(x), t.input(Tensor::full({4 * D}, 1.0)),
                           t.input(Tensor::zeros({4 * D})), t.input(reduce));
    const auto& v = t.val(out);
    REQUIRE(v.shape == Shape{1, 1, 2, 2, 2 * D});
    for (std::int64_t i = 0; i < 2; ++i)
      for (std::int64_t j = 0; j < 2; ++j)
        for (std::int64_t d = 0; d < D; ++d) {
          const double top_left = x[((2 * i) * 4 + 2 * j) * D + d];
          CHECK(v[((i * 2) + j) * 2 * D + d] == doctest::Approx(top_left).epsilon(1e-4));
        }
  }

  SUBCASE("odd spatial dims rejected") {
    Rng rng(36);
    Tape t;
    CHECK_THROWS_WITH_AS(patch_merge(t, t.input(random_tensor({1, 2, 3, 4, 4}, rng)),
                                     t.input(Tensor::full({16}, 1.0)),
                                     t.input(Tensor::zeros({16})),
                                     t.input(random_tensor({16, 8}, rng))),
                         doctest::Contains("OddSpatialDims"), Error);
  }

  SUBCASE("gradient check") {
    for (int trial = 0; trial < 10; ++trial) {
      Rng rng(derive_seed(4300, static_cast<std::uint64_t>(trial)));
      std::vector<Tensor> inputs = {random_tensor({1, 2, 4, 4, 4}, rng, 0.7),
                                    random_tensor({16}, rng, 0.5),
                                    random_tensor({16}, rng, 0.5),
                                    random_tensor({16, 8}, rng, 0.7)};
      inputs[1].fill(1.0);
      for (std::int64_t i = 0; i < 16; ++i) inputs[1][i] += 0.1 * rng.uniform();
      auto f = [&](Tape& t, const std::vector<Tape::Ref>& in) {
        auto out = patch_merge(t, in[0], in[1], in[2], in[3]);
        auto flat = t.reshape(out, {1, t.val(out).numel()});
        Tensor w({t.val(flat).dim(1), 1});
        Rng wr(98);
        for (auto& v : w.data) v = wr.uniform(-1.0, 1.0);
        return t.matmul(flat, t.input(w));
      };
      auto res = grad_check(f, inputs);
      CHECK_MESSAGE(res.ok, res.detail);
      CHECK(res.checked > 0);
    }
  }
}

// ---------------------------------------------------------------------------
// Toy Swin model
// ---------------------------------------------------------------------------

TEST_CASE("toy_swin: output normalization, shape errors, eval purity") {
  ToySwinConfig cfg = tiny_swin_cfg();
  ToySwinModel m(cfg, 21);
  Rng rng(37);
  const Tensor x = random_tensor({2, cfg.frames, cfg.height, cfg.width, 3}, rng, 0.5);

  Tape t;
  auto out = m.forward(t, t.input(x), Mode::Train, 1);
  const auto& v = t.val(out);
  REQUIRE(v.shape == Shape{2, 8});
  for (std::int64_t b = 0; b < 2; ++b) {
    double sum = 0.0;
    for (std::int64_t k = 0; k < 8; ++k) {
      CHECK(v[b * 8 + k] >= 0.0);
      CHECK(v[b * 8 + k] <= 1.0);
      sum += v[b * 8 + k];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }

  Tape t2;
  const Tensor bad = random_tensor({2, cfg.frames, cfg.height, 8, 3}, rng, 0.5);
  CHECK_THROWS_WITH_AS(m.forward(t2, t2.input(bad), Mode::Train, 1),
                       doctest::Contains("ShapeMismatch"), Error);

  // Eval: bitwise deterministic, zero RNG draws, seed-independent.
  const std::uint64_t before = Rng::global_draws();
  Tensor a, b;
  {
    Tape te;
    a = te.val(m.forward(te, te.input(x), Mode::Eval, 5));
  }
  {
    Tape te;
    b = te.val(m.forward(te, te.input(x), Mode::Eval, 1234));
  }
  CHECK(Rng::global_draws() == before);
  CHECK(bitwise_equal(a, b));

  // Train mode with dropout enabled does draw.
  ToySwinConfig dcfg = cfg;
  dcfg.head_dropout = 0.5;
  ToySwinModel dm(dcfg, 21);
  const std::uint64_t before_train = Rng::global_draws();
  {
    Tape te;
    dm.forward(te, te.input(x), Mode::Train, 5);
  }
  CHECK(Rng::global_draws() > before_train);

  // The 32-bit cast tracks the 64-bit model closely.
  auto mf = m.cast<float>();
  engine::TapeT<float> tf;
  const TensorF xf = x.cast<float>();
  const auto& vf = tf.val(mf.forward(tf, tf.input(xf), Mode::Eval, 5));
  for (std::int64_t i = 0; i < vf.numel(); ++i)
    CHECK(static_cast<double>(vf[i]) == doctest::Approx(a[i]).epsilon(1e-3));
}

TEST_CASE("toy_swin: paper freeze policy matches the hand-enumerated list") {
  ToySwinModel m(ToySwinConfig{}, 3);
  m.apply_freeze(FreezePolicy::PaperPolicy);

  // Hand enumeration for the default config (2 stages of depth 2): the last
  // block of stage 1 keeps attention + both layer norms, the head stays
  // trainable, and everything else (that block's MLP included) freezes.
  const std::set<std::string> expected = {
      "stage1.block1.ln1.gamma",   "stage1.block1.ln1.beta",
      "stage1.block1.attn.qkv.w",  "stage1.block1.attn.qkv.b",
      "stage1.block1.attn.proj.w", "stage1.block1.attn.proj.b",
      "stage1.block1.ln2.gamma",   "stage1.block1.ln2.beta",
      "head.hidden.w",             "head.hidden.b",
      "head.out.w",                "head.out.b"};
  std::set<std::string> actual;
  for (const auto& p : m.params)
    if (p->trainable) actual.insert(p->name);
  CHECK(actual == expected);
  CHECK(m.params.get("stage1.block1.mlp.fc1.w").trainable == false);

  // Exact parameter arithmetic for the default toy config.
  CHECK(m.params.total_values() == 141608);
  CHECK(m.params.trainable_values() == 21576);
  CHECK(static_cast<double>(m.params.trainable_values()) /
            static_cast<double>(m.params.total_values()) <
        0.20);

  m.apply_freeze(FreezePolicy::AllTrainable);
  CHECK(m.params.trainable_values() == m.params.total_values());
}

TEST_CASE("toy_swin: 100 optimizer steps leave frozen parameters bitwise unchanged") {
  ToySwinModel m(tiny_swin_cfg(), 8);
  m.apply_freeze(FreezePolicy::PaperPolicy);
  std::map<std::string, Tensor> before;
  for (const auto& p : m.params) before[p->name] = p->value;

  Rng rng(38);
  const Tensor x = random_tensor({2, 4, 16, 16, 3}, rng, 0.5);
  const std::vector<int> labels = {1, 6};
  Adam adam(1e-3);
  for (int step = 0; step < 100; ++step) {
    m.params.zero_grads();
    Tape t;
    auto probs = m.forward(t, t.input(x), Mode::Train, static_cast<std::uint64_t>(step));
    t.backward(t.weighted_sce(probs, labels, kUniform8));
    adam.step(m.params);
  }

  bool any_trainable_changed = false;
  for (const auto& p : m.params) {
    if (p->trainable) {
      if (!bitwise_equal(p->value, before[p->name])) any_trainable_changed = true;
    } else {
      CHECK(bitwise_equal(p->value, before[p->name]));
      CHECK(p->grad.numel() == 0);  // frozen params own no gradient storage
    }
  }
  CHECK(any_trainable_changed);
}

TEST_CASE("toy_swin: gradient check on the unfrozen subset") {
  for (int trial = 0; trial < 10; ++trial) {
    ToySwinModel m(tiny_swin_cfg(), 600 + static_cast<std::uint64_t>(trial));
    m.apply_freeze(FreezePolicy::PaperPolicy);
    Rng rng(derive_seed(4400, static_cast<std::uint64_t>(trial)));
    const Tensor x = random_tensor({2, 4, 16, 16, 3}, rng, 0.6);
    const auto labels = random_labels(2, rng);

    auto with_grads = [&] {
      Tape t;
      auto probs = m.forward(t, t.input(x), Mode::Train, 3);
      t.backward(t.weighted_sce(probs, labels, kUniform8));
    };
    auto value = [&] {
      Tape t;
      auto probs = m.forward(t, t.input(x), Mode::Train, 3);
      return t.val(t.weighted_sce(probs, labels, kUniform8))[0];
    };
    auto rep = param_space_fd(m.params, with_grads, value, rng, 3);
    CHECK_MESSAGE(rep.worst <= 1e-4, rep.detail);
    CHECK(rep.checked > 0);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

// A model with a little training history: nonzero optimizer state and batch
// norm statistics.
CnnLstmModel trained_tiny_model(Adam& adam) {
  CnnLstmModel m(tiny_cnn_cfg(), 55);
  Rng rng(56);
  const Tensor x = random_tensor({4, 20, 4}, rng, 0.5);
  const std::vector<int> labels = {0, 3, 5, 7};
  for (int step = 0; step < 3; ++step) {
    m.params.zero_grads();
    Tape t;
    auto probs = m.forward(t, t.input(x), Mode::Train, static_cast<std::uint64_t>(step));
    t.backward(t.weighted_sce(probs, labels, kUniform8));
    adam.step(m.params);
  }
  return m;
}

}  // namespace

TEST_CASE("checkpoint: save/load roundtrip is bitwise") {
  TempDir dir("mir_models");
  Adam adam(1e-3);
  CnnLstmModel m = trained_tiny_model(adam);

  Checkpoint c = snapshot_model(m, 424242, &adam);
  const std::string path = dir.file("model.milc");
  save_checkpoint(c, path);
  const Checkpoint r = load_checkpoint(path);

  CHECK(r.version == c.version);
  CHECK(r.config_json == c.config_json);
  CHECK(r.seed == 424242);
  REQUIRE(r.tensors.size() == c.tensors.size());
  for (std::size_t i = 0; i < c.tensors.size(); ++i) {
    CHECK(r.tensors[i].first == c.tensors[i].first);
    CHECK(bitwise_equal(r.tensors[i].second, c.tensors[i].second));
  }
  CHECK(r.freeze == c.freeze);
  REQUIRE(r.has_optimizer);
  CHECK(r.optimizer_steps == adam.steps());
  REQUIRE(r.optimizer.size() == c.optimizer.size());
  for (std::size_t i = 0; i < c.optimizer.size(); ++i) {
    CHECK(r.optimizer[i].name == c.optimizer[i].name);
    CHECK(r.optimizer[i].m == c.optimizer[i].m);
    CHECK(r.optimizer[i].v == c.optimizer[i].v);
  }

  // Writing the loaded checkpoint again reproduces the file byte for byte.
  const std::string path2 = dir.file("model2.milc");
  save_checkpoint(r, path2);
  CHECK(io::read_file(path) == io::read_file(path2));

  // Restoring into a differently initialized model reproduces evaluation
  // outputs bitwise.
  CnnLstmModel fresh(tiny_cnn_cfg(), 77);
  Adam fresh_adam(1e-3);
  restore_model(fresh, r, &fresh_adam);
  CHECK(fresh_adam.steps() == adam.steps());
  Rng rng(57);
  const Tensor x = random_tensor({2, 20, 4}, rng, 0.5);
  Tensor a, b;
  {
    Tape t;
    a = t.val(m.forward(t, t.input(x), Mode::Eval, 0));
  }
  {
    Tape t;
    b = t.val(fresh.forward(t, t.input(x), Mode::Eval, 0));
  }
  CHECK(bitwise_equal(a, b));
}

TEST_CASE("checkpoint: corruption, version, and model mismatches are rejected") {
  TempDir dir("mir_models");
  Adam adam(1e-3);
  CnnLstmModel m = trained_tiny_model(adam);
  Checkpoint c = snapshot_model(m, 1, &adam);
  const std::string path = dir.file("c.milc");
  save_checkpoint(c, path);
  const std::string good = io::read_file(path);

  SUBCASE("truncated file") {
    io::write_file(path, good.substr(0, good.size() - 10));
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("CorruptPayload"), Error);
  }

  SUBCASE("flipped payload byte fails the whole-file checksum") {
    std::string bad = good;
    bad[bad.size() / 2] = static_cast<char>(bad[bad.size() / 2] ^ 0x40);
    io::write_file(path, bad);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("CorruptPayload"), Error);
  }

  SUBCASE("bad magic with a recomputed trailing checksum") {
    std::string body = good.substr(0, good.size() - 4);
    body[0] = 'X';
    io::put_u32(body, io::crc32(body));
    io::write_file(path, body);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("not a MILC"), Error);
  }

  SUBCASE("record corruption with a recomputed trailing checksum") {
    std::string body = good.substr(0, good.size() - 4);
    // Flip a byte inside the first tensor's f64 payload: past magic(4)
    // version(2) config(4+len) seed(8) count(4), then past the record's
    // name-len + name + rank + dims header.
    const std::size_t rec = 4 + 2 + 4 + c.config_json.size() + 8 + 4;
    const std::size_t off = rec + 4 + c.tensors[0].first.size() + 4 +
                            static_cast<std::size_t>(c.tensors[0].second.rank()) * 4 + 3;
    body[off] = static_cast<char>(body[off] ^ 0x01);
    io::put_u32(body, io::crc32(body));
    io::write_file(path, body);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("checksum"), Error);
  }

  SUBCASE("future version") {
    Checkpoint v2 = c;
    v2.version = 2;
    save_checkpoint(v2, path);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("VersionMismatch"), Error);
  }

  SUBCASE("cross-model restore") {
    ToySwinModel swin(tiny_swin_cfg(), 5);
    CHECK_THROWS_WITH_AS(restore_model(swin, c), doctest::Contains("ConfigMismatch"), Error);
    CHECK(checkpoint_model_kind(c) == "cnn_lstm");
  }

  SUBCASE("same family, different dimensions") {
    CnnLstmConfig other = tiny_cnn_cfg();
    other.input_length = 40;
    CnnLstmModel om(other, 5);
    CHECK_THROWS_WITH_AS(restore_model(om, c), doctest::Contains("ConfigMismatch"), Error);
  }

  SUBCASE("missing tensor") {
    Checkpoint broken = c;
    broken.tensors.pop_back();  // drops bn2.running_var
    CnnLstmModel om(tiny_cnn_cfg(), 5);
    CHECK_THROWS_WITH_AS(restore_model(om, broken), doctest::Contains("ConfigMismatch"), Error);
  }
}

TEST_CASE("model configs: canonical JSON roundtrip and strict keys") {
  CnnLstmConfig c = tiny_cnn_cfg();
  const nlohmann::json j = c;
  const CnnLstmConfig back = cnn_lstm_config_from_json(j);
  CHECK(nlohmann::json(back).dump() == j.dump());
  nlohmann::json bad = j;
  bad["kernel_sizes"] = 5;
  CHECK_THROWS_WITH_AS(cnn_lstm_config_from_json(bad), doctest::Contains("unknown"), Error);

  ToySwinConfig s = tiny_swin_cfg();
  const nlohmann::json js = s;
  const ToySwinConfig sback = toy_swin_config_from_json(js);
  CHECK(nlohmann::json(sback).dump() == js.dump());
  nlohmann::json sbad = js;
  sbad["windows"] = 3;
  CHECK_THROWS_WITH_AS(toy_swin_config_from_json(sbad), doctest::Contains("unknown"), Error);

  CHECK_THROWS_WITH_AS(toy_swin_config_from_json(j), doctest::Contains("toy_swin"), Error);
}
