#include <cmath>
#include <sstream>

#include "cbae/error.hpp"
#include "cbae/nets.hpp"
#include "cbae/rng.hpp"
#include "doctest.h"

using namespace cbae;

namespace {

bool same_values(const MlpParams& a, const MlpParams& b) {
  const auto ta = a.tensors(), tb = b.tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].shape() != tb[i].shape()) return false;
    if (!std::equal(ta[i].values().begin(), ta[i].values().end(), tb[i].values().begin())) {
      return false;
    }
  }
  return true;
}

Tensor random_batch(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.uniform();
  return Tensor({rows, cols}, std::move(v));
}

MlpParams zero_like(const MlpParams& p) {
  MlpParams z = p.clone();
  for (auto& t : z.tensors()) {
    for (auto& x : t.mutable_values()) x = 0.0;
  }
  return z;
}

}  // namespace

TEST_CASE("init is deterministic in the seed") {
  const Architecture arch{16, {8}, 4};
  CHECK(same_values(init_encoder(arch, 1).mlp, init_encoder(arch, 1).mlp));
  CHECK_FALSE(same_values(init_encoder(arch, 1).mlp, init_encoder(arch, 2).mlp));
  CHECK(init_encoder(arch, 1).mlp.dims() == std::vector<std::size_t>{16, 8, 4});
  CHECK(init_decoder(arch, 1).mlp.dims() == std::vector<std::size_t>{4, 8, 16});
}

TEST_CASE("init rejects empty architectures") {
  const std::vector<std::size_t> one = {4};
  CHECK_THROWS_AS(init_mlp(one, 1), ConfigError);
  CHECK_THROWS_AS(init_mlp(std::span<const std::size_t>{}, 1), ConfigError);
}

TEST_CASE("glorot bounds and zero biases") {
  const std::vector<std::size_t> dims = {30, 20, 10};
  const MlpParams p = init_mlp(dims, 3);
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const double fan_in = static_cast<double>(dims[l]), fan_out = static_cast<double>(dims[l + 1]);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double w : p.weights[l].values()) CHECK(std::abs(w) <= bound);
    for (double b : p.biases[l].values()) CHECK(b == 0.0);
  }
}

TEST_CASE("member seeds are disjoint between roles and members") {
  std::vector<std::uint64_t> seen;
  for (std::uint64_t base : {1u, 2u}) {
    for (int i = 0; i < 4; ++i) {
      seen.push_back(member_seed(base, MemberRole::kEncoder, i));
      seen.push_back(member_seed(base, MemberRole::kDecoder, i));
    }
  }
  std::sort(seen.begin(), seen.end());
  CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
}

TEST_CASE("encode with zero parameters gives a zero latent") {
  const Architecture arch{6, {5}, 3};
  EncoderParams enc = init_encoder(arch, 1);
  enc.mlp = zero_like(enc.mlp);
  Tape tape(Tape::Mode::kNoGrad);
  const Tensor z = encode(tape, random_batch(4, 6, 1), enc);
  CHECK(z.shape() == Shape{4, 3});
  for (double v : z.values()) CHECK(v == 0.0);
}

TEST_CASE("identity encoder reproduces its input") {
  const Architecture arch{3, {}, 3};
  EncoderParams enc = init_encoder(arch, 1);
  auto w = enc.mlp.weights[0].mutable_values();
  for (std::size_t i = 0; i < 9; ++i) w[i] = (i % 4 == 0) ? 1.0 : 0.0;
  Tape tape(Tape::Mode::kNoGrad);
  const Tensor x = random_batch(5, 3, 2);
  const Tensor z = encode(tape, x, enc);
  CHECK(std::equal(z.values().begin(), z.values().end(), x.values().begin()));
}

TEST_CASE("encoding is independent of the rest of the batch") {
  const Architecture arch{10, {7}, 4};
  const EncoderParams enc = init_encoder(arch, 5);
  const Tensor batch = random_batch(128, 10, 3);
  Tape tape(Tape::Mode::kNoGrad);
  const Tensor all = encode(tape, batch, enc);
  const std::size_t row = 37;
  std::vector<double> one(batch.values().begin() + row * 10, batch.values().begin() + row * 10 + 10);
  const Tensor single = encode(tape, Tensor({1, 10}, one), enc);
  for (std::size_t j = 0; j < 4; ++j) CHECK(single[j] == all.at(row, j));
}

TEST_CASE("decode shapes, zero decoder and range") {
  const Architecture arch{9, {6}, 2};
  DecoderParams dec = init_decoder(arch, 4);
  Tape tape(Tape::Mode::kNoGrad);
  const Tensor z = random_batch(3, 2, 9);
  const Tensor out = decode(tape, z, dec);
  CHECK(out.shape() == Shape{3, 9});
  for (double v : out.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  dec.mlp = zero_like(dec.mlp);
  const Tensor flat = decode(tape, z, dec);
  for (double v : flat.values()) CHECK(v == 0.5);
  CHECK_THROWS_AS(decode(tape, random_batch(3, 5, 1), dec), ShapeError);
  CHECK_THROWS_AS(encode(tape, random_batch(3, 5, 1), init_encoder(arch, 1)), ShapeError);
}

TEST_CASE("adam first step moves each parameter by about lr against the gradient sign") {
  Tensor p = Tensor::vector({0.5, -0.25, 2.0}, true);
  const std::vector<double> g = {0.3, -4.0, 1e-3};
  std::copy(g.begin(), g.end(), p.mutable_grad().begin());
  std::vector<Tensor> params = {p};
  AdamConfig cfg;
  cfg.lr = 1e-2;
  AdamState state(params, cfg);
  const std::vector<double> before(p.values().begin(), p.values().end());
  adam_step(params, state);
  CHECK(state.t == 1);
  for (std::size_t i = 0; i < 3; ++i) {
    // Closed form: m̂ = g, v̂ = g², step = lr·g/(|g| + ε).
    const double expected = before[i] - cfg.lr * g[i] / (std::abs(g[i]) + cfg.eps);
    CHECK(p[i] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(p[i] - before[i] == doctest::Approx(-cfg.lr * (g[i] > 0 ? 1 : -1)).epsilon(1e-4));
  }
}

TEST_CASE("adam matches a hand-rolled reference over several steps") {
  Tensor p = Tensor::vector({1.0, -1.0}, true);
  std::vector<Tensor> params = {p};
  AdamConfig cfg;
  cfg.lr = 0.05;
  AdamState state(params, cfg);
  double ref[2] = {1.0, -1.0}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 1; t <= 5; ++t) {
    const double grads[2] = {0.1 * t, -0.3 + 0.05 * t};
    for (std::size_t i = 0; i < 2; ++i) {
      p.mutable_grad()[i] = grads[i];
      m[i] = 0.9 * m[i] + 0.1 * grads[i];
      v[i] = 0.999 * v[i] + 0.001 * grads[i] * grads[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
    adam_step(params, state);
    p.zero_grad();
  }
  CHECK(p[0] == doctest::Approx(ref[0]).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(ref[1]).epsilon(1e-12));
}

TEST_CASE("adam with zero gradient leaves parameters and counts the step") {
  Tensor p = Tensor::vector({0.1, 0.2}, true);
  std::vector<Tensor> params = {p};
  AdamState state(params, AdamConfig{});
  adam_step(params, state);
  p.mutable_grad();
  adam_step(params, state);
  CHECK(state.t == 2);
  CHECK(p[0] == 0.1);
  CHECK(p[1] == 0.2);
}

TEST_CASE("adam is deterministic and checks shapes") {
  auto run = [] {
    MlpParams mlp = init_encoder(Architecture{4, {3}, 2}, 7).mlp;
    auto params = mlp.tensors();
    AdamState state(params, AdamConfig{});
    for (int step = 0; step < 3; ++step) {
      for (auto& t : params) {
        auto g = t.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::sin(static_cast<double>(i + step));
      }
      adam_step(params, state);
    }
    return checksum(mlp);
  };
  CHECK(run() == run());

  std::vector<Tensor> a = {Tensor::vector({1, 2}, true)};
  AdamState state(a, AdamConfig{});
  std::vector<Tensor> b = {Tensor::vector({1, 2, 3}, true)};
  CHECK_THROWS_AS(adam_step(b, state), ShapeError);
}

TEST_CASE("parameter files round trip bit exactly") {
  const MlpParams p = init_decoder(Architecture{12, {9, 5}, 3}, 42).mlp;
  std::stringstream buf;
  write_params(buf, p);
  const MlpParams q = read_params(buf);
  CHECK(same_values(p, q));
  CHECK(checksum(p) == checksum(q));
}

TEST_CASE("corrupt parameter files are rejected") {
  const MlpParams p = init_encoder(Architecture{4, {3}, 2}, 1).mlp;
  std::stringstream buf;
  write_params(buf, p);
  const std::string bytes = buf.str();

  std::stringstream bad_magic(std::string("XXXXXXXX") + bytes.substr(8));
  CHECK_THROWS_AS(read_params(bad_magic), ParseError);
  std::stringstream truncated(bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_AS(read_params(truncated), ParseError);
  CHECK_THROWS_AS(load_params("/nonexistent/dir/params.bin"), Error);
}
