#include "cbae/nets.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "cbae/error.hpp"
#include "cbae/rng.hpp"

namespace cbae {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

std::vector<std::size_t> Architecture::encoder_dims() const {
  std::vector<std::size_t> dims{input_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(latent_dim);
  return dims;
}

std::vector<std::size_t> Architecture::decoder_dims() const {
  std::vector<std::size_t> dims{latent_dim};
  dims.insert(dims.end(), hidden.rbegin(), hidden.rend());
  dims.push_back(input_dim);
  return dims;
}

std::vector<std::size_t> MlpParams::dims() const {
  std::vector<std::size_t> d{input_dim()};
  for (const auto& w : weights) d.push_back(w.shape()[0]);
  return d;
}

std::vector<Tensor> MlpParams::tensors() const {
  std::vector<Tensor> out;
  out.reserve(2 * weights.size());
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(weights[l]);
    out.push_back(biases[l]);
  }
  return out;
}

MlpParams MlpParams::clone() const {
  MlpParams copy;
  for (const auto& w : weights) copy.weights.push_back(w.clone());
  for (const auto& b : biases) copy.biases.push_back(b.clone());
  return copy;
}

MlpParams init_mlp(std::span<const std::size_t> dims, std::uint64_t seed) {
  if (dims.size() < 2) {
    throw ConfigError("init_mlp: architecture needs at least 2 widths, got " +
                      std::to_string(dims.size()));
  }
  for (std::size_t d : dims) {
    if (d == 0) throw ConfigError("init_mlp: zero layer width");
  }
  Rng rng(seed);
  MlpParams p;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t in = dims[l], out = dims[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<double> w(out * in);
    for (double& v : w) v = rng.uniform(-bound, bound);
    p.weights.emplace_back(Shape{out, in}, std::move(w), true);
    p.biases.push_back(Tensor::zeros({out}, true));
  }
  return p;
}

EncoderParams init_encoder(const Architecture& arch, std::uint64_t seed, int member_index) {
  return {init_mlp(arch.encoder_dims(), seed), member_index};
}

DecoderParams init_decoder(const Architecture& arch, std::uint64_t seed, int member_index) {
  return {init_mlp(arch.decoder_dims(), seed), member_index};
}

std::uint64_t member_seed(std::uint64_t base_seed, MemberRole role, int member_index) {
  if (member_index < 0 || member_index >= kMaxCommunitySize) {
    throw ConfigError("member_seed: member index " + std::to_string(member_index) +
                      " outside [0, " + std::to_string(kMaxCommunitySize) + ")");
  }
  const std::uint64_t offset = role == MemberRole::kEncoder ? 0 : kMaxCommunitySize;
  return base_seed * 10000 + offset + static_cast<std::uint64_t>(member_index);
}

namespace {

Tensor forward(Tape& tape, const Tensor& x, const MlpParams& p, const char* what) {
  if (!x.defined() || x.rank() != 2 || x.cols() != p.input_dim()) {
    throw ShapeError(std::string(what) + ": input " + (x.defined() ? to_string(x.shape()) : "[]") +
                     " does not have " + std::to_string(p.input_dim()) + " columns");
  }
  Tensor h = x;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    h = linear(tape, h, p.weights[l], p.biases[l]);
    if (l + 1 < p.weights.size()) h = relu(tape, h);
  }
  return h;
}

}  // namespace

Tensor encode(Tape& tape, const Tensor& x, const EncoderParams& encoder) {
  return forward(tape, x, encoder.mlp, "encode");
}

Tensor decode(Tape& tape, const Tensor& z, const DecoderParams& decoder) {
  return sigmoid(tape, forward(tape, z, decoder.mlp, "decode"));
}

AdamState::AdamState(std::span<const Tensor> params, AdamConfig cfg) : config(cfg) {
  for (const auto& p : params) {
    m.emplace_back(p.size(), 0.0);
    v.emplace_back(p.size(), 0.0);
  }
}

void adam_step(std::span<Tensor> params, AdamState& state) {
  if (params.size() != state.m.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but state for " +
                     std::to_string(state.m.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != state.m[i].size()) {
      throw ShapeError("adam_step: parameter " + std::to_string(i) + " has shape " +
                       to_string(params[i].shape()) + " but moments hold " +
                       std::to_string(state.m[i].size()) + " values");
    }
  }
  const auto& c = state.config;
  state.t += 1;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double* g = params[i].has_grad() ? params[i].grad().data() : nullptr;
    auto w = params[i].mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double gj = g ? g[j] : 0.0;
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
      w[j] -= c.lr * (m[j] / correction1) / (std::sqrt(v[j] / correction2) + c.eps);
    }
  }
}

std::uint64_t checksum(const MlpParams& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& t : params.tensors()) {
    for (double v : t.values()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof v);
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

namespace {

constexpr char kMagic[8] = {'C', 'B', 'A', 'E', 'P', 'R', 'M', '\0'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) {
    throw ParseError(std::string("checkpoint: truncated while reading ") + what);
  }
  return v;
}

}  // namespace

void write_params(std::ostream& out, const MlpParams& params) {
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  const auto tensors = params.tensors();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put<std::uint64_t>(out, e);
    out.write(reinterpret_cast<const char*>(t.values().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw IoError("checkpoint: write failed");
}

MlpParams read_params(std::istream& in) {
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw ParseError("checkpoint: bad magic");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kVersion) {
    throw ParseError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(in, "tensor count");
  if (count == 0 || count % 2 != 0) {
    throw ParseError("checkpoint: expected weight/bias pairs, got " + std::to_string(count) +
                     " tensors");
  }
  MlpParams p;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto rank = get<std::uint32_t>(in, "rank");
    if (rank == 0 || rank > 2) throw ParseError("checkpoint: bad rank " + std::to_string(rank));
    Shape shape;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<std::size_t>(get<std::uint64_t>(in, "extent")));
      n *= shape.back();
    }
    std::vector<double> values(n);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw ParseError("checkpoint: truncated values of tensor " + std::to_string(i));
    Tensor t(std::move(shape), std::move(values), true);
    (i % 2 == 0 ? p.weights : p.biases).push_back(std::move(t));
  }
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const auto& w = p.weights[l];
    if (w.rank() != 2 || p.biases[l].size() != w.shape()[0] ||
        (l > 0 && w.shape()[1] != p.weights[l - 1].shape()[0])) {
      throw ParseError("checkpoint: layer " + std::to_string(l) + " shapes do not chain");
    }
  }
  return p;
}

void save_params(const std::filesystem::path& path, const MlpParams& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open " + path.string() + " for writing");
  write_params(out, params);
}

MlpParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  return read_params(in);
}

}  // namespace cbae
