#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "cbae/tensor.hpp"

namespace cbae {

// Layer widths of an encoder; the decoder mirrors them.
struct Architecture {
  std::size_t input_dim = 64;
  std::vector<std::size_t> hidden = {64};
  std::size_t latent_dim = 16;

  // input → hidden... → latent
  std::vector<std::size_t> encoder_dims() const;
  // latent → reversed hidden... → input
  std::vector<std::size_t> decoder_dims() const;
};

// Fully connected stack. weights[l] is [out×in], biases[l] is [out].
struct MlpParams {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  std::size_t input_dim() const { return weights.front().shape()[1]; }
  std::size_t output_dim() const { return weights.back().shape()[0]; }
  std::vector<std::size_t> dims() const;
  // w0, b0, w1, b1, ... as shared handles.
  std::vector<Tensor> tensors() const;
  MlpParams clone() const;
};

struct EncoderParams {
  MlpParams mlp;
  int member_index = 0;
};

struct DecoderParams {
  MlpParams mlp;
  int member_index = 0;
};

// Glorot-uniform weights, zero biases, all drawn from one generator seeded
// with `seed`. dims must list at least two widths.
MlpParams init_mlp(std::span<const std::size_t> dims, std::uint64_t seed);
EncoderParams init_encoder(const Architecture& arch, std::uint64_t seed, int member_index = 0);
DecoderParams init_decoder(const Architecture& arch, std::uint64_t seed, int member_index = 0);

enum class MemberRole { kEncoder, kDecoder };

// Members draw from disjoint seed ranges: encoders use index, decoders
// 5000 + index, both offset by base_seed × 10000.
std::uint64_t member_seed(std::uint64_t base_seed, MemberRole role, int member_index);
inline constexpr int kMaxCommunitySize = 5000;

// Linear + ReLU layers, no activation after the last.
Tensor encode(Tape& tape, const Tensor& x, const EncoderParams& encoder);
// Linear + ReLU layers, sigmoid after the last so outputs lie in [0, 1].
Tensor decode(Tape& tape, const Tensor& z, const DecoderParams& decoder);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moment estimates for one parameter list.
struct AdamState {
  AdamConfig config;
  std::int64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  AdamState() = default;
  AdamState(std::span<const Tensor> params, AdamConfig cfg);
};

// One bias-corrected Adam update using each parameter's accumulated
// gradient (a parameter without a gradient buffer counts as zero).
void adam_step(std::span<Tensor> params, AdamState& state);

// FNV-1a over the raw bytes of every value, for "did this change" checks.
std::uint64_t checksum(const MlpParams& params);

// Versioned little-endian binary dump: magic, version, tensor count, then
// rank, extents and raw doubles per tensor. Round trip is bit exact.
void write_params(std::ostream& out, const MlpParams& params);
MlpParams read_params(std::istream& in);
void save_params(const std::filesystem::path& path, const MlpParams& params);
MlpParams load_params(const std::filesystem::path& path);

}  // namespace cbae
