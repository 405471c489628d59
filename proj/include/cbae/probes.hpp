#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cbae/data.hpp"
#include "cbae/nets.hpp"
#include "cbae/tensor.hpp"

namespace cbae {

// Softmax regression head: logits = z·weightsᵀ + bias.
struct LinearClassifier {
  Tensor weights;  // [classes × input_dim]
  Tensor bias;     // [classes]
  AdamState adam;

  // Zero-initialized; the objective is convex so no symmetry breaking is needed.
  static LinearClassifier create(std::size_t classes, std::size_t input_dim, double lr);

  std::size_t classes() const { return weights.shape()[0]; }
  std::size_t input_dim() const { return weights.shape()[1]; }
  std::vector<Tensor> tensors() const { return {weights, bias}; }

  Tensor logits(Tape& tape, const Tensor& z) const;
  // argmax per row, ties toward the lowest class index.
  std::vector<std::size_t> predict(const Tensor& z) const;
  // One Adam step of mean cross-entropy on (z, labels); returns the loss
  // before the update.
  double train_step(const Tensor& z, std::span<const std::size_t> labels);

  std::uint64_t checksum() const;
};

struct ProbeConfig {
  std::size_t steps = 3000;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  double train_fraction = 0.8;
  // Images drawn (without replacement) for concept probes and RSA.
  std::size_t concept_sample = 5000;
  // Images per encoder for the encoder-identification probe.
  std::size_t id_sample = 1000;
  std::uint64_t seed = 0;
};

struct ProbeReport {
  double accuracy = 0.0;
  double chance = 1.0;
  std::vector<double> per_class_accuracy;  // NaN for classes absent from the eval split
  std::size_t train_size = 0;
  std::size_t eval_size = 0;
};

struct RSAReport {
  double rho = 0.0;
  std::size_t concept_count = 0;
  // [concept_count × latent_dim] late-fused latents in feature-norm order.
  std::vector<double> concept_means;
};

// Disjoint train/eval index sets over [0, n), shuffled with `seed`. Both
// sides are non-empty whenever n >= 2.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
};
Split split_indices(std::size_t n, double train_fraction, std::uint64_t seed);

// Trains on the given rows only; latents are read, never modified.
LinearClassifier train_probe(const Tensor& latents, std::span<const std::size_t> labels,
                             std::size_t classes, const ProbeConfig& config);
ProbeReport evaluate_probe(const LinearClassifier& classifier, const Tensor& latents,
                           std::span<const std::size_t> labels);
// Split, train, and evaluate on the held-out part.
ProbeReport probe_accuracy(const Tensor& latents, std::span<const std::size_t> labels,
                           std::size_t classes, const ProbeConfig& config);

// Forward pass without recording.
Tensor encode_frozen(const Tensor& images, const EncoderParams& encoder);

// Encodes a held-out sample with every encoder and reports how well a fresh
// linear classifier recovers which encoder produced each latent. One
// encoder yields accuracy 1 with chance 1.
ProbeReport encoder_id_accuracy(std::span<const EncoderParams> encoders, const Dataset& data,
                                const ProbeConfig& config);

// Concept probe per encoder on a shared image sample.
std::vector<ProbeReport> concept_probe(std::span<const EncoderParams> encoders,
                                       const Dataset& data, const ProbeConfig& config);

// dot(a, b) / (|a| |b|); 0 when either vector is zero.
double cosine_sim(std::span<const double> a, std::span<const double> b);
// Average ranks, 1-based; ties share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> xs);
double pearson(std::span<const double> xs, std::span<const double> ys);
// Pearson correlation of average ranks. Needs >= 3 non-constant values.
double spearman(std::span<const double> xs, std::span<const double> ys);

// Upper-triangle (i < j, row-major) cosine similarities between rows.
std::vector<double> pairwise_cosines(std::span<const double> rows, std::size_t row_count);

// Late-fuses latents per concept, then rank-correlates the concept
// similarity structure with that of the feature norms. Concepts are matched
// by name; every norm concept needs at least one image.
RSAReport rsa_score(const Tensor& latents, std::span<const std::size_t> labels,
                    std::span<const std::string> concept_names, const FeatureNorms& norms);
// RSA per encoder on a shared image sample.
std::vector<RSAReport> rsa_community(std::span<const EncoderParams> encoders, const Dataset& data,
                                     const ProbeConfig& config);

// Null distribution of rho under random reassignment of norm rows to
// concepts (a Mantel-style permutation test).
std::vector<double> rsa_permutation_null(const RSAReport& report, const FeatureNorms& norms,
                                         std::size_t permutations, std::uint64_t seed);

}  // namespace cbae
