#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cbae/data.hpp"
#include "cbae/nets.hpp"
#include "cbae/probes.hpp"
#include "cbae/rng.hpp"

namespace cbae {

struct TrainConfig {
  std::size_t steps = 4000;
  std::size_t batch_size = 128;
  double lr = 1e-4;
  // Weight of the negative-entropy penalty; 0 disables it.
  double entropy_weight = 0.1;
  double classifier_lr = 1e-3;
  std::size_t eval_interval = 1000;
  std::uint64_t base_seed = 1;

  void validate() const;
};

// Seeds for the streams a run draws from, all derived from base_seed.
struct RunSeeds {
  std::uint64_t pairs;
  std::uint64_t batches;
  static RunSeeds from(std::uint64_t base_seed);
};

// K_enc encoders and K_dec decoders with their own optimizer state, plus the
// encoder-identification classifier used by the entropy penalty. No tensor
// is shared between members.
struct Community {
  Architecture arch;
  std::vector<EncoderParams> encoders;
  std::vector<DecoderParams> decoders;
  std::vector<AdamState> encoder_adam;
  std::vector<AdamState> decoder_adam;
  LinearClassifier id_classifier;

  static Community create(const Architecture& arch, std::size_t k_enc, std::size_t k_dec,
                          std::uint64_t base_seed, double lr, double classifier_lr);

  std::size_t k_enc() const { return encoders.size(); }
  std::size_t k_dec() const { return decoders.size(); }
  // Deep copy.
  Community clone() const;
  // One checksum per encoder, then one per decoder.
  std::vector<std::uint64_t> member_checksums() const;
};

struct TrainStepReport {
  std::size_t step = 0;
  std::size_t encoder_index = 0;
  std::size_t decoder_index = 0;
  double recon_loss = 0.0;
  double entropy_penalty = 0.0;
  double total_loss = 0.0;
};

// One evaluation snapshot of a run.
struct MetricsRecord {
  std::string experiment_id;
  std::uint64_t seed = 0;
  std::size_t community_size = 0;
  double entropy_weight = 0.0;
  std::size_t step = 0;
  double recon_loss = 0.0;
  std::optional<double> encoder_id_accuracy;
  std::optional<double> encoder_id_chance;
  std::optional<double> concept_accuracy;
  std::optional<double> rsa_rho;
  double wall_seconds = 0.0;

  bool operator==(const MetricsRecord&) const = default;
};

// Independent uniform draws of (encoder, decoder).
std::pair<std::size_t, std::size_t> sample_pair(const Community& community, Rng& rng);

// Reconstruction step for one pair, plus entropy_weight × negative entropy
// of the (frozen) identification classifier on the latents. Only the
// sampled encoder and decoder are updated.
TrainStepReport train_step(Community& community, const Tensor& batch,
                           std::pair<std::size_t, std::size_t> pair, const TrainConfig& config,
                           std::size_t step = 0);

// One cross-entropy step of the identification classifier on the batch as
// encoded by every encoder. Returns the loss before the update.
double update_id_classifier(Community& community, const Tensor& batch);

// Mean reconstruction MSE over all encoder×decoder pairs.
double community_recon_loss(const Community& community, const Tensor& images);

// Fills probe metrics into a record at an evaluation point.
using Evaluator = std::function<void(const Community&, MetricsRecord&)>;

// Fixed evaluation subset (independent of the run seed) used for the
// reconstruction loss in metrics records.
std::vector<std::size_t> eval_rows(const Dataset& data, std::size_t max_rows = 512);

// Runs config.steps iterations of {sample batch, sample pair, update the
// identification classifier when entropy_weight > 0, train_step} and emits a
// record every eval_interval steps. Deterministic in config.base_seed.
std::vector<MetricsRecord> train(Community& community, const Dataset& data,
                                 const TrainConfig& config, const Evaluator& evaluator = {});

// enc_<i>.bin, dec_<i>.bin and id_classifier.bin in `dir`.
void save_community(const Community& community, const std::filesystem::path& dir);
// Restores parameters; optimizer moments start fresh.
Community load_community(const std::filesystem::path& dir, double lr = 1e-4,
                         double classifier_lr = 1e-3);

}  // namespace cbae
