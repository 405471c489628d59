#include "cbae/community.hpp"

#include <chrono>
#include <cmath>
#include <functional>

#include "cbae/error.hpp"

namespace cbae {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (!(classifier_lr > 0.0)) throw ConfigError("train: classifier_lr must be positive");
  if (!(entropy_weight >= 0.0) || !std::isfinite(entropy_weight)) {
    throw ConfigError("train: entropy_weight must be finite and >= 0");
  }
  if (eval_interval == 0) throw ConfigError("train: eval_interval must be positive");
}

RunSeeds RunSeeds::from(std::uint64_t base_seed) {
  return {base_seed * 10000 + 9001, base_seed * 10000 + 9002};
}

Community Community::create(const Architecture& arch, std::size_t k_enc, std::size_t k_dec,
                            std::uint64_t base_seed, double lr, double classifier_lr) {
  if (k_enc == 0 || k_dec == 0) throw ConfigError("community: sizes must be at least 1");
  if (k_enc > kMaxCommunitySize || k_dec > kMaxCommunitySize) {
    throw ConfigError("community: at most " + std::to_string(kMaxCommunitySize) + " members");
  }
  Community c;
  c.arch = arch;
  const AdamConfig adam{.lr = lr};
  for (std::size_t i = 0; i < k_enc; ++i) {
    const int idx = static_cast<int>(i);
    c.encoders.push_back(init_encoder(arch, member_seed(base_seed, MemberRole::kEncoder, idx), idx));
    c.encoder_adam.emplace_back(c.encoders.back().mlp.tensors(), adam);
  }
  for (std::size_t j = 0; j < k_dec; ++j) {
    const int idx = static_cast<int>(j);
    c.decoders.push_back(init_decoder(arch, member_seed(base_seed, MemberRole::kDecoder, idx), idx));
    c.decoder_adam.emplace_back(c.decoders.back().mlp.tensors(), adam);
  }
  c.id_classifier = LinearClassifier::create(k_enc, arch.latent_dim, classifier_lr);
  return c;
}

Community Community::clone() const {
  Community c;
  c.arch = arch;
  for (const auto& e : encoders) c.encoders.push_back({e.mlp.clone(), e.member_index});
  for (const auto& d : decoders) c.decoders.push_back({d.mlp.clone(), d.member_index});
  c.encoder_adam = encoder_adam;
  c.decoder_adam = decoder_adam;
  c.id_classifier.weights = id_classifier.weights.clone();
  c.id_classifier.bias = id_classifier.bias.clone();
  c.id_classifier.adam = id_classifier.adam;
  return c;
}

std::vector<std::uint64_t> Community::member_checksums() const {
  std::vector<std::uint64_t> out;
  for (const auto& e : encoders) out.push_back(checksum(e.mlp));
  for (const auto& d : decoders) out.push_back(checksum(d.mlp));
  return out;
}

std::pair<std::size_t, std::size_t> sample_pair(const Community& community, Rng& rng) {
  const std::size_t e = rng.index(community.k_enc());
  const std::size_t d = rng.index(community.k_dec());
  return {e, d};
}

namespace {

// Negative entropy of the identification classifier's posterior, with the
// classifier's weights copied out so no gradient can reach them.
Tensor id_neg_entropy(Tape& tape, const LinearClassifier& clf, const Tensor& z,
                      const std::function<void(const std::string&)>& fail) {
  const Tensor w = clf.weights.detach();
  const Tensor b = clf.bias.detach();
  const Tensor p = softmax(tape, linear(tape, z, w, b));
  for (double v : p.values()) {
    if (!std::isfinite(v)) fail("non-finite classifier posterior");
  }
  return neg_entropy(tape, p);
}

}  // namespace

TrainStepReport train_step(Community& community, const Tensor& batch,
                           std::pair<std::size_t, std::size_t> pair, const TrainConfig& config,
                           std::size_t step) {
  const auto [ei, di] = pair;
  if (ei >= community.k_enc() || di >= community.k_dec()) {
    throw IndexError("train_step: pair (" + std::to_string(ei) + ", " + std::to_string(di) +
                     ") outside community " + std::to_string(community.k_enc()) + "x" +
                     std::to_string(community.k_dec()));
  }
  auto& encoder = community.encoders[ei];
  auto& decoder = community.decoders[di];
  if (!batch.defined() || batch.rank() != 2 || batch.cols() != encoder.mlp.input_dim()) {
    throw ShapeError("train_step: batch " + (batch.defined() ? to_string(batch.shape()) : "[]") +
                     " does not match encoder input dim " +
                     std::to_string(encoder.mlp.input_dim()));
  }

  Tape tape;
  const Tensor z = encode(tape, batch, encoder);
  const Tensor recon = mse_loss(tape, batch, decode(tape, z, decoder));

  TrainStepReport report;
  report.step = step;
  report.encoder_index = ei;
  report.decoder_index = di;
  report.recon_loss = recon.item();

  const auto fail = [&](const std::string& what) {
    throw NumericalError("train_step: " + what + " at step " + std::to_string(step) +
                         " (encoder " + std::to_string(ei) + ", decoder " + std::to_string(di) + ")");
  };
  if (!std::isfinite(report.recon_loss)) fail("non-finite loss " + std::to_string(report.recon_loss));

  Tensor total = recon;
  if (config.entropy_weight > 0.0) {
    const Tensor penalty = id_neg_entropy(tape, community.id_classifier, z, fail);
    report.entropy_penalty = penalty.item();
    total = add(tape, recon, scale(tape, penalty, config.entropy_weight));
  } else {
    Tape probe(Tape::Mode::kNoGrad);
    report.entropy_penalty = id_neg_entropy(probe, community.id_classifier, z.detach(), fail).item();
  }
  report.total_loss = total.item();
  if (!std::isfinite(report.total_loss)) fail("non-finite loss " + std::to_string(report.total_loss));

  tape.backward(total);
  auto enc_params = encoder.mlp.tensors();
  auto dec_params = decoder.mlp.tensors();
  adam_step(enc_params, community.encoder_adam[ei]);
  adam_step(dec_params, community.decoder_adam[di]);
  tape.clear();
  return report;
}

double update_id_classifier(Community& community, const Tensor& batch) {
  auto& clf = community.id_classifier;
  if (clf.classes() != community.k_enc()) {
    throw ConfigError("update_id_classifier: classifier has " + std::to_string(clf.classes()) +
                      " classes for " + std::to_string(community.k_enc()) + " encoders");
  }
  if (clf.input_dim() != community.arch.latent_dim) {
    throw ConfigError("update_id_classifier: classifier input dim " +
                      std::to_string(clf.input_dim()) + " != latent dim " +
                      std::to_string(community.arch.latent_dim));
  }
  const std::size_t n = batch.rows();
  std::vector<double> values;
  std::vector<std::size_t> labels;
  values.reserve(n * community.k_enc() * community.arch.latent_dim);
  labels.reserve(n * community.k_enc());
  for (std::size_t e = 0; e < community.k_enc(); ++e) {
    const Tensor z = encode_frozen(batch, community.encoders[e]);
    values.insert(values.end(), z.values().begin(), z.values().end());
    labels.insert(labels.end(), n, e);
  }
  const Tensor latents({n * community.k_enc(), community.arch.latent_dim}, std::move(values));
  return clf.train_step(latents, labels);
}

double community_recon_loss(const Community& community, const Tensor& images) {
  double total = 0.0;
  Tape tape(Tape::Mode::kNoGrad);
  for (const auto& enc : community.encoders) {
    const Tensor z = encode(tape, images, enc);
    for (const auto& dec : community.decoders) total += mse_loss(tape, images, decode(tape, z, dec)).item();
  }
  return total / static_cast<double>(community.k_enc() * community.k_dec());
}

std::vector<std::size_t> eval_rows(const Dataset& data, std::size_t max_rows) {
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  if (idx.size() <= max_rows) return idx;
  Rng rng(0x5EED0E7A1ULL);
  rng.shuffle(idx.begin(), idx.end());
  idx.resize(max_rows);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<MetricsRecord> train(Community& community, const Dataset& data,
                                 const TrainConfig& config, const Evaluator& evaluator) {
  config.validate();
  if (data.size() == 0) throw DataError("train: empty dataset");
  if (data.input_dim() != community.arch.input_dim) {
    throw ShapeError("train: dataset input dim " + std::to_string(data.input_dim()) +
                     " != architecture input dim " + std::to_string(community.arch.input_dim));
  }
  std::vector<MetricsRecord> records;
  if (config.steps == 0) return records;

  const RunSeeds seeds = RunSeeds::from(config.base_seed);
  Rng pair_rng(seeds.pairs);
  Rng data_rng(seeds.batches);
  const Tensor eval_images = gather_rows(data.images, eval_rows(data));
  const auto start = std::chrono::steady_clock::now();

  std::vector<std::size_t> rows(config.batch_size);
  for (std::size_t step = 1; step <= config.steps; ++step) {
    for (auto& r : rows) r = data_rng.index(data.size());
    const Tensor batch = gather_rows(data.images, rows);
    const auto pair = sample_pair(community, pair_rng);
    if (config.entropy_weight > 0.0) update_id_classifier(community, batch);
    train_step(community, batch, pair, config, step);

    if (step % config.eval_interval == 0) {
      MetricsRecord rec;
      rec.seed = config.base_seed;
      rec.community_size = community.k_enc();
      rec.entropy_weight = config.entropy_weight;
      rec.step = step;
      rec.recon_loss = community_recon_loss(community, eval_images);
      if (!std::isfinite(rec.recon_loss)) {
        throw NumericalError("train: non-finite evaluation loss at step " + std::to_string(step));
      }
      if (evaluator) evaluator(community, rec);
      rec.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      records.push_back(std::move(rec));
    }
  }
  return records;
}

void save_community(const Community& community, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < community.k_enc(); ++i) {
    save_params(dir / ("enc_" + std::to_string(i) + ".bin"), community.encoders[i].mlp);
  }
  for (std::size_t j = 0; j < community.k_dec(); ++j) {
    save_params(dir / ("dec_" + std::to_string(j) + ".bin"), community.decoders[j].mlp);
  }
  MlpParams clf;
  clf.weights = {community.id_classifier.weights};
  clf.biases = {community.id_classifier.bias};
  save_params(dir / "id_classifier.bin", clf);
}

Community load_community(const std::filesystem::path& dir, double lr, double classifier_lr) {
  if (!std::filesystem::is_directory(dir)) throw IoError("checkpoint directory " + dir.string() + " not found");
  Community c;
  const AdamConfig adam{.lr = lr};
  for (int i = 0; std::filesystem::exists(dir / ("enc_" + std::to_string(i) + ".bin")); ++i) {
    c.encoders.push_back({load_params(dir / ("enc_" + std::to_string(i) + ".bin")), i});
    c.encoder_adam.emplace_back(c.encoders.back().mlp.tensors(), adam);
  }
  for (int j = 0; std::filesystem::exists(dir / ("dec_" + std::to_string(j) + ".bin")); ++j) {
    c.decoders.push_back({load_params(dir / ("dec_" + std::to_string(j) + ".bin")), j});
    c.decoder_adam.emplace_back(c.decoders.back().mlp.tensors(), adam);
  }
  if (c.encoders.empty() || c.decoders.empty()) {
    throw IoError("checkpoint directory " + dir.string() + " holds no encoders or decoders");
  }
  const auto dims = c.encoders.front().mlp.dims();
  c.arch.input_dim = dims.front();
  c.arch.latent_dim = dims.back();
  c.arch.hidden.assign(dims.begin() + 1, dims.end() - 1);
  for (const auto& e : c.encoders) {
    if (e.mlp.dims() != dims) throw ParseError("checkpoint: encoders have different shapes");
  }
  for (const auto& d : c.decoders) {
    if (d.mlp.dims() != c.arch.decoder_dims()) {
      throw ParseError("checkpoint: decoder shape does not mirror the encoders");
    }
  }
  c.id_classifier = LinearClassifier::create(c.k_enc(), c.arch.latent_dim, classifier_lr);
  const auto clf_path = dir / "id_classifier.bin";
  if (std::filesystem::exists(clf_path)) {
    const MlpParams clf = load_params(clf_path);
    if (clf.weights.size() != 1 || clf.weights[0].shape() != c.id_classifier.weights.shape()) {
      throw ParseError("checkpoint: identification classifier shape mismatch");
    }
    std::copy(clf.weights[0].values().begin(), clf.weights[0].values().end(),
              c.id_classifier.weights.mutable_values().begin());
    std::copy(clf.biases[0].values().begin(), clf.biases[0].values().end(),
              c.id_classifier.bias.mutable_values().begin());
  }
  return c;
}

}  // namespace cbae
