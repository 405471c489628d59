#include "cbae/probes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "cbae/error.hpp"
#include "cbae/rng.hpp"
#include "kernels.hpp"

namespace cbae {

// ---------------------------------------------------------------------------
// LinearClassifier

LinearClassifier LinearClassifier::create(std::size_t classes, std::size_t input_dim, double lr) {
  if (classes == 0 || input_dim == 0) {
    throw ConfigError("linear classifier: classes and input_dim must be positive");
  }
  LinearClassifier c;
  c.weights = Tensor::zeros({classes, input_dim}, true);
  c.bias = Tensor::zeros({classes}, true);
  const auto params = c.tensors();
  c.adam = AdamState(params, AdamConfig{.lr = lr});
  return c;
}

Tensor LinearClassifier::logits(Tape& tape, const Tensor& z) const {
  return linear(tape, z, weights, bias);
}

std::vector<std::size_t> LinearClassifier::predict(const Tensor& z) const {
  Tape tape(Tape::Mode::kNoGrad);
  const Tensor l = logits(tape, z);
  const std::size_t rows = l.rows(), n = l.cols();
  std::vector<std::size_t> out(rows);
  const double* v = l.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    // max_element returns the first maximum, i.e. the lowest index on ties.
    out[r] = static_cast<std::size_t>(std::max_element(v + r * n, v + (r + 1) * n) - (v + r * n));
  }
  return out;
}

double LinearClassifier::train_step(const Tensor& z, std::span<const std::size_t> labels) {
  Tape tape;
  const Tensor loss = cross_entropy(tape, logits(tape, z), labels);
  tape.backward(loss);
  auto params = tensors();
  adam_step(params, adam);
  tape.clear();
  return loss.item();
}

std::uint64_t LinearClassifier::checksum() const {
  MlpParams view;
  view.weights = {weights};
  view.biases = {bias};
  return cbae::checksum(view);
}

// ---------------------------------------------------------------------------
// Probe training

Split split_indices(std::size_t n, double train_fraction, std::uint64_t seed) {
  if (n == 0) throw DataError("split: no examples");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("split: train_fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (n >= 2) n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.eval.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.eval.begin(), s.eval.end());
  return s;
}

namespace {

void check_labels(std::span<const std::size_t> labels, std::size_t classes, const char* what) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) {
      throw IndexError(std::string(what) + ": label " + std::to_string(labels[i]) + " at row " +
                       std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

std::vector<std::size_t> pick(std::span<const std::size_t> xs, std::span<const std::size_t> idx) {
  std::vector<std::size_t> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = xs[idx[i]];
  return out;
}

// Distinct rows [0, n) in random order, at most `count` of them, sorted.
std::vector<std::size_t> sample_rows(std::size_t n, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (count >= n) return idx;
  Rng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

LinearClassifier train_probe(const Tensor& latents, std::span<const std::size_t> labels,
                             std::size_t classes, const ProbeConfig& config) {
  if (!latents.defined() || latents.rank() != 2 || latents.rows() == 0) {
    throw DataError("train_probe: latents must be a non-empty matrix");
  }
  if (labels.size() != latents.rows()) {
    throw ShapeError("train_probe: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(latents.rows()) + " latents");
  }
  check_labels(labels, classes, "train_probe");
  if (config.batch_size == 0) throw ConfigError("train_probe: batch_size must be positive");

  LinearClassifier clf = LinearClassifier::create(classes, latents.cols(), config.lr);
  Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t n = latents.rows();
  std::vector<std::size_t> batch(config.batch_size), batch_labels(config.batch_size);
  for (std::size_t step = 0; step < config.steps; ++step) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      batch[b] = rng.index(n);
      batch_labels[b] = labels[batch[b]];
    }
    clf.train_step(gather_rows(latents, batch), batch_labels);
  }
  return clf;
}

ProbeReport evaluate_probe(const LinearClassifier& classifier, const Tensor& latents,
                           std::span<const std::size_t> labels) {
  if (labels.size() != latents.rows()) {
    throw ShapeError("evaluate_probe: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(latents.rows()) + " latents");
  }
  const std::size_t classes = classifier.classes();
  check_labels(labels, classes, "evaluate_probe");
  const auto predicted = classifier.predict(latents);
  std::vector<std::size_t> hits(classes, 0), totals(classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++totals[labels[i]];
    if (predicted[i] == labels[i]) {
      ++hits[labels[i]];
      ++correct;
    }
  }
  ProbeReport r;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  r.chance = 1.0 / static_cast<double>(classes);
  r.eval_size = labels.size();
  r.per_class_accuracy.resize(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    r.per_class_accuracy[c] = totals[c] ? static_cast<double>(hits[c]) / static_cast<double>(totals[c])
                                        : std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

ProbeReport probe_accuracy(const Tensor& latents, std::span<const std::size_t> labels,
                           std::size_t classes, const ProbeConfig& config) {
  if (!latents.defined() || latents.rows() < 2) {
    throw DataError("probe_accuracy: need at least 2 examples");
  }
  const Split split = split_indices(latents.rows(), config.train_fraction, config.seed);
  const auto train_labels = pick(labels, split.train);
  const auto eval_labels = pick(labels, split.eval);
  const auto clf = train_probe(gather_rows(latents, split.train), train_labels, classes, config);
  ProbeReport r = evaluate_probe(clf, gather_rows(latents, split.eval), eval_labels);
  r.train_size = split.train.size();
  return r;
}

Tensor encode_frozen(const Tensor& images, const EncoderParams& encoder) {
  Tape tape(Tape::Mode::kNoGrad);
  return encode(tape, images, encoder);
}

ProbeReport encoder_id_accuracy(std::span<const EncoderParams> encoders, const Dataset& data,
                                const ProbeConfig& config) {
  if (data.size() == 0) throw DataError("encoder_id_accuracy: empty dataset");
  if (encoders.empty()) throw ConfigError("encoder_id_accuracy: no encoders");
  const std::size_t k = encoders.size();
  if (k == 1) {
    ProbeReport r;
    r.accuracy = 1.0;
    r.chance = 1.0;
    r.per_class_accuracy = {1.0};
    return r;
  }
  if (data.size() < 2) throw DataError("encoder_id_accuracy: need at least 2 images");

  // Split by image so held-out latents come from unseen inputs.
  const auto rows = sample_rows(data.size(), config.id_sample, config.seed + 1);
  const Split split = split_indices(rows.size(), config.train_fraction, config.seed + 2);
  const Tensor train_images = gather_rows(data.images, pick(rows, split.train));
  const Tensor eval_images = gather_rows(data.images, pick(rows, split.eval));

  auto stack = [&](const Tensor& images, std::vector<std::size_t>& labels) {
    const std::size_t n = images.rows();
    std::vector<double> values;
    std::size_t dim = 0;
    for (std::size_t e = 0; e < k; ++e) {
      const Tensor z = encode_frozen(images, encoders[e]);
      dim = z.cols();
      values.insert(values.end(), z.values().begin(), z.values().end());
      labels.insert(labels.end(), n, e);
    }
    return Tensor({n * k, dim}, std::move(values));
  };
  std::vector<std::size_t> train_labels, eval_labels;
  const Tensor train_z = stack(train_images, train_labels);
  const Tensor eval_z = stack(eval_images, eval_labels);

  const auto clf = train_probe(train_z, train_labels, k, config);
  ProbeReport r = evaluate_probe(clf, eval_z, eval_labels);
  r.train_size = train_labels.size();
  return r;
}

std::vector<ProbeReport> concept_probe(std::span<const EncoderParams> encoders,
                                       const Dataset& data, const ProbeConfig& config) {
  if (data.size() == 0) throw DataError("concept_probe: empty dataset");
  const auto rows = sample_rows(data.size(), config.concept_sample, config.seed);
  const Tensor images = gather_rows(data.images, rows);
  const auto labels = pick(data.labels, rows);
  std::vector<ProbeReport> reports;
  for (const auto& enc : encoders) {
    reports.push_back(probe_accuracy(encode_frozen(images, enc), labels, data.concept_count(), config));
  }
  return reports;
}

// ---------------------------------------------------------------------------
// Similarity and correlation

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine_sim: lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()) + " differ");
  }
  const double na = std::sqrt(kernels::dot(a.data(), a.data(), a.size()));
  const double nb = std::sqrt(kernels::dot(b.data(), b.data(), b.size()));
  if (na == 0.0 || nb == 0.0) return 0.0;
  return kernels::dot(a.data(), b.data(), a.size()) / (na * nb);
}

std::vector<double> average_ranks(std::span<const double> xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    // Positions i..j (0-based) share rank mean of (i+1)..(j+1).
    const double r = 0.5 * static_cast<double>(i + j + 2);
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) {
    throw ShapeError("pearson: lengths " + std::to_string(xs.size()) + " and " +
                     std::to_string(ys.size()) + " differ");
  }
  const std::size_t n = xs.size();
  if (n < 3) throw UndefinedCorrelation("pearson: need at least 3 values, got " + std::to_string(n));
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelation("pearson: constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) {
    throw ShapeError("spearman: lengths " + std::to_string(xs.size()) + " and " +
                     std::to_string(ys.size()) + " differ");
  }
  if (xs.size() < 3) {
    throw UndefinedCorrelation("spearman: need at least 3 values, got " + std::to_string(xs.size()));
  }
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  return pearson(rx, ry);
}

std::vector<double> pairwise_cosines(std::span<const double> rows, std::size_t row_count) {
  if (row_count == 0 || rows.size() % row_count != 0) {
    throw ShapeError("pairwise_cosines: " + std::to_string(rows.size()) +
                     " values do not split into " + std::to_string(row_count) + " rows");
  }
  const std::size_t dim = rows.size() / row_count;
  std::vector<double> sims;
  sims.reserve(row_count * (row_count - 1) / 2);
  for (std::size_t i = 0; i < row_count; ++i)
    for (std::size_t j = i + 1; j < row_count; ++j)
      sims.push_back(cosine_sim(rows.subspan(i * dim, dim), rows.subspan(j * dim, dim)));
  return sims;
}

RSAReport rsa_score(const Tensor& latents, std::span<const std::size_t> labels,
                    std::span<const std::string> concept_names, const FeatureNorms& norms) {
  if (labels.size() != latents.rows()) {
    throw ShapeError("rsa_score: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(latents.rows()) + " latents");
  }
  const std::size_t c = norms.concept_count();
  if (c < 3) {
    throw UndefinedCorrelation("rsa_score: need at least 3 concepts, got " + std::to_string(c));
  }
  std::map<std::string, std::size_t> dataset_index;
  for (std::size_t i = 0; i < concept_names.size(); ++i) dataset_index[concept_names[i]] = i;

  const std::size_t dim = latents.cols();
  std::vector<double> sums(concept_names.size() * dim, 0.0);
  std::vector<std::size_t> counts(concept_names.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= concept_names.size()) {
      throw IndexError("rsa_score: label " + std::to_string(labels[i]) + " has no concept name");
    }
    kernels::axpy(1.0, latents.values().data() + i * dim, sums.data() + labels[i] * dim, dim);
    ++counts[labels[i]];
  }

  RSAReport report;
  report.concept_count = c;
  report.concept_means.resize(c * dim);
  std::vector<std::string> missing;
  for (std::size_t k = 0; k < c; ++k) {
    const auto it = dataset_index.find(norms.concept_names[k]);
    if (it == dataset_index.end() || counts[it->second] == 0) {
      missing.push_back(norms.concept_names[k]);
      continue;
    }
    const double inv = 1.0 / static_cast<double>(counts[it->second]);
    for (std::size_t d = 0; d < dim; ++d) {
      report.concept_means[k * dim + d] = sums[it->second * dim + d] * inv;
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw DataError("rsa_score: no images for concept(s): " + list);
  }
  const auto latent_sims = pairwise_cosines(report.concept_means, c);
  const auto norm_sims = pairwise_cosines(norms.values, c);
  report.rho = spearman(latent_sims, norm_sims);
  return report;
}

std::vector<RSAReport> rsa_community(std::span<const EncoderParams> encoders, const Dataset& data,
                                     const ProbeConfig& config) {
  if (!data.norms) throw DataError("rsa_community: dataset has no feature norms");
  const auto rows = sample_rows(data.size(), config.concept_sample, config.seed);
  const Tensor images = gather_rows(data.images, rows);
  const auto labels = pick(data.labels, rows);
  std::vector<RSAReport> reports;
  for (const auto& enc : encoders) {
    reports.push_back(rsa_score(encode_frozen(images, enc), labels, data.concept_names, *data.norms));
  }
  return reports;
}

std::vector<double> rsa_permutation_null(const RSAReport& report, const FeatureNorms& norms,
                                         std::size_t permutations, std::uint64_t seed) {
  const std::size_t c = report.concept_count;
  if (c != norms.concept_count()) {
    throw ShapeError("rsa_permutation_null: report has " + std::to_string(c) +
                     " concepts, norms have " + std::to_string(norms.concept_count()));
  }
  const auto latent_sims = pairwise_cosines(report.concept_means, c);
  const std::size_t a = norms.attribute_count();
  std::vector<std::size_t> perm(c);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::vector<double> shuffled(norms.values.size());
  Rng rng(seed);
  std::vector<double> null;
  null.reserve(permutations);
  for (std::size_t p = 0; p < permutations; ++p) {
    rng.shuffle(perm.begin(), perm.end());
    for (std::size_t k = 0; k < c; ++k) {
      const auto src = norms.row(perm[k]);
      std::copy(src.begin(), src.end(), shuffled.begin() + static_cast<std::ptrdiff_t>(k * a));
    }
    null.push_back(spearman(latent_sims, pairwise_cosines(shuffled, c)));
  }
  return null;
}

}  // namespace cbae
