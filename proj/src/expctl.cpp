#include "cbae/expctl.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "cbae/error.hpp"
#include "json.hpp"

namespace cbae {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Dataset

Dataset load_dataset(const DatasetSpec& spec) {
  if (spec.kind == DatasetSpec::Kind::kSynthetic) return gen_synthetic(spec.synthetic);

  Dataset d = load_idx(spec.images, spec.labels, spec.num_classes);
  if (spec.limit > 0) d = take_prefix(d, spec.limit);
  d = downsample(d, spec.downsample);
  if (!spec.concept_names.empty()) {
    if (spec.concept_names.size() != spec.num_classes) {
      throw ConfigError("dataset: " + std::to_string(spec.concept_names.size()) +
                        " concept names for " + std::to_string(spec.num_classes) + " classes");
    }
    d.concept_names = spec.concept_names;
  }
  if (!spec.feature_norms.empty()) d.norms = load_feature_norms(spec.feature_norms);
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  if (experiment_id.empty()) throw ConfigError("config: experiment_id is empty");
  if (community_sizes.empty()) throw ConfigError("config: community_sizes is empty");
  if (entropy_weights.empty()) throw ConfigError("config: entropy_weights is empty");
  if (seeds.empty()) throw ConfigError("config: seeds is empty");
  for (std::size_t k : community_sizes) {
    if (k < 1 || k > kMaxCommunitySize) {
      throw ConfigError("config: community size " + std::to_string(k) + " outside [1, " +
                        std::to_string(kMaxCommunitySize) + "]");
    }
  }
  for (double w : entropy_weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("config: entropy weights must be >= 0");
  }
  if (train.steps == 0) throw ConfigError("config: train.steps must be positive");
  train.validate();
  if (latent_dim == 0) throw ConfigError("config: latent_dim must be positive");
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigError("config: hidden widths must be positive");
  }
  if (probe.batch_size == 0 || !(probe.lr > 0.0)) {
    throw ConfigError("config: probe batch_size and lr must be positive");
  }
  if (!(probe.train_fraction > 0.0 && probe.train_fraction < 1.0)) {
    throw ConfigError("config: probe.train_fraction must lie in (0, 1)");
  }
  if (probe.concept_sample == 0 || probe.id_sample < 2) {
    throw ConfigError("config: probe samples too small");
  }
  if (dataset.kind == DatasetSpec::Kind::kIdx) {
    if (dataset.images.empty() || dataset.labels.empty()) {
      throw ConfigError("config: idx dataset needs images and labels paths");
    }
    if (dataset.downsample == 0) throw ConfigError("config: downsample must be positive");
  }
}

namespace {

json dataset_to_json(const DatasetSpec& d) {
  json j;
  if (d.kind == DatasetSpec::Kind::kSynthetic) {
    j["kind"] = "synthetic";
    j["concepts"] = d.synthetic.concepts;
    j["attributes"] = d.synthetic.attributes;
    j["per_concept"] = d.synthetic.per_concept;
    j["side"] = d.synthetic.side;
    j["noise"] = d.synthetic.noise;
    j["seed"] = d.synthetic.seed;
  } else {
    j["kind"] = "idx";
    j["images"] = d.images.string();
    j["labels"] = d.labels.string();
    j["num_classes"] = d.num_classes;
    j["downsample"] = d.downsample;
    j["limit"] = d.limit;
    j["feature_norms"] = d.feature_norms.string();
    j["concept_names"] = d.concept_names;
  }
  return j;
}

// Reads known keys from an object and rejects anything else.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError("config: " + where_ + " must be an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) {
        throw ConfigError("config: unknown key '" + key + "' in " + where_);
      }
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.emplace_back(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config: bad value for '" + std::string(key) + "' in " + where_);
    }
  }

  void get_path(const char* key, std::filesystem::path& out, const std::filesystem::path& base) {
    std::string s = out.string();
    get(key, s);
    out = s.empty() || std::filesystem::path(s).is_absolute() || base.empty()
              ? std::filesystem::path(s)
              : base / s;
  }

  const json* child(const char* key) {
    seen_.emplace_back(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string where_;
  std::vector<std::string> seen_;
};

}  // namespace

std::string ExperimentConfig::to_json() const {
  json j;
  j["experiment_id"] = experiment_id;
  j["dataset"] = dataset_to_json(dataset);
  j["community_sizes"] = community_sizes;
  j["entropy_weights"] = entropy_weights;
  j["seeds"] = seeds;
  j["train"] = {{"steps", train.steps},
                {"batch_size", train.batch_size},
                {"lr", train.lr},
                {"classifier_lr", train.classifier_lr},
                {"eval_interval", train.eval_interval}};
  j["model"] = {{"latent_dim", latent_dim}, {"hidden", hidden}};
  j["probe"] = {{"steps", probe.steps},
                {"batch_size", probe.batch_size},
                {"lr", probe.lr},
                {"train_fraction", probe.train_fraction},
                {"concept_sample", probe.concept_sample},
                {"id_sample", probe.id_sample},
                {"split_seed", probe.seed}};
  j["output_dir"] = output_dir.string();
  j["save_checkpoints"] = save_checkpoints;
  return j.dump(2) + "\n";
}

ExperimentConfig ExperimentConfig::parse(std::string_view json_text,
                                         const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  ExperimentConfig c;
  {
    Reader top(j, "top level");
    top.get("experiment_id", c.experiment_id);
    top.get("community_sizes", c.community_sizes);
    top.get("entropy_weights", c.entropy_weights);
    top.get("seeds", c.seeds);
    top.get_path("output_dir", c.output_dir, base_dir);
    top.get("save_checkpoints", c.save_checkpoints);
    if (const json* d = top.child("dataset")) {
      Reader r(*d, "dataset");
      std::string kind = "synthetic";
      r.get("kind", kind);
      if (kind == "synthetic") {
        c.dataset.kind = DatasetSpec::Kind::kSynthetic;
      } else if (kind == "idx") {
        c.dataset.kind = DatasetSpec::Kind::kIdx;
      } else {
        throw ConfigError("config: dataset.kind must be 'synthetic' or 'idx', got '" + kind + "'");
      }
      auto& s = c.dataset.synthetic;
      r.get("concepts", s.concepts);
      r.get("attributes", s.attributes);
      r.get("per_concept", s.per_concept);
      r.get("side", s.side);
      r.get("noise", s.noise);
      r.get("seed", s.seed);
      r.get_path("images", c.dataset.images, base_dir);
      r.get_path("labels", c.dataset.labels, base_dir);
      r.get("num_classes", c.dataset.num_classes);
      r.get("downsample", c.dataset.downsample);
      r.get("limit", c.dataset.limit);
      r.get_path("feature_norms", c.dataset.feature_norms, base_dir);
      r.get("concept_names", c.dataset.concept_names);
    }
    if (const json* t = top.child("train")) {
      Reader r(*t, "train");
      r.get("steps", c.train.steps);
      r.get("batch_size", c.train.batch_size);
      r.get("lr", c.train.lr);
      r.get("classifier_lr", c.train.classifier_lr);
      r.get("eval_interval", c.train.eval_interval);
    }
    if (const json* m = top.child("model")) {
      Reader r(*m, "model");
      r.get("latent_dim", c.latent_dim);
      r.get("hidden", c.hidden);
    }
    if (const json* p = top.child("probe")) {
      Reader r(*p, "probe");
      r.get("steps", c.probe.steps);
      r.get("batch_size", c.probe.batch_size);
      r.get("lr", c.probe.lr);
      r.get("train_fraction", c.probe.train_fraction);
      r.get("concept_sample", c.probe.concept_sample);
      r.get("id_sample", c.probe.id_sample);
      r.get("split_seed", c.probe.seed);
    }
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.parent_path());
}

std::filesystem::path default_output_dir(const std::string& experiment_id) {
  const char* root = std::getenv("CBAE_OUTPUT_ROOT");
  return std::filesystem::path(root && *root ? root : "runs") / experiment_id;
}

// ---------------------------------------------------------------------------
// Metrics records

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"step", "recon_loss", "encoder_id_accuracy",
                                                 "concept_accuracy", "rsa_rho"};
  return names;
}

std::optional<double> metric_value(const MetricsRecord& r, std::string_view name) {
  if (name == "step") return static_cast<double>(r.step);
  if (name == "recon_loss") return r.recon_loss;
  if (name == "encoder_id_accuracy") return r.encoder_id_accuracy;
  if (name == "concept_accuracy") return r.concept_accuracy;
  if (name == "rsa_rho") return r.rsa_rho;
  std::string valid;
  for (const auto& n : metric_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw UsageError("unknown metric '" + std::string(name) + "'; valid names: " + valid);
}

std::string to_json_line(const MetricsRecord& r) {
  json j;
  j["experiment_id"] = r.experiment_id;
  j["seed"] = r.seed;
  j["K"] = r.community_size;
  j["lambda"] = r.entropy_weight;
  j["step"] = r.step;
  j["recon_loss"] = r.recon_loss;
  if (r.encoder_id_accuracy) j["encoder_id_accuracy"] = *r.encoder_id_accuracy;
  if (r.encoder_id_chance) j["encoder_id_chance"] = *r.encoder_id_chance;
  if (r.concept_accuracy) j["concept_accuracy"] = *r.concept_accuracy;
  if (r.rsa_rho) j["rsa_rho"] = *r.rsa_rho;
  return j.dump();
}

MetricsRecord parse_json_line(std::string_view line) {
  const json j = json::parse(line);  // throws on malformed text
  MetricsRecord r;
  r.experiment_id = j.at("experiment_id").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.community_size = j.at("K").get<std::size_t>();
  r.entropy_weight = j.at("lambda").get<double>();
  r.step = j.at("step").get<std::size_t>();
  r.recon_loss = j.at("recon_loss").get<double>();
  auto opt = [&](const char* key, std::optional<double>& out) {
    if (j.contains(key)) out = j.at(key).get<double>();
  };
  opt("encoder_id_accuracy", r.encoder_id_accuracy);
  opt("encoder_id_chance", r.encoder_id_chance);
  opt("concept_accuracy", r.concept_accuracy);
  opt("rsa_rho", r.rsa_rho);
  return r;
}

MetricsLog parse_metrics_log(std::string_view text, const std::string& source) {
  MetricsLog log;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    ++line_no;
    const std::size_t nl = text.find('\n', pos);
    const bool complete = nl != std::string_view::npos;
    const std::string_view line = text.substr(pos, (complete ? nl : text.size()) - pos);
    pos = complete ? nl + 1 : text.size();
    if (line.empty()) continue;
    try {
      log.records.push_back(parse_json_line(line));
    } catch (const std::exception& e) {
      if (!complete) {
        log.truncated = true;
        break;
      }
      throw ParseError("metrics log " + source + ": line " + std::to_string(line_no) + ": " +
                       e.what());
    }
  }
  return log;
}

MetricsLog read_metrics_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("metrics log: cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_metrics_log(buf.str(), path.string());
}

// ---------------------------------------------------------------------------
// Summary

const SummaryEntry* SweepSummary::find(std::size_t k, double entropy_weight) const {
  for (const auto& e : entries) {
    if (e.community_size == k && e.entropy_weight == entropy_weight) return &e;
  }
  return nullptr;
}

std::string SweepSummary::to_json() const {
  json j;
  j["entries"] = json::array();
  for (const auto& e : entries) {
    json je;
    je["K"] = e.community_size;
    je["lambda"] = e.entropy_weight;
    je["seeds"] = e.seeds;
    je["metrics"] = json::object();
    for (const auto& [name, s] : e.metrics) {
      je["metrics"][name] = {{"mean", s.mean}, {"max", s.max}, {"std", s.std}, {"count", s.count}};
    }
    j["entries"].push_back(std::move(je));
  }
  j["failures"] = json::array();
  for (const auto& f : failures) {
    j["failures"].push_back({{"K", f.community_size},
                             {"lambda", f.entropy_weight},
                             {"seed", f.seed},
                             {"kind", f.kind},
                             {"message", f.message}});
  }
  j["seed_variance"] = json::array();
  for (const auto& v : seed_variance) {
    j["seed_variance"].push_back({{"lambda", v.entropy_weight},
                                  {"metric", v.metric},
                                  {"smallest_K", v.smallest_k},
                                  {"largest_K", v.largest_k},
                                  {"std_smallest_K", v.std_smallest_k},
                                  {"std_largest_K", v.std_largest_k},
                                  {"larger_community_less_variable",
                                   v.larger_community_less_variable}});
  }
  return j.dump(2) + "\n";
}

namespace {

MetricStats stats_of(const std::vector<double>& xs) {
  MetricStats s;
  s.count = xs.size();
  if (xs.empty()) return s;
  double total = 0.0;
  for (double x : xs) total += x;
  s.mean = total / static_cast<double>(xs.size());
  s.max = *std::max_element(xs.begin(), xs.end());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

}  // namespace

SweepSummary summarize(const std::vector<MetricsRecord>& records, std::vector<FailedRun> failures) {
  // Final record per run, keyed by (K, lambda, seed) in first-seen order.
  struct RunKey {
    std::size_t k;
    double lambda;
    std::uint64_t seed;
    bool operator==(const RunKey&) const = default;
  };
  std::vector<RunKey> keys;
  std::vector<const MetricsRecord*> finals;
  for (const auto& r : records) {
    const RunKey key{r.community_size, r.entropy_weight, r.seed};
    const auto it = std::find(keys.begin(), keys.end(), key);
    if (it == keys.end()) {
      keys.push_back(key);
      finals.push_back(&r);
    } else {
      auto& f = finals[static_cast<std::size_t>(it - keys.begin())];
      if (r.step >= f->step) f = &r;
    }
  }

  SweepSummary summary;
  summary.failures = std::move(failures);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    SummaryEntry* entry = nullptr;
    for (auto& e : summary.entries) {
      if (e.community_size == keys[i].k && e.entropy_weight == keys[i].lambda) entry = &e;
    }
    if (!entry) {
      summary.entries.push_back({keys[i].k, keys[i].lambda, {}, {}});
      entry = &summary.entries.back();
    }
    entry->seeds.push_back(keys[i].seed);
  }
  for (auto& e : summary.entries) {
    for (const auto& name : metric_names()) {
      if (name == "step") continue;
      std::vector<double> xs;
      bool all_present = true;
      for (std::size_t i = 0; i < keys.size(); ++i) {
        if (keys[i].k != e.community_size || keys[i].lambda != e.entropy_weight) continue;
        const auto v = metric_value(*finals[i], name);
        if (!v) {
          all_present = false;
          break;
        }
        xs.push_back(*v);
      }
      if (all_present && !xs.empty()) e.metrics[name] = stats_of(xs);
    }
  }
  std::sort(summary.entries.begin(), summary.entries.end(), [](const auto& a, const auto& b) {
    return a.entropy_weight != b.entropy_weight ? a.entropy_weight < b.entropy_weight
                                                : a.community_size < b.community_size;
  });

  // Across-seed spread at the smallest vs. largest community, per lambda.
  for (std::size_t i = 0; i < summary.entries.size();) {
    std::size_t j = i;
    while (j < summary.entries.size() &&
           summary.entries[j].entropy_weight == summary.entries[i].entropy_weight) {
      ++j;
    }
    const auto& lo = summary.entries[i];
    const auto& hi = summary.entries[j - 1];
    if (j - i >= 2) {
      for (const auto& [name, s_lo] : lo.metrics) {
        const auto it = hi.metrics.find(name);
        if (it == hi.metrics.end()) continue;
        summary.seed_variance.push_back({lo.entropy_weight, name, lo.community_size,
                                         hi.community_size, s_lo.std, it->second.std,
                                         it->second.std <= s_lo.std});
      }
    }
    i = j;
  }
  return summary;
}

// ---------------------------------------------------------------------------
// Sweep runner

namespace {

struct Cell {
  std::size_t index;
  std::size_t k;
  double lambda;
  std::uint64_t seed;
};

struct CellResult {
  std::vector<MetricsRecord> records;
  std::optional<FailedRun> failure;
};

std::string lambda_tag(double lambda) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, lambda);
  return std::string(buf, r.ptr);
}

// Writes cells to the log strictly in sweep order, whatever order workers
// finish in, so the log is identical for any worker count.
class OrderedLogWriter {
 public:
  OrderedLogWriter(const std::filesystem::path& metrics, const std::filesystem::path& timing)
      : metrics_(metrics, std::ios::trunc), timing_(timing, std::ios::trunc) {
    if (!metrics_) throw IoError("cannot open " + metrics.string() + " for writing");
    if (!timing_) throw IoError("cannot open " + timing.string() + " for writing");
  }

  void submit(std::size_t cell_index, const Cell& cell, const CellResult& result) {
    std::lock_guard lock(mu_);
    for (const auto& r : result.records) {
      timing_ << json{{"K", cell.k}, {"lambda", cell.lambda}, {"seed", cell.seed},
                      {"step", r.step}, {"wall_seconds", r.wall_seconds}}.dump()
              << '\n';
    }
    timing_.flush();
    pending_.emplace(cell_index, result.records);
    while (!pending_.empty() && pending_.begin()->first == next_) {
      for (const auto& r : pending_.begin()->second) {
        metrics_ << to_json_line(r) << '\n';
        metrics_.flush();
      }
      pending_.erase(pending_.begin());
      ++next_;
    }
    if (!metrics_) throw IoError("metrics log write failed");
  }

 private:
  std::mutex mu_;
  std::ofstream metrics_;
  std::ofstream timing_;
  std::map<std::size_t, std::vector<MetricsRecord>> pending_;
  std::size_t next_ = 0;
};

CellResult run_cell(const ExperimentConfig& config, const Dataset& data, const Cell& cell) {
  CellResult result;
  try {
    Architecture arch{data.input_dim(), config.hidden, config.latent_dim};
    TrainConfig tc = config.train;
    tc.entropy_weight = cell.lambda;
    tc.base_seed = cell.seed;
    Community community = Community::create(arch, cell.k, cell.k, cell.seed, tc.lr, tc.classifier_lr);
    const ProbeConfig probe = config.probe;
    const Evaluator evaluator = [&](const Community& c, MetricsRecord& rec) {
      rec.experiment_id = config.experiment_id;
      const ProbeReport id = encoder_id_accuracy(c.encoders, data, probe);
      rec.encoder_id_accuracy = id.accuracy;
      rec.encoder_id_chance = id.chance;
      double acc = 0.0;
      const auto concept_reports = concept_probe(c.encoders, data, probe);
      for (const auto& r : concept_reports) acc += r.accuracy;
      rec.concept_accuracy = acc / static_cast<double>(concept_reports.size());
      if (data.norms) {
        double rho = 0.0;
        const auto rsa = rsa_community(c.encoders, data, probe);
        for (const auto& r : rsa) rho += r.rho;
        rec.rsa_rho = rho / static_cast<double>(rsa.size());
      }
    };
    result.records = train(community, data, tc, evaluator);
    if (config.save_checkpoints) {
      save_community(community, config.output_dir / "checkpoints" /
                                    ("K" + std::to_string(cell.k) + "_lambda" +
                                     lambda_tag(cell.lambda) + "_seed" + std::to_string(cell.seed)));
    }
  } catch (const NumericalError& e) {
    result.records.clear();
    result.failure = FailedRun{cell.k, cell.lambda, cell.seed, e.kind(), e.what()};
  }
  return result;
}

SweepSummary run_cells(const ExperimentConfig& config, const std::vector<Cell>& cells,
                       const RunOptions& options) {
  config.validate();
  if (options.workers == 0) throw ConfigError("workers must be at least 1");
  const auto& out = config.output_dir;
  if (out.empty()) throw ConfigError("config: output_dir is empty");
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec || !std::filesystem::is_directory(out)) {
    throw IoError("output directory " + out.string() + " is not writable");
  }
  {
    std::ofstream cfg(out / "config.json", std::ios::trunc);
    if (!cfg) throw IoError("output directory " + out.string() + " is not writable");
    cfg << config.to_json();
  }
  OrderedLogWriter writer(out / "metrics.jsonl", out / "timing.jsonl");
  const Dataset data = load_dataset(config.dataset);

  std::vector<CellResult> results(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        results[i] = run_cell(config, data, cells[i]);
        writer.submit(i, cells[i], results[i]);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        next = cells.size();
      }
    }
  };
  const std::size_t n_threads = std::min(options.workers, cells.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);

  std::vector<MetricsRecord> all;
  std::vector<FailedRun> failures;
  for (auto& r : results) {
    all.insert(all.end(), r.records.begin(), r.records.end());
    if (r.failure) failures.push_back(*r.failure);
  }
  SweepSummary summary = summarize(all, std::move(failures));
  std::ofstream(out / "summary.json", std::ios::trunc) << summary.to_json();
  return summary;
}

}  // namespace

SweepSummary run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  std::vector<Cell> cells;
  for (std::size_t k : config.community_sizes)
    for (double lambda : config.entropy_weights)
      for (std::uint64_t seed : config.seeds)
        cells.push_back({cells.size(), k, lambda, seed + options.seed_offset});
  return run_cells(config, cells, options);
}

std::vector<std::uint64_t> ensemble_seeds(const std::vector<std::uint64_t>& seeds,
                                          std::size_t ensemble_size) {
  if (seeds.empty()) throw ConfigError("ensemble: no seeds configured");
  std::vector<std::uint64_t> out;
  for (std::uint64_t s : seeds) {
    if (out.size() == ensemble_size) break;
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
  }
  std::uint64_t next = *std::max_element(seeds.begin(), seeds.end()) + 1;
  while (out.size() < ensemble_size) out.push_back(next++);
  return out;
}

SweepSummary run_ensemble_baseline(const ExperimentConfig& config, std::size_t ensemble_size,
                                   const RunOptions& options) {
  if (ensemble_size == 0) throw ConfigError("ensemble size must be at least 1");
  std::vector<Cell> cells;
  const auto seeds = ensemble_seeds(config.seeds, ensemble_size);
  for (double lambda : config.entropy_weights)
    for (std::uint64_t seed : seeds) cells.push_back({cells.size(), 1, lambda, seed + options.seed_offset});
  return run_cells(config, cells, options);
}

// ---------------------------------------------------------------------------
// Plot export

std::string plot_table(const std::vector<MetricsRecord>& records, const std::string& x_metric,
                       const std::string& y_metric) {
  // Validate names up front so an empty log still reports bad metrics.
  MetricsRecord probe;
  metric_value(probe, x_metric);
  metric_value(probe, y_metric);

  struct Row {
    double x, y;
    double lambda;
    std::size_t k;
    std::uint64_t seed;
    std::size_t step;
  };
  std::vector<Row> rows;
  for (const auto& r : records) {
    const auto x = metric_value(r, x_metric);
    const auto y = metric_value(r, y_metric);
    if (x && y) rows.push_back({*x, *y, r.entropy_weight, r.community_size, r.seed, r.step});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.lambda != b.lambda) return a.lambda < b.lambda;
    if (a.k != b.k) return a.k < b.k;
    if (a.x != b.x) return a.x < b.x;
    if (a.seed != b.seed) return a.seed < b.seed;
    return a.step < b.step;
  });
  auto num = [](double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  };
  std::string out = x_metric + "," + y_metric + ",K,seed\n";
  for (const auto& r : rows) {
    out += num(r.x) + "," + num(r.y) + "," + std::to_string(r.k) + "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

void export_plot_data(const std::filesystem::path& log_path, const std::string& x_metric,
                      const std::string& y_metric, const std::filesystem::path& out_path) {
  const MetricsLog log = read_metrics_log(log_path);
  const std::string table = plot_table(log.records, x_metric, y_metric);
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + out_path.string() + " for writing");
  out << table;
}

}  // namespace cbae
