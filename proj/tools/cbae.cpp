// Command-line front end: train, baseline, probe, export, gen-data.
//
// Errors go to stderr as one JSON line {"error": kind, "message": text} with
// exit status 2 for usage problems and 1 for everything else.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <string>

#include "CLI11.hpp"
#include "cbae/error.hpp"
#include "cbae/expctl.hpp"
#include "json.hpp"

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

struct CommonFlags {
  std::string config;
  std::string out;
  std::size_t workers = 1;
  std::uint64_t seed_offset = 0;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool needs_config = true) {
  auto* opt = cmd->add_option("--config", f.config, "Experiment config (JSON)");
  if (needs_config) opt->required();
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--workers", f.workers, "Parallel runs")->check(CLI::PositiveNumber);
  cmd->add_option("--seed-offset", f.seed_offset, "Added to every configured seed");
}

cbae::ExperimentConfig load_config(const CommonFlags& f) {
  auto config = cbae::ExperimentConfig::load(f.config);
  if (!f.out.empty()) {
    config.output_dir = f.out;
  } else if (config.output_dir.empty()) {
    config.output_dir = cbae::default_output_dir(config.experiment_id);
  }
  return config;
}

void print_result(const fs::path& out, const cbae::SweepSummary& summary) {
  json j{{"status", "ok"},
         {"output_dir", out.string()},
         {"runs", 0},
         {"failed_runs", summary.failures.size()}};
  std::size_t runs = 0;
  for (const auto& e : summary.entries) runs += e.seeds.size();
  j["runs"] = runs;
  std::cout << j.dump() << '\n';
}

int cmd_train(const CommonFlags& f) {
  const auto config = load_config(f);
  const auto summary = cbae::run_experiment(config, {f.workers, f.seed_offset});
  print_result(config.output_dir, summary);
  return 0;
}

int cmd_baseline(const CommonFlags& f, std::size_t ensemble_size) {
  auto config = load_config(f);
  if (f.out.empty()) config.output_dir /= "ensemble";
  const auto summary = cbae::run_ensemble_baseline(config, ensemble_size, {f.workers, f.seed_offset});
  print_result(config.output_dir, summary);
  return 0;
}

// Re-probes every checkpoint directory named K<k>_lambda<l>_seed<s>.
int cmd_probe(const CommonFlags& f, const std::string& checkpoints) {
  auto config = load_config(f);
  const fs::path root = checkpoints.empty() ? config.output_dir / "checkpoints" : fs::path(checkpoints);
  if (!fs::is_directory(root)) throw cbae::IoError("no checkpoint directory at " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());

  const cbae::Dataset data = cbae::load_dataset(config.dataset);
  const std::regex name_re(R"(K(\d+)_lambda([^_]+)_seed(\d+))");
  const fs::path out_dir = f.out.empty() ? root.parent_path() : fs::path(f.out);
  fs::create_directories(out_dir);
  const fs::path out_path = out_dir / "probe.jsonl";
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw cbae::IoError("cannot open " + out_path.string() + " for writing");

  std::size_t probed = 0;
  for (const auto& dir : dirs) {
    std::smatch m;
    const std::string name = dir.filename().string();
    if (!std::regex_match(name, m, name_re)) continue;
    const cbae::Community c = cbae::load_community(dir);
    cbae::MetricsRecord rec;
    rec.experiment_id = config.experiment_id;
    rec.community_size = std::stoul(m[1]);
    rec.entropy_weight = std::stod(m[2]);
    rec.seed = std::stoull(m[3]);
    rec.step = config.train.steps;
    const auto rows = cbae::eval_rows(data);
    rec.recon_loss = cbae::community_recon_loss(c, cbae::gather_rows(data.images, rows));
    const auto id = cbae::encoder_id_accuracy(c.encoders, data, config.probe);
    rec.encoder_id_accuracy = id.accuracy;
    rec.encoder_id_chance = id.chance;
    double acc = 0.0;
    const auto reports = cbae::concept_probe(c.encoders, data, config.probe);
    for (const auto& r : reports) acc += r.accuracy;
    rec.concept_accuracy = acc / static_cast<double>(reports.size());
    if (data.norms) {
      double rho = 0.0;
      const auto rsa = cbae::rsa_community(c.encoders, data, config.probe);
      for (const auto& r : rsa) rho += r.rho;
      rec.rsa_rho = rho / static_cast<double>(rsa.size());
    }
    out << cbae::to_json_line(rec) << '\n';
    out.flush();
    ++probed;
  }
  if (probed == 0) throw cbae::DataError("no checkpoints found under " + root.string());
  std::cout << json{{"status", "ok"}, {"output", out_path.string()}, {"probed", probed}}.dump()
            << '\n';
  return 0;
}

int cmd_export(const CommonFlags& f, std::string log, const std::string& x, const std::string& y) {
  fs::path out_dir = f.out;
  if (log.empty()) {
    if (f.config.empty()) throw cbae::UsageError("export needs --log or --config");
    const auto config = load_config(f);
    log = (config.output_dir / "metrics.jsonl").string();
    if (out_dir.empty()) out_dir = config.output_dir;
  }
  if (out_dir.empty()) out_dir = fs::path(log).parent_path();
  if (out_dir.empty()) out_dir = ".";
  fs::create_directories(out_dir);
  const fs::path out_path = out_dir / (y + "_vs_" + x + ".csv");
  cbae::export_plot_data(log, x, y, out_path);
  std::cout << json{{"status", "ok"}, {"output", out_path.string()}}.dump() << '\n';
  return 0;
}

int cmd_gen_data(const CommonFlags& f, cbae::SyntheticSpec spec, bool from_config) {
  if (from_config) {
    const auto config = cbae::ExperimentConfig::load(f.config);
    if (config.dataset.kind != cbae::DatasetSpec::Kind::kSynthetic) {
      throw cbae::ConfigError("gen-data needs a synthetic dataset in the config");
    }
    spec = config.dataset.synthetic;
  }
  const fs::path out = f.out.empty() ? cbae::default_output_dir("synthetic-data") : fs::path(f.out);
  fs::create_directories(out);
  const cbae::Dataset data = cbae::gen_synthetic(spec);
  cbae::write_idx(data, out / "images.idx", out / "labels.idx");
  cbae::write_feature_norms(*data.norms, out / "norms.csv");
  // Dataset section usable in an experiment config; paths are relative to it.
  const json ds{{"kind", "idx"},
                {"images", "images.idx"},
                {"labels", "labels.idx"},
                {"num_classes", spec.concepts},
                {"feature_norms", "norms.csv"},
                {"concept_names", data.concept_names}};
  std::ofstream(out / "dataset.json", std::ios::trunc) << ds.dump(2) << '\n';
  std::cout << json{{"status", "ok"}, {"output_dir", out.string()}, {"examples", data.labels.size()}}
                   .dump()
            << '\n';
  return 0;
}

void fail(std::string_view kind, std::string_view message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Community-based autoencoder experiments"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::size_t ensemble_size = 4;
  std::string checkpoints, log, x_metric = "step", y_metric = "concept_accuracy";
  cbae::SyntheticSpec spec;

  auto* train = app.add_subcommand("train", "Run the sweep in a config");
  add_common(train, flags);
  auto* baseline = app.add_subcommand("baseline", "Ensemble of independent single autoencoders");
  add_common(baseline, flags);
  baseline->add_option("--ensemble-size", ensemble_size, "Number of autoencoders")
      ->check(CLI::PositiveNumber);
  auto* probe = app.add_subcommand("probe", "Re-probe saved checkpoints");
  add_common(probe, flags);
  probe->add_option("--checkpoints", checkpoints, "Checkpoint root (default <out>/checkpoints)");
  auto* exp = app.add_subcommand("export", "Write a plot table from a metrics log");
  add_common(exp, flags, false);
  exp->add_option("--log", log, "metrics.jsonl (default from --config)");
  exp->add_option("--x", x_metric, "x metric");
  exp->add_option("--y", y_metric, "y metric");
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset as IDX + norms CSV");
  add_common(gen, flags, false);
  gen->add_option("--concepts", spec.concepts);
  gen->add_option("--attributes", spec.attributes);
  gen->add_option("--per-concept", spec.per_concept);
  gen->add_option("--side", spec.side);
  gen->add_option("--noise", spec.noise);
  gen->add_option("--data-seed", spec.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("usage", e.what());
    return 2;
  }

  try {
    if (train->parsed()) return cmd_train(flags);
    if (baseline->parsed()) return cmd_baseline(flags, ensemble_size);
    if (probe->parsed()) return cmd_probe(flags, checkpoints);
    if (exp->parsed()) return cmd_export(flags, log, x_metric, y_metric);
    if (gen->parsed()) return cmd_gen_data(flags, spec, !flags.config.empty());
  } catch (const cbae::UsageError& e) {
    fail(e.kind(), e.what());
    return 2;
  } catch (const cbae::Error& e) {
    fail(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    fail("internal", e.what());
    return 1;
  }
  return 0;
}
