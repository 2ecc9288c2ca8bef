#include <chrono>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dakit/artifacts.hpp"
#include "dakit/config.hpp"
#include "dakit/errors.hpp"
#include "dakit/fcnn.hpp"
#include "dakit/pipeline.hpp"
#include "dakit/version.hpp"

namespace {

using da::artifacts::HashedFile;
using nlohmann::json;

struct CommonOpts {
  std::string config;
  std::optional<std::uint64_t> seed;
  int workers = 1;
};

da::pipeline::ExperimentConfig load(const CommonOpts& opts) {
  return da::config::load_config(opts.config, opts.seed);
}

HashedFile hashed(const std::string& path) {
  return {path, da::artifacts::file_sha256(path)};
}

// Verifies a CSV run artifact against its manifest and returns the manifest.
json checked_run_manifest(const std::string& csv_path) {
  const json manifest = da::artifacts::read_manifest(csv_path);
  const std::string recorded =
      manifest.at("outputs").at(0).at("sha256").get<std::string>();
  if (da::artifacts::file_sha256(csv_path) != recorded) {
    throw da::ProvenanceError("run csv: " + csv_path +
                              " does not match its manifest (tampered or stale)");
  }
  return manifest;
}

double run_clock(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

int cmd_truth(const CommonOpts& opts, const std::string& out_path) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = load(opts);
  const auto truths = da::pipeline::generate_truths(cfg, opts.workers);
  da::artifacts::write_truth(out_path, cfg, truths);
  const std::vector<HashedFile> outputs{hashed(out_path)};
  da::artifacts::write_manifest(
      out_path, "truth", da::config::config_hash(cfg), cfg.seed,
      json{{"config", opts.config}, {"trajectory_count", truths.size()}}, {},
      outputs, run_clock(t0));
  std::printf("wrote %s (%zu trajectories, %d windows)\n", out_path.c_str(),
              truths.size(), cfg.windows);
  return 0;
}

int cmd_dataset(const CommonOpts& opts, const std::string& truth_path,
                const std::string& out_path) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = load(opts);
  const auto truth = da::artifacts::read_truth(truth_path);
  if (truth.config_hash != da::config::config_hash(cfg)) {
    throw da::ProvenanceError(
        "dataset: truth artifact was produced under a different config");
  }
  const auto dataset =
      da::pipeline::generate_dataset(cfg, truth.trajectories, opts.workers);
  const std::string truth_hash = da::artifacts::file_sha256(truth_path);
  da::artifacts::write_dataset(out_path, cfg, truth_hash, dataset);
  const std::vector<HashedFile> inputs{{truth_path, truth_hash}};
  const std::vector<HashedFile> outputs{hashed(out_path)};
  std::size_t n_records = 0;
  for (const auto& traj : dataset.trajectories) n_records += traj.records.size();
  da::artifacts::write_manifest(
      out_path, "dataset", da::config::config_hash(cfg), cfg.seed,
      json{{"config", opts.config},
           {"records", n_records},
           {"train_trajectories", cfg.train_count()},
           {"test_trajectories", cfg.initial_conditions - cfg.train_count()}},
      inputs, outputs, run_clock(t0));
  std::printf("wrote %s (%zu records)\n", out_path.c_str(), n_records);
  return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& dataset_path,
              const std::string& out_path) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = load(opts);
  const std::string cfg_hash = da::config::config_hash(cfg);
  const auto dataset = da::artifacts::read_dataset(dataset_path);
  if (dataset.config_hash != cfg_hash) {
    throw da::ProvenanceError(
        "train: dataset artifact was produced under a different config");
  }
  const auto train_pairs = da::pipeline::training_pairs(cfg, dataset.dataset, true);
  const auto test_pairs = da::pipeline::training_pairs(cfg, dataset.dataset, false);
  auto result = da::fcnn::train(da::pipeline::make_fcnn_config(cfg), train_pairs,
                                test_pairs);
  result.model.meta.dataset_hash = da::artifacts::file_sha256(dataset_path);
  result.model.meta.config_hash = cfg_hash;
  da::fcnn::save_model(result.model, out_path);

  const std::string metrics_path = out_path + ".metrics.csv";
  {
    std::string text = "epoch,train_loss,val_loss\n";
    char buf[96];
    for (const auto& epoch : result.history) {
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", epoch.epoch,
                    epoch.train_loss, epoch.eval_loss);
      text += buf;
    }
    std::ofstream out(metrics_path);
    out << text;
  }

  const std::vector<HashedFile> inputs{{dataset_path, result.model.meta.dataset_hash}};
  const std::vector<HashedFile> outputs{hashed(out_path), hashed(metrics_path)};
  da::artifacts::write_manifest(
      out_path, "train", cfg_hash, cfg.seed,
      json{{"config", opts.config},
           {"epochs_run", result.model.meta.epochs_run},
           {"best_epoch", result.model.meta.best_epoch},
           {"final_train_mse", result.model.meta.final_train_mse},
           {"final_test_mse", result.model.meta.final_test_mse}},
      inputs, outputs, run_clock(t0));
  std::printf("wrote %s (best epoch %d, train mse %.6g, test mse %.6g)\n",
              out_path.c_str(), result.model.meta.best_epoch,
              result.model.meta.final_train_mse, result.model.meta.final_test_mse);
  return 0;
}

int cmd_run(const CommonOpts& opts, const std::string& truth_path,
            const std::string& model_path, const std::string& ensemble,
            const std::string& subset_name, const std::string& out_path) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = load(opts);
  const std::string cfg_hash = da::config::config_hash(cfg);
  const auto truth = da::artifacts::read_truth(truth_path);
  if (truth.config_hash != cfg_hash) {
    throw da::ProvenanceError(
        "run: truth artifact was produced under a different config");
  }
  const auto subset = da::pipeline::subset_from_string(subset_name);

  std::optional<da::fcnn::FcnnModel> model;
  std::string model_hash;
  da::pipeline::RunMode mode;
  if (!model_path.empty()) {
    if (!ensemble.empty() && ensemble != "small") {
      throw da::ConfigError("run: coupled runs use the small ensemble");
    }
    model = da::fcnn::load_model(model_path);
    if (!model->meta.config_hash.empty() && model->meta.config_hash != cfg_hash) {
      throw da::ProvenanceError(
          "run: model was trained under a different config");
    }
    model_hash = da::artifacts::file_sha256(model_path);
    mode = da::pipeline::RunMode::coupled;
  } else {
    mode = ensemble == "small" ? da::pipeline::RunMode::small
                               : da::pipeline::RunMode::large;
  }

  const auto series = da::pipeline::run_experiment(
      cfg, mode, model ? &*model : nullptr, truth.trajectories, subset,
      opts.workers);
  da::artifacts::write_run_csv(out_path, series);

  std::vector<HashedFile> inputs{{truth_path, da::artifacts::file_sha256(truth_path)}};
  if (!model_path.empty()) inputs.push_back({model_path, model_hash});
  const std::vector<HashedFile> outputs{hashed(out_path)};
  std::vector<int> ids;
  for (const auto& traj : series) ids.push_back(traj.k);
  da::artifacts::write_manifest(
      out_path, "run", cfg_hash, cfg.seed,
      json{{"config", opts.config},
           {"mode", da::pipeline::to_string(mode)},
           {"subset", da::pipeline::to_string(subset)},
           {"windows", cfg.windows},
           {"state_dim", cfg.model.dim},
           {"obs_dim", cfg.observation.obs_dim()},
           {"truth_hash", inputs[0].sha256},
           {"model_hash", model_hash},
           {"trajectories", ids}},
      inputs, outputs, run_clock(t0));
  std::printf("wrote %s (%zu trajectories, mode %s)\n", out_path.c_str(),
              series.size(), da::pipeline::to_string(mode).c_str());
  return 0;
}

int cmd_eval(const std::string& run_small_path, const std::string& run_large_path,
             const std::string& out_path) {
  const auto t0 = std::chrono::steady_clock::now();
  const json manifest_small = checked_run_manifest(run_small_path);
  const json manifest_large = checked_run_manifest(run_large_path);
  const std::string cfg_hash = manifest_small.at("config_hash").get<std::string>();
  if (cfg_hash != manifest_large.at("config_hash").get<std::string>()) {
    throw da::ProvenanceError("eval: runs come from different configs");
  }
  const std::string truth_hash =
      manifest_small.at("details").at("truth_hash").get<std::string>();
  if (truth_hash != manifest_large.at("details").at("truth_hash").get<std::string>()) {
    throw da::ProvenanceError("eval: runs come from different truth artifacts");
  }

  const auto small = da::artifacts::read_run_csv(run_small_path);
  const auto large = da::artifacts::read_run_csv(run_large_path);
  if (small.series.size() != large.series.size() ||
      small.state_dim != large.state_dim) {
    throw da::ConfigError("eval: runs cover different grids");
  }
  std::vector<std::vector<std::vector<double>>> a, a_corr, b;
  std::vector<int> ids;
  for (std::size_t i = 0; i < small.series.size(); ++i) {
    if (small.series[i].k != large.series[i].k ||
        small.series[i].analysis.size() != large.series[i].analysis.size()) {
      throw da::ConfigError("eval: runs cover different grids");
    }
    ids.push_back(small.series[i].k);
    a.push_back(small.series[i].analysis);
    b.push_back(large.series[i].analysis);
    if (small.has_corrected) a_corr.push_back(small.series[i].corrected);
  }

  const auto epsilon = da::pipeline::epsilon_metric(a, b);
  const auto mean_of = [](const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
  };

  json data{{"trajectories", ids},
            {"epsilon", epsilon},
            {"time_mean_epsilon", mean_of(epsilon)}};
  std::vector<int> steps(epsilon.size());
  for (std::size_t j = 0; j < steps.size(); ++j) steps[j] = static_cast<int>(j);
  data["steps"] = steps;
  if (small.has_corrected) {
    const auto epsilon_corr = da::pipeline::epsilon_metric(a_corr, b);
    data["epsilon_corrected"] = epsilon_corr;
    data["time_mean_epsilon_corrected"] = mean_of(epsilon_corr);
    data["ratio_uncorrected_over_corrected"] =
        mean_of(epsilon) / mean_of(epsilon_corr);
  }

  const json provenance{{"config_hash", cfg_hash},
                        {"truth_hash", truth_hash},
                        {"run_small", hashed(run_small_path).sha256},
                        {"run_large", hashed(run_large_path).sha256},
                        {"tool_version", da::kToolVersion}};
  da::artifacts::write_artifact(out_path, "dakit-eval", provenance, data);
  const std::vector<HashedFile> inputs{hashed(run_small_path), hashed(run_large_path)};
  const std::vector<HashedFile> outputs{hashed(out_path)};
  da::artifacts::write_manifest(out_path, "eval", cfg_hash, 0, json::object(),
                                inputs, outputs, run_clock(t0));
  if (small.has_corrected) {
    std::printf("wrote %s (time-mean epsilon %.6g, corrected %.6g)\n",
                out_path.c_str(), data.at("time_mean_epsilon").get<double>(),
                data.at("time_mean_epsilon_corrected").get<double>());
  } else {
    std::printf("wrote %s (time-mean epsilon %.6g)\n", out_path.c_str(),
                data.at("time_mean_epsilon").get<double>());
  }
  return 0;
}

int cmd_bench(const CommonOpts& opts, const std::string& model_path,
              const std::string& out_path, int repetitions) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = load(opts);
  const std::string cfg_hash = da::config::config_hash(cfg);
  const auto model = da::fcnn::load_model(model_path);
  if (!model.meta.config_hash.empty() && model.meta.config_hash != cfg_hash) {
    throw da::ProvenanceError("bench: model was trained under a different config");
  }
  const auto timing = da::pipeline::timing_benchmark(cfg, model, repetitions);
  const std::string model_hash = da::artifacts::file_sha256(model_path);
  const json provenance{{"config_hash", cfg_hash},
                        {"model_hash", model_hash},
                        {"seed", cfg.seed},
                        {"tool_version", da::kToolVersion}};
  const json data{{"single_window_seconds", timing.single_window_seconds},
                  {"fcnn_inference_seconds", timing.fcnn_inference_seconds},
                  {"repetitions", timing.repetitions},
                  {"machine", da::artifacts::machine_info()}};
  da::artifacts::write_artifact(out_path, "dakit-bench", provenance, data);
  const std::vector<HashedFile> inputs{{model_path, model_hash}};
  const std::vector<HashedFile> outputs{hashed(out_path)};
  da::artifacts::write_manifest(out_path, "bench", cfg_hash, cfg.seed,
                                json{{"config", opts.config}}, inputs, outputs,
                                run_clock(t0));
  std::printf("single window %.3e s, fcnn inference %.3e s (%d reps)\n",
              timing.single_window_seconds, timing.fcnn_inference_seconds,
              timing.repetitions);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ensemble Kalman filtering with learned small-ensemble corrections"};
  app.set_version_flag("--version", da::kToolVersion);
  app.require_subcommand(1);

  CommonOpts opts;
  std::string truth_path, dataset_path, model_path, out_path;
  std::string run_small_path, run_large_path;
  std::string ensemble;  // empty = large for plain runs, small when coupled
  std::string subset = "all";
  int repetitions = 5000;

  auto add_common = [&](CLI::App* cmd, bool with_workers = true) {
    cmd->add_option("--config", opts.config,
                    "Config file path or preset name (lorenz63-paper, "
                    "lorenz96-paper)")
        ->required();
    cmd->add_option("--seed", opts.seed, "Override the config seed");
    if (with_workers) {
      cmd->add_option("--workers", opts.workers, "Worker threads")
          ->check(CLI::PositiveNumber);
    }
  };

  CLI::App* truth = app.add_subcommand("truth", "Generate truth trajectories");
  add_common(truth);
  truth->add_option("--out", out_path, "Output truth artifact")->required();

  CLI::App* dataset =
      app.add_subcommand("dataset", "Paired EnKF runs and training records");
  add_common(dataset);
  dataset->add_option("--truth", truth_path, "Truth artifact")->required();
  dataset->add_option("--out", out_path, "Output dataset artifact")->required();

  CLI::App* train = app.add_subcommand("train", "Train the correction network");
  add_common(train, false);
  train->add_option("--dataset", dataset_path, "Dataset artifact")->required();
  train->add_option("--out", out_path, "Output model artifact")->required();

  CLI::App* run = app.add_subcommand("run", "Filter run (plain or coupled)");
  add_common(run);
  run->add_option("--truth", truth_path, "Truth artifact")->required();
  run->add_option("--model", model_path,
                  "Trained model artifact; enables the coupled run");
  run->add_option("--ensemble", ensemble, "Plain-run ensemble: large or small")
      ->check(CLI::IsMember({"large", "small"}));
  run->add_option("--subset", subset, "Trajectory subset: all, train, test")
      ->check(CLI::IsMember({"all", "train", "test"}));
  run->add_option("--out", out_path, "Output run CSV")->required();

  CLI::App* eval = app.add_subcommand("eval", "Error metric between two runs");
  eval->add_option("--run-small", run_small_path,
                   "Run CSV of the small or coupled filter")
      ->required();
  eval->add_option("--run-large", run_large_path, "Run CSV of the reference filter")
      ->required();
  eval->add_option("--out", out_path, "Output metrics artifact")->required();

  CLI::App* bench = app.add_subcommand("bench", "Timing benchmark");
  add_common(bench, false);
  bench->add_option("--model", model_path, "Trained model artifact")->required();
  bench->add_option("--out", out_path, "Output timing artifact")->required();
  bench->add_option("--reps", repetitions, "Timed repetitions (>= 1000)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    app.exit(e);
    return static_cast<int>(da::ExitCode::config);
  }

  try {
    if (truth->parsed()) return cmd_truth(opts, out_path);
    if (dataset->parsed()) return cmd_dataset(opts, truth_path, out_path);
    if (train->parsed()) return cmd_train(opts, dataset_path, out_path);
    if (run->parsed()) {
      return cmd_run(opts, truth_path, model_path, ensemble, subset, out_path);
    }
    if (eval->parsed()) return cmd_eval(run_small_path, run_large_path, out_path);
    if (bench->parsed()) return cmd_bench(opts, model_path, out_path, repetitions);
  } catch (const da::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(da::exit_code_for(e));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  }
  return 0;
}
