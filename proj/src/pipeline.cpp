#include "dakit/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "dakit/hash.hpp"
#include "dakit/parallel.hpp"

namespace da::pipeline {

using enkf::Ensemble;
using enkf::TruthTrajectory;
using numerics::StreamFactory;

void ExperimentConfig::validate() const {
  model.validate();
  observation.validate(model.dim);
  // Equal sizes are admitted for smoke runs; the correction target is then
  // identically zero.
  if (ensemble_small < 2) throw ConfigError("ensemble.small: must be >= 2");
  if (ensemble_large < ensemble_small) {
    throw ConfigError("ensemble.large: must be >= ensemble.small");
  }
  if (initial_conditions < 1) throw ConfigError("trajectories.count: must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("trajectories.train_fraction: must be in (0, 1)");
  }
  if (windows < 1) throw ConfigError("trajectories.windows: must be >= 1");
  if (spinup_steps < 0) throw ConfigError("trajectories.spinup_steps: must be >= 0");
  if (static_cast<int>(ic_box_low.size()) != model.dim ||
      static_cast<int>(ic_box_high.size()) != model.dim) {
    throw ConfigError("trajectories.ic_box: bounds must match model dimension");
  }
  for (int i = 0; i < model.dim; ++i) {
    if (!(ic_box_low[i] <= ic_box_high[i])) {
      throw ConfigError("trajectories.ic_box: low bound exceeds high bound");
    }
  }
  for (int h : fcnn.hidden_sizes) {
    if (h < 1) throw ConfigError("fcnn.hidden_sizes: all sizes must be >= 1");
  }
  if (fcnn.batch_size < 1) throw ConfigError("fcnn.batch_size: must be >= 1");
  if (fcnn.epochs < 1) throw ConfigError("fcnn.epochs: must be >= 1");
  if (fcnn.patience < 0) throw ConfigError("fcnn.patience: must be >= 0");
  if (!(fcnn.learning_rate > 0.0)) throw ConfigError("fcnn.learning_rate: must be > 0");
}

int ExperimentConfig::train_count() const {
  return static_cast<int>(std::floor(initial_conditions * train_fraction));
}

int ExperimentConfig::fcnn_input_dim() const {
  return ensemble_small * model.dim + observation.obs_dim() + model.dim;
}

std::vector<int> ExperimentConfig::fcnn_layer_sizes() const {
  std::vector<int> sizes;
  sizes.reserve(fcnn.hidden_sizes.size() + 2);
  sizes.push_back(fcnn_input_dim());
  sizes.insert(sizes.end(), fcnn.hidden_sizes.begin(), fcnn.hidden_sizes.end());
  sizes.push_back(model.dim);
  return sizes;
}

fcnn::FcnnConfig make_fcnn_config(const ExperimentConfig& config) {
  fcnn::FcnnConfig out;
  out.layer_sizes = config.fcnn_layer_sizes();
  out.learning_rate = config.fcnn.learning_rate;
  out.beta1 = config.fcnn.beta1;
  out.beta2 = config.fcnn.beta2;
  out.epsilon = config.fcnn.epsilon;
  out.batch_size = config.fcnn.batch_size;
  out.epochs = config.fcnn.epochs;
  out.patience = config.fcnn.patience;
  out.seed = config.seed;
  return out;
}

std::vector<TruthTrajectory> generate_truths(const ExperimentConfig& config,
                                             int workers) {
  config.validate();
  const auto model = dynamics::make_model(config.model);
  const StreamFactory factory(config.seed);
  std::vector<TruthTrajectory> truths(config.initial_conditions);
  parallel_for(config.initial_conditions, workers, [&](std::size_t k) {
    numerics::RngStream rng = factory.initial_condition(static_cast<std::uint32_t>(k));
    dynamics::StateVector state;
    state.components.resize(config.model.dim);
    for (int i = 0; i < config.model.dim; ++i) {
      state.components[i] = rng.next_uniform(config.ic_box_low[i], config.ic_box_high[i]);
    }
    for (int s = 0; s < config.spinup_steps; ++s) {
      state = dynamics::step_euler(state, *model, config.model.dt);
    }
    state.time_index = 0;

    TruthTrajectory truth;
    truth.spec = config.model;
    truth.seed = config.seed;
    truth.index = static_cast<int>(k);
    truth.states.reserve(config.windows + 1);
    truth.states.push_back(state);
    for (int j = 1; j <= config.windows; ++j) {
      truth.states.push_back(dynamics::propagate_window(
          truth.states.back(), *model, config.model.dt, config.model.steps_per_window));
    }
    truths[k] = std::move(truth);
  });
  return truths;
}

enkf::ObservationSequence observation_sequence_for(const ExperimentConfig& config,
                                                   const TruthTrajectory& truth) {
  const StreamFactory factory(config.seed);
  numerics::RngStream rng =
      factory.observation_mean(static_cast<std::uint32_t>(truth.index));
  return enkf::synthesize_observation_sequence(truth, config.observation, rng);
}

namespace {

std::string observation_sequence_hash(const enkf::ObservationSequence& seq) {
  std::vector<double> flat = seq.initial_center;
  for (const auto& mean : seq.means) flat.insert(flat.end(), mean.begin(), mean.end());
  return sha256_hex(std::span<const double>(flat));
}

enkf::RunResult plain_run(const ExperimentConfig& config,
                          const TruthTrajectory& truth,
                          const enkf::ObservationSequence& obs_seq,
                          int ensemble_size, bool keep_members) {
  const StreamFactory factory(config.seed);
  std::vector<numerics::RngStream> streams = enkf::make_member_streams(
      factory, static_cast<std::uint32_t>(truth.index), ensemble_size);
  enkf::RunOptions options;
  options.keep_members = keep_members;
  options.use_known_measurement_cov = config.use_known_measurement_cov;
  return enkf::enkf_run(truth, ensemble_size, config.observation, obs_seq,
                        streams, options);
}

}  // namespace

Dataset generate_dataset(const ExperimentConfig& config,
                         std::span<const TruthTrajectory> truths,
                         int workers) {
  config.validate();
  if (static_cast<int>(truths.size()) != config.initial_conditions) {
    throw ConfigError("generate_dataset: truth count does not match config");
  }
  Dataset dataset;
  dataset.trajectories.resize(truths.size());
  parallel_for(truths.size(), workers, [&](std::size_t k) {
    const TruthTrajectory& truth = truths[k];
    const enkf::ObservationSequence obs_seq = observation_sequence_for(config, truth);
    enkf::RunResult large, small;
    try {
      large = plain_run(config, truth, obs_seq, config.ensemble_large, false);
      small = plain_run(config, truth, obs_seq, config.ensemble_small, true);
    } catch (const NumericalError& e) {
      throw NumericalError("trajectory " + std::to_string(k) + ": " + e.what(),
                           e.time_index, e.member);
    }

    TrajectoryRecords out;
    out.k = static_cast<int>(k);
    out.is_train = config.is_train_trajectory(static_cast<int>(k));
    out.observation_hash = observation_sequence_hash(obs_seq);
    out.records.reserve(config.windows);
    for (int j = 1; j <= config.windows; ++j) {
      StepRecord record;
      record.j = j;
      record.obs_mean = obs_seq.means[j - 1];
      record.small_analysis_ensemble = small.steps[j].analysis->members;
      record.small_analysis_mean = small.steps[j].analysis_mean;
      record.large_analysis_mean = large.steps[j].analysis_mean;
      record.prev_small_analysis_mean = small.steps[j - 1].analysis_mean;
      record.target.resize(config.model.dim);
      for (int i = 0; i < config.model.dim; ++i) {
        record.target[i] =
            record.large_analysis_mean[i] - record.small_analysis_mean[i];
      }
      out.records.push_back(std::move(record));
    }
    dataset.trajectories[k] = std::move(out);
  });
  return dataset;
}

std::vector<fcnn::TrainingPair> training_pairs(const ExperimentConfig& config,
                                               const Dataset& dataset,
                                               bool train_split) {
  std::vector<fcnn::TrainingPair> pairs;
  for (const TrajectoryRecords& traj : dataset.trajectories) {
    if (traj.is_train != train_split) continue;
    for (const StepRecord& record : traj.records) {
      if (record.small_analysis_ensemble.cols() != config.ensemble_small ||
          record.small_analysis_ensemble.rows() != config.model.dim) {
        throw ConfigError("training_pairs: record shape does not match config");
      }
      Ensemble ens;
      ens.members = record.small_analysis_ensemble;
      ens.kind = enkf::EnsembleKind::analysis;
      ens.time_index = record.j;
      fcnn::TrainingPair pair;
      pair.input = fcnn::build_input_vector(ens, record.obs_mean,
                                            record.prev_small_analysis_mean);
      pair.target = record.target;
      pairs.push_back(std::move(pair));
    }
  }
  return pairs;
}

CoupledResult run_coupled(const ExperimentConfig& config,
                          const fcnn::FcnnModel& model,
                          const TruthTrajectory& truth) {
  config.validate();
  if (model.input_dim() != config.fcnn_input_dim() ||
      model.output_dim() != config.model.dim) {
    throw ConfigError("run_coupled: model dimensions do not match experiment");
  }
  const auto dyn_model = dynamics::make_model(config.model);
  const StreamFactory factory(config.seed);
  const enkf::ObservationSequence obs_seq = observation_sequence_for(config, truth);
  std::vector<numerics::RngStream> streams = enkf::make_member_streams(
      factory, static_cast<std::uint32_t>(truth.index), config.ensemble_small);

  std::optional<numerics::Matrix> known_cov;
  if (config.use_known_measurement_cov) {
    numerics::Matrix r = numerics::Matrix::identity(config.observation.obs_dim());
    for (int i = 0; i < r.rows(); ++i) r(i, i) = config.observation.noise_magnitude;
    known_cov = r;
  }

  Ensemble ensemble = enkf::initial_ensemble(
      obs_seq, config.ensemble_small, config.observation.noise_magnitude, streams);

  CoupledResult result;
  result.steps.reserve(truth.windows() + 1);
  {
    CoupledStep step;
    step.j = 0;
    step.obs_mean = config.observation.project(obs_seq.initial_center);
    step.analysis_mean = ensemble.mean();
    step.correction.assign(config.model.dim, 0.0);
    step.corrected_mean = step.analysis_mean;
    result.steps.push_back(std::move(step));
  }

  std::vector<double> prev_mean = result.steps[0].corrected_mean;
  for (int j = 1; j <= truth.windows(); ++j) {
    Ensemble forecast_ens = enkf::forecast(ensemble, *dyn_model, config.model);
    const std::vector<double>& obs_mean = obs_seq.means[j - 1];
    Ensemble measurement_ens = enkf::synthesize_measurement_ensemble(
        obs_mean, config.observation, config.ensemble_small, streams, j);
    Ensemble analysis = enkf::analyze(forecast_ens, measurement_ens,
                                      config.observation,
                                      known_cov ? &*known_cov : nullptr);

    const std::vector<double> input =
        fcnn::build_input_vector(analysis, obs_mean, prev_mean);
    const std::vector<double> correction = fcnn::forward(model, input);

    CoupledStep step;
    step.j = j;
    step.obs_mean = obs_mean;
    step.analysis_mean = analysis.mean();
    step.correction = correction;
    step.corrected_mean.resize(config.model.dim);
    for (int i = 0; i < config.model.dim; ++i) {
      step.corrected_mean[i] = step.analysis_mean[i] + correction[i];
      for (int n = 0; n < analysis.size(); ++n) {
        analysis.members(i, n) += correction[i];
      }
    }
    prev_mean = step.corrected_mean;
    ensemble = std::move(analysis);
    result.steps.push_back(std::move(step));
  }
  return result;
}

std::vector<double> epsilon_metric(
    std::span<const std::vector<std::vector<double>>> small_means,
    std::span<const std::vector<std::vector<double>>> large_means) {
  if (small_means.size() != large_means.size() || small_means.empty()) {
    throw ConfigError("epsilon_metric: misaligned trajectory sets");
  }
  const std::size_t steps = small_means.front().size();
  for (std::size_t k = 0; k < small_means.size(); ++k) {
    if (small_means[k].size() != steps || large_means[k].size() != steps) {
      throw ConfigError("epsilon_metric: misaligned step grids");
    }
  }
  std::vector<double> epsilon(steps, 0.0);
  for (std::size_t j = 0; j < steps; ++j) {
    double acc = 0.0;
    for (std::size_t k = 0; k < small_means.size(); ++k) {
      const auto& a = small_means[k][j];
      const auto& b = large_means[k][j];
      if (a.size() != b.size()) {
        throw ConfigError("epsilon_metric: misaligned state dimensions");
      }
      double norm2 = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        norm2 += d * d;
      }
      acc += std::sqrt(norm2);
    }
    epsilon[j] = acc / static_cast<double>(small_means.size());
  }
  return epsilon;
}

std::string to_string(RunMode mode) {
  switch (mode) {
    case RunMode::large: return "large";
    case RunMode::small: return "small";
    case RunMode::coupled: return "coupled";
  }
  return "unknown";
}

std::string to_string(Subset subset) {
  switch (subset) {
    case Subset::all: return "all";
    case Subset::train: return "train";
    case Subset::test: return "test";
  }
  return "unknown";
}

RunMode run_mode_from_string(const std::string& name) {
  if (name == "large") return RunMode::large;
  if (name == "small") return RunMode::small;
  if (name == "coupled") return RunMode::coupled;
  throw ConfigError("run mode: expected large, small, or coupled, got '" + name + "'");
}

Subset subset_from_string(const std::string& name) {
  if (name == "all") return Subset::all;
  if (name == "train") return Subset::train;
  if (name == "test") return Subset::test;
  throw ConfigError("subset: expected all, train, or test, got '" + name + "'");
}

std::vector<int> subset_trajectories(const ExperimentConfig& config, Subset subset) {
  std::vector<int> out;
  for (int k = 0; k < config.initial_conditions; ++k) {
    const bool train = config.is_train_trajectory(k);
    if (subset == Subset::all || (subset == Subset::train && train) ||
        (subset == Subset::test && !train)) {
      out.push_back(k);
    }
  }
  return out;
}

std::vector<TrajectorySeries> run_experiment(
    const ExperimentConfig& config, RunMode mode, const fcnn::FcnnModel* model,
    std::span<const TruthTrajectory> truths, Subset subset, int workers) {
  config.validate();
  if (mode == RunMode::coupled && model == nullptr) {
    throw ConfigError("run_experiment: coupled mode requires a model");
  }
  const std::vector<int> indices = subset_trajectories(config, subset);
  std::vector<TrajectorySeries> series(indices.size());
  parallel_for(indices.size(), workers, [&](std::size_t sk) {
    const int k = indices[sk];
    if (k >= static_cast<int>(truths.size())) {
      throw ConfigError("run_experiment: truth artifact has too few trajectories");
    }
    const TruthTrajectory& truth = truths[k];
    TrajectorySeries out;
    out.k = k;
    const int steps = truth.windows() + 1;
    out.truth.reserve(steps);
    for (const auto& state : truth.states) out.truth.push_back(state.components);

    if (mode == RunMode::coupled) {
      const CoupledResult run = run_coupled(config, *model, truth);
      for (const CoupledStep& step : run.steps) {
        out.obs.push_back(step.obs_mean);
        out.analysis.push_back(step.analysis_mean);
        out.corrected.push_back(step.corrected_mean);
      }
    } else {
      const int n = mode == RunMode::large ? config.ensemble_large
                                           : config.ensemble_small;
      const enkf::ObservationSequence obs_seq = observation_sequence_for(config, truth);
      const enkf::RunResult run = plain_run(config, truth, obs_seq, n, false);
      for (const enkf::StepOutput& step : run.steps) {
        out.obs.push_back(step.obs_mean);
        out.analysis.push_back(step.analysis_mean);
      }
    }
    series[sk] = std::move(out);
  });
  return series;
}

namespace {

inline void do_not_optimize(const void* p) {
  asm volatile("" : : "g"(p) : "memory");
}

double median_seconds(std::vector<double>& samples) {
  std::sort(samples.begin(), samples.end());
  return samples[samples.size() / 2];
}

}  // namespace

TimingResult timing_benchmark(const ExperimentConfig& config,
                              const fcnn::FcnnModel& model,
                              int repetitions) {
  config.validate();
  if (repetitions < 1000) {
    throw ConfigError("timing_benchmark: need at least 1000 repetitions");
  }
  if (model.input_dim() != config.fcnn_input_dim() ||
      model.output_dim() != config.model.dim) {
    throw ConfigError("timing_benchmark: model dimensions do not match config");
  }
  const auto dyn_model = dynamics::make_model(config.model);
  const StreamFactory factory(config.seed);

  // A post-spinup state keeps the window propagation on the attractor.
  numerics::RngStream rng = factory.initial_condition(0);
  dynamics::StateVector state;
  state.components.resize(config.model.dim);
  for (int i = 0; i < config.model.dim; ++i) {
    state.components[i] = rng.next_uniform(config.ic_box_low[i], config.ic_box_high[i]);
  }
  for (int s = 0; s < config.spinup_steps; ++s) {
    state = dynamics::step_euler(state, *dyn_model, config.model.dt);
  }

  std::vector<double> input(model.input_dim());
  rng.fill_standard_normal(input);

  using clock = std::chrono::steady_clock;
  TimingResult result;
  result.repetitions = repetitions;

  for (int i = 0; i < 100; ++i) {
    const auto warm = dynamics::propagate_window(
        state, *dyn_model, config.model.dt, config.model.steps_per_window);
    do_not_optimize(warm.components.data());
  }
  std::vector<double> samples(repetitions);
  for (int i = 0; i < repetitions; ++i) {
    const auto t0 = clock::now();
    const auto next = dynamics::propagate_window(
        state, *dyn_model, config.model.dt, config.model.steps_per_window);
    const auto t1 = clock::now();
    do_not_optimize(next.components.data());
    samples[i] = std::chrono::duration<double>(t1 - t0).count();
  }
  result.single_window_seconds = median_seconds(samples);

  for (int i = 0; i < 100; ++i) {
    const auto warm = fcnn::forward(model, input);
    do_not_optimize(warm.data());
  }
  for (int i = 0; i < repetitions; ++i) {
    const auto t0 = clock::now();
    const auto out = fcnn::forward(model, input);
    const auto t1 = clock::now();
    do_not_optimize(out.data());
    samples[i] = std::chrono::duration<double>(t1 - t0).count();
  }
  result.fcnn_inference_seconds = median_seconds(samples);
  return result;
}

}  // namespace da::pipeline
