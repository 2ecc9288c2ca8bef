#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dakit/dynamics.hpp"
#include "dakit/enkf.hpp"
#include "dakit/fcnn.hpp"

namespace da::pipeline {

struct FcnnSettings {
  std::vector<int> hidden_sizes;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 32;
  int epochs = 500;
  int patience = 50;
};

struct ExperimentConfig {
  dynamics::ModelSpec model;
  enkf::ObservationModel observation;
  bool use_known_measurement_cov = false;
  int ensemble_large = 100;
  int ensemble_small = 7;
  int initial_conditions = 100;  // K
  double train_fraction = 0.8;
  int windows = 80;  // J
  int spinup_steps = 500;
  std::vector<double> ic_box_low;
  std::vector<double> ic_box_high;
  FcnnSettings fcnn;
  std::uint64_t seed = 0;

  void validate() const;
  int train_count() const;
  bool is_train_trajectory(int k) const { return k < train_count(); }
  // N_small * d + m + d, from the fixed input layout.
  int fcnn_input_dim() const;
  std::vector<int> fcnn_layer_sizes() const;
};

fcnn::FcnnConfig make_fcnn_config(const ExperimentConfig& config);

// K initial conditions drawn uniformly from the configured box, spun up,
// then recorded for J+1 assimilation steps.
std::vector<enkf::TruthTrajectory> generate_truths(const ExperimentConfig& config,
                                                   int workers = 1);

enkf::ObservationSequence observation_sequence_for(
    const ExperimentConfig& config, const enkf::TruthTrajectory& truth);

struct StepRecord {
  int j = 0;
  std::vector<double> obs_mean;
  numerics::Matrix small_analysis_ensemble;  // d x N_small
  std::vector<double> small_analysis_mean;
  std::vector<double> large_analysis_mean;
  std::vector<double> prev_small_analysis_mean;
  std::vector<double> target;  // large mean - small mean
};

struct TrajectoryRecords {
  int k = 0;
  bool is_train = true;
  std::string observation_hash;  // over the consumed measurement means
  std::vector<StepRecord> records;  // j = 1..J
};

struct Dataset {
  std::vector<TrajectoryRecords> trajectories;
};

// Paired large/small EnKF runs over a shared measurement-mean sequence;
// targets follow the correction definition large mean minus small mean.
Dataset generate_dataset(const ExperimentConfig& config,
                         std::span<const enkf::TruthTrajectory> truths,
                         int workers = 1);

std::vector<fcnn::TrainingPair> training_pairs(const ExperimentConfig& config,
                                               const Dataset& dataset,
                                               bool train_split);

struct CoupledStep {
  int j = 0;
  std::vector<double> obs_mean;
  std::vector<double> analysis_mean;  // before correction
  std::vector<double> correction;
  std::vector<double> corrected_mean;
};

struct CoupledResult {
  std::vector<CoupledStep> steps;  // j = 0..J (no correction at j = 0)
};

// The coupled loop: forecast, analyze, predict the correction, shift every
// member by it, output the corrected mean.
CoupledResult run_coupled(const ExperimentConfig& config,
                          const fcnn::FcnnModel& model,
                          const enkf::TruthTrajectory& truth);

// epsilon(t_j) = mean over trajectories of || small - large ||_2 per step.
std::vector<double> epsilon_metric(
    std::span<const std::vector<std::vector<double>>> small_means,
    std::span<const std::vector<std::vector<double>>> large_means);

enum class RunMode { large, small, coupled };
enum class Subset { all, train, test };

std::string to_string(RunMode mode);
std::string to_string(Subset subset);
RunMode run_mode_from_string(const std::string& name);
Subset subset_from_string(const std::string& name);

std::vector<int> subset_trajectories(const ExperimentConfig& config, Subset subset);

struct TrajectorySeries {
  int k = 0;
  // One entry per step j = 0..J.
  std::vector<std::vector<double>> truth;
  std::vector<std::vector<double>> obs;       // H * initial center at j = 0
  std::vector<std::vector<double>> analysis;  // analysis mean
  std::vector<std::vector<double>> corrected; // coupled runs only
};

std::vector<TrajectorySeries> run_experiment(
    const ExperimentConfig& config, RunMode mode, const fcnn::FcnnModel* model,
    std::span<const enkf::TruthTrajectory> truths, Subset subset,
    int workers = 1);

struct TimingResult {
  double single_window_seconds = 0.0;
  double fcnn_inference_seconds = 0.0;
  int repetitions = 0;
};

// Median wall time of one single-member window propagation and of one
// network evaluation, after warmup.
TimingResult timing_benchmark(const ExperimentConfig& config,
                              const fcnn::FcnnModel& model,
                              int repetitions = 5000);

}  // namespace da::pipeline
