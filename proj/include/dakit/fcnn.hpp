#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dakit/enkf.hpp"
#include "dakit/matrix.hpp"
#include "dakit/rng.hpp"

namespace da::fcnn {

struct FcnnConfig {
  // [input, hidden..., output]; ReLU on hidden layers, identity output,
  // mean squared error loss.
  std::vector<int> layer_sizes;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 32;
  int epochs = 500;
  int patience = 50;  // early stopping on held-out loss
  std::uint64_t seed = 0;

  void validate() const;
  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
};

// Per-feature standardization statistics. Features with zero variance are
// stored with std = 1 and their indices flagged.
struct Normalization {
  std::vector<double> mean;
  std::vector<double> std_dev;
  std::vector<int> zero_variance;
};

struct Layer {
  numerics::Matrix weights;  // out x in
  std::vector<double> bias;  // out
};

struct TrainingMeta {
  std::string dataset_hash;
  std::string config_hash;
  double final_train_mse = 0.0;
  double final_test_mse = 0.0;
  int epochs_run = 0;
  int best_epoch = 0;
};

struct FcnnModel {
  FcnnConfig config;
  std::vector<Layer> layers;
  Normalization input_norm;
  Normalization output_norm;
  TrainingMeta meta;

  int input_dim() const { return config.input_dim(); }
  int output_dim() const { return config.output_dim(); }
};

// He-uniform weights (seeded, one stream per layer), zero biases, identity
// normalization.
FcnnModel initialize_model(const FcnnConfig& config);

// Input layout, fixed and versioned (docs/formats.md, input-layout v1):
// analysis members column by column (member 0 first), then the measurement
// mean, then the previous analysis mean.
std::vector<double> build_input_vector(const enkf::Ensemble& analysis,
                                       std::span<const double> obs_mean,
                                       std::span<const double> prev_analysis_mean);

// normalize -> affine/ReLU chain -> affine -> de-normalize.
std::vector<double> forward(const FcnnModel& model, std::span<const double> input);

double loss_mse(std::span<const double> pred, std::span<const double> target);

// MSE between the network output and the target, both in normalized space;
// the objective the gradients below differentiate.
double normalized_loss(const FcnnModel& model, std::span<const double> input,
                       std::span<const double> target);

struct Gradients {
  std::vector<numerics::Matrix> weights;
  std::vector<std::vector<double>> bias;
};

// Exact gradients of normalized_loss with respect to every weight and bias.
Gradients backward(const FcnnModel& model, std::span<const double> input,
                   std::span<const double> target);

struct TrainingPair {
  std::vector<double> input;
  std::vector<double> target;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;  // epoch-averaged mini-batch MSE, normalized space
  double eval_loss = 0.0;   // held-out MSE, normalized space
};

struct TrainResult {
  FcnnModel model;
  std::vector<EpochStats> history;
};

// Mini-batch Adam with a seeded shuffle schedule; normalization statistics
// come from train_pairs only. eval_pairs drive early stopping and the
// reported test loss (training loss substitutes when empty).
TrainResult train(const FcnnConfig& config,
                  std::span<const TrainingPair> train_pairs,
                  std::span<const TrainingPair> eval_pairs);

void save_model(const FcnnModel& model, const std::filesystem::path& path);
FcnnModel load_model(const std::filesystem::path& path);

}  // namespace da::fcnn
