#include "dakit/fcnn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace da::fcnn {

using numerics::Matrix;
using nlohmann::json;

void FcnnConfig::validate() const {
  if (layer_sizes.size() < 2) {
    throw ConfigError("fcnn.layer_sizes: need at least input and output layers");
  }
  for (int s : layer_sizes) {
    if (s < 1) throw ConfigError("fcnn.layer_sizes: all sizes must be >= 1");
  }
  if (!(learning_rate > 0.0)) throw ConfigError("fcnn.learning_rate: must be > 0");
  if (beta1 < 0.0 || beta1 >= 1.0) throw ConfigError("fcnn.beta1: must be in [0, 1)");
  if (beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("fcnn.beta2: must be in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("fcnn.epsilon: must be > 0");
  if (batch_size < 1) throw ConfigError("fcnn.batch_size: must be >= 1");
  if (epochs < 1) throw ConfigError("fcnn.epochs: must be >= 1");
  if (patience < 0) throw ConfigError("fcnn.patience: must be >= 0");
}

FcnnModel initialize_model(const FcnnConfig& config) {
  config.validate();
  FcnnModel model;
  model.config = config;
  const numerics::StreamFactory factory(config.seed);
  const int n_layers = static_cast<int>(config.layer_sizes.size()) - 1;
  model.layers.reserve(n_layers);
  for (int l = 0; l < n_layers; ++l) {
    const int fan_in = config.layer_sizes[l];
    const int fan_out = config.layer_sizes[l + 1];
    const double limit = std::sqrt(6.0 / fan_in);
    numerics::RngStream stream = factory.fcnn_init(l);
    Layer layer;
    layer.weights = Matrix(fan_out, fan_in);
    // He-uniform on the ReLU layers; the linear output head starts at zero
    // so an untrained network predicts the training-mean correction.
    if (l + 1 < n_layers) {
      for (int r = 0; r < fan_out; ++r)
        for (int c = 0; c < fan_in; ++c)
          layer.weights(r, c) = stream.next_uniform(-limit, limit);
    }
    layer.bias.assign(fan_out, 0.0);
    model.layers.push_back(std::move(layer));
  }
  model.input_norm.mean.assign(config.input_dim(), 0.0);
  model.input_norm.std_dev.assign(config.input_dim(), 1.0);
  model.output_norm.mean.assign(config.output_dim(), 0.0);
  model.output_norm.std_dev.assign(config.output_dim(), 1.0);
  return model;
}

std::vector<double> build_input_vector(const enkf::Ensemble& analysis,
                                       std::span<const double> obs_mean,
                                       std::span<const double> prev_analysis_mean) {
  if (analysis.dim() != static_cast<int>(prev_analysis_mean.size())) {
    throw ConfigError("build_input_vector: previous-mean dimension mismatch");
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(analysis.dim()) * analysis.size() +
              obs_mean.size() + prev_analysis_mean.size());
  for (int n = 0; n < analysis.size(); ++n)
    for (int i = 0; i < analysis.dim(); ++i) out.push_back(analysis.members(i, n));
  out.insert(out.end(), obs_mean.begin(), obs_mean.end());
  out.insert(out.end(), prev_analysis_mean.begin(), prev_analysis_mean.end());
  return out;
}

namespace {

void normalize(const Normalization& norm, std::span<const double> in,
               std::span<double> out) {
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = (in[i] - norm.mean[i]) / norm.std_dev[i];
  }
}

void denormalize(const Normalization& norm, std::span<const double> in,
                 std::span<double> out) {
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = in[i] * norm.std_dev[i] + norm.mean[i];
  }
}

// Pre-activations and activations for every layer; reused across samples.
struct Workspace {
  std::vector<std::vector<double>> pre;   // z_l, l = 0..L-1
  std::vector<std::vector<double>> act;   // a_0 = input, a_{l+1} = activation
  std::vector<std::vector<double>> delta;

  explicit Workspace(const FcnnConfig& config) {
    const int n_layers = static_cast<int>(config.layer_sizes.size()) - 1;
    act.resize(n_layers + 1);
    pre.resize(n_layers);
    delta.resize(n_layers);
    for (int l = 0; l <= n_layers; ++l) act[l].resize(config.layer_sizes[l]);
    for (int l = 0; l < n_layers; ++l) {
      pre[l].resize(config.layer_sizes[l + 1]);
      delta[l].resize(config.layer_sizes[l + 1]);
    }
  }
};

void forward_normalized(const FcnnModel& model, Workspace& ws) {
  const int n_layers = static_cast<int>(model.layers.size());
  for (int l = 0; l < n_layers; ++l) {
    const Layer& layer = model.layers[l];
    const int in = layer.weights.cols();
    const int out = layer.weights.rows();
    const double* w = layer.weights.data().data();
    const double* a = ws.act[l].data();
    for (int r = 0; r < out; ++r) {
      double acc = layer.bias[r];
      const double* row = w + static_cast<std::size_t>(r) * in;
      for (int c = 0; c < in; ++c) acc += row[c] * a[c];
      ws.pre[l][r] = acc;
      ws.act[l + 1][r] = (l + 1 < n_layers) ? std::max(acc, 0.0) : acc;
    }
  }
}

// delta_L from (a_L, t); gradients accumulated into grads (+=).
void backward_normalized(const FcnnModel& model, Workspace& ws,
                         std::span<const double> target_normalized,
                         Gradients& grads) {
  const int n_layers = static_cast<int>(model.layers.size());
  const int d_out = model.config.output_dim();
  for (int r = 0; r < d_out; ++r) {
    ws.delta[n_layers - 1][r] =
        2.0 / d_out * (ws.act[n_layers][r] - target_normalized[r]);
  }
  for (int l = n_layers - 1; l >= 0; --l) {
    const Layer& layer = model.layers[l];
    const int in = layer.weights.cols();
    const int out = layer.weights.rows();
    const double* a = ws.act[l].data();
    const double* delta = ws.delta[l].data();
    double* gw = grads.weights[l].data().data();
    for (int r = 0; r < out; ++r) {
      const double dr = delta[r];
      grads.bias[l][r] += dr;
      double* grow = gw + static_cast<std::size_t>(r) * in;
      for (int c = 0; c < in; ++c) grow[c] += dr * a[c];
    }
    if (l > 0) {
      const double* w = layer.weights.data().data();
      for (int c = 0; c < in; ++c) {
        double acc = 0.0;
        for (int r = 0; r < out; ++r) {
          acc += w[static_cast<std::size_t>(r) * in + c] * delta[r];
        }
        // ReLU gate of the upstream pre-activation.
        ws.delta[l - 1][c] = ws.pre[l - 1][c] > 0.0 ? acc : 0.0;
      }
    }
  }
}

Gradients zero_gradients(const FcnnModel& model) {
  Gradients g;
  g.weights.reserve(model.layers.size());
  g.bias.reserve(model.layers.size());
  for (const Layer& layer : model.layers) {
    g.weights.emplace_back(layer.weights.rows(), layer.weights.cols());
    g.bias.emplace_back(layer.bias.size(), 0.0);
  }
  return g;
}

void check_input(const FcnnModel& model, std::span<const double> input) {
  if (static_cast<int>(input.size()) != model.input_dim()) {
    throw ConfigError("fcnn forward: input length does not match input layer");
  }
  for (double v : input) {
    if (!std::isfinite(v)) throw ConfigError("fcnn forward: non-finite input");
  }
}

Normalization compute_normalization(std::span<const TrainingPair> pairs,
                                    bool use_target) {
  const std::size_t dim =
      use_target ? pairs.front().target.size() : pairs.front().input.size();
  Normalization norm;
  norm.mean.assign(dim, 0.0);
  norm.std_dev.assign(dim, 0.0);
  for (const TrainingPair& p : pairs) {
    const std::vector<double>& v = use_target ? p.target : p.input;
    for (std::size_t i = 0; i < dim; ++i) norm.mean[i] += v[i];
  }
  for (double& m : norm.mean) m /= static_cast<double>(pairs.size());
  for (const TrainingPair& p : pairs) {
    const std::vector<double>& v = use_target ? p.target : p.input;
    for (std::size_t i = 0; i < dim; ++i) {
      const double d = v[i] - norm.mean[i];
      norm.std_dev[i] += d * d;
    }
  }
  for (std::size_t i = 0; i < dim; ++i) {
    norm.std_dev[i] = std::sqrt(norm.std_dev[i] / static_cast<double>(pairs.size()));
    if (norm.std_dev[i] == 0.0) {
      norm.std_dev[i] = 1.0;
      norm.zero_variance.push_back(static_cast<int>(i));
    }
  }
  return norm;
}

}  // namespace

std::vector<double> forward(const FcnnModel& model, std::span<const double> input) {
  check_input(model, input);
  Workspace ws(model.config);
  normalize(model.input_norm, input, ws.act[0]);
  forward_normalized(model, ws);
  std::vector<double> out(model.output_dim());
  denormalize(model.output_norm, ws.act.back(), out);
  return out;
}

double loss_mse(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) {
    throw ConfigError("loss_mse: length mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

double normalized_loss(const FcnnModel& model, std::span<const double> input,
                       std::span<const double> target) {
  check_input(model, input);
  Workspace ws(model.config);
  normalize(model.input_norm, input, ws.act[0]);
  forward_normalized(model, ws);
  std::vector<double> target_norm(target.size());
  normalize(model.output_norm, target, target_norm);
  return loss_mse(ws.act.back(), target_norm);
}

Gradients backward(const FcnnModel& model, std::span<const double> input,
                   std::span<const double> target) {
  check_input(model, input);
  if (static_cast<int>(target.size()) != model.output_dim()) {
    throw ConfigError("fcnn backward: target length does not match output layer");
  }
  Workspace ws(model.config);
  normalize(model.input_norm, input, ws.act[0]);
  forward_normalized(model, ws);
  std::vector<double> target_norm(target.size());
  normalize(model.output_norm, target, target_norm);
  Gradients grads = zero_gradients(model);
  backward_normalized(model, ws, target_norm, grads);
  return grads;
}

TrainResult train(const FcnnConfig& config,
                  std::span<const TrainingPair> train_pairs,
                  std::span<const TrainingPair> eval_pairs) {
  config.validate();
  if (train_pairs.empty()) throw TrainingError("train: empty dataset");
  for (const TrainingPair& p : train_pairs) {
    if (static_cast<int>(p.input.size()) != config.input_dim() ||
        static_cast<int>(p.target.size()) != config.output_dim()) {
      throw ConfigError("train: pair shape does not match layer sizes");
    }
  }
  for (const TrainingPair& p : eval_pairs) {
    if (static_cast<int>(p.input.size()) != config.input_dim() ||
        static_cast<int>(p.target.size()) != config.output_dim()) {
      throw ConfigError("train: eval pair shape does not match layer sizes");
    }
  }

  FcnnModel model = initialize_model(config);
  model.input_norm = compute_normalization(train_pairs, false);
  model.output_norm = compute_normalization(train_pairs, true);

  const int n_in = config.input_dim();
  const int n_out = config.output_dim();
  const std::size_t n = train_pairs.size();

  // Pre-normalized copies keep the inner loop free of repeated scaling.
  std::vector<double> x(n * n_in), t(n * n_out);
  for (std::size_t i = 0; i < n; ++i) {
    normalize(model.input_norm, train_pairs[i].input,
              std::span<double>(x.data() + i * n_in, n_in));
    normalize(model.output_norm, train_pairs[i].target,
              std::span<double>(t.data() + i * n_out, n_out));
  }
  const std::size_t n_eval = eval_pairs.size();
  std::vector<double> xe(n_eval * n_in), te(n_eval * n_out);
  for (std::size_t i = 0; i < n_eval; ++i) {
    normalize(model.input_norm, eval_pairs[i].input,
              std::span<double>(xe.data() + i * n_in, n_in));
    normalize(model.output_norm, eval_pairs[i].target,
              std::span<double>(te.data() + i * n_out, n_out));
  }

  Workspace ws(config);
  Gradients grads = zero_gradients(model);
  Gradients adam_m = zero_gradients(model);
  Gradients adam_v = zero_gradients(model);

  numerics::RngStream shuffle_stream =
      numerics::StreamFactory(config.seed).fcnn_shuffle();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0u);

  const auto eval_normalized = [&](const std::vector<double>& xs,
                                   const std::vector<double>& ts,
                                   std::size_t count) {
    double acc = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      std::copy_n(xs.data() + i * n_in, n_in, ws.act[0].data());
      forward_normalized(model, ws);
      acc += loss_mse(ws.act.back(),
                      std::span<const double>(ts.data() + i * n_out, n_out));
    }
    return acc / static_cast<double>(count);
  };

  TrainResult result;
  std::vector<Layer> best_layers = model.layers;
  double best_eval = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int since_best = 0;
  long adam_t = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    // Fisher-Yates with the dedicated shuffle stream.
    for (std::size_t i = n - 1; i > 0; --i) {
      const std::size_t j = shuffle_stream.next_below(i + 1);
      std::swap(order[i], order[j]);
    }

    double epoch_loss = 0.0;
    int n_batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      for (auto& g : grads.weights) std::fill(g.data().begin(), g.data().end(), 0.0);
      for (auto& g : grads.bias) std::fill(g.begin(), g.end(), 0.0);

      double batch_loss = 0.0;
      for (std::size_t i = start; i < stop; ++i) {
        const std::size_t idx = order[i];
        std::copy_n(x.data() + idx * n_in, n_in, ws.act[0].data());
        forward_normalized(model, ws);
        const std::span<const double> target(t.data() + idx * n_out, n_out);
        batch_loss += loss_mse(ws.act.back(), target);
        backward_normalized(model, ws, target, grads);
      }
      batch_loss *= inv_batch;
      if (!std::isfinite(batch_loss)) {
        throw TrainingError("train: loss diverged at epoch " +
                                std::to_string(epoch),
                            epoch);
      }

      // Adam update on the batch-mean gradient.
      ++adam_t;
      const double bc1 = 1.0 - std::pow(config.beta1, adam_t);
      const double bc2 = 1.0 - std::pow(config.beta2, adam_t);
      for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto update = [&](double& param, double& m, double& v, double g) {
          g *= inv_batch;
          m = config.beta1 * m + (1.0 - config.beta1) * g;
          v = config.beta2 * v + (1.0 - config.beta2) * g * g;
          param -= config.learning_rate * (m / bc1) /
                   (std::sqrt(v / bc2) + config.epsilon);
        };
        auto w = model.layers[l].weights.data();
        auto gw = grads.weights[l].data();
        auto mw = adam_m.weights[l].data();
        auto vw = adam_v.weights[l].data();
        for (std::size_t i = 0; i < w.size(); ++i) update(w[i], mw[i], vw[i], gw[i]);
        auto& b = model.layers[l].bias;
        for (std::size_t i = 0; i < b.size(); ++i) {
          update(b[i], adam_m.bias[l][i], adam_v.bias[l][i], grads.bias[l][i]);
        }
      }
      epoch_loss += batch_loss;
      ++n_batches;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_loss / n_batches;
    stats.eval_loss =
        n_eval > 0 ? eval_normalized(xe, te, n_eval) : stats.train_loss;
    result.history.push_back(stats);

    if (stats.eval_loss < best_eval) {
      best_eval = stats.eval_loss;
      best_epoch = epoch;
      best_layers = model.layers;
      since_best = 0;
    } else if (++since_best > config.patience) {
      break;
    }
  }

  model.layers = best_layers;
  model.meta.epochs_run = static_cast<int>(result.history.size());
  model.meta.best_epoch = best_epoch;

  const auto raw_mse = [&](std::span<const TrainingPair> pairs) {
    if (pairs.empty()) return 0.0;
    double acc = 0.0;
    for (const TrainingPair& p : pairs) acc += loss_mse(forward(model, p.input), p.target);
    return acc / static_cast<double>(pairs.size());
  };
  model.meta.final_train_mse = raw_mse(train_pairs);
  model.meta.final_test_mse = eval_pairs.empty() ? model.meta.final_train_mse
                                                 : raw_mse(eval_pairs);
  result.model = std::move(model);
  return result;
}

namespace {

constexpr int kModelVersion = 1;
constexpr const char* kModelFormat = "dakit-model";

json norm_to_json(const Normalization& n) {
  return json{{"mean", n.mean},
              {"std", n.std_dev},
              {"zero_variance", n.zero_variance}};
}

Normalization norm_from_json(const json& j, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (key != "mean" && key != "std" && key != "zero_variance") {
      throw ConfigError("model file: unknown field " + where + "." + key);
    }
  }
  if (!j.contains("mean") || !j.contains("std")) {
    throw ConfigError("model file: corrupt " + where + " block");
  }
  Normalization n;
  j.at("mean").get_to(n.mean);
  j.at("std").get_to(n.std_dev);
  if (j.contains("zero_variance")) j.at("zero_variance").get_to(n.zero_variance);
  if (n.mean.size() != n.std_dev.size()) {
    throw ConfigError("model file: " + where + " mean/std length mismatch");
  }
  for (double s : n.std_dev) {
    if (!(s > 0.0)) throw ConfigError("model file: " + where + " std must be > 0");
  }
  return n;
}

}  // namespace

void save_model(const FcnnModel& model, const std::filesystem::path& path) {
  json layers = json::array();
  for (const Layer& layer : model.layers) {
    json rows = json::array();
    for (int r = 0; r < layer.weights.rows(); ++r) {
      json row = json::array();
      for (int c = 0; c < layer.weights.cols(); ++c) row.push_back(layer.weights(r, c));
      rows.push_back(std::move(row));
    }
    layers.push_back(json{{"weights", std::move(rows)}, {"bias", layer.bias}});
  }
  const json doc{
      {"format", kModelFormat},
      {"version", kModelVersion},
      {"fcnn",
       {{"layer_sizes", model.config.layer_sizes},
        {"learning_rate", model.config.learning_rate},
        {"beta1", model.config.beta1},
        {"beta2", model.config.beta2},
        {"epsilon", model.config.epsilon},
        {"batch_size", model.config.batch_size},
        {"epochs", model.config.epochs},
        {"patience", model.config.patience},
        {"seed", model.config.seed}}},
      {"input_normalization", norm_to_json(model.input_norm)},
      {"output_normalization", norm_to_json(model.output_norm)},
      {"layers", std::move(layers)},
      {"training",
       {{"dataset_hash", model.meta.dataset_hash},
        {"config_hash", model.meta.config_hash},
        {"final_train_mse", model.meta.final_train_mse},
        {"final_test_mse", model.meta.final_test_mse},
        {"epochs_run", model.meta.epochs_run},
        {"best_epoch", model.meta.best_epoch}}},
  };
  std::ofstream out(path);
  if (!out) throw ConfigError("model file: cannot open for writing: " + path.string());
  out << doc.dump(1) << '\n';
  if (!out) throw ConfigError("model file: write failed: " + path.string());
}

FcnnModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("model file: cannot open: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("model file: " + std::string(e.what()));
  }
  static const std::vector<std::string> allowed = {
      "format",        "version", "fcnn",     "input_normalization",
      "output_normalization", "layers",  "training"};
  for (const auto& [key, _] : doc.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("model file: unknown field " + key);
    }
  }
  if (!doc.contains("format") || doc.at("format") != kModelFormat) {
    throw ConfigError("model file: not a dakit-model document");
  }
  if (!doc.contains("version") || doc.at("version").get<int>() != kModelVersion) {
    throw ConfigError("model file: unsupported version");
  }
  if (!doc.contains("input_normalization") ||
      !doc.contains("output_normalization")) {
    throw ConfigError("model file: missing normalization block");
  }
  if (!doc.contains("fcnn") || !doc.contains("layers")) {
    throw ConfigError("model file: missing fcnn or layers block");
  }

  FcnnModel model;
  const json& cfg = doc.at("fcnn");
  cfg.at("layer_sizes").get_to(model.config.layer_sizes);
  cfg.at("learning_rate").get_to(model.config.learning_rate);
  cfg.at("beta1").get_to(model.config.beta1);
  cfg.at("beta2").get_to(model.config.beta2);
  cfg.at("epsilon").get_to(model.config.epsilon);
  cfg.at("batch_size").get_to(model.config.batch_size);
  cfg.at("epochs").get_to(model.config.epochs);
  cfg.at("patience").get_to(model.config.patience);
  cfg.at("seed").get_to(model.config.seed);
  model.config.validate();

  const json& layers = doc.at("layers");
  if (layers.size() != model.config.layer_sizes.size() - 1) {
    throw ConfigError("model file: layer count does not match layer_sizes");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const int want_out = model.config.layer_sizes[l + 1];
    const int want_in = model.config.layer_sizes[l];
    const json& rows = layers[l].at("weights");
    if (static_cast<int>(rows.size()) != want_out) {
      throw ConfigError("model file: layer " + std::to_string(l) +
                        " weight shape mismatch");
    }
    Layer layer;
    layer.weights = Matrix(want_out, want_in);
    for (int r = 0; r < want_out; ++r) {
      if (static_cast<int>(rows[r].size()) != want_in) {
        throw ConfigError("model file: layer " + std::to_string(l) +
                          " weight shape mismatch");
      }
      for (int c = 0; c < want_in; ++c) layer.weights(r, c) = rows[r][c].get<double>();
    }
    layers[l].at("bias").get_to(layer.bias);
    if (static_cast<int>(layer.bias.size()) != want_out) {
      throw ConfigError("model file: layer " + std::to_string(l) +
                        " bias shape mismatch");
    }
    model.layers.push_back(std::move(layer));
  }

  model.input_norm = norm_from_json(doc.at("input_normalization"), "input_normalization");
  model.output_norm =
      norm_from_json(doc.at("output_normalization"), "output_normalization");
  if (static_cast<int>(model.input_norm.mean.size()) != model.input_dim()) {
    throw ConfigError("model file: input normalization length mismatch");
  }
  if (static_cast<int>(model.output_norm.mean.size()) != model.output_dim()) {
    throw ConfigError("model file: output normalization length mismatch");
  }

  if (doc.contains("training")) {
    const json& meta = doc.at("training");
    meta.at("dataset_hash").get_to(model.meta.dataset_hash);
    if (meta.contains("config_hash")) meta.at("config_hash").get_to(model.meta.config_hash);
    meta.at("final_train_mse").get_to(model.meta.final_train_mse);
    meta.at("final_test_mse").get_to(model.meta.final_test_mse);
    meta.at("epochs_run").get_to(model.meta.epochs_run);
    meta.at("best_epoch").get_to(model.meta.best_epoch);
  }
  return model;
}

}  // namespace da::fcnn
