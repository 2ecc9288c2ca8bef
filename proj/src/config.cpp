#include "dakit/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include "dakit/hash.hpp"

namespace da::config {

using nlohmann::json;
using pipeline::ExperimentConfig;

namespace {

constexpr int kConfigVersion = 1;

const char* kLorenz63Paper = R"json({
  "version": 1,
  "model": {
    "id": "lorenz63",
    "dim": 3,
    "dt": 0.01,
    "steps_per_window": 8,
    "params": { "sigma": 10.0, "rho": 28.0, "beta": 2.6666666666666665 }
  },
  "observation": {
    "indices": [0, 1, 2],
    "noise_magnitude": 2.0,
    "use_known_covariance": false
  },
  "ensemble": { "large": 100, "small": 7 },
  "trajectories": {
    "count": 100,
    "train_fraction": 0.8,
    "windows": 80,
    "spinup_steps": 500,
    "ic_box_low": [-15.0, -15.0, 10.0],
    "ic_box_high": [15.0, 15.0, 40.0]
  },
  "fcnn": {
    "hidden_sizes": [60, 15, 7],
    "learning_rate": 0.001,
    "beta1": 0.9,
    "beta2": 0.999,
    "epsilon": 1e-8,
    "batch_size": 32,
    "epochs": 500,
    "patience": 50
  },
  "seed": 55
})json";

const char* kLorenz96Paper = R"json({
  "version": 1,
  "model": {
    "id": "lorenz96",
    "dim": 10,
    "dt": 0.01,
    "steps_per_window": 5,
    "params": { "forcing": 8.0 }
  },
  "observation": {
    "indices": [0, 2, 4, 6, 8],
    "noise_magnitude": 1.0,
    "use_known_covariance": true
  },
  "ensemble": { "large": 100, "small": 7 },
  "trajectories": {
    "count": 100,
    "train_fraction": 0.8,
    "windows": 80,
    "spinup_steps": 500,
    "ic_box_low": [-5.0, -5.0, -5.0, -5.0, -5.0, -5.0, -5.0, -5.0, -5.0, -5.0],
    "ic_box_high": [5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0]
  },
  "fcnn": {
    "hidden_sizes": [200, 100, 40],
    "learning_rate": 0.001,
    "beta1": 0.9,
    "beta2": 0.999,
    "epsilon": 1e-8,
    "batch_size": 32,
    "epochs": 500,
    "patience": 50
  },
  "seed": 42
})json";

void check_fields(const json& obj, const std::string& where,
                  std::initializer_list<const char*> required,
                  std::initializer_list<const char*> optional = {}) {
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (const char* k : required) known = known || key == k;
    for (const char* k : optional) known = known || key == k;
    if (!known) {
      throw ConfigError(where + ": unknown field '" + key + "'");
    }
  }
  for (const char* k : required) {
    if (!obj.contains(k)) {
      throw ConfigError(where + ": missing required field '" + k + "'");
    }
  }
}

template <typename T>
T get_as(const json& obj, const std::string& where, const char* field) {
  try {
    return obj.at(field).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + field + ": wrong type");
  }
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& source_name) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source_name + ": " + e.what());
  }
  if (!doc.is_object()) throw ConfigError(source_name + ": not a JSON object");
  check_fields(doc, source_name,
               {"version", "model", "observation", "ensemble", "trajectories",
                "fcnn", "seed"});
  if (get_as<int>(doc, source_name, "version") != kConfigVersion) {
    throw ConfigError(source_name + ".version: unsupported config version");
  }

  ExperimentConfig cfg;
  const json& model = doc.at("model");
  check_fields(model, source_name + ".model",
               {"id", "dim", "dt", "steps_per_window", "params"});
  cfg.model.id = dynamics::model_id_from_string(
      get_as<std::string>(model, source_name + ".model", "id"));
  cfg.model.dim = get_as<int>(model, source_name + ".model", "dim");
  cfg.model.dt = get_as<double>(model, source_name + ".model", "dt");
  cfg.model.steps_per_window =
      get_as<int>(model, source_name + ".model", "steps_per_window");
  const json& params = model.at("params");
  if (cfg.model.id == dynamics::ModelId::lorenz63) {
    check_fields(params, source_name + ".model.params", {"sigma", "rho", "beta"});
    cfg.model.sigma = get_as<double>(params, source_name + ".model.params", "sigma");
    cfg.model.rho = get_as<double>(params, source_name + ".model.params", "rho");
    cfg.model.beta = get_as<double>(params, source_name + ".model.params", "beta");
  } else {
    check_fields(params, source_name + ".model.params", {"forcing"});
    cfg.model.forcing =
        get_as<double>(params, source_name + ".model.params", "forcing");
  }

  const json& obs = doc.at("observation");
  check_fields(obs, source_name + ".observation",
               {"indices", "noise_magnitude"}, {"use_known_covariance"});
  cfg.observation.observed_indices =
      get_as<std::vector<int>>(obs, source_name + ".observation", "indices");
  cfg.observation.noise_magnitude =
      get_as<double>(obs, source_name + ".observation", "noise_magnitude");
  if (obs.contains("use_known_covariance")) {
    cfg.use_known_measurement_cov =
        get_as<bool>(obs, source_name + ".observation", "use_known_covariance");
  }

  const json& ens = doc.at("ensemble");
  check_fields(ens, source_name + ".ensemble", {"large", "small"});
  cfg.ensemble_large = get_as<int>(ens, source_name + ".ensemble", "large");
  cfg.ensemble_small = get_as<int>(ens, source_name + ".ensemble", "small");

  const json& traj = doc.at("trajectories");
  check_fields(traj, source_name + ".trajectories",
               {"count", "train_fraction", "windows", "spinup_steps",
                "ic_box_low", "ic_box_high"});
  cfg.initial_conditions = get_as<int>(traj, source_name + ".trajectories", "count");
  cfg.train_fraction =
      get_as<double>(traj, source_name + ".trajectories", "train_fraction");
  cfg.windows = get_as<int>(traj, source_name + ".trajectories", "windows");
  cfg.spinup_steps =
      get_as<int>(traj, source_name + ".trajectories", "spinup_steps");
  cfg.ic_box_low = get_as<std::vector<double>>(traj, source_name + ".trajectories",
                                               "ic_box_low");
  cfg.ic_box_high = get_as<std::vector<double>>(traj, source_name + ".trajectories",
                                                "ic_box_high");

  const json& net = doc.at("fcnn");
  check_fields(net, source_name + ".fcnn",
               {"hidden_sizes", "learning_rate", "beta1", "beta2", "epsilon",
                "batch_size", "epochs", "patience"});
  cfg.fcnn.hidden_sizes =
      get_as<std::vector<int>>(net, source_name + ".fcnn", "hidden_sizes");
  cfg.fcnn.learning_rate =
      get_as<double>(net, source_name + ".fcnn", "learning_rate");
  cfg.fcnn.beta1 = get_as<double>(net, source_name + ".fcnn", "beta1");
  cfg.fcnn.beta2 = get_as<double>(net, source_name + ".fcnn", "beta2");
  cfg.fcnn.epsilon = get_as<double>(net, source_name + ".fcnn", "epsilon");
  cfg.fcnn.batch_size = get_as<int>(net, source_name + ".fcnn", "batch_size");
  cfg.fcnn.epochs = get_as<int>(net, source_name + ".fcnn", "epochs");
  cfg.fcnn.patience = get_as<int>(net, source_name + ".fcnn", "patience");

  cfg.seed = get_as<std::uint64_t>(doc, source_name, "seed");
  cfg.validate();
  return cfg;
}

std::vector<std::string> preset_names() {
  return {"lorenz63-paper", "lorenz96-paper"};
}

bool is_preset(const std::string& name) {
  return name == "lorenz63-paper" || name == "lorenz96-paper";
}

std::string preset_text(const std::string& name) {
  if (name == "lorenz63-paper") return kLorenz63Paper;
  if (name == "lorenz96-paper") return kLorenz96Paper;
  throw ConfigError("unknown preset '" + name + "'");
}

ExperimentConfig load_config(const std::string& path_or_preset,
                             std::optional<std::uint64_t> seed_override) {
  std::string text;
  std::string source;
  if (is_preset(path_or_preset)) {
    text = preset_text(path_or_preset);
    source = path_or_preset;
  } else {
    std::ifstream in(path_or_preset);
    if (!in) {
      throw ConfigError("config: cannot open '" + path_or_preset +
                        "' (not a file and not a preset name)");
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    text = buffer.str();
    source = path_or_preset;
  }
  ExperimentConfig cfg = parse_config_text(text, source);
  if (seed_override) {
    cfg.seed = *seed_override;
  }
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  json params;
  if (cfg.model.id == dynamics::ModelId::lorenz63) {
    params = {{"sigma", cfg.model.sigma},
              {"rho", cfg.model.rho},
              {"beta", cfg.model.beta}};
  } else {
    params = {{"forcing", cfg.model.forcing}};
  }
  return json{
      {"version", kConfigVersion},
      {"model",
       {{"id", dynamics::to_string(cfg.model.id)},
        {"dim", cfg.model.dim},
        {"dt", cfg.model.dt},
        {"steps_per_window", cfg.model.steps_per_window},
        {"params", params}}},
      {"observation",
       {{"indices", cfg.observation.observed_indices},
        {"noise_magnitude", cfg.observation.noise_magnitude},
        {"use_known_covariance", cfg.use_known_measurement_cov}}},
      {"ensemble", {{"large", cfg.ensemble_large}, {"small", cfg.ensemble_small}}},
      {"trajectories",
       {{"count", cfg.initial_conditions},
        {"train_fraction", cfg.train_fraction},
        {"windows", cfg.windows},
        {"spinup_steps", cfg.spinup_steps},
        {"ic_box_low", cfg.ic_box_low},
        {"ic_box_high", cfg.ic_box_high}}},
      {"fcnn",
       {{"hidden_sizes", cfg.fcnn.hidden_sizes},
        {"learning_rate", cfg.fcnn.learning_rate},
        {"beta1", cfg.fcnn.beta1},
        {"beta2", cfg.fcnn.beta2},
        {"epsilon", cfg.fcnn.epsilon},
        {"batch_size", cfg.fcnn.batch_size},
        {"epochs", cfg.fcnn.epochs},
        {"patience", cfg.fcnn.patience}}},
      {"seed", cfg.seed},
  };
}

std::string config_hash(const ExperimentConfig& cfg) {
  return sha256_hex(config_to_json(cfg).dump());
}

}  // namespace da::config
