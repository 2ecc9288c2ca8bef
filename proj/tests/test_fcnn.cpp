#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "dakit/fcnn.hpp"

using da::enkf::Ensemble;
using da::enkf::EnsembleKind;
using da::fcnn::FcnnConfig;
using da::fcnn::FcnnModel;
using da::fcnn::TrainingPair;
using da::numerics::Matrix;
using da::numerics::RngStream;

namespace {

FcnnConfig tiny_config(std::vector<int> sizes, std::uint64_t seed = 1) {
  FcnnConfig cfg;
  cfg.layer_sizes = std::move(sizes);
  cfg.seed = seed;
  return cfg;
}

FcnnModel zero_model(std::vector<int> sizes) {
  FcnnModel model = da::fcnn::initialize_model(tiny_config(std::move(sizes)));
  for (auto& layer : model.layers) {
    std::fill(layer.weights.data().begin(), layer.weights.data().end(), 0.0);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
  return model;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("input vector layout and lengths") {
  Ensemble ens;
  ens.members = Matrix(3, 7);
  ens.kind = EnsembleKind::analysis;
  for (int n = 0; n < 7; ++n)
    for (int i = 0; i < 3; ++i) ens.members(i, n) = 100.0 * n + i;
  const std::vector<double> obs{1000.0, 1001.0, 1002.0};
  const std::vector<double> prev{2000.0, 2001.0, 2002.0};
  const auto input = da::fcnn::build_input_vector(ens, obs, prev);
  REQUIRE(input.size() == 27);  // 7 * 3 + 3 + 3
  CHECK(input[0] == 0.0);    // member 0, component 0
  CHECK(input[1] == 1.0);    // member 0, component 1
  CHECK(input[3] == 100.0);  // member 1, component 0
  CHECK(input[20] == 602.0); // member 6, component 2
  CHECK(input[21] == 1000.0);
  CHECK(input[24] == 2000.0);
  CHECK(input[26] == 2002.0);
}

TEST_CASE("lorenz96-shaped input vector length") {
  Ensemble ens;
  ens.members = Matrix(10, 7);
  const auto input = da::fcnn::build_input_vector(
      ens, std::vector<double>(5, 0.0), std::vector<double>(10, 0.0));
  CHECK(input.size() == 85);  // 7 * 10 + 5 + 10
  for (double v : input) CHECK(v == 0.0);
}

TEST_CASE("zero network maps everything to zero") {
  const FcnnModel model = zero_model({4, 6, 2});
  const auto out = da::fcnn::forward(model, std::vector<double>{1.0, -2.0, 3.0, 4.0});
  CHECK(out == std::vector<double>{0.0, 0.0});
}

TEST_CASE("single identity layer is the identity map") {
  FcnnModel model = zero_model({3, 3});
  for (int i = 0; i < 3; ++i) model.layers[0].weights(i, i) = 1.0;
  const std::vector<double> x{0.5, -1.5, 2.5};
  CHECK(da::fcnn::forward(model, x) == x);
}

TEST_CASE("hidden relu clips negative pre-activations") {
  FcnnModel model = zero_model({3, 3, 3});
  for (int i = 0; i < 3; ++i) {
    model.layers[0].weights(i, i) = 1.0;
    model.layers[1].weights(i, i) = 1.0;
  }
  const auto out = da::fcnn::forward(model, std::vector<double>{-1.0, 0.0, 2.0});
  CHECK(out == std::vector<double>{0.0, 0.0, 2.0});
}

TEST_CASE("forward rejects bad inputs") {
  const FcnnModel model = zero_model({3, 2});
  CHECK_THROWS_AS(da::fcnn::forward(model, std::vector<double>{1.0, 2.0}),
                  da::ConfigError);
  CHECK_THROWS_AS(
      da::fcnn::forward(model, std::vector<double>{1.0, std::nan(""), 0.0}),
      da::ConfigError);
}

TEST_CASE("mse hand values") {
  CHECK(da::fcnn::loss_mse(std::vector<double>{1.0, 2.0},
                           std::vector<double>{1.0, 2.0}) == 0.0);
  CHECK(da::fcnn::loss_mse(std::vector<double>{1.0, 1.0},
                           std::vector<double>{0.0, 0.0}) == 1.0);
  CHECK(da::fcnn::loss_mse(std::vector<double>{3.0}, std::vector<double>{1.0}) ==
        4.0);
}

TEST_CASE("gradients vanish at a perfect fit") {
  FcnnModel model = zero_model({2, 2});
  model.layers[0].weights(0, 0) = 1.0;
  model.layers[0].weights(1, 1) = 1.0;
  const std::vector<double> x{0.7, -0.3};
  const auto grads = da::fcnn::backward(model, x, x);
  for (const auto& g : grads.weights)
    for (double v : g.data()) CHECK(v == 0.0);
  for (const auto& g : grads.bias)
    for (double v : g) CHECK(v == 0.0);
}

TEST_CASE("gradients match central finite differences") {
  const FcnnConfig cfg = tiny_config({5, 4, 3}, 99);
  FcnnModel model = da::fcnn::initialize_model(cfg);
  RngStream rng(1717, 0);
  // The output head initializes to zero; give it random weight so the check
  // exercises every layer.
  for (auto& layer : model.layers) {
    for (double& w : layer.weights.data()) {
      if (w == 0.0) w = rng.next_uniform(-0.8, 0.8);
    }
    for (double& b : layer.bias) b = rng.next_uniform(-0.2, 0.2);
  }
  const double h = 1e-5;

  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(5), t(3);
    rng.fill_standard_normal(x);
    rng.fill_standard_normal(t);
    const auto grads = da::fcnn::backward(model, x, t);

    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      auto check_param = [&](double& param, double analytic) {
        const double saved = param;
        param = saved + h;
        const double up = da::fcnn::normalized_loss(model, x, t);
        param = saved - h;
        const double down = da::fcnn::normalized_loss(model, x, t);
        param = saved;
        const double fd = (up - down) / (2.0 * h);
        const double rel =
            std::abs(analytic - fd) / std::max({std::abs(fd), std::abs(analytic), 1e-8});
        CHECK(rel < 1e-4);
      };
      for (int r = 0; r < model.layers[l].weights.rows(); ++r)
        for (int c = 0; c < model.layers[l].weights.cols(); ++c)
          check_param(model.layers[l].weights(r, c), grads.weights[l](r, c));
      for (std::size_t i = 0; i < model.layers[l].bias.size(); ++i)
        check_param(model.layers[l].bias[i], grads.bias[l][i]);
    }
  }
}

TEST_CASE("dead relu units pass no gradient") {
  FcnnModel model = zero_model({1, 1, 1});
  model.layers[0].weights(0, 0) = 1.0;
  model.layers[0].bias[0] = -5.0;  // pre-activation stays negative
  model.layers[1].weights(0, 0) = 1.0;
  const auto grads = da::fcnn::backward(model, std::vector<double>{1.0},
                                        std::vector<double>{1.0});
  CHECK(grads.weights[0](0, 0) == 0.0);
  CHECK(grads.bias[0][0] == 0.0);
  // The output bias still sees a gradient.
  CHECK(grads.bias[1][0] != 0.0);
}

TEST_CASE("bias-free relu network is positively homogeneous") {
  const FcnnConfig cfg = tiny_config({4, 8, 2}, 5);
  FcnnModel model = da::fcnn::initialize_model(cfg);  // biases are zero
  RngStream rng(3, 0);
  for (double& w : model.layers.back().weights.data()) {
    w = rng.next_uniform(-0.5, 0.5);
  }
  std::vector<double> x(4);
  rng.fill_standard_normal(x);
  for (double c : {0.5, 2.0, 7.25}) {
    std::vector<double> scaled(4);
    for (int i = 0; i < 4; ++i) scaled[i] = c * x[i];
    const auto base = da::fcnn::forward(model, x);
    const auto out = da::fcnn::forward(model, scaled);
    for (int i = 0; i < 2; ++i)
      CHECK(out[i] == doctest::Approx(c * base[i]).epsilon(1e-12));
  }
}

TEST_CASE("training memorizes a constant map") {
  FcnnConfig cfg = tiny_config({3, 8, 2}, 11);
  cfg.epochs = 200;
  cfg.patience = 200;
  std::vector<TrainingPair> pairs(64);
  for (auto& p : pairs) {
    p.input = {1.0, 2.0, 3.0};
    p.target = {4.0, -1.0};
  }
  const auto result = da::fcnn::train(cfg, pairs, pairs);
  CHECK(result.model.meta.final_test_mse < 1e-6);
  // Constant features are flagged, not divided by zero.
  CHECK(result.model.input_norm.zero_variance.size() == 3);
}

TEST_CASE("training fits a linear synthetic task") {
  FcnnConfig cfg = tiny_config({3, 32, 2}, 21);
  cfg.epochs = 300;
  cfg.patience = 300;
  const std::vector<std::vector<double>> m{{1.0, -2.0, 0.5}, {0.25, 1.5, -1.0}};
  RngStream rng(2222, 0);
  auto make_pairs = [&](int count) {
    std::vector<TrainingPair> pairs(count);
    for (auto& p : pairs) {
      p.input.resize(3);
      rng.fill_standard_normal(p.input);
      p.target.resize(2);
      for (int r = 0; r < 2; ++r) {
        p.target[r] = 0.0;
        for (int c = 0; c < 3; ++c) p.target[r] += m[r][c] * p.input[c];
      }
    }
    return pairs;
  };
  const auto train_pairs = make_pairs(1000);
  const auto test_pairs = make_pairs(200);
  const auto result = da::fcnn::train(cfg, train_pairs, test_pairs);

  double target_var = 0.0;
  for (const auto& p : test_pairs)
    for (double v : p.target) target_var += v * v;
  target_var /= (2.0 * test_pairs.size());
  CHECK(result.model.meta.final_test_mse < 1e-3 * target_var);

  // Epoch-averaged training loss decreases over the first five epochs.
  for (int e = 1; e < 5; ++e) {
    CHECK(result.history[e].train_loss < result.history[e - 1].train_loss);
  }
}

TEST_CASE("training is deterministic for a fixed seed") {
  FcnnConfig cfg = tiny_config({2, 6, 1}, 31);
  cfg.epochs = 20;
  RngStream rng(41, 0);
  std::vector<TrainingPair> pairs(40);
  for (auto& p : pairs) {
    p.input.resize(2);
    rng.fill_standard_normal(p.input);
    p.target = {p.input[0] * 0.5 - p.input[1]};
  }
  const auto a = da::fcnn::train(cfg, pairs, {});
  const auto b = da::fcnn::train(cfg, pairs, {});
  REQUIRE(a.model.layers.size() == b.model.layers.size());
  for (std::size_t l = 0; l < a.model.layers.size(); ++l) {
    CHECK(a.model.layers[l].weights == b.model.layers[l].weights);
    CHECK(a.model.layers[l].bias == b.model.layers[l].bias);
  }
}

TEST_CASE("training rejects an empty dataset") {
  CHECK_THROWS_AS(da::fcnn::train(tiny_config({2, 1}), {}, {}), da::TrainingError);
}

TEST_CASE("model round-trip is bit-lossless") {
  FcnnConfig cfg = tiny_config({4, 10, 3}, 77);
  cfg.epochs = 15;
  RngStream rng(51, 0);
  std::vector<TrainingPair> pairs(50);
  for (auto& p : pairs) {
    p.input.resize(4);
    rng.fill_standard_normal(p.input);
    p.target.resize(3);
    rng.fill_standard_normal(p.target);
  }
  const auto trained = da::fcnn::train(cfg, pairs, pairs);
  const auto path = temp_file("dakit_model_roundtrip.json");
  da::fcnn::save_model(trained.model, path);
  const FcnnModel loaded = da::fcnn::load_model(path);

  for (int i = 0; i < 100; ++i) {
    std::vector<double> x(4);
    rng.fill_standard_normal(x);
    const auto a = da::fcnn::forward(trained.model, x);
    const auto b = da::fcnn::forward(loaded, x);
    CHECK(a == b);
  }
  std::filesystem::remove(path);
}

TEST_CASE("loading rejects shape mismatches and corrupt files") {
  const FcnnModel model = zero_model({3, 4, 2});
  const auto path = temp_file("dakit_model_bad.json");
  da::fcnn::save_model(model, path);

  auto mutate = [&](auto&& edit) {
    std::ifstream in(path);
    nlohmann::json doc = nlohmann::json::parse(in);
    in.close();
    edit(doc);
    std::ofstream out(path);
    out << doc.dump(1);
  };

  SUBCASE("wrong declared shape") {
    mutate([](nlohmann::json& doc) {
      doc["fcnn"]["layer_sizes"] = std::vector<int>{3, 5, 2};
    });
    CHECK_THROWS_AS(da::fcnn::load_model(path), da::ConfigError);
  }
  SUBCASE("missing normalization block") {
    mutate([](nlohmann::json& doc) { doc.erase("input_normalization"); });
    CHECK_THROWS_AS(da::fcnn::load_model(path), da::ConfigError);
  }
  SUBCASE("unknown top-level field") {
    mutate([](nlohmann::json& doc) { doc["extra"] = 1; });
    CHECK_THROWS_AS(da::fcnn::load_model(path), da::ConfigError);
  }
  SUBCASE("unsupported version") {
    mutate([](nlohmann::json& doc) { doc["version"] = 99; });
    CHECK_THROWS_AS(da::fcnn::load_model(path), da::ConfigError);
  }
  SUBCASE("not json at all") {
    std::ofstream out(path);
    out << "definitely not json";
    out.close();
    CHECK_THROWS_AS(da::fcnn::load_model(path), da::ConfigError);
  }
  std::filesystem::remove(path);
}
