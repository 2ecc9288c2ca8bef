#include <doctest.h>

#include <cmath>
#include <vector>

#include "dakit/enkf.hpp"

using da::dynamics::ModelId;
using da::dynamics::ModelSpec;
using da::dynamics::StateVector;
using da::enkf::Ensemble;
using da::enkf::EnsembleKind;
using da::enkf::ObservationModel;
using da::enkf::TruthTrajectory;
using da::numerics::Matrix;
using da::numerics::RngStream;
using da::numerics::StreamFactory;

namespace {

ModelSpec l63_spec() {
  ModelSpec spec;
  spec.id = ModelId::lorenz63;
  spec.dim = 3;
  spec.dt = 0.01;
  spec.steps_per_window = 8;
  return spec;
}

ModelSpec l96_spec() {
  ModelSpec spec;
  spec.id = ModelId::lorenz96;
  spec.dim = 10;
  spec.dt = 0.01;
  spec.steps_per_window = 5;
  return spec;
}

// Truth on the attractor: spin up from a fixed point offset, then record.
TruthTrajectory make_truth(const ModelSpec& spec, int windows) {
  const auto model = da::dynamics::make_model(spec);
  StateVector state;
  state.components.assign(spec.dim, 1.0);
  if (spec.id == ModelId::lorenz96) {
    for (int i = 0; i < spec.dim; ++i) state.components[i] = 8.0 + 0.1 * (i % 3);
  } else {
    state.components = {1.0, 1.0, 20.0};
  }
  for (int s = 0; s < 300; ++s) state = da::dynamics::step_euler(state, *model, spec.dt);
  state.time_index = 0;

  TruthTrajectory truth;
  truth.spec = spec;
  truth.seed = 7;
  truth.index = 0;
  truth.states.push_back(state);
  for (int j = 1; j <= windows; ++j) {
    truth.states.push_back(da::dynamics::propagate_window(
        truth.states.back(), *model, spec.dt, spec.steps_per_window));
  }
  return truth;
}

Ensemble random_ensemble(int dim, int n, EnsembleKind kind, std::uint64_t seed,
                         double spread = 1.0, double center = 0.0) {
  RngStream rng(seed, 900);
  Ensemble ens;
  ens.members = Matrix(dim, n);
  ens.kind = kind;
  ens.time_index = 1;
  for (int i = 0; i < dim; ++i)
    for (int c = 0; c < n; ++c)
      ens.members(i, c) = center + spread * rng.next_uniform(-1.0, 1.0);
  return ens;
}

}  // namespace

TEST_CASE("observation model validation") {
  ObservationModel obs;
  obs.observed_indices = {0, 2, 2};
  obs.noise_magnitude = 1.0;
  CHECK_THROWS_AS(obs.validate(5), da::ConfigError);
  obs.observed_indices = {0, 7};
  CHECK_THROWS_AS(obs.validate(5), da::ConfigError);
  obs.observed_indices = {0, 4};
  obs.noise_magnitude = -1.0;
  CHECK_THROWS_AS(obs.validate(5), da::ConfigError);
  obs.noise_magnitude = 0.0;
  CHECK_NOTHROW(obs.validate(5));
}

TEST_CASE("measurement mean with zero noise is the exact projection") {
  const auto truth = make_truth(l96_spec(), 1);
  ObservationModel obs;
  obs.observed_indices = {0, 2, 4, 6, 8};
  obs.noise_magnitude = 0.0;
  RngStream rng(1, 0);
  const auto mean = da::enkf::synthesize_measurement_mean(truth.states[0], obs, rng);
  REQUIRE(mean.size() == 5);
  for (int k = 0; k < 5; ++k) CHECK(mean[k] == truth.states[0].components[2 * k]);
}

TEST_CASE("measurement mean regression for a fixed seed") {
  StateVector truth_state{{1.0, 2.0, 3.0}, 0};
  ObservationModel obs;
  obs.observed_indices = {0, 1, 2};
  obs.noise_magnitude = 2.0;
  RngStream rng(1234, 0);
  const auto mean = da::enkf::synthesize_measurement_mean(truth_state, obs, rng);
  // Frozen from the documented generator and transform order.
  CHECK(mean[0] == doctest::Approx(1.790897446403755).epsilon(1e-12));
  CHECK(mean[1] == doctest::Approx(-0.65641723469051838).epsilon(1e-12));
  CHECK(mean[2] == doctest::Approx(3.6046988711047283).epsilon(1e-12));
}

TEST_CASE("measurement ensemble with zero noise collapses onto the mean") {
  ObservationModel obs;
  obs.observed_indices = {0, 1};
  obs.noise_magnitude = 0.0;
  const std::vector<double> mean{4.0, -1.0};
  const StreamFactory factory(3);
  auto streams = da::enkf::make_member_streams(factory, 0, 5);
  const Ensemble ens =
      da::enkf::synthesize_measurement_ensemble(mean, obs, 5, streams, 1);
  CHECK(ens.kind == EnsembleKind::measurement);
  for (int n = 0; n < 5; ++n) {
    CHECK(ens.members(0, n) == 4.0);
    CHECK(ens.members(1, n) == -1.0);
  }
}

TEST_CASE("measurement ensemble sample mean concentrates around the mean") {
  ObservationModel obs;
  obs.observed_indices = {0, 1, 2};
  obs.noise_magnitude = 2.0;
  const std::vector<double> mean{1.0, 2.0, 3.0};
  const StreamFactory factory(11);
  const int n = 100;
  auto streams = da::enkf::make_member_streams(factory, 0, n);
  const Ensemble ens =
      da::enkf::synthesize_measurement_ensemble(mean, obs, n, streams, 1);
  const auto sample_mean = ens.mean();
  const double bound = 3.0 * std::sqrt(2.0 / n);
  for (int k = 0; k < 3; ++k) CHECK(std::abs(sample_mean[k] - mean[k]) < bound);
}

TEST_CASE("growing the ensemble leaves existing members unchanged") {
  ObservationModel obs;
  obs.observed_indices = {0, 1, 2};
  obs.noise_magnitude = 1.5;
  const std::vector<double> mean{0.5, -0.25, 8.0};
  const StreamFactory factory(21);
  auto streams7 = da::enkf::make_member_streams(factory, 4, 7);
  auto streams100 = da::enkf::make_member_streams(factory, 4, 100);
  const Ensemble small =
      da::enkf::synthesize_measurement_ensemble(mean, obs, 7, streams7, 1);
  const Ensemble large =
      da::enkf::synthesize_measurement_ensemble(mean, obs, 100, streams100, 1);
  for (int n = 0; n < 7; ++n)
    for (int k = 0; k < 3; ++k) CHECK(small.members(k, n) == large.members(k, n));
}

TEST_CASE("forecast keeps fixed-point members fixed and advances time") {
  const auto spec = l96_spec();
  const auto model = da::dynamics::make_model(spec);
  Ensemble ens;
  ens.members = Matrix(10, 4);
  for (int i = 0; i < 10; ++i)
    for (int n = 0; n < 4; ++n) ens.members(i, n) = 8.0;
  ens.kind = EnsembleKind::analysis;
  ens.time_index = 3;
  const Ensemble out = da::enkf::forecast(ens, *model, spec);
  CHECK(out.kind == EnsembleKind::forecast);
  CHECK(out.time_index == 4);
  CHECK(out.members == ens.members);
}

TEST_CASE("forecast is identical for 1 worker and 8 workers") {
  const auto spec = l63_spec();
  const auto model = da::dynamics::make_model(spec);
  const Ensemble ens = random_ensemble(3, 32, EnsembleKind::analysis, 5, 5.0, 10.0);
  const Ensemble serial = da::enkf::forecast(ens, *model, spec, 1);
  const Ensemble parallel = da::enkf::forecast(ens, *model, spec, 8);
  CHECK(serial.members == parallel.members);
}

TEST_CASE("single-member forecast equals window propagation") {
  const auto spec = l63_spec();
  const auto model = da::dynamics::make_model(spec);
  Ensemble ens;
  ens.members = Matrix(3, 1);
  ens.members(0, 0) = 1.0;
  ens.members(1, 0) = 2.0;
  ens.members(2, 0) = 25.0;
  ens.kind = EnsembleKind::analysis;
  ens.time_index = 0;
  const Ensemble out = da::enkf::forecast(ens, *model, spec);
  const StateVector direct = da::dynamics::propagate_window(
      StateVector{{1.0, 2.0, 25.0}, 0}, *model, spec.dt, spec.steps_per_window);
  for (int i = 0; i < 3; ++i) CHECK(out.members(i, 0) == direct.components[i]);
}

TEST_CASE("scalar kalman gain is one half") {
  ObservationModel obs;
  obs.observed_indices = {0};
  Matrix p(1, 1), r(1, 1);
  p(0, 0) = 1.0;
  r(0, 0) = 1.0;
  const Matrix k = da::enkf::kalman_gain(p, r, obs);
  CHECK(k(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("no confidence in observations drives the gain to zero") {
  ObservationModel obs;
  obs.observed_indices = {0, 1, 2};
  const Matrix p = Matrix::identity(3);
  Matrix r = Matrix::identity(3);
  for (int i = 0; i < 3; ++i) r(i, i) = 1e12;
  const Matrix k = da::enkf::kalman_gain(p, r, obs);
  CHECK(da::numerics::max_abs(k) <= 1e-10);
}

TEST_CASE("gain satisfies the defining identity for fully observed states") {
  RngStream rng(77, 0);
  ObservationModel obs;
  obs.observed_indices = {0, 1, 2};
  auto random_spd = [&](double diag) {
    Matrix m(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m(i, j) = rng.next_uniform(-1.0, 1.0);
    Matrix spd = da::numerics::multiply(da::numerics::transpose(m), m);
    for (int i = 0; i < 3; ++i) spd(i, i) += diag;
    return spd;
  };
  const Matrix p = random_spd(0.5);
  const Matrix r = random_spd(0.5);
  const Matrix k = da::enkf::kalman_gain(p, r, obs);
  Matrix sum(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) sum(i, j) = p(i, j) + r(i, j);
  const Matrix identity_check = da::numerics::multiply(k, sum);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(identity_check(i, j) == doctest::Approx(p(i, j)).epsilon(1e-8));
}

TEST_CASE("zero innovation leaves the forecast unchanged exactly") {
  ObservationModel obs;
  obs.observed_indices = {0, 2};
  obs.noise_magnitude = 1.0;
  const Ensemble forecast_ens = random_ensemble(3, 9, EnsembleKind::forecast, 13);
  Ensemble measurement_ens;
  measurement_ens.members = obs.project_columns(forecast_ens.members);
  measurement_ens.kind = EnsembleKind::measurement;
  measurement_ens.time_index = forecast_ens.time_index;
  const Ensemble analysis = da::enkf::analyze(forecast_ens, measurement_ens, obs);
  CHECK(analysis.members == forecast_ens.members);
  CHECK(analysis.kind == EnsembleKind::analysis);
}

TEST_CASE("scalar analysis applies half the innovation") {
  ObservationModel obs;
  obs.observed_indices = {0};
  obs.noise_magnitude = 1.0;
  const double h = 1.0 / std::sqrt(2.0);  // sample variance exactly 1
  Ensemble forecast_ens, measurement_ens;
  forecast_ens.members = Matrix(1, 2);
  forecast_ens.members(0, 0) = 2.0 - h;
  forecast_ens.members(0, 1) = 2.0 + h;
  forecast_ens.kind = EnsembleKind::forecast;
  forecast_ens.time_index = 1;
  measurement_ens.members = Matrix(1, 2);
  measurement_ens.members(0, 0) = 3.0 - h;
  measurement_ens.members(0, 1) = 3.0 + h;
  measurement_ens.kind = EnsembleKind::measurement;
  measurement_ens.time_index = 1;

  const Ensemble analysis = da::enkf::analyze(forecast_ens, measurement_ens, obs);
  for (int n = 0; n < 2; ++n) {
    const double f = forecast_ens.members(0, n);
    const double m = measurement_ens.members(0, n);
    CHECK(analysis.members(0, n) == doctest::Approx(f + 0.5 * (m - f)).epsilon(1e-12));
  }
}

TEST_CASE("scalar analysis variance never exceeds forecast variance") {
  // With matched sample variances the bound is deterministic; random
  // ensembles are rescaled onto that case.
  ObservationModel obs;
  obs.observed_indices = {0};
  obs.noise_magnitude = 1.0;
  auto sample_variance = [](const Ensemble& e) {
    const double mean = e.mean()[0];
    double acc = 0.0;
    for (int n = 0; n < e.size(); ++n) {
      acc += (e.members(0, n) - mean) * (e.members(0, n) - mean);
    }
    return acc / (e.size() - 1);
  };
  auto normalize_variance = [&](Ensemble e) {
    const double mean = e.mean()[0];
    const double scale = 1.0 / std::sqrt(sample_variance(e));
    for (int n = 0; n < e.size(); ++n) {
      e.members(0, n) = mean + scale * (e.members(0, n) - mean);
    }
    return e;
  };
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Ensemble f =
        normalize_variance(random_ensemble(1, 8, EnsembleKind::forecast, seed, 2.0));
    const Ensemble m = normalize_variance(
        random_ensemble(1, 8, EnsembleKind::measurement, seed + 100, 2.0));
    const Ensemble a = da::enkf::analyze(f, m, obs);
    CHECK(sample_variance(a) <= sample_variance(f) * (1.0 + 1e-12));
  }
}

TEST_CASE("observation-trust limit: analysis approaches the measurements") {
  ObservationModel obs;
  obs.observed_indices = {0, 1, 2};
  const Ensemble forecast_ens = random_ensemble(3, 12, EnsembleKind::forecast, 3, 1.0);
  double previous = 1e300;
  for (double a : {1e-2, 1e-4, 1e-6}) {
    obs.noise_magnitude = a;
    const StreamFactory factory(55);
    auto streams = da::enkf::make_member_streams(factory, 0, 12);
    const std::vector<double> mean{0.2, -0.3, 0.4};
    const Ensemble measurement_ens =
        da::enkf::synthesize_measurement_ensemble(mean, obs, 12, streams, 1);
    const Ensemble analysis = da::enkf::analyze(forecast_ens, measurement_ens, obs);
    double diff = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int n = 0; n < 12; ++n)
        diff = std::max(diff, std::abs(analysis.members(i, n) -
                                       measurement_ens.members(i, n)));
    CHECK(diff < previous);
    previous = diff;
  }
  CHECK(previous < 1e-4);
}

TEST_CASE("forecast-trust limit: huge noise returns the forecast") {
  ObservationModel obs;
  obs.observed_indices = {0, 1, 2};
  obs.noise_magnitude = 1.0;
  const Ensemble forecast_ens =
      random_ensemble(3, 12, EnsembleKind::forecast, 4, 1.0, 5.0);
  Ensemble measurement_ens = random_ensemble(3, 12, EnsembleKind::measurement, 9, 1.0);
  Matrix big_r = Matrix::identity(3);
  for (int i = 0; i < 3; ++i) big_r(i, i) = 1e12;
  const Ensemble analysis =
      da::enkf::analyze(forecast_ens, measurement_ens, obs, &big_r);
  for (int i = 0; i < 3; ++i) {
    for (int n = 0; n < 12; ++n) {
      const double f = forecast_ens.members(i, n);
      CHECK(std::abs(analysis.members(i, n) - f) <= 1e-6 * (1.0 + std::abs(f)));
    }
  }
}

TEST_CASE("permuting members permutes the analysis") {
  ObservationModel obs;
  obs.observed_indices = {0, 1};
  obs.noise_magnitude = 0.5;
  const int n = 6;
  const Ensemble f = random_ensemble(3, n, EnsembleKind::forecast, 17);
  const Ensemble m = random_ensemble(2, n, EnsembleKind::measurement, 18);
  const Ensemble base = da::enkf::analyze(f, m, obs);

  const std::vector<int> perm{3, 0, 5, 1, 4, 2};
  Ensemble fp = f, mp = m;
  for (int c = 0; c < n; ++c) {
    fp.members.set_column(c, f.members.column(perm[c]));
    mp.members.set_column(c, m.members.column(perm[c]));
  }
  const Ensemble permuted = da::enkf::analyze(fp, mp, obs);
  for (int c = 0; c < n; ++c) {
    for (int i = 0; i < 3; ++i) {
      CHECK(permuted.members(i, c) ==
            doctest::Approx(base.members(i, perm[c])).epsilon(1e-9));
    }
  }
}

TEST_CASE("noise-free fully observed run tracks the truth") {
  const auto spec = l63_spec();
  const auto truth = make_truth(spec, 6);
  ObservationModel obs;
  obs.observed_indices = {0, 1, 2};
  obs.noise_magnitude = 0.0;
  const StreamFactory factory(truth.seed);
  RngStream obs_rng = factory.observation_mean(0);
  const auto obs_seq = da::enkf::synthesize_observation_sequence(truth, obs, obs_rng);

  for (int n : {2, 5, 50}) {
    auto streams = da::enkf::make_member_streams(factory, 0, n);
    const auto result = da::enkf::enkf_run(truth, n, obs, obs_seq, streams);
    REQUIRE(result.steps.size() == 7);
    for (const auto& step : result.steps) {
      for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(step.analysis_mean[i] -
                       truth.states[step.j].components[i]) < 1e-6);
      }
    }
  }
}

TEST_CASE("zero-window run returns only the initial analysis") {
  const auto spec = l63_spec();
  const auto truth = make_truth(spec, 0);
  ObservationModel obs;
  obs.observed_indices = {0, 1, 2};
  obs.noise_magnitude = 2.0;
  const StreamFactory factory(5);
  RngStream obs_rng = factory.observation_mean(0);
  const auto obs_seq = da::enkf::synthesize_observation_sequence(truth, obs, obs_rng);
  auto streams = da::enkf::make_member_streams(factory, 0, 4);
  const auto result = da::enkf::enkf_run(truth, 4, obs, obs_seq, streams);
  REQUIRE(result.steps.size() == 1);
  CHECK(result.steps[0].j == 0);
  CHECK(result.steps[0].forecast_mean.empty());
  REQUIRE(result.steps[0].analysis.has_value());
  // The initial analysis is the initial measurement ensemble.
  auto fresh = da::enkf::make_member_streams(factory, 0, 4);
  const Ensemble expected =
      da::enkf::initial_ensemble(obs_seq, 4, obs.noise_magnitude, fresh);
  CHECK(result.steps[0].analysis->members == expected.members);
}

TEST_CASE("large-ensemble analysis beats the observation noise floor") {
  const auto spec = l63_spec();
  const auto truth = make_truth(spec, 80);
  ObservationModel obs;
  obs.observed_indices = {0, 1, 2};
  obs.noise_magnitude = 2.0;
  const StreamFactory factory(42);
  RngStream obs_rng = factory.observation_mean(0);
  const auto obs_seq = da::enkf::synthesize_observation_sequence(truth, obs, obs_rng);
  auto streams = da::enkf::make_member_streams(factory, 0, 100);
  da::enkf::RunOptions options;
  options.keep_members = false;
  const auto result = da::enkf::enkf_run(truth, 100, obs, obs_seq, streams, options);

  double rmse = 0.0;
  for (int j = 1; j <= 80; ++j) {
    double norm2 = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double d =
          result.steps[j].analysis_mean[i] - truth.states[j].components[i];
      norm2 += d * d;
    }
    rmse += std::sqrt(norm2 / 3.0);
  }
  rmse /= 80.0;
  CHECK(rmse < std::sqrt(2.0));
  // Frozen regression value for this seed.
  CHECK(rmse == doctest::Approx(0.45730847257521995).epsilon(1e-9));
}

TEST_CASE("identical obs sequence is consumed by both ensemble sizes") {
  const auto spec = l63_spec();
  const auto truth = make_truth(spec, 5);
  ObservationModel obs;
  obs.observed_indices = {0, 1, 2};
  obs.noise_magnitude = 2.0;
  const StreamFactory factory(9);
  RngStream obs_rng_a = factory.observation_mean(0);
  RngStream obs_rng_b = factory.observation_mean(0);
  const auto seq_a = da::enkf::synthesize_observation_sequence(truth, obs, obs_rng_a);
  const auto seq_b = da::enkf::synthesize_observation_sequence(truth, obs, obs_rng_b);
  CHECK(seq_a.initial_center == seq_b.initial_center);
  CHECK(seq_a.means == seq_b.means);

  auto streams_small = da::enkf::make_member_streams(factory, 0, 3);
  auto streams_large = da::enkf::make_member_streams(factory, 0, 30);
  const auto small = da::enkf::enkf_run(truth, 3, obs, seq_a, streams_small);
  const auto large = da::enkf::enkf_run(truth, 30, obs, seq_b, streams_large);
  for (int j = 0; j <= 5; ++j) {
    CHECK(small.steps[j].obs_mean == large.steps[j].obs_mean);
  }
}
