#include "dakit/enkf.hpp"

#include <algorithm>
#include <string>

#include "dakit/parallel.hpp"

namespace da::enkf {

using numerics::Matrix;

void ObservationModel::validate(int state_dim) const {
  if (observed_indices.empty()) {
    throw ConfigError("observation.indices: must not be empty");
  }
  if (noise_magnitude < 0.0) {
    throw ConfigError("observation.noise_magnitude: must be >= 0");
  }
  std::vector<int> sorted = observed_indices;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConfigError("observation.indices: indices must be distinct");
  }
  for (int idx : observed_indices) {
    if (idx < 0 || idx >= state_dim) {
      throw ConfigError("observation.indices: index " + std::to_string(idx) +
                        " outside [0, " + std::to_string(state_dim) + ")");
    }
  }
}

std::vector<double> ObservationModel::project(
    std::span<const double> state) const {
  std::vector<double> out(observed_indices.size());
  for (std::size_t k = 0; k < observed_indices.size(); ++k) {
    out[k] = state[observed_indices[k]];
  }
  return out;
}

Matrix ObservationModel::project_columns(const Matrix& states) const {
  Matrix out(obs_dim(), states.cols());
  for (int k = 0; k < obs_dim(); ++k) {
    for (int n = 0; n < states.cols(); ++n) {
      out(k, n) = states(observed_indices[k], n);
    }
  }
  return out;
}

std::vector<double> synthesize_measurement_mean(
    const dynamics::StateVector& truth, const ObservationModel& obs,
    numerics::RngStream& rng) {
  const numerics::GaussianSpec spec{obs.project(truth.components),
                                    obs.noise_magnitude};
  return numerics::gaussian_sample(rng, spec, spec.mean.size());
}

ObservationSequence synthesize_observation_sequence(
    const TruthTrajectory& truth, const ObservationModel& obs,
    numerics::RngStream& rng) {
  ObservationSequence seq;
  // Full-state center at t0, then measurement-space means per window.
  const numerics::GaussianSpec init_spec{truth.states.at(0).components,
                                         obs.noise_magnitude};
  seq.initial_center =
      numerics::gaussian_sample(rng, init_spec, init_spec.mean.size());
  seq.means.reserve(truth.windows());
  for (int j = 1; j <= truth.windows(); ++j) {
    seq.means.push_back(
        synthesize_measurement_mean(truth.states[j], obs, rng));
  }
  return seq;
}

Ensemble synthesize_measurement_ensemble(
    std::span<const double> obs_mean, const ObservationModel& obs,
    int ensemble_size, std::span<numerics::RngStream> member_streams,
    std::int64_t time_index) {
  if (ensemble_size < 2) {
    throw NumericalError("measurement ensemble: degenerate ensemble (N < 2)");
  }
  if (static_cast<int>(member_streams.size()) < ensemble_size) {
    throw ConfigError("measurement ensemble: not enough member streams");
  }
  const numerics::GaussianSpec spec{
      std::vector<double>(obs_mean.begin(), obs_mean.end()),
      obs.noise_magnitude};
  Ensemble ens;
  ens.members = Matrix(static_cast<int>(obs_mean.size()), ensemble_size);
  ens.kind = EnsembleKind::measurement;
  ens.time_index = time_index;
  for (int n = 0; n < ensemble_size; ++n) {
    ens.members.set_column(
        n, numerics::gaussian_sample(member_streams[n], spec, obs_mean.size()));
  }
  return ens;
}

Ensemble forecast(const Ensemble& ens, const dynamics::Model& model,
                  const dynamics::ModelSpec& spec, int workers) {
  if (ens.dim() != model.dim()) {
    throw ConfigError("forecast: ensemble dimension does not match model");
  }
  Ensemble out;
  out.members = Matrix(ens.dim(), ens.size());
  out.kind = EnsembleKind::forecast;
  out.time_index = ens.time_index + 1;
  parallel_for(ens.size(), workers, [&](std::size_t n) {
    dynamics::StateVector member{ens.members.column(static_cast<int>(n)),
                                 ens.time_index * spec.steps_per_window};
    try {
      member = dynamics::propagate_window(member, model, spec.dt,
                                          spec.steps_per_window);
    } catch (const NumericalError& e) {
      throw NumericalError("member " + std::to_string(n) + ": " + e.what(),
                           e.time_index, static_cast<int>(n));
    }
    out.members.set_column(static_cast<int>(n), member.components);
  });
  return out;
}

Matrix kalman_gain(const Matrix& forecast_cov, const Matrix& measurement_cov,
                   const ObservationModel& obs) {
  const int d = forecast_cov.rows();
  const int m = obs.obs_dim();
  if (measurement_cov.rows() != m || measurement_cov.cols() != m) {
    throw ConfigError("kalman_gain: measurement covariance shape mismatch");
  }
  // B = P_f H^T: the observed columns of P_f.
  Matrix b(d, m);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < m; ++k) b(i, k) = forecast_cov(i, obs.observed_indices[k]);
  // M = H P_f H^T + R.
  Matrix innovation_cov(m, m);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c)
      innovation_cov(r, c) =
          forecast_cov(obs.observed_indices[r], obs.observed_indices[c]) +
          measurement_cov(r, c);
  // K = B M^-1 solved as M K^T = B^T (M symmetric).
  return numerics::transpose(
      numerics::spd_solve(innovation_cov, numerics::transpose(b)));
}

Ensemble analyze(const Ensemble& forecast_ens, const Ensemble& measurement_ens,
                 const ObservationModel& obs,
                 const Matrix* known_measurement_cov) {
  if (forecast_ens.size() != measurement_ens.size()) {
    throw ConfigError("analyze: forecast and measurement sizes differ");
  }
  if (forecast_ens.time_index != measurement_ens.time_index) {
    throw ConfigError("analyze: forecast and measurement time indices differ");
  }
  if (measurement_ens.dim() != obs.obs_dim()) {
    throw ConfigError("analyze: measurement dimension does not match operator");
  }
  const Matrix forecast_cov = numerics::covariance(forecast_ens.members);
  const Matrix measurement_cov = known_measurement_cov
                                     ? *known_measurement_cov
                                     : numerics::covariance(measurement_ens.members);
  const Matrix gain = kalman_gain(forecast_cov, measurement_cov, obs);

  const Matrix projected = obs.project_columns(forecast_ens.members);
  Matrix innovation(obs.obs_dim(), forecast_ens.size());
  for (int k = 0; k < obs.obs_dim(); ++k)
    for (int n = 0; n < forecast_ens.size(); ++n)
      innovation(k, n) = measurement_ens.members(k, n) - projected(k, n);

  const Matrix update = numerics::multiply(gain, innovation);
  Ensemble out;
  out.members = forecast_ens.members;
  out.kind = EnsembleKind::analysis;
  out.time_index = forecast_ens.time_index;
  for (int i = 0; i < out.dim(); ++i)
    for (int n = 0; n < out.size(); ++n) out.members(i, n) += update(i, n);
  return out;
}

Ensemble initial_ensemble(const ObservationSequence& obs_seq, int ensemble_size,
                          double noise_magnitude,
                          std::span<numerics::RngStream> member_streams) {
  if (ensemble_size < 2) {
    throw NumericalError("initial ensemble: degenerate ensemble (N < 2)");
  }
  const numerics::GaussianSpec spec{obs_seq.initial_center, noise_magnitude};
  Ensemble ens;
  ens.members =
      Matrix(static_cast<int>(obs_seq.initial_center.size()), ensemble_size);
  ens.kind = EnsembleKind::analysis;
  ens.time_index = 0;
  for (int n = 0; n < ensemble_size; ++n) {
    ens.members.set_column(n, numerics::gaussian_sample(
                                  member_streams[n], spec, spec.mean.size()));
  }
  return ens;
}

RunResult enkf_run(const TruthTrajectory& truth, int ensemble_size,
                   const ObservationModel& obs,
                   const ObservationSequence& obs_seq,
                   std::span<numerics::RngStream> member_streams,
                   const RunOptions& options) {
  if (truth.states.empty()) {
    throw ConfigError("enkf_run: truth trajectory is empty");
  }
  if (static_cast<int>(member_streams.size()) < ensemble_size) {
    throw ConfigError("enkf_run: not enough member streams");
  }
  obs.validate(truth.spec.dim);
  if (static_cast<int>(obs_seq.means.size()) < truth.windows()) {
    throw ConfigError("enkf_run: observation sequence shorter than trajectory");
  }
  const auto model = dynamics::make_model(truth.spec);

  std::optional<Matrix> known_cov;
  if (options.use_known_measurement_cov) {
    Matrix r = Matrix::identity(obs.obs_dim());
    for (int i = 0; i < r.rows(); ++i) r(i, i) = obs.noise_magnitude;
    known_cov = r;
  }

  RunResult result;
  result.steps.reserve(truth.states.size());

  Ensemble analysis = initial_ensemble(obs_seq, ensemble_size,
                                       obs.noise_magnitude, member_streams);
  {
    StepOutput step;
    step.j = 0;
    step.analysis_mean = analysis.mean();
    step.obs_mean = obs.project(obs_seq.initial_center);
    if (options.keep_members) step.analysis = analysis;
    result.steps.push_back(std::move(step));
  }

  for (int j = 1; j <= truth.windows(); ++j) {
    Ensemble forecast_ens = forecast(analysis, *model, truth.spec, options.workers);
    const std::vector<double>& obs_mean = obs_seq.means[j - 1];
    Ensemble measurement_ens = synthesize_measurement_ensemble(
        obs_mean, obs, ensemble_size, member_streams, j);
    analysis = analyze(forecast_ens, measurement_ens, obs,
                       known_cov ? &*known_cov : nullptr);

    StepOutput step;
    step.j = j;
    step.forecast_mean = forecast_ens.mean();
    step.analysis_mean = analysis.mean();
    step.obs_mean = obs_mean;
    if (options.keep_members) step.analysis = analysis;
    result.steps.push_back(std::move(step));
  }
  return result;
}

std::vector<numerics::RngStream> make_member_streams(
    const numerics::StreamFactory& factory, std::uint32_t trajectory,
    int ensemble_size) {
  std::vector<numerics::RngStream> streams;
  streams.reserve(ensemble_size);
  for (int n = 0; n < ensemble_size; ++n) {
    streams.push_back(factory.member_perturbation(trajectory, n));
  }
  return streams;
}

}  // namespace da::enkf
