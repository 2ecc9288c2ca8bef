#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dakit/dynamics.hpp"
#include "dakit/matrix.hpp"
#include "dakit/rng.hpp"

namespace da::enkf {

enum class EnsembleKind { measurement, forecast, analysis };

struct Ensemble {
  numerics::Matrix members;  // column n = member n
  EnsembleKind kind = EnsembleKind::measurement;
  std::int64_t time_index = 0;  // assimilation step j

  int dim() const { return members.rows(); }
  int size() const { return members.cols(); }
  std::vector<double> mean() const { return numerics::column_mean(members); }
};

// Linear selection operator H plus the isotropic noise magnitude A.
struct ObservationModel {
  std::vector<int> observed_indices;
  double noise_magnitude = 0.0;

  int obs_dim() const { return static_cast<int>(observed_indices.size()); }
  void validate(int state_dim) const;

  std::vector<double> project(std::span<const double> state) const;
  numerics::Matrix project_columns(const numerics::Matrix& states) const;
};

struct TruthTrajectory {
  dynamics::ModelSpec spec;
  std::uint64_t seed = 0;
  int index = 0;
  // states[j] for assimilation steps j = 0..J; consecutive entries related
  // by propagate_window bit-exactly.
  std::vector<dynamics::StateVector> states;

  int windows() const { return static_cast<int>(states.size()) - 1; }
};

// Measurement means for a whole trajectory, drawn once from a dedicated
// stream so that every run over the trajectory sees identical observations.
// At j = 0 the full-state center seeds the initial ensemble; for j >= 1 the
// means live in measurement space.
struct ObservationSequence {
  std::vector<double> initial_center;       // dimension d
  std::vector<std::vector<double>> means;   // means[j-1], dimension m
};

std::vector<double> synthesize_measurement_mean(
    const dynamics::StateVector& truth, const ObservationModel& obs,
    numerics::RngStream& rng);

ObservationSequence synthesize_observation_sequence(
    const TruthTrajectory& truth, const ObservationModel& obs,
    numerics::RngStream& rng);

// Member n = obs_mean + delta_e^(n), delta_e ~ N(0, A I_m), one stream per
// member.
Ensemble synthesize_measurement_ensemble(
    std::span<const double> obs_mean, const ObservationModel& obs,
    int ensemble_size, std::span<numerics::RngStream> member_streams,
    std::int64_t time_index);

// Propagates every member through one assimilation window.
Ensemble forecast(const Ensemble& ens, const dynamics::Model& model,
                  const dynamics::ModelSpec& spec, int workers = 1);

// K = P_f H^T (H P_f H^T + R)^-1, via an SPD solve of the transposed system.
numerics::Matrix kalman_gain(const numerics::Matrix& forecast_cov,
                             const numerics::Matrix& measurement_cov,
                             const ObservationModel& obs);

// S_a = S_f + K (S_m - H S_f). R defaults to the sample covariance of the
// measurement ensemble; pass known_measurement_cov to override.
Ensemble analyze(const Ensemble& forecast_ens, const Ensemble& measurement_ens,
                 const ObservationModel& obs,
                 const numerics::Matrix* known_measurement_cov = nullptr);

struct StepOutput {
  std::int64_t j = 0;
  std::vector<double> forecast_mean;  // empty at j = 0
  std::optional<Ensemble> analysis;   // kept when RunOptions::keep_members
  std::vector<double> analysis_mean;
  std::vector<double> obs_mean;  // H * initial_center at j = 0
};

struct RunOptions {
  bool keep_members = true;
  int workers = 1;
  bool use_known_measurement_cov = false;
};

struct RunResult {
  std::vector<StepOutput> steps;  // steps[j] for j = 0..J
};

// Initial ensemble around the measurement center at t0.
Ensemble initial_ensemble(const ObservationSequence& obs_seq, int ensemble_size,
                          double noise_magnitude,
                          std::span<numerics::RngStream> member_streams);

// initialize -> [forecast -> measure -> analyze] x J. member_streams must
// hold at least ensemble_size streams and are consumed in member order.
RunResult enkf_run(const TruthTrajectory& truth, int ensemble_size,
                   const ObservationModel& obs,
                   const ObservationSequence& obs_seq,
                   std::span<numerics::RngStream> member_streams,
                   const RunOptions& options = {});

std::vector<numerics::RngStream> make_member_streams(
    const numerics::StreamFactory& factory, std::uint32_t trajectory,
    int ensemble_size);

}  // namespace da::enkf
