#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dakit/errors.hpp"

namespace da::dynamics {

// Any component beyond this magnitude (or non-finite) counts as a blowup.
inline constexpr double kBlowupLimit = 1e6;

struct StateVector {
  std::vector<double> components;
  // Elapsed Euler steps since the trajectory origin.
  std::int64_t time_index = 0;

  int dim() const { return static_cast<int>(components.size()); }
};

enum class ModelId { lorenz63, lorenz96 };

std::string to_string(ModelId id);
ModelId model_id_from_string(const std::string& name);

struct ModelSpec {
  ModelId id = ModelId::lorenz63;
  int dim = 3;
  double dt = 0.01;
  int steps_per_window = 8;  // T_DA / dt

  // lorenz63 parameters
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;

  // lorenz96 parameters
  double forcing = 8.0;

  void validate() const;
};

// Uniform forward-model interface; new models plug in behind it.
class Model {
 public:
  virtual ~Model() = default;
  virtual int dim() const = 0;
  virtual void rhs(std::span<const double> x, std::span<double> dxdt) const = 0;
};

std::unique_ptr<Model> make_model(const ModelSpec& spec);

void rhs_lorenz63(std::span<const double> x, double sigma, double rho,
                  double beta, std::span<double> out);

// Cyclic indexing modulo the state length.
void rhs_lorenz96(std::span<const double> x, double forcing,
                  std::span<double> out);

// One forward-difference step x + dt * rhs(x); advances time_index by 1.
// Throws NumericalError (with the failing time index) on blowup.
StateVector step_euler(const StateVector& x, const Model& model, double dt);
StateVector step_euler(const StateVector& x, const ModelSpec& spec);

// steps_per_window Euler steps; exactly the fold of single steps.
StateVector propagate_window(const StateVector& x, const Model& model,
                             double dt, int steps);
StateVector propagate_window(const StateVector& x, const ModelSpec& spec);

}  // namespace da::dynamics
