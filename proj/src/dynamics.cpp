#include "dakit/dynamics.hpp"

#include <cmath>
#include <string>

namespace da::dynamics {

std::string to_string(ModelId id) {
  return id == ModelId::lorenz63 ? "lorenz63" : "lorenz96";
}

ModelId model_id_from_string(const std::string& name) {
  if (name == "lorenz63") return ModelId::lorenz63;
  if (name == "lorenz96") return ModelId::lorenz96;
  throw ConfigError("model.id: unknown model '" + name +
                    "' (expected lorenz63 or lorenz96)");
}

void ModelSpec::validate() const {
  if (id == ModelId::lorenz63 && dim != 3) {
    throw ConfigError("model.dim: lorenz63 requires dim = 3");
  }
  if (id == ModelId::lorenz96 && dim < 4) {
    throw ConfigError("model.dim: lorenz96 requires dim >= 4");
  }
  if (!(dt > 0.0)) throw ConfigError("model.dt: must be > 0");
  if (steps_per_window < 1) {
    throw ConfigError("model.steps_per_window: must be >= 1");
  }
}

void rhs_lorenz63(std::span<const double> x, double sigma, double rho,
                  double beta, std::span<double> out) {
  out[0] = sigma * (x[1] - x[0]);
  out[1] = x[0] * (rho - x[2]) - x[1];
  out[2] = x[0] * x[1] - beta * x[2];
}

void rhs_lorenz96(std::span<const double> x, double forcing,
                  std::span<double> out) {
  const int l = static_cast<int>(x.size());
  for (int i = 0; i < l; ++i) {
    const int ip1 = (i + 1) % l;
    const int im1 = (i + l - 1) % l;
    const int im2 = (i + l - 2) % l;
    out[i] = (x[ip1] - x[im2]) * x[im1] - x[i] + forcing;
  }
}

namespace {

class Lorenz63 final : public Model {
 public:
  Lorenz63(double sigma, double rho, double beta)
      : sigma_(sigma), rho_(rho), beta_(beta) {}
  int dim() const override { return 3; }
  void rhs(std::span<const double> x, std::span<double> dxdt) const override {
    rhs_lorenz63(x, sigma_, rho_, beta_, dxdt);
  }

 private:
  double sigma_, rho_, beta_;
};

class Lorenz96 final : public Model {
 public:
  Lorenz96(int dim, double forcing) : dim_(dim), forcing_(forcing) {}
  int dim() const override { return dim_; }
  void rhs(std::span<const double> x, std::span<double> dxdt) const override {
    rhs_lorenz96(x, forcing_, dxdt);
  }

 private:
  int dim_;
  double forcing_;
};

void check_finite(std::span<const double> x, std::int64_t time_index) {
  for (double v : x) {
    if (!std::isfinite(v) || std::abs(v) > kBlowupLimit) {
      throw NumericalError("state blowup at time index " +
                               std::to_string(time_index),
                           time_index);
    }
  }
}

}  // namespace

std::unique_ptr<Model> make_model(const ModelSpec& spec) {
  spec.validate();
  if (spec.id == ModelId::lorenz63) {
    return std::make_unique<Lorenz63>(spec.sigma, spec.rho, spec.beta);
  }
  return std::make_unique<Lorenz96>(spec.dim, spec.forcing);
}

StateVector step_euler(const StateVector& x, const Model& model, double dt) {
  if (x.dim() != model.dim()) {
    throw ConfigError("step_euler: state dimension does not match model");
  }
  StateVector out = x;
  std::vector<double> dxdt(x.components.size());
  model.rhs(x.components, dxdt);
  for (std::size_t i = 0; i < dxdt.size(); ++i) {
    out.components[i] = x.components[i] + dt * dxdt[i];
  }
  out.time_index = x.time_index + 1;
  check_finite(out.components, out.time_index);
  return out;
}

StateVector step_euler(const StateVector& x, const ModelSpec& spec) {
  return step_euler(x, *make_model(spec), spec.dt);
}

StateVector propagate_window(const StateVector& x, const Model& model,
                             double dt, int steps) {
  if (x.dim() != model.dim()) {
    throw ConfigError("propagate_window: state dimension does not match model");
  }
  StateVector out = x;
  std::vector<double> dxdt(x.components.size());
  for (int s = 0; s < steps; ++s) {
    model.rhs(out.components, dxdt);
    for (std::size_t i = 0; i < dxdt.size(); ++i) {
      out.components[i] += dt * dxdt[i];
    }
    ++out.time_index;
    check_finite(out.components, out.time_index);
  }
  return out;
}

StateVector propagate_window(const StateVector& x, const ModelSpec& spec) {
  return propagate_window(x, *make_model(spec), spec.dt, spec.steps_per_window);
}

}  // namespace da::dynamics
