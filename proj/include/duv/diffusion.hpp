#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "duv/tensor.hpp"

namespace duv {

enum class ScheduleKind { kLinear, kCosine };

struct DiffusionConfig {
    int steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    ScheduleKind schedule_kind = ScheduleKind::kLinear;

    void validate() const;
};

// Per-step noise coefficients. Immutable after construction.
struct NoiseSchedule {
    int steps = 0;
    std::vector<double> beta;       // beta_t in (0,1)
    std::vector<double> alpha_bar;  // running product of (1 - beta)
    std::vector<double> sigma;      // sqrt(beta_t)

    void dump_csv(const std::string& path) const;
};

NoiseSchedule make_schedule(const DiffusionConfig& cfg);
NoiseSchedule make_schedule_from_betas(std::vector<double> beta);

// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Tensor forward_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

// Posterior-mean step: (xt - beta_t / sqrt(1 - abar_t) eps_pred) / sqrt(1 - beta_t)
// plus sigma_t z. z must be all-zero when t == 0.
Tensor reverse_step(const Tensor& xt, int t, const Tensor& eps_pred, const NoiseSchedule& sched,
                    const Tensor& z);

// Per-step weight applied to the squared error by the variational term
// under fixed sigma_t: beta_t / (2 sigma_t^2 (1 - beta_t) (1 - abar_t)).
double vlb_step_weight(const NoiseSchedule& sched, int t);

// Graph-side hybrid objective: mse(eps_pred, eps) * (1 + weight_vlb * vlb_w(t)).
Graph::NodeId hybrid_loss(Graph& g, Graph::NodeId eps_pred, Graph::NodeId eps, double weight_vlb,
                          double vlb_weight_t);

// Plain-tensor evaluation of the same objective (no graph).
double hybrid_loss_value(const Tensor& eps, const Tensor& eps_pred, double weight_vlb,
                         double vlb_weight_t);

}  // namespace duv
