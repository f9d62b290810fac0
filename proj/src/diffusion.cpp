#include "duv/diffusion.hpp"

#include <cmath>
#include <fstream>

#include "duv/errors.hpp"

namespace duv {

namespace {

constexpr double kTerminalAlphaBarMax = 1e-3;

void check_step(int t, int steps) {
    if (t < 0 || t >= steps) {
        throw ContractError("step index " + std::to_string(t) + " outside [0, " +
                            std::to_string(steps) + ")");
    }
}

}  // namespace

void DiffusionConfig::validate() const {
    if (steps < 1) throw ConfigError("diffusion steps must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw ConfigError("need 0 < beta_start <= beta_end < 1");
    }
}

NoiseSchedule make_schedule_from_betas(std::vector<double> beta) {
    NoiseSchedule s;
    s.steps = static_cast<int>(beta.size());
    if (s.steps < 1) throw ScheduleError("empty beta sequence");
    s.beta = std::move(beta);
    s.alpha_bar.resize(s.beta.size());
    s.sigma.resize(s.beta.size());
    double prod = 1.0;
    for (int t = 0; t < s.steps; ++t) {
        double b = s.beta[static_cast<std::size_t>(t)];
        if (!(b > 0.0 && b < 1.0)) throw ScheduleError("beta_t must lie in (0,1)");
        prod *= 1.0 - b;
        s.alpha_bar[static_cast<std::size_t>(t)] = prod;
        s.sigma[static_cast<std::size_t>(t)] = std::sqrt(b);
    }
    return s;
}

NoiseSchedule make_schedule(const DiffusionConfig& cfg) {
    cfg.validate();
    std::vector<double> beta(static_cast<std::size_t>(cfg.steps));
    if (cfg.schedule_kind == ScheduleKind::kLinear) {
        for (int t = 0; t < cfg.steps; ++t) {
            double frac = cfg.steps == 1 ? 0.0 : static_cast<double>(t) / (cfg.steps - 1);
            beta[static_cast<std::size_t>(t)] =
                cfg.beta_start + frac * (cfg.beta_end - cfg.beta_start);
        }
    } else {
        // cosine: beta_t from the ratio of a squared-cosine alpha_bar curve
        auto f = [&](double t) {
            double v = std::cos((t + 0.008) / 1.008 * M_PI / 2.0);
            return v * v;
        };
        double prev = 1.0;
        for (int t = 0; t < cfg.steps; ++t) {
            double cur = f(static_cast<double>(t + 1) / cfg.steps) / f(0.0);
            double b = 1.0 - cur / prev;
            beta[static_cast<std::size_t>(t)] = std::min(std::max(b, 1e-8), 0.999);
            prev = cur;
        }
    }
    NoiseSchedule s = make_schedule_from_betas(std::move(beta));
    if (s.alpha_bar.back() >= kTerminalAlphaBarMax) {
        throw ScheduleError(
            "terminal alpha_bar = " + std::to_string(s.alpha_bar.back()) +
            " >= 1e-3; the latent is not close to isotropic noise. Increase the step "
            "count or beta_end.");
    }
    return s;
}

void NoiseSchedule::dump_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open schedule dump: " + path);
    out << "t,beta,alpha_bar,sigma\n";
    out.precision(17);
    for (int t = 0; t < steps; ++t) {
        out << t << ',' << beta[static_cast<std::size_t>(t)] << ','
            << alpha_bar[static_cast<std::size_t>(t)] << ',' << sigma[static_cast<std::size_t>(t)]
            << '\n';
    }
}

Tensor forward_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    check_step(t, sched.steps);
    if (x0.shape != eps.shape) {
        throw DimensionError("forward_sample: x0 " + shape_string(x0.shape) + " vs eps " +
                             shape_string(eps.shape));
    }
    double abar = sched.alpha_bar[static_cast<std::size_t>(t)];
    double a = std::sqrt(abar);
    double b = std::sqrt(1.0 - abar);
    Tensor out = x0;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = a * x0.data[i] + b * eps.data[i];
    }
    return out;
}

Tensor reverse_step(const Tensor& xt, int t, const Tensor& eps_pred, const NoiseSchedule& sched,
                    const Tensor& z) {
    check_step(t, sched.steps);
    if (xt.shape != eps_pred.shape || xt.shape != z.shape) {
        throw DimensionError("reverse_step: xt " + shape_string(xt.shape) + ", eps_pred " +
                             shape_string(eps_pred.shape) + ", z " + shape_string(z.shape));
    }
    if (t == 0) {
        for (double v : z.data) {
            if (v != 0.0) throw ContractError("reverse_step: z must be zero at t = 0");
        }
    }
    double bt = sched.beta[static_cast<std::size_t>(t)];
    double abar = sched.alpha_bar[static_cast<std::size_t>(t)];
    double inv = 1.0 / std::sqrt(1.0 - bt);
    double coef = bt / std::sqrt(1.0 - abar);
    double sig = sched.sigma[static_cast<std::size_t>(t)];
    Tensor out = xt;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = inv * (xt.data[i] - coef * eps_pred.data[i]) + sig * z.data[i];
    }
    return out;
}

double vlb_step_weight(const NoiseSchedule& sched, int t) {
    check_step(t, sched.steps);
    double bt = sched.beta[static_cast<std::size_t>(t)];
    double abar = sched.alpha_bar[static_cast<std::size_t>(t)];
    // KL surrogate weight under sigma_t^2 = beta_t and alpha_t = 1 - beta_t
    return bt / (2.0 * (1.0 - bt) * (1.0 - abar));
}

Graph::NodeId hybrid_loss(Graph& g, Graph::NodeId eps_pred, Graph::NodeId eps, double weight_vlb,
                          double vlb_weight_t) {
    if (weight_vlb < 0.0) throw ContractError("weight_vlb must be >= 0");
    Graph::NodeId simple = g.mse(eps_pred, eps);
    if (weight_vlb == 0.0) return simple;
    return g.scale(simple, 1.0 + weight_vlb * vlb_weight_t);
}

double hybrid_loss_value(const Tensor& eps, const Tensor& eps_pred, double weight_vlb,
                         double vlb_weight_t) {
    if (weight_vlb < 0.0) throw ContractError("weight_vlb must be >= 0");
    if (eps.shape != eps_pred.shape) {
        throw DimensionError("hybrid_loss: eps " + shape_string(eps.shape) + " vs eps_pred " +
                             shape_string(eps_pred.shape));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < eps.data.size(); ++i) {
        double d = eps_pred.data[i] - eps.data[i];
        acc += d * d;
    }
    double mse = acc / static_cast<double>(eps.data.size());
    return mse * (1.0 + weight_vlb * vlb_weight_t);
}

}  // namespace duv
