#pragma once

#include "bedroil/divergence.hpp"
#include "bedroil/error.hpp"
#include "bedroil/mdp.hpp"
#include "bedroil/rng.hpp"
#include "bedroil/robust.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace bedroil {

enum class StageOrder { dual_first, policy_first };

struct SolverConfig {
    double rho = 0.1;                      ///< occupancy divergence radius
    std::string generator = "soft_tv";
    double saturation_weight = kDefaultSaturationWeight;
    double lr_dual = 5e-2;
    double lr_policy = 5e-2;
    int steps = 5000;
    int policy_updates = 1;                ///< update ratio policy : dual
    int dual_updates = 1;
    int batch_size = 0;                    ///< 0 = full data every step ("exact")
    std::uint64_t seed = 0;
    double tau_init = 1.0;
    double tau_min = kDefaultTauMin;
    LossMode loss_mode = LossMode::exact_kl;
    FCoefficient f_coefficient = FCoefficient::tau;
    StageOrder order = StageOrder::dual_first;
    int log_every = 1;
    bool force_unit_weights = false;       ///< ablation: w = 1, which is BC

    void validate() const {
        if (!(rho >= 0.0)) throw ModelError("solver: rho must be >= 0");
        if (!(lr_dual > 0.0) || !(lr_policy > 0.0)) throw ModelError("solver: learning rates must be positive");
        if (steps <= 0 || policy_updates <= 0 || dual_updates <= 0 || log_every <= 0)
            throw ModelError("solver: steps, update ratio and log_every must be positive");
        if (batch_size < 0) throw ModelError("solver: batch_size must be >= 0");
        if (!(tau_init > 0.0) || !(tau_min > 0.0)) throw ModelError("solver: tau_init and tau_min must be positive");
        if (!(saturation_weight > 0.0)) throw ModelError("solver: saturation_weight must be positive");
        parse_generator_kind(generator);
    }
};

struct HistoryRecord {
    int iteration = 0;
    double dual_objective = std::numeric_limits<double>::quiet_NaN();
    double policy_loss = 0.0;
    double tau = std::numeric_limits<double>::quiet_NaN();
    double mean_weight = 1.0;
    double max_weight = 1.0;
    double balance_residual = std::numeric_limits<double>::quiet_NaN();

    bool operator==(const HistoryRecord& o) const {
        auto same = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
        return iteration == o.iteration && same(dual_objective, o.dual_objective) &&
               same(policy_loss, o.policy_loss) && same(tau, o.tau) && same(mean_weight, o.mean_weight) &&
               same(max_weight, o.max_weight) && same(balance_residual, o.balance_residual);
    }
};

struct TrainingHistory {
    std::vector<HistoryRecord> records;
    bool operator==(const TrainingHistory&) const = default;
};

struct TrainResult {
    SoftmaxPolicy policy;
    DualState dual;
    TrainingHistory history;
};

namespace detail {

/// Draws a minibatch proportional to transition mass; each draw gets mass 1/B.
class BatchSampler {
public:
    BatchSampler(const NominalData& data, int batch_size, std::uint64_t seed)
        : data_(data), batch_size_(batch_size), rng_(make_rng(child_seed(seed, "minibatch"))) {
        cumulative_.reserve(data.transitions.size());
        double acc = 0.0;
        for (const auto& t : data.transitions) cumulative_.push_back(acc += t.mass);
    }

    std::vector<WeightedTransition> draw() {
        std::vector<WeightedTransition> batch;
        batch.reserve(batch_size_);
        const double total = cumulative_.back();
        for (int i = 0; i < batch_size_; ++i) {
            const double u = uniform01(rng_) * total;
            auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
            if (it == cumulative_.end()) --it;
            WeightedTransition t = data_.transitions[static_cast<std::size_t>(it - cumulative_.begin())];
            t.mass = 1.0 / batch_size_;
            batch.push_back(t);
        }
        return batch;
    }

private:
    const NominalData& data_;
    int batch_size_;
    Rng rng_;
    std::vector<double> cumulative_;
};

inline void check_finite(double v, const char* what, int iteration, const DualState& dual,
                         const SoftmaxPolicy& policy) {
    if (std::isfinite(v)) return;
    double q_max = 0.0, logit_max = 0.0;
    for (double q : dual.q_table) q_max = std::max(q_max, std::abs(q));
    for (double l : policy.logits) logit_max = std::max(logit_max, std::abs(l));
    std::ostringstream msg;
    msg.precision(17);
    msg << "non-finite " << what << " at iteration " << iteration << " (tau=" << dual.tau
        << ", max|Q|=" << q_max << ", max|logit|=" << logit_max << ")";
    throw NumericError(msg.str());
}

} // namespace detail

/// Alternating first-order optimization of the two-stage objective: gradient
/// steps on (Q, tau) against the dual objective, tau projected onto
/// [tau_min, inf), interleaved with gradient steps on the policy logits
/// against the weighted imitation loss with w* detached.
///
/// Initialization: Q = 0, tau = tau_init, uniform policy.
inline TrainResult train_bedroil(const NominalData& data, const SolverConfig& cfg) {
    cfg.validate();
    if (data.transitions.empty()) throw ModelError("train_bedroil: empty data");
    const FGenerator gen(parse_generator_kind(cfg.generator), cfg.saturation_weight);
    const ObjectiveOptions opt{cfg.loss_mode, cfg.f_coefficient, cfg.tau_min};

    TrainResult out{SoftmaxPolicy(data.num_states, data.num_actions),
                    DualState(data.num_states, data.num_actions, std::max(cfg.tau_init, cfg.tau_min)), {}};
    detail::BatchSampler sampler(data, std::max(cfg.batch_size, 1), cfg.seed);
    std::vector<WeightedTransition> batch;
    auto next_batch = [&]() -> std::span<const WeightedTransition> {
        if (cfg.batch_size == 0) return {};
        batch = sampler.draw();
        return batch;
    };

    for (int it = 0; it < cfg.steps; ++it) {
        HistoryRecord rec;
        rec.iteration = it;

        auto dual_step = [&] {
            const auto b = next_batch();
            const DualEvaluation ev = dual_objective(out.dual, out.policy.materialize(), data, gen, cfg.rho, opt, b);
            detail::check_finite(ev.value, "dual objective", it, out.dual, out.policy);
            rec.dual_objective = ev.value;
            for (std::size_t i = 0; i < ev.grad_q.size(); ++i) out.dual.q_table[i] -= cfg.lr_dual * ev.grad_q[i];
            out.dual.tau = std::max(cfg.tau_min, out.dual.tau - cfg.lr_dual * ev.grad_tau);
        };
        auto policy_step = [&] {
            const auto b = next_batch();
            const std::span<const WeightedTransition> used = b.empty() ? std::span(data.transitions) : b;
            std::vector<double> w;
            if (!cfg.force_unit_weights) {
                const StochasticPolicy pi = out.policy.materialize();
                const StochasticPolicy* expert = data.expert ? &*data.expert : nullptr;
                const auto losses = loss_table(pi, cfg.loss_mode, expert);
                w.resize(used.size());
                for (std::size_t i = 0; i < used.size(); ++i) {
                    const auto& t = used[i];
                    const double l = losses[static_cast<std::size_t>(t.s) * data.num_actions + t.a];
                    w[i] = optimal_weight(
                        gen, e_score(out.dual, expert, data.discount, t.s, t.a, t.next, t.next_action, l).value,
                        out.dual.tau, cfg.tau_min);
                }
            }
            const PolicyLossEvaluation pl = weighted_policy_loss(out.policy, w, data, cfg.loss_mode, b);
            detail::check_finite(pl.value, "policy loss", it, out.dual, out.policy);
            rec.policy_loss = pl.value;
            if (!w.empty()) {
                double mean = 0.0, mass = 0.0, top = 0.0;
                for (std::size_t i = 0; i < w.size(); ++i) {
                    mean += used[i].mass * w[i];
                    mass += used[i].mass;
                    top = std::max(top, w[i]);
                }
                rec.mean_weight = mean / mass;
                rec.max_weight = top;
                if (b.empty() && (it % cfg.log_every == 0 || it + 1 == cfg.steps))
                    rec.balance_residual = reweighted_balance_residual(data, w);
            }
            for (std::size_t i = 0; i < pl.grad_logits.size(); ++i)
                out.policy.logits[i] -= cfg.lr_policy * pl.grad_logits[i];
        };

        if (cfg.order == StageOrder::dual_first) {
            for (int k = 0; k < cfg.dual_updates; ++k) dual_step();
            for (int k = 0; k < cfg.policy_updates; ++k) policy_step();
        } else {
            for (int k = 0; k < cfg.policy_updates; ++k) policy_step();
            for (int k = 0; k < cfg.dual_updates; ++k) dual_step();
        }
        rec.tau = out.dual.tau;
        if (it % cfg.log_every == 0 || it + 1 == cfg.steps) out.history.records.push_back(rec);
    }
    return out;
}

/// Behavioral cloning: gradient descent on the unweighted imitation loss.
/// Shares the schedule, batching and history schema of train_bedroil.
inline TrainResult train_bc(const NominalData& data, const SolverConfig& cfg) {
    cfg.validate();
    if (data.transitions.empty()) throw ModelError("train_bc: empty data");
    TrainResult out{SoftmaxPolicy(data.num_states, data.num_actions), DualState(data.num_states, data.num_actions), {}};
    detail::BatchSampler sampler(data, std::max(cfg.batch_size, 1), cfg.seed);
    std::vector<WeightedTransition> batch;

    for (int it = 0; it < cfg.steps; ++it) {
        HistoryRecord rec;
        rec.iteration = it;
        for (int k = 0; k < cfg.policy_updates; ++k) {
            // Mirror train_bedroil's draw sequence so minibatches line up step for step.
            if (cfg.batch_size > 0 && cfg.order == StageOrder::dual_first)
                for (int d = 0; d < cfg.dual_updates && k == 0; ++d) sampler.draw();
            std::span<const WeightedTransition> b;
            if (cfg.batch_size > 0) b = batch = sampler.draw();
            const PolicyLossEvaluation pl = weighted_policy_loss(out.policy, {}, data, cfg.loss_mode, b);
            detail::check_finite(pl.value, "policy loss", it, out.dual, out.policy);
            rec.policy_loss = pl.value;
            for (std::size_t i = 0; i < pl.grad_logits.size(); ++i)
                out.policy.logits[i] -= cfg.lr_policy * pl.grad_logits[i];
        }
        if (cfg.batch_size > 0 && cfg.order == StageOrder::policy_first)
            for (int d = 0; d < cfg.dual_updates; ++d) sampler.draw();
        if (it % cfg.log_every == 0 || it + 1 == cfg.steps) out.history.records.push_back(rec);
    }
    return out;
}

/// Max over states of KL(pi_D(.|s) || pi(.|s)).
inline double max_state_kl(const StochasticPolicy& expert, const StochasticPolicy& policy) {
    double worst = 0.0;
    for (int s = 0; s < expert.num_states; ++s) worst = std::max(worst, kl_loss(expert.row(s), policy.row(s)).value);
    return worst;
}

/// Max over states of the total-variation distance between action distributions.
inline double max_state_tv(const StochasticPolicy& p, const StochasticPolicy& q) {
    double worst = 0.0;
    for (int s = 0; s < p.num_states; ++s) worst = std::max(worst, tv_distance(p.row(s), q.row(s)));
    return worst;
}

} // namespace bedroil
