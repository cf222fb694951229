#pragma once

#include "bedroil/divergence.hpp"
#include "bedroil/error.hpp"
#include "bedroil/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace bedroil {

inline constexpr double kDefaultTauMin = 1e-4;
inline constexpr double kLogFloor = 1e-12;

/// Lagrange multipliers: Q(s, a) for the flow constraints, tau for the divergence ball.
struct DualState {
    int num_states = 0;
    int num_actions = 0;
    std::vector<double> q_table;
    double tau = 1.0;

    DualState() = default;
    DualState(int states, int actions, double tau0 = 1.0)
        : num_states(states), num_actions(actions),
          q_table(static_cast<std::size_t>(states) * actions, 0.0), tau(tau0) {}

    double q(int s, int a) const { return q_table[static_cast<std::size_t>(s) * num_actions + a]; }
    double& q(int s, int a) { return q_table[static_cast<std::size_t>(s) * num_actions + a]; }

    bool operator==(const DualState&) const = default;
};

enum class LossMode { exact_kl, sample_nll };

inline LossMode parse_loss_mode(std::string_view name) {
    if (name == "exact_kl") return LossMode::exact_kl;
    if (name == "sample_nll") return LossMode::sample_nll;
    throw ModelError("unknown loss mode: " + std::string(name));
}

inline std::string_view to_string(LossMode m) { return m == LossMode::exact_kl ? "exact_kl" : "sample_nll"; }

/// Which multiplier scales f(w*) in the first-stage objective. `tau` follows the
/// Lagrangian; `rho` reproduces the coefficient as printed in the two-stage form.
enum class FCoefficient { tau, rho };

/// One (s, a, s') sample of the nominal expert occupancy with its probability
/// mass. next_action is the logged successor action, or -1 when unknown.
struct WeightedTransition {
    int s = 0;
    int a = 0;
    int next = 0;
    int next_action = -1;
    double mass = 0.0;
};

/// Everything the two objectives need from the nominal data distribution,
/// either exact (occupancy-weighted triplets) or empirical (dataset transitions).
struct NominalData {
    int num_states = 0;
    int num_actions = 0;
    double discount = 0.9;
    std::vector<WeightedTransition> transitions;
    /// Mass over (s, a) for the (1 - gamma) E_{mu, pi_D}[Q] term; sums to 1.
    std::vector<double> initial_sa;
    /// Known expert: exact next-action expectations and exact_kl losses.
    std::optional<StochasticPolicy> expert;
    /// Expert or empirical action distribution, used for diagnostics.
    StochasticPolicy behavior;

    std::vector<double> initial_states() const {
        std::vector<double> out(num_states, 0.0);
        for (int s = 0; s < num_states; ++s)
            for (int a = 0; a < num_actions; ++a)
                out[s] += initial_sa[static_cast<std::size_t>(s) * num_actions + a];
        return out;
    }
};

/// Exact nominal data: every triplet with positive occupancy under (mdp, expert).
inline NominalData exact_nominal_data(const TabularMdp& mdp, const StochasticPolicy& expert) {
    const TripletOccupancy occ = triplet_occupancy(mdp, expert);
    NominalData data;
    data.num_states = mdp.num_states;
    data.num_actions = mdp.num_actions;
    data.discount = mdp.discount;
    for (int s = 0; s < mdp.num_states; ++s)
        for (int a = 0; a < mdp.num_actions; ++a)
            for (int n = 0; n < mdp.num_states; ++n)
                if (const double m = occ.at(s, a, n); m > 0.0) data.transitions.push_back({s, a, n, -1, m});
    data.initial_sa.resize(static_cast<std::size_t>(mdp.num_states) * mdp.num_actions);
    for (int s = 0; s < mdp.num_states; ++s)
        for (int a = 0; a < mdp.num_actions; ++a)
            data.initial_sa[static_cast<std::size_t>(s) * mdp.num_actions + a] =
                mdp.initial_dist[s] * expert.prob(s, a);
    data.expert = expert;
    data.behavior = expert;
    return data;
}

struct LossValue {
    double value = 0.0;
    bool clamped = false;  ///< log argument hit the floor
};

/// exact_kl: KL(pi_D(.|s) || pi(.|s)). Probabilities below the floor are
/// clamped inside the log.
inline LossValue kl_loss(std::span<const double> expert_row, std::span<const double> policy_row) {
    LossValue out;
    for (std::size_t a = 0; a < expert_row.size(); ++a) {
        const double p = expert_row[a];
        if (p <= 0.0) continue;
        double q = policy_row[a];
        if (q < kLogFloor) {
            q = kLogFloor;
            out.clamped = true;
        }
        out.value += p * (std::log(p) - std::log(q));
    }
    out.value = std::max(out.value, 0.0);
    return out;
}

/// sample_nll: -log pi(a_D | s).
inline LossValue nll_loss(int expert_action, std::span<const double> policy_row) {
    double q = policy_row[expert_action];
    LossValue out;
    if (q < kLogFloor) {
        q = kLogFloor;
        out.clamped = true;
    }
    out.value = -std::log(q);
    return out;
}

/// Per-state imitation loss. In exact_kl mode `expert` must be given; in
/// sample_nll mode `expert_action` must be a valid action.
inline LossValue imitation_loss(const StochasticPolicy& policy, LossMode mode, int s,
                                const StochasticPolicy* expert, int expert_action = -1) {
    if (mode == LossMode::exact_kl) {
        if (!expert) throw ModelError("exact_kl loss requires a known expert policy");
        return kl_loss(expert->row(s), policy.row(s));
    }
    if (expert_action < 0 || expert_action >= policy.num_actions)
        throw ModelError("sample_nll loss requires an expert action");
    return nll_loss(expert_action, policy.row(s));
}

/// Gradient of the imitation loss at s w.r.t. that state's logits:
/// pi(.|s) - target, where target is pi_D(.|s) (exact_kl) or one-hot(a_D).
inline void add_loss_gradient(std::span<double> grad_row, double scale, std::span<const double> policy_row,
                              LossMode mode, const StochasticPolicy* expert, int s, int expert_action) {
    for (std::size_t a = 0; a < grad_row.size(); ++a) {
        const double target = mode == LossMode::exact_kl ? expert->prob(s, static_cast<int>(a))
                                                         : (static_cast<int>(a) == expert_action ? 1.0 : 0.0);
        grad_row[a] += scale * (policy_row[a] - target);
    }
}

struct EScore {
    double value = 0.0;
    bool flagged = false;  ///< successor value unavailable and treated as 0
};

/// e(s,a,s') = L(s) + gamma E_{a'~pi_D(.|s')}[Q(s',a')] - Q(s,a). The next-action
/// expectation is exact when the expert is known, otherwise Q(s', next_action);
/// with neither available the successor term is 0 and the sample flagged.
inline EScore e_score(const DualState& dual, const StochasticPolicy* expert, double discount, int s, int a,
                      int next, int next_action, double loss_value) {
    EScore out;
    double next_value = 0.0;
    if (expert) {
        for (int b = 0; b < dual.num_actions; ++b) next_value += expert->prob(next, b) * dual.q(next, b);
    } else if (next_action >= 0) {
        next_value = dual.q(next, next_action);
    } else {
        out.flagged = true;
    }
    out.value = loss_value + discount * next_value - dual.q(s, a);
    return out;
}

/// Closed-form inner maximizer of w -> -tau f(w) + w e over [0, saturation_weight]:
/// clamp((f')^{-1}(e / tau), 0, cap). Below tau_min the tau = 0 limit applies:
/// cap when e > 0, else 0.
inline double optimal_weight(const FGenerator& gen, double e, double tau, double tau_min = kDefaultTauMin) {
    if (!gen.has_inverse_derivative())
        throw ModelError("non-differentiable generator: " + gen.name() + " has no closed-form weight");
    const double cap = gen.saturation_weight();
    if (tau < tau_min) return e > 0.0 ? cap : 0.0;
    const double w = gen.inverse_derivative(e / tau);
    if (std::isnan(w)) throw NumericError("optimal_weight: NaN score");
    return std::clamp(w, 0.0, cap);
}

struct ObjectiveOptions {
    LossMode loss_mode = LossMode::exact_kl;
    FCoefficient f_coefficient = FCoefficient::tau;
    double tau_min = kDefaultTauMin;
};

/// Loss per (s, a): exact_kl repeats L(s) across actions; sample_nll is -log pi(a|s).
inline std::vector<double> loss_table(const StochasticPolicy& policy, LossMode mode, const StochasticPolicy* expert,
                                      int* clamped_count = nullptr) {
    const int S = policy.num_states, A = policy.num_actions;
    std::vector<double> out(static_cast<std::size_t>(S) * A);
    for (int s = 0; s < S; ++s) {
        if (mode == LossMode::exact_kl) {
            const LossValue l = imitation_loss(policy, mode, s, expert);
            if (l.clamped && clamped_count) ++*clamped_count;
            std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(s) * A, A, l.value);
        } else {
            for (int a = 0; a < A; ++a) {
                const LossValue l = nll_loss(a, policy.row(s));
                if (l.clamped && clamped_count) ++*clamped_count;
                out[static_cast<std::size_t>(s) * A + a] = l.value;
            }
        }
    }
    return out;
}

struct DualEvaluation {
    double value = 0.0;
    std::vector<double> grad_q;
    double grad_tau = 0.0;
    std::vector<double> weights;  ///< w* per transition, same order as NominalData::transitions
    double mean_weight = 0.0;     ///< mass-weighted
    double max_weight = 0.0;
    int flagged = 0;
};

/// First-stage objective
///   (1-gamma) E_{mu,pi_D}[Q] + rho tau + E_{d°}[-c f(w*) + w* e]
/// with c = tau (or rho under FCoefficient::rho), plus its gradient in (Q, tau)
/// holding w* fixed. Since w* is the exact inner maximizer, this is the gradient
/// of the objective with w* re-solved.
inline DualEvaluation dual_objective(const DualState& dual, const StochasticPolicy& policy, const NominalData& data,
                                     const FGenerator& gen, double rho, const ObjectiveOptions& opt = {},
                                     std::span<const WeightedTransition> batch = {}) {
    const auto transitions = batch.empty() ? std::span<const WeightedTransition>(data.transitions) : batch;
    if (transitions.empty()) throw ModelError("dual_objective: empty data");
    const StochasticPolicy* expert = data.expert ? &*data.expert : nullptr;
    const std::vector<double> losses = loss_table(policy, opt.loss_mode, expert);
    const int A = data.num_actions;
    const double g = data.discount;
    const double c = opt.f_coefficient == FCoefficient::tau ? dual.tau : rho;

    DualEvaluation out;
    out.grad_q.assign(dual.q_table.size(), 0.0);
    out.weights.resize(transitions.size());

    for (std::size_t i = 0; i < data.initial_sa.size(); ++i) {
        out.value += (1.0 - g) * data.initial_sa[i] * dual.q_table[i];
        out.grad_q[i] += (1.0 - g) * data.initial_sa[i];
    }
    out.value += rho * dual.tau;
    out.grad_tau = rho;

    double total_mass = 0.0;
    for (std::size_t i = 0; i < transitions.size(); ++i) {
        const WeightedTransition& t = transitions[i];
        const double loss = losses[static_cast<std::size_t>(t.s) * A + t.a];
        const EScore e = e_score(dual, expert, g, t.s, t.a, t.next, t.next_action, loss);
        if (e.flagged) ++out.flagged;
        const double w = optimal_weight(gen, e.value, dual.tau, opt.tau_min);
        const double fw = gen.eval(w);
        out.weights[i] = w;
        out.value += t.mass * (-c * fw + w * e.value);
        if (opt.f_coefficient == FCoefficient::tau) out.grad_tau -= t.mass * fw;

        const double mw = t.mass * w;
        out.grad_q[static_cast<std::size_t>(t.s) * A + t.a] -= mw;
        if (expert) {
            for (int b = 0; b < A; ++b)
                out.grad_q[static_cast<std::size_t>(t.next) * A + b] += g * mw * expert->prob(t.next, b);
        } else if (t.next_action >= 0) {
            out.grad_q[static_cast<std::size_t>(t.next) * A + t.next_action] += g * mw;
        }
        total_mass += t.mass;
        out.mean_weight += mw;
        out.max_weight = std::max(out.max_weight, w);
    }
    out.mean_weight /= total_mass;
    return out;
}

/// w* for every transition, in NominalData order.
inline std::vector<double> optimal_weights(const DualState& dual, const StochasticPolicy& policy,
                                           const NominalData& data, const FGenerator& gen,
                                           const ObjectiveOptions& opt = {}) {
    const StochasticPolicy* expert = data.expert ? &*data.expert : nullptr;
    const std::vector<double> losses = loss_table(policy, opt.loss_mode, expert);
    std::vector<double> w(data.transitions.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        const WeightedTransition& t = data.transitions[i];
        const double loss = losses[static_cast<std::size_t>(t.s) * data.num_actions + t.a];
        w[i] = optimal_weight(gen, e_score(dual, expert, data.discount, t.s, t.a, t.next, t.next_action, loss).value,
                              dual.tau, opt.tau_min);
    }
    return w;
}

struct PolicyLossEvaluation {
    double value = 0.0;
    std::vector<double> grad_logits;
    int clamped = 0;
};

/// Second-stage objective E_{d°}[w L_pi(s)] with the weights held fixed, and
/// its gradient w.r.t. the softmax logits. `weights` empty means w = 1 (BC).
inline PolicyLossEvaluation weighted_policy_loss(const SoftmaxPolicy& logits, std::span<const double> weights,
                                                 const NominalData& data, LossMode mode,
                                                 std::span<const WeightedTransition> batch = {}) {
    const auto transitions = batch.empty() ? std::span<const WeightedTransition>(data.transitions) : batch;
    if (transitions.empty()) throw ModelError("weighted_policy_loss: empty data");
    if (!weights.empty() && weights.size() != transitions.size())
        throw ModelError("weighted_policy_loss: weight count does not match transitions");
    const StochasticPolicy* expert = data.expert ? &*data.expert : nullptr;
    if (mode == LossMode::exact_kl && !expert) throw ModelError("exact_kl loss requires a known expert policy");
    const StochasticPolicy policy = logits.materialize();
    const int A = data.num_actions;

    PolicyLossEvaluation out;
    out.grad_logits.assign(logits.logits.size(), 0.0);
    std::vector<double> kl_cache;
    if (mode == LossMode::exact_kl) {
        kl_cache.resize(data.num_states);
        for (int s = 0; s < data.num_states; ++s) {
            const LossValue l = kl_loss(expert->row(s), policy.row(s));
            kl_cache[s] = l.value;
            if (l.clamped) ++out.clamped;
        }
    }
    for (std::size_t i = 0; i < transitions.size(); ++i) {
        const WeightedTransition& t = transitions[i];
        const double scale = t.mass * (weights.empty() ? 1.0 : weights[i]);
        double loss;
        if (mode == LossMode::exact_kl) {
            loss = kl_cache[t.s];
        } else {
            const LossValue l = nll_loss(t.a, policy.row(t.s));
            if (l.clamped) ++out.clamped;
            loss = l.value;
        }
        out.value += scale * loss;
        add_loss_gradient(std::span<double>(out.grad_logits.data() + static_cast<std::size_t>(t.s) * A, A), scale,
                          policy.row(t.s), mode, expert, t.s, t.a);
    }
    return out;
}

/// Balance residual of the reweighted measure w ⊙ d° against the behavior policy.
inline double reweighted_balance_residual(const NominalData& data, std::span<const double> weights) {
    TripletOccupancy occ(data.num_states, data.num_actions);
    for (std::size_t i = 0; i < data.transitions.size(); ++i) {
        const WeightedTransition& t = data.transitions[i];
        occ.at(t.s, t.a, t.next) += t.mass * (weights.empty() ? 1.0 : weights[i]);
    }
    return balance_residual(occ, data.behavior, data.initial_states(), data.discount);
}

} // namespace bedroil
