#pragma once

#include "bedroil/error.hpp"
#include "bedroil/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace bedroil {

/// Tolerance on probability-vector sums used by every validator.
inline constexpr double kProbabilityTolerance = 1e-9;

/// Largest S*A*S tensor the dense routines accept.
inline constexpr std::size_t kMaxTripletEntries = 1'000'000;

/// Finite discounted MDP without rewards: kernel[s][a][s'], initial
/// distribution over states and a discount in (0, 1). Storage is row-major
/// with s' fastest.
struct TabularMdp {
    int num_states = 0;
    int num_actions = 0;
    std::vector<double> kernel;
    std::vector<double> initial_dist;
    double discount = 0.9;

    std::size_t index(int s, int a, int next) const {
        return (static_cast<std::size_t>(s) * num_actions + a) * num_states + next;
    }
    double transition(int s, int a, int next) const { return kernel[index(s, a, next)]; }
    std::span<const double> row(int s, int a) const {
        return {kernel.data() + index(s, a, 0), static_cast<std::size_t>(num_states)};
    }
    std::span<double> row(int s, int a) {
        return {kernel.data() + index(s, a, 0), static_cast<std::size_t>(num_states)};
    }
    std::size_t triplet_count() const {
        return static_cast<std::size_t>(num_states) * num_actions * num_states;
    }

    bool operator==(const TabularMdp&) const = default;
};

/// Row-stochastic policy table probs[s][a].
struct StochasticPolicy {
    int num_states = 0;
    int num_actions = 0;
    std::vector<double> probs;

    StochasticPolicy() = default;
    StochasticPolicy(int states, int actions, std::vector<double> p)
        : num_states(states), num_actions(actions), probs(std::move(p)) {}

    static StochasticPolicy uniform(int states, int actions) {
        return {states, actions,
                std::vector<double>(static_cast<std::size_t>(states) * actions, 1.0 / actions)};
    }

    double prob(int s, int a) const { return probs[static_cast<std::size_t>(s) * num_actions + a]; }
    std::span<const double> row(int s) const {
        return {probs.data() + static_cast<std::size_t>(s) * num_actions,
                static_cast<std::size_t>(num_actions)};
    }

    bool operator==(const StochasticPolicy&) const = default;
};

/// Unconstrained logits; the policy is the row-wise softmax.
struct SoftmaxPolicy {
    int num_states = 0;
    int num_actions = 0;
    std::vector<double> logits;

    SoftmaxPolicy() = default;
    SoftmaxPolicy(int states, int actions)
        : num_states(states), num_actions(actions),
          logits(static_cast<std::size_t>(states) * actions, 0.0) {}
    SoftmaxPolicy(int states, int actions, std::vector<double> l)
        : num_states(states), num_actions(actions), logits(std::move(l)) {}

    double& logit(int s, int a) { return logits[static_cast<std::size_t>(s) * num_actions + a]; }
    double logit(int s, int a) const { return logits[static_cast<std::size_t>(s) * num_actions + a]; }

    StochasticPolicy materialize() const {
        StochasticPolicy out{num_states, num_actions, std::vector<double>(logits.size())};
        for (int s = 0; s < num_states; ++s) {
            const double* in = logits.data() + static_cast<std::size_t>(s) * num_actions;
            double* p = out.probs.data() + static_cast<std::size_t>(s) * num_actions;
            const double top = *std::max_element(in, in + num_actions);
            double z = 0.0;
            for (int a = 0; a < num_actions; ++a) z += (p[a] = std::exp(in[a] - top));
            for (int a = 0; a < num_actions; ++a) p[a] /= z;
        }
        return out;
    }

    bool operator==(const SoftmaxPolicy&) const = default;
};

/// Discounted occupancy over (s, a, s') triplets.
struct TripletOccupancy {
    int num_states = 0;
    int num_actions = 0;
    std::vector<double> mass;

    TripletOccupancy() = default;
    TripletOccupancy(int states, int actions)
        : num_states(states), num_actions(actions),
          mass(static_cast<std::size_t>(states) * actions * states, 0.0) {}

    std::size_t index(int s, int a, int next) const {
        return (static_cast<std::size_t>(s) * num_actions + a) * num_states + next;
    }
    double at(int s, int a, int next) const { return mass[index(s, a, next)]; }
    double& at(int s, int a, int next) { return mass[index(s, a, next)]; }

    double total() const { return std::accumulate(mass.begin(), mass.end(), 0.0); }

    /// d(s, a) = sum over s'.
    std::vector<double> state_action_marginal() const {
        std::vector<double> out(static_cast<std::size_t>(num_states) * num_actions, 0.0);
        for (int s = 0; s < num_states; ++s)
            for (int a = 0; a < num_actions; ++a)
                for (int n = 0; n < num_states; ++n)
                    out[static_cast<std::size_t>(s) * num_actions + a] += at(s, a, n);
        return out;
    }

    /// d(s) = sum over (a, s').
    std::vector<double> state_marginal() const {
        std::vector<double> out(num_states, 0.0);
        for (int s = 0; s < num_states; ++s)
            for (int a = 0; a < num_actions; ++a)
                for (int n = 0; n < num_states; ++n) out[s] += at(s, a, n);
        return out;
    }

    /// Inflow into each state: sum over (s~, a~) of d(s~, a~, s).
    std::vector<double> inflow() const {
        std::vector<double> out(num_states, 0.0);
        for (int s = 0; s < num_states; ++s)
            for (int a = 0; a < num_actions; ++a)
                for (int n = 0; n < num_states; ++n) out[n] += at(s, a, n);
        return out;
    }
};

namespace detail {

inline void check_probability_vector(std::span<const double> p, const std::string& what) {
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!(p[i] >= 0.0) || !std::isfinite(p[i])) {
            std::ostringstream msg;
            msg << what << ": entry " << i << " is " << p[i] << " (must be finite and >= 0)";
            throw ModelError(msg.str());
        }
        sum += p[i];
    }
    if (std::abs(sum - 1.0) > kProbabilityTolerance) {
        std::ostringstream msg;
        msg.precision(17);
        msg << what << ": sums to " << sum << " (expected 1)";
        throw ModelError(msg.str());
    }
}

} // namespace detail

/// Throws ModelError describing the first violated invariant.
inline void validate_mdp(const TabularMdp& mdp) {
    if (mdp.num_states <= 0 || mdp.num_actions <= 0)
        throw ModelError("num_states and num_actions must be positive");
    if (!(mdp.discount > 0.0 && mdp.discount < 1.0)) {
        std::ostringstream msg;
        msg << "discount out of range: " << mdp.discount << " (must lie in (0, 1))";
        throw ModelError(msg.str());
    }
    if (mdp.kernel.size() != mdp.triplet_count())
        throw ModelError("kernel size does not match num_states * num_actions * num_states");
    if (mdp.initial_dist.size() != static_cast<std::size_t>(mdp.num_states))
        throw ModelError("initial_dist size does not match num_states");
    for (int s = 0; s < mdp.num_states; ++s)
        for (int a = 0; a < mdp.num_actions; ++a)
            detail::check_probability_vector(
                mdp.row(s, a), "kernel row (s=" + std::to_string(s) + ", a=" + std::to_string(a) + ")");
    detail::check_probability_vector(mdp.initial_dist, "initial_dist");
}

inline void validate_policy(const StochasticPolicy& policy, int num_states, int num_actions) {
    if (policy.num_states != num_states || policy.num_actions != num_actions ||
        policy.probs.size() != static_cast<std::size_t>(num_states) * num_actions)
        throw ModelError("policy shape does not match the MDP");
    for (int s = 0; s < num_states; ++s)
        detail::check_probability_vector(policy.row(s), "policy row s=" + std::to_string(s));
}

/// P_pi(s, s~) = sum_a pi(a|s) T(s~|s, a).
inline Eigen::MatrixXd policy_transition_matrix(const TabularMdp& mdp, const StochasticPolicy& policy) {
    const int S = mdp.num_states;
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(S, S);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < mdp.num_actions; ++a) {
            const double pa = policy.prob(s, a);
            if (pa == 0.0) continue;
            for (int n = 0; n < S; ++n) P(s, n) += pa * mdp.transition(s, a, n);
        }
    return P;
}

/// Normalized discounted state occupancy: the solution of
/// d = (1 - gamma) mu + gamma P_pi^T d.
inline std::vector<double> state_occupancy(const TabularMdp& mdp, const StochasticPolicy& policy) {
    validate_mdp(mdp);
    validate_policy(policy, mdp.num_states, mdp.num_actions);
    if (mdp.triplet_count() > kMaxTripletEntries)
        throw ModelError("MDP too large for dense occupancy computation");

    const int S = mdp.num_states;
    const double g = mdp.discount;
    const Eigen::MatrixXd system =
        Eigen::MatrixXd::Identity(S, S) - g * policy_transition_matrix(mdp, policy).transpose();
    Eigen::VectorXd rhs(S);
    for (int s = 0; s < S; ++s) rhs(s) = (1.0 - g) * mdp.initial_dist[s];

    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(system);
    const Eigen::VectorXd d = lu.solve(rhs);
    if (!d.allFinite()) throw NumericError("state occupancy solve produced non-finite values");

    std::vector<double> out(S);
    for (int s = 0; s < S; ++s) {
        double v = d(s);
        if (v < 0.0) {
            if (v < -1e-12) {
                std::ostringstream msg;
                msg << "state occupancy entry " << s << " is " << v << " after solve";
                throw NumericError(msg.str());
            }
            v = 0.0;
        }
        out[s] = v;
    }
    const double total = std::accumulate(out.begin(), out.end(), 0.0);
    for (double& v : out) v /= total;
    return out;
}

/// d(s, a, s') = d(s) pi(a|s) T(s'|s, a).
inline TripletOccupancy triplet_occupancy(const TabularMdp& mdp, const StochasticPolicy& policy) {
    const std::vector<double> ds = state_occupancy(mdp, policy);
    TripletOccupancy occ(mdp.num_states, mdp.num_actions);
    for (int s = 0; s < mdp.num_states; ++s)
        for (int a = 0; a < mdp.num_actions; ++a) {
            const double sa = ds[s] * policy.prob(s, a);
            for (int n = 0; n < mdp.num_states; ++n) occ.at(s, a, n) = sa * mdp.transition(s, a, n);
        }
    return occ;
}

/// Max over (s, a) of the Bellman-flow residual
/// |sum_s' d(s,a,s') - (1-gamma) mu(s) pi(a|s) - gamma pi(a|s) sum_{s~,a~} d(s~,a~,s)|.
/// Kernel-free: zero for the occupancy of `policy` under any dynamics.
inline double balance_residual(const TripletOccupancy& occ, const StochasticPolicy& policy,
                               std::span<const double> initial_dist, double discount) {
    if (policy.num_states != occ.num_states || policy.num_actions != occ.num_actions ||
        initial_dist.size() != static_cast<std::size_t>(occ.num_states))
        throw ModelError("balance_residual: shape mismatch");
    const std::vector<double> out_sa = occ.state_action_marginal();
    const std::vector<double> in = occ.inflow();
    double worst = 0.0;
    for (int s = 0; s < occ.num_states; ++s)
        for (int a = 0; a < occ.num_actions; ++a) {
            const double pa = policy.prob(s, a);
            const double r = out_sa[static_cast<std::size_t>(s) * occ.num_actions + a] -
                             (1.0 - discount) * initial_dist[s] * pa - discount * pa * in[s];
            worst = std::max(worst, std::abs(r));
        }
    return worst;
}

struct Trajectory {
    std::vector<int> states;  ///< length = actions.size() + 1
    std::vector<int> actions;

    std::size_t length() const { return actions.size(); }
    bool operator==(const Trajectory&) const = default;
};

struct FixedHorizon {
    int length = 1;
};

/// Terminate after each step with probability 1 - continuation; mean length 1/(1 - continuation).
struct GeometricHorizon {
    double continuation = 0.9;
};

using HorizonMode = std::variant<FixedHorizon, GeometricHorizon>;

inline Trajectory sample_trajectory(const TabularMdp& mdp, const StochasticPolicy& policy, Rng& rng,
                                    const HorizonMode& horizon) {
    Trajectory traj;
    int s = sample_categorical(rng, mdp.initial_dist);
    traj.states.push_back(s);
    auto step = [&] {
        const int a = sample_categorical(rng, policy.row(s));
        s = sample_categorical(rng, mdp.row(s, a));
        traj.actions.push_back(a);
        traj.states.push_back(s);
    };
    if (const auto* fixed = std::get_if<FixedHorizon>(&horizon)) {
        for (int t = 0; t < fixed->length; ++t) step();
    } else {
        const double keep = std::get<GeometricHorizon>(horizon).continuation;
        do {
            step();
        } while (uniform01(rng) < keep);
    }
    return traj;
}

/// Dirichlet(1,...,1)-distributed rows; handy for random test instances.
inline std::vector<double> random_simplex(Rng& rng, int n, double floor = 0.0) {
    std::vector<double> v(n);
    double total = 0.0;
    for (double& x : v) total += (x = -std::log(1.0 - uniform01(rng)) + floor);
    for (double& x : v) x /= total;
    return v;
}

/// Random MDP with full-support kernel rows and initial distribution.
inline TabularMdp random_mdp(Rng& rng, int num_states, int num_actions, double discount,
                             double floor = 0.0) {
    TabularMdp mdp{num_states, num_actions, std::vector<double>(
                                                static_cast<std::size_t>(num_states) * num_actions * num_states),
                   {}, discount};
    for (int s = 0; s < num_states; ++s)
        for (int a = 0; a < num_actions; ++a) {
            const auto row = random_simplex(rng, num_states, floor);
            std::copy(row.begin(), row.end(), mdp.row(s, a).begin());
        }
    mdp.initial_dist = random_simplex(rng, num_states, floor);
    return mdp;
}

inline StochasticPolicy random_policy(Rng& rng, int num_states, int num_actions, double floor = 0.0) {
    StochasticPolicy p{num_states, num_actions, {}};
    p.probs.reserve(static_cast<std::size_t>(num_states) * num_actions);
    for (int s = 0; s < num_states; ++s) {
        const auto row = random_simplex(rng, num_actions, floor);
        p.probs.insert(p.probs.end(), row.begin(), row.end());
    }
    return p;
}

} // namespace bedroil
