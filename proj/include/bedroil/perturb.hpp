#pragma once

#include "bedroil/error.hpp"
#include "bedroil/mdp.hpp"
#include "bedroil/oracle.hpp"
#include "bedroil/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <queue>
#include <string>
#include <utility>
#include <vector>

namespace bedroil {

struct Cell {
    int x = 0;
    int y = 0;
    bool operator==(const Cell&) const = default;
};

/// Grid with walls, an absorbing goal, slip noise and upward wind. y = 0 is the
/// top row; "up" decreases y.
struct GridworldSpec {
    int width = 5;
    int height = 5;
    std::vector<Cell> walls;
    Cell goal{4, 0};
    std::optional<Cell> start;     ///< unset: uniform over free non-goal cells
    double slip_prob = 0.0;        ///< motion replaced by a uniformly random direction
    std::vector<double> wind;      ///< per-column upward drift probability (empty = none)
    double wind_scale = 1.0;
    double discount = 0.9;
    std::uint64_t step_noise_seed = 0;  ///< seeds random kernel perturbations of this grid

    double wind_at(int x) const { return wind.empty() ? 0.0 : wind_scale * wind[static_cast<std::size_t>(x)]; }
    bool is_wall(Cell c) const { return std::find(walls.begin(), walls.end(), c) != walls.end(); }
    bool inside(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height; }

    void validate() const {
        if (width <= 0 || height <= 0) throw ModelError("gridworld: width and height must be positive");
        if (!inside(goal)) throw ModelError("gridworld: goal outside the grid");
        if (is_wall(goal)) throw ModelError("gridworld: goal is a wall");
        for (const Cell& w : walls)
            if (!inside(w)) throw ModelError("gridworld: wall outside the grid");
        if (start && (!inside(*start) || is_wall(*start))) throw ModelError("gridworld: invalid start cell");
        if (!(slip_prob >= 0.0 && slip_prob < 1.0)) throw ModelError("gridworld: slip_prob must be in [0, 1)");
        if (!wind.empty() && static_cast<int>(wind.size()) != width)
            throw ModelError("gridworld: wind needs one entry per column");
        if (!(wind_scale >= 0.0)) throw ModelError("gridworld: wind_scale must be >= 0");
        double max_wind = 0.0;
        for (int x = 0; x < width && !wind.empty(); ++x) {
            if (!(wind[x] >= 0.0)) throw ModelError("gridworld: wind entries must be >= 0");
            max_wind = std::max(max_wind, wind_at(x));
        }
        if (slip_prob + max_wind > 1.0 + 1e-12)
            throw ModelError("gridworld: slip_prob + max wind exceeds 1");
        if (!(discount > 0.0 && discount < 1.0)) throw ModelError("gridworld: discount out of range");
    }
};

inline constexpr int kGridActions = 4;  // up, right, down, left
inline constexpr int kDx[kGridActions] = {0, 1, 0, -1};
inline constexpr int kDy[kGridActions] = {-1, 0, 1, 0};

struct Gridworld {
    TabularMdp mdp;
    std::vector<double> reward;   ///< evaluation-only reward per state
    std::vector<Cell> cells;      ///< state index -> cell
    int goal_state = 0;
    std::vector<std::string> warnings;

    int state_of(Cell c) const {
        for (std::size_t i = 0; i < cells.size(); ++i)
            if (cells[i] == c) return static_cast<int>(i);
        return -1;
    }
};

/// States are the free cells in row-major order. Blocked moves stay put; the
/// goal is absorbing and pays reward 1 per step spent there.
inline Gridworld build_gridworld(const GridworldSpec& spec) {
    spec.validate();
    Gridworld g;
    std::vector<int> index(static_cast<std::size_t>(spec.width) * spec.height, -1);
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x)
            if (!spec.is_wall({x, y})) {
                index[static_cast<std::size_t>(y) * spec.width + x] = static_cast<int>(g.cells.size());
                g.cells.push_back({x, y});
            }
    const int S = static_cast<int>(g.cells.size());
    g.goal_state = index[static_cast<std::size_t>(spec.goal.y) * spec.width + spec.goal.x];

    auto move = [&](int s, int dir) {
        const Cell c{g.cells[s].x + kDx[dir], g.cells[s].y + kDy[dir]};
        if (!spec.inside(c) || spec.is_wall(c)) return s;
        return index[static_cast<std::size_t>(c.y) * spec.width + c.x];
    };

    TabularMdp& m = g.mdp;
    m.num_states = S;
    m.num_actions = kGridActions;
    m.discount = spec.discount;
    m.kernel.assign(m.triplet_count(), 0.0);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < kGridActions; ++a) {
            auto row = m.row(s, a);
            if (s == g.goal_state) {
                row[s] = 1.0;
                continue;
            }
            const double wind = spec.wind_at(g.cells[s].x);
            row[move(s, a)] += 1.0 - spec.slip_prob - wind;
            for (int d = 0; d < kGridActions; ++d) row[move(s, d)] += spec.slip_prob / kGridActions;
            row[move(s, 0)] += wind;
        }

    m.initial_dist.assign(S, 0.0);
    if (spec.start) {
        m.initial_dist[index[static_cast<std::size_t>(spec.start->y) * spec.width + spec.start->x]] = 1.0;
    } else {
        const int n = S > 1 ? S - 1 : 1;
        for (int s = 0; s < S; ++s)
            if (s != g.goal_state || S == 1) m.initial_dist[s] = 1.0 / n;
    }

    g.reward.assign(S, 0.0);
    g.reward[g.goal_state] = 1.0;

    // Reachability of the goal from the start support.
    std::vector<char> seen(S, 0);
    std::queue<int> frontier;
    for (int s = 0; s < S; ++s)
        if (m.initial_dist[s] > 0.0) {
            seen[s] = 1;
            frontier.push(s);
        }
    while (!frontier.empty()) {
        const int s = frontier.front();
        frontier.pop();
        for (int a = 0; a < kGridActions; ++a)
            for (int n = 0; n < S; ++n)
                if (m.transition(s, a, n) > 0.0 && !seen[n]) {
                    seen[n] = 1;
                    frontier.push(n);
                }
    }
    if (!seen[g.goal_state]) g.warnings.push_back("goal is unreachable from the start distribution");
    validate_mdp(m);
    return g;
}

/// Expected discounted return sum_t gamma^t r(s_t) from the initial distribution.
inline double exact_return(const TabularMdp& mdp, const StochasticPolicy& policy, std::span<const double> reward) {
    const auto d = state_occupancy(mdp, policy);
    double v = 0.0;
    for (int s = 0; s < mdp.num_states; ++s) v += d[s] * reward[s];
    return v / (1.0 - mdp.discount);
}

struct ValueIterationResult {
    std::vector<double> q;      ///< [s][a]
    std::vector<double> value;  ///< [s]
    int sweeps = 0;
};

/// Q(s, a) = r(s) + gamma sum_s' T(s'|s, a) V(s'), V = max_a Q.
inline ValueIterationResult value_iteration(const TabularMdp& mdp, std::span<const double> reward,
                                            int max_sweeps = 10'000, double tol = 1e-10) {
    const int S = mdp.num_states, A = mdp.num_actions;
    ValueIterationResult r;
    r.q.assign(static_cast<std::size_t>(S) * A, 0.0);
    r.value.assign(S, 0.0);
    for (r.sweeps = 1; r.sweeps <= max_sweeps; ++r.sweeps) {
        double delta = 0.0;
        std::vector<double> next(S, -std::numeric_limits<double>::infinity());
        for (int s = 0; s < S; ++s)
            for (int a = 0; a < A; ++a) {
                double q = reward[s];
                const auto row = mdp.row(s, a);
                for (int n = 0; n < S; ++n) q += mdp.discount * row[n] * r.value[n];
                r.q[static_cast<std::size_t>(s) * A + a] = q;
                next[s] = std::max(next[s], q);
            }
        for (int s = 0; s < S; ++s) delta = std::max(delta, std::abs(next[s] - r.value[s]));
        r.value = std::move(next);
        if (delta < tol) return r;
    }
    throw NumericError("value iteration did not converge within " + std::to_string(max_sweeps) + " sweeps");
}

/// Softmax of the optimal Q-values at the given temperature.
inline StochasticPolicy make_expert(const TabularMdp& mdp, std::span<const double> reward, double temperature = 0.1) {
    if (!(temperature > 0.0)) throw ModelError("make_expert: temperature must be positive");
    const auto vi = value_iteration(mdp, reward);
    SoftmaxPolicy logits(mdp.num_states, mdp.num_actions);
    for (std::size_t i = 0; i < vi.q.size(); ++i) logits.logits[i] = vi.q[i] / temperature;
    return logits.materialize();
}

/// Discounted return of one rollout, truncated once the remaining discount
/// mass gamma^t / (1 - gamma) drops below 1e-12.
inline double rollout_return(const TabularMdp& mdp, const StochasticPolicy& policy, std::span<const double> reward,
                             Rng& rng) {
    const double g = mdp.discount;
    const double r_max = std::max(1.0, *std::max_element(reward.begin(), reward.end(),
                                                         [](double a, double b) { return std::abs(a) < std::abs(b); }));
    int s = sample_categorical(rng, mdp.initial_dist);
    double ret = 0.0, disc = 1.0;
    while (disc * r_max / (1.0 - g) > 1e-12) {
        ret += disc * reward[s];
        const int a = sample_categorical(rng, policy.row(s));
        s = sample_categorical(rng, mdp.row(s, a));
        disc *= g;
    }
    return ret;
}

// ---------------------------------------------------------------------------
// Sweeps.

enum class SweepParam { slip_prob, wind_scale, kernel_tv_random };

inline SweepParam parse_sweep_param(std::string_view name) {
    if (name == "slip_prob") return SweepParam::slip_prob;
    if (name == "wind_scale") return SweepParam::wind_scale;
    if (name == "kernel_tv_random") return SweepParam::kernel_tv_random;
    throw ModelError("unknown sweep parameter: " + std::string(name));
}

inline std::string_view to_string(SweepParam p) {
    switch (p) {
    case SweepParam::slip_prob: return "slip_prob";
    case SweepParam::wind_scale: return "wind_scale";
    case SweepParam::kernel_tv_random: return "kernel_tv_random";
    }
    return "";
}

struct PerturbationSweep {
    SweepParam param = SweepParam::slip_prob;
    std::vector<double> values;
    int samples_per_value = 1;
    int rollouts = 100;
    std::uint64_t seed = 0;

    void validate() const {
        if (values.empty()) throw ModelError("sweep: no values");
        if (!std::is_sorted(values.begin(), values.end())) throw ModelError("sweep: values must be ascending");
        if (samples_per_value <= 0 || rollouts <= 1) throw ModelError("sweep: need samples >= 1 and rollouts >= 2");
    }
};

struct ShiftRecord {
    std::string param;
    double value = 0.0;
    int sample = 0;
    double exact_return = 0.0;
    double mc_return_mean = 0.0;
    double mc_return_std = 0.0;
    double exact_imitation_loss = 0.0;
    double kernel_tv_radius = 0.0;   ///< measured max-row TV to the nominal kernel
    double declared_radius = 0.0;
};

struct ShiftTable {
    std::vector<ShiftRecord> records;
    std::vector<std::string> skipped;  ///< sweep values that produced no valid kernel, with reasons
};

/// Perturbed kernel for one sweep point and the per-(s, a) TV radius it is
/// declared to respect. Slip and wind rows are mixtures that move at most the
/// changed probability mass, so their radius is that change.
inline std::pair<TabularMdp, double> shifted_kernel(const GridworldSpec& nominal_spec, const TabularMdp& nominal,
                                                    SweepParam param, double value, int sample, std::uint64_t seed) {
    switch (param) {
    case SweepParam::slip_prob: {
        GridworldSpec s = nominal_spec;
        s.slip_prob = value;
        return {build_gridworld(s).mdp, std::abs(value - nominal_spec.slip_prob)};
    }
    case SweepParam::wind_scale: {
        GridworldSpec s = nominal_spec;
        s.wind_scale = value;
        double max_wind = 0.0;
        for (double w : nominal_spec.wind) max_wind = std::max(max_wind, w);
        return {build_gridworld(s).mdp, std::abs(value - nominal_spec.wind_scale) * max_wind};
    }
    case SweepParam::kernel_tv_random: {
        if (value < 0.0 || value > 1.0) throw ModelError("TV radius must lie in [0, 1]");
        Rng rng = make_rng(child_seed(child_seed(seed, "kernel_tv_random", static_cast<std::uint64_t>(sample)),
                                      "radius", static_cast<std::uint64_t>(std::llround(value * 1e9))));
        return {sample_kernel_in_ball(nominal, value, rng), value};
    }
    }
    throw ModelError("unhandled sweep parameter");
}

/// For every sweep value and sample: exact return, exact imitation loss
/// E_{d^{pi_D}_T}[KL(pi_D || pi)] under the shifted kernel, and a Monte Carlo
/// return over seeded rollouts.
inline ShiftTable evaluate_under_shift(const StochasticPolicy& policy, const GridworldSpec& nominal_spec,
                                       const PerturbationSweep& sweep, const StochasticPolicy& expert) {
    sweep.validate();
    const Gridworld nominal = build_gridworld(nominal_spec);
    validate_policy(policy, nominal.mdp.num_states, nominal.mdp.num_actions);
    validate_policy(expert, nominal.mdp.num_states, nominal.mdp.num_actions);
    const std::uint64_t seed = child_seed(sweep.seed, "sweep", nominal_spec.step_noise_seed);
    ShiftTable out;
    for (std::size_t vi = 0; vi < sweep.values.size(); ++vi) {
        const double value = sweep.values[vi];
        for (int k = 0; k < sweep.samples_per_value; ++k) {
            TabularMdp mdp;
            double declared = 0.0;
            try {
                std::tie(mdp, declared) = shifted_kernel(nominal_spec, nominal.mdp, sweep.param, value, k, seed);
                validate_mdp(mdp);
            } catch (const std::exception& e) {
                out.skipped.push_back(std::string(to_string(sweep.param)) + "=" + std::to_string(value) + ": " +
                                      e.what());
                break;
            }
            ShiftRecord r;
            r.param = std::string(to_string(sweep.param));
            r.value = value;
            r.sample = k;
            r.declared_radius = declared;
            r.kernel_tv_radius = max_row_tv(mdp, nominal.mdp);
            if (r.kernel_tv_radius > declared + 1e-9)
                throw NumericError("sweep point exceeds its declared TV radius");
            r.exact_return = exact_return(mdp, policy, nominal.reward);
            r.exact_imitation_loss = expert_imitation_loss(mdp, expert, policy);
            Rng rng = make_rng(child_seed(child_seed(seed, "rollouts", vi), "sample", static_cast<std::uint64_t>(k)));
            double mean = 0.0, m2 = 0.0;
            for (int i = 0; i < sweep.rollouts; ++i) {
                const double x = rollout_return(mdp, policy, nominal.reward, rng);
                const double delta = x - mean;
                mean += delta / (i + 1);
                m2 += delta * (x - mean);
            }
            r.mc_return_mean = mean;
            r.mc_return_std = std::sqrt(m2 / (sweep.rollouts - 1));
            out.records.push_back(std::move(r));
        }
    }
    return out;
}

/// Fixed 17-significant-digit decimal, the format shared by every CSV output.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_shift_csv(std::ostream& os, const ShiftTable& table) {
    os << "param,value,exact_return,mc_return_mean,mc_return_std,exact_imitation_loss,kernel_tv_radius\n";
    for (const auto& r : table.records)
        os << r.param << ',' << format_double(r.value) << ',' << format_double(r.exact_return) << ','
           << format_double(r.mc_return_mean) << ',' << format_double(r.mc_return_std) << ','
           << format_double(r.exact_imitation_loss) << ',' << format_double(r.kernel_tv_radius) << '\n';
}

struct WorstCase {
    double rho_prime = 0.0;
    int kernel_id = 0;  ///< 0 is the nominal kernel, i > 0 the i-th sampled kernel
    double loss = 0.0;
};

/// Empirical worst-case imitation loss over kernels sampled from the per-(s, a)
/// TV ball, one entry per radius. Radii are processed in ascending order and
/// each radius adds num_kernels fresh samples to a shared pool, so the sample
/// set for a larger radius contains the one for every smaller radius and the
/// reported worst case is non-decreasing.
inline std::vector<WorstCase> worst_case_over_balls(const StochasticPolicy& policy, const TabularMdp& mdp,
                                                    const StochasticPolicy& expert, std::vector<double> radii,
                                                    int num_kernels, Rng& rng) {
    std::sort(radii.begin(), radii.end());
    std::vector<WorstCase> out;
    WorstCase best{0.0, 0, expert_imitation_loss(mdp, expert, policy)};
    int next_id = 1;
    for (double r : radii) {
        if (r < 0.0) throw ModelError("worst_case_over_ball: negative radius");
        for (int k = 0; k < num_kernels; ++k, ++next_id) {
            const double loss = expert_imitation_loss(sample_kernel_in_ball(mdp, r, rng), expert, policy);
            if (loss > best.loss) {
                best.loss = loss;
                best.kernel_id = next_id;
            }
        }
        best.rho_prime = r;
        out.push_back(best);
    }
    return out;
}

inline WorstCase worst_case_over_ball(const StochasticPolicy& policy, const TabularMdp& mdp,
                                      const StochasticPolicy& expert, double rho_prime, int num_kernels, Rng& rng) {
    return worst_case_over_balls(policy, mdp, expert, {rho_prime}, num_kernels, rng).front();
}

} // namespace bedroil
