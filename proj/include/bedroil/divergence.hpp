#pragma once

#include "bedroil/error.hpp"
#include "bedroil/mdp.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <string_view>

namespace bedroil {

enum class GeneratorKind { soft_tv, tv, kl, chi2, soft_chi2 };

inline constexpr std::array<std::string_view, 5> kGeneratorNames{"soft_tv", "tv", "kl", "chi2", "soft_chi2"};

inline constexpr double kDefaultSaturationWeight = 1e3;

/// Convex f with f(1) = 0 defining D_f(p||q) = E_q[f(p/q)], together with its
/// derivative and (where it exists in closed form) the inverse derivative.
///
/// inverse_derivative is the extended-real inverse of the monotone map f':
/// outside the range of f' it returns +inf above and -inf below. Soft TV has
/// range (-1/2, 1/2); KL, chi2 and soft chi2 are onto the reals (KL and soft
/// chi2 only approach 0 from above as y -> -inf). TV has no inverse and throws.
class FGenerator {
public:
    explicit FGenerator(GeneratorKind kind, double saturation_weight = kDefaultSaturationWeight)
        : kind_(kind), saturation_weight_(saturation_weight) {
        if (!(saturation_weight > 0.0)) throw ModelError("saturation_weight must be positive");
    }

    GeneratorKind kind() const { return kind_; }
    std::string name() const { return std::string(kGeneratorNames[static_cast<int>(kind_)]); }
    double saturation_weight() const { return saturation_weight_; }
    bool has_inverse_derivative() const { return kind_ != GeneratorKind::tv; }

    double operator()(double x) const { return eval(x); }

    double eval(double x) const {
        switch (kind_) {
        case GeneratorKind::soft_tv: {
            const double t = std::abs(x - 1.0);
            // log cosh t = t + log1p(e^{-2t}) - log 2, stable for large t
            return 0.5 * (t + std::log1p(std::exp(-2.0 * t)) - std::log(2.0));
        }
        case GeneratorKind::tv: return 0.5 * std::abs(x - 1.0);
        case GeneratorKind::kl: return x > 0.0 ? x * std::log(x) : 0.0;
        case GeneratorKind::chi2: return 0.5 * (x - 1.0) * (x - 1.0);
        case GeneratorKind::soft_chi2:
            if (x >= 1.0) return 0.5 * (x - 1.0) * (x - 1.0);
            return (x > 0.0 ? x * std::log(x) : 0.0) - x + 1.0;
        }
        return 0.0;
    }

    /// f'(x); for TV the subgradient 1/2 sign(x - 1) with 0 at the kink.
    double derivative(double x) const {
        switch (kind_) {
        case GeneratorKind::soft_tv: return 0.5 * std::tanh(x - 1.0);
        case GeneratorKind::tv: return x > 1.0 ? 0.5 : (x < 1.0 ? -0.5 : 0.0);
        case GeneratorKind::kl:
            return x > 0.0 ? std::log(x) + 1.0 : -std::numeric_limits<double>::infinity();
        case GeneratorKind::chi2: return x - 1.0;
        case GeneratorKind::soft_chi2:
            if (x >= 1.0) return x - 1.0;
            return x > 0.0 ? std::log(x) : -std::numeric_limits<double>::infinity();
        }
        return 0.0;
    }

    double inverse_derivative(double y) const {
        constexpr double inf = std::numeric_limits<double>::infinity();
        switch (kind_) {
        case GeneratorKind::soft_tv:
            if (y >= 0.5) return inf;
            if (y <= -0.5) return -inf;
            return std::atanh(2.0 * y) + 1.0;
        case GeneratorKind::tv:
            throw ModelError("non-differentiable generator: tv has no inverse derivative");
        case GeneratorKind::kl: return std::exp(y - 1.0);
        case GeneratorKind::chi2: return y + 1.0;
        case GeneratorKind::soft_chi2: return y < 0.0 ? std::exp(y) : y + 1.0;
        }
        return 0.0;
    }

    /// Open interval of y on which inverse_derivative is finite.
    std::pair<double, double> inverse_domain() const {
        constexpr double inf = std::numeric_limits<double>::infinity();
        switch (kind_) {
        case GeneratorKind::soft_tv: return {-0.5, 0.5};
        case GeneratorKind::tv: return {0.0, 0.0};
        default: return {-inf, inf};
        }
    }

    /// lim_{t->inf} f(t)/t: the cost per unit of p placed where q = 0.
    double recession_slope() const {
        switch (kind_) {
        case GeneratorKind::soft_tv:
        case GeneratorKind::tv: return 0.5;
        default: return std::numeric_limits<double>::infinity();
        }
    }

    bool operator==(const FGenerator&) const = default;

private:
    GeneratorKind kind_;
    double saturation_weight_;
};

inline GeneratorKind parse_generator_kind(std::string_view name) {
    for (std::size_t i = 0; i < kGeneratorNames.size(); ++i)
        if (kGeneratorNames[i] == name) return static_cast<GeneratorKind>(i);
    throw ModelError("unknown generator: " + std::string(name));
}

inline FGenerator make_generator(std::string_view name,
                                 double saturation_weight = kDefaultSaturationWeight) {
    return FGenerator(parse_generator_kind(name), saturation_weight);
}

/// sum_x q(x) f(p(x)/q(x)) for nonnegative measures of equal length, without
/// normalization checks. Mass of p outside the support of q costs
/// p(x) * lim f(t)/t, or throws when that limit is infinite.
inline double divergence_of_measures(const FGenerator& gen, std::span<const double> p,
                                     std::span<const double> q) {
    if (p.size() != q.size()) throw ModelError("f-divergence: length mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (q[i] > 0.0) {
            total += q[i] * gen.eval(p[i] / q[i]);
        } else if (p[i] > 0.0) {
            const double slope = gen.recession_slope();
            if (!std::isfinite(slope))
                throw ModelError("f-divergence support violation at index " + std::to_string(i) +
                                 ": q = 0 < p for generator " + gen.name());
            total += p[i] * slope;
        }
    }
    return total;
}

/// D_f(p || q) between probability vectors.
inline double f_divergence(const FGenerator& gen, std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw ModelError("f-divergence: length mismatch");
    detail::check_probability_vector(p, "f-divergence p");
    detail::check_probability_vector(q, "f-divergence q");
    return divergence_of_measures(gen, p, q);
}

/// Half the l1 distance.
inline double tv_distance(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw ModelError("tv_distance: length mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) total += std::abs(p[i] - q[i]);
    return 0.5 * total;
}

} // namespace bedroil
