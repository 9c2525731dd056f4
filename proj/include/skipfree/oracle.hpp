#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "skipfree/models.hpp"

namespace skipfree {

/// Dense generator over the transient states; the independent linear-algebra
/// ground truth the analytic path is checked against.
struct SubGenerator {
    enum class Kind { Chain, FiniteDifference };

    Eigen::MatrixXd q;
    double scale = 0.0;                // max |diagonal|
    Kind kind = Kind::Chain;
    std::vector<std::size_t> states;   // grid index carried by each matrix row
};

inline SubGenerator chain_sub_generator(const ChainSpec& spec) {
    auto c = detail::compile_chain(spec);
    const std::size_t n = c.n;
    std::size_t m = spec.boundary == BoundaryCase::KilledBoth ? n - 1 : n;
    if (m == 0) throw std::invalid_argument("chain_sub_generator: no transient states");

    SubGenerator g;
    g.kind = SubGenerator::Kind::Chain;
    g.q = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    g.states.resize(m);
    for (std::size_t i = 1; i <= m; ++i) {
        g.states[i - 1] = i;
        g.q(i - 1, i - 1) = -c.total[i];
        for (const auto& [to, rate] : c.out[i])
            if (to >= 1 && to <= m) g.q(i - 1, to - 1) += rate;
    }
    g.scale = g.q.diagonal().cwiseAbs().maxCoeff();
    return g;
}

/// Second-order finite differences of (sigma^2/2) f'' + b f' with absorbing
/// rows at accessible boundaries and a zero-flux row at a reflecting (or
/// truncated) top.
inline SubGenerator fd_sub_generator(const DiffusionSpec& spec) {
    const std::size_t M = spec.n_points - 1;
    const double h = spec.right / static_cast<double>(M);
    std::size_t m = spec.boundary == BoundaryCase::KilledBoth ? M - 1 : M;

    SubGenerator g;
    g.kind = SubGenerator::Kind::FiniteDifference;
    g.q = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    g.states.resize(m);
    for (std::size_t i = 1; i <= m; ++i) {
        g.states[i - 1] = i;
        double s2 = spec.sigma[i] * spec.sigma[i];
        double b = spec.drift[i];
        double lower = s2 / (2.0 * h * h) - b / (2.0 * h);
        double upper = s2 / (2.0 * h * h) + b / (2.0 * h);
        if (lower < 0.0 || upper < 0.0)
            throw std::invalid_argument("fd_sub_generator: grid too coarse for the drift (negative rate)");
        bool top_row = i == m && spec.boundary != BoundaryCase::KilledBoth;
        if (top_row) {
            // zero-flux: mirror the upper neighbor
            g.q(i - 1, i - 2) += s2 / (h * h);
            g.q(i - 1, i - 1) -= s2 / (h * h);
        } else {
            if (i >= 2) g.q(i - 1, i - 2) += lower;
            if (i < m) g.q(i - 1, i) += upper;
            g.q(i - 1, i - 1) -= lower + upper;
        }
    }
    g.scale = g.q.diagonal().cwiseAbs().maxCoeff();
    return g;
}

struct DecayOracle {
    double lambda0 = 0.0;
    double lambda1 = 0.0;
    std::vector<double> left;   // positive, sums to 1
    std::vector<double> right;  // positive, 1 at the top state
    double residual = 0.0;
};

namespace detail {

// Inverse iteration on (shift I - Q)^{-1}; converges to the Perron direction
// since the Perron eigenvalue is strictly nearest to any positive shift.
inline Eigen::VectorXd perron_vector(const Eigen::MatrixXd& q, double shift, bool left) {
    const auto n = q.rows();
    Eigen::MatrixXd a = shift * Eigen::MatrixXd::Identity(n, n) - (left ? q.transpose() : q);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
    Eigen::VectorXd v = Eigen::VectorXd::Ones(n);
    v.normalize();
    for (int it = 0; it < 500; ++it) {
        Eigen::VectorXd next = lu.solve(v);
        next.normalize();
        if ((next - v).lpNorm<Eigen::Infinity>() < 1e-14) {
            v = next;
            return v;
        }
        v = next;
    }
    throw std::runtime_error("perron_vector: inverse iteration did not converge");
}

}  // namespace detail

/// Two leading decay rates of -Q plus positive left/right Perron vectors.
inline DecayOracle eig_decay_oracle(const SubGenerator& g) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(g.q);
    if (es.info() != Eigen::Success) throw std::runtime_error("eig_decay_oracle: eigensolver failed");
    const auto& ev = es.eigenvalues();

    Eigen::Index imax = 0;
    for (Eigen::Index k = 1; k < ev.size(); ++k)
        if (ev(k).real() > ev(imax).real()) imax = k;
    if (std::abs(ev(imax).imag()) > 1e-8 * std::max(1.0, g.scale))
        throw std::runtime_error("eig_decay_oracle: leading eigenvalue is not real (irreducibility?)");

    DecayOracle out;
    out.lambda0 = -ev(imax).real();
    double second = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < ev.size(); ++k)
        if (k != imax) second = std::max(second, ev(k).real());
    out.lambda1 = ev.size() > 1 ? -second : std::numeric_limits<double>::infinity();

    double shift = 1e-3 * std::max(1.0, g.scale);
    Eigen::VectorXd r = detail::perron_vector(g.q, shift, false);
    Eigen::VectorXd l = detail::perron_vector(g.q, shift, true);
    if (r(r.size() - 1) < 0.0) r = -r;
    if (l.sum() < 0.0) l = -l;
    double rmax = r.cwiseAbs().maxCoeff(), lmax = l.cwiseAbs().maxCoeff();
    if (r.minCoeff() < -1e-10 * rmax || l.minCoeff() < -1e-10 * lmax)
        throw std::runtime_error("eig_decay_oracle: Perron vector is not positive (irreducibility?)");
    r = r.cwiseMax(0.0);
    l = l.cwiseMax(0.0);
    r /= r(r.size() - 1);
    l /= l.sum();

    out.residual = std::max((g.q * r + out.lambda0 * r).lpNorm<Eigen::Infinity>(),
                            (g.q.transpose() * l + out.lambda0 * l).lpNorm<Eigen::Infinity>()) /
                   std::max(1.0, g.scale);
    out.left.assign(l.data(), l.data() + l.size());
    out.right.assign(r.data(), r.data() + r.size());
    return out;
}

namespace detail {

// e^{tQ} v by uniformization: Poisson mixture over powers of P = I + Q/L,
// truncated when the remaining Poisson mass drops below the target. Large
// L t is split into segments so the weights stay representable.
inline Eigen::VectorXd uniformized_exp(const Eigen::MatrixXd& q, double scale, double t,
                                       Eigen::VectorXd v, double tail_target) {
    if (t == 0.0) return v;
    double rate = scale * (1.0 + 1e-12) + 1e-300;
    int segments = std::max(1, static_cast<int>(std::ceil(rate * t / 500.0)));
    double tau = t / segments;
    double a = rate * tau;
    double per_segment = tail_target / segments;

    for (int seg = 0; seg < segments; ++seg) {
        Eigen::VectorXd term = v;
        double weight = std::exp(-a);
        Eigen::VectorXd acc = weight * term;
        double mass = weight;
        std::size_t k = 0;
        const std::size_t cap = static_cast<std::size_t>(a + 60.0 * std::sqrt(a + 1.0) + 60.0);
        while (1.0 - mass > per_segment && k < cap) {
            ++k;
            term += (q * term) / rate;  // P term
            weight *= a / static_cast<double>(k);
            acc += weight * term;
            mass += weight;
        }
        v = acc;
    }
    return v;
}

}  // namespace detail

/// e^{tQ} v: uniformization for chains (sup-norm tail below 1e-12 of |v|),
/// scaling-and-squaring for finite-difference generators.
inline std::vector<double> transition_oracle(const SubGenerator& g, double t,
                                             std::span<const double> v) {
    if (t < 0.0) throw std::invalid_argument("transition_oracle: t must be nonnegative");
    if (static_cast<Eigen::Index>(v.size()) != g.q.rows())
        throw DimensionError("transition_oracle: v size does not match the generator");
    Eigen::VectorXd x(static_cast<Eigen::Index>(v.size()));
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = v[static_cast<std::size_t>(i)];
    Eigen::VectorXd y;
    if (t == 0.0) {
        y = x;
    } else if (g.kind == SubGenerator::Kind::Chain) {
        y = detail::uniformized_exp(g.q, g.scale, t, x, 1e-12);
    } else {
        if (t * g.scale > 1e9) throw std::overflow_error("transition_oracle: t * scale too large");
        Eigen::MatrixXd e = (t * g.q).exp();
        y = e * x;
    }
    return std::vector<double>(y.data(), y.data() + y.size());
}

/// Restriction of a grid-sized vector to the generator's transient states.
inline std::vector<double> restrict_to_states(const SubGenerator& g, std::span<const double> grid_values) {
    std::vector<double> out(g.states.size());
    for (std::size_t k = 0; k < g.states.size(); ++k) out[k] = grid_values[g.states[k]];
    return out;
}

}  // namespace skipfree
