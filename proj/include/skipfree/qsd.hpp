#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "skipfree/spectral.hpp"

namespace skipfree {

struct QsdBundle {
    double lambda0 = 0.0;
    DKind kind = DKind::WInterval;
    std::vector<double> nu;    // quasi-stationary weights per grid point, sum 1, nu[0] = 0
    std::vector<double> zinv;  // invariant-function values (Z(x), Z(x,ell) or W(x,ell) at -lambda0)
    double rho = 0.0;          // dD/dq at -lambda0
    double norm_const = 1.0;   // 1 in the self-normalizing cases, C in the two-sided-kill case
    double prenorm_sum = 0.0;  // weight sum before normalization (a discretization diagnostic)
};

namespace detail {

inline double qsd_budget(const Model& m) {
    if (m.measure.kind == MeasureKind::Atomic) return 1e-8;
    double h = m.grid.spacing_max();
    return std::max(10.0 * h * h, 1e-10);
}

}  // namespace detail

/// Quasi-stationary weights nu(x_i) proportional to W^{(-lambda0)}(0, x_i) w_i.
/// In the self-normalizing cases the raw sum should already be 1; the
/// deviation is recorded and bounded by the discretization budget.
inline QsdBundle qsd_density(const SpectralProblem& p, double lambda0) {
    const Model& m = *p.model;
    const std::size_t M = m.top();
    std::vector<Complex> row = wq_row(m, Complex{-lambda0, 0.0}, 0);

    QsdBundle b;
    b.lambda0 = lambda0;
    b.kind = p.kind;
    b.nu.assign(M + 1, 0.0);

    double factor = p.kind == DKind::WInterval ? 1.0 : lambda0;
    double maxw = 0.0;
    for (std::size_t i = 1; i <= M; ++i) {
        b.nu[i] = factor * row[i].real() * m.measure.weights[i];
        maxw = std::max(maxw, std::abs(b.nu[i]));
    }
    for (std::size_t i = 1; i <= M; ++i) {
        if (b.nu[i] < -1e-10 * maxw)
            throw std::runtime_error("qsd_density: negative weight; wrong lambda0 or bad kernel");
        b.nu[i] = std::max(b.nu[i], 0.0);
    }
    b.prenorm_sum = std::accumulate(b.nu.begin(), b.nu.end(), 0.0);
    if (p.kind != DKind::WInterval) {
        if (std::abs(b.prenorm_sum - 1.0) > detail::qsd_budget(m))
            throw std::runtime_error("qsd_density: self-normalization deviates beyond the discretization budget");
        b.norm_const = 1.0;
    } else {
        b.norm_const = 1.0 / b.prenorm_sum;
    }
    for (double& v : b.nu) v /= b.prenorm_sum;
    return b;
}

/// Invariant-function values per case. For an inaccessible right boundary the
/// values must be strictly increasing with limit 1 at the truncation.
inline std::vector<double> invariant_function(const SpectralProblem& p, double lambda0) {
    const Model& m = *p.model;
    const std::size_t M = m.top();
    ScaleEval ev = wq_eval(m, Complex{-lambda0, 0.0}, WqMethod::Volterra);

    std::vector<double> zinv(M + 1, 0.0);
    if (p.kind == DKind::WInterval) {
        for (std::size_t i = 0; i <= M; ++i) zinv[i] = ev.wq(i, M).real();
    } else {
        for (std::size_t i = 0; i <= M; ++i)
            zinv[i] = i == M ? 1.0
                             : 1.0 - lambda0 * detail::window_integral(m, ev.wq.row(i), i, M).real();
    }
    if (p.kind == DKind::ZInfinity) {
        for (std::size_t i = 1; i + 1 <= M; ++i)
            if (!(zinv[i + 1] > zinv[i] - 1e-12))
                throw std::runtime_error("invariant_function: values are not increasing toward the boundary");
    }
    return zinv;
}

/// rho = dD/dq at -lambda0, cross-checked in the Z cases against the explicit
/// weighted sum of W^{(-lambda0)}(0,u) times the invariant function.
inline double rho_value(const SpectralProblem& p, double lambda0) {
    DPair d = eval_D_pair(p, Complex{-lambda0, 0.0});
    double rho = d.derivative.real();
    if (!(rho > 0.0)) throw std::runtime_error("rho_value: dD/dq at -lambda0 is not positive");
    if (p.kind != DKind::WInterval) {
        const Model& m = *p.model;
        const std::size_t M = m.top();
        std::vector<double> zinv = invariant_function(p, lambda0);
        std::vector<Complex> row = wq_row(m, Complex{-lambda0, 0.0}, 0);
        std::vector<double> f(M + 1, 0.0);
        for (std::size_t u = 1; u <= M; ++u) f[u] = row[u].real() * zinv[u];
        double explicit_form = detail::window_integral(m, f.data(), std::size_t{0}, M);
        if (std::abs(explicit_form - rho) > 1e-9 * std::max(1.0, std::abs(rho)))
            throw std::runtime_error("rho_value: derivative and window-sum forms disagree");
    }
    return rho;
}

inline QsdBundle qsd_bundle(const SpectralProblem& p, double lambda0) {
    QsdBundle b = qsd_density(p, lambda0);
    b.zinv = invariant_function(p, lambda0);
    b.rho = rho_value(p, lambda0);
    return b;
}

/// Case-appropriate resolvent density r^{(q)}(x_i, x_j) away from the zero set.
inline Complex resolvent_density(const SpectralProblem& p, Complex q, std::size_t i, std::size_t j) {
    const Model& m = *p.model;
    const std::size_t M = m.top();
    if (i > M || j > M) throw std::out_of_range("resolvent_density: index out of range");
    std::vector<Complex> row0 = wq_row(m, q, 0);
    std::vector<Complex> rowi = i == 0 ? row0 : wq_row(m, q, i);

    Complex denom, znum;
    if (p.kind == DKind::WInterval) {
        denom = row0[M];
        znum = rowi[M];
    } else {
        denom = 1.0 + q * detail::window_integral(m, row0.data(), std::size_t{0}, M);
        znum = i == M ? Complex{1.0} : 1.0 + q * detail::window_integral(m, rowi.data(), i, M);
    }
    double mag = 1.0;
    for (std::size_t k = 1; k <= M; ++k) mag = std::max(mag, std::abs(row0[k]));
    if (std::abs(denom) <= 1e-8 * (1.0 + std::abs(q) * mag)) {
        DPair d = eval_D_pair(p, q);
        double dist = d.derivative == Complex{} ? 0.0 : std::abs(d.value / d.derivative);
        throw PoleError("resolvent_density: q is on or near the zero set (nearest zero approx " +
                        std::to_string(dist) + " away)");
    }
    return znum / denom * row0[j] - rowi[j];
}

/// Resolvent value at the attached boundary point at infinity,
/// (1/D(q)) sum W^{(q)}(0,u) f(u) w_u; inaccessible-boundary case only.
inline Complex resolvent_at_infinity(const SpectralProblem& p, Complex q, std::span<const double> f) {
    if (p.kind != DKind::ZInfinity)
        throw std::invalid_argument("resolvent_at_infinity: needs an inaccessible right boundary");
    const Model& m = *p.model;
    const std::size_t M = m.top();
    if (f.size() != M + 1) throw DimensionError("resolvent_at_infinity: f/grid size mismatch");
    std::vector<Complex> row0 = wq_row(m, q, 0);
    Complex denom = 1.0 + q * detail::window_integral(m, row0.data(), std::size_t{0}, M);
    double mag = 1.0;
    for (std::size_t k = 1; k <= M; ++k) mag = std::max(mag, std::abs(row0[k]));
    if (std::abs(denom) <= 1e-8 * (1.0 + std::abs(q) * mag))
        throw PoleError("resolvent_at_infinity: q is on or near the zero set");
    std::vector<Complex> g(M + 1, Complex{});
    for (std::size_t u = 1; u <= M; ++u) g[u] = row0[u] * f[u];
    return detail::window_integral(m, g.data(), std::size_t{0}, M) / denom;
}

/// Rank-one Yaglom projection (pi f)(x_i) = zinv(x_i) * (sum f nu) / (rho * c),
/// with c the case constant (lambda0, or the normalizing constant in the
/// two-sided-kill case).
inline std::vector<double> yaglom_projection(const SpectralProblem& p, const QsdBundle& b,
                                             std::span<const double> f) {
    if (f.size() != b.nu.size()) throw DimensionError("yaglom_projection: f/grid size mismatch");
    double c = b.kind == DKind::WInterval ? b.norm_const : b.lambda0;
    double nu_f = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) nu_f += f[i] * b.nu[i];
    std::vector<double> out(f.size(), 0.0);
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = b.zinv[i] * nu_f / (b.rho * c);
    (void)p;
    return out;
}

struct QProcess {
    std::vector<double> mu;    // invariant law of the process conditioned to avoid 0
    double mu_sum_raw = 0.0;   // sum before the final normalization (should be 1)
    std::string h_transform;   // description of the conditioned semigroup
};

/// Invariant distribution mu(x_i) = W^{(-lambda0)}(0,x_i) zinv(x_i) w_i / rho
/// of the conditioned-to-survive process, plus its h-transform description.
inline QProcess qprocess_quantities(const SpectralProblem& p, const QsdBundle& b) {
    const Model& m = *p.model;
    const std::size_t M = m.top();
    std::vector<Complex> row0 = wq_row(m, Complex{-b.lambda0, 0.0}, 0);
    QProcess qp;
    qp.mu.assign(M + 1, 0.0);
    for (std::size_t u = 1; u <= M; ++u)
        qp.mu[u] = row0[u].real() * b.zinv[u] * m.measure.weights[u] / b.rho;
    qp.mu_sum_raw = std::accumulate(qp.mu.begin(), qp.mu.end(), 0.0);
    if (std::abs(qp.mu_sum_raw - 1.0) > detail::qsd_budget(m))
        throw std::runtime_error("qprocess_quantities: mu does not sum to 1 within the discretization budget");
    for (double& v : qp.mu) v /= qp.mu_sum_raw;
    qp.h_transform = "q_t f = e^{lambda0 t} p_t(zinv * f) / zinv";
    return qp;
}

}  // namespace skipfree
