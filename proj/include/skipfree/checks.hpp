#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "skipfree/oracle.hpp"
#include "skipfree/qsd.hpp"

namespace skipfree {

enum class SemigroupMode { Invariance, MeanYaglom, QProcess };

struct SemigroupReport {
    SemigroupMode mode = SemigroupMode::Invariance;

    // Invariance: sup_x |e^{lambda0 t} p_t zinv - zinv| per time.
    std::vector<double> times;
    std::vector<double> residuals;

    // MeanYaglom: time averages of e^{lambda0 s} p_s f against the limit.
    double average_over_start = std::numeric_limits<double>::quiet_NaN();  // (1/t) int_0^t
    double average_over_tail = std::numeric_limits<double>::quiet_NaN();   // (1/t) int_t^{2t}
    double reference = std::numeric_limits<double>::quiet_NaN();
    double rel_error_start = std::numeric_limits<double>::quiet_NaN();
    double rel_error_tail = std::numeric_limits<double>::quiet_NaN();

    // QProcess: weighted ergodicity error per time plus its fitted decay rate.
    double fitted_decay = std::numeric_limits<double>::quiet_NaN();
    double mu_f = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline std::vector<double> semigroup_apply(const SubGenerator& g, double t,
                                           std::span<const double> grid_values) {
    std::vector<double> v = restrict_to_states(g, grid_values);
    return transition_oracle(g, t, v);
}

// Composite Simpson of fn over [a, b] with an even panel count.
template <class Fn>
double simpson(Fn&& fn, double a, double b, std::size_t panels) {
    if (panels % 2 == 1) ++panels;
    double h = (b - a) / static_cast<double>(panels);
    double acc = fn(a) + fn(b);
    for (std::size_t k = 1; k < panels; ++k) acc += fn(a + h * k) * (k % 2 == 1 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

}  // namespace detail

/// sup_x |e^{lambda0 t} p_t zinv - zinv| at the given times; the invariant
/// function must be an exact eigenfunction up to oracle truncation.
inline SemigroupReport check_invariance(const QsdBundle& b, const SubGenerator& g,
                                        std::vector<double> times = {0.5, 1.0, 2.0}) {
    SemigroupReport rep;
    rep.mode = SemigroupMode::Invariance;
    std::vector<double> z = restrict_to_states(g, b.zinv);
    for (double t : times) {
        std::vector<double> pt = transition_oracle(g, t, z);
        double factor = std::exp(b.lambda0 * t);
        double worst = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i)
            worst = std::max(worst, std::abs(factor * pt[i] - z[i]));
        rep.times.push_back(t);
        rep.residuals.push_back(worst);
    }
    return rep;
}

/// Time averages of e^{lambda0 s} p_s f(x) against the product-form limit
/// zinv(x)/rho * sum W^{(-lambda0)}(0,u) f(u) w_u. Both the average started
/// at 0 and the converged tail window [t, 2t] are reported.
inline SemigroupReport check_mean_yaglom(const SpectralProblem& p, const QsdBundle& b,
                                         const SubGenerator& g, std::span<const double> f,
                                         std::size_t x_idx, double t = 50.0,
                                         std::size_t panels = 800) {
    SemigroupReport rep;
    rep.mode = SemigroupMode::MeanYaglom;

    std::size_t x_pos = g.states.size();
    for (std::size_t k = 0; k < g.states.size(); ++k)
        if (g.states[k] == x_idx) x_pos = k;
    if (x_pos == g.states.size())
        throw std::invalid_argument("check_mean_yaglom: x is not a transient state");

    std::vector<double> fv = restrict_to_states(g, f);
    auto integrand = [&](double s) {
        std::vector<double> ps = transition_oracle(g, s, fv);
        return std::exp(b.lambda0 * s) * ps[x_pos];
    };
    rep.average_over_start = detail::simpson(integrand, 0.0, t, panels) / t;
    rep.average_over_tail = detail::simpson(integrand, t, 2.0 * t, panels) / t;

    const Model& m = *p.model;
    std::vector<Complex> row0 = wq_row(m, Complex{-b.lambda0, 0.0}, 0);
    std::vector<double> wf(m.top() + 1, 0.0);
    for (std::size_t u = 1; u <= m.top(); ++u) wf[u] = row0[u].real() * f[u];
    double wsum = detail::window_integral(m, wf.data(), std::size_t{0}, m.top());
    rep.reference = b.zinv[x_idx] / b.rho * wsum;

    double denom = std::max(std::abs(rep.reference), 1e-300);
    rep.rel_error_start = std::abs(rep.average_over_start - rep.reference) / denom;
    rep.rel_error_tail = std::abs(rep.average_over_tail - rep.reference) / denom;
    return rep;
}

/// Weighted ergodicity of the conditioned-to-survive semigroup:
/// sup_x zinv(x) |q_t f(x) - mu(f)| should decay at the spectral gap.
inline SemigroupReport check_qprocess(const QsdBundle& b, const QProcess& qp,
                                      const SubGenerator& g, std::span<const double> f,
                                      std::vector<double> times = {0.5, 1.0, 1.5, 2.0, 2.5, 3.0}) {
    SemigroupReport rep;
    rep.mode = SemigroupMode::QProcess;

    std::vector<double> z = restrict_to_states(g, b.zinv);
    std::vector<double> fv = restrict_to_states(g, f);
    std::vector<double> zf(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) zf[i] = z[i] * fv[i];

    rep.mu_f = 0.0;
    for (std::size_t i = 0; i < qp.mu.size(); ++i) rep.mu_f += qp.mu[i] * f[i];

    for (double t : times) {
        std::vector<double> pt = transition_oracle(g, t, zf);
        double factor = std::exp(b.lambda0 * t);
        // zinv(x) * |q_t f - mu(f)| = |e^{lambda0 t} p_t(zinv f)(x) - zinv(x) mu(f)|
        double worst = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i)
            worst = std::max(worst, std::abs(factor * pt[i] - z[i] * rep.mu_f));
        rep.times.push_back(t);
        rep.residuals.push_back(worst);
    }

    // Least-squares slope of log residuals while they sit above roundoff.
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < rep.times.size(); ++k) {
        if (rep.residuals[k] < 1e-13) continue;
        double x = rep.times[k], y = std::log(rep.residuals[k]);
        sx += x; sy += y; sxx += x * x; sxy += x * y;
        ++n;
    }
    if (n >= 2) {
        double nd = static_cast<double>(n);
        rep.fitted_decay = -(nd * sxy - sx * sy) / (nd * sxx - sx * sx);
    }
    return rep;
}

/// Umbrella entry matching the three check modes with their default probes:
/// the invariant function itself, the top-state indicator, and a test
/// function bounded by 1/zinv.
inline SemigroupReport semigroup_checks(const SpectralProblem& p, const QsdBundle& b,
                                        const SubGenerator& g, SemigroupMode mode) {
    const std::size_t n = b.nu.size();
    switch (mode) {
        case SemigroupMode::Invariance:
            return check_invariance(b, g);
        case SemigroupMode::MeanYaglom: {
            std::vector<double> f(n, 0.0);
            f[g.states.back()] = 1.0;
            return check_mean_yaglom(p, b, g, f, g.states.back());
        }
        case SemigroupMode::QProcess: {
            std::vector<double> f(n, 0.0);
            std::size_t top = g.states.back();
            f[top] = 1.0 / b.zinv[top];
            QProcess qp = qprocess_quantities(p, b);
            return check_qprocess(b, qp, g, f);
        }
    }
    throw std::logic_error("semigroup_checks: unknown mode");
}

}  // namespace skipfree
