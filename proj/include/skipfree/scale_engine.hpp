#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

#include "skipfree/core_model.hpp"
#include "skipfree/detail/parallel.hpp"

namespace skipfree {

/// Thrown when a requested value sits on (or numerically at) a zero of the
/// relevant denominator, e.g. q near a Dirichlet-type zero in exit formulas.
struct PoleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class WqMethod { Series, Volterra };

struct ScaleEval {
    Complex q;
    detail::Matrix<Complex> wq;  // wq(i,j) = W^{(q)}(x_i, x_j), zero below the diagonal
    double trunc_error = 0.0;    // relative series tail bound; 0 for the Volterra recursion
    const Model* model = nullptr;
};

namespace detail {

// Weight with which the right endpoint of a window (i, j) enters integrals of
// functions that do not vanish there. Diffuse measures get the trapezoid
// half-cell (the stored top weight is already a half cell); atomic measures
// close the window on the right at full mass.
inline double end_weight(const Model& m, std::size_t j) {
    if (m.measure.kind == MeasureKind::Atomic) return m.measure.weights[j];
    const std::size_t M = m.top();
    if (j == 0) return 0.0;
    if (j == M) return m.measure.weights[M];
    return m.measure.weights[j] * (m.grid.points[j] - m.grid.points[j - 1]) /
           (m.grid.points[j + 1] - m.grid.points[j - 1]);
}

// Integral over the window (i, j) of a function given by `values` on the
// grid. The left endpoint never contributes (every integrand handled here
// vanishes at its left end).
template <class S>
S window_integral(const Model& m, const S* values, std::size_t i, std::size_t j) {
    S acc{};
    const auto& w = m.measure.weights;
    for (std::size_t k = i + 1; k < j; ++k) acc += values[k] * w[k];
    if (j > i) acc += values[j] * end_weight(m, j);
    return acc;
}

// Forward substitution for one row of the Volterra system
//   W^{(q)}(i, j) = W(i, j) + q * sum_{i<k<j} W^{(q)}(i, k) W(k, j) w_k.
// Row entries are final once every k < j has been folded in, so a single
// pass over k with contiguous access to the kernel rows suffices.
template <class S>
void volterra_row(const Model& m, S q, std::size_t i, std::vector<S>& row) {
    const std::size_t M = m.top();
    const auto& w0 = m.kernel.w0;
    const auto& w = m.measure.weights;
    row.assign(M + 1, S{});
    row[i] = S{w0(i, i)};
    for (std::size_t j = i + 1; j <= M; ++j) row[j] = S{w0(i, j)};
    for (std::size_t k = i + 1; k < M; ++k) {
        S c = q * row[k] * w[k];
        if (c == S{}) continue;
        const double* kernel_row = w0.row(k);
        for (std::size_t j = k + 1; j <= M; ++j) row[j] += c * kernel_row[j];
    }
}

// Same pass, also carrying the q-derivative of the row.
template <class S>
void volterra_row_derivative(const Model& m, S q, std::size_t i,
                             std::vector<S>& row, std::vector<S>& drow) {
    const std::size_t M = m.top();
    const auto& w0 = m.kernel.w0;
    const auto& w = m.measure.weights;
    row.assign(M + 1, S{});
    drow.assign(M + 1, S{});
    row[i] = S{w0(i, i)};
    for (std::size_t j = i + 1; j <= M; ++j) row[j] = S{w0(i, j)};
    for (std::size_t k = i + 1; k < M; ++k) {
        S cw = q * row[k] * w[k];
        S cd = (row[k] + q * drow[k]) * w[k];
        const double* kernel_row = w0.row(k);
        for (std::size_t j = k + 1; j <= M; ++j) {
            row[j] += cw * kernel_row[j];
            drow[j] += cd * kernel_row[j];
        }
    }
}

inline bool real_fast_path(Complex q) { return q.imag() == 0.0; }

}  // namespace detail

/// Windowed mass of the 0-kernel row, W-bar(x_i, x_j).
inline double wbar(const Model& m, std::size_t i, std::size_t j) {
    if (i >= j || j > m.top()) throw std::out_of_range("wbar: need i < j <= M");
    return detail::window_integral(m, m.kernel.w0.row(i), i, j);
}

struct TailValue {
    double value = 0.0;
    bool truncated = false;  // right end is a truncation, the tail above it is not included
};

/// W-bar(x_i, right end). For a truncated state space the value is the
/// partial sum up to the truncation and is flagged as such.
inline TailValue wbar(const Model& m, std::size_t i) {
    if (i >= m.top()) throw std::out_of_range("wbar: row index at or beyond the top");
    return {detail::window_integral(m, m.kernel.w0.row(i), i, m.top()),
            m.grid.right_end.kind == RightEndKind::Truncation};
}

/// One row of W^{(q)} by the forward Volterra recursion (exact on the grid).
inline std::vector<Complex> wq_row(const Model& m, Complex q, std::size_t i) {
    std::vector<Complex> row;
    if (detail::real_fast_path(q)) {
        std::vector<double> r;
        detail::volterra_row(m, q.real(), i, r);
        row.assign(r.begin(), r.end());
    } else {
        detail::volterra_row(m, q, i, row);
    }
    return row;
}

inline void wq_row_with_derivative(const Model& m, Complex q, std::size_t i,
                                   std::vector<Complex>& row, std::vector<Complex>& drow) {
    if (detail::real_fast_path(q)) {
        std::vector<double> r, dr;
        detail::volterra_row_derivative(m, q.real(), i, r, dr);
        row.assign(r.begin(), r.end());
        drow.assign(dr.begin(), dr.end());
    } else {
        detail::volterra_row_derivative(m, q, i, row, drow);
    }
}

namespace detail {

// Series evaluation of one row with the factorial tail certificate:
// the tail after the n-th term is bounded by W(i,j) (|q| Wbar)^{n+1}/(n+1)! e^{|q| Wbar}.
template <class S>
double series_row(const Model& m, S q, std::size_t i, double tol, std::vector<S>& out) {
    const std::size_t M = m.top();
    const auto& w0 = m.kernel.w0;
    const auto& w = m.measure.weights;
    const double row_wbar = i < M ? wbar(m, i, M) : 0.0;
    const double aq = std::abs(Complex(q));

    std::vector<S> term(M + 1), next(M + 1);
    out.assign(M + 1, S{});
    out[i] = S{w0(i, i)};
    for (std::size_t j = i; j <= M; ++j) term[j] = S{w0(i, j)};
    for (std::size_t j = i + 1; j <= M; ++j) out[j] = term[j];

    double factor = aq * row_wbar * std::exp(aq * row_wbar);  // bound after the 0th term
    std::size_t n = 0;
    while (factor > tol && n + 1 < (M > i ? M - i : 0)) {
        ++n;
        std::fill(next.begin(), next.end(), S{});
        for (std::size_t k = i + 1; k < M; ++k) {
            S c = q * term[k] * w[k];
            if (c == S{}) continue;
            const double* kernel_row = w0.row(k);
            for (std::size_t j = k + 1; j <= M; ++j) next[j] += c * kernel_row[j];
        }
        term.swap(next);
        for (std::size_t j = i + 1; j <= M; ++j) out[j] += term[j];
        factor *= aq * row_wbar / static_cast<double>(n + 1);
    }
    if (n + 1 >= (M > i ? M - i : 1)) factor = 0.0;  // nilpotent: the series terminated exactly
    return factor;
}

}  // namespace detail

/// Full W^{(q)} table. Volterra solves the discrete system exactly; the
/// series path certifies its truncation error via the factorial tail bound
/// and records the relative bound in trunc_error.
inline ScaleEval wq_eval(const Model& m, Complex q, WqMethod method, double tol = 1e-10,
                         unsigned workers = 0) {
    if (!(tol > 0.0)) throw std::invalid_argument("wq_eval: tol must be positive");
    if (m.measure.weights.size() != m.grid.points.size() ||
        m.kernel.w0.rows() != m.grid.points.size() || m.kernel.w0.cols() != m.grid.points.size())
        throw DimensionError("wq_eval: model containers disagree");
    const std::size_t M = m.top();
    ScaleEval ev;
    ev.q = q;
    ev.model = &m;
    ev.wq = detail::Matrix<Complex>(M + 1, M + 1, Complex{});

    std::vector<double> row_bounds(M, 0.0);
    detail::parallel_for(M, workers, [&](std::size_t i) {
        if (method == WqMethod::Volterra) {
            if (detail::real_fast_path(q)) {
                std::vector<double> row;
                detail::volterra_row(m, q.real(), i, row);
                for (std::size_t j = i; j <= M; ++j) ev.wq(i, j) = row[j];
            } else {
                std::vector<Complex> row;
                detail::volterra_row(m, q, i, row);
                for (std::size_t j = i; j <= M; ++j) ev.wq(i, j) = row[j];
            }
        } else {
            if (detail::real_fast_path(q)) {
                std::vector<double> row;
                row_bounds[i] = detail::series_row(m, q.real(), i, tol, row);
                for (std::size_t j = i; j <= M; ++j) ev.wq(i, j) = row[j];
            } else {
                std::vector<Complex> row;
                row_bounds[i] = detail::series_row(m, q, i, tol, row);
                for (std::size_t j = i; j <= M; ++j) ev.wq(i, j) = row[j];
            }
        }
    });
    ev.trunc_error = method == WqMethod::Volterra
                         ? 0.0
                         : *std::max_element(row_bounds.begin(), row_bounds.end());
    return ev;
}

/// Z^{(q)}(x_i, x_j) = 1 + q int_{(x_i, x_j)} W^{(q)}(x_i, u) m(du); with j
/// omitted, the right end is used (the Z^{(q)}(x) variant on a truncated
/// space, which requires an inaccessible right boundary).
inline Complex zq_eval(const ScaleEval& ev, std::size_t i, std::optional<std::size_t> j = {}) {
    const Model& m = *ev.model;
    std::size_t jj = j.value_or(m.top());
    if (!j && m.boundary != BoundaryCase::EntranceInfinity)
        throw std::invalid_argument("zq_eval: Z^{(q)}(x) needs an inaccessible right boundary");
    if (i > jj || jj > m.top()) throw std::out_of_range("zq_eval: bad window");
    if (i == jj) return Complex{1.0};
    return 1.0 + ev.q * detail::window_integral(m, ev.wq.row(i), i, jj);
}

/// Bound certifying the truncated Z^{(q)}(x) tail: |Z| <= 1 + |q| Wbar e^{|q| Wbar}.
inline double zq_inf_bound(const Model& m, Complex q, std::size_t i) {
    double wb = wbar(m, i).value;
    return 1.0 + std::abs(q) * wb * std::exp(std::abs(q) * wb);
}

struct ExitLaplace {
    Complex down;  // E[e^{-q tau_lower}; lower exit first]
    Complex up;    // E[e^{-q tau_upper}; upper exit first]
};

/// Two-sided exit transforms on the window (x_i, x_j) started from x_k:
/// down = W^{(q)}(k,j)/W^{(q)}(i,j), up = Z^{(q)}(k,j) - down * Z^{(q)}(i,j).
inline ExitLaplace exit_laplace(const Model& m, Complex q, std::size_t i, std::size_t k,
                                std::size_t j) {
    if (!(i <= k && k <= j && i < j) || j > m.top())
        throw std::out_of_range("exit_laplace: need i <= k <= j, i < j");
    std::vector<Complex> row_i = wq_row(m, q, i);
    std::vector<Complex> row_k = k == i ? row_i : wq_row(m, q, k);
    Complex denom = row_i[j];
    double scale = m.kernel.w0(i, j) * std::exp(std::abs(q) * wbar(m, i, j));
    if (std::abs(denom) <= 1e-12 * scale)
        throw PoleError("exit_laplace: W^{(q)}(x_i, x_j) is numerically zero (q near a Dirichlet-type zero)");
    Complex down = row_k[j] / denom;
    Complex z_k = 1.0 + (k == j ? Complex{} : q * detail::window_integral(m, row_k.data(), k, j));
    Complex z_i = 1.0 + q * detail::window_integral(m, row_i.data(), i, j);
    return {down, z_k - down * z_i};
}

struct IdentityResiduals {
    double res_w = 0.0;
    double res_z = 0.0;
    double res_r = 0.0;
};

namespace detail {

// Case-dependent numerator ratio and denominator of the one-sided resolvent
// density r^{(q)}(x, u).
struct DensityParts {
    std::vector<Complex> zfac;  // Z-type numerator per start index
    Complex denom;
};

inline DensityParts density_parts(const Model& m, const ScaleEval& ev) {
    const std::size_t M = m.top();
    DensityParts p;
    p.zfac.assign(M + 1, Complex{});
    if (m.boundary == BoundaryCase::KilledBoth) {
        for (std::size_t i = 0; i <= M; ++i) p.zfac[i] = ev.wq(i, M);
    } else {
        for (std::size_t i = 0; i <= M; ++i)
            p.zfac[i] = i == M ? Complex{1.0}
                               : 1.0 + ev.q * window_integral(m, ev.wq.row(i), i, M);
    }
    p.denom = p.zfac[0];
    return p;
}

}  // namespace detail

/// Maximum absolute defects, over all grid windows, of the three coupled
/// identities: W^{(q)} - W^{(r)} = (q-r) W^{(q)} (x) W^{(r)},
/// Z^{(q)} - Z^{(r)} = (q-r) W^{(q)} (x) Z^{(r)}, and the resolvent-density
/// identity. The discrete system satisfies them exactly, so the residuals
/// measure roundoff only.
inline IdentityResiduals identity_residuals(const Model& m, Complex q, Complex r,
                                            unsigned workers = 0) {
    const std::size_t M = m.top();
    ScaleEval evq = wq_eval(m, q, WqMethod::Volterra, 1e-10, workers);
    ScaleEval evr = wq_eval(m, r, WqMethod::Volterra, 1e-10, workers);
    const auto& w = m.measure.weights;

    IdentityResiduals out;

    // Z tables for both parameters.
    detail::Matrix<Complex> zq_tab(M + 1, M + 1, Complex{1.0});
    detail::Matrix<Complex> zr_tab(M + 1, M + 1, Complex{1.0});
    for (std::size_t i = 0; i <= M; ++i) {
        Complex accq{}, accr{};
        for (std::size_t j = i + 1; j <= M; ++j) {
            // running open-window sums; the end-weight term is added per (i,j)
            double ew = detail::end_weight(m, j);
            zq_tab(i, j) = 1.0 + q * (accq + evq.wq(i, j) * ew);
            zr_tab(i, j) = 1.0 + r * (accr + evr.wq(i, j) * ew);
            accq += evq.wq(i, j) * w[j];
            accr += evr.wq(i, j) * w[j];
        }
    }

    out.res_w = detail::parallel_max(M + 1, workers, [&](std::size_t i) {
        std::vector<Complex> conv(M + 1, Complex{});
        for (std::size_t k = i + 1; k < M; ++k) {
            Complex c = evq.wq(i, k) * w[k];
            if (c == Complex{}) continue;
            const Complex* rrow = evr.wq.row(k);
            for (std::size_t j = k + 1; j <= M; ++j) conv[j] += c * rrow[j];
        }
        double worst = 0.0;
        for (std::size_t j = i + 1; j <= M; ++j)
            worst = std::max(worst, std::abs(evq.wq(i, j) - evr.wq(i, j) - (q - r) * conv[j]));
        return worst;
    });

    out.res_z = detail::parallel_max(M + 1, workers, [&](std::size_t i) {
        std::vector<Complex> conv(M + 1, Complex{});
        for (std::size_t k = i + 1; k < M; ++k) {
            Complex c = evq.wq(i, k) * w[k];
            if (c == Complex{}) continue;
            const Complex* zrow = zr_tab.row(k);
            for (std::size_t j = k + 1; j <= M; ++j) conv[j] += c * zrow[j];
        }
        double worst = 0.0;
        for (std::size_t j = i + 1; j <= M; ++j) {
            Complex mid = conv[j] + evq.wq(i, j) * detail::end_weight(m, j);  // Z^{(r)}(j,j) = 1
            worst = std::max(worst, std::abs(zq_tab(i, j) - zr_tab(i, j) - (q - r) * mid));
        }
        return worst;
    });

    // Density identity uses the case-appropriate densities on the full space.
    auto pq = detail::density_parts(m, evq);
    auto pr = detail::density_parts(m, evr);
    auto denom_scale = [&](const ScaleEval& ev) {
        double mag = 1.0;
        for (std::size_t k = 1; k <= M; ++k) mag = std::max(mag, std::abs(ev.wq(0, k)));
        return 1.0 + std::abs(ev.q) * mag;
    };
    if (std::abs(pq.denom) <= 1e-13 * denom_scale(evq) ||
        std::abs(pr.denom) <= 1e-13 * denom_scale(evr))
        throw std::domain_error("identity_residuals: q or r is numerically on the zero set");

    detail::Matrix<Complex> dq(M + 1, M + 1, Complex{});
    detail::Matrix<Complex> dr(M + 1, M + 1, Complex{});
    for (std::size_t i = 1; i <= M; ++i)
        for (std::size_t u = 1; u <= M; ++u) {
            dq(i, u) = pq.zfac[i] / pq.denom * evq.wq(0, u) - evq.wq(i, u);
            dr(i, u) = pr.zfac[i] / pr.denom * evr.wq(0, u) - evr.wq(i, u);
        }
    out.res_r = detail::parallel_max(M, workers, [&](std::size_t idx) {
        std::size_t i = idx + 1;
        std::vector<Complex> mid(M + 1, Complex{});
        for (std::size_t u = 1; u <= M; ++u) {
            Complex c = dq(i, u) * w[u];
            if (c == Complex{}) continue;
            const Complex* rrow = dr.row(u);
            for (std::size_t j = 1; j <= M; ++j) mid[j] += c * rrow[j];
        }
        double worst = 0.0;
        for (std::size_t j = 1; j <= M; ++j)
            worst = std::max(worst, std::abs(dq(i, j) - dr(i, j) - (r - q) * mid[j]));
        return worst;
    });

    return out;
}

}  // namespace skipfree
