#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "skipfree/core_model.hpp"

namespace skipfree {

// ---------------------------------------------------------------------------
// Diffusions
// ---------------------------------------------------------------------------

/// One-dimensional diffusion dX = b(X)dt + sigma(X)dB on (0, right) with
/// coefficients sampled on a uniform grid.
struct DiffusionSpec {
    std::vector<double> drift;   // sampled at the grid points, size n_points
    std::vector<double> sigma;   // sampled at the grid points, size n_points
    double right = 1.0;
    std::size_t n_points = 0;    // grid points including 0 and right
    BoundaryCase boundary = BoundaryCase::KilledBoth;
};

inline DiffusionSpec sample_diffusion(const std::function<double(double)>& drift,
                                      const std::function<double(double)>& sigma,
                                      double right, std::size_t n_points, BoundaryCase bc) {
    DiffusionSpec spec;
    spec.right = right;
    spec.n_points = n_points;
    spec.boundary = bc;
    spec.drift.resize(n_points);
    spec.sigma.resize(n_points);
    for (std::size_t k = 0; k < n_points; ++k) {
        double x = right * static_cast<double>(k) / static_cast<double>(n_points - 1);
        spec.drift[k] = drift(x);
        spec.sigma[k] = sigma(x);
    }
    return spec;
}

/// Builds (grid, m, W, case) from a diffusion: s' = exp(-int 2b/sigma^2),
/// W(x,y) = s(y) - s(x), and m has density 2/(sigma^2 s') rendered as
/// trapezoid cell masses (half cells at the ends).
inline Model build_diffusion(const DiffusionSpec& spec) {
    const std::size_t n = spec.n_points;
    if (n < 3) throw std::invalid_argument("build_diffusion: need at least 3 grid points");
    if (spec.drift.size() != n || spec.sigma.size() != n)
        throw DimensionError("build_diffusion: coefficient samples do not match n_points");
    if (!(spec.right > 0.0)) throw std::invalid_argument("build_diffusion: right end must be positive");

    const std::size_t M = n - 1;
    Model m;
    m.boundary = spec.boundary;
    m.grid.points.resize(n);
    for (std::size_t k = 0; k < n; ++k)
        m.grid.points[k] = spec.right * static_cast<double>(k) / static_cast<double>(M);
    m.grid.right_end = spec.boundary == BoundaryCase::EntranceInfinity
                           ? RightEnd::truncation(spec.right)
                           : RightEnd::boundary(spec.right);

    std::vector<double> g(n), sprime(n), s(n), density(n);
    for (std::size_t k = 0; k < n; ++k) {
        if (!(spec.sigma[k] > 0.0))
            throw std::invalid_argument("build_diffusion: sigma must be positive on the grid");
        g[k] = 2.0 * spec.drift[k] / (spec.sigma[k] * spec.sigma[k]);
    }
    double acc = 0.0;
    sprime[0] = 1.0;
    for (std::size_t k = 1; k < n; ++k) {
        double h = m.grid.points[k] - m.grid.points[k - 1];
        acc += 0.5 * (g[k - 1] + g[k]) * h;
        sprime[k] = std::exp(-acc);
        if (!std::isfinite(sprime[k]))
            throw std::invalid_argument("build_diffusion: scale derivative overflow");
    }
    s[0] = 0.0;
    for (std::size_t k = 1; k < n; ++k) {
        double h = m.grid.points[k] - m.grid.points[k - 1];
        s[k] = s[k - 1] + 0.5 * (sprime[k - 1] + sprime[k]) * h;
    }
    for (std::size_t k = 0; k < n; ++k)
        density[k] = 2.0 / (spec.sigma[k] * spec.sigma[k] * sprime[k]);

    m.measure.kind = MeasureKind::Diffuse;
    m.measure.weights.assign(n, 0.0);
    for (std::size_t k = 1; k < M; ++k)
        m.measure.weights[k] = density[k] * 0.5 * (m.grid.points[k + 1] - m.grid.points[k - 1]);
    m.measure.weights[M] = density[M] * 0.5 * (m.grid.points[M] - m.grid.points[M - 1]);

    m.kernel.w0 = detail::Matrix<double>(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) m.kernel.w0(i, j) = s[j] - s[i];

    return m;
}

// ---------------------------------------------------------------------------
// Downward skip-free chains
// ---------------------------------------------------------------------------

struct RateEntry {
    std::size_t from = 0, to = 0;
    double rate = 0.0;
};

/// Continuous-time chain on states 1..N, absorbed at 0, with downward jumps
/// of size exactly one. `to = n_states + 1` marks an exit above the top
/// (used by truncations of infinite chains).
struct ChainSpec {
    std::size_t n_states = 0;
    std::vector<RateEntry> rates;
    BoundaryCase boundary = BoundaryCase::ReflectingRight;
};

inline ChainSpec birth_death_chain(std::size_t n_states,
                                   const std::function<double(std::size_t)>& birth,
                                   const std::function<double(std::size_t)>& death,
                                   BoundaryCase bc) {
    ChainSpec spec;
    spec.n_states = n_states;
    spec.boundary = bc;
    for (std::size_t i = 1; i <= n_states; ++i) {
        double d = death(i);
        if (d > 0.0) spec.rates.push_back({i, i - 1, d});
        double b = birth(i);
        // An up rate from the top state only makes sense as an exit above a
        // truncation; accessible-boundary chains must stay inside the space.
        if (b > 0.0 && (i < n_states || bc == BoundaryCase::EntranceInfinity))
            spec.rates.push_back({i, i + 1, b});
    }
    return spec;
}

namespace detail {

struct CompiledChain {
    std::size_t n = 0;
    // out[i] lists (to, rate) with to in 0..n+1; index 0 of the outer vector unused.
    std::vector<std::vector<std::pair<std::size_t, double>>> out;
    std::vector<double> total;  // total out rate per state
    std::vector<double> down;   // rate i -> i-1
    bool birth_death = true;
};

inline CompiledChain compile_chain(const ChainSpec& spec) {
    const std::size_t n = spec.n_states;
    if (n < 1) throw std::invalid_argument("chain: need at least one state");
    CompiledChain c;
    c.n = n;
    c.out.assign(n + 1, {});
    c.total.assign(n + 1, 0.0);
    c.down.assign(n + 1, 0.0);
    for (const auto& e : spec.rates) {
        if (e.from < 1 || e.from > n) throw std::invalid_argument("chain: rate from outside 1..N");
        if (!(e.rate >= 0.0) || !std::isfinite(e.rate))
            throw std::invalid_argument("chain: rates must be finite and nonnegative");
        if (e.rate == 0.0) continue;
        std::size_t to = std::min(e.to, n + 1);  // overshoots above the top fold into the exit
        if (to + 1 < e.from)
            throw std::invalid_argument("chain: downward jump of size >= 2 (not skip-free)");
        if (to == e.from) throw std::invalid_argument("chain: self-rate");
        if (to == n + 1 && spec.boundary != BoundaryCase::EntranceInfinity)
            throw std::invalid_argument("chain: exit above the top requires a truncated state space");
        c.out[e.from].emplace_back(to, e.rate);
        c.total[e.from] += e.rate;
        if (to + 1 == e.from) c.down[e.from] += e.rate;
        if (to != e.from - 1 && to != e.from + 1) c.birth_death = false;
    }
    for (std::size_t i = 1; i <= n; ++i) {
        std::sort(c.out[i].begin(), c.out[i].end());
        if (!(c.total[i] > 0.0))
            throw std::invalid_argument("chain: state " + std::to_string(i) + " has no outgoing rate");
    }
    if (!(c.down[1] > 0.0))
        throw std::invalid_argument("chain: state 1 needs a positive absorption rate to 0");
    return c;
}

// Window (a, top-exit): fills invdiag[u] = (A^{-1})_{uu} and h[u] = (A^{-1} r)_u
// for interior states u = a+1..n, where A = qI - Q restricted to the window and
// r carries the rate into state a. Vectors are indexed 1..n; entries outside
// the window are zero.
template <class S>
void chain_window_solve(const CompiledChain& c, std::size_t a, S q,
                        std::vector<S>& invdiag, std::vector<S>& h) {
    const std::size_t n = c.n;
    const std::size_t m = n - a;  // window size
    invdiag.assign(n + 1, S{});
    h.assign(n + 1, S{});
    if (m == 0) return;

    if (c.birth_death) {
        // A is tridiagonal: diag b_i = q + total(i), sub -down(i), super -up(i).
        std::vector<S> diag(m), sub(m), sup(m);
        for (std::size_t k = 0; k < m; ++k) {
            std::size_t state = a + 1 + k;
            diag[k] = q + c.total[state];
            sub[k] = S{-c.down[state]};
            double up = c.total[state] - c.down[state];
            sup[k] = S{-up};
        }
        // Diagonal of the inverse via the two-sided elimination recurrences.
        std::vector<S> dplus(m), dminus(m);
        dplus[0] = diag[0];
        for (std::size_t k = 1; k < m; ++k) dplus[k] = diag[k] - sub[k] * sup[k - 1] / dplus[k - 1];
        dminus[m - 1] = diag[m - 1];
        for (std::size_t k = m - 1; k-- > 0;) dminus[k] = diag[k] - sup[k] * sub[k + 1] / dminus[k + 1];
        for (std::size_t k = 0; k < m; ++k) invdiag[a + 1 + k] = S{1.0} / (dplus[k] + dminus[k] - diag[k]);
        // Thomas solve for h with rhs = down(a+1) e_1.
        std::vector<S> rhs(m, S{});
        rhs[0] = S{c.down[a + 1]};
        std::vector<S> cs(m), ds(m);
        cs[0] = sup[0] / diag[0];
        ds[0] = rhs[0] / diag[0];
        for (std::size_t k = 1; k < m; ++k) {
            S denom = diag[k] - sub[k] * cs[k - 1];
            cs[k] = sup[k] / denom;
            ds[k] = (rhs[k] - sub[k] * ds[k - 1]) / denom;
        }
        std::vector<S> x(m);
        x[m - 1] = ds[m - 1];
        for (std::size_t k = m - 1; k-- > 0;) x[k] = ds[k] - cs[k] * x[k + 1];
        for (std::size_t k = 0; k < m; ++k) h[a + 1 + k] = x[k];
        return;
    }

    using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
    Mat A = Mat::Zero(m, m);
    for (std::size_t k = 0; k < m; ++k) {
        std::size_t state = a + 1 + k;
        A(k, k) = q + c.total[state];
        for (const auto& [to, rate] : c.out[state])
            if (to > a && to <= n) A(k, to - a - 1) -= rate;
    }
    Eigen::PartialPivLU<Mat> lu(A);
    Mat inv = lu.inverse();
    Vec r = Vec::Zero(m);
    r(0) = S{c.down[a + 1]};
    Vec x = lu.solve(r);
    for (std::size_t k = 0; k < m; ++k) {
        invdiag[a + 1 + k] = inv(k, k);
        h[a + 1 + k] = x(k);
    }
}

}  // namespace detail

/// q-scale table of a chain from windowed resolvent solves: for each lower
/// barrier a the window (a, top-exit) yields the expected discounted
/// occupation G(u,u) and the down-exit transform h(u), and
/// W^{(q)}(a,u) = G(u,u)/h(u) with W(u,u) = 0.
struct ChainScaleTable {
    detail::Matrix<Complex> wq;
    double perturbation_error = 0.0;  // nonzero when a singular solve forced q to be nudged
};

inline ChainScaleTable chain_scale_direct(const ChainSpec& spec, Complex q) {
    auto c = detail::compile_chain(spec);
    const std::size_t n = c.n;
    ChainScaleTable table;
    table.wq = detail::Matrix<Complex>(n + 1, n + 1, Complex{});

    std::vector<Complex> invdiag, h;
    auto fill_row = [&](std::size_t a, Complex qq, bool& ok) {
        detail::chain_window_solve(c, a, qq, invdiag, h);
        ok = true;
        for (std::size_t u = a + 1; u <= n; ++u) {
            Complex w = invdiag[u] / h[u];
            if (!std::isfinite(w.real()) || !std::isfinite(w.imag()) || std::abs(w) > 1e150) ok = false;
            table.wq(a, u) = w;
        }
    };

    for (std::size_t a = 0; a < n; ++a) {
        bool ok = false;
        fill_row(a, q, ok);
        if (!ok) {
            // q sits on (or numerically at) an eigenvalue of the windowed
            // generator; evaluate at q(1 +- delta) and average.
            double delta = 1e-7 * std::max(1.0, std::abs(q));
            std::vector<Complex> lo(n + 1), hi(n + 1);
            bool ok1 = false, ok2 = false;
            fill_row(a, q + Complex{delta, delta}, ok1);
            for (std::size_t u = a + 1; u <= n; ++u) lo[u] = table.wq(a, u);
            fill_row(a, q - Complex{delta, delta}, ok2);
            for (std::size_t u = a + 1; u <= n; ++u) hi[u] = table.wq(a, u);
            if (!ok1 || !ok2)
                throw std::runtime_error("chain_scale_direct: singular window solve");
            double err = 0.0;
            for (std::size_t u = a + 1; u <= n; ++u) {
                table.wq(a, u) = 0.5 * (lo[u] + hi[u]);
                err = std::max(err, std::abs(lo[u] - hi[u]));
            }
            table.perturbation_error = std::max(table.perturbation_error, err);
        }
    }
    return table;
}

/// Assembles the (grid, counting measure, W, case) bundle of a chain. The
/// 0-scale kernel comes from the q = 0 windowed solves.
inline Model build_chain(const ChainSpec& spec) {
    auto c = detail::compile_chain(spec);
    const std::size_t n = c.n;

    Model m;
    m.boundary = spec.boundary;
    m.grid.points.resize(n + 1);
    for (std::size_t k = 0; k <= n; ++k) m.grid.points[k] = static_cast<double>(k);
    m.grid.right_end = spec.boundary == BoundaryCase::EntranceInfinity
                           ? RightEnd::truncation(static_cast<double>(n))
                           : RightEnd::boundary(static_cast<double>(n));
    m.measure.kind = MeasureKind::Atomic;
    m.measure.weights.assign(n + 1, 1.0);
    m.measure.weights[0] = 0.0;

    m.kernel.w0 = detail::Matrix<double>(n + 1, n + 1, 0.0);
    std::vector<double> invdiag, h;
    for (std::size_t a = 0; a < n; ++a) {
        detail::chain_window_solve(c, a, 0.0, invdiag, h);
        for (std::size_t u = a + 1; u <= n; ++u) {
            double w = invdiag[u] / h[u];
            if (!std::isfinite(w))
                throw std::runtime_error("build_chain: singular window solve (reducible chain?)");
            m.kernel.w0(a, u) = w;
        }
    }
    return m;
}

/// 0-scale row W(a, a+1..N) without assembling the whole kernel; used by
/// boundary classification at large truncation levels.
inline std::vector<double> chain_scale_row(const ChainSpec& spec, std::size_t a) {
    auto c = detail::compile_chain(spec);
    std::vector<double> invdiag, h;
    detail::chain_window_solve(c, a, 0.0, invdiag, h);
    std::vector<double> row(c.n + 1, 0.0);
    for (std::size_t u = a + 1; u <= c.n; ++u) row[u] = invdiag[u] / h[u];
    return row;
}

// ---------------------------------------------------------------------------
// Closed-form Brownian benchmark
// ---------------------------------------------------------------------------

struct ClosedFormBmSpec {
    double ell = 1.0;
    BoundaryCase boundary = BoundaryCase::KilledBoth;
    std::size_t n_points = 513;
};

namespace detail {

// sinh(sqrt(w))/sqrt(w) and cosh(sqrt(w)); both entire in w, so no branch issue.
inline Complex sinhc_sq(Complex w) {
    if (std::abs(w) < 1e-6)
        return 1.0 + w / 6.0 + w * w / 120.0 + w * w * w / 5040.0;
    Complex z = std::sqrt(w);
    return std::sinh(z) / z;
}

inline Complex cosh_sq(Complex w) {
    if (std::abs(w) < 1e-6)
        return 1.0 + w / 2.0 + w * w / 24.0 + w * w * w / 720.0;
    return std::cosh(std::sqrt(w));
}

}  // namespace detail

/// Closed forms for Brownian motion in natural scale with m = 2 * length:
/// W^{(q)}(x,y) = sinh(sqrt(2q)(y-x))/sqrt(2q), Z^{(q)}(x,y) = cosh(sqrt(2q)(y-x)).
struct BmOracle {
    double ell = 1.0;

    Complex w(Complex q, double x, double y) const {
        double d = y - x;
        return d * detail::sinhc_sq(2.0 * q * d * d);
    }
    Complex z(Complex q, double x, double y) const {
        double d = y - x;
        return detail::cosh_sq(2.0 * q * d * d);
    }
    double lambda0(BoundaryCase bc) const {
        const double pi = 3.14159265358979323846;
        if (bc == BoundaryCase::KilledBoth) return pi * pi / (2.0 * ell * ell);
        if (bc == BoundaryCase::ReflectingRight) return pi * pi / (8.0 * ell * ell);
        throw std::invalid_argument("BmOracle: no closed form for an inaccessible right end");
    }
    double lambda1(BoundaryCase bc) const {
        const double pi = 3.14159265358979323846;
        if (bc == BoundaryCase::KilledBoth) return 4.0 * pi * pi / (2.0 * ell * ell);
        if (bc == BoundaryCase::ReflectingRight) return 9.0 * pi * pi / (8.0 * ell * ell);
        throw std::invalid_argument("BmOracle: no closed form for an inaccessible right end");
    }
    double gap(BoundaryCase bc) const { return lambda1(bc) - lambda0(bc); }
    std::vector<double> zeros(BoundaryCase bc, std::size_t count) const {
        const double pi = 3.14159265358979323846;
        std::vector<double> zs;
        for (std::size_t k = 1; k <= count; ++k) {
            double z = bc == BoundaryCase::KilledBoth
                           ? -static_cast<double>(k * k) * pi * pi / (2.0 * ell * ell)
                           : -std::pow(2.0 * static_cast<double>(k) - 1.0, 2) * pi * pi / (8.0 * ell * ell);
            zs.push_back(z);
        }
        return zs;
    }
    double qsd_density(BoundaryCase bc, double x) const {
        const double pi = 3.14159265358979323846;
        if (bc == BoundaryCase::ReflectingRight)
            return pi / (2.0 * ell) * std::sin(pi * x / (2.0 * ell));
        if (bc == BoundaryCase::KilledBoth)
            return pi / (2.0 * ell) * std::sin(pi * x / ell);
        throw std::invalid_argument("BmOracle: no closed form for an inaccessible right end");
    }
};

struct BmModel {
    Model model;
    BmOracle oracle;
};

inline BmModel build_bm_closed_form(const ClosedFormBmSpec& spec) {
    if (spec.boundary == BoundaryCase::EntranceInfinity)
        throw std::invalid_argument("build_bm_closed_form: infinity is not an entrance boundary for Brownian motion");
    DiffusionSpec d = sample_diffusion([](double) { return 0.0; }, [](double) { return 1.0; },
                                       spec.ell, spec.n_points, spec.boundary);
    BmModel out;
    out.model = build_diffusion(d);
    out.oracle.ell = spec.ell;
    return out;
}

// ---------------------------------------------------------------------------
// Truncation families
// ---------------------------------------------------------------------------

/// The same model rebuilt at a growing sequence of truncation levels;
/// boundary classification refines along it.
struct TruncationFamily {
    std::vector<double> levels;
    std::function<Model(double level)> build;
};

inline TruncationFamily chain_truncation_family(const std::function<double(std::size_t)>& birth,
                                                const std::function<double(std::size_t)>& death,
                                                std::vector<double> levels) {
    TruncationFamily fam;
    fam.levels = std::move(levels);
    fam.build = [birth, death](double level) {
        auto spec = birth_death_chain(static_cast<std::size_t>(level), birth, death,
                                      BoundaryCase::EntranceInfinity);
        return build_chain(spec);
    };
    return fam;
}

inline TruncationFamily diffusion_truncation_family(const std::function<double(double)>& drift,
                                                    const std::function<double(double)>& sigma,
                                                    double points_per_unit,
                                                    std::vector<double> levels) {
    TruncationFamily fam;
    fam.levels = std::move(levels);
    fam.build = [drift, sigma, points_per_unit](double level) {
        auto n = static_cast<std::size_t>(std::lround(level * points_per_unit)) + 1;
        auto spec = sample_diffusion(drift, sigma, level, std::max<std::size_t>(n, 16),
                                     BoundaryCase::EntranceInfinity);
        return build_diffusion(spec);
    };
    return fam;
}

}  // namespace skipfree
