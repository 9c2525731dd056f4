#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "skipfree/models.hpp"
#include "skipfree/scale_engine.hpp"

namespace skipfree {

struct SpectralGapViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NoZeroInBox : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Which entire function carries the spectrum.
enum class DKind { ZInfinity, ZInterval, WInterval };

inline const char* to_string(DKind k) {
    switch (k) {
        case DKind::ZInfinity: return "Z(0)";
        case DKind::ZInterval: return "Z(0,ell)";
        case DKind::WInterval: return "W(0,ell)";
    }
    return "?";
}

struct SpectralProblem {
    const Model* model = nullptr;
    DKind kind = DKind::WInterval;
    double lambda_max = 50.0;  // real search depth
    double im_height = 20.0;   // imaginary half-height of the search box
    bool tail_certified = true;
};

inline SpectralProblem make_spectral_problem(const Model& m, double lambda_max = 50.0,
                                             double im_height = 20.0) {
    SpectralProblem p;
    p.model = &m;
    switch (m.boundary) {
        case BoundaryCase::EntranceInfinity: p.kind = DKind::ZInfinity; break;
        case BoundaryCase::ReflectingRight: p.kind = DKind::ZInterval; break;
        case BoundaryCase::KilledBoth: p.kind = DKind::WInterval; break;
    }
    p.lambda_max = lambda_max;
    p.im_height = im_height;
    return p;
}

struct DPair {
    Complex value;
    Complex derivative;
};

/// D(q) and dD/dq in one forward pass. The derivative is the exact
/// derivative of the discrete function, so Newton steps see no quadrature
/// mismatch.
inline DPair eval_D_pair(const SpectralProblem& p, Complex q) {
    const Model& m = *p.model;
    const std::size_t M = m.top();
    std::vector<Complex> row, drow;
    wq_row_with_derivative(m, q, 0, row, drow);
    if (p.kind == DKind::WInterval) return {row[M], drow[M]};
    Complex s = detail::window_integral(m, row.data(), std::size_t{0}, M);
    Complex ds = detail::window_integral(m, drow.data(), std::size_t{0}, M);
    return {1.0 + q * s, s + q * ds};
}

inline Complex eval_D(const SpectralProblem& p, Complex q) { return eval_D_pair(p, q).value; }
inline Complex eval_D_prime(const SpectralProblem& p, Complex q) { return eval_D_pair(p, q).derivative; }

struct DecayResult {
    double lambda0 = 0.0;
    double residual = 0.0;      // |D(-lambda0)|
    double dprime_abs = 0.0;    // |D'(-lambda0)|
    bool multiplicity_simple = true;
    bool newton_converged = true;
    int iterations = 0;
};

/// Smallest lambda > 0 with D(-lambda) = 0: geometric sign-change scan on
/// (0, lambda_max], then safeguarded Newton with a bisection fallback.
inline DecayResult decay_parameter(const SpectralProblem& p) {
    auto g = [&](double lam) { return eval_D_pair(p, Complex{-lam, 0.0}); };

    const double lam_min = p.lambda_max * 1e-10;
    double prev = lam_min;
    double gprev = g(prev).value.real();
    if (gprev == 0.0) prev = lam_min * 0.5, gprev = g(prev).value.real();
    double lo = 0.0, hi = 0.0;
    bool bracketed = false;
    for (double lam = lam_min * 1.5; lam <= p.lambda_max * 1.5000001; lam *= 1.5) {
        double cur = std::min(lam, p.lambda_max);
        double gcur = g(cur).value.real();
        if (gprev > 0.0 && gcur <= 0.0) {
            lo = prev;
            hi = cur;
            bracketed = true;
            break;
        }
        prev = cur;
        gprev = gcur;
        if (cur >= p.lambda_max) break;
    }
    if (!bracketed)
        throw NoZeroInBox("decay_parameter: no sign change on (0, lambda_max]; box too small or no zero");

    DecayResult out;
    double x = 0.5 * (lo + hi);
    bool newton_ok = true;
    for (int it = 0; it < 50; ++it) {
        out.iterations = it + 1;
        DPair d = g(x);
        double gx = d.value.real();
        double gpx = -d.derivative.real();  // d/dlambda D(-lambda)
        if (gx > 0.0) lo = x; else hi = x;
        double step = gpx != 0.0 ? gx / gpx : std::numeric_limits<double>::infinity();
        double next = x - step;
        if (!(next > lo && next < hi)) {
            next = 0.5 * (lo + hi);  // bisection fallback
            newton_ok = false;
        } else {
            newton_ok = true;
        }
        if (std::abs(next - x) <= 1e-14 * std::max(1.0, x)) {
            x = next;
            break;
        }
        x = next;
    }
    out.lambda0 = x;
    DPair fin = g(x);
    out.residual = std::abs(fin.value);
    out.dprime_abs = std::abs(fin.derivative);
    out.newton_converged = newton_ok;

    // Simple-root probe: |D| should behave linearly near the root.
    double h = 1e-4 * std::max(1.0, x);
    double side = std::abs(g(x + h).value.real());
    out.multiplicity_simple = out.dprime_abs > 0.0 && side > 0.25 * out.dprime_abs * h &&
                              side < 4.0 * out.dprime_abs * h;
    return out;
}

// ---------------------------------------------------------------------------
// Argument-principle zero search
// ---------------------------------------------------------------------------

struct Rect {
    double re_lo = 0.0, re_hi = 0.0, im_lo = 0.0, im_hi = 0.0;

    double width() const { return re_hi - re_lo; }
    double height() const { return im_hi - im_lo; }
    bool contains(Complex z, double slack = 0.0) const {
        return z.real() >= re_lo - slack && z.real() <= re_hi + slack &&
               z.imag() >= im_lo - slack && z.imag() <= im_hi + slack;
    }
};

struct WindingCell {
    Rect rect;
    double winding_raw = 0.0;  // boundary quadrature of D'/D before rounding
    long winding = 0;
    bool resolved = true;
};

struct FoundZero {
    Complex z;
    double residual = 0.0;
    std::size_t cell = 0;  // index into the certificate list
};

struct SpectrumReport {
    double lambda0 = std::numeric_limits<double>::quiet_NaN();
    double lambda1 = std::numeric_limits<double>::quiet_NaN();
    double gap = std::numeric_limits<double>::quiet_NaN();
    std::vector<FoundZero> zeros;          // descending real part, ties by ascending |Im|
    std::vector<WindingCell> certificates;
    std::vector<Rect> unresolved;          // cells where multiplicity or quadrature stayed unresolved
    bool winding_consistent = true;        // total winding equals the number of zeros found
    bool tail_certified = true;
    std::string box_note;
};

namespace detail {

struct EdgeAccumulator {
    double arg_sum = 0.0;       // sum of principal phase increments
    Complex quad_sum{};         // trapezoid of D'/D
    double min_abs_d = std::numeric_limits<double>::infinity();
};

struct DSample {
    Complex z, d, dp;
};

// Recursive refinement of one boundary segment: accept a step only when the
// phase increment is small and the trapezoid of D'/D agrees with the exact
// log-ratio along the step. Near dips of |D| the log-ratio of two
// cancellation-noisy values stops improving under refinement while the
// quadrature term stays accurate; a segment whose mismatch no longer shrinks
// relative to its parent is accepted as noise-bound.
inline bool refine_segment(const SpectralProblem& p, const DSample& a, const DSample& b,
                           int depth, double parent_mismatch, EdgeAccumulator& acc) {
    if (a.d == Complex{} || b.d == Complex{}) return false;
    Complex ratio = b.d / a.d;
    double darg = std::arg(ratio);
    Complex logr = std::log(std::abs(ratio)) + Complex{0.0, darg};
    Complex trap = 0.5 * (a.dp / a.d + b.dp / b.d) * (b.z - a.z);
    double mismatch = std::abs(trap - logr);
    bool tight = mismatch <= 1e-9 * (1.0 + std::abs(logr)) + 1e-9;
    bool stalled = mismatch <= 1e-7 && mismatch >= 0.2 * parent_mismatch;
    if (std::abs(darg) <= 1.2 && (tight || stalled)) {
        acc.arg_sum += darg;
        acc.quad_sum += trap;
        acc.min_abs_d = std::min({acc.min_abs_d, std::abs(a.d), std::abs(b.d)});
        return true;
    }
    if (depth <= 0) return false;
    Complex zm = 0.5 * (a.z + b.z);
    DPair fm = eval_D_pair(p, zm);
    DSample mid{zm, fm.value, fm.derivative};
    return refine_segment(p, a, mid, depth - 1, mismatch, acc) &&
           refine_segment(p, mid, b, depth - 1, mismatch, acc);
}

inline bool winding_number(const SpectralProblem& p, const Rect& r, double& raw, long& rounded) {
    const Complex corners[5] = {
        {r.re_lo, r.im_lo}, {r.re_hi, r.im_lo}, {r.re_hi, r.im_hi}, {r.re_lo, r.im_hi},
        {r.re_lo, r.im_lo}};
    EdgeAccumulator acc;
    const int initial = 8;
    for (int e = 0; e < 4; ++e) {
        DSample prev;
        for (int s = 0; s <= initial; ++s) {
            double t = static_cast<double>(s) / initial;
            Complex z = corners[e] + t * (corners[e + 1] - corners[e]);
            DPair f = eval_D_pair(p, z);
            DSample cur{z, f.value, f.derivative};
            if (s > 0 &&
                !refine_segment(p, prev, cur, 28, std::numeric_limits<double>::infinity(), acc))
                return false;
            prev = cur;
        }
    }
    const double two_pi = 2.0 * 3.14159265358979323846;
    raw = acc.quad_sum.imag() / two_pi;
    rounded = std::lround(acc.arg_sum / two_pi);
    // Quadrature certificate must agree with the phase count.
    return std::abs(raw - static_cast<double>(rounded)) < 1e-6;
}

// Winding with boundary-perturbation retries for boundaries passing near a zero.
inline bool winding_with_retries(const SpectralProblem& p, Rect r, double& raw, long& rounded,
                                 Rect& used) {
    double dx = std::max(r.width(), 1e-8), dy = std::max(r.height(), 1e-8);
    for (int attempt = 0; attempt < 4; ++attempt) {
        if (winding_number(p, r, raw, rounded)) {
            used = r;
            return true;
        }
        double fx = 7.3e-3 * (attempt + 1) * dx, fy = 6.1e-3 * (attempt + 1) * dy;
        r.re_lo -= fx;
        r.re_hi += 0.83 * fx;
        r.im_lo -= fy;
        r.im_hi += 0.77 * fy;
    }
    return false;
}

inline bool newton_polish(const SpectralProblem& p, Complex start, Complex& zero, double& residual) {
    Complex z = start;
    for (int it = 0; it < 80; ++it) {
        DPair f = eval_D_pair(p, z);
        if (f.derivative == Complex{}) return false;
        Complex step = f.value / f.derivative;
        z -= step;
        if (std::abs(step) <= 1e-13 * (1.0 + std::abs(z))) {
            zero = z;
            residual = std::abs(eval_D(p, z));
            return true;
        }
    }
    return false;
}

}  // namespace detail

/// Zeros of D inside a rectangle by recursive quadrisection with winding
/// certificates, Newton-polished. Cells whose winding stays above one at the
/// minimal size are reported unresolved rather than guessed.
inline SpectrumReport spectrum_in_rect(const SpectralProblem& p, Rect top) {
    SpectrumReport rep;
    rep.tail_certified = p.tail_certified;

    struct Item {
        Rect r;
        int depth;
    };
    std::vector<Item> stack{{top, 0}};
    const double min_diag = 1e-7 * std::hypot(top.width(), top.height());
    long total_winding = -1;

    while (!stack.empty()) {
        Item item = stack.back();
        stack.pop_back();
        double raw = 0.0;
        long w = 0;
        Rect used = item.r;
        if (!detail::winding_with_retries(p, item.r, raw, w, used)) {
            rep.unresolved.push_back(item.r);
            rep.winding_consistent = false;
            continue;
        }
        rep.certificates.push_back({used, raw, w, true});
        const std::size_t cell_index = rep.certificates.size() - 1;
        if (item.depth == 0 && total_winding < 0) total_winding = w;
        if (w == 0) continue;

        bool handled = false;
        if (w == 1) {
            // Newton from the center, then from quarter points if it strays.
            const Complex c{0.5 * (item.r.re_lo + item.r.re_hi), 0.5 * (item.r.im_lo + item.r.im_hi)};
            const Complex starts[5] = {
                c,
                {item.r.re_lo + 0.25 * item.r.width(), item.r.im_lo + 0.25 * item.r.height()},
                {item.r.re_lo + 0.75 * item.r.width(), item.r.im_lo + 0.25 * item.r.height()},
                {item.r.re_lo + 0.25 * item.r.width(), item.r.im_lo + 0.75 * item.r.height()},
                {item.r.re_lo + 0.75 * item.r.width(), item.r.im_lo + 0.75 * item.r.height()}};
            for (const Complex& s : starts) {
                Complex z;
                double res;
                // Strict containment: a polished zero belonging to a
                // neighboring cell must not be credited to this one.
                if (detail::newton_polish(p, s, z, res) &&
                    item.r.contains(z, 1e-12 * (1.0 + std::abs(z))) &&
                    top.contains(z, 1e-9 * (1.0 + std::abs(z)))) {
                    rep.zeros.push_back({z, res, cell_index});
                    handled = true;
                    break;
                }
            }
        }
        if (!handled) {
            if (std::hypot(item.r.width(), item.r.height()) < min_diag) {
                rep.certificates.back().resolved = false;
                rep.unresolved.push_back(item.r);
                continue;
            }
            // Quadrisect slightly off-center so real-axis zeros do not land on
            // cell edges.
            double xm = item.r.re_lo + 0.53 * item.r.width();
            double ym = item.r.im_lo + 0.47 * item.r.height();
            stack.push_back({{item.r.re_lo, xm, item.r.im_lo, ym}, item.depth + 1});
            stack.push_back({{xm, item.r.re_hi, item.r.im_lo, ym}, item.depth + 1});
            stack.push_back({{item.r.re_lo, xm, ym, item.r.im_hi}, item.depth + 1});
            stack.push_back({{xm, item.r.re_hi, ym, item.r.im_hi}, item.depth + 1});
        }
    }

    // Dedupe zeros found in overlapping (perturbed) cells.
    std::vector<FoundZero> unique;
    for (const auto& z : rep.zeros) {
        bool dup = false;
        for (const auto& u : unique)
            if (std::abs(z.z - u.z) <= 1e-7 * (1.0 + std::abs(z.z))) dup = true;
        if (!dup) unique.push_back(z);
    }
    rep.zeros = std::move(unique);
    std::sort(rep.zeros.begin(), rep.zeros.end(), [](const FoundZero& a, const FoundZero& b) {
        if (a.z.real() != b.z.real()) return a.z.real() > b.z.real();
        return std::abs(a.z.imag()) < std::abs(b.z.imag());
    });
    if (total_winding >= 0 && static_cast<long>(rep.zeros.size()) != total_winding)
        rep.winding_consistent = false;
    return rep;
}

/// Decay parameter plus the rest of the spectrum in the search box;
/// asserts the spectral gap and reports it relative to the box.
inline SpectrumReport spectral_gap(const SpectralProblem& p) {
    DecayResult dec = decay_parameter(p);
    Rect box{-p.lambda_max, -1e-9 * std::max(1.0, dec.lambda0), -p.im_height, p.im_height};
    SpectrumReport rep = spectrum_in_rect(p, box);
    rep.lambda0 = dec.lambda0;

    std::vector<FoundZero> others;
    bool matched = false;
    for (const auto& z : rep.zeros) {
        if (!matched && std::abs(z.z - Complex{-dec.lambda0, 0.0}) <= 1e-6 * (1.0 + dec.lambda0)) {
            matched = true;
            continue;
        }
        others.push_back(z);
    }
    if (!matched)
        throw NoZeroInBox("spectral_gap: box scan did not recover -lambda0");
    if (others.empty()) {
        rep.lambda1 = p.lambda_max;
        rep.box_note = "no further zeros with Re q >= -lambda_max; lambda1 is a box-relative bound";
    } else {
        rep.lambda1 = -others.front().z.real();
        rep.box_note = "zeros with Re q < -lambda_max are unexamined";
    }
    if (!(rep.lambda1 > rep.lambda0 * (1.0 + 1e-9)))
        throw SpectralGapViolation("spectral_gap: lambda1 <= lambda0; numerical or model problem");
    rep.gap = rep.lambda1 - rep.lambda0;
    return rep;
}

// ---------------------------------------------------------------------------
// Right-boundary classification
// ---------------------------------------------------------------------------

/// E_x[time to come down below x_b], computed on (x_b, truncation] with the
/// downward-hit probability supplied by the caller (1 for the shipped
/// conservative-above models).
inline TailValue expected_downcrossing_time(const Model& m, std::size_t x_idx, std::size_t b_idx,
                                            double p_down = 1.0) {
    if (b_idx > x_idx || x_idx > m.top()) throw std::out_of_range("expected_downcrossing_time: need b <= x");
    const std::size_t M = m.top();
    std::vector<double> f(M + 1, 0.0);
    for (std::size_t u = b_idx + 1; u <= M; ++u)
        f[u] = m.kernel.w0(b_idx, u) * p_down - m.kernel.w0(x_idx, u);
    return {detail::window_integral(m, f.data(), b_idx, M),
            m.grid.right_end.kind == RightEndKind::Truncation};
}

struct BoundaryClassification {
    bool entrance = false;
    bool conclusive = false;
    bool cross_check_agrees = false;
    std::vector<std::pair<double, double>> wbar_tail;  // (level, wbar(b, level top))
    std::vector<double> sample_fractions{0.5, 0.75, 1.0};
    std::vector<std::vector<double>> hitting_times;    // per level, per sample fraction
    std::string note;
};

/// Entrance test: wbar(b, L) must stabilize along a growing truncation
/// schedule; cross-checked against boundedness of expected down-crossing
/// times from starting points that climb with the truncation.
inline BoundaryClassification classify_boundary(const TruncationFamily& fam, double b_value,
                                                double rtol = 1e-6) {
    if (fam.levels.size() < 3)
        throw std::invalid_argument("classify_boundary: need at least 3 truncation levels");
    BoundaryClassification out;

    for (double level : fam.levels) {
        Model m = fam.build(level);
        if (m.boundary != BoundaryCase::EntranceInfinity ||
            m.grid.right_end.kind != RightEndKind::Truncation)
            throw std::invalid_argument("classify_boundary: not an infinity-boundary model");
        std::size_t b_idx = 0;
        while (b_idx + 1 < m.top() && m.grid.points[b_idx + 1] <= b_value) ++b_idx;
        if (b_idx == 0)
            throw std::invalid_argument("classify_boundary: reference level b below the first grid point");
        double tail = wbar(m, b_idx).value;
        if (!out.wbar_tail.empty() && tail < out.wbar_tail.back().second * (1.0 - 1e-12))
            throw std::runtime_error("classify_boundary: tail sums are not monotone; model error");
        out.wbar_tail.emplace_back(level, tail);

        std::vector<double> times;
        for (double frac : out.sample_fractions) {
            auto x_idx = static_cast<std::size_t>(std::lround(frac * static_cast<double>(m.top())));
            x_idx = std::max(x_idx, b_idx);
            times.push_back(expected_downcrossing_time(m, x_idx, b_idx).value);
        }
        out.hitting_times.push_back(std::move(times));
    }

    // Under a geometric truncation schedule the tail-sum increments of a
    // summable row decay geometrically (ratio < 1); a divergent row keeps its
    // increments level or growing. The increment ratio is the verdict.
    const std::size_t n = out.wbar_tail.size();
    double last = out.wbar_tail[n - 1].second;
    double d_last = last - out.wbar_tail[n - 2].second;
    double d_prev = out.wbar_tail[n - 2].second - out.wbar_tail[n - 3].second;
    double frac = d_last / std::max(std::abs(last), 1e-300);
    double ratio = d_last / std::max(d_prev, 1e-300);

    if (frac < rtol) {
        out.entrance = true;
        out.conclusive = true;
        out.note = "tail sums stabilized outright";
    } else if (ratio <= 0.8) {
        out.entrance = true;
        out.conclusive = true;
        out.note = "tail-sum increments decay geometrically; extrapolated tail is finite";
    } else if (ratio >= 0.95) {
        out.entrance = false;
        out.conclusive = true;
        out.note = "tail-sum increments do not decay";
    } else {
        out.note = "truncation schedule inconclusive";
    }

    double sup_last = *std::max_element(out.hitting_times[n - 1].begin(), out.hitting_times[n - 1].end());
    double sup_prev = *std::max_element(out.hitting_times[n - 2].begin(), out.hitting_times[n - 2].end());
    bool times_bounded = sup_last <= sup_prev * 1.05 + rtol;
    out.cross_check_agrees = !out.conclusive || (out.entrance == times_bounded);
    return out;
}

}  // namespace skipfree
