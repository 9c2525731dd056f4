#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "skipfree/detail/matrix.hpp"

namespace skipfree {

using Complex = std::complex<double>;

/// Structural error (wrong sizes / inconsistent containers), kept distinct
/// from invariant violations, which are reported as data.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

enum class RightEndKind { Truncation, Boundary };

struct RightEnd {
    RightEndKind kind = RightEndKind::Boundary;
    double value = 0.0;

    static RightEnd truncation(double level) { return {RightEndKind::Truncation, level}; }
    static RightEnd boundary(double ell) { return {RightEndKind::Boundary, ell}; }
};

/// Discretized state space. points[0] = 0 is the absorbing left endpoint;
/// indices 1..M carry the interior states (and, for an accessible right
/// boundary, index M is that boundary point).
struct StateGrid {
    std::vector<double> points;
    RightEnd right_end;

    std::size_t top() const { return points.size() - 1; }
    double spacing_max() const {
        double h = 0.0;
        for (std::size_t k = 1; k < points.size(); ++k) h = std::max(h, points[k] - points[k - 1]);
        return h;
    }
};

enum class MeasureKind { Diffuse, Atomic };

/// Mass attributed to each grid point. weights[0] is unused (the absorbing
/// point carries no mass) and must be zero.
struct ReferenceMeasure {
    std::vector<double> weights;
    MeasureKind kind = MeasureKind::Diffuse;
};

/// Two-argument table of the 0-scale function, W[i][j] = W(x_i, x_j).
/// Entries below the diagonal must be zero.
struct ScaleKernel {
    detail::Matrix<double> w0;
    bool zero_diagonal = true;
};

enum class BoundaryCase { EntranceInfinity, ReflectingRight, KilledBoth };

inline const char* to_string(BoundaryCase bc) {
    switch (bc) {
        case BoundaryCase::EntranceInfinity: return "entrance_infinity";
        case BoundaryCase::ReflectingRight: return "reflecting_right";
        case BoundaryCase::KilledBoth: return "killed_both";
    }
    return "?";
}

struct Model {
    StateGrid grid;
    ReferenceMeasure measure;
    ScaleKernel kernel;
    BoundaryCase boundary = BoundaryCase::KilledBoth;

    std::size_t top() const { return grid.top(); }
};

struct Violation {
    std::string code;
    std::size_t i = 0, j = 0;
    std::string detail;
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }
    std::string to_string() const {
        std::ostringstream os;
        for (const auto& v : violations)
            os << v.code << " at (" << v.i << "," << v.j << "): " << v.detail << "\n";
        return os.str();
    }
};

/// Checks every model invariant and returns the full list of violations.
/// Throws DimensionError when container sizes disagree, since index-based
/// reporting is meaningless in that case.
inline ValidationReport validate_model(const Model& m) {
    const std::size_t n = m.grid.points.size();
    if (n < 3) throw DimensionError("grid needs at least 3 points (x_0 = 0 plus M >= 2 states)");
    if (m.measure.weights.size() != n)
        throw DimensionError("measure/grid size mismatch");
    if (m.kernel.w0.rows() != n || m.kernel.w0.cols() != n)
        throw DimensionError("kernel/grid size mismatch");

    ValidationReport rep;
    auto add = [&](std::string code, std::size_t i, std::size_t j, std::string detail) {
        rep.violations.push_back({std::move(code), i, j, std::move(detail)});
    };

    if (m.grid.points[0] != 0.0) add("grid/left-endpoint", 0, 0, "x_0 must be 0");
    for (std::size_t k = 1; k < n; ++k) {
        if (!(m.grid.points[k] > m.grid.points[k - 1]))
            add("grid/not-increasing", k, k, "points must be strictly increasing");
        if (!std::isfinite(m.grid.points[k]))
            add("grid/not-finite", k, k, "non-finite grid point");
    }

    if (m.measure.weights[0] != 0.0) add("measure/mass-at-zero", 0, 0, "w_0 must be 0");
    for (std::size_t k = 1; k < n; ++k) {
        if (!(m.measure.weights[k] >= 0.0))
            add("measure/negative-weight", k, k, "w_k must be >= 0");
    }
    // Every window (i, j) with j >= i+2 must carry positive mass; the minimal
    // windows {k} for interior k are sufficient witnesses.
    for (std::size_t k = 1; k + 1 < n; ++k) {
        if (!(m.measure.weights[k] > 0.0))
            add("measure/window-mass", k, k, "interior point carries no mass");
    }

    const auto& w0 = m.kernel.w0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (j < i && w0(i, j) != 0.0)
                add("kernel/triangularity", i, j, "W must vanish below the diagonal");
            if (j > i && !(w0(i, j) > 0.0))
                add("kernel/positivity", i, j, "W(x,y) must be positive for x < y");
        }
    }
    if (m.measure.kind == MeasureKind::Diffuse) {
        for (std::size_t k = 1; k < n; ++k) {
            if (w0(k, k) * m.measure.weights[k] != 0.0)
                add("kernel/diagonal-mass", k, k, "W(x,x) m{x} must vanish for diffuse measures");
        }
    }

    const bool wants_truncation = m.boundary == BoundaryCase::EntranceInfinity;
    const bool has_truncation = m.grid.right_end.kind == RightEndKind::Truncation;
    if (wants_truncation != has_truncation)
        add("boundary-case/right-end-mismatch", n - 1, n - 1,
            wants_truncation ? "entrance case needs a truncated right end"
                             : "accessible boundary case needs a boundary right end");
    if (!has_truncation && m.grid.right_end.value != m.grid.points[n - 1])
        add("boundary-case/right-end-value", n - 1, n - 1, "boundary level must equal x_M");

    return rep;
}

enum class Closure { Open, ClosedRight };

/// Weighted sum of f over a grid window: strictly between i and j (Open)
/// or i < k <= j (ClosedRight).
inline double window_sum(const ReferenceMeasure& m, std::span<const double> f,
                         std::size_t i, std::size_t j, Closure closure) {
    if (f.size() != m.weights.size()) throw DimensionError("window_sum: f/measure size mismatch");
    if (i > j || j >= m.weights.size()) throw std::out_of_range("window_sum: bad window");
    double s = 0.0;
    for (std::size_t k = i + 1; k < j; ++k) s += f[k] * m.weights[k];
    if (closure == Closure::ClosedRight && j > i) s += f[j] * m.weights[j];
    return s;
}

}  // namespace skipfree
