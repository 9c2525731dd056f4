#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "skipfree/detail/parallel.hpp"
#include "skipfree/models.hpp"
#include "skipfree/qsd.hpp"

namespace skipfree {

inline constexpr const char* kRngAlgorithm = "splitmix64/inverse-cdf/box-muller v1";

/// Per-path random stream derived from (master seed, path index); the
/// ensemble is therefore independent of how paths are dealt to workers.
class PathRng {
public:
    PathRng(std::uint64_t master, std::uint64_t path) {
        state_ = finalize(master + 0x9E3779B97F4A7C15ULL * (path + 1));
        state_ = finalize(state_ ^ 0x94D049BB133111EBULL);
    }

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return finalize(state_);
    }

    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double exponential(double rate) { return -std::log1p(-uniform01()) / rate; }

    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform01(), u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log1p(-u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

private:
    static std::uint64_t finalize(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_ = 0;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

struct SimSpec {
    double horizon = 10.0;
    std::size_t paths = 10000;
    std::uint64_t seed = 1;
    double step = 0.0;  // diffusions only; <= 0 selects the default
    std::vector<double> bucket_times;
    unsigned workers = 0;
    // Start law over grid indices; empty means a fixed starting point.
    std::vector<double> initial_weights;
};

struct SimEnsemble {
    std::uint64_t seed = 0;
    std::size_t paths = 0;
    double horizon = 0.0;
    double step = 0.0;
    std::string rng_algorithm = kRngAlgorithm;
    std::vector<double> bucket_times;
    std::vector<std::uint64_t> survivors;             // per bucket
    std::vector<std::vector<std::uint64_t>> hist;     // [bucket][grid index]
    std::vector<std::string> warnings;
};

namespace detail {

inline void check_sim_spec(const SimSpec& s) {
    if (s.paths < 1) throw std::invalid_argument("simulate: need at least one path");
    if (!(s.horizon > 0.0)) throw std::invalid_argument("simulate: horizon must be positive");
    for (double t : s.bucket_times)
        if (t < 0.0 || t > s.horizon) throw std::invalid_argument("simulate: bucket outside [0, horizon]");
    if (!std::is_sorted(s.bucket_times.begin(), s.bucket_times.end()))
        throw std::invalid_argument("simulate: bucket times must be sorted");
}

inline std::size_t draw_start(PathRng& rng, std::span<const double> weights) {
    double u = rng.uniform01();
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (u < acc) return i;
    }
    return weights.size() - 1;
}

struct BucketTally {
    std::vector<std::uint64_t> survivors;
    std::vector<std::vector<std::uint64_t>> hist;

    BucketTally(std::size_t buckets, std::size_t cells)
        : survivors(buckets, 0), hist(buckets, std::vector<std::uint64_t>(cells, 0)) {}

    void add(const BucketTally& other) {
        for (std::size_t b = 0; b < survivors.size(); ++b) {
            survivors[b] += other.survivors[b];
            for (std::size_t c = 0; c < hist[b].size(); ++c) hist[b][c] += other.hist[b][c];
        }
    }
};

}  // namespace detail

/// Event-driven simulation of a chain killed per its boundary case.
inline SimEnsemble simulate(const ChainSpec& spec, std::size_t x0, const SimSpec& s) {
    detail::check_sim_spec(s);
    auto c = detail::compile_chain(spec);
    const std::size_t n = c.n;
    const std::size_t kill_top = spec.boundary == BoundaryCase::KilledBoth ? n : n + 1;
    if ((x0 < 1 || x0 >= kill_top) && s.initial_weights.empty())
        throw std::invalid_argument("simulate: start state outside the transient set");
    if (!s.initial_weights.empty() && s.initial_weights.size() != n + 1)
        throw DimensionError("simulate: initial weights / state space mismatch");

    SimEnsemble out;
    out.seed = s.seed;
    out.paths = s.paths;
    out.horizon = s.horizon;
    out.bucket_times = s.bucket_times;
    const std::size_t nb = s.bucket_times.size();

    unsigned workers = detail::resolve_workers(s.workers);
    std::vector<detail::BucketTally> tally(workers, detail::BucketTally(nb, n + 1));
    detail::parallel_for(workers, workers, [&](std::size_t w) {
        auto& local = tally[w];
        for (std::size_t path = w; path < s.paths; path += workers) {
            PathRng rng(s.seed, path);
            std::size_t state = s.initial_weights.empty()
                                    ? x0
                                    : detail::draw_start(rng, s.initial_weights);
            double t = 0.0;
            std::size_t bi = 0;
            while (true) {
                double dt = rng.exponential(c.total[state]);
                double t_next = t + dt;
                while (bi < nb && s.bucket_times[bi] < t_next) {
                    local.survivors[bi] += 1;
                    local.hist[bi][state] += 1;
                    ++bi;
                }
                if (t_next > s.horizon) break;
                t = t_next;
                double u = rng.uniform01() * c.total[state];
                double acc = 0.0;
                std::size_t dest = 0;
                for (const auto& [to, rate] : c.out[state]) {
                    acc += rate;
                    if (u < acc) {
                        dest = to;
                        break;
                    }
                    dest = to;
                }
                if (dest == 0 || dest >= kill_top) break;  // absorbed / killed at the top
                state = dest;
            }
        }
    });
    detail::BucketTally total(nb, n + 1);
    for (const auto& part : tally) total.add(part);
    out.survivors = std::move(total.survivors);
    out.hist = std::move(total.hist);
    return out;
}

/// Euler scheme for a diffusion, absorbing at the first step whose endpoint
/// is <= 0; the top end reflects, kills, or stays open per the boundary case.
inline SimEnsemble simulate(const DiffusionSpec& spec, double x0, const SimSpec& s) {
    detail::check_sim_spec(s);
    const std::size_t M = spec.n_points - 1;
    const double R = spec.right;
    const double h = R / static_cast<double>(M);
    double sigma_max = 0.0;
    for (double v : spec.sigma) sigma_max = std::max(sigma_max, v);

    SimEnsemble out;
    out.seed = s.seed;
    out.paths = s.paths;
    out.horizon = s.horizon;
    out.bucket_times = s.bucket_times;
    out.step = s.step > 0.0 ? s.step : 1e-4 * R * R / (sigma_max * sigma_max);
    if (out.step > 0.01 * R * R / (sigma_max * sigma_max))
        out.warnings.push_back("step large relative to the diffusive scale; absorption bias grows like sqrt(step)");
    const double dt = out.step;
    const double sdt = std::sqrt(dt);
    const std::size_t nb = s.bucket_times.size();

    auto lerp = [&](const std::vector<double>& table, double x) {
        double pos = std::clamp(x / h, 0.0, static_cast<double>(M));
        auto k = static_cast<std::size_t>(pos);
        if (k >= M) return table[M];
        double f = pos - static_cast<double>(k);
        return table[k] * (1.0 - f) + table[k + 1] * f;
    };
    auto cell_of = [&](double x) {
        double pos = x / h + 0.5;
        auto k = static_cast<std::size_t>(std::max(pos, 1.0));
        return std::min(k, M);
    };

    unsigned workers = detail::resolve_workers(s.workers);
    std::vector<detail::BucketTally> tally(workers, detail::BucketTally(nb, M + 1));
    std::vector<char> escaped_flags(workers, 0);
    detail::parallel_for(workers, workers, [&](std::size_t w) {
        auto& local = tally[w];
        for (std::size_t path = w; path < s.paths; path += workers) {
            PathRng rng(s.seed, path);
            double x = x0;
            if (!s.initial_weights.empty()) {
                std::size_t idx = detail::draw_start(rng, s.initial_weights);
                x = idx * h;
            }
            double t = 0.0;
            std::size_t bi = 0;
            bool alive = true;
            while (alive) {
                while (bi < nb && s.bucket_times[bi] <= t + 1e-12 * dt) {
                    local.survivors[bi] += 1;
                    local.hist[bi][cell_of(x)] += 1;
                    ++bi;
                }
                if (t >= s.horizon || bi >= nb) break;
                x += lerp(spec.drift, x) * dt + lerp(spec.sigma, x) * sdt * rng.normal();
                t += dt;
                if (x <= 0.0) {
                    alive = false;
                } else if (spec.boundary == BoundaryCase::KilledBoth && x >= R) {
                    alive = false;
                } else if (spec.boundary == BoundaryCase::ReflectingRight && x > R) {
                    x = 2.0 * R - x;
                    if (x > R) x = R;
                } else if (spec.boundary == BoundaryCase::EntranceInfinity && x > 1.5 * R) {
                    escaped_flags[w] = 1;
                }
            }
        }
    });
    bool escaped = std::any_of(escaped_flags.begin(), escaped_flags.end(), [](char f) { return f != 0; });
    if (escaped) out.warnings.push_back("paths wandered above 1.5x the truncation level");
    detail::BucketTally total(nb, M + 1);
    for (const auto& part : tally) total.add(part);
    out.survivors = std::move(total.survivors);
    out.hist = std::move(total.hist);
    return out;
}

struct YaglomReport {
    std::vector<double> t;
    std::vector<std::uint64_t> survivors;
    std::vector<double> survival;
    std::vector<double> tv;
    std::vector<double> noise_floor;
    std::vector<double> dropped_buckets;
    double fitted_rate = std::numeric_limits<double>::quiet_NaN();
    double ci_half = std::numeric_limits<double>::quiet_NaN();
    std::size_t fit_begin = 0, fit_end = 0;  // [begin, end) into the kept arrays
};

/// Total-variation distance of the conditional-on-survival histogram to the
/// quasi-stationary weights, with a fitted exponential decay rate over the
/// window between the transient and the Monte Carlo noise floor.
inline YaglomReport yaglom_report(const SimEnsemble& e, const QsdBundle& b,
                                  std::uint64_t min_survivors = 25) {
    if (e.paths == 0 || e.bucket_times.empty())
        throw std::invalid_argument("yaglom_report: empty ensemble");
    if (e.hist.empty() || e.hist.front().size() != b.nu.size())
        throw DimensionError("yaglom_report: histogram cells do not match the grid");

    YaglomReport rep;
    for (std::size_t k = 0; k < e.bucket_times.size(); ++k) {
        std::uint64_t n = e.survivors[k];
        if (n < min_survivors) {
            rep.dropped_buckets.push_back(e.bucket_times[k]);
            continue;
        }
        double tv = 0.0, nf = 0.0;
        for (std::size_t i = 0; i < b.nu.size(); ++i) {
            double p = static_cast<double>(e.hist[k][i]) / static_cast<double>(n);
            tv += std::abs(p - b.nu[i]);
            nf += std::sqrt(b.nu[i] * (1.0 - b.nu[i]) / static_cast<double>(n));
        }
        rep.t.push_back(e.bucket_times[k]);
        rep.survivors.push_back(n);
        rep.survival.push_back(static_cast<double>(n) / static_cast<double>(e.paths));
        rep.tv.push_back(0.5 * tv);
        rep.noise_floor.push_back(0.5 * std::sqrt(2.0 / 3.14159265358979323846) * nf);
    }
    if (rep.t.empty()) throw std::runtime_error("yaglom_report: no bucket kept enough survivors");

    // Fit window: from the first bucket below TV = 0.5 through the last
    // bucket of the contiguous run still above 3x the noise floor. Isolated
    // late exceedances are noise, not signal.
    std::size_t begin = rep.t.size(), end = 0;
    for (std::size_t k = 0; k < rep.t.size(); ++k) {
        if (begin == rep.t.size() && rep.tv[k] < 0.5) begin = k;
        if (begin != rep.t.size() && k >= begin) {
            if (rep.tv[k] > 3.0 * rep.noise_floor[k]) end = k + 1;
            else break;
        }
    }
    if (begin < end && end - begin >= 3) {
        rep.fit_begin = begin;
        rep.fit_end = end;
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        auto n = static_cast<double>(end - begin);
        for (std::size_t k = begin; k < end; ++k) {
            double x = rep.t[k], y = std::log(rep.tv[k]);
            sx += x; sy += y; sxx += x * x; sxy += x * y;
        }
        double denom = n * sxx - sx * sx;
        double slope = (n * sxy - sx * sy) / denom;
        double intercept = (sy - slope * sx) / n;
        double ss = 0.0;
        for (std::size_t k = begin; k < end; ++k) {
            double r = std::log(rep.tv[k]) - (intercept + slope * rep.t[k]);
            ss += r * r;
        }
        double se = n > 2 ? std::sqrt(ss / (n - 2.0) / (sxx - sx * sx / n)) : 0.0;
        rep.fitted_rate = -slope;
        rep.ci_half = 1.96 * se;
    }
    return rep;
}

}  // namespace skipfree
