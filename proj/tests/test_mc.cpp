#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "skipfree/checks.hpp"
#include "skipfree/mc.hpp"
#include "skipfree/oracle.hpp"

using namespace skipfree;
using Catch::Approx;

namespace {

ChainSpec two_state() {
    ChainSpec s;
    s.n_states = 2;
    s.boundary = BoundaryCase::ReflectingRight;
    s.rates = {{1, 0, 1.0}, {1, 2, 1.0}, {2, 1, 1.0}};
    return s;
}

std::vector<double> buckets(double dt, double horizon) {
    std::vector<double> b;
    for (double t = 0.0; t <= horizon + 1e-12; t += dt) b.push_back(t);
    return b;
}

QsdBundle two_state_bundle(Model& m) {
    auto p = make_spectral_problem(m);
    return qsd_bundle(p, decay_parameter(p).lambda0);
}

}  // namespace

TEST_CASE("identical seed and workers give identical ensembles; worker count does not matter") {
    SimSpec s;
    s.horizon = 8.0;
    s.paths = 20000;
    s.seed = 99;
    s.bucket_times = buckets(0.5, 8.0);
    s.workers = 2;
    auto a = simulate(two_state(), 2, s);
    auto b = simulate(two_state(), 2, s);
    CHECK(a.survivors == b.survivors);
    CHECK(a.hist == b.hist);
    s.workers = 1;
    auto c = simulate(two_state(), 2, s);
    CHECK(a.survivors == c.survivors);
    CHECK(a.hist == c.hist);
    s.seed = 100;
    auto d = simulate(two_state(), 2, s);
    CHECK(a.survivors != d.survivors);
}

TEST_CASE("single-state death chain reproduces the exponential law") {
    ChainSpec s;
    s.n_states = 1;
    s.boundary = BoundaryCase::ReflectingRight;
    s.rates = {{1, 0, 1.0}};
    SimSpec spec;
    spec.horizon = 5.0;
    spec.paths = 100000;
    spec.seed = 7;
    spec.bucket_times = {0.5, 1.0, 2.0, 3.0, 5.0};
    auto e = simulate(s, 1, spec);
    for (std::size_t k = 0; k < spec.bucket_times.size(); ++k) {
        double t = spec.bucket_times[k];
        double p = std::exp(-t);
        double se = std::sqrt(p * (1.0 - p) / static_cast<double>(spec.paths));
        double observed = static_cast<double>(e.survivors[k]) / static_cast<double>(spec.paths);
        CHECK(std::abs(observed - p) < 3.0 * se);
    }
}

TEST_CASE("two-state conditional histogram approaches the Perron weights") {
    SimSpec spec;
    spec.horizon = 15.0;
    spec.paths = 100000;
    spec.seed = 42;
    spec.bucket_times = {15.0};
    auto e = simulate(two_state(), 2, spec);
    auto n = static_cast<double>(e.survivors[0]);
    REQUIRE(n > 100);
    double p1 = static_cast<double>(e.hist[0][1]) / n;
    double se = std::sqrt(0.382 * 0.618 / n);
    CHECK(std::abs(p1 - 0.38196601) < 3.0 * se);
}

TEST_CASE("killed Brownian survival matches the finite-difference heat kernel") {
    auto spec = sample_diffusion([](double) { return 0.0; }, [](double) { return 1.0; }, 1.0, 257,
                                 BoundaryCase::KilledBoth);
    SimSpec s;
    s.horizon = 0.3;
    s.paths = 20000;
    s.seed = 5;
    s.step = 1e-4;
    s.bucket_times = {0.3};
    auto e = simulate(spec, 0.5, s);
    auto g = fd_sub_generator(spec);
    std::vector<double> ones(g.states.size(), 1.0);
    auto pt1 = transition_oracle(g, 0.3, ones);
    double expect = pt1[127];  // grid point 0.5
    double observed = static_cast<double>(e.survivors[0]) / static_cast<double>(s.paths);
    double se = std::sqrt(expect * (1.0 - expect) / static_cast<double>(s.paths));
    // 3 SE plus the documented O(sqrt(step)) absorption bias
    CHECK(std::abs(observed - expect) < 3.0 * se + 3.0 * std::sqrt(s.step));
}

TEST_CASE("reflecting top keeps diffusion paths inside the interval") {
    auto spec = sample_diffusion([](double) { return 0.0; }, [](double) { return 1.0; }, 1.0, 129,
                                 BoundaryCase::ReflectingRight);
    SimSpec s;
    s.horizon = 0.5;
    s.paths = 2000;
    s.seed = 11;
    s.step = 1e-4;
    s.bucket_times = {0.25, 0.5};
    auto e = simulate(spec, 0.9, s);
    CHECK(e.survivors[1] > 0);
    for (const auto& bucket : e.hist) {
        CHECK(bucket[0] == 0);  // absorbing point never holds survivors
    }
}

TEST_CASE("Yaglom report on the two-state chain") {
    Model m = build_chain(two_state());
    auto bundle = two_state_bundle(m);
    SimSpec s;
    s.horizon = 15.0;
    s.paths = 100000;
    s.seed = 42;
    s.bucket_times = buckets(0.25, 15.0);
    auto e = simulate(two_state(), 2, s);
    auto rep = yaglom_report(e, bundle);

    SECTION("late-time TV sits at the noise floor") {
        double tv15 = rep.tv.back();
        auto n = static_cast<double>(rep.survivors.back());
        double se = std::sqrt(0.382 * 0.618 / n);
        CHECK(rep.t.back() == 15.0);
        CHECK(tv15 < 3.0 * se);
    }
    SECTION("fitted decay rate brackets the spectral gap") {
        double gap = std::sqrt(5.0);
        REQUIRE(std::isfinite(rep.fitted_rate));
        CHECK(rep.fitted_rate > 0.5 * gap);
        CHECK(rep.fitted_rate < 1.5 * gap);
    }
    SECTION("survival lifted by the decay rate flattens at the projection level") {
        // e^{lambda0 t} P_2[alive at t] -> zinv(2) nu(1)/(rho lambda0), with a
        // binomial band per bucket from the surviving-path count.
        double level = bundle.zinv[2] / (bundle.rho * bundle.lambda0);
        std::size_t checked = 0;
        for (std::size_t k = 0; k < rep.t.size(); ++k) {
            if (rep.t[k] < 6.0) continue;
            double lifted = std::exp(bundle.lambda0 * rep.t[k]) * rep.survival[k];
            double rel_band = 3.5 / std::sqrt(static_cast<double>(rep.survivors[k])) + 0.01;
            CHECK(std::abs(lifted - level) <= rel_band * level);
            ++checked;
        }
        CHECK(checked >= 3);
    }
}

TEST_CASE("ensemble started from the QSD stays at the noise floor") {
    Model m = build_chain(two_state());
    auto bundle = two_state_bundle(m);
    SimSpec s;
    s.horizon = 6.0;
    s.paths = 100000;
    s.seed = 13;
    s.bucket_times = buckets(0.5, 6.0);
    s.initial_weights = bundle.nu;
    auto e = simulate(two_state(), 2, s);
    auto rep = yaglom_report(e, bundle);
    for (std::size_t k = 0; k < rep.t.size(); ++k) CHECK(rep.tv[k] < 4.0 * rep.noise_floor[k]);
    CHECK_FALSE(std::isfinite(rep.fitted_rate));  // nothing above the floor to fit
}

TEST_CASE("diffusion paths can start from a distribution over grid cells") {
    auto spec = sample_diffusion([](double) { return 0.0; }, [](double) { return 1.0; }, 1.0, 65,
                                 BoundaryCase::ReflectingRight);
    SimSpec s;
    s.horizon = 0.2;
    s.paths = 4000;
    s.seed = 21;
    s.step = 5e-4;
    s.bucket_times = {0.0, 0.1, 0.2};
    s.initial_weights.assign(65, 0.0);
    s.initial_weights[32] = 0.5;  // half the paths from the midpoint,
    s.initial_weights[48] = 0.5;  // half from three quarters up
    auto e = simulate(spec, 0.0, s);
    CHECK(e.hist[0][32] + e.hist[0][48] == s.paths);
    CHECK(e.hist[0][32] > 1800);
    auto again = simulate(spec, 0.0, s);
    CHECK(e.hist == again.hist);
}

TEST_CASE("degenerate inputs are rejected") {
    Model m = build_chain(two_state());
    auto bundle = two_state_bundle(m);
    SECTION("no paths") {
        SimSpec s;
        s.paths = 0;
        s.bucket_times = {1.0};
        s.horizon = 2.0;
        CHECK_THROWS_AS(simulate(two_state(), 2, s), std::invalid_argument);
    }
    SECTION("empty ensemble") {
        SimEnsemble e;
        CHECK_THROWS_AS(yaglom_report(e, bundle), std::invalid_argument);
    }
    SECTION("start outside the transient set") {
        SimSpec s;
        s.paths = 10;
        s.horizon = 1.0;
        s.bucket_times = {0.5};
        CHECK_THROWS_AS(simulate(two_state(), 3, s), std::invalid_argument);
    }
}
