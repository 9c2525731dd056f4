#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "skipfree/oracle.hpp"
#include "skipfree/qsd.hpp"

using namespace skipfree;
using Catch::Approx;

namespace {

const double kPi = 3.14159265358979323846;

BmModel bm(std::size_t n, BoundaryCase bc) { return build_bm_closed_form({1.0, bc, n}); }

ChainSpec two_state() {
    ChainSpec s;
    s.n_states = 2;
    s.boundary = BoundaryCase::ReflectingRight;
    s.rates = {{1, 0, 1.0}, {1, 2, 1.0}, {2, 1, 1.0}};
    return s;
}

double cell_length(const Model& m, std::size_t i) {
    const std::size_t M = m.top();
    if (i == M) return 0.5 * (m.grid.points[M] - m.grid.points[M - 1]);
    return 0.5 * (m.grid.points[i + 1] - m.grid.points[i - 1]);
}

struct Pipeline {
    Model model;
    SpectralProblem problem;
    QsdBundle bundle;
};

Pipeline qsd_pipeline(Model model, double lambda_max = 50.0) {
    Pipeline pl{std::move(model), {}, {}};
    pl.problem = make_spectral_problem(pl.model, lambda_max);
    pl.bundle = qsd_bundle(pl.problem, decay_parameter(pl.problem).lambda0);
    return pl;
}

}  // namespace

TEST_CASE("QSD densities match the Brownian closed forms") {
    SECTION("reflecting right end: (pi/2) sin(pi x / 2)") {
        auto pl = qsd_pipeline(bm(513, BoundaryCase::ReflectingRight).model);
        BmOracle oracle{1.0};
        for (std::size_t i : {64u, 256u, 480u, 512u}) {
            double x = pl.model.grid.points[i];
            double density = pl.bundle.nu[i] / cell_length(pl.model, i);
            CHECK(density == Approx(oracle.qsd_density(BoundaryCase::ReflectingRight, x)).epsilon(2e-4));
        }
        double at_end = pl.bundle.nu[512] / cell_length(pl.model, 512);
        CHECK(at_end == Approx(kPi / 2.0).epsilon(2e-4));
        CHECK(std::abs(pl.bundle.prenorm_sum - 1.0) < 1e-9);
        CHECK(pl.bundle.norm_const == 1.0);
    }
    SECTION("killed on both sides: (pi/2) sin(pi x)") {
        auto pl = qsd_pipeline(bm(513, BoundaryCase::KilledBoth).model);
        BmOracle oracle{1.0};
        for (std::size_t i : {64u, 128u, 256u, 400u}) {
            double x = pl.model.grid.points[i];
            double density = pl.bundle.nu[i] / cell_length(pl.model, i);
            CHECK(density == Approx(oracle.qsd_density(BoundaryCase::KilledBoth, x)).epsilon(5e-4));
        }
        CHECK(pl.bundle.norm_const > 0.0);  // normalizing constant reported
    }
}

TEST_CASE("two-state chain: QSD is the left Perron vector") {
    auto pl = qsd_pipeline(build_chain(two_state()));
    CHECK(pl.bundle.nu[1] == Approx(0.38196601125).margin(1e-9));
    CHECK(pl.bundle.nu[2] == Approx(0.61803398875).margin(1e-9));
    CHECK(pl.bundle.nu[1] + pl.bundle.nu[2] == Approx(1.0).margin(1e-15));
}

TEST_CASE("invariant function values") {
    SECTION("reflecting Brownian: sin(pi x / 2) with value 1 at the end") {
        auto pl = qsd_pipeline(bm(513, BoundaryCase::ReflectingRight).model);
        CHECK(pl.bundle.zinv[512] == 1.0);
        for (std::size_t i : {64u, 256u, 448u}) {
            double x = pl.model.grid.points[i];
            CHECK(pl.bundle.zinv[i] == Approx(std::sin(kPi * x / 2.0)).epsilon(2e-4));
        }
    }
    SECTION("rate 0 gives the constant function 1") {
        Model m = bm(129, BoundaryCase::ReflectingRight).model;
        auto p = make_spectral_problem(m);
        auto z = invariant_function(p, 0.0);
        for (std::size_t i : {1u, 64u, 128u}) CHECK(z[i] == 1.0);
    }
    SECTION("two-state chain: right Perron vector with top value 1") {
        auto pl = qsd_pipeline(build_chain(two_state()));
        CHECK(pl.bundle.zinv[2] == Approx(1.0).margin(1e-12));
        CHECK(pl.bundle.zinv[1] == Approx(0.61803398875).margin(1e-9));
    }
    SECTION("killed Brownian: W(x, ell) at the decay parameter is the sine shape") {
        auto pl = qsd_pipeline(bm(513, BoundaryCase::KilledBoth).model);
        // raw values: sin(pi (1-x)) / pi
        for (std::size_t i : {128u, 256u, 384u}) {
            double x = pl.model.grid.points[i];
            CHECK(pl.bundle.zinv[i] == Approx(std::sin(kPi * (1.0 - x)) / kPi).epsilon(5e-4).margin(1e-6));
        }
    }
}

TEST_CASE("rho values") {
    SECTION("reflecting Brownian: 2/pi") {
        auto pl = qsd_pipeline(bm(1025, BoundaryCase::ReflectingRight).model);
        CHECK(pl.bundle.rho == Approx(2.0 / kPi).epsilon(1e-4));
        CHECK(pl.bundle.rho == Approx(0.63662).epsilon(1e-4));
    }
    SECTION("killed Brownian: 1/pi^2, confirmed by central differences") {
        auto pl = qsd_pipeline(bm(1025, BoundaryCase::KilledBoth).model);
        CHECK(pl.bundle.rho == Approx(1.0 / (kPi * kPi)).epsilon(1e-3));
        double h = 1e-5;
        double fd = (eval_D(pl.problem, Complex{-pl.bundle.lambda0 + h, 0.0}).real() -
                     eval_D(pl.problem, Complex{-pl.bundle.lambda0 - h, 0.0}).real()) /
                    (2.0 * h);
        CHECK(pl.bundle.rho == Approx(fd).epsilon(1e-8));
    }
    SECTION("two-state chain: central-difference agreement") {
        auto pl = qsd_pipeline(build_chain(two_state()));
        double h = 1e-6;
        double fd = (eval_D(pl.problem, Complex{-pl.bundle.lambda0 + h, 0.0}).real() -
                     eval_D(pl.problem, Complex{-pl.bundle.lambda0 - h, 0.0}).real()) /
                    (2.0 * h);
        CHECK(pl.bundle.rho == Approx(fd).margin(1e-8));
        CHECK(pl.bundle.rho == Approx(std::sqrt(5.0)).margin(1e-9));
    }
}

TEST_CASE("resolvent density") {
    auto b = bm(513, BoundaryCase::KilledBoth);
    auto p = make_spectral_problem(b.model);
    SECTION("killed Brownian Green value at the midpoint") {
        double expect = std::pow(std::sinh(std::sqrt(2.0) / 2.0), 2) /
                        (std::sqrt(2.0) * std::sinh(std::sqrt(2.0)));
        CHECK(resolvent_density(p, Complex{1.0, 0.0}, 256, 256).real() == Approx(expect).epsilon(1e-4));
        CHECK(resolvent_density(p, Complex{1.0, 0.0}, 256, 256).real() == Approx(0.21527).epsilon(1e-3));
    }
    SECTION("killed immediately at the absorbing point") {
        CHECK(std::abs(resolvent_density(p, Complex{1.0, 0.0}, 0, 137)) == 0.0);
    }
    SECTION("integrating the density gives the resolvent of 1") {
        // sum_u r(x,u) w_u = (1 - E_x e^{-q (exit time)}) / q, exactly on the grid
        const Model& m = b.model;
        const std::size_t M = m.top();
        for (std::size_t x : {128u, 256u, 420u}) {
            Complex q{1.0, 0.0};
            Complex acc{};
            for (std::size_t u = 1; u <= M; ++u)
                acc += resolvent_density(p, q, x, u) * m.measure.weights[u];
            auto e = exit_laplace(m, q, 0, x, M);
            Complex expect = (1.0 - e.down - e.up) / q;
            CHECK(std::abs(acc - expect) < 1e-8);
        }
    }
    SECTION("q on the zero set is rejected with a pole hint") {
        auto pl = qsd_pipeline(bm(257, BoundaryCase::KilledBoth).model);
        CHECK_THROWS_AS(resolvent_density(pl.problem, Complex{-pl.bundle.lambda0, 0.0}, 100, 100),
                        PoleError);
    }
}

TEST_CASE("chain resolvent densities equal brute-force resolvent matrix entries") {
    // With the counting measure, r^{(q)}(x, u) must be [(qI - Q_sub)^{-1}]_{x u};
    // this checks the case formulas against plain linear algebra.
    for (auto bc : {BoundaryCase::ReflectingRight, BoundaryCase::KilledBoth}) {
        auto spec = birth_death_chain(
            9, [](std::size_t i) { return 0.6 + 0.1 * (i % 2); },
            [](std::size_t i) { return 0.5 + 0.3 * i; }, bc);
        Model m = build_chain(spec);
        auto p = make_spectral_problem(m);
        auto g = chain_sub_generator(spec);
        for (Complex q : {Complex{0.8, 0.0}, Complex{1.5, 2.0}, Complex{-0.05, 0.7}}) {
            Eigen::MatrixXcd a = q * Eigen::MatrixXcd::Identity(g.q.rows(), g.q.cols()) -
                                 g.q.cast<Complex>();
            Eigen::MatrixXcd inv = a.inverse();
            for (std::size_t xi = 0; xi < g.states.size(); ++xi)
                for (std::size_t ui = 0; ui < g.states.size(); ++ui) {
                    Complex expect = inv(static_cast<Eigen::Index>(xi), static_cast<Eigen::Index>(ui));
                    Complex got = resolvent_density(p, q, g.states[xi], g.states[ui]);
                    CHECK(std::abs(got - expect) < 1e-11 * (1.0 + std::abs(expect)));
                }
        }
    }
}

TEST_CASE("resolvent at the boundary point at infinity") {
    auto spec = birth_death_chain(
        60, [](std::size_t) { return 1.0; },
        [](std::size_t i) { return static_cast<double>(i * i); }, BoundaryCase::EntranceInfinity);
    Model m = build_chain(spec);
    auto p = make_spectral_problem(m);
    const std::size_t M = m.top();
    SECTION("f = 0 maps to 0") {
        std::vector<double> f(M + 1, 0.0);
        CHECK(std::abs(resolvent_at_infinity(p, Complex{1.0, 0.0}, f)) == 0.0);
    }
    SECTION("f = 1 reduces to (D - 1)/(q D)") {
        std::vector<double> f(M + 1, 1.0);
        Complex q{0.7, 0.0};
        Complex d = eval_D(p, q);
        CHECK(std::abs(resolvent_at_infinity(p, q, f) - (d - 1.0) / (q * d)) < 1e-12);
    }
    SECTION("agrees with the resolvent at the top state up to the truncation tail") {
        std::vector<double> f(M + 1, 1.0);
        Complex q{1.0, 0.0};
        Complex at_inf = resolvent_at_infinity(p, q, f);
        Complex acc{};
        for (std::size_t u = 1; u <= M; ++u)
            acc += resolvent_density(p, q, M, u) * m.measure.weights[u];
        CHECK(std::abs(at_inf - acc) < 1e-3);
    }
    SECTION("wrong case is refused") {
        auto b = bm(65, BoundaryCase::KilledBoth);
        auto pk = make_spectral_problem(b.model);
        std::vector<double> f(66, 1.0);
        CHECK_THROWS_AS(resolvent_at_infinity(pk, Complex{1.0, 0.0}, f), std::invalid_argument);
    }
}

TEST_CASE("Yaglom projection is a rank-one projection") {
    for (auto bc : {BoundaryCase::ReflectingRight, BoundaryCase::KilledBoth}) {
        auto pl = qsd_pipeline(bm(257, bc).model);
        const std::size_t n = pl.bundle.nu.size();
        SECTION(std::string("idempotence, case ") + to_string(bc)) {
            std::vector<double> f = pl.bundle.zinv;
            auto pf = yaglom_projection(pl.problem, pl.bundle, f);
            auto ppf = yaglom_projection(pl.problem, pl.bundle, pf);
            for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(ppf[i] - pf[i]) < 1e-10);
        }
        SECTION(std::string("zero maps to zero, case ") + to_string(bc)) {
            std::vector<double> zero(n, 0.0);
            auto pz = yaglom_projection(pl.problem, pl.bundle, zero);
            for (double v : pz) CHECK(v == 0.0);
        }
    }
}

TEST_CASE("projection agrees with the long-time oracle limit on the chain") {
    auto spec = two_state();
    auto pl = qsd_pipeline(build_chain(spec));
    auto g = chain_sub_generator(spec);
    std::vector<double> f = {0.0, 1.0, 0.0};  // indicator of state 1
    auto pf = yaglom_projection(pl.problem, pl.bundle, f);
    double t = 20.0;
    auto pt = transition_oracle(g, t, restrict_to_states(g, f));
    for (std::size_t k = 0; k < g.states.size(); ++k) {
        double lifted = std::exp(pl.bundle.lambda0 * t) * pt[k];
        CHECK(std::abs(lifted - pf[g.states[k]]) < 1e-6);
    }
}

TEST_CASE("conditioned-process quantities") {
    SECTION("mu sums to one and matches the h-transform null vector on the chain") {
        auto spec = two_state();
        auto pl = qsd_pipeline(build_chain(spec));
        auto qp = qprocess_quantities(pl.problem, pl.bundle);
        CHECK(qp.mu_sum_raw == Approx(1.0).margin(1e-10));
        // h-transformed generator: Qh(i,j) = zinv_j q(i,j) / zinv_i + lambda0 on the diagonal
        auto g = chain_sub_generator(spec);
        Eigen::MatrixXd qh = g.q;
        for (Eigen::Index i = 0; i < qh.rows(); ++i)
            for (Eigen::Index j = 0; j < qh.cols(); ++j)
                qh(i, j) *= pl.bundle.zinv[g.states[j]] / pl.bundle.zinv[g.states[i]];
        qh += pl.bundle.lambda0 * Eigen::MatrixXd::Identity(qh.rows(), qh.cols());
        // stationary law: left null vector of Qh
        Eigen::FullPivLU<Eigen::MatrixXd> lu(qh.transpose());
        Eigen::VectorXd null = lu.kernel().col(0);
        null /= null.sum();
        for (std::size_t k = 0; k < g.states.size(); ++k)
            CHECK(qp.mu[g.states[k]] == Approx(null(static_cast<Eigen::Index>(k))).margin(1e-9));
        CHECK(qp.h_transform.find("zinv") != std::string::npos);
    }
    SECTION("reflecting Brownian: mu density is 2 sin^2(pi x/2)") {
        auto pl = qsd_pipeline(bm(513, BoundaryCase::ReflectingRight).model);
        auto qp = qprocess_quantities(pl.problem, pl.bundle);
        CHECK(qp.mu_sum_raw == Approx(1.0).margin(1e-9));
        for (std::size_t i : {128u, 256u, 400u}) {
            double x = pl.model.grid.points[i];
            double density = qp.mu[i] / cell_length(pl.model, i);
            CHECK(density == Approx(2.0 * std::pow(std::sin(kPi * x / 2.0), 2)).epsilon(5e-4));
        }
    }
}

TEST_CASE("QSD is a fixed point of the conditioned evolution (oracle check)") {
    auto spec = two_state();
    auto pl = qsd_pipeline(build_chain(spec));
    auto g = chain_sub_generator(spec);
    for (double t : {0.5, 1.0}) {
        // p_t(i,j) as a matrix: columns from indicator evolutions
        Eigen::MatrixXd pt(g.states.size(), g.states.size());
        for (std::size_t j = 0; j < g.states.size(); ++j) {
            std::vector<double> e(g.states.size(), 0.0);
            e[j] = 1.0;
            auto col = transition_oracle(g, t, e);
            for (std::size_t i = 0; i < g.states.size(); ++i)
                pt(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
        }
        Eigen::VectorXd nu(g.states.size());
        for (std::size_t i = 0; i < g.states.size(); ++i) nu(static_cast<Eigen::Index>(i)) = pl.bundle.nu[g.states[i]];
        Eigen::VectorXd evolved = pt.transpose() * nu;
        evolved /= evolved.sum();
        for (std::size_t i = 0; i < g.states.size(); ++i)
            CHECK(evolved(static_cast<Eigen::Index>(i)) == Approx(nu(static_cast<Eigen::Index>(i))).margin(1e-9));
    }
}

TEST_CASE("wrong decay parameter is rejected by the weight diagnostics") {
    Model m = bm(257, BoundaryCase::ReflectingRight).model;
    auto p = make_spectral_problem(m);
    double lambda0 = decay_parameter(p).lambda0;
    CHECK_THROWS_AS(qsd_density(p, 1.7 * lambda0), std::runtime_error);
}
