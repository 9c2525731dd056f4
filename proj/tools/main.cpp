// skipfree: scale functions, spectra, quasi-stationary distributions and
// Yaglom-limit diagnostics for one-dimensional processes with no negative
// jumps. Batch subcommands over JSON model documents; outputs are CSV/JSON/
// SVG files that are byte-identical across reruns with the same inputs.

#include <CLI11.hpp>

#include <chrono>
#include <complex>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "skipfree/checks.hpp"
#include "skipfree/io.hpp"
#include "skipfree/mc.hpp"
#include "skipfree/oracle.hpp"
#include "skipfree/qsd.hpp"
#include "skipfree/spectral.hpp"

using namespace skipfree;

namespace {

enum ExitCode : int {
    kOk = 0,
    kVerificationFailure = 1,
    kInvalidInput = 2,
    kInconclusive = 3,
    kTheoremViolation = 4,
    kPartialOutput = 5,
};

struct CommonArgs {
    std::string model_path;
    std::string out;
    unsigned workers = 0;
    std::uint64_t seed = 1;
    std::string seed_source = "default";
    double tol = 0.0;  // 0 keeps the document/default tolerances
};

void add_common(CLI::App* cmd, CommonArgs& a, bool needs_out = true) {
    cmd->add_option("--model", a.model_path, "model document (JSON, schema v1)")->required();
    auto* out = cmd->add_option("--out", a.out, "output file");
    if (needs_out) out->required();
    cmd->add_option("--workers", a.workers, "worker cap for internal parallelism (0 = auto)");
    cmd->add_option("--seed", a.seed, "master seed for randomized work");
    cmd->add_option("--tol", a.tol, "override the engine tolerance");
}

// The environment variable overrides the flag (CI hook); the effective seed
// and its source are always echoed in the metadata.
void resolve_seed(CommonArgs& a, bool flag_given) {
    if (flag_given) a.seed_source = "flag";
    if (const char* env = std::getenv(kSeedEnvVar)) {
        a.seed = std::strtoull(env, nullptr, 10);
        a.seed_source = "env";
    }
}

// The decay/QSD pipeline on an inaccessible right boundary presumes the
// entrance property. When the document ships a truncation schedule the
// verdict is checked up front; without one the evaluations carry an
// uncertified-tail flag instead.
SpectralProblem prepare_problem(const BuiltModel& built, double lambda_max = 50.0,
                                double im_height = 20.0) {
    SpectralProblem p = make_spectral_problem(built.model, lambda_max, im_height);
    if (built.model.boundary == BoundaryCase::EntranceInfinity) {
        if (built.family) {
            auto cls = classify_boundary(*built.family,
                                         built.doc.classify_b > 0.0
                                             ? built.doc.classify_b
                                             : built.model.grid.points[std::max<std::size_t>(
                                                   1, built.model.top() / 8)],
                                         built.doc.tol.classify_rtol);
            if (cls.conclusive && !cls.entrance)
                throw std::invalid_argument(
                    "the right boundary is not entrance; the decay/QSD pipeline needs the entrance case");
            p.tail_certified = cls.conclusive;
        } else {
            p.tail_certified = false;
        }
    }
    return p;
}

RunMetadata make_metadata(const BuiltModel& built, const CommonArgs& a,
                          const std::string& rng = "none") {
    RunMetadata meta;
    meta.model_hash = built.model_hash;
    meta.seed = a.seed;
    meta.seed_source = a.seed_source;
    meta.workers = detail::resolve_workers(a.workers);
    meta.rng_algorithm = rng;
    ToleranceSet tol = built.doc.tol;
    if (a.tol > 0.0) tol.engine_tol = a.tol;
    meta.tolerances = tol.to_json();
    return meta;
}

std::string sibling_path(const std::string& out, const std::string& suffix) {
    auto dot = out.find_last_of('.');
    return (dot == std::string::npos ? out : out.substr(0, dot)) + suffix;
}

// ---------------------------------------------------------------------------
// classify
// ---------------------------------------------------------------------------

int cmd_classify(const CommonArgs& args, double b_flag) {
    BuiltModel built = load_built_model(args.model_path);
    if (!built.family)
        throw std::invalid_argument("classify needs a model document with a truncation_schedule");
    double b = b_flag > 0.0 ? b_flag : built.doc.classify_b;
    if (b <= 0.0) {
        Model first = built.family->build(built.family->levels.front());
        b = first.grid.points[std::max<std::size_t>(1, first.top() / 8)];
    }
    auto cls = classify_boundary(*built.family, b, built.doc.tol.classify_rtol);

    nlohmann::json out;
    out["metadata"] = make_metadata(built, args).to_json();
    out["entrance"] = cls.entrance;
    out["conclusive"] = cls.conclusive;
    out["cross_check_agrees"] = cls.cross_check_agrees;
    out["reference_level_b"] = b;
    out["note"] = cls.note;
    nlohmann::json tail = nlohmann::json::array();
    for (const auto& [level, value] : cls.wbar_tail)
        tail.push_back({{"level", level}, {"wbar", value}});
    out["tail_table"] = tail;
    nlohmann::json hits = nlohmann::json::array();
    for (std::size_t k = 0; k < cls.hitting_times.size(); ++k) {
        nlohmann::json row;
        row["level"] = cls.wbar_tail[k].first;
        nlohmann::json times = nlohmann::json::array();
        for (std::size_t s = 0; s < cls.sample_fractions.size(); ++s)
            times.push_back({{"x_fraction", cls.sample_fractions[s]}, {"value", cls.hitting_times[k][s]}});
        row["times"] = times;
        hits.push_back(row);
    }
    out["hitting_time_table"] = hits;

    std::ofstream f(args.out, std::ios::binary);
    f << out.dump(2) << "\n";
    return cls.conclusive && cls.cross_check_agrees ? kOk : kInconclusive;
}

// ---------------------------------------------------------------------------
// scale
// ---------------------------------------------------------------------------

int cmd_scale(const CommonArgs& args, const std::string& q_text) {
    BuiltModel built = load_built_model(args.model_path);
    double re = 0.0, im = 0.0;
    if (std::sscanf(q_text.c_str(), "%lf,%lf", &re, &im) < 1)
        throw std::invalid_argument("--q expects 're' or 're,im'");
    Complex q{re, im};

    const Model& m = built.model;
    const std::size_t M = m.top();
    std::vector<Complex> row = wq_row(m, q, 0);

    CsvWriter csv;
    csv.metadata(make_metadata(built, args));
    csv.comment("q", {{"re", re}, {"im", im}});
    csv.header({"x", "w_re", "w_im", "z_re", "z_im"});
    Complex running{};
    for (std::size_t j = 1; j <= M; ++j) {
        Complex z = 1.0 + q * (running + row[j] * detail::end_weight(m, j));
        csv.row({m.grid.points[j], row[j].real(), row[j].imag(), z.real(), z.imag()});
        running += row[j] * m.measure.weights[j];
    }
    csv.save(args.out);
    return kOk;
}

// ---------------------------------------------------------------------------
// spectrum
// ---------------------------------------------------------------------------

int cmd_spectrum(const CommonArgs& args, const std::string& rect_text, const std::string& svg_path,
                 double lambda_max, double im_height) {
    BuiltModel built = load_built_model(args.model_path);
    auto problem = prepare_problem(built, lambda_max, im_height);

    SpectrumReport rep;
    bool gap_checked = false;
    if (!rect_text.empty()) {
        Rect r;
        if (std::sscanf(rect_text.c_str(), "%lf,%lf,%lf,%lf", &r.re_lo, &r.re_hi, &r.im_lo, &r.im_hi) != 4)
            throw std::invalid_argument("--rect expects 're_lo,re_hi,im_lo,im_hi'");
        rep = spectrum_in_rect(problem, r);
    } else {
        rep = spectral_gap(problem);  // throws SpectralGapViolation -> exit 4
        gap_checked = true;
    }

    CsvWriter csv;
    csv.metadata(make_metadata(built, args));
    if (gap_checked)
        csv.comment("summary", {{"lambda0", rep.lambda0},
                                {"lambda1", rep.lambda1},
                                {"gap", rep.gap},
                                {"box_note", rep.box_note}});
    csv.header({"re", "im", "residual", "winding_cell"});
    for (const auto& z : rep.zeros)
        csv.row({z.z.real(), z.z.imag(), z.residual, static_cast<double>(z.cell)});
    csv.save(args.out);

    if (!svg_path.empty()) {
        double re_lo = -problem.lambda_max, re_hi = 1.0;
        SvgPlot plot(re_lo, re_hi, -problem.im_height, problem.im_height, "zeros of D(q)");
        plot.metadata(make_metadata(built, args));
        plot.box(re_lo, re_hi, -problem.im_height, problem.im_height, "#cccccc");
        std::vector<std::pair<double, double>> pts;
        for (const auto& z : rep.zeros) pts.emplace_back(z.z.real(), z.z.imag());
        plot.circles(pts, "#c0392b");
        plot.save(svg_path);
    }
    return kOk;
}

// ---------------------------------------------------------------------------
// qsd
// ---------------------------------------------------------------------------

int cmd_qsd(const CommonArgs& args) {
    BuiltModel built = load_built_model(args.model_path);
    auto problem = prepare_problem(built);
    auto decay = decay_parameter(problem);
    auto bundle = qsd_bundle(problem, decay.lambda0);
    auto qp = qprocess_quantities(problem, bundle);

    const Model& m = built.model;
    const std::size_t M = m.top();
    auto cell_len = [&](std::size_t i) {
        if (i == M) return 0.5 * (m.grid.points[M] - m.grid.points[M - 1]);
        return 0.5 * (m.grid.points[i + 1] - m.grid.points[i - 1]);
    };

    CsvWriter csv;
    csv.metadata(make_metadata(built, args));
    csv.comment("results", {{"lambda0", bundle.lambda0},
                            {"rho", bundle.rho},
                            {"norm_const", bundle.norm_const},
                            {"prenorm_sum", bundle.prenorm_sum},
                            {"d_kind", to_string(bundle.kind)}});
    bool diffuse = m.measure.kind == MeasureKind::Diffuse;
    std::vector<std::string> cols{"x", "nu_weight", "zinv", "mu_weight"};
    if (diffuse) cols.push_back("nu_density");
    csv.header(cols);
    for (std::size_t i = 1; i <= M; ++i) {
        std::vector<double> row{m.grid.points[i], bundle.nu[i], bundle.zinv[i], qp.mu[i]};
        if (diffuse) row.push_back(bundle.nu[i] / cell_len(i));
        csv.row(row);
    }
    csv.save(args.out);
    return kOk;
}

// ---------------------------------------------------------------------------
// yaglom
// ---------------------------------------------------------------------------

struct YaglomArgs {
    std::size_t paths = 100000;
    double horizon = 15.0;
    double bucket_dt = 0.25;
    double x0 = -1.0;  // < 0 means default (top state / midpoint)
    double step = 0.0;
    bool from_qsd = false;
    std::string svg_path;
};

int cmd_yaglom(const CommonArgs& args, const YaglomArgs& ya) {
    BuiltModel built = load_built_model(args.model_path);
    auto problem = prepare_problem(built);
    auto decay = decay_parameter(problem);
    auto bundle = qsd_bundle(problem, decay.lambda0);
    SpectrumReport gap = spectral_gap(problem);

    SimSpec sim;
    sim.paths = ya.paths;
    sim.horizon = ya.horizon;
    sim.seed = args.seed;
    sim.step = ya.step;
    sim.workers = args.workers;
    for (double t = 0.0; t <= ya.horizon + 1e-12; t += ya.bucket_dt) sim.bucket_times.push_back(t);
    if (ya.from_qsd) sim.initial_weights = bundle.nu;

    SimEnsemble ensemble;
    if (const auto* chain = std::get_if<ChainSpec>(&built.spec)) {
        std::size_t x0 = ya.x0 >= 0.0 ? static_cast<std::size_t>(ya.x0) : built.model.top();
        if (built.doc.boundary == BoundaryCase::KilledBoth && x0 >= built.model.top())
            x0 = built.model.top() - 1;
        ensemble = simulate(*chain, x0, sim);
    } else if (const auto* diff = std::get_if<DiffusionSpec>(&built.spec)) {
        double x0 = ya.x0 >= 0.0 ? ya.x0 : 0.5 * diff->right;
        ensemble = simulate(*diff, x0, sim);
    } else {
        auto bm = std::get<ClosedFormBmSpec>(built.spec);
        DiffusionSpec as_diffusion = sample_diffusion([](double) { return 0.0; },
                                                      [](double) { return 1.0; }, bm.ell,
                                                      bm.n_points, bm.boundary);
        ensemble = simulate(as_diffusion, ya.x0 >= 0.0 ? ya.x0 : 0.5 * bm.ell, sim);
    }

    auto rep = yaglom_report(ensemble, bundle);
    RunMetadata meta = make_metadata(built, args, ensemble.rng_algorithm);

    CsvWriter csv;
    csv.metadata(meta);
    csv.header({"t", "survivors", "survival", "tv", "noise_floor"});
    for (std::size_t k = 0; k < rep.t.size(); ++k)
        csv.row({rep.t[k], static_cast<double>(rep.survivors[k]), rep.survival[k], rep.tv[k],
                 rep.noise_floor[k]});
    csv.save(args.out);

    bool fitted = std::isfinite(rep.fitted_rate);
    nlohmann::json fit;
    fit["metadata"] = meta.to_json();
    fit["fitted_rate"] = fitted ? nlohmann::json(rep.fitted_rate) : nlohmann::json();
    fit["ci_half"] = fitted ? nlohmann::json(rep.ci_half) : nlohmann::json();
    fit["gap"] = gap.gap;
    fit["rate_over_gap"] = fitted ? nlohmann::json(rep.fitted_rate / gap.gap) : nlohmann::json();
    fit["lambda0"] = bundle.lambda0;
    fit["fit_window"] = fitted ? nlohmann::json::array({rep.t[rep.fit_begin], rep.t[rep.fit_end - 1]})
                               : nlohmann::json::array();
    fit["dropped_buckets"] = rep.dropped_buckets;
    fit["warnings"] = ensemble.warnings;
    std::ofstream jf(sibling_path(args.out, ".fit.json"), std::ios::binary);
    jf << fit.dump(2) << "\n";

    if (!ya.svg_path.empty()) {
        double y_hi = 0.0, y_lo = -14.0;
        SvgPlot plot(0.0, ya.horizon, y_lo, y_hi, "log TV distance to the quasi-stationary law");
        plot.metadata(meta);
        std::vector<std::pair<double, double>> tv_pts, nf_pts;
        for (std::size_t k = 0; k < rep.t.size(); ++k) {
            if (rep.tv[k] > 0.0) tv_pts.emplace_back(rep.t[k], std::log(rep.tv[k]));
            if (rep.noise_floor[k] > 0.0) nf_pts.emplace_back(rep.t[k], std::log(rep.noise_floor[k]));
        }
        plot.polyline(tv_pts, "#2c3e50");
        plot.circles(tv_pts, "#2c3e50");
        plot.polyline(nf_pts, "#95a5a6");
        if (fitted) {
            double t0 = rep.t[rep.fit_begin], t1 = rep.t[rep.fit_end - 1];
            double l0 = std::log(rep.tv[rep.fit_begin]);
            plot.polyline({{t0, l0}, {t1, l0 - rep.fitted_rate * (t1 - t0)}}, "#c0392b");
        }
        plot.save(ya.svg_path);
    }
    return rep.dropped_buckets.empty() ? kOk : kPartialOutput;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

struct Check {
    std::string id;
    double value = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

void add_check(std::vector<Check>& checks, std::string id, double value, double tolerance) {
    checks.push_back({std::move(id), value, tolerance, value <= tolerance});
}

void verify_identities(const BuiltModel& built, const CommonArgs& args, std::vector<Check>& checks) {
    const Model& m = built.model;
    PathRng rng(args.seed, 0);
    for (int pair = 0; pair < 3; ++pair) {
        auto draw = [&] {
            double re = -20.0 + 40.0 * rng.uniform01();
            double im = (rng.uniform01() < 0.5 ? -1.0 : 1.0) * (0.05 + 13.0 * rng.uniform01());
            return Complex{re, im};
        };
        Complex q = draw(), r = draw();
        auto res = identity_residuals(m, q, r, args.workers);
        std::string tag = "identities/pair" + std::to_string(pair);
        add_check(checks, tag + "/resW", res.res_w, 1e-9);
        add_check(checks, tag + "/resZ", res.res_z, 1e-9);
        add_check(checks, tag + "/resR", res.res_r, 1e-9);
    }
    {
        Complex q{1.0, 0.5};
        ScaleEval volterra = wq_eval(m, q, WqMethod::Volterra, 1e-10, args.workers);
        ScaleEval series = wq_eval(m, q, WqMethod::Series, 1e-10, args.workers);
        double scale = 0.0, worst = 0.0;
        for (std::size_t i = 0; i <= m.top(); ++i)
            for (std::size_t j = i; j <= m.top(); ++j) {
                scale = std::max(scale, std::abs(volterra.wq(i, j)));
                worst = std::max(worst, std::abs(volterra.wq(i, j) - series.wq(i, j)));
            }
        add_check(checks, "identities/series-vs-volterra", worst / scale, 1e-10 + series.trunc_error);
    }
    if (built.oracle) {
        Complex q{1.0, 0.0};
        ScaleEval ev = wq_eval(m, q, WqMethod::Volterra, 1e-10, args.workers);
        double worst = 0.0;
        for (std::size_t i = 0; i + 1 <= m.top(); i += 2)
            for (std::size_t j = i + 1; j <= m.top(); j += 2) {
                double exact = built.oracle->w(q, m.grid.points[i], m.grid.points[j]).real();
                worst = std::max(worst, std::abs(ev.wq(i, j).real() - exact) / exact);
            }
        add_check(checks, "identities/closed-form-w", worst, 5e-4);
    }
}

void verify_oracle(const BuiltModel& built, const CommonArgs& args, std::vector<Check>& checks) {
    (void)args;
    auto problem = make_spectral_problem(built.model);
    auto decay = decay_parameter(problem);
    if (const auto* chain = std::get_if<ChainSpec>(&built.spec)) {
        auto g = chain_sub_generator(*chain);
        auto oracle = eig_decay_oracle(g);
        add_check(checks, "oracle/lambda0", std::abs(decay.lambda0 - oracle.lambda0), 1e-8);
        auto bundle = qsd_bundle(problem, decay.lambda0);
        double nu_err = 0.0;
        for (std::size_t k = 0; k < g.states.size(); ++k)
            nu_err = std::max(nu_err, std::abs(bundle.nu[g.states[k]] - oracle.left[k]));
        add_check(checks, "oracle/qsd-left-vector", nu_err, 1e-8);
        double zmax = 0.0, rmax = 0.0;
        for (std::size_t k = 0; k < g.states.size(); ++k) {
            zmax = std::max(zmax, std::abs(bundle.zinv[g.states[k]]));
            rmax = std::max(rmax, std::abs(oracle.right[k]));
        }
        double z_err = 0.0;
        for (std::size_t k = 0; k < g.states.size(); ++k)
            z_err = std::max(z_err, std::abs(bundle.zinv[g.states[k]] / zmax - oracle.right[k] / rmax));
        add_check(checks, "oracle/zinv-right-vector", z_err, 1e-8);
    } else if (const auto* diff = std::get_if<DiffusionSpec>(&built.spec)) {
        auto oracle = eig_decay_oracle(fd_sub_generator(*diff));
        add_check(checks, "oracle/lambda0-fd", std::abs(decay.lambda0 - oracle.lambda0),
                  std::max(1e-8, 2e-3 * oracle.lambda0));
    } else if (built.oracle) {
        double expect = built.oracle->lambda0(built.model.boundary);
        add_check(checks, "oracle/lambda0-closed-form", std::abs(decay.lambda0 - expect), 1e-3);
        auto gap = spectral_gap(problem);
        add_check(checks, "oracle/gap-closed-form",
                  std::abs(gap.gap - built.oracle->gap(built.model.boundary)), 1e-2);
    }
}

void verify_semigroup(const BuiltModel& built, const CommonArgs& args, std::vector<Check>& checks) {
    (void)args;
    auto problem = make_spectral_problem(built.model);
    auto decay = decay_parameter(problem);
    auto bundle = qsd_bundle(problem, decay.lambda0);
    if (const auto* chain = std::get_if<ChainSpec>(&built.spec)) {
        auto g = chain_sub_generator(*chain);
        auto inv = semigroup_checks(problem, bundle, g, SemigroupMode::Invariance);
        for (std::size_t k = 0; k < inv.times.size(); ++k)
            add_check(checks, "semigroup/invariance-t" + format_g17(inv.times[k]).substr(0, 3),
                      inv.residuals[k], 1e-6);
        auto my = semigroup_checks(problem, bundle, g, SemigroupMode::MeanYaglom);
        add_check(checks, "semigroup/mean-yaglom-tail", my.rel_error_tail, 1e-3);
        auto qp = semigroup_checks(problem, bundle, g, SemigroupMode::QProcess);
        auto gap = spectral_gap(problem);
        double rel = std::abs(qp.fitted_decay - gap.gap) / gap.gap;
        add_check(checks, "semigroup/qprocess-decay-vs-gap", rel, 0.5);
    } else {
        const auto* diff = std::get_if<DiffusionSpec>(&built.spec);
        DiffusionSpec spec = diff ? *diff
                                  : sample_diffusion([](double) { return 0.0; },
                                                     [](double) { return 1.0; },
                                                     std::get<ClosedFormBmSpec>(built.spec).ell,
                                                     built.doc.n_points, built.model.boundary);
        auto g = fd_sub_generator(spec);
        auto inv = semigroup_checks(problem, bundle, g, SemigroupMode::Invariance);
        double h = built.model.grid.spacing_max();
        for (std::size_t k = 0; k < inv.times.size(); ++k)
            add_check(checks, "semigroup/invariance-t" + format_g17(inv.times[k]).substr(0, 3),
                      inv.residuals[k], 200.0 * h * h * (1.0 + decay.lambda0));
    }
}

int cmd_verify(const CommonArgs& args, const std::string& suite) {
    BuiltModel built = load_built_model(args.model_path);
    std::vector<Check> checks;
    if (suite == "identities" || suite == "all") verify_identities(built, args, checks);
    if (suite == "oracle" || suite == "all") verify_oracle(built, args, checks);
    if (suite == "semigroup" || suite == "all") verify_semigroup(built, args, checks);
    if (checks.empty()) throw std::invalid_argument("unknown suite '" + suite + "'");

    bool all_pass = true;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& c : checks) {
        all_pass = all_pass && c.pass;
        rows.push_back({{"id", c.id}, {"value", c.value}, {"tolerance", c.tolerance}, {"pass", c.pass}});
    }
    nlohmann::json out;
    out["metadata"] = make_metadata(built, args, "splitmix64 (check-point sampling)").to_json();
    out["suite"] = suite;
    out["pass"] = all_pass;
    out["checks"] = rows;
    if (!args.out.empty()) {
        std::ofstream f(args.out, std::ios::binary);
        f << out.dump(2) << "\n";
    } else {
        std::cout << out.dump(2) << "\n";
    }
    for (const auto& c : checks)
        if (!c.pass)
            std::cerr << "failed: " << c.id << " value=" << c.value << " tolerance=" << c.tolerance
                      << "\n";
    return all_pass ? kOk : kVerificationFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"scale-function and quasi-stationary analysis for skip-free processes"};
    app.require_subcommand(1);

    CommonArgs classify_args, scale_args, spectrum_args, qsd_args, yaglom_args, verify_args;
    double classify_b = 0.0;
    std::string scale_q = "1.0,0.0";
    std::string rect_text, spectrum_svg;
    double lambda_max = 50.0, im_height = 20.0;
    YaglomArgs ya;
    std::string suite = "all";

    auto* c_classify = app.add_subcommand("classify", "entrance/non-entrance verdict for the right boundary");
    add_common(c_classify, classify_args);
    c_classify->add_option("--b", classify_b, "reference level b for the tail test");

    auto* c_scale = app.add_subcommand("scale", "tabulate W^{(q)}(0,x) and Z^{(q)}(0,x)");
    add_common(c_scale, scale_args);
    c_scale->add_option("--q", scale_q, "spectral parameter 're' or 're,im'");

    auto* c_spectrum = app.add_subcommand("spectrum", "zeros of the spectral function in a box");
    add_common(c_spectrum, spectrum_args);
    c_spectrum->add_option("--rect", rect_text, "search box 're_lo,re_hi,im_lo,im_hi'");
    c_spectrum->add_option("--svg", spectrum_svg, "write a zero-locus plot");
    c_spectrum->add_option("--lambda-max", lambda_max, "real search depth");
    c_spectrum->add_option("--im-height", im_height, "imaginary half-height");

    auto* c_qsd = app.add_subcommand("qsd", "quasi-stationary weights, invariant function, conditioned law");
    add_common(c_qsd, qsd_args);

    auto* c_yaglom = app.add_subcommand("yaglom", "killed-path simulation and TV-decay fit");
    add_common(c_yaglom, yaglom_args);
    c_yaglom->add_option("--paths", ya.paths, "number of simulated paths");
    c_yaglom->add_option("--horizon", ya.horizon, "time horizon");
    c_yaglom->add_option("--bucket-dt", ya.bucket_dt, "time between histogram buckets");
    c_yaglom->add_option("--x0", ya.x0, "starting state/point (default: top state or midpoint)");
    c_yaglom->add_option("--step", ya.step, "Euler step for diffusions (0 = default)");
    c_yaglom->add_flag("--from-qsd", ya.from_qsd, "draw starting points from the computed QSD");
    c_yaglom->add_option("--svg", ya.svg_path, "write the decay plot");

    auto* c_verify = app.add_subcommand("verify", "cross-checks: identities | oracle | semigroup | all");
    add_common(c_verify, verify_args, false);
    c_verify->add_option("--suite", suite, "which suite to run");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kInvalidInput;
    }

    for (CommonArgs* a : {&classify_args, &scale_args, &spectrum_args, &qsd_args, &yaglom_args,
                          &verify_args})
        if (a->workers > 0) detail::set_worker_cap(a->workers);

    auto started = std::chrono::steady_clock::now();
    int code = kOk;
    try {
        if (c_classify->parsed()) {
            resolve_seed(classify_args, c_classify->count("--seed") > 0);
            code = cmd_classify(classify_args, classify_b);
        } else if (c_scale->parsed()) {
            resolve_seed(scale_args, c_scale->count("--seed") > 0);
            code = cmd_scale(scale_args, scale_q);
        } else if (c_spectrum->parsed()) {
            resolve_seed(spectrum_args, c_spectrum->count("--seed") > 0);
            code = cmd_spectrum(spectrum_args, rect_text, spectrum_svg, lambda_max, im_height);
        } else if (c_qsd->parsed()) {
            resolve_seed(qsd_args, c_qsd->count("--seed") > 0);
            code = cmd_qsd(qsd_args);
        } else if (c_yaglom->parsed()) {
            resolve_seed(yaglom_args, c_yaglom->count("--seed") > 0);
            code = cmd_yaglom(yaglom_args, ya);
        } else if (c_verify->parsed()) {
            resolve_seed(verify_args, c_verify->count("--seed") > 0);
            code = cmd_verify(verify_args, suite);
        }
    } catch (const SpectralGapViolation& e) {
        std::cerr << "theorem violation: " << e.what() << "\n";
        code = kTheoremViolation;
    } catch (const NoZeroInBox& e) {
        std::cerr << "inconclusive: " << e.what() << "\n";
        code = kInconclusive;
    } catch (const ParseError& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        code = kInvalidInput;
    } catch (const DimensionError& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        code = kInvalidInput;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        code = kInvalidInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        code = kVerificationFailure;
    }
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    std::fprintf(stderr, "wall_time_s=%.3f exit=%d\n", wall, code);
    return code;
}
