#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "skipfree/models.hpp"

namespace skipfree {

inline constexpr const char* kArtifactVersion = "0.1.0";
inline constexpr const char* kSeedEnvVar = "SKIPFREE_SEED";

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ToleranceSet {
    double engine_tol = 1e-10;
    double root_tol = 1e-12;
    double classify_rtol = 1e-6;

    nlohmann::json to_json() const {
        return {{"engine_tol", engine_tol}, {"root_tol", root_tol}, {"classify_rtol", classify_rtol}};
    }
};

// ---------------------------------------------------------------------------
// Model documents (schema v1)
// ---------------------------------------------------------------------------

struct CoefficientSpec {
    std::string kind = "constant";  // constant | linear | cubic_inward | n_squared | table
    double value = 0.0;             // constant value or linear slope
    std::vector<double> values;     // sampled/tabled values

    std::function<double(double)> as_function() const {
        if (kind == "constant") {
            double v = value;
            return [v](double) { return v; };
        }
        if (kind == "linear") {
            double v = value;
            return [v](double x) { return v * x; };
        }
        if (kind == "cubic_inward") return [](double x) { return -x * x * x; };
        throw ParseError("coefficient kind '" + kind + "' is not a function of position");
    }

    std::function<double(std::size_t)> as_rate_function() const {
        if (kind == "constant") {
            double v = value;
            return [v](std::size_t) { return v; };
        }
        if (kind == "linear") {
            double v = value;
            return [v](std::size_t i) { return v * static_cast<double>(i); };
        }
        if (kind == "n_squared") return [](std::size_t i) { return static_cast<double>(i * i); };
        if (kind == "table") {
            auto t = values;
            return [t](std::size_t i) { return i >= 1 && i <= t.size() ? t[i - 1] : 0.0; };
        }
        throw ParseError("coefficient kind '" + kind + "' is not a per-state rate");
    }
};

struct ModelDocument {
    int schema_version = 1;
    std::string family;  // diffusion | chain | bm_closed_form
    BoundaryCase boundary = BoundaryCase::KilledBoth;
    std::size_t n_points = 0;
    double domain_right = 1.0;
    std::vector<double> truncation_schedule;
    double classify_b = 0.0;  // reference level for boundary classification (0 = auto)

    CoefficientSpec drift, sigma;  // diffusion families

    std::size_t n_states = 0;  // chain families
    std::vector<RateEntry> rate_table;
    std::optional<CoefficientSpec> birth, death;

    ToleranceSet tol;
    nlohmann::json raw;
};

namespace detail {

inline BoundaryCase boundary_from_string(const std::string& s) {
    if (s == "entrance_infinity") return BoundaryCase::EntranceInfinity;
    if (s == "reflecting_right") return BoundaryCase::ReflectingRight;
    if (s == "killed_both") return BoundaryCase::KilledBoth;
    throw ParseError("unknown boundary_case '" + s + "'");
}

inline CoefficientSpec coefficient_from_json(const nlohmann::json& j) {
    CoefficientSpec c;
    c.kind = j.at("kind").get<std::string>();
    if (j.contains("value")) c.value = j.at("value").get<double>();
    if (j.contains("values")) c.values = j.at("values").get<std::vector<double>>();
    return c;
}

inline std::string fnv1a_hex(const std::string& data) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : data) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace detail

inline ModelDocument parse_model_document(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("model document is not valid JSON: ") + e.what());
    }
    ModelDocument d;
    try {
        d.raw = j;
        d.schema_version = j.at("schema_version").get<int>();
        if (d.schema_version != 1) throw ParseError("unsupported schema_version");
        d.family = j.at("family").get<std::string>();
        d.boundary = detail::boundary_from_string(j.at("boundary_case").get<std::string>());

        if (j.contains("grid")) {
            const auto& g = j.at("grid");
            if (g.contains("n_points")) d.n_points = g.at("n_points").get<std::size_t>();
            if (g.contains("domain_right")) d.domain_right = g.at("domain_right").get<double>();
            if (g.contains("truncation_schedule"))
                d.truncation_schedule = g.at("truncation_schedule").get<std::vector<double>>();
        }
        if (j.contains("classify_b")) d.classify_b = j.at("classify_b").get<double>();

        if (d.family == "diffusion") {
            const auto& c = j.at("coefficients");
            d.drift = detail::coefficient_from_json(c.at("drift"));
            d.sigma = detail::coefficient_from_json(c.at("sigma"));
            if (d.n_points < 3) throw ParseError("diffusion documents need grid.n_points >= 3");
        } else if (d.family == "chain") {
            const auto& c = j.at("chain");
            d.n_states = c.at("n_states").get<std::size_t>();
            if (c.contains("rates")) {
                for (const auto& row : c.at("rates")) {
                    if (!row.is_array() || row.size() != 3) throw ParseError("chain rate rows are [from, to, rate]");
                    d.rate_table.push_back({row[0].get<std::size_t>(), row[1].get<std::size_t>(),
                                            row[2].get<double>()});
                }
            }
            if (c.contains("birth")) d.birth = detail::coefficient_from_json(c.at("birth"));
            if (c.contains("death")) d.death = detail::coefficient_from_json(c.at("death"));
            if (d.rate_table.empty() && (!d.birth || !d.death))
                throw ParseError("chain documents need either an explicit rate table or birth/death rates");
        } else if (d.family == "bm_closed_form") {
            if (d.n_points < 3) throw ParseError("bm_closed_form documents need grid.n_points >= 3");
        } else {
            throw ParseError("unknown family '" + d.family + "'");
        }

        if (j.contains("tolerances")) {
            const auto& t = j.at("tolerances");
            if (t.contains("engine_tol")) d.tol.engine_tol = t.at("engine_tol").get<double>();
            if (t.contains("root_tol")) d.tol.root_tol = t.at("root_tol").get<double>();
            if (t.contains("classify_rtol")) d.tol.classify_rtol = t.at("classify_rtol").get<double>();
        }
    } catch (const ParseError&) {
        throw;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("model document is missing or mistypes a field: ") + e.what());
    }
    return d;
}

struct BuiltModel {
    ModelDocument doc;
    Model model;
    std::variant<std::monostate, ChainSpec, DiffusionSpec, ClosedFormBmSpec> spec;
    std::optional<BmOracle> oracle;
    std::optional<TruncationFamily> family;
    std::string model_hash;
};

inline BuiltModel build_from_document(const ModelDocument& d) {
    BuiltModel out;
    out.doc = d;
    out.model_hash = detail::fnv1a_hex(d.raw.dump());

    if (d.family == "bm_closed_form") {
        ClosedFormBmSpec spec{d.domain_right, d.boundary, d.n_points};
        auto bm = build_bm_closed_form(spec);
        out.model = std::move(bm.model);
        out.oracle = bm.oracle;
        out.spec = spec;
    } else if (d.family == "diffusion") {
        // Sampled coefficient arrays are used verbatim; named rules get
        // evaluated on the grid.
        auto resolve = [&](const CoefficientSpec& c) {
            if (c.kind == "samples") {
                if (c.values.size() != d.n_points)
                    throw ParseError("sampled coefficients must carry exactly grid.n_points values");
                return c.values;
            }
            auto fn = c.as_function();
            std::vector<double> v(d.n_points);
            for (std::size_t k = 0; k < d.n_points; ++k)
                v[k] = fn(d.domain_right * static_cast<double>(k) / static_cast<double>(d.n_points - 1));
            return v;
        };
        DiffusionSpec spec;
        spec.right = d.domain_right;
        spec.n_points = d.n_points;
        spec.boundary = d.boundary;
        spec.drift = resolve(d.drift);
        spec.sigma = resolve(d.sigma);
        out.model = build_diffusion(spec);
        out.spec = std::move(spec);
        if (!d.truncation_schedule.empty()) {
            if (d.drift.kind == "samples" || d.sigma.kind == "samples")
                throw ParseError("truncation schedules need coefficient rules, not fixed samples");
            double per_unit = static_cast<double>(d.n_points - 1) / d.domain_right;
            out.family = diffusion_truncation_family(d.drift.as_function(), d.sigma.as_function(),
                                                     per_unit, d.truncation_schedule);
        }
    } else if (d.family == "chain") {
        ChainSpec spec;
        if (!d.rate_table.empty()) {
            spec.n_states = d.n_states;
            spec.boundary = d.boundary;
            spec.rates = d.rate_table;
        } else {
            spec = birth_death_chain(d.n_states, d.birth->as_rate_function(),
                                     d.death->as_rate_function(), d.boundary);
        }
        out.model = build_chain(spec);
        out.spec = std::move(spec);
        if (!d.truncation_schedule.empty() && d.birth && d.death)
            out.family = chain_truncation_family(d.birth->as_rate_function(),
                                                 d.death->as_rate_function(), d.truncation_schedule);
    } else {
        throw ParseError("unknown family '" + d.family + "'");
    }

    auto rep = validate_model(out.model);
    if (!rep.ok()) throw std::invalid_argument("model document builds an invalid model:\n" + rep.to_string());
    return out;
}

inline BuiltModel load_built_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open model document '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return build_from_document(parse_model_document(ss.str()));
}

// ---------------------------------------------------------------------------
// Run metadata and writers
// ---------------------------------------------------------------------------

/// Provenance block embedded in every output file. Wall time is deliberately
/// not part of it: reruns with identical inputs must be byte-identical, so
/// timing goes to the console instead.
struct RunMetadata {
    std::string artifact_version = kArtifactVersion;
    std::string model_hash;
    std::uint64_t seed = 0;
    std::string seed_source = "default";  // default | flag | env
    unsigned workers = 0;
    std::string rng_algorithm = "none";
    nlohmann::json tolerances;

    nlohmann::json to_json() const {
        return {{"artifact_version", artifact_version}, {"model_hash", model_hash},
                {"seed", seed},       {"seed_source", seed_source},
                {"workers", workers}, {"rng_algorithm", rng_algorithm},
                {"tolerances", tolerances}};
    }
};

inline std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// CSV with 17-significant-digit numbers, '\n' endings and a leading
/// metadata comment; the byte-exact contract golden tests rely on.
class CsvWriter {
public:
    void metadata(const RunMetadata& meta) { lines_.push_back("# metadata " + meta.to_json().dump()); }
    void comment(const std::string& key, const nlohmann::json& value) {
        lines_.push_back("# " + key + " " + value.dump());
    }
    void header(const std::vector<std::string>& cols) { lines_.push_back(join(cols)); }
    void row(const std::vector<double>& vals) {
        std::vector<std::string> cells;
        cells.reserve(vals.size());
        for (double v : vals) cells.push_back(format_g17(v));
        lines_.push_back(join(cells));
    }
    std::string str() const {
        std::string out;
        for (const auto& l : lines_) {
            out += l;
            out += '\n';
        }
        return out;
    }
    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write '" + path + "'");
        f << str();
    }

private:
    static std::string join(const std::vector<std::string>& cells) {
        std::string out;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out += ',';
            out += cells[i];
        }
        return out;
    }
    std::vector<std::string> lines_;
};

/// Minimal self-contained SVG plotter (polylines, markers, boxes) with
/// deterministic coordinate formatting.
class SvgPlot {
public:
    SvgPlot(double x_lo, double x_hi, double y_lo, double y_hi, std::string title)
        : x_lo_(x_lo), x_hi_(x_hi), y_lo_(y_lo), y_hi_(y_hi), title_(std::move(title)) {}

    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color) {
        if (pts.empty()) return;
        std::string d = "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.2\" points=\"";
        for (const auto& [x, y] : pts) d += fmt(px(x)) + "," + fmt(py(y)) + " ";
        d += "\"/>";
        body_.push_back(d);
    }
    void circles(const std::vector<std::pair<double, double>>& pts, const std::string& color) {
        for (const auto& [x, y] : pts)
            body_.push_back("<circle cx=\"" + fmt(px(x)) + "\" cy=\"" + fmt(py(y)) +
                            "\" r=\"3\" fill=\"" + color + "\"/>");
    }
    void box(double x0, double x1, double y0, double y1, const std::string& color) {
        body_.push_back("<rect x=\"" + fmt(px(x0)) + "\" y=\"" + fmt(py(y1)) + "\" width=\"" +
                        fmt(px(x1) - px(x0)) + "\" height=\"" + fmt(py(y0) - py(y1)) +
                        "\" fill=\"none\" stroke=\"" + color + "\"/>");
    }
    void metadata(const RunMetadata& meta) { meta_ = meta.to_json().dump(); }

    std::string str() const {
        std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
                          "viewBox=\"0 0 640 480\">\n";
        if (!meta_.empty()) out += "<!-- metadata " + meta_ + " -->\n";
        out += "<rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" fill=\"white\"/>\n";
        out += "<rect x=\"60\" y=\"40\" width=\"540\" height=\"380\" fill=\"none\" stroke=\"black\"/>\n";
        out += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" + title_ + "</text>\n";
        out += "<text x=\"60\" y=\"445\" font-size=\"11\">" + fmt(x_lo_) + "</text>\n";
        out += "<text x=\"600\" y=\"445\" text-anchor=\"end\" font-size=\"11\">" + fmt(x_hi_) + "</text>\n";
        out += "<text x=\"8\" y=\"424\" font-size=\"11\">" + fmt(y_lo_) + "</text>\n";
        out += "<text x=\"8\" y=\"52\" font-size=\"11\">" + fmt(y_hi_) + "</text>\n";
        for (const auto& b : body_) {
            out += b;
            out += '\n';
        }
        out += "</svg>\n";
        return out;
    }
    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write '" + path + "'");
        f << str();
    }

private:
    double px(double x) const { return 60.0 + 540.0 * (x - x_lo_) / (x_hi_ - x_lo_); }
    double py(double y) const { return 420.0 - 380.0 * (y - y_lo_) / (y_hi_ - y_lo_); }
    static std::string fmt(double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6g", v);
        return buf;
    }

    double x_lo_, x_hi_, y_lo_, y_hi_;
    std::string title_;
    std::string meta_;
    std::vector<std::string> body_;
};

}  // namespace skipfree
