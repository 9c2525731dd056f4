#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace {

namespace fs = std::filesystem;

std::string cli() {
    const char* p = std::getenv("SKIPFREE_CLI");
    REQUIRE(p != nullptr);
    return p;
}

std::string configs() {
    const char* p = std::getenv("SKIPFREE_CONFIGS");
    REQUIRE(p != nullptr);
    return p;
}

fs::path work_dir() {
    fs::path dir = fs::temp_directory_path() / "skipfree_cli_tests";
    fs::create_directories(dir);
    return dir;
}

int run(const std::string& args) {
    std::string cmd = cli() + " " + args + " > /dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<std::vector<double>> csv_rows(const fs::path& p) {
    std::ifstream f(p);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#' || (line[0] >= 'a' && line[0] <= 'z')) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

TEST_CASE("malformed JSON exits 2 with diagnostics") {
    auto dir = work_dir();
    auto bad = dir / "bad.json";
    std::ofstream(bad) << "{ not json";
    CHECK(run("qsd --model " + bad.string() + " --out " + (dir / "x.csv").string()) == 2);
}

TEST_CASE("negative rate exits 2") {
    auto dir = work_dir();
    auto bad = dir / "negrate.json";
    std::ofstream(bad) << R"({"schema_version": 1, "family": "chain", "boundary_case": "reflecting_right",
                             "chain": {"n_states": 2, "rates": [[1,0,1.0],[1,2,-1.0],[2,1,1.0]]}})";
    CHECK(run("qsd --model " + bad.string() + " --out " + (dir / "x.csv").string()) == 2);
}

TEST_CASE("classify without a truncation schedule exits 2") {
    auto dir = work_dir();
    CHECK(run("classify --model " + configs() + "/two_state_chain.json --out " +
              (dir / "c.json").string()) == 2);
}

TEST_CASE("qsd on the two-state chain emits the golden-ratio weights") {
    auto dir = work_dir();
    auto out = dir / "ts_qsd.csv";
    REQUIRE(run("qsd --model " + configs() + "/two_state_chain.json --out " + out.string()) == 0);
    auto rows = csv_rows(out);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0][1] == Catch::Approx(0.38196601125).margin(1e-9));
    CHECK(rows[1][1] == Catch::Approx(0.61803398875).margin(1e-9));
    std::string text = slurp(out);
    CHECK(text.find("# metadata") != std::string::npos);
    CHECK(text.find("norm_const") != std::string::npos);
    CHECK(text.find("\r") == std::string::npos);
}

TEST_CASE("spectrum in a right-half-plane box is empty with exit 0") {
    auto dir = work_dir();
    auto out = dir / "empty.csv";
    REQUIRE(run("spectrum --model " + configs() + "/two_state_chain.json --rect 1,2,-1,1 --out " +
                out.string()) == 0);
    CHECK(csv_rows(out).empty());
}

TEST_CASE("spectrum of the two-state chain finds both eigenvalue zeros") {
    auto dir = work_dir();
    auto out = dir / "ts_zeros.csv";
    auto svg = dir / "ts_zeros.svg";
    REQUIRE(run("spectrum --model " + configs() + "/two_state_chain.json --out " + out.string() +
                " --svg " + svg.string()) == 0);
    auto rows = csv_rows(out);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0][0] == Catch::Approx(-0.38196601).margin(1e-6));
    CHECK(rows[1][0] == Catch::Approx(-2.61803399).margin(1e-6));
    std::string svg_text = slurp(svg);
    CHECK(svg_text.find("<svg") != std::string::npos);
    CHECK(svg_text.find("metadata") != std::string::npos);
}

TEST_CASE("scale command tabulates the discounted kernel") {
    auto dir = work_dir();
    auto out = dir / "scale.csv";
    REQUIRE(run("scale --model " + configs() + "/bm_killed_both_513.json --q 1.0 --out " +
                out.string()) == 0);
    auto rows = csv_rows(out);
    REQUIRE(rows.size() == 512);
    double w_end = rows.back()[1];
    double z_end = rows.back()[3];
    CHECK(w_end == Catch::Approx(std::sinh(std::sqrt(2.0)) / std::sqrt(2.0)).epsilon(1e-5));
    CHECK(z_end == Catch::Approx(std::cosh(std::sqrt(2.0))).epsilon(1e-5));
}

TEST_CASE("classify verdicts and exit codes") {
    auto dir = work_dir();
    SECTION("entrance chain") {
        auto out = dir / "cls1.json";
        REQUIRE(run("classify --model " + configs() + "/bd_entrance_chain.json --out " +
                    out.string()) == 0);
        CHECK(slurp(out).find("\"entrance\": true") != std::string::npos);
    }
    SECTION("unit-rate chain") {
        auto out = dir / "cls2.json";
        REQUIRE(run("classify --model " + configs() + "/bd_unit_chain.json --out " + out.string()) ==
                0);
        CHECK(slurp(out).find("\"entrance\": false") != std::string::npos);
    }
}

TEST_CASE("yaglom reruns are byte-identical and seeds change outputs") {
    auto dir = work_dir();
    std::string base = "yaglom --model " + configs() +
                       "/two_state_chain.json --paths 20000 --horizon 10 --workers 2 ";
    auto a = dir / "ya.csv";
    auto b = dir / "yb.csv";
    auto c = dir / "yc.csv";
    REQUIRE(run(base + "--seed 42 --out " + a.string() + " --svg " + (dir / "ya.svg").string()) == 0);
    REQUIRE(run(base + "--seed 42 --out " + b.string() + " --svg " + (dir / "yb.svg").string()) == 0);
    REQUIRE(run(base + "--seed 43 --out " + c.string()) == 0);
    CHECK(slurp(a) == slurp(b));
    CHECK(slurp(dir / "ya.svg") == slurp(dir / "yb.svg"));
    CHECK(slurp(dir / "ya.fit.json") == slurp(dir / "yb.fit.json"));
    CHECK(slurp(a) != slurp(c));
}

TEST_CASE("the seed environment variable overrides the flag and is echoed") {
    auto dir = work_dir();
    auto out = dir / "env.csv";
    std::string cmd = "SKIPFREE_SEED=77 " + cli() + " yaglom --model " + configs() +
                      "/two_state_chain.json --paths 5000 --horizon 6 --seed 42 --out " +
                      out.string() + " > /dev/null 2>&1";
    REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
    std::string text = slurp(out);
    CHECK(text.find("\"seed\":77") != std::string::npos);
    CHECK(text.find("\"seed_source\":\"env\"") != std::string::npos);
}

TEST_CASE("yaglom started from the QSD reports a flat curve without a rate fit") {
    auto dir = work_dir();
    auto out = dir / "flat.csv";
    REQUIRE(run("yaglom --model " + configs() +
                "/two_state_chain.json --paths 20000 --horizon 6 --seed 9 --from-qsd --out " +
                out.string()) == 0);
    auto rows = csv_rows(out);
    REQUIRE_FALSE(rows.empty());
    for (const auto& r : rows) CHECK(r[3] <= 4.0 * r[4] + 1e-12);  // tv within noise of the floor
    CHECK(slurp(dir / "flat.fit.json").find("\"fitted_rate\": null") != std::string::npos);
}

TEST_CASE("yaglom on a diffusion document runs the Euler path") {
    auto dir = work_dir();
    auto out = dir / "bm_tv.csv";
    REQUIRE(run("yaglom --model " + configs() +
                "/bm_killed_both_513.json --paths 2000 --horizon 0.6 --bucket-dt 0.1 --seed 3 "
                "--x0 0.5 --out " +
                out.string()) == 0);
    auto rows = csv_rows(out);
    REQUIRE_FALSE(rows.empty());
    // survival at the last bucket should be near the classical heat-kernel value
    double survival = rows.back()[2];
    CHECK(survival == Catch::Approx(1.2732 * std::exp(-4.9348 * 0.6)).margin(0.03));
}

TEST_CASE("verify succeeds on the shipped documents") {
    auto dir = work_dir();
    CHECK(run("verify --model " + configs() + "/two_state_chain.json --suite all --out " +
              (dir / "v1.json").string()) == 0);
    CHECK(run("verify --model " + configs() + "/bd_mixed_killed.json --suite oracle --out " +
              (dir / "v2.json").string()) == 0);
    CHECK(run("verify --model " + configs() + "/cubic_entrance_diffusion.json --suite oracle --out " +
              (dir / "v3.json").string()) == 0);
}

TEST_CASE("unknown suite exits 2") {
    CHECK(run("verify --model " + configs() + "/two_state_chain.json --suite bogus") == 2);
}

TEST_CASE("sampled coefficient arrays are ingested verbatim") {
    auto dir = work_dir();
    auto doc = dir / "sampled.json";
    std::ostringstream js;
    js << R"({"schema_version": 1, "family": "diffusion", "boundary_case": "killed_both",)"
       << R"("grid": {"n_points": 129, "domain_right": 1.0},)"
       << R"("coefficients": {"drift": {"kind": "samples", "values": [)";
    for (int k = 0; k < 129; ++k) js << (k ? "," : "") << "0.0";
    js << R"(]}, "sigma": {"kind": "constant", "value": 1.0}}})";
    std::ofstream(doc) << js.str();
    auto out = dir / "sampled_qsd.csv";
    REQUIRE(run("qsd --model " + doc.string() + " --out " + out.string()) == 0);
    std::string text = slurp(out);
    auto pos = text.find("\"lambda0\":");
    REQUIRE(pos != std::string::npos);
    double lambda0 = std::strtod(text.c_str() + pos + 10, nullptr);
    CHECK(lambda0 == Catch::Approx(4.9348).margin(1e-2));

    SECTION("wrong sample count is a parse error") {
        auto bad = dir / "sampled_bad.json";
        std::string t = js.str();
        t.replace(t.find("129"), 3, "130");
        std::ofstream(bad) << t;
        CHECK(run("qsd --model " + bad.string() + " --out " + (dir / "nope.csv").string()) == 2);
    }
}

TEST_CASE("the decay pipeline refuses a non-entrance inaccessible boundary") {
    auto dir = work_dir();
    CHECK(run("qsd --model " + configs() + "/bd_unit_chain.json --out " +
              (dir / "ne.csv").string()) == 2);
    CHECK(run("qsd --model " + configs() + "/bd_entrance_chain.json --out " +
              (dir / "ent.csv").string()) == 0);
}
