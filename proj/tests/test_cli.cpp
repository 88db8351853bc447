#include "doctest.h"

#include "covfk/cli.hpp"
#include "covfk/fault.hpp"

#include <cstdlib>
#include <fstream>

using namespace covfk;
using nlohmann::json;

namespace {

json strip_timing(json j) {
    j.erase("timing");
    return j;
}

int run_binary(const std::string& args) {
    const std::string cmd = std::string(COVFK_BIN) + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

} // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("trivial fk config passes with zero stderr") {
    json cfg = {
        {"geometry", {{"kind", "circle"}, {"radius", 1.0}}},
        {"bundle", {{"preset", "trivial"}, {"rank", 1}}},
        {"operator", json::object()},
        {"psi", {{"const_vector", json::array({json::array({1.0, 0.0})})}}},
        {"x", json::array({0.3})},
        {"t", 0.5},
        {"mc", {{"paths", 200}, {"dt", 0.01}, {"seed", 1}}},
    };
    auto res = run_command("fk", cfg);
    CHECK(res.ok);
    CHECK(res.doc["pass"].get<bool>());
    CHECK(res.doc["estimate"]["std_error"][0][0].get<double>() == 0.0);
    CHECK(res.doc["estimate"]["mean"][0][0][0].get<double>() == doctest::Approx(1.0));
}

TEST_CASE("circle a d + V config reports an oracle comparison that passes") {
    json cfg = {
        {"geometry", {{"kind", "circle"}, {"radius", 1.0}}},
        {"bundle", {{"preset", "trivial"}, {"rank", 1}}},
        {"operator",
         {{"sigma1", json::array({{{"const", 1.0}}})},
          {"q0", json::array({{{"const", json::array({2.0, 3.0})}}})}}},
        {"psi", {{"fourier", 1}}},
        {"x", json::array({0.9})},
        {"t", 0.25},
        {"mc", {{"paths", 8000}, {"dt", 0.002}, {"seed", 7}}},
    };
    auto res = run_command("fk", cfg);
    CHECK(res.ok);
    CHECK(res.doc["oracle"]["pass"].get<bool>());
    CHECK(res.doc["oracle"]["abs_error"].get<double>() <
          res.doc["oracle"]["tolerance"].get<double>());
}

TEST_CASE("unknown keys are rejected") {
    json cfg = {
        {"geometry", {{"kind", "circle"}, {"radius", 1.0}}},
        {"bundle", {{"preset", "trivial"}}},
        {"x", json::array({0.0})},
        {"t", 0.5},
        {"mc", {{"paths", 10}, {"dt", 0.1}}},
        {"psi", {{"const_vector", 1.0}}},
        {"typo_key", 1},
    };
    CHECK_THROWS_AS(run_command("fk", cfg), ConfigError);

    json cfg2 = {{"suite", "nonexistent"}};
    CHECK_THROWS_AS(run_command("validate", cfg2), ConfigError);
}

TEST_CASE("trace: P = 0 passes with value zero") {
    json cfg = {
        {"geometry", {{"kind", "circle"}, {"radius", 1.0}}},
        {"bundle", {{"preset", "trivial"}, {"rank", 1}}},
        {"P", json::object()},
        {"t", 1.0},
        {"mc", {{"paths", 64}, {"dt", 0.01}, {"seed", 2}}},
        {"grid", 16},
    };
    auto res = run_command("trace", cfg);
    CHECK(res.ok);
    CHECK(res.doc["estimate"]["mean"][0][0][0].get<double>() == 0.0);
}

TEST_CASE("trace: multiplication operator agrees with the Duhamel oracle") {
    json cfg = {
        {"geometry", {{"kind", "circle"}, {"radius", 1.0}}},
        {"bundle", {{"preset", "trivial"}, {"rank", 1}}},
        {"P",
         {{"q0", json::array({{{"const", 1.0}}, {{"cos", 1}, {"coeff", 1.0}}})}}},
        {"t", 1.0},
        {"mc", {{"paths", 150}, {"dt", 0.004}, {"seed", 3}}},
        {"grid", 64},
    };
    auto res = run_command("trace", cfg);
    CHECK(res.ok);
    CHECK(res.doc["preflight"]["pass"].get<bool>());
    CHECK(res.doc["oracle"]["pass"].get<bool>());
}

TEST_CASE("trace preflight fails under the berezin fault") {
    set_fault(Fault::berezin_sign);
    json cfg = {
        {"geometry", {{"kind", "circle"}, {"radius", 1.0}}},
        {"bundle", {{"preset", "trivial"}, {"rank", 1}}},
        {"P", json::object()},
        {"t", 1.0},
        {"mc", {{"paths", 16}, {"dt", 0.01}, {"seed", 2}}},
        {"grid", 8},
    };
    auto res = run_command("trace", cfg);
    set_fault(Fault::none);
    CHECK(!res.ok);
    CHECK(!res.doc["preflight"]["pass"].get<bool>());
}

TEST_CASE("chern: N = 1 with empty alpha1 is exactly zero") {
    json cfg = {
        {"N", 1},
        {"alpha0", json::array({{{"volume", 1.0}}})},
        {"mc", {{"paths", 32}, {"dt", 0.01}, {"seed", 4}}},
        {"grid", 4},
    };
    auto res = run_command("chern", cfg);
    CHECK(res.ok);
    CHECK(res.doc["estimate"]["mean"][0][0][0].get<double>() == 0.0);
    CHECK(res.doc["estimate"]["mean"][0][0][1].get<double>() == 0.0);
}

TEST_CASE("chern: N = 0 index run") {
    json cfg = {
        {"N", 0},
        {"alpha0", json::array({{{"const", 1.0}}})},
        {"t", 2.0},
        {"mc", {{"paths", 60}, {"dt", 0.01}, {"seed", 5}}},
        {"grid", 4},
    };
    auto res = run_command("chern", cfg);
    CHECK(res.ok);
    const double re = res.doc["estimate"]["mean"][0][0][0].get<double>();
    const double se = res.doc["estimate"]["std_error"][0][0].get<double>();
    CHECK(std::abs(re) < 4 * se + 1e-3);
}

TEST_CASE("validate suites pass and 'all' emits a summary") {
    auto res = run_command("validate", json{{"suite", "geometry"}});
    CHECK(res.ok);
    for (auto& c : res.doc["checks"]) CHECK(c["pass"].get<bool>());

    auto all = run_command("validate", json{{"suite", "all"}});
    CHECK(all.ok);
    CHECK(all.doc["checks"].size() > 8);
}

TEST_CASE("result JSON is byte-identical across worker counts (modulo timing)") {
    json cfg = {
        {"geometry", {{"kind", "circle"}, {"radius", 1.0}}},
        {"bundle", {{"preset", "trivial"}, {"rank", 1}}},
        {"operator",
         {{"sigma1", json::array({{{"const", 0.5}}})},
          {"q0", json::array({{{"cos", 1}, {"coeff", 0.4}}})}}},
        {"psi", {{"fourier", 2}}},
        {"x", json::array({0.1})},
        {"t", 0.4},
        {"mc", {{"paths", 9000}, {"dt", 0.005}, {"seed", 11}, {"workers", 1}}},
    };
    auto a = run_command("fk", cfg);
    cfg["mc"]["workers"] = 2;
    auto b = run_command("fk", cfg);
    json da = strip_timing(a.doc), db = strip_timing(b.doc);
    da["config"]["mc"].erase("workers");
    db["config"]["mc"].erase("workers");
    CHECK(da.dump() == db.dump());
}

TEST_CASE("binary exit codes: 0 success, 1 runtime failure, 2 config error") {
    // success
    {
        std::ofstream f("/tmp/covfk_ok.json");
        f << R"({"geometry":{"kind":"circle","radius":1.0},"bundle":{"preset":"trivial","rank":1},)"
          << R"("operator":{},"psi":{"const_vector":[[1.0,0.0]]},"x":[0.0],"t":0.2,)"
          << R"("mc":{"paths":50,"dt":0.01,"seed":1}})";
    }
    CHECK(run_binary("fk --config /tmp/covfk_ok.json") == 0);

    // malformed JSON -> 2
    {
        std::ofstream f("/tmp/covfk_bad.json");
        f << "{ not json";
    }
    CHECK(run_binary("fk --config /tmp/covfk_bad.json") == 2);

    // unknown key -> 2
    {
        std::ofstream f("/tmp/covfk_unknown.json");
        f << R"({"geometry":{"kind":"circle","radius":1.0},"bundle":{"preset":"trivial"},)"
          << R"("oops":1,"psi":{"const_vector":[[1.0,0.0]]},"x":[0.0],"t":0.2,)"
          << R"("mc":{"paths":10,"dt":0.01}})";
    }
    CHECK(run_binary("fk --config /tmp/covfk_unknown.json") == 2);

    // forced preflight failure -> 1
    {
        std::ofstream f("/tmp/covfk_trace.json");
        f << R"({"geometry":{"kind":"circle","radius":1.0},"bundle":{"preset":"trivial","rank":1},)"
          << R"("P":{},"t":1.0,"mc":{"paths":16,"dt":0.01,"seed":2},"grid":8})";
    }
    CHECK(run_binary("trace --config /tmp/covfk_trace.json") == 0);
    CHECK(run_binary("trace --config /tmp/covfk_trace.json --inject-fault berezin_sign") ==
          1);
}

TEST_SUITE_END();
