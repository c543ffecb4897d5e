#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "fieldforge/runner.hpp"
#include "fieldforge/scenario.hpp"
#include "test_support.hpp"

using namespace fieldforge;
namespace fs = std::filesystem;

namespace {

const char* plate_text = R"({
  "name": "plate",
  "physics": "electrostatic",
  "study": "static",
  "mesh": {
    "generator": "rectangle", "width": 1.0, "height": 1.0, "nx": 2, "ny": 4,
    "blocks": [ { "x": [0.0, 1.0], "y": [0.5, 1.0], "region": 2 } ],
    "segments": [ { "from": [0.0, 0.0], "to": [1.0, 0.0], "region": 3 },
                  { "from": [0.0, 1.0], "to": [1.0, 1.0], "region": 4 } ]
  },
  "materials": [ { "name": "low", "relative_permittivity": 1.0 }, { "name": "high", "relative_permittivity": 2.0 } ],
  "boundary_conditions": [ { "name": "gnd", "type": "dirichlet", "value": 0.0 },
                           { "name": "hv", "type": "dirichlet", "value": 1.0 } ],
  "regions": [ { "id": 1, "material": "low" }, { "id": 2, "material": "high" },
               { "id": 3, "bc": "gnd" }, { "id": 4, "bc": "hv" } ],
  "outputs": { "vtk": true, "probes": [ { "name": "mid", "position": [0.5, 0.5], "field": "potential" } ] }
})";

Json plate() { return Json::parse(plate_text); }

std::string config_error(const Json& j) {
    try {
        parse_scenario(j, ".");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "<no error>";
}

std::string summary_value(const RunReport& r, const std::string& key) {
    for (const auto& [k, v] : r.summary)
        if (k == key) return v;
    return "<missing>";
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("fieldforge_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

int cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string("\"") + FF_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_json(const fs::path& p, const Json& j) { std::ofstream(p) << j.dump(2); }

}  // namespace

TEST(Config, ParsesAndRunsInlineScenario) {
    const auto s = parse_scenario(plate(), ".");
    EXPECT_EQ(s.name, "plate");
    EXPECT_EQ(s.physics, Physics::electrostatic);
    EXPECT_EQ(s.mesh->num_elements(), 16u);
    EXPECT_EQ(s.materials.size(), 2u);
    TempDir dir("scenario_inline");
    const auto rep = run_scenario(s, dir.path);
    EXPECT_NEAR(std::stod(summary_value(rep, "probe mid")), 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(std::stod(summary_value(rep, "energy [J]")), 0.5 * (4.0 / 3.0) * eps0, 1e-12 * eps0);
    ASSERT_EQ(rep.files.size(), 1u);
    EXPECT_TRUE(fs::exists(dir.path / "plate.vtk"));
}

TEST(Config, UnknownAndMissingKeys) {
    auto j = plate();
    j["colour"] = "red";
    EXPECT_EQ(config_error(j), "scenario: unknown key 'colour'");
    j = plate();
    j["materials"][0]["permitivity"] = 1.0;
    EXPECT_NE(config_error(j).find("unknown key 'permitivity'"), std::string::npos);
    j = plate();
    j.erase("physics");
    EXPECT_EQ(config_error(j), "scenario: missing key 'physics'");
    j = plate();
    j["mesh"]["generator"] = "voronoi";
    EXPECT_EQ(config_error(j), "mesh.generator: unknown generator 'voronoi'");
}

TEST(Config, InvalidValues) {
    auto j = plate();
    j["study"] = "harmonic";
    j["frequency"] = 50.0;
    EXPECT_EQ(config_error(j), "scenario.study: harmonic studies are magnetic only");
    j = plate();
    j["materials"][1]["name"] = "low";
    EXPECT_EQ(config_error(j), "materials: duplicate name 'low'");
    j = plate();
    j["mesh"]["nx"] = 0;
    EXPECT_NE(config_error(j).rfind("mesh", 0), std::string::npos);
    j = plate();
    j["time"] = Json::object();
    EXPECT_NE(config_error(j).find("time"), std::string::npos);
    j = plate();
    j["name"] = "a/b";
    EXPECT_EQ(config_error(j), "scenario.name: must be a plain file stem");
}

TEST(Config, RegionBindingsChecked) {
    auto j = plate();
    j["regions"].push_back({{"id", 77}, {"bc", "gnd"}});
    const auto s = parse_scenario(j, ".");
    TempDir dir("scenario_binding");
    try {
        run_scenario(s, dir.path);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("no mesh entity carries region id 77"), std::string::npos);
    }
}

TEST(Config, ShippedScenariosLoad) {
    for (const char* name : {"plate_capacitor", "manufactured_poisson", "cylindrical_resistor", "transformer"}) {
        const auto s = load_scenario(fs::path(FF_SCENARIO_DIR) / name);
        EXPECT_EQ(s.name, name);
        EXPECT_GT(s.mesh->num_elements(), 0u);
    }
    const auto res = load_scenario(fs::path(FF_SCENARIO_DIR) / "cylindrical_resistor");
    EXPECT_EQ(res.physics, Physics::electrothermal);
    EXPECT_EQ(res.coords, CoordSystem::axisymmetric);
    EXPECT_EQ(res.time_axis.size(), 299u);
}

TEST(Config, FileErrors) {
    EXPECT_THROW(load_scenario("/nonexistent/fieldforge/scenario"), IoError);
    TempDir dir("scenario_badjson");
    std::ofstream(dir.path / "scenario.json") << "{ \"name\": ";
    EXPECT_THROW(load_scenario(dir.path), ConfigError);
    auto j = plate();
    j["mesh"] = {{"file", "missing.msh"}};
    EXPECT_THROW(parse_scenario(j, dir.path), MshError);
}

TEST(Convergence, ZeroRefinementsGiveOneRow) {
    const auto s = load_scenario(fs::path(FF_SCENARIO_DIR) / "manufactured_poisson");
    const auto rows = convergence_study(s, 0);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_FALSE(rows[0].order);
    EXPECT_GT(rows[0].l2_error, 0.0);
    EXPECT_THROW(convergence_study(parse_scenario(plate(), "."), 1), ConfigError);
}

TEST(Convergence, SecondOrderOnManufacturedSolution) {
    const auto rows = convergence_study(load_scenario(fs::path(FF_SCENARIO_DIR) / "manufactured_poisson"), 2);
    ASSERT_EQ(rows.size(), 3u);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        ASSERT_TRUE(rows[i].order);
        EXPECT_GT(*rows[i].order, 1.8);
        EXPECT_LT(*rows[i].order, 2.2);
        EXPECT_NEAR(rows[i].h, rows[i - 1].h / 2.0, 1e-15);
    }
}

TEST(Lint, ReportsFixtureStatistics) {
    const auto r = mesh_lint(std::string(FF_TEST_DATA_DIR) + "/msh/unit_square.msh");
    std::map<std::string, std::string> kv(r.lines.begin(), r.lines.end());
    EXPECT_EQ(kv["nodes"], "4");
    EXPECT_EQ(kv["elements"], "2");
    EXPECT_EQ(kv["edges"], "5");
    EXPECT_EQ(kv["boundary edges"], "4");
    EXPECT_EQ(kv["total area"], "1");
    EXPECT_EQ(kv["group 1:1"], "\"ground\" entities=2");
}

TEST(Cli, ExitCodes) {
    TempDir dir("cli");
    const auto log = dir.path / "log.txt";
    const std::string out = " --output-dir \"" + (dir.path / "out").string() + "\" ";

    EXPECT_EQ(cli("--help", log), 0);
    EXPECT_NE(slurp(log).find("mesh-lint"), std::string::npos);
    EXPECT_EQ(cli("", log), 2);
    EXPECT_EQ(cli("frobnicate", log), 2);
    EXPECT_NE(slurp(log).find("error[usage]"), std::string::npos);

    const auto plate_dir = fs::path(FF_SCENARIO_DIR) / "plate_capacitor";
    EXPECT_EQ(cli(out + "run \"" + plate_dir.string() + "\"", log), 0);
    EXPECT_NE(slurp(log).find("probe interface_midpoint"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir.path / "out" / "plate_capacitor.vtk"));

    auto bad = plate();
    bad["colour"] = 1;
    write_json(dir.path / "bad.json", bad);
    EXPECT_EQ(cli(out + "run \"" + (dir.path / "bad.json").string() + "\"", log), 2);
    EXPECT_EQ(slurp(log), "error[schema]: scenario: unknown key 'colour'\n");

    auto floating = plate();
    floating["regions"] = Json::parse(R"([ { "id": 1, "material": "low" }, { "id": 2, "material": "high" } ])");
    write_json(dir.path / "floating.json", floating);
    EXPECT_EQ(cli(out + "run \"" + (dir.path / "floating.json").string() + "\"", log), 3);
    EXPECT_EQ(slurp(log).rfind("error[solver]: singular system", 0), 0u);

    EXPECT_EQ(cli(out + "run /nonexistent/scenario.json", log), 4);
    EXPECT_EQ(slurp(log).rfind("error[io]: ", 0), 0u);
    EXPECT_EQ(cli("mesh-lint \"" + std::string(FF_TEST_DATA_DIR) + "/msh/quad_element.msh\"", log), 4);
    EXPECT_EQ(slurp(log), "error[io]: line 44: unsupported element type 3\n");
    EXPECT_EQ(cli("mesh-lint \"" + std::string(FF_TEST_DATA_DIR) + "/msh/unit_square.msh\"", log), 0);

    EXPECT_EQ(cli(out + "convergence \"" + (fs::path(FF_SCENARIO_DIR) / "manufactured_poisson").string() + "\" --refinements 1", log), 0);
    const auto csv = slurp(dir.path / "out" / "manufactured_poisson_convergence.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
    EXPECT_EQ(csv.rfind("level,h,dofs,l2_error,order\n", 0), 0u);
}
