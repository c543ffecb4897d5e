#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fieldforge/diagnostics.hpp"
#include "fieldforge/msh_io.hpp"
#include "fieldforge/runner.hpp"
#include "fieldforge/scenario.hpp"

namespace ff = fieldforge;

namespace {

constexpr int exit_schema = 2;
constexpr int exit_solver = 3;
constexpr int exit_io = 4;

std::string one_line(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

template <typename F>
int guarded(F&& body) {
    try {
        return body();
    } catch (const ff::ConfigError& e) {
        std::cerr << "error[schema]: " << one_line(e.what()) << '\n';
        return exit_schema;
    } catch (const ff::SolverError& e) {
        std::cerr << "error[solver]: " << one_line(e.what()) << '\n';
        return exit_solver;
    } catch (const ff::IoError& e) {
        std::cerr << "error[io]: " << one_line(e.what()) << '\n';
        return exit_io;
    } catch (const ff::MshError& e) {
        std::cerr << "error[io]: " << one_line(e.what()) << '\n';
        return exit_io;
    } catch (const ff::Error& e) {
        // model invariants violated by the configured data
        std::cerr << "error[schema]: " << one_line(e.what()) << '\n';
        return exit_schema;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error[io]: " << one_line(e.what()) << '\n';
        return exit_io;
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << one_line(e.what()) << '\n';
        return 1;
    }
}

void print_pairs(const std::vector<std::pair<std::string, std::string>>& lines) {
    std::size_t width = 0;
    for (const auto& [k, v] : lines) width = std::max(width, k.size());
    for (const auto& [k, v] : lines) std::cout << k << std::string(width - k.size(), ' ') << " : " << v << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fieldforge: 2D finite-element field simulation (electrostatic, current flow, thermal, magnetic)"};
    app.require_subcommand(1);
    std::string output_dir = "output";
    bool quiet = false;
    app.add_option("--output-dir", output_dir, "directory for VTK/CSV artifacts")->capture_default_str();
    app.add_flag("--quiet", quiet, "print errors only");

    std::string config;
    auto* run = app.add_subcommand("run", "run a scenario (directory or scenario.json)");
    run->add_option("config", config, "scenario directory or JSON file")->required();

    std::string conv_config;
    std::size_t refinements = 3;
    auto* conv = app.add_subcommand("convergence", "uniform-refinement study against the scenario's analytic reference");
    conv->add_option("config", conv_config, "scenario directory or JSON file")->required();
    conv->add_option("--refinements", refinements, "number of uniform refinements")->capture_default_str();

    std::string msh_file;
    bool axisymmetric = false;
    auto* lint = app.add_subcommand("mesh-lint", "parse an MSH 4.1 file and report mesh statistics");
    lint->add_option("file", msh_file, "MSH file")->required();
    lint->add_flag("--axisymmetric", axisymmetric, "interpret x as the radial coordinate");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error[usage]: " << one_line(e.what()) << '\n';
        return exit_schema;
    }

    if (quiet) ff::set_warning_handler([](const std::string&) {});

    if (*run) {
        return guarded([&] {
            const auto t0 = std::chrono::steady_clock::now();
            const auto scenario = ff::load_scenario(config);
            const auto report = ff::run_scenario(scenario, output_dir);
            const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (!quiet) {
                auto lines = report.summary;
                for (const auto& f : report.files) lines.emplace_back("wrote", f.string());
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.3f s", wall);
                lines.emplace_back("wall time", buf);
                print_pairs(lines);
            }
            return 0;
        });
    }
    if (*conv) {
        return guarded([&] {
            const auto scenario = ff::load_scenario(conv_config);
            const auto rows = ff::convergence_study(scenario, refinements);
            std::vector<std::string> header{"level", "h", "dofs", "l2_error", "order"};
            std::vector<std::vector<double>> table;
            for (const auto& r : rows)
                table.push_back({static_cast<double>(r.level), r.h, static_cast<double>(r.dofs), r.l2_error, r.order.value_or(0.0)});
            std::filesystem::create_directories(output_dir);
            const auto path = std::filesystem::path(output_dir) / (scenario.name + "_convergence.csv");
            ff::export_csv(path.string(), header, table);
            if (!quiet) {
                std::printf("%-6s %-14s %-8s %-14s %s\n", "level", "h", "dofs", "L2 error", "order");
                for (const auto& r : rows) {
                    std::printf("%-6zu %-14.6e %-8zu %-14.6e ", r.level, r.h, r.dofs, r.l2_error);
                    if (r.order) std::printf("%.4f\n", *r.order);
                    else std::printf("-\n");
                }
                std::printf("wrote %s\n", path.string().c_str());
            }
            return 0;
        });
    }
    return guarded([&] {
        const auto report = ff::mesh_lint(msh_file, axisymmetric ? ff::CoordSystem::axisymmetric : ff::CoordSystem::cartesian);
        if (!quiet) print_pairs(report.lines);
        return 0;
    });
}
