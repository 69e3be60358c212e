// Command-line front end: run a single controller, compare several under
// identical seeds, or validate a scenario file.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "agile_mpc/harness.hpp"
#include "agile_mpc/scenario.hpp"

namespace fs = std::filesystem;
using namespace agile_mpc;

namespace {

struct CommonFlags {
    std::string scenario_path;
    std::string out_dir;
    int runs = 10;
    std::uint64_t seed = 42;
    int jobs = 0;
    bool force = false;
    std::string noise = "on";
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--scenario", f.scenario_path, "Scenario JSON file")->required();
    cmd->add_option("--out", f.out_dir, "Output directory")->required();
    cmd->add_option("--runs", f.runs, "Monte-Carlo repetitions")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", f.seed, "Base seed; run i uses seed + i");
    cmd->add_option("--jobs", f.jobs, "Worker cap (default: logical cores)");
    cmd->add_flag("--force", f.force, "Overwrite existing output files");
    cmd->add_option("--noise", f.noise, "Sensor noise on|off")
        ->check(CLI::IsMember({"on", "off"}));
}

std::uint64_t effective_seed(std::uint64_t flag_seed) {
    if (const char* env = std::getenv("AGILE_MPC_SEED")) {
        return std::strtoull(env, nullptr, 10);
    }
    return flag_seed;
}

void write_file(const fs::path& path, const std::string& content, bool force) {
    if (fs::exists(path) && !force) {
        throw std::runtime_error("refusing to overwrite " + path.string() +
                                 " (use --force)");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

Scenario load_and_check(const std::string& path) {
    Scenario sc = load_scenario(path);
    for (const auto& issue : validate_scenario(sc)) {
        if (issue.fatal) {
            throw std::invalid_argument("scenario " + path + ": " + issue.message);
        }
        std::cerr << "warning: scenario " << path << ": " << issue.message << "\n";
    }
    return sc;
}

struct ControllerOutput {
    MetricsReport mean;
    std::vector<MetricsReport> per_run;
};

ControllerOutput execute_controller(ControllerKind kind, const Scenario& sc,
                                    const CommonFlags& f, const fs::path& dir) {
    RunConfig cfg;
    cfg.controller = kind;
    cfg.n_runs = f.runs;
    cfg.base_seed = effective_seed(f.seed);
    cfg.scenario = sc;
    cfg.noise_on = f.noise != "off";
    cfg.jobs = f.jobs;

    const auto logs = run_many(cfg);

    fs::create_directories(dir);
    ControllerOutput out;
    MetricsReport timing_probe;
    for (int i = 0; i < static_cast<int>(logs.size()); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "run_%02d.csv", i);
        write_file(dir / name, trajectory_csv(logs[i]), f.force);
        out.per_run.push_back(compute_metrics(logs[i], sc, cfg.ts));
    }
    out.mean = aggregate(out.per_run);

    write_file(dir / "metrics.json", metrics_json(out.mean).dump(2) + "\n", f.force);
    write_file(dir / "timing.json", timing_json(out.mean).dump(2) + "\n", f.force);
    return out;
}

void print_summary(const std::string& name, const MetricsReport& rep) {
    std::cout << compare_table({name}, {rep});
}

int cmd_run(const CommonFlags& f, const std::string& controller) {
    const auto kind = controller_from_string(controller);
    if (!kind) {
        std::cerr << "error: unknown controller '" << controller
                  << "' (expected ulmpc|clmpc|aclmpc|nmpc)\n";
        return 1;
    }
    const Scenario sc = load_and_check(f.scenario_path);
    const auto out = execute_controller(*kind, sc, f, fs::path(f.out_dir));
    print_summary(controller, out.mean);
    return 0;
}

int cmd_compare(const CommonFlags& f, const std::vector<std::string>& controllers) {
    if (controllers.size() < 2) {
        std::cerr << "error: compare needs at least two controllers\n";
        return 1;
    }
    std::vector<ControllerKind> kinds;
    for (const auto& c : controllers) {
        const auto k = controller_from_string(c);
        if (!k) {
            std::cerr << "error: unknown controller '" << c << "'\n";
            return 1;
        }
        kinds.push_back(*k);
    }
    const Scenario sc = load_and_check(f.scenario_path);
    const fs::path root(f.out_dir);

    std::vector<MetricsReport> reports;
    nlohmann::json combined, combined_timing;
    for (size_t i = 0; i < kinds.size(); ++i) {
        const auto out = execute_controller(kinds[i], sc, f, root / controllers[i]);
        reports.push_back(out.mean);
        combined[controllers[i]] = metrics_json(out.mean);
        combined_timing[controllers[i]] = timing_json(out.mean);
    }
    write_file(root / "compare_metrics.json", combined.dump(2) + "\n", f.force);
    write_file(root / "compare_timing.json", combined_timing.dump(2) + "\n", f.force);
    const std::string table = compare_table(controllers, reports);
    write_file(root / "compare_table.txt", table, f.force);
    std::cout << table;
    return 0;
}

int cmd_validate(const std::string& path) {
    Scenario sc;
    try {
        sc = load_scenario(path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    bool fatal = false;
    for (const auto& issue : validate_scenario(sc)) {
        std::cerr << (issue.fatal ? "error: " : "warning: ") << issue.message << "\n";
        fatal = fatal || issue.fatal;
    }
    if (fatal) return 1;
    std::cout << "orbit: altitude " << sc.orbit.altitude_km << " km, inclination "
              << sc.orbit.inclination_deg << " deg\n";
    for (const auto& ph : sc.phases) {
        std::cout << ph.label << " [" << ph.t_start << ", " << ph.t_end << ")";
        if (ph.drift) {
            std::cout << " drift dlat=" << ph.dlat_deg << " dlon0=" << ph.dlon0_deg
                      << " rate=" << ph.dlon_rate_deg_s << " deg/s";
        } else {
            std::cout << " offset dlat=" << ph.dlat_deg << " dlon=" << ph.dlon0_deg;
        }
        std::cout << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Satellite attitude MPC comparison toolkit"};
    app.require_subcommand(1);

    CommonFlags run_flags, cmp_flags;
    std::string controller;
    std::vector<std::string> controllers;
    std::string validate_path;

    auto* run = app.add_subcommand("run", "Run one controller over the scenario");
    run->add_option("--controller", controller, "ulmpc|clmpc|aclmpc|nmpc")->required();
    add_common(run, run_flags);

    auto* cmp = app.add_subcommand("compare", "Run several controllers under equal seeds");
    cmp->add_option("--controllers", controllers, "comma-separated controller list")
        ->required()
        ->delimiter(',');
    add_common(cmp, cmp_flags);

    auto* val = app.add_subcommand("validate", "Check a scenario file");
    val->add_option("--scenario", validate_path, "Scenario JSON file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (run->parsed()) return cmd_run(run_flags, controller);
        if (cmp->parsed()) return cmd_compare(cmp_flags, controllers);
        if (val->parsed()) return cmd_validate(validate_path);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
