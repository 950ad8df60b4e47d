#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "deepoheat/config.hpp"
#include "deepoheat/eval.hpp"
#include "deepoheat/experiment.hpp"
#include "deepoheat/fdm.hpp"
#include "deepoheat/grf.hpp"
#include "deepoheat/operator_net.hpp"
#include "deepoheat/trainer.hpp"

namespace fs = std::filesystem;
using namespace deepoheat;
using nlohmann::json;

namespace {

void print_json(const json& j) { std::cout << j.dump() << std::endl; }

ChipConfig config_or_default(const std::string& path, ExperimentKind kind, ExperimentScale scale) {
    if (!path.empty()) return load_config(path);
    return experiment_setup(kind, scale).base;
}

int solve_fdm(const std::string& config_path, const std::string& out, double tol, int max_iter) {
    const ChipConfig config = load_config(config_path);
    SolveStats stats;
    const auto t0 = std::chrono::steady_clock::now();
    const TemperatureField field = solve_config(config, {tol, max_iter}, &stats);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_field_csv(field, out);
    const EnergyBalance eb = energy_balance(config, field);
    const auto [lo, hi] = std::minmax_element(field.values.begin(), field.values.end());
    print_json({{"nodes", field.values.size()},
                {"iterations", stats.iterations},
                {"relative_residual", stats.relative_residual},
                {"t_min_k", *lo},
                {"t_max_k", *hi},
                {"injected_w", eb.injected},
                {"convective_outflow_w", eb.convective_outflow},
                {"seconds", seconds},
                {"out", out}});
    return 0;
}

int sample_grf_cmd(int m, double length_scale, double jitter, int n, std::uint64_t seed, double p_max, bool raw,
                   const std::string& out) {
    fs::create_directories(out);
    GrfSpec spec{m, length_scale, jitter};
    const auto samples = sample_grf(spec, n, seed);
    std::vector<std::string> files;
    for (int i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "grf_%04d.txt", i);
        const Grid2D map =
            grf_to_power(samples[i], p_max, raw ? PowerNormalization::Raw : PowerNormalization::MinMax);
        write_matrix(map, fs::path(out) / name);
        files.emplace_back(name);
    }
    print_json({{"count", n}, {"m", m}, {"out", out}, {"files", files}});
    return 0;
}

struct TrainArgs {
    std::string config;
    std::string experiment = "powermap2d";
    std::string scale = "desk";
    std::optional<int> iterations;
    std::optional<int> functions;
    std::optional<int> points;
    double lr = 1e-3;
    double lr_decay = 0.9;
    int lr_decay_every = 500;
    std::uint64_t seed = 0;
    int checkpoint_every = 0;
    bool no_head_bias = false;
    double t_scale = 20.0;
    std::string out;
};

int train_cmd(const TrainArgs& a) {
    const ExperimentKind kind = parse_experiment_kind(a.experiment);
    const ExperimentScale scale = parse_experiment_scale(a.scale);
    ExperimentSetup setup = experiment_setup(kind, scale, config_or_default(a.config, kind, scale));
    setup.t_scale = a.t_scale;
    if (a.iterations) setup.train.iterations = *a.iterations;
    if (a.functions) setup.train.functions_per_iter = *a.functions;
    if (a.points) setup.points_per_function = *a.points;
    setup.train.lr = a.lr;
    setup.train.lr_decay = a.lr_decay;
    setup.train.lr_decay_every = a.lr_decay_every;
    setup.train.seed = a.seed;
    setup.train.checkpoint_every = a.checkpoint_every;
    setup.train.checkpoint_dir = fs::path(a.out) / "checkpoints";
    setup.model.head_bias = !a.no_head_bias;
    setup.train.checkpoint_metadata = experiment_metadata(setup);
    fs::create_directories(a.out);

    OperatorModel model = init_model(setup.model, a.seed);
    const TrainingProblem problem = make_problem(setup);
    const auto result = train(model, problem, setup.train, [](const LossReport& r) {
        if (r.iteration == 1 || r.iteration % 100 == 0) {
            std::cerr << "iter " << r.iteration << " loss " << r.total << '\n';
        }
    });
    write_loss_csv(result.history, fs::path(a.out) / "loss.csv");
    save_checkpoint(model, experiment_metadata(setup), fs::path(a.out) / "model.bin");
    json j{{"experiment", a.experiment}, {"iterations", setup.train.iterations}, {"out", a.out}};
    if (!result.history.empty()) {
        j["loss_first"] = result.history.front().total;
        j["loss_last"] = result.history.back().total;
    }
    print_json(j);
    return 0;
}

int predict_cmd(const std::string& model_path, const std::string& config_path, const std::string& powermap,
                std::optional<double> htc_top, std::optional<double> htc_bottom, const std::string& out) {
    std::map<std::string, std::string> meta;
    const OperatorModel model = load_checkpoint(model_path, &meta);
    const ExperimentKind kind = parse_experiment_kind(meta.at("experiment"));
    const ChipConfig config = load_config(config_path);
    ExperimentSetup setup = experiment_setup(kind, parse_experiment_scale(meta.at("scale")), config);
    setup.t_scale = parse_double(meta.at("t_scale"));
    setup.unit_power_watts = parse_double(meta.at("unit_power_w"));
    setup.htc_scale = parse_double(meta.at("htc_scale"));
    FunctionSample fn;
    if (kind == ExperimentKind::PowerMap2D) {
        if (powermap.empty()) throw std::invalid_argument("--powermap is required for a powermap2d model");
        fn = powermap_function(setup, read_matrix(powermap), config);
    } else {
        if (!htc_top || !htc_bottom) throw std::invalid_argument("--htc-top and --htc-bottom are required");
        fn = htc_function(setup, *htc_top, *htc_bottom, config);
    }
    const TemperatureField field = predict_field(model, experiment_scaling(setup), fn.encoded, config.mesh);
    write_field_csv(field, out);
    const auto [lo, hi] = std::minmax_element(field.values.begin(), field.values.end());
    print_json({{"nodes", field.values.size()}, {"t_min_k", *lo}, {"t_max_k", *hi}, {"out", out}});
    return 0;
}

int evaluate_cmd(const std::string& pred, const std::string& ref, const std::string& out) {
    const EvalReport r = evaluate(read_field_csv(pred), read_field_csv(ref));
    json j{{"mape_pct", r.mape}, {"pape_pct", r.pape}, {"n_points", r.n_points}};
    if (!out.empty()) std::ofstream(out) << j.dump(2) << '\n';
    print_json(j);
    return 0;
}

int export_slice_cmd(const std::string& field_path, const std::string& axis, int index, const std::string& out) {
    const TemperatureField field = read_field_csv(field_path);
    const auto pixels = export_slice(field, parse_slice_axis(axis), index, out);
    print_json({{"rows", pixels.size()},
                {"cols", pixels.empty() ? 0 : pixels.front().size()},
                {"pgm", out + ".pgm"},
                {"csv", out + ".csv"}});
    return 0;
}

int run_experiment_cmd(const std::string& name, const std::string& scale, std::uint64_t seed,
                       const ExperimentOptions& options, const std::string& out) {
    const auto result = run_experiment(parse_experiment_kind(name), parse_experiment_scale(scale), seed, out,
                                       options, [](const LossReport& r) {
                                           if (r.iteration == 1 || r.iteration % 100 == 0) {
                                               std::cerr << "iter " << r.iteration << " loss " << r.total << '\n';
                                           }
                                       });
    json cases = json::array();
    for (const auto& r : result.reports) {
        cases.push_back({{"name", r.name}, {"mape_pct", r.mape}, {"pape_pct", r.pape}});
    }
    print_json({{"experiment", name},
                {"scale", scale},
                {"cases", cases},
                {"speedup", result.timing.speedup},
                {"cold_speedup", result.timing.cold_speedup},
                {"out", out}});
    return 0;
}

std::string error_kind(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return "config";
    if (dynamic_cast<const SingularSystemError*>(&e)) return "singular_system";
    if (dynamic_cast<const SolverError*>(&e)) return "solver";
    if (dynamic_cast<const ad::NonFiniteError*>(&e)) return "non_finite";
    if (dynamic_cast<const GrfError*>(&e)) return "grf";
    if (dynamic_cast<const std::invalid_argument*>(&e)) return "invalid_argument";
    if (dynamic_cast<const std::out_of_range*>(&e)) return "out_of_range";
    return "runtime";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Steady chip thermal solver and physics-informed operator network"};
    app.require_subcommand(1);

    std::string config_path, out, model_path, powermap, pred, ref, field, axis = "z", name, scale = "desk";
    double tol = 1e-10;
    int max_iter = 0;
    auto* solve = app.add_subcommand("solve-fdm", "Solve a configuration with the finite-difference oracle");
    solve->add_option("--config", config_path, "Configuration document")->required();
    solve->add_option("--out", out, "Output field CSV")->required();
    solve->add_option("--tol", tol, "Relative residual tolerance");
    solve->add_option("--max-iter", max_iter, "Iteration cap (0: 10 x unknowns)");

    int m = 21, n = 50;
    double length_scale = 0.3, jitter = 1e-8, p_max = 1.0;
    std::uint64_t seed = 0;
    bool raw = false;
    auto* grf = app.add_subcommand("sample-grf", "Sample Gaussian random field power maps");
    grf->add_option("--m", m, "Grid points per side");
    grf->add_option("--length-scale", length_scale, "Kernel length scale on the unit square");
    grf->add_option("--jitter", jitter, "Diagonal regularizer");
    grf->add_option("--n", n, "Number of maps");
    grf->add_option("--seed", seed, "Random seed");
    grf->add_option("--p-max", p_max, "Upper end of the min-max rescale, unit power");
    grf->add_flag("--raw", raw, "Write raw samples without rescaling");
    grf->add_option("--out", out, "Output directory")->required();

    TrainArgs targs;
    auto* tr = app.add_subcommand("train", "Train the operator network with the physics-informed loss");
    tr->add_option("--config", targs.config, "Base configuration (default: the experiment's reference)");
    tr->add_option("--experiment", targs.experiment, "powermap2d | htc-dual");
    tr->add_option("--scale", targs.scale, "desk | paper network and budget");
    tr->add_option("--iterations", targs.iterations, "Training iterations");
    tr->add_option("--functions-per-iter", targs.functions, "Input functions per iteration");
    tr->add_option("--points-per-function", targs.points, "Random collocation points per function");
    tr->add_option("--lr", targs.lr, "Initial learning rate");
    tr->add_option("--lr-decay", targs.lr_decay, "Step decay factor");
    tr->add_option("--lr-decay-every", targs.lr_decay_every, "Iterations per decay step");
    tr->add_option("--seed", targs.seed, "Random seed");
    tr->add_option("--checkpoint-every", targs.checkpoint_every, "Checkpoint interval (0: none)");
    tr->add_option("--t-scale", targs.t_scale, "Temperature scale in K");
    tr->add_flag("--no-head-bias", targs.no_head_bias, "Drop the trainable output bias");
    tr->add_option("--out", targs.out, "Output directory")->required();

    std::optional<double> htc_top, htc_bottom;
    auto* pr = app.add_subcommand("predict", "Predict a temperature field with a trained model");
    pr->add_option("--model", model_path, "Checkpoint")->required();
    pr->add_option("--config", config_path, "Configuration whose mesh is queried")->required();
    pr->add_option("--powermap", powermap, "Top-surface unit-power map (powermap2d models)");
    pr->add_option("--htc-top", htc_top, "Top HTC, W/(m^2 K) (htc-dual models)");
    pr->add_option("--htc-bottom", htc_bottom, "Bottom HTC, W/(m^2 K) (htc-dual models)");
    pr->add_option("--out", out, "Output field CSV")->required();

    auto* ev = app.add_subcommand("evaluate", "MAPE and PAPE of a predicted field against a reference");
    ev->add_option("--pred", pred, "Predicted field CSV")->required();
    ev->add_option("--ref", ref, "Reference field CSV")->required();
    ev->add_option("--out", out, "Optional report JSON");

    int index = 0;
    auto* ex = app.add_subcommand("export-slice", "Write one mesh slice as PGM and CSV");
    ex->add_option("--field", field, "Field CSV")->required();
    ex->add_option("--axis", axis, "x | y | z");
    ex->add_option("--index", index, "Node index along the axis")->required();
    ex->add_option("--out", out, "Output path stem")->required();

    ExperimentOptions eopts;
    bool no_bias = false, no_export = false;
    auto* re = app.add_subcommand("run-experiment", "Train, evaluate against the oracle and benchmark");
    re->add_option("--name", name, "powermap2d | htc-dual")->required();
    re->add_option("--scale", scale, "desk | paper");
    re->add_option("--seed", seed, "Random seed");
    re->add_option("--iterations", eopts.iterations, "Override training iterations");
    re->add_option("--functions-per-iter", eopts.functions_per_iter, "Override functions per iteration");
    re->add_option("--points-per-function", eopts.points_per_function, "Override random points per function");
    re->add_option("--benchmark-runs", eopts.benchmark_runs, "Timing repetitions (>= 5)");
    re->add_flag("--no-head-bias", no_bias, "Drop the trainable output bias");
    re->add_flag("--no-export", no_export, "Skip field and slice exports");
    re->add_option("--out", out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << json{{"error", "usage"}, {"message", e.what()}}.dump() << std::endl;
        return 2;
    }

    try {
        if (*solve) return solve_fdm(config_path, out, tol, max_iter);
        if (*grf) return sample_grf_cmd(m, length_scale, jitter, n, seed, p_max, raw, out);
        if (*tr) return train_cmd(targs);
        if (*pr) return predict_cmd(model_path, config_path, powermap, htc_top, htc_bottom, out);
        if (*ev) return evaluate_cmd(pred, ref, out);
        if (*ex) return export_slice_cmd(field, axis, index, out);
        if (*re) {
            eopts.head_bias = !no_bias;
            eopts.export_fields = !no_export;
            return run_experiment_cmd(name, scale, seed, eopts, out);
        }
    } catch (const ConfigError& e) {
        std::cerr << json{{"error", "config"}, {"key", e.key()}, {"message", e.reason()}}.dump() << std::endl;
        return 1;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", error_kind(e)}, {"message", e.what()}}.dump() << std::endl;
        return 1;
    }
    return 1;
}
