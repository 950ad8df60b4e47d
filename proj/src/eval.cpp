#include "deepoheat/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

namespace deepoheat {

EvalReport evaluate(const std::vector<double>& pred, const std::vector<double>& ref) {
    if (pred.size() != ref.size()) {
        throw std::invalid_argument("evaluate: prediction has " + std::to_string(pred.size()) +
                                    " points, reference has " + std::to_string(ref.size()));
    }
    if (ref.empty()) throw std::invalid_argument("evaluate: empty point set");
    EvalReport r;
    r.n_points = ref.size();
    double total = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        if (!(ref[i] > 0.0)) throw std::invalid_argument("evaluate: reference temperature must be > 0 K");
        const double e = std::abs(pred[i] - ref[i]) / ref[i];
        total += e;
        r.pape = std::max(r.pape, e);
    }
    r.mape = 100.0 * total / static_cast<double>(ref.size());
    r.pape *= 100.0;
    // the mean never exceeds the max, but rounding in the sum can
    r.mape = std::min(r.mape, r.pape);
    return r;
}

EvalReport evaluate(const TemperatureField& pred, const TemperatureField& ref) {
    if (!(pred.mesh == ref.mesh)) throw std::invalid_argument("evaluate: fields are on different meshes");
    return evaluate(pred.values, ref.values);
}

Mat mesh_unit_coords(const Mesh& mesh, const ScalingMap& scaling) {
    Mat out(3, static_cast<Eigen::Index>(mesh.node_count()));
    for (int k = 0; k < mesh.counts[2]; ++k) {
        for (int j = 0; j < mesh.counts[1]; ++j) {
            for (int i = 0; i < mesh.counts[0]; ++i) {
                const Vec3 y = scaling.to_unit(mesh.node(i, j, k));
                const auto c = static_cast<Eigen::Index>(mesh.index(i, j, k));
                for (int a = 0; a < 3; ++a) out(a, c) = y[a];
            }
        }
    }
    return out;
}

namespace {

std::vector<Mat> as_columns(const std::vector<Eigen::VectorXd>& encoded) {
    std::vector<Mat> out;
    for (const auto& e : encoded) out.emplace_back(e);
    return out;
}

template <class Fn>
double median_seconds(int runs, Fn&& fn) {
    std::vector<double> t;
    for (int r = 0; r < runs; ++r) {
        const auto start = std::chrono::steady_clock::now();
        fn();
        t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
    std::sort(t.begin(), t.end());
    return t.size() % 2 ? t[t.size() / 2] : 0.5 * (t[t.size() / 2 - 1] + t[t.size() / 2]);
}

}  // namespace

TemperatureField predict_field(const OperatorModel& model, const ScalingMap& scaling,
                               const std::vector<Eigen::VectorXd>& encoded, const Mesh& mesh) {
    const Predictor predictor(model, mesh_unit_coords(mesh, scaling));
    const Eigen::VectorXd tau = predictor.predict(as_columns(encoded));
    TemperatureField field;
    field.mesh = mesh;
    field.values.resize(tau.size());
    for (Eigen::Index i = 0; i < tau.size(); ++i) field.values[i] = scaling.to_kelvin(tau[i]);
    return field;
}

BenchmarkResult benchmark(const OperatorModel& model, const ScalingMap& scaling,
                          const std::vector<Eigen::VectorXd>& encoded, const ChipConfig& oracle_config, int runs) {
    runs = std::max(runs, 5);
    const Mesh& mesh = oracle_config.mesh;
    const Mat coords = mesh_unit_coords(mesh, scaling);
    const auto columns = as_columns(encoded);
    const Predictor predictor(model, coords);
    volatile double sink = 0.0;

    BenchmarkResult r;
    r.runs = runs;
    r.pred_time_s = median_seconds(runs, [&] {
        const Eigen::VectorXd tau = predictor.predict(columns);
        std::vector<double> kelvin(tau.size());
        for (Eigen::Index i = 0; i < tau.size(); ++i) kelvin[i] = scaling.to_kelvin(tau[i]);
        sink = sink + kelvin.front();
    });
    r.cold_pred_time_s = median_seconds(runs, [&] {
        const TemperatureField f = predict_field(model, scaling, encoded, mesh);
        sink = sink + f.values.front();
    });
    r.oracle_time_s = median_seconds(runs, [&] {
        const TemperatureField f = solve_config(oracle_config);
        sink = sink + f.values.front();
    });
    r.speedup = r.oracle_time_s / r.pred_time_s;
    r.cold_speedup = r.oracle_time_s / r.cold_pred_time_s;
    return r;
}

SliceAxis parse_slice_axis(std::string_view name) {
    if (name == "x") return SliceAxis::X;
    if (name == "y") return SliceAxis::Y;
    if (name == "z") return SliceAxis::Z;
    throw std::invalid_argument("slice axis must be x, y or z");
}

std::vector<std::vector<std::uint8_t>> export_slice(const TemperatureField& field, SliceAxis axis, int index,
                                                    const std::filesystem::path& stem) {
    const Mesh& mesh = field.mesh;
    const int a = static_cast<int>(axis);
    if (index < 0 || index >= mesh.counts[a]) {
        throw std::out_of_range("slice index " + std::to_string(index) + " outside [0, " +
                                std::to_string(mesh.counts[a] - 1) + "]");
    }
    const auto [u, v] = surface_plane_axes(static_cast<Surface>(2 * a));
    const int cols = mesh.counts[u];
    const int rows = mesh.counts[v];
    Grid2D values(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            std::array<int, 3> ijk{};
            ijk[a] = index;
            ijk[u] = c;
            ijk[v] = r;
            values(r, c) = field.at(ijk[0], ijk[1], ijk[2]);
        }
    }
    const auto [lo_it, hi_it] = std::minmax_element(values.data.begin(), values.data.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    std::vector<std::vector<std::uint8_t>> pixels(rows, std::vector<std::uint8_t>(cols, 128));
    if (hi > lo) {
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) {
                pixels[r][c] = static_cast<std::uint8_t>(std::lround(255.0 * (values(r, c) - lo) / (hi - lo)));
            }
        }
    }
    std::filesystem::path pgm = stem;
    pgm += ".pgm";
    std::ofstream img(pgm, std::ios::binary);
    if (!img) throw std::runtime_error("cannot write " + pgm.string());
    img << "P5\n" << cols << ' ' << rows << "\n255\n";
    for (const auto& row : pixels) img.write(reinterpret_cast<const char*>(row.data()), cols);

    std::filesystem::path csv = stem;
    csv += ".csv";
    std::ofstream out(csv);
    if (!out) throw std::runtime_error("cannot write " + csv.string());
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) out << (c ? "," : "") << format_double(values(r, c));
        out << '\n';
    }
    return pixels;
}

Grid2D resample_grid(const Grid2D& grid, std::size_t rows, std::size_t cols) {
    if (grid.empty() || rows == 0 || cols == 0) throw std::invalid_argument("resample_grid: empty grid");
    Grid2D out(rows, cols);
    auto coord = [](std::size_t i, std::size_t n_out, std::size_t n_in) {
        return n_out == 1 ? 0.0 : static_cast<double>(i) * (n_in - 1) / static_cast<double>(n_out - 1);
    };
    for (std::size_t r = 0; r < rows; ++r) {
        const double y = coord(r, rows, grid.rows);
        const std::size_t r0 = std::min(static_cast<std::size_t>(y), grid.rows > 1 ? grid.rows - 2 : 0);
        const double fy = grid.rows > 1 ? y - r0 : 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double x = coord(c, cols, grid.cols);
            const std::size_t c0 = std::min(static_cast<std::size_t>(x), grid.cols > 1 ? grid.cols - 2 : 0);
            const double fx = grid.cols > 1 ? x - c0 : 0.0;
            const std::size_t r1 = grid.rows > 1 ? r0 + 1 : r0;
            const std::size_t c1 = grid.cols > 1 ? c0 + 1 : c0;
            out(r, c) = (1 - fy) * ((1 - fx) * grid(r0, c0) + fx * grid(r0, c1)) +
                        fy * ((1 - fx) * grid(r1, c0) + fx * grid(r1, c1));
        }
    }
    return out;
}

std::vector<std::pair<std::string, Grid2D>> block_test_maps(int m, double p_max, int count) {
    if (m < 2) throw std::invalid_argument("block_test_maps: m must be >= 2");
    std::mt19937_64 rng(20230101);
    auto block = [&](Grid2D& g, int r0, int c0, int h, int w, double value) {
        for (int r = r0; r < std::min(m, r0 + h); ++r) {
            for (int c = c0; c < std::min(m, c0 + w); ++c) g(r, c) = std::max(g(r, c), value);
        }
    };
    auto random_blocks = [&](int n) {
        Grid2D g(m, m);
        const int max_side = std::max(2, m / 3);
        std::uniform_int_distribution<int> side(2, max_side);
        std::uniform_real_distribution<double> level(0.4, 1.0);
        for (int b = 0; b < n; ++b) {
            const int h = side(rng);
            const int w = side(rng);
            std::uniform_int_distribution<int> row(0, m - h);
            std::uniform_int_distribution<int> col(0, m - w);
            const int r0 = row(rng);
            const int c0 = col(rng);
            block(g, r0, c0, h, w, level(rng) * p_max);
        }
        return g;
    };
    std::vector<std::pair<std::string, Grid2D>> out;
    for (int i = 0; i < count; ++i) {
        const std::string name = "p" + std::to_string(i + 1);
        if (i < 8) {
            out.emplace_back(name, random_blocks(i + 1));
        } else if (i == 8) {
            Grid2D g(m, m);
            block(g, 0, 0, m / 2, m / 2, 0.2 * p_max);
            block(g, m / 2, m / 2, m - m / 2, m - m / 2, 1.0 * p_max);
            block(g, m / 4, 3 * m / 5, std::max(2, m / 5), std::max(2, m / 5), 0.6 * p_max);
            out.emplace_back(name, g);
        } else if (i == count - 1) {
            Grid2D g(m, m);
            for (int r = 0; r < m; r += 2) {
                for (int c = (r / 2) % 2; c < m; c += 2) g(r, c) = ((r + c) / 2 % 2 ? 0.5 : 1.0) * p_max;
            }
            out.emplace_back(name, g);
        } else {
            out.emplace_back(name, random_blocks(1 + i % 8));
        }
    }
    return out;
}

void write_eval_csv(const std::vector<EvalReport>& reports, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "case,mape_pct,pape_pct,n_points\n";
    for (const auto& r : reports) {
        out << r.name << ',' << format_double(r.mape) << ',' << format_double(r.pape) << ',' << r.n_points << '\n';
    }
}

ExperimentResult run_experiment(ExperimentKind kind, ExperimentScale scale, std::uint64_t seed,
                                const std::filesystem::path& out_dir, const ExperimentOptions& options,
                                const TrainCallback& on_iteration) {
    ExperimentResult result;
    ExperimentSetup& setup = result.setup;
    setup = experiment_setup(kind, scale);
    if (options.iterations) setup.train.iterations = *options.iterations;
    if (options.functions_per_iter) setup.train.functions_per_iter = *options.functions_per_iter;
    if (options.points_per_function) setup.points_per_function = *options.points_per_function;
    setup.model.head_bias = options.head_bias;
    setup.train.seed = seed;

    std::filesystem::create_directories(out_dir);
    OperatorModel model = init_model(setup.model, seed);
    const TrainingProblem problem = make_problem(setup);
    result.history = train(model, problem, setup.train, on_iteration).history;
    write_loss_csv(result.history, out_dir / "loss.csv");
    save_checkpoint(model, experiment_metadata(setup), out_dir / "model.bin");

    const ScalingMap scaling = problem.scaling;
    std::vector<std::pair<std::string, FunctionSample>> cases;
    if (kind == ExperimentKind::PowerMap2D) {
        for (auto& [name, map] : block_test_maps(setup.grf.m, setup.p_max, setup.test_maps)) {
            cases.emplace_back(name, powermap_function(setup, map, setup.base));
        }
    } else {
        for (const auto& [top, bottom] : setup.htc_tests) {
            cases.emplace_back("htc_" + format_double(top) + "_" + format_double(bottom),
                               htc_function(setup, top, bottom, setup.base));
        }
    }
    if (options.export_fields) std::filesystem::create_directories(out_dir / "fields");
    for (const auto& [name, fn] : cases) {
        const auto t0 = std::chrono::steady_clock::now();
        const TemperatureField ref = solve_config(fn.config);
        const auto t1 = std::chrono::steady_clock::now();
        const TemperatureField pred = predict_field(model, scaling, fn.encoded, fn.config.mesh);
        const auto t2 = std::chrono::steady_clock::now();
        EvalReport report = evaluate(pred, ref);
        report.name = name;
        report.oracle_time_s = std::chrono::duration<double>(t1 - t0).count();
        report.pred_time_s = std::chrono::duration<double>(t2 - t1).count();
        report.speedup = report.oracle_time_s / report.pred_time_s;
        result.reports.push_back(report);
        if (options.export_fields) {
            write_field_csv(ref, out_dir / "fields" / (name + "_oracle.csv"));
            write_field_csv(pred, out_dir / "fields" / (name + "_pred.csv"));
            const int top = fn.config.mesh.counts[2] - 1;
            export_slice(ref, SliceAxis::Z, top, out_dir / "fields" / (name + "_oracle_ztop"));
            export_slice(pred, SliceAxis::Z, top, out_dir / "fields" / (name + "_pred_ztop"));
        }
    }
    write_eval_csv(result.reports, out_dir / "eval.csv");

    // Timing at the full reference mesh; the model is queried on that mesh.
    const FunctionSample& probe = cases.front().second;
    ChipConfig bench_config;
    if (kind == ExperimentKind::PowerMap2D) {
        bench_config = reference_powermap_config({21, 21, 11});
        const Grid2D& map = probe.config.surface_power.front().values;
        // Same flux on the finer tiles.
        const Mesh& coarse = probe.config.mesh;
        const Mesh& fine = bench_config.mesh;
        const double unit = setup.unit_power_watts * (fine.spacing(0) * fine.spacing(1)) /
                            (coarse.spacing(0) * coarse.spacing(1));
        bench_config.surface_power = {
            SurfacePowerMap{Surface::ZMax, resample_grid(map, 21, 21), PowerUnits::UnitPowerPerTile, unit}};
        bench_config.validate();
    } else {
        bench_config = probe.config;
    }
    result.benchmark_counts = bench_config.mesh.counts;
    result.timing = benchmark(model, scaling, probe.encoded, bench_config, options.benchmark_runs);

    nlohmann::json j;
    j["experiment"] = experiment_name(kind);
    j["scale"] = scale_name(scale);
    j["seed"] = seed;
    j["iterations"] = setup.train.iterations;
    j["functions_per_iter"] = setup.train.functions_per_iter;
    if (!result.history.empty()) {
        j["loss_first"] = result.history.front().total;
        j["loss_last"] = result.history.back().total;
    }
    for (const auto& r : result.reports) {
        j["cases"].push_back({{"name", r.name},
                              {"mape_pct", r.mape},
                              {"pape_pct", r.pape},
                              {"n_points", r.n_points},
                              {"pred_time_s", r.pred_time_s},
                              {"oracle_time_s", r.oracle_time_s},
                              {"speedup", r.speedup}});
    }
    j["benchmark"] = {{"mesh", result.benchmark_counts},
                      {"runs", result.timing.runs},
                      {"pred_time_s", result.timing.pred_time_s},
                      {"cold_pred_time_s", result.timing.cold_pred_time_s},
                      {"oracle_time_s", result.timing.oracle_time_s},
                      {"speedup", result.timing.speedup},
                      {"cold_speedup", result.timing.cold_speedup}};
    std::ofstream(out_dir / "report.json") << j.dump(2) << '\n';
    return result;
}

}  // namespace deepoheat
