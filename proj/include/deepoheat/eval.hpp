#pragma once

// Operator-vs-oracle error metrics, timing, slice export and the end-to-end
// experiment pipeline.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "deepoheat/experiment.hpp"
#include "deepoheat/fdm.hpp"
#include "deepoheat/operator_net.hpp"

namespace deepoheat {

struct EvalReport {
    std::string name;
    double mape = 0.0;  // percent
    double pape = 0.0;  // percent
    std::size_t n_points = 0;
    double pred_time_s = 0.0;
    double oracle_time_s = 0.0;
    double speedup = 0.0;
};

/// MAPE = 100 mean(|p - r| / r), PAPE = 100 max(|p - r| / r) over Kelvin
/// values. Throws std::invalid_argument on size mismatch or r <= 0.
EvalReport evaluate(const std::vector<double>& pred, const std::vector<double>& ref);
EvalReport evaluate(const TemperatureField& pred, const TemperatureField& ref);

/// Normalized node coordinates (3 x N) of a mesh.
Mat mesh_unit_coords(const Mesh& mesh, const ScalingMap& scaling);

/// Model prediction at every node of `mesh`, in Kelvin.
TemperatureField predict_field(const OperatorModel& model, const ScalingMap& scaling,
                               const std::vector<Eigen::VectorXd>& encoded, const Mesh& mesh);

struct BenchmarkResult {
    double pred_time_s = 0.0;       // cached-trunk prediction, median
    double cold_pred_time_s = 0.0;  // trunk + branch + head, median
    double oracle_time_s = 0.0;     // assemble + solve, median
    double speedup = 0.0;           // oracle / cached prediction
    double cold_speedup = 0.0;
    int runs = 0;
};

/// Median wall-clock times over `runs` (>= 5) repetitions.
BenchmarkResult benchmark(const OperatorModel& model, const ScalingMap& scaling,
                          const std::vector<Eigen::VectorXd>& encoded, const ChipConfig& oracle_config, int runs = 7);

enum class SliceAxis { X = 0, Y = 1, Z = 2 };
SliceAxis parse_slice_axis(std::string_view name);

/// Writes `<stem>.pgm` (8-bit P5, min-max per slice, 128 for a constant
/// slice) and `<stem>.csv`. Image row 0 and CSV row 0 are the minimum of the
/// slice's second in-plane axis. Returns the pixel grid.
std::vector<std::vector<std::uint8_t>> export_slice(const TemperatureField& field, SliceAxis axis, int index,
                                                    const std::filesystem::path& stem);

/// Bilinear resampling of a node grid to a new node count.
Grid2D resample_grid(const Grid2D& grid, std::size_t rows, std::size_t cols);

/// Deterministic block-pattern unit-power maps on an m x m node grid: one to
/// eight rectangular blocks, one mixed-intensity variant, and a last map with
/// many small sources.
std::vector<std::pair<std::string, Grid2D>> block_test_maps(int m, double p_max, int count = 10);

struct ExperimentOptions {
    std::optional<int> iterations;
    std::optional<int> functions_per_iter;
    std::optional<int> points_per_function;
    bool head_bias = true;
    int benchmark_runs = 7;
    bool export_fields = true;
};

struct ExperimentResult {
    ExperimentSetup setup;
    std::vector<LossReport> history;
    std::vector<EvalReport> reports;
    BenchmarkResult timing;
    std::array<int, 3> benchmark_counts{};
};

/// Build config, train, solve held-out cases with the oracle, evaluate and
/// write loss.csv, model.bin, eval.csv, report.json and field exports.
ExperimentResult run_experiment(ExperimentKind kind, ExperimentScale scale, std::uint64_t seed,
                                const std::filesystem::path& out_dir, const ExperimentOptions& options = {},
                                const TrainCallback& on_iteration = {});

void write_eval_csv(const std::vector<EvalReport>& reports, const std::filesystem::path& path);

}  // namespace deepoheat
