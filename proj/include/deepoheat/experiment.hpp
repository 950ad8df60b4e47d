#pragma once

// The two operator-learning experiments: a top-surface power map operator
// (powermap2d) and a dual heat-transfer-coefficient operator (htc-dual), each
// at full (paper) or reduced (desk) scale.

#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "deepoheat/config.hpp"
#include "deepoheat/grf.hpp"
#include "deepoheat/operator_net.hpp"
#include "deepoheat/trainer.hpp"

namespace deepoheat {

enum class ExperimentKind { PowerMap2D, HtcDual };
enum class ExperimentScale { Paper, Desk };

std::string_view experiment_name(ExperimentKind k);
/// Throws std::invalid_argument listing the valid names.
ExperimentKind parse_experiment_kind(std::string_view name);
std::string_view scale_name(ExperimentScale s);
ExperimentScale parse_experiment_scale(std::string_view name);

struct ExperimentSetup {
    ExperimentKind kind = ExperimentKind::PowerMap2D;
    ExperimentScale scale = ExperimentScale::Desk;

    /// Training configuration; for powermap2d the top surface carries the
    /// sampled map, for htc-dual the top/bottom HTCs are replaced.
    ChipConfig base;
    /// Mesh used for oracle comparisons.
    std::array<int, 3> oracle_counts{21, 21, 11};

    ModelSpec model;
    TrainSpec train;
    CollocationMode mode = CollocationMode::Mesh;
    int points_per_function = 0;
    double t_scale = 20.0;

    // powermap2d
    GrfSpec grf;
    double p_max = 1.0;                 // unit power
    double unit_power_watts = 6.25e-6;  // W per unit
    PowerNormalization normalization = PowerNormalization::MinMax;
    int test_maps = 10;

    // htc-dual
    HtcRange htc;
    double htc_scale = 1000.0;  // branch input = h / htc_scale
    std::vector<std::pair<double, double>> htc_tests{{1000.0, 333.33}, {500.0, 500.0}};
};

ExperimentSetup experiment_setup(ExperimentKind kind, ExperimentScale scale);

/// Rebuilds the setup around a user-provided base configuration, keeping the
/// experiment's network and training settings.
ExperimentSetup experiment_setup(ExperimentKind kind, ExperimentScale scale, const ChipConfig& base);

ScalingMap experiment_scaling(const ExperimentSetup& setup);

/// Top-surface unit-power map (nodes of the top surface) as a function input.
FunctionSample powermap_function(const ExperimentSetup& setup, const Grid2D& unit_map, const ChipConfig& base);
FunctionSample htc_function(const ExperimentSetup& setup, double h_top, double h_bottom, const ChipConfig& base);

/// Training problem whose sampler draws from the GRF or the HTC square.
TrainingProblem make_problem(const ExperimentSetup& setup);

/// Checkpoint metadata needed to rebuild encoders and scaling at predict time.
std::map<std::string, std::string> experiment_metadata(const ExperimentSetup& setup);

}  // namespace deepoheat
