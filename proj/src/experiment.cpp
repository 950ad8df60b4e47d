#include "deepoheat/experiment.hpp"

#include <memory>
#include <numbers>

namespace deepoheat {

std::string_view experiment_name(ExperimentKind k) {
    return k == ExperimentKind::PowerMap2D ? "powermap2d" : "htc-dual";
}

ExperimentKind parse_experiment_kind(std::string_view name) {
    if (name == "powermap2d") return ExperimentKind::PowerMap2D;
    if (name == "htc-dual") return ExperimentKind::HtcDual;
    throw std::invalid_argument("unknown experiment '" + std::string(name) + "'; valid names: powermap2d, htc-dual");
}

std::string_view scale_name(ExperimentScale s) { return s == ExperimentScale::Paper ? "paper" : "desk"; }

ExperimentScale parse_experiment_scale(std::string_view name) {
    if (name == "paper") return ExperimentScale::Paper;
    if (name == "desk") return ExperimentScale::Desk;
    throw std::invalid_argument("unknown scale '" + std::string(name) + "'; valid scales: paper, desk");
}

namespace {

std::vector<int> layers(int count, int width, int output) {
    std::vector<int> w(count - 1, width);
    w.push_back(output);
    return w;
}

}  // namespace

ExperimentSetup experiment_setup(ExperimentKind kind, ExperimentScale scale) {
    const bool paper = scale == ExperimentScale::Paper;
    ChipConfig base = kind == ExperimentKind::PowerMap2D
                          ? reference_powermap_config(paper ? std::array{21, 21, 11} : std::array{11, 11, 6})
                          : reference_htc_config(500.0, 500.0, paper ? std::array{21, 21, 12} : std::array{11, 11, 12});
    return experiment_setup(kind, scale, base);
}

ExperimentSetup experiment_setup(ExperimentKind kind, ExperimentScale scale, const ChipConfig& base) {
    base.validate();
    const bool paper = scale == ExperimentScale::Paper;
    ExperimentSetup s;
    s.kind = kind;
    s.scale = scale;
    s.base = base;
    s.oracle_counts = base.mesh.counts;
    s.train.lr = 1e-3;
    s.train.lr_decay = 0.9;
    s.train.lr_decay_every = 500;

    if (kind == ExperimentKind::PowerMap2D) {
        const auto [rows, cols] = base.mesh.surface_shape(Surface::ZMax);
        if (rows != cols) throw std::invalid_argument("powermap2d needs a square top-surface grid");
        if (!base.bc(Surface::ZMax).is_flux()) {
            throw std::invalid_argument("powermap2d needs a flux-type top surface to carry the power map");
        }
        s.grf.m = cols;
        s.grf.length_scale = 0.3;
        const int p = paper ? 128 : 64;
        s.model.branches = {MlpSpec{rows * cols, layers(paper ? 9 : 5, paper ? 256 : 128, p)}};
        s.model.trunk_widths = layers(paper ? 6 : 4, paper ? 128 : 64, p);
        s.model.fourier_count = (paper ? 128 : 64) / 2;
        s.model.fourier_sigma = 2.0 * std::numbers::pi;
        s.mode = CollocationMode::Mesh;
        s.train.iterations = paper ? 10000 : 2000;
        s.train.functions_per_iter = paper ? 50 : 16;
    } else {
        for (Surface z : {Surface::ZMin, Surface::ZMax}) {
            if (!base.bc(z).as<Convection>()) throw std::invalid_argument("htc-dual needs convection on both z faces");
        }
        const int p = paper ? 50 : 64;
        const MlpSpec branch{1, layers(5, 20, p)};
        s.model.branches = {branch, branch};
        s.model.trunk_widths = layers(paper ? 6 : 4, paper ? 128 : 64, p);
        s.model.fourier_count = (paper ? 128 : 64) / 2;
        s.model.fourier_sigma = std::numbers::pi;
        s.mode = CollocationMode::Random;
        s.points_per_function = paper ? 7000 : 256;
        s.train.iterations = paper ? 5000 : 2000;
        s.train.functions_per_iter = paper ? 20 : 16;
    }
    s.model.validate();
    return s;
}

ScalingMap experiment_scaling(const ExperimentSetup& setup) {
    return ScalingMap::for_config(setup.base, setup.t_scale);
}

FunctionSample powermap_function(const ExperimentSetup& setup, const Grid2D& unit_map, const ChipConfig& base) {
    FunctionSample f;
    f.config = base;
    f.config.surface_power = {SurfacePowerMap{Surface::ZMax, unit_map, PowerUnits::UnitPowerPerTile,
                                              setup.unit_power_watts}};
    f.config.validate();
    Eigen::VectorXd e(static_cast<Eigen::Index>(unit_map.size()));
    for (std::size_t i = 0; i < unit_map.size(); ++i) e[static_cast<Eigen::Index>(i)] = unit_map.data[i];
    f.encoded = {e};
    return f;
}

FunctionSample htc_function(const ExperimentSetup& setup, double h_top, double h_bottom, const ChipConfig& base) {
    FunctionSample f;
    f.config = base;
    const double ambient_top = base.bc(Surface::ZMax).as<Convection>()->ambient;
    const double ambient_bottom = base.bc(Surface::ZMin).as<Convection>()->ambient;
    f.config.bc(Surface::ZMax) = Convection{h_top, ambient_top};
    f.config.bc(Surface::ZMin) = Convection{h_bottom, ambient_bottom};
    f.config.validate();
    f.encoded = {Eigen::VectorXd::Constant(1, h_top / setup.htc_scale),
                 Eigen::VectorXd::Constant(1, h_bottom / setup.htc_scale)};
    return f;
}

TrainingProblem make_problem(const ExperimentSetup& setup) {
    TrainingProblem problem;
    problem.base = setup.base;
    problem.scaling = experiment_scaling(setup);
    problem.mode = setup.mode;
    problem.points_per_function = setup.points_per_function;
    if (setup.kind == ExperimentKind::PowerMap2D) {
        auto sampler = std::make_shared<GrfSampler>(setup.grf, 0);
        problem.sample_functions = [setup, sampler](int n, std::mt19937_64& rng) {
            std::vector<FunctionSample> out;
            for (int i = 0; i < n; ++i) {
                const Grid2D map = grf_to_power(sampler->sample(rng), setup.p_max, setup.normalization);
                out.push_back(powermap_function(setup, map, setup.base));
            }
            return out;
        };
    } else {
        problem.sample_functions = [setup](int n, std::mt19937_64& rng) {
            std::vector<FunctionSample> out;
            for (const auto& [top, bottom] : sample_htc_pairs(setup.htc, n, rng)) {
                out.push_back(htc_function(setup, top, bottom, setup.base));
            }
            return out;
        };
    }
    return problem;
}

std::map<std::string, std::string> experiment_metadata(const ExperimentSetup& setup) {
    return {{"experiment", std::string(experiment_name(setup.kind))},
            {"scale", std::string(scale_name(setup.scale))},
            {"t_scale", format_double(setup.t_scale)},
            {"unit_power_w", format_double(setup.unit_power_watts)},
            {"p_max", format_double(setup.p_max)},
            {"htc_scale", format_double(setup.htc_scale)}};
}

}  // namespace deepoheat
