#include "deepoheat/trainer.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace deepoheat {

namespace {

std::string term_name(Region r) {
    if (r == Region::Interior) return "L_r";
    return "L_" + std::string(region_name(r));
}

/// Bilinear value of a surface grid at in-plane unit coordinates.
double grid_at_unit(const Grid2D& g, double u, double w) {
    auto locate = [](double t, std::size_t n, std::size_t& lo, double& frac) {
        if (n == 1) {
            lo = 0;
            frac = 0.0;
            return;
        }
        double x = std::clamp(t, 0.0, 1.0) * static_cast<double>(n - 1);
        const double r = std::round(x);
        if (std::abs(x - r) < 1e-9) x = r;
        lo = std::min(static_cast<std::size_t>(std::floor(x)), n - 2);
        frac = x - static_cast<double>(lo);
    };
    std::size_t c0 = 0, r0 = 0;
    double fc = 0.0, fr = 0.0;
    locate(u, g.cols, c0, fc);
    locate(w, g.rows, r0, fr);
    const std::size_t c1 = g.cols > 1 ? c0 + 1 : c0;
    const std::size_t r1 = g.rows > 1 ? r0 + 1 : r0;
    double out = 0.0;
    if ((1 - fr) * (1 - fc) != 0.0) out += (1 - fr) * (1 - fc) * g(r0, c0);
    if ((1 - fr) * fc != 0.0) out += (1 - fr) * fc * g(r0, c1);
    if (fr * (1 - fc) != 0.0) out += fr * (1 - fc) * g(r1, c0);
    if (fr * fc != 0.0) out += fr * fc * g(r1, c1);
    return out;
}

double surface_value_unit(const SurfaceValue& v, double u, double w) {
    if (const double* s = std::get_if<double>(&v)) return *s;
    return grid_at_unit(std::get<Grid2D>(v), u, w);
}

/// Volumetric source at a normalized point: the dual-cell value when the point
/// is a mesh node, the pointwise density otherwise.
class SourceLookup {
public:
    explicit SourceLookup(const ChipConfig& config)
        : config_(config), nodal_(nodal_source_density(config)), any_(false) {
        for (double q : nodal_) any_ = any_ || q != 0.0;
        any_ = any_ || !config.power_slabs.empty();
    }

    double at(const Vec3& unit, const ScalingMap& scaling) const {
        if (!any_) return 0.0;
        const Mesh& mesh = config_.mesh;
        std::array<int, 3> ijk{};
        bool node = true;
        for (int a = 0; a < 3; ++a) {
            const double x = unit[a] * (mesh.counts[a] - 1);
            const double r = std::round(x);
            if (std::abs(x - r) > 1e-9) {
                node = false;
                break;
            }
            ijk[a] = static_cast<int>(r);
        }
        if (node) return nodal_[mesh.index(ijk[0], ijk[1], ijk[2])];
        return source_density_at(config_, scaling.to_physical(unit));
    }

private:
    const ChipConfig& config_;
    std::vector<double> nodal_;
    bool any_;
};

enum class BcKind { Flux, Convection, Dirichlet };

BcKind bc_kind(const BoundaryCondition& bc) {
    if (bc.is_flux()) return BcKind::Flux;
    if (bc.as<Convection>()) return BcKind::Convection;
    return BcKind::Dirichlet;
}

struct PointRef {
    int function;
    Vec3 unit;
};

/// Residual coefficients for one function at one point of a region.
struct Coefficients {
    double a = 0.0, b = 0.0, c = 0.0;
};

class BatchBuilder {
public:
    BatchBuilder(const std::vector<FunctionSample>& functions, const ScalingMap& scaling)
        : functions_(functions), scaling_(scaling) {
        if (functions.empty()) throw std::invalid_argument("training batch needs at least one function");
        for (const auto& f : functions) {
            if (!f.config.conductivity.homogeneous()) {
                throw std::invalid_argument("physics loss requires homogeneous conductivity");
            }
            sources_.emplace_back(f.config);
            flux_.emplace_back();
            for (Surface s : kAllSurfaces) {
                flux_.back()[static_cast<int>(s)] =
                    f.config.bc(s).is_flux() ? surface_flux(f.config, s) : Grid2D{};
            }
        }
        const auto& base = functions.front().config;
        const auto k = base.conductivity.nodal(base.mesh, base.geometry);
        k_hat_ = scaling.conductivity(k.front());
        for (Surface s : kAllSurfaces) {
            const BcKind kind = bc_kind(base.bc(s));
            for (const auto& f : functions) {
                if (bc_kind(f.config.bc(s)) != kind) {
                    throw std::invalid_argument("functions disagree on the boundary type of " +
                                                std::string(surface_name(s)));
                }
            }
        }
    }

    double k_hat() const { return k_hat_; }

    Coefficients at(Region r, const PointRef& p) const {
        const ChipConfig& cfg = functions_[p.function].config;
        Coefficients out;
        const auto surface = region_surface(r);
        if (!surface) {
            out.c = scaling_.source(sources_[p.function].at(p.unit, scaling_));
            return out;
        }
        const Surface s = *surface;
        const int axis = surface_axis(s);
        auto [u, v] = surface_plane_axes(s);
        const double normal = k_hat_ * outward_sign(s) * scaling_.axis_factor(axis);
        const BoundaryCondition& bc = cfg.bc(s);
        if (bc.is_flux()) {
            const Grid2D& q = flux_[p.function][static_cast<int>(s)];
            out.b = normal;
            out.c = -scaling_.flux(grid_at_unit(q, p.unit[u], p.unit[v]));
        } else if (const auto* conv = bc.as<Convection>()) {
            const double h = scaling_.htc(surface_value_unit(conv->htc, p.unit[u], p.unit[v]));
            out.a = -h;
            out.b = -normal;
            out.c = h * scaling_.to_tau(conv->ambient);
        } else {
            const auto* d = bc.as<Dirichlet>();
            out.a = 1.0;
            out.c = -scaling_.to_tau(surface_value_unit(d->temperature, p.unit[u], p.unit[v]));
        }
        return out;
    }

private:
    const std::vector<FunctionSample>& functions_;
    ScalingMap scaling_;
    std::vector<SourceLookup> sources_;
    std::vector<std::array<Grid2D, 6>> flux_;
    double k_hat_ = 1.0;
};

std::vector<Mat> encode(const std::vector<FunctionSample>& functions) {
    const std::size_t k = functions.front().encoded.size();
    std::vector<Mat> out(k);
    for (std::size_t i = 0; i < k; ++i) {
        out[i].resize(functions.front().encoded[i].size(), static_cast<Eigen::Index>(functions.size()));
        for (std::size_t f = 0; f < functions.size(); ++f) {
            if (functions[f].encoded.size() != k || functions[f].encoded[i].size() != out[i].rows()) {
                throw std::invalid_argument("encoded inputs have inconsistent widths");
            }
            out[i].col(static_cast<Eigen::Index>(f)) = functions[f].encoded[i];
        }
    }
    return out;
}

void finish_terms(TrainingBatch& batch, const BatchBuilder& builder, const ScalingMap& scaling) {
    for (int a = 0; a < 3; ++a) batch.laplacian[a] = builder.k_hat() * std::pow(scaling.axis_factor(a), 2);
    for (auto& t : batch.terms) {
        if (t.pde) continue;
        t.axis = surface_axis(*region_surface(t.region));
        if (t.a.size() > 0 && t.a.isZero(0.0)) t.a.resize(0, 0);
        if (t.b.size() > 0 && t.b.isZero(0.0)) t.b.resize(0, 0);
    }
}

}  // namespace

TrainingBatch make_batch(const std::vector<FunctionSample>& functions, const CollocationSet& points) {
    BatchBuilder builder(functions, points.scaling);
    TrainingBatch batch;
    batch.encoded = encode(functions);
    batch.coords = points.all();
    const auto nf = static_cast<Eigen::Index>(functions.size());
    Eigen::Index start = 0;
    for (Region r : kAllRegions) {
        const Eigen::MatrixXd& pts = points.region(r);
        if (pts.cols() == 0) continue;
        RegionTerm t;
        t.region = r;
        t.name = term_name(r);
        t.start = start;
        t.count = pts.cols();
        t.pde = !region_surface(r).has_value();
        t.a.resize(nf, t.count);
        t.b.resize(nf, t.count);
        t.c.resize(nf, t.count);
        for (Eigen::Index f = 0; f < nf; ++f) {
            for (Eigen::Index c = 0; c < t.count; ++c) {
                const Coefficients k = builder.at(r, {static_cast<int>(f), {pts(0, c), pts(1, c), pts(2, c)}});
                t.a(f, c) = k.a;
                t.b(f, c) = k.b;
                t.c(f, c) = k.c;
            }
        }
        batch.terms.push_back(std::move(t));
        start += pts.cols();
    }
    finish_terms(batch, builder, points.scaling);
    return batch;
}

TrainingBatch make_batch(const std::vector<FunctionSample>& functions, const std::vector<CollocationSet>& points) {
    if (points.size() != functions.size()) throw std::invalid_argument("one collocation set per function required");
    BatchBuilder builder(functions, points.front().scaling);
    TrainingBatch batch;
    batch.encoded = encode(functions);
    Eigen::Index total = 0;
    for (const auto& p : points) total += p.total();
    batch.coords.resize(3, total);
    batch.point_function.reserve(total);
    Eigen::Index start = 0;
    for (Region r : kAllRegions) {
        Eigen::Index count = 0;
        for (const auto& p : points) count += p.count(r);
        if (count == 0) continue;
        RegionTerm t;
        t.region = r;
        t.name = term_name(r);
        t.start = start;
        t.count = count;
        t.pde = !region_surface(r).has_value();
        t.a.resize(1, count);
        t.b.resize(1, count);
        t.c.resize(1, count);
        Eigen::Index col = 0;
        for (std::size_t f = 0; f < points.size(); ++f) {
            const Eigen::MatrixXd& pts = points[f].region(r);
            for (Eigen::Index c = 0; c < pts.cols(); ++c, ++col) {
                const Coefficients k = builder.at(r, {static_cast<int>(f), {pts(0, c), pts(1, c), pts(2, c)}});
                t.a(0, col) = k.a;
                t.b(0, col) = k.b;
                t.c(0, col) = k.c;
                batch.coords.col(start + col) = pts.col(c);
                batch.point_function.push_back(static_cast<int>(f));
            }
        }
        batch.terms.push_back(std::move(t));
        start += count;
    }
    finish_terms(batch, builder, points.front().scaling);
    return batch;
}

double LossReport::term(const std::string& name) const {
    for (const auto& [n, v] : terms) {
        if (n == name) return v;
    }
    throw std::out_of_range("no loss term " + name);
}

ad::Var physics_loss(ad::Tape& tape, const OperatorModel& model, const ParamVars& params,
                     const TrainingBatch& batch, const std::map<std::string, double>& weights, LossReport* report) {
    const Eigen::Index n = batch.coords.cols();
    ad::Var trunk = trunk_dual(tape, model, params, batch.coords);
    ad::Var product = branch_product(tape, model, params, batch.encoded);
    ad::Var out = batch.point_function.empty() ? head_cartesian(model, params, product, trunk)
                                               : head_paired(model, params, product, trunk, batch.point_function);
    if (report) report->terms.clear();
    ad::Var total{};
    bool first = true;
    double total_value = 0.0;
    for (const RegionTerm& t : batch.terms) {
        auto block = [&](int k) { return ad::cols(out, k * n + t.start, t.count); };
        ad::Var r{};
        if (t.pde) {
            r = batch.laplacian[0] * block(4);
            r = r + batch.laplacian[1] * block(5);
            r = r + batch.laplacian[2] * block(6);
        } else {
            bool have = false;
            if (t.a.size() > 0) {
                r = ad::hadamard(tape.constant(t.a), block(0));
                have = true;
            }
            if (t.b.size() > 0) {
                ad::Var flux = ad::hadamard(tape.constant(t.b), block(1 + t.axis));
                r = have ? r + flux : flux;
                have = true;
            }
            if (!have) r = 0.0 * block(0);
        }
        r = ad::add_const(r, t.c);
        ad::Var loss = ad::mean(ad::square(r));
        const double value = loss.value()(0, 0);
        if (!std::isfinite(value)) throw ad::NonFiniteError("non-finite loss term " + t.name);
        auto w = weights.find(t.name);
        if (w != weights.end()) loss = w->second * loss;
        const double weighted = loss.value()(0, 0);
        if (report) report->terms.emplace_back(t.name, weighted);
        total = first ? loss : total + loss;
        total_value = first ? weighted : total_value + weighted;
        first = false;
    }
    if (first) throw std::invalid_argument("training batch has no loss terms");
    if (report) report->total = total_value;
    return total;
}

LossReport residual_losses(const OperatorModel& model, const TrainingBatch& batch,
                           const std::map<std::string, double>& weights) {
    ad::Tape tape;
    const ParamVars params = register_parameters(tape, model);
    LossReport report;
    physics_loss(tape, model, params, batch, weights, &report);
    return report;
}

Adam::Adam(const OperatorModel& model, AdamSpec spec) : spec_(spec) {
    for (const Mat* p : model.parameters()) {
        m_.push_back(Mat::Zero(p->rows(), p->cols()));
        v_.push_back(Mat::Zero(p->rows(), p->cols()));
    }
}

void Adam::step(OperatorModel& model, const ParamGradient& grad, double lr) {
    auto params = model.parameters();
    if (params.size() != grad.grads.size() || params.size() != m_.size()) {
        throw std::invalid_argument("Adam: gradient does not match the parameters");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(spec_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(spec_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Mat& g = grad.grads[i];
        m_[i] = spec_.beta1 * m_[i] + (1.0 - spec_.beta1) * g;
        v_[i] = spec_.beta2 * v_[i] + (1.0 - spec_.beta2) * g.cwiseProduct(g);
        params[i]->array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + spec_.eps);
    }
}

void TrainSpec::validate() const {
    if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
    if (functions_per_iter <= 0) throw std::invalid_argument("functions per iteration must be > 0");
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw std::invalid_argument("lr decay must be in (0, 1]");
    if (lr_decay_every <= 0) throw std::invalid_argument("lr decay interval must be > 0");
    if (checkpoint_every < 0) throw std::invalid_argument("checkpoint interval must be >= 0");
}

double TrainSpec::learning_rate(int iteration) const {
    return lr * std::pow(lr_decay, iteration / lr_decay_every);
}

TrainResult train(OperatorModel& model, const TrainingProblem& problem, const TrainSpec& spec,
                  const TrainCallback& on_iteration) {
    spec.validate();
    if (!problem.sample_functions) throw std::invalid_argument("training problem has no function sampler");
    if (problem.mode == CollocationMode::Random && problem.points_per_function <= 0) {
        throw std::invalid_argument("random collocation needs points per function > 0");
    }
    std::mt19937_64 rng(spec.seed);
    Adam adam(model, spec.adam);
    TrainResult result;
    std::optional<CollocationSet> shared;
    if (problem.mode == CollocationMode::Mesh) shared = build_collocation_mesh(problem.base, problem.scaling);
    if (spec.checkpoint_every > 0) std::filesystem::create_directories(spec.checkpoint_dir);

    for (int it = 0; it < spec.iterations; ++it) {
        const auto functions = problem.sample_functions(spec.functions_per_iter, rng);
        TrainingBatch batch;
        if (shared) {
            batch = make_batch(functions, *shared);
        } else {
            std::vector<CollocationSet> sets;
            for (const auto& f : functions) {
                sets.push_back(build_collocation_random(f.config, problem.scaling, problem.points_per_function, rng));
            }
            batch = make_batch(functions, sets);
        }
        LossReport report;
        LossAndGradient lg;
        try {
            lg = loss_param_grad(model, [&](ad::Tape& tape, const ParamVars& params) {
                return physics_loss(tape, model, params, batch, spec.weights, &report);
            });
        } catch (const ad::NonFiniteError& e) {
            throw ad::NonFiniteError("iteration " + std::to_string(it + 1) + ": " + e.what());
        }
        report.iteration = it + 1;
        adam.step(model, lg.gradient, spec.learning_rate(it));
        result.history.push_back(report);
        if (on_iteration) on_iteration(report);
        if (spec.checkpoint_every > 0 && (it + 1) % spec.checkpoint_every == 0) {
            auto meta = spec.checkpoint_metadata;
            meta["iteration"] = std::to_string(it + 1);
            save_checkpoint(model, meta, spec.checkpoint_dir / ("checkpoint_" + std::to_string(it + 1) + ".bin"));
        }
    }
    return result;
}

void write_loss_csv(const std::vector<LossReport>& history, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "iter,total";
    if (!history.empty()) {
        for (const auto& [name, v] : history.front().terms) out << ',' << name;
    }
    out << '\n';
    for (const auto& r : history) {
        out << r.iteration << ',' << format_double(r.total);
        for (const auto& [name, v] : r.terms) out << ',' << format_double(v);
        out << '\n';
    }
}

}  // namespace deepoheat
