#pragma once

// Central finite-difference check of the analytic gradients on random networks.
// The finite-difference side runs on the extended-precision reference forward pass.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "pdnet/backprop.hpp"
#include "pdnet/cpsolver.hpp"
#include "pdnet/network.hpp"
#include "pdnet/reference.hpp"

namespace pdnet {

struct GradCheckConfig {
    std::uint64_t seed = 1;
    std::size_t depth = 3;
    std::size_t patch_side = 10;
    std::size_t blur = 3;
    std::string design = "f5s2n30+f7s3n30+f10s10n30";
    std::size_t sampled_entries = 20;
    double step = 1e-6;
    double tolerance = 1e-5;
    /// Minimum distance of every prox input from its kink.
    double kink_margin = 1e-4;
    std::size_t max_attempts = 200;
    GradientFault fault = GradientFault::None;
};

struct GradCheckInstance {
    NetworkParams net;
    Vector z;
    Vector x_true;
};

struct GradCheckTrial {
    double max_err_tau = 0.0;
    double max_err_sigma = 0.0;
    double max_err_L = 0.0;
    std::size_t checked = 0;
    std::size_t attempts = 0;

    double max_error() const { return std::max({max_err_tau, max_err_sigma, max_err_L}); }
};

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-12);
}

namespace detail {

/// Sign pattern of every prox input that influences the network output.
inline std::vector<signed char> activation_pattern(const NetworkParams& net, const ForwardResult& fwd) {
    std::vector<signed char> pattern;
    for (std::size_t k = 0; k < fwd.caches.size(); ++k) {
        const auto& c = fwd.caches[k];
        const double t = 1.0 / net.layers[k].sigma;
        for (Eigen::Index p = 0; p < c.v2.size(); ++p)
            pattern.push_back(static_cast<signed char>(c.v2[p] > t ? 1 : (c.v2[p] < -t ? -1 : 0)));
        if (!is_last(position_of(k, net.depth())))
            for (Eigen::Index p = 0; p < c.v3.size(); ++p)
                pattern.push_back(static_cast<signed char>(c.v3[p] > 1.0 ? 1 : (c.v3[p] < -1.0 ? -1 : 0)));
    }
    return pattern;
}

inline double kink_distance(const NetworkParams& net, const ForwardResult& fwd) {
    double d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < fwd.caches.size(); ++k) {
        const auto& c = fwd.caches[k];
        const double t = 1.0 / net.layers[k].sigma;
        d = std::min(d, (c.v2.cwiseAbs().array() - t).abs().minCoeff());
        if (!is_last(position_of(k, net.depth())))
            d = std::min(d, (c.v3.cwiseAbs().array() - 1.0).abs().minCoeff());
    }
    return d;
}

}  // namespace detail

/// Random untied network with every layer inside tau sigma ||L||^2 < 1, and a noisy blurred patch.
inline GradCheckInstance random_gradcheck_instance(const GradCheckConfig& cfg, std::mt19937_64& rng) {
    const auto design = FeatureDesign::parse(cfg.design, cfg.patch_side);
    const GridShape shape{cfg.patch_side, cfg.patch_side};
    GradCheckInstance inst;
    inst.net.op = CirculantOp(uniform_kernel(cfg.blur), shape);
    inst.net.design = design;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t k = 0; k < cfg.depth; ++k) {
        auto feat = build_feature_operator(design, rng(), 1e-2);
        LayerParams layer;
        const double norm = operator_norm(feat.L);
        const double c = 0.5 + 0.45 * unit(rng);
        const double ratio = std::exp(std::log(4.0) * (2.0 * unit(rng) - 1.0));
        layer.tau = c / norm * std::sqrt(ratio);
        layer.sigma = c / norm / std::sqrt(ratio);
        layer.L = std::move(feat.L);
        layer.support = std::move(feat.support);
        inst.net.layers.push_back(std::move(layer));
    }
    const double scale = std::exp(std::log(255.0) * unit(rng));
    const auto n = static_cast<Eigen::Index>(shape.size());
    inst.x_true = Vector(n);
    for (auto& v : inst.x_true) v = scale * unit(rng);
    std::normal_distribution<double> noise(0.0, 0.1 * scale);
    inst.z = inst.net.op.apply(inst.x_true);
    for (auto& v : inst.z) v += noise(rng);
    return inst;
}

/// Compares analytic gradients with central differences on one kink-free instance.
inline GradCheckTrial check_gradients(const GradCheckInstance& inst, const GradCheckConfig& cfg, std::mt19937_64& rng,
                                      bool* kink_crossed = nullptr) {
    GradCheckTrial trial;
    const auto base = network_forward(inst.net, inst.z);
    const auto pattern = detail::activation_pattern(inst.net, base);
    BackwardOptions opts;
    opts.fault = cfg.fault;
    const ParamGrads grads = network_backward(inst.net, base, inst.x_true, 1, opts);

    reference::Network probe(inst.net);
    const auto ref_base = reference::forward(probe, inst.z);
    bool crossed = ref_base.pattern != pattern;
    const auto step = static_cast<reference::Real>(cfg.step);
    auto central = [&](reference::Real& param) {
        const reference::Real saved = param;
        param = saved + step;
        const auto plus = reference::forward(probe, inst.z);
        param = saved - step;
        const auto minus = reference::forward(probe, inst.z);
        param = saved;
        if (plus.pattern != pattern || minus.pattern != pattern) crossed = true;
        return static_cast<double>((reference::loss(plus, inst.x_true) - reference::loss(minus, inst.x_true)) /
                                   (2.0L * step));
    };

    for (std::size_t k = 0; k < inst.net.depth(); ++k) {
        auto& layer = probe.layers[k];
        const auto& params = inst.net.layers[k];
        trial.max_err_tau = std::max(trial.max_err_tau, relative_error(grads.layers[k].d_tau, central(layer.tau)));
        trial.max_err_sigma =
            std::max(trial.max_err_sigma, relative_error(grads.layers[k].d_sigma, central(layer.sigma)));
        trial.checked += 2;

        std::vector<std::pair<Eigen::Index, Eigen::Index>> free;
        for (Eigen::Index i = 0; i < params.L.rows(); ++i)
            for (Eigen::Index j = 0; j < params.L.cols(); ++j)
                if (!params.has_mask() || params.support(i, j)) free.emplace_back(i, j);
        if (free.empty()) continue;
        std::uniform_int_distribution<std::size_t> pick(0, free.size() - 1);
        for (std::size_t s = 0; s < cfg.sampled_entries; ++s) {
            const auto [i, j] = free[pick(rng)];
            trial.max_err_L =
                std::max(trial.max_err_L, relative_error(grads.layers[k].d_L(i, j), central(layer.L(i, j))));
            ++trial.checked;
        }
    }
    if (kink_crossed) *kink_crossed = crossed;
    return trial;
}

/// Draws instances until one is kink-free (margin at the base point and no
/// activation change under any finite-difference probe), then checks it.
inline GradCheckTrial run_gradcheck_trial(const GradCheckConfig& cfg, std::mt19937_64& rng) {
    for (std::size_t attempt = 1; attempt <= cfg.max_attempts; ++attempt) {
        auto inst = random_gradcheck_instance(cfg, rng);
        const auto base = network_forward(inst.net, inst.z);
        if (detail::kink_distance(inst.net, base) <= cfg.kink_margin) continue;
        bool crossed = false;
        auto trial = check_gradients(inst, cfg, rng, &crossed);
        if (crossed) continue;
        trial.attempts = attempt;
        return trial;
    }
    throw std::runtime_error("gradcheck: no kink-free instance found in " + std::to_string(cfg.max_attempts) +
                             " attempts");
}

}  // namespace pdnet
