#pragma once

// Mini-batch training of the unfolded network on the empirical risk
//   E(Theta) = 1/I sum_s ||x_s - f_Theta(A^T z_s)||^2.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pdnet/backprop.hpp"
#include "pdnet/cpsolver.hpp"
#include "pdnet/dataset.hpp"
#include "pdnet/network.hpp"
#include "pdnet/parallel.hpp"

namespace pdnet {

enum class OptimizerKind { Adam, Sgd };

struct LearningRates {
    double base = 1e-3;
    double tau = 1.0;
    double sigma = 1.0;
    double L = 1.0;
};

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct InitSettings {
    double L_std = 1e-2;
    /// tau0 = sigma0 = c / ||L0||, so tau0 sigma0 ||L0||^2 = c^2.
    double c = 0.9;
};

struct TrainConfig {
    std::size_t K = 10;
    std::size_t batch_size = 200;
    std::size_t max_steps = 800000;
    OptimizerKind optimizer = OptimizerKind::Adam;
    LearningRates learning_rates;
    AdamSettings adam;
    InitSettings init;
    std::uint64_t seed = 0;
    bool enforce_mask = true;
    double positivity_floor = 1e-8;
    std::size_t checkpoint_interval = 0;
    std::size_t threads = 1;
    std::string feature_design = "f5s2n30+f7s3n30+f10s10n30";
    std::size_t patch_side = 10;

    void validate() const {
        if (K == 0) throw ParameterError("K must be at least 1");
        if (batch_size == 0) throw ParameterError("batch_size must be at least 1");
        require_positive(learning_rates.base, "learning_rates.base");
        require_positive(learning_rates.tau, "learning_rates.tau");
        require_positive(learning_rates.sigma, "learning_rates.sigma");
        require_positive(learning_rates.L, "learning_rates.L");
        if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ParameterError("adam.beta1 must lie in [0, 1)");
        if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ParameterError("adam.beta2 must lie in [0, 1)");
        require_positive(adam.epsilon, "adam.epsilon");
        require_positive(init.L_std, "init.L_std");
        if (!(init.c > 0.0 && init.c < 1.0)) throw ParameterError("init.c must lie in (0, 1)");
        require_positive(positivity_floor, "positivity_floor");
        if (threads == 0) throw ParameterError("threads must be at least 1");
    }
};

struct LayerMoments {
    double m_tau = 0.0, v_tau = 0.0;
    double m_sigma = 0.0, v_sigma = 0.0;
    Matrix m_L, v_L;
};

struct TrainState {
    NetworkParams net;
    std::size_t step = 0;
    std::vector<LayerMoments> moments;
    std::vector<double> loss_history;
    /// Data order is a pure function of (seed, step), so the seed is the whole RNG state.
    std::uint64_t seed = 0;

    static TrainState fresh(NetworkParams net, std::uint64_t seed) {
        TrainState s;
        for (const auto& layer : net.layers)
            s.moments.push_back({0, 0, 0, 0, Matrix::Zero(layer.L.rows(), layer.L.cols()),
                                 Matrix::Zero(layer.L.rows(), layer.L.cols())});
        s.net = std::move(net);
        s.seed = seed;
        return s;
    }
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Same draw of L for every layer, tau = sigma = c / ||L||.
inline NetworkParams init_network(const TrainConfig& config, const FeatureDesign& design, const CirculantOp& op) {
    config.validate();
    design.validate();
    require_dims(op.shape().size() == design.cols(), "init_network: operator grid does not match the patch size");
    auto feat = build_feature_operator(design, config.seed, config.init.L_std);
    const double norm = operator_norm(feat.L, 1000, 1e-12);
    if (!(norm > 0.0)) throw ParameterError("init_network: degenerate feature design (||L|| = 0)");
    LayerParams layer;
    layer.tau = config.init.c / norm;
    layer.sigma = config.init.c / norm;
    layer.L = std::move(feat.L);
    if (config.enforce_mask) layer.support = std::move(feat.support);

    NetworkParams net;
    net.op = op;
    net.design = design;
    net.layers.assign(config.K, layer);
    return net;
}

/// Sample indices of the mini-batch used at a given step: epochs are consecutive
/// seeded permutations of the data set, batches are consecutive slices of them.
class BatchSchedule {
public:
    BatchSchedule(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
        : n_(dataset_size), batch_(batch_size), seed_(seed) {
        if (n_ == 0) throw ParameterError("BatchSchedule: empty data set");
    }

    std::vector<std::size_t> batch(std::size_t step) {
        std::vector<std::size_t> out(batch_);
        for (std::size_t i = 0; i < batch_; ++i) {
            const std::size_t g = step * batch_ + i;
            out[i] = permutation(g / n_)[g % n_];
        }
        return out;
    }

private:
    const std::vector<std::size_t>& permutation(std::size_t epoch) {
        if (epoch != cached_epoch_ || perm_.empty()) {
            perm_.resize(n_);
            std::iota(perm_.begin(), perm_.end(), std::size_t{0});
            std::mt19937_64 rng(seed_ ^ (0x9e3779b97f4a7c15ULL * (epoch + 1)));
            std::shuffle(perm_.begin(), perm_.end(), rng);
            cached_epoch_ = epoch;
        }
        return perm_;
    }

    std::size_t n_, batch_;
    std::uint64_t seed_;
    std::size_t cached_epoch_ = 0;
    std::vector<std::size_t> perm_;
};

struct BatchGradient {
    double loss = 0.0;
    ParamGrads grads;
};

/// Sum over the batch of per-sample gradients with I = batch size. Samples are
/// reduced in fixed chunks of 16, in order, independent of the thread count.
inline BatchGradient batch_gradient(const NetworkParams& net, const PatchPairSet& data,
                                    const std::vector<std::size_t>& batch, std::size_t threads,
                                    bool respect_mask = true) {
    constexpr std::size_t kChunk = 16;
    const std::size_t chunks = (batch.size() + kChunk - 1) / kChunk;
    std::vector<BatchGradient> partial(chunks);
    BackwardOptions options;
    options.respect_mask = respect_mask;
    parallel_for(chunks, threads, [&](std::size_t c) {
        auto& acc = partial[c];
        acc.grads = ParamGrads::zeros_like(net);
        for (std::size_t i = c * kChunk; i < std::min(batch.size(), (c + 1) * kChunk); ++i) {
            const auto s = batch[i];
            const auto fwd = network_forward(net, data.degraded[s]);
            acc.loss += loss_and_grad(fwd.x_hat, data.clean[s], batch.size()).loss;
            acc.grads += network_backward(net, fwd, data.clean[s], batch.size(), options);
        }
    });
    BatchGradient total{0.0, ParamGrads::zeros_like(net)};
    for (const auto& p : partial) {
        total.loss += p.loss;
        total.grads += p.grads;
    }
    return total;
}

namespace detail {

inline void check_finite(const ParamGrads& g) {
    for (std::size_t k = 0; k < g.layers.size(); ++k) {
        const auto& l = g.layers[k];
        if (!std::isfinite(l.d_tau)) throw TrainingError("non-finite gradient for tau in layer " + std::to_string(k + 1));
        if (!std::isfinite(l.d_sigma))
            throw TrainingError("non-finite gradient for sigma in layer " + std::to_string(k + 1));
        if (!l.d_L.allFinite()) throw TrainingError("non-finite gradient for L in layer " + std::to_string(k + 1));
    }
}

inline double adam_scalar(double grad, double& m, double& v, double rate, const AdamSettings& a, double bc1,
                          double bc2) {
    m = a.beta1 * m + (1.0 - a.beta1) * grad;
    v = a.beta2 * v + (1.0 - a.beta2) * grad * grad;
    return rate * (m / bc1) / (std::sqrt(v / bc2) + a.epsilon);
}

}  // namespace detail

/// Applies one optimizer step for an already reduced gradient.
inline void apply_update(TrainState& state, const BatchGradient& bg, const TrainConfig& config) {
    detail::check_finite(bg.grads);
    const auto& lr = config.learning_rates;
    const double t = static_cast<double>(state.step + 1);
    const double bc1 = 1.0 - std::pow(config.adam.beta1, t);
    const double bc2 = 1.0 - std::pow(config.adam.beta2, t);
    for (std::size_t k = 0; k < state.net.depth(); ++k) {
        auto& layer = state.net.layers[k];
        auto& mom = state.moments[k];
        const auto& g = bg.grads.layers[k];
        if (config.optimizer == OptimizerKind::Adam) {
            const auto& a = config.adam;
            layer.tau -= detail::adam_scalar(g.d_tau, mom.m_tau, mom.v_tau, lr.base * lr.tau, a, bc1, bc2);
            layer.sigma -= detail::adam_scalar(g.d_sigma, mom.m_sigma, mom.v_sigma, lr.base * lr.sigma, a, bc1, bc2);
            mom.m_L = a.beta1 * mom.m_L + (1.0 - a.beta1) * g.d_L;
            mom.v_L = a.beta2 * mom.v_L + (1.0 - a.beta2) * g.d_L.cwiseProduct(g.d_L);
            layer.L.array() -= (lr.base * lr.L) * (mom.m_L.array() / bc1) /
                               ((mom.v_L.array() / bc2).sqrt() + a.epsilon);
        } else {
            layer.tau -= lr.base * lr.tau * g.d_tau;
            layer.sigma -= lr.base * lr.sigma * g.d_sigma;
            layer.L -= (lr.base * lr.L) * g.d_L;
        }
        layer.tau = std::max(layer.tau, config.positivity_floor);
        layer.sigma = std::max({layer.sigma, config.positivity_floor, 2.0 * kMinSigma});
        if (config.enforce_mask) layer.apply_mask();
    }
    state.loss_history.push_back(bg.loss);
    ++state.step;
}

/// Forward/backward over the batch, then one parameter update. On a non-finite
/// gradient the state is left untouched and TrainingError names the culprit.
inline TrainState train_step(const TrainState& state, const PatchPairSet& data, const std::vector<std::size_t>& batch,
                             const TrainConfig& config) {
    if (batch.empty()) throw ParameterError("train_step: empty batch");
    const auto bg = batch_gradient(state.net, data, batch, config.threads, config.enforce_mask);
    TrainState next = state;
    apply_update(next, bg, config);
    return next;
}

/// Mean per-sample squared error of the network over a data set.
inline double dataset_loss(const NetworkParams& net, const PatchPairSet& data, std::size_t threads = 1) {
    std::vector<double> losses(data.size());
    parallel_for(data.size(), threads, [&](std::size_t i) {
        losses[i] = (network_forward(net, data.degraded[i]).x_hat - data.clean[i]).squaredNorm();
    });
    return data.empty() ? 0.0 : std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(data.size());
}

struct TrainReport {
    std::vector<double> loss_curve;
    double seconds = 0.0;
    std::size_t steps = 0;
    std::size_t best_step = 0;
    double best_interval_loss = 0.0;
};

struct TrainResult {
    NetworkParams net;
    TrainState final_state;
    TrainReport report;
};

using CheckpointCallback = std::function<void(const TrainState&)>;

/// Runs until config.max_steps. With a checkpoint interval, the returned network is
/// the checkpoint whose preceding interval had the lowest mean batch loss;
/// otherwise it is the final one.
inline TrainResult train(const TrainConfig& config, const PatchPairSet& data, TrainState state,
                         const CheckpointCallback& on_checkpoint = {}) {
    config.validate();
    if (data.empty()) throw ParameterError("train: empty data set");
    data.validate();
    const auto start = std::chrono::steady_clock::now();
    BatchSchedule schedule(data.size(), config.batch_size, state.seed);
    TrainResult result;
    result.net = state.net;
    double best = std::numeric_limits<double>::infinity();
    std::size_t interval_begin = state.loss_history.size();
    auto close_interval = [&] {
        const auto& h = state.loss_history;
        if (h.size() == interval_begin) return;
        const double mean = std::accumulate(h.begin() + static_cast<std::ptrdiff_t>(interval_begin), h.end(), 0.0) /
                            static_cast<double>(h.size() - interval_begin);
        interval_begin = h.size();
        if (mean < best) {
            best = mean;
            result.net = state.net;
            result.report.best_step = state.step;
            result.report.best_interval_loss = mean;
        }
    };
    while (state.step < config.max_steps) {
        const auto batch = schedule.batch(state.step);
        const auto bg = batch_gradient(state.net, data, batch, config.threads, config.enforce_mask);
        apply_update(state, bg, config);
        if (config.checkpoint_interval > 0 && state.step % config.checkpoint_interval == 0) {
            if (on_checkpoint) on_checkpoint(state);
            close_interval();
        }
    }
    if (config.checkpoint_interval == 0) {
        result.net = state.net;
        result.report.best_step = state.step;
    } else {
        close_interval();
    }
    result.report.loss_curve = state.loss_history;
    result.report.steps = state.step;
    result.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.final_state = std::move(state);
    return result;
}

}  // namespace pdnet
