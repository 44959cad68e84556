#pragma once

// Chambolle-Pock iterations for  min_x 1/2 ||A x - z||^2 + h(L x)  with A circulant.
// L may be any Eigen dense or sparse matrix type.

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "pdnet/linops.hpp"
#include "pdnet/proxcalc.hpp"
#include "pdnet/types.hpp"

namespace pdnet {

template <class AnalysisMatrix = Matrix>
struct CPProblem {
    CirculantOp op;
    Vector z;
    AnalysisMatrix L;
    ProxFamily prox = ProxFamily::L1;

    void validate() const {
        const auto n = static_cast<Eigen::Index>(op.shape().size());
        require_dims(z.size() == n, "CPProblem: z does not match the operator grid");
        require_dims(L.cols() == n, "CPProblem: L has " + std::to_string(L.cols()) + " columns, expected " +
                                        std::to_string(n));
    }
};

struct CPSettings {
    double tau = 0.0;
    double sigma = 0.0;
    double theta = 1.0;
    std::size_t max_iter = 20000;
    double tol = 1e-8;
};

struct CPState {
    Vector x;
    Vector y;
    Vector x_bar;
};

/// Largest singular value of L by power iteration on L^T L.
template <class AnalysisMatrix>
double operator_norm(const AnalysisMatrix& L, std::size_t iterations = 50, double tol = 1e-6) {
    if (L.rows() == 0 || L.cols() == 0) return 0.0;
    std::mt19937_64 rng(0x5eed);
    std::normal_distribution<double> normal;
    Vector v(L.cols());
    for (auto& e : v) e = normal(rng);
    v.normalize();
    double estimate = 0.0;
    for (std::size_t it = 0; it < iterations; ++it) {
        Vector w = L.transpose() * (L * v);
        const double n = w.norm();
        if (n == 0.0) return 0.0;
        const double next = std::sqrt(n);
        v = w / n;
        const bool converged = std::abs(next - estimate) <= tol * next;
        estimate = next;
        if (converged) break;
    }
    // One extra Rayleigh quotient keeps the estimate from lagging the iterate.
    return std::max(estimate, (L * v).norm());
}

inline void check_step_sizes(const CPSettings& s, double norm_L) {
    require_positive(s.tau, "CPSettings tau");
    require_positive(s.sigma, "CPSettings sigma");
    if (!(s.theta >= 0.0 && s.theta <= 1.0)) throw ParameterError("CPSettings theta must lie in [0, 1]");
    const double product = s.tau * s.sigma * norm_L * norm_L;
    if (!(product < 1.0))
        throw ParameterError("step-size constraint violated: tau*sigma*||L||^2 = " + std::to_string(product) +
                             " >= 1");
}

/// tau = sigma = 0.99 / ||L||, theta = 1.
inline CPSettings default_settings(double norm_L) {
    CPSettings s;
    const double step = norm_L > 0.0 ? 0.99 / norm_L : 1.0;
    s.tau = step;
    s.sigma = step;
    return s;
}

template <class AnalysisMatrix>
double objective(const CPProblem<AnalysisMatrix>& problem, const Eigen::Ref<const Vector>& x) {
    const Vector residual = problem.op.apply(x) - problem.z;
    const Vector Lx = problem.L * x;
    return 0.5 * residual.squaredNorm() + penalty(problem.prox, Lx);
}

/// One step: dual prox, primal resolvent, relaxation.
template <class AnalysisMatrix>
CPState cp_iterate(const CPProblem<AnalysisMatrix>& problem, const CPSettings& settings, const Resolvent& resolvent,
                   const Vector& Atz, const CPState& state) {
    CPState next;
    next.y = prox_l1_conjugate(state.y + settings.sigma * (problem.L * state.x_bar), settings.sigma);
    const Vector Lty = problem.L.transpose() * next.y;
    next.x = resolvent.apply(settings.tau * Atz + state.x - settings.tau * Lty);
    next.x_bar = next.x + settings.theta * (next.x - state.x);
    return next;
}

template <class AnalysisMatrix>
CPState cp_iterate(const CPProblem<AnalysisMatrix>& problem, const CPSettings& settings, const CPState& state) {
    problem.validate();
    require_dims(state.x.size() == problem.z.size() && state.x_bar.size() == problem.z.size() &&
                     state.y.size() == problem.L.rows(),
                 "cp_iterate: state dimensions inconsistent with problem");
    const Resolvent resolvent(problem.op, settings.tau);
    return cp_iterate(problem, settings, resolvent, problem.op.apply_adjoint(problem.z), state);
}

struct CPResult {
    Vector x;
    Vector y;
    std::vector<double> trace;
    std::size_t iterations = 0;
    bool converged = false;
};

/// Iterates from (x0, 0, x0) until ||x+ - x|| / max(||x||, 1) < tol or max_iter.
template <class AnalysisMatrix>
CPResult cp_solve(const CPProblem<AnalysisMatrix>& problem, const CPSettings& settings, const Vector& x0,
                  std::optional<double> norm_L = std::nullopt) {
    problem.validate();
    require_dims(x0.size() == problem.z.size(), "cp_solve: x0 does not match problem");
    check_step_sizes(settings, norm_L ? *norm_L : operator_norm(problem.L));

    const Resolvent resolvent(problem.op, settings.tau);
    const Vector Atz = problem.op.apply_adjoint(problem.z);
    CPState state{x0, Vector::Zero(problem.L.rows()), x0};
    CPResult result;
    result.trace.reserve(std::min<std::size_t>(settings.max_iter, 100000));
    for (std::size_t k = 0; k < settings.max_iter; ++k) {
        CPState next = cp_iterate(problem, settings, resolvent, Atz, state);
        const double change = (next.x - state.x).norm() / std::max(state.x.norm(), 1.0);
        state = std::move(next);
        result.trace.push_back(objective(problem, state.x));
        result.iterations = k + 1;
        if (change < settings.tol) {
            result.converged = true;
            break;
        }
    }
    result.x = std::move(state.x);
    result.y = std::move(state.y);
    return result;
}

}  // namespace pdnet
