// Acceptance gate: one PASS/FAIL line per criterion. Exit status is the number of failures.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "pdnet/pdnet.hpp"

using namespace pdnet;
using namespace pdnet::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

const char* kDefaultDesign = "f5s2n30+f7s3n30+f10s10n30";

Outcome gradient_oracle() {
    const auto t0 = Clock::now();
    GradCheckConfig cfg;
    cfg.patch_side = 10;
    cfg.blur = 3;
    cfg.step = 1e-6;
    cfg.tolerance = 1e-5;
    std::mt19937_64 rng(2024);
    const std::size_t depths[] = {1, 2, 5};
    double worst = 0.0;
    std::size_t checked = 0;
    for (std::size_t t = 0; t < 100; ++t) {
        cfg.depth = depths[t % 3];
        const auto trial = run_gradcheck_trial(cfg, rng);
        worst = std::max(worst, trial.max_error());
        checked += trial.checked;
    }
    const double secs = seconds_since(t0);
    std::ostringstream d;
    d << "100 trials, " << checked << " gradients, max rel err " << fmt("%.2e", worst) << ", " << fmt("%.1f", secs)
      << " s";
    return {worst <= 1e-5 && secs < 120.0, d.str()};
}

Outcome unrolling_equivalence() {
    std::mt19937_64 rng(7);
    const auto design = FeatureDesign::parse(kDefaultDesign, 10);
    double worst = 0.0;
    for (std::size_t K : {1u, 3u, 10u}) {
        auto feat = build_feature_operator(design, rng(), 1e-2);
        const double n = operator_norm(feat.L);
        LayerParams layer{0.9 / n * 1.3, 0.9 / n / 1.3, std::move(feat.L), std::move(feat.support)};
        NetworkParams net;
        net.op = CirculantOp(uniform_kernel(3), {10, 10});
        net.design = design;
        net.layers.assign(K, layer);
        const Vector z = random_vector(100, rng, 0.0, 255.0);
        const Vector x_hat = network_forward(net, z).x_hat;

        CPProblem<> p{net.op, z, layer.L, ProxFamily::L1};
        const CPSettings s{layer.tau, layer.sigma, 0.0, K, 0.0};
        const Vector Atz = net.op.apply_adjoint(z);
        CPState st{Atz, Vector::Zero(layer.L.rows()), Atz};
        for (std::size_t k = 0; k < K; ++k) st = cp_iterate(p, s, st);
        worst = std::max(worst, (x_hat - st.x).cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-10, "K in {1,3,10}, max abs diff " + fmt("%.2e", worst)};
}

Outcome resolvent_correctness() {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> tau(1e-3, 50.0);
    std::uniform_int_distribution<int> ksize(1, 5);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix k = random_matrix(ksize(rng), ksize(rng), rng);
        const double t = tau(rng);
        const auto A = dense_circulant(k, {8, 8});
        const Eigen::MatrixXd M = t * A.transpose() * A + Eigen::MatrixXd::Identity(64, 64);
        const Vector x = random_vector(64, rng);
        const Vector u = M.ldlt().solve(x);
        worst = std::max(worst, rel_diff(Resolvent(CirculantOp(k, {8, 8}), t).apply(x), u));
    }
    return {worst <= 1e-10, "20 cases on 8x8, max rel err " + fmt("%.2e", worst)};
}

Outcome moreau_identity() {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> sig(1e-3, 1e3);
    std::uniform_int_distribution<int> len(1, 50);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const double s = sig(rng);
        const Vector v = random_vector(len(rng), rng, -10.0, 10.0);
        const Vector rhs = v - s * prox_l1(v / s, 1.0 / s);
        worst = std::max(worst, (prox_l1_conjugate(v, s) - rhs).cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-12, "1000 cases, max abs diff " + fmt("%.2e", worst)};
}

Outcome reference_solver() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(5);
    CPProblem<> p;
    p.op = CirculantOp(identity_kernel(), {1, 16});
    p.z = random_vector(16, rng, 0.0, 1.0);
    p.L = difference_operator(16, 0.15);
    CPSettings s = default_settings(operator_norm(p.L));
    s.max_iter = 5000;
    s.tol = 0.0;
    const double cp = objective(p, cp_solve(p, s, p.z).x);
    const double oracle = tv_subgradient_best(p.z, p.L, 1000000);
    const double secs = seconds_since(t0);
    std::ostringstream d;
    d << "cp " << fmt("%.12f", cp) << ", oracle " << fmt("%.12f", oracle) << ", gap " << fmt("%.2e", cp - oracle)
      << ", " << fmt("%.1f", secs) << " s";
    return {std::abs(cp - oracle) <= 1e-6 && secs < 60.0, d.str()};
}

Outcome feature_design() {
    const auto design = FeatureDesign::parse(kDefaultDesign, 10);
    const auto feat = build_feature_operator(design, 3, 1e-2);
    const auto expected = enumerate_footprints(design);
    bool ok = feat.L.rows() == 420 && feat.L.cols() == 100 && expected.size() == 420;
    std::size_t bad_rows = 0;
    for (Eigen::Index r = 0; ok && r < feat.L.rows(); ++r) {
        std::set<Eigen::Index> support, nonzero;
        for (Eigen::Index c = 0; c < feat.L.cols(); ++c) {
            if (feat.support(r, c)) support.insert(c);
            if (feat.L(r, c) != 0.0) nonzero.insert(c);
        }
        if (support != expected[static_cast<std::size_t>(r)] || nonzero != support) ++bad_rows;
    }
    ok = ok && bad_rows == 0;
    std::ostringstream d;
    d << "shape " << feat.L.rows() << "x" << feat.L.cols() << ", rows with wrong footprint " << bad_rows;
    return {ok, d.str()};
}

TrainConfig toy_config() {
    TrainConfig c;
    c.K = 3;
    c.batch_size = 4;
    c.max_steps = 500;
    c.learning_rates.base = 1e-2;
    c.learning_rates.tau = 2.0;
    c.seed = 1;
    return c;
}

bool same_params(const NetworkParams& a, const NetworkParams& b) {
    if (a.depth() != b.depth()) return false;
    for (std::size_t k = 0; k < a.depth(); ++k)
        if (a.layers[k].tau != b.layers[k].tau || a.layers[k].sigma != b.layers[k].sigma ||
            a.layers[k].L != b.layers[k].L)
            return false;
    return true;
}

Outcome training_smoke() {
    const auto t0 = Clock::now();
    const auto data = toy_patch_set(20, 3, 3, 25.0);
    const auto cfg = toy_config();
    const auto net = init_network(cfg, FeatureDesign::parse(cfg.feature_design, 10), CirculantOp(data.kernel, {10, 10}));
    const double initial = dataset_loss(net, data);
    const auto a = train(cfg, data, TrainState::fresh(net, cfg.seed));
    const auto b = train(cfg, data, TrainState::fresh(net, cfg.seed));
    const double final_loss = dataset_loss(a.net, data);
    const bool same = same_params(a.net, b.net) && a.report.loss_curve == b.report.loss_curve;
    const double secs = seconds_since(t0);
    std::ostringstream d;
    d << "loss " << fmt("%.4g", initial) << " -> " << fmt("%.4g", final_loss) << " (ratio "
      << fmt("%.3f", final_loss / initial) << "), runs identical: " << (same ? "yes" : "no") << ", "
      << fmt("%.1f", secs) << " s";
    return {final_loss <= 0.5 * initial && same && secs < 300.0, d.str()};
}

Outcome end_to_end() {
    const auto t0 = Clock::now();
    const auto spec = DegradationSpec::uniform(3, 50.0, 0);
    const auto train_files = io::list_images(data_dir() / "train");
    PatchPairSet data;
    data.patch_side = 10;
    data.kernel = spec.kernel;
    data.alpha = spec.alpha;
    const std::size_t total = 2000;
    for (std::size_t i = 0; i < train_files.size(); ++i) {
        const auto clean = io::read_image(train_files[i]);
        const std::size_t n = total / train_files.size() + (i < total % train_files.size() ? 1 : 0);
        auto per = spec;
        per.seed = 100 + i;
        const auto part = extract_patches(clean, degrade(clean, per), n, 10, 7 + i);
        data.clean.insert(data.clean.end(), part.clean.begin(), part.clean.end());
        data.degraded.insert(data.degraded.end(), part.degraded.begin(), part.degraded.end());
    }

    TrainConfig cfg;
    cfg.K = 3;
    cfg.batch_size = 64;
    cfg.max_steps = 5000;
    cfg.learning_rates.base = 1e-2;
    cfg.learning_rates.tau = 0.1;
    cfg.seed = 1;
    cfg.threads = default_threads();
    const auto net = init_network(cfg, FeatureDesign::parse(cfg.feature_design, 10), CirculantOp(data.kernel, {10, 10}));
    const auto trained = train(cfg, data, TrainState::fresh(net, cfg.seed)).net;

    double degraded = 0.0, independent = 0.0, averaged = 0.0, smoothed = 0.0;
    const auto tests = io::list_images(data_dir() / "test");
    for (std::size_t i = 0; i < tests.size(); ++i) {
        const auto clean = io::read_image(tests[i]);
        auto per = spec;
        per.seed = 1000 + i;
        const CirculantOp op(spec.kernel, clean.shape());
        const auto z = degrade(clean, per, op);
        const double d = psnr(clean, z.clipped());
        const double ind = psnr(clean, restore(trained, z, {StitchMode::Independent, 10, cfg.threads}).clipped());
        const double avg = psnr(clean, restore(trained, z, {StitchMode::Averaged, 1, cfg.threads}).clipped());
        const double atz = psnr(clean, ImageTensor::from_flat(op.apply_adjoint(z.flat()), clean.shape()).clipped());
        std::printf("  %-24s degraded %6.2f  independent %6.2f  averaged %6.2f  (A^T z %6.2f)\n",
                    tests[i].filename().string().c_str(), d, ind, avg, atz);
        degraded += d / static_cast<double>(tests.size());
        independent += ind / static_cast<double>(tests.size());
        averaged += avg / static_cast<double>(tests.size());
        smoothed += atz / static_cast<double>(tests.size());
    }
    const double secs = seconds_since(t0);
    std::ostringstream d;
    d << "mean dB degraded " << fmt("%.2f", degraded) << ", independent " << fmt("%.2f", independent)
      << " (gain " << fmt("%.2f", independent - degraded) << "), averaged " << fmt("%.2f", averaged) << " (gain "
      << fmt("%.2f", averaged - degraded) << "), A^T z " << fmt("%.2f", smoothed) << ", " << fmt("%.0f", secs)
      << " s";
    return {averaged - degraded >= 1.0 && independent - degraded >= 1.0 && secs < 1800.0, d.str()};
}

Outcome degradation_band() {
    const auto clean = io::read_pgm(data_dir() / "cameraman.pgm");
    const auto z = degrade(clean, DegradationSpec::uniform(5, 75.0, 0));
    const double clipped = psnr(clean, z.clipped());
    const double raw = psnr(clean, z);
    return {clipped >= 9.0 && clipped <= 14.0,
            "cameraman 512x512, " + fmt("%.2f", clipped) + " dB (" + fmt("%.2f", raw) + " dB before clipping)"};
}

}  // namespace

int main() {
    const std::pair<const char*, std::function<Outcome()>> criteria[] = {
        {"gradient oracle", gradient_oracle},
        {"unrolling equivalence", unrolling_equivalence},
        {"resolvent correctness", resolvent_correctness},
        {"Moreau identity", moreau_identity},
        {"reference solver optimality", reference_solver},
        {"feature design", feature_design},
        {"training smoke", training_smoke},
        {"end-to-end restoration", end_to_end},
        {"degradation sanity band", degradation_band},
    };
    int failures = 0, n = 0;
    for (const auto& [name, run] : criteria) {
        ++n;
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failures;
        std::printf("criterion %d %s: %s (%s)\n", n, o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%d criteria passed\n", n - failures, n);
    return failures;
}
