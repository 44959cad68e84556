// pdnet: degrade, extract-patches, train, restore, evaluate, gradcheck, solve-cp.
//
// Exit codes: 0 success, 1 invariant or threshold failure, 2 usage error, 3 I/O error.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "CLI11.hpp"
#include "json.hpp"
#include "pdnet/pdnet.hpp"

namespace fs = std::filesystem;
using namespace pdnet;
using ordered_json = nlohmann::ordered_json;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CheckFailed : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Run manifest

class Manifest {
public:
    explicit Manifest(std::string command) : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {
        const auto now = std::time(nullptr);
        std::ostringstream ts;
        ts << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
        started_ = ts.str();
    }

    void arg(const std::string& key, ordered_json value) { args_[key] = std::move(value); }
    void input(const fs::path& p) { inputs_.push_back(p.string()); }
    void output(const fs::path& p) { outputs_.push_back(p.string()); }
    void timing(const std::string& key, double seconds) { timings_[key] = seconds; }
    void set_config(const fs::path& p) { config_ = p.string(); }
    void set_seed(std::uint64_t s) { seed_ = s; }

    void write(const fs::path& path) {
        timings_["total_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        ordered_json j;
        j["command"] = command_;
        j["tool_version"] = PDNET_VERSION;
        j["started_utc"] = started_;
        j["config"] = config_.empty() ? ordered_json(nullptr) : ordered_json(config_);
        j["seed"] = seed_ ? ordered_json(*seed_) : ordered_json(nullptr);
        j["arguments"] = args_;
        j["inputs"] = inputs_;
        j["outputs"] = outputs_;
        j["timings"] = timings_;
        std::ofstream out(path);
        if (!out) throw IoError("cannot write manifest " + path.string());
        out << j.dump(2) << '\n';
    }

private:
    std::string command_;
    std::chrono::steady_clock::time_point start_;
    std::string started_;
    std::string config_;
    std::optional<std::uint64_t> seed_;
    ordered_json args_ = ordered_json::object();
    std::vector<std::string> inputs_, outputs_;
    ordered_json timings_ = ordered_json::object();
};

/// Manifest beside a file output, or inside a directory output.
fs::path manifest_path(const fs::path& output, bool is_dir) {
    if (is_dir) return output / "manifest.json";
    return fs::path(output.string() + ".manifest.json");
}

// ---------------------------------------------------------------------------
// Helpers

std::vector<fs::path> collect_images(const fs::path& input, const fs::path& list) {
    if (fs::is_directory(input)) {
        auto files = io::list_images(input, list);
        if (files.empty()) throw IoError("no .pgm or .png images in " + input.string());
        return files;
    }
    if (!fs::exists(input)) throw IoError("no such file: " + input.string());
    return {input};
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void ensure_parent(const fs::path& file) {
    if (file.has_parent_path()) ensure_dir(file.parent_path());
}

std::ofstream open_out(const fs::path& p) {
    ensure_parent(p);
    std::ofstream out(p);
    if (!out) throw IoError("cannot write " + p.string());
    out << std::setprecision(10);
    return out;
}

struct Scenario {
    std::size_t blur = 3;
    double alpha = 0.0;

    std::string label() const {
        std::ostringstream os;
        os << blur << 'x' << blur << ":a" << alpha;
        return os.str();
    }
};

/// "3x3:50", "3:50" or "5x5:75".
Scenario parse_scenario(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw UsageError("scenario '" + text + "' must look like 3x3:50");
    std::string blur = text.substr(0, colon);
    if (const auto x = blur.find('x'); x != std::string::npos) {
        if (blur.substr(0, x) != blur.substr(x + 1))
            throw UsageError("scenario '" + text + "': only square uniform blurs are supported");
        blur = blur.substr(0, x);
    }
    Scenario s;
    try {
        s.blur = std::stoul(blur);
        s.alpha = std::stod(text.substr(colon + 1));
    } catch (const std::exception&) {
        throw UsageError("scenario '" + text + "' must look like 3x3:50");
    }
    if (s.blur == 0 || s.alpha < 0.0) throw UsageError("scenario '" + text + "': blur >= 1 and alpha >= 0 required");
    return s;
}

/// Seed of the i-th image of a run, so every image gets its own noise draw.
std::uint64_t image_seed(std::uint64_t seed, std::size_t i) { return seed * 1000003ULL + i; }

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double e : v) s += e;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Loss curve as a PGM line plot: log10(loss) against step.
void write_loss_plot(const fs::path& path, const std::vector<double>& losses) {
    const Eigen::Index W = 480, H = 240, pad = 10;
    ImageTensor img;
    img.pixels = Matrix::Constant(H, W, 255.0);
    img.pixels.row(H - pad).segment(pad, W - 2 * pad).setConstant(160.0);
    img.pixels.col(pad).segment(pad, H - 2 * pad).setConstant(160.0);
    if (!losses.empty()) {
        std::vector<double> logs;
        for (double l : losses) logs.push_back(std::log10(std::max(l, 1e-300)));
        const double lo = *std::min_element(logs.begin(), logs.end());
        const double hi = *std::max_element(logs.begin(), logs.end());
        const double span = hi > lo ? hi - lo : 1.0;
        const auto plot_w = W - 2 * pad - 1, plot_h = H - 2 * pad - 1;
        auto row_of = [&](double v) { return pad + static_cast<Eigen::Index>((hi - v) / span * static_cast<double>(plot_h)); };
        for (Eigen::Index x = 0; x < plot_w; ++x) {
            const auto a = static_cast<std::size_t>(static_cast<double>(x) / plot_w * static_cast<double>(logs.size()));
            const auto b = std::max(a + 1, static_cast<std::size_t>(static_cast<double>(x + 1) / plot_w *
                                                                   static_cast<double>(logs.size())));
            double vmin = logs[a], vmax = logs[a];
            for (std::size_t i = a; i < std::min(b, logs.size()); ++i) {
                vmin = std::min(vmin, logs[i]);
                vmax = std::max(vmax, logs[i]);
            }
            for (Eigen::Index r = row_of(vmax); r <= row_of(vmin); ++r) img.pixels(r, pad + 1 + x) = 0.0;
        }
    }
    ensure_parent(path);
    io::write_pgm(path, img);
}

// ---------------------------------------------------------------------------
// degrade

struct DegradeArgs {
    std::string input, output_dir, list;
    std::size_t blur = 3;
    double alpha = 25.0;
    std::uint64_t seed = 0;
};

int cmd_degrade(const DegradeArgs& a) {
    Manifest m("degrade");
    m.set_seed(a.seed);
    m.arg("blur", a.blur);
    m.arg("alpha", a.alpha);
    const auto files = collect_images(a.input, a.list);
    ensure_dir(a.output_dir);
    auto csv = open_out(fs::path(a.output_dir) / "degrade_psnr.csv");
    csv << "image,scenario,method,dB\n";
    const Scenario sc{a.blur, a.alpha};
    std::vector<double> scores;
    for (std::size_t i = 0; i < files.size(); ++i) {
        const auto clean = io::read_image(files[i]);
        const auto degraded = degrade(clean, DegradationSpec::uniform(a.blur, a.alpha, image_seed(a.seed, i)));
        const auto out = fs::path(a.output_dir) / files[i].filename().replace_extension(".pgm");
        io::write_pgm(out, degraded);
        const double db = psnr(clean, degraded.clipped());
        scores.push_back(db);
        csv << files[i].filename().string() << ',' << sc.label() << ",degraded," << db << '\n';
        std::cout << files[i].filename().string() << ": " << std::fixed << std::setprecision(2) << db << " dB\n";
        m.input(files[i]);
        m.output(out);
    }
    csv << "mean," << sc.label() << ",degraded," << mean(scores) << '\n';
    m.output(fs::path(a.output_dir) / "degrade_psnr.csv");
    m.write(manifest_path(a.output_dir, true));
    return 0;
}

// ---------------------------------------------------------------------------
// extract-patches

struct ExtractArgs {
    std::string input, list, output, mode = "crop";
    std::size_t count = 2000, patch_side = 10, blur = 3;
    double alpha = 25.0;
    std::uint64_t seed = 0;
};

int cmd_extract(const ExtractArgs& a) {
    Manifest m("extract-patches");
    m.set_seed(a.seed);
    m.arg("count", a.count);
    m.arg("patch_side", a.patch_side);
    m.arg("blur", a.blur);
    m.arg("alpha", a.alpha);
    m.arg("mode", a.mode);
    const auto files = collect_images(a.input, a.list);
    const auto spec = DegradationSpec::uniform(a.blur, a.alpha, a.seed);
    PatchPairSet set;
    set.patch_side = a.patch_side;
    set.kernel = spec.kernel;
    set.alpha = a.alpha;
    set.source = fs::path(a.input).filename().string() + " (" + std::to_string(files.size()) + " images, " + a.mode + ")";
    for (std::size_t i = 0; i < files.size(); ++i) {
        const std::size_t n = a.count / files.size() + (i < a.count % files.size() ? 1 : 0);
        if (n == 0) continue;
        const auto clean = io::read_image(files[i]);
        auto per = spec;
        per.seed = image_seed(a.seed, i);
        const auto corner_seed = image_seed(a.seed, i) ^ 0x5bd1e995ULL;
        PatchPairSet part = a.mode == "crop"
                                ? extract_patches(clean, degrade(clean, per), n, a.patch_side, corner_seed)
                                : extract_patches_circulant(clean, per, n, a.patch_side, corner_seed);
        set.clean.insert(set.clean.end(), part.clean.begin(), part.clean.end());
        set.degraded.insert(set.degraded.end(), part.degraded.begin(), part.degraded.end());
        m.input(files[i]);
    }
    ensure_parent(a.output);
    io::write_patch_set(a.output, set);
    std::cout << "wrote " << set.size() << " patch pairs of side " << a.patch_side << " to " << a.output << '\n';
    m.output(a.output);
    m.write(manifest_path(a.output, false));
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string config, patches, output, resume, loss_csv, plot, checkpoint_dir, state_output;
    std::optional<std::size_t> K, batch_size, max_steps, threads, checkpoint_interval;
    std::optional<std::uint64_t> seed;
    std::optional<double> lr;
};

int cmd_train(const TrainArgs& a) {
    Manifest m("train");
    std::optional<io::Checkpoint> resume;
    if (!a.resume.empty()) {
        resume = io::read_checkpoint(a.resume);
        if (!resume->state) throw UsageError(a.resume + " holds no training state and cannot be resumed");
        m.input(a.resume);
    }
    TrainConfig cfg;
    if (!a.config.empty()) {
        cfg = io::load_train_config(a.config);
        m.set_config(a.config);
    } else if (resume && resume->config) {
        cfg = *resume->config;
    }
    if (a.K) cfg.K = *a.K;
    if (a.batch_size) cfg.batch_size = *a.batch_size;
    if (a.max_steps) cfg.max_steps = *a.max_steps;
    if (a.threads) cfg.threads = *a.threads;
    if (a.checkpoint_interval) cfg.checkpoint_interval = *a.checkpoint_interval;
    if (a.seed) cfg.seed = *a.seed;
    if (a.lr) cfg.learning_rates.base = *a.lr;
    try {
        cfg.validate();
    } catch (const ParameterError& e) {
        throw UsageError(std::string("invalid training settings: ") + e.what());
    }
    m.set_seed(cfg.seed);
    m.arg("config", io::to_json(cfg));

    const auto data = io::read_patch_set(a.patches);
    m.input(a.patches);
    if (data.empty()) throw UsageError(a.patches + " holds no patches");
    if (data.patch_side != cfg.patch_side)
        throw UsageError("patch set has side " + std::to_string(data.patch_side) + " but the config expects " +
                         std::to_string(cfg.patch_side));
    const auto design = FeatureDesign::parse(cfg.feature_design, cfg.patch_side);
    const CirculantOp op(data.kernel, {cfg.patch_side, cfg.patch_side});

    TrainState state;
    if (resume) {
        state = *resume->state;
        if (state.net.depth() != cfg.K || !(state.net.design == design))
            throw UsageError("checkpoint " + a.resume + " does not match the requested K / feature design");
        if (state.net.op.kernel() != data.kernel)
            throw UsageError("checkpoint " + a.resume + " was trained for a different blur than " + a.patches);
        std::cout << "resuming from step " << state.step << '\n';
    } else {
        state = TrainState::fresh(init_network(cfg, design, op), cfg.seed);
    }

    const fs::path out = a.output;
    ensure_parent(out);
    CheckpointCallback on_checkpoint;
    if (!a.checkpoint_dir.empty()) {
        ensure_dir(a.checkpoint_dir);
        on_checkpoint = [&](const TrainState& s) {
            std::ostringstream name;
            name << "step_" << std::setw(8) << std::setfill('0') << s.step << ".json";
            const auto p = fs::path(a.checkpoint_dir) / name.str();
            io::write_checkpoint(p, s.net, &s, &cfg);
            m.output(p);
        };
    }
    const std::size_t start_step = state.step;
    const auto result = train(cfg, data, std::move(state), on_checkpoint);
    m.timing("train_seconds", result.report.seconds);

    const auto& fin = result.final_state;
    const bool best_is_final = result.report.best_step == fin.step;
    io::write_checkpoint(out, result.net, best_is_final ? &fin : nullptr, &cfg);
    m.output(out);
    if (!best_is_final) {
        const fs::path state_out = a.state_output.empty() ? fs::path(out).replace_extension(".state.json")
                                                          : fs::path(a.state_output);
        io::write_checkpoint(state_out, fin.net, &fin, &cfg);
        m.output(state_out);
        std::cout << "best interval ended at step " << result.report.best_step << "; resumable state in " << state_out
                  << '\n';
    }

    const fs::path loss_csv = a.loss_csv.empty() ? fs::path(out).replace_extension(".loss.csv") : fs::path(a.loss_csv);
    {
        auto csv = open_out(loss_csv);
        csv << "step,loss\n";
        for (std::size_t i = 0; i < fin.loss_history.size(); ++i) csv << i + 1 << ',' << fin.loss_history[i] << '\n';
    }
    m.output(loss_csv);
    if (!a.plot.empty()) {
        write_loss_plot(a.plot, fin.loss_history);
        m.output(a.plot);
    }

    const auto& h = fin.loss_history;
    const std::size_t w = std::min<std::size_t>(50, h.size());
    std::vector<double> head(h.begin(), h.begin() + static_cast<std::ptrdiff_t>(w));
    std::vector<double> tail(h.end() - static_cast<std::ptrdiff_t>(w), h.end());
    std::cout << "steps " << start_step << " -> " << fin.step << " in " << std::fixed << std::setprecision(1)
              << result.report.seconds << " s";
    if (w > 0)
        std::cout << std::setprecision(4) << std::defaultfloat << "; mean batch loss first " << w << ": " << mean(head)
                  << ", last " << w << ": " << mean(tail);
    std::cout << '\n';
    m.write(manifest_path(out, false));
    return 0;
}

// ---------------------------------------------------------------------------
// restore

struct RestoreArgs {
    std::string checkpoint, input, output, list, mode = "averaged";
    std::size_t stride = 1;
    std::size_t threads = default_threads();
};

StitchMode parse_mode(const std::string& s) {
    if (s == "averaged") return StitchMode::Averaged;
    if (s == "independent") return StitchMode::Independent;
    throw UsageError("mode must be 'averaged' or 'independent', got '" + s + "'");
}

int cmd_restore(const RestoreArgs& a) {
    Manifest m("restore");
    m.arg("mode", a.mode);
    m.arg("stride", a.stride);
    const auto ck = io::read_checkpoint(a.checkpoint);
    m.input(a.checkpoint);
    const RestoreOptions opt{parse_mode(a.mode), a.stride, a.threads};
    const bool many = fs::is_directory(a.input);
    const auto files = collect_images(a.input, a.list);
    if (many) ensure_dir(a.output);
    for (const auto& f : files) {
        const auto degraded = io::read_image(f);
        const auto restored = restore(ck.net, degraded, opt).clipped();
        const fs::path out = many ? fs::path(a.output) / f.filename().replace_extension(".pgm") : fs::path(a.output);
        ensure_parent(out);
        io::write_pgm(out, restored);
        m.input(f);
        m.output(out);
    }
    std::cout << "restored " << files.size() << " image(s)\n";
    m.write(manifest_path(a.output, many));
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
    std::vector<std::string> checkpoints, scenarios;
    std::string test_dir, list, output, table, mode = "both";
    std::size_t stride = 1;
    std::size_t threads = default_threads();
    std::uint64_t seed = 0;
};

int cmd_evaluate(const EvaluateArgs& a) {
    Manifest m("evaluate");
    m.set_seed(a.seed);
    m.arg("mode", a.mode);
    m.arg("stride", a.stride);
    m.arg("scenarios", a.scenarios);
    if (a.scenarios.empty()) throw UsageError("at least one --scenario is required");
    if (a.checkpoints.size() != 1 && a.checkpoints.size() != a.scenarios.size())
        throw UsageError("give one checkpoint, or one per scenario");
    std::vector<StitchMode> modes;
    if (a.mode == "both")
        modes = {StitchMode::Independent, StitchMode::Averaged};
    else
        modes = {parse_mode(a.mode)};

    const auto files = collect_images(a.test_dir, a.list);
    std::vector<ImageTensor> clean;
    for (const auto& f : files) {
        clean.push_back(io::read_image(f));
        m.input(f);
    }
    auto csv = open_out(a.output);
    csv << "image,scenario,method,dB\n";
    std::vector<std::string> methods = {"degraded"};
    for (auto md : modes) methods.push_back(md == StitchMode::Averaged ? "pdnet-averaged" : "pdnet-independent");
    std::map<std::string, std::map<std::string, double>> table;

    for (std::size_t s = 0; s < a.scenarios.size(); ++s) {
        const auto sc = parse_scenario(a.scenarios[s]);
        const auto& ck_path = a.checkpoints.size() == 1 ? a.checkpoints[0] : a.checkpoints[s];
        const auto ck = io::read_checkpoint(ck_path);
        m.input(ck_path);
        const auto spec = DegradationSpec::uniform(sc.blur, sc.alpha, 0);
        if (spec.kernel != ck.net.op.kernel())
            std::cerr << "warning: " << ck_path << " was trained for a different blur than scenario " << sc.label()
                      << '\n';
        std::map<std::string, std::vector<double>> scores;
        for (std::size_t i = 0; i < files.size(); ++i) {
            auto per = spec;
            per.seed = image_seed(a.seed, i);
            const auto degraded = degrade(clean[i], per);
            const auto name = files[i].filename().string();
            auto emit = [&](const std::string& method, double db) {
                scores[method].push_back(db);
                csv << name << ',' << sc.label() << ',' << method << ',' << db << '\n';
            };
            emit("degraded", psnr(clean[i], degraded.clipped()));
            for (std::size_t k = 0; k < modes.size(); ++k) {
                const RestoreOptions opt{modes[k], a.stride, a.threads};
                emit(methods[k + 1], psnr(clean[i], restore(ck.net, degraded, opt).clipped()));
            }
        }
        for (const auto& method : methods) {
            const double avg = mean(scores[method]);
            csv << "mean," << sc.label() << ',' << method << ',' << avg << '\n';
            table[method][sc.label()] = avg;
            std::cout << sc.label() << ' ' << std::setw(18) << std::left << method << std::right << std::fixed
                      << std::setprecision(2) << avg << " dB\n";
        }
    }
    m.output(a.output);

    const fs::path table_path = a.table.empty() ? fs::path(a.output).replace_extension(".table.csv") : fs::path(a.table);
    auto t = open_out(table_path);
    t << "method";
    for (const auto& s : a.scenarios) t << ',' << parse_scenario(s).label();
    t << '\n' << std::fixed << std::setprecision(2);
    for (const auto& method : methods) {
        t << method;
        for (const auto& s : a.scenarios) t << ',' << table[method][parse_scenario(s).label()];
        t << '\n';
    }
    m.output(table_path);
    m.write(manifest_path(a.output, false));
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
    std::uint64_t seed = 1;
    std::string depths = "1,2,5";
    std::size_t trials = 100;
    double tolerance = 1e-5;
    double step = 1e-6;
    std::string fault = "none";
    std::string design = "f5s2n30+f7s3n30+f10s10n30";
    std::size_t patch_side = 10, blur = 3, entries = 20;
    std::string report;
};

int cmd_gradcheck(const GradcheckArgs& a) {
    Manifest m("gradcheck");
    m.set_seed(a.seed);
    m.arg("depths", a.depths);
    m.arg("trials", a.trials);
    m.arg("tolerance", a.tolerance);
    m.arg("step", a.step);
    m.arg("fault", a.fault);
    std::vector<std::size_t> depths;
    {
        std::istringstream in(a.depths);
        std::string tok;
        while (std::getline(in, tok, ',')) {
            try {
                depths.push_back(std::stoul(tok));
            } catch (const std::exception&) {
                throw UsageError("--K expects a comma-separated list of depths, got '" + a.depths + "'");
            }
            if (depths.back() == 0) throw UsageError("depths must be at least 1");
        }
        if (depths.empty()) throw UsageError("--K is empty");
    }
    GradCheckConfig cfg;
    cfg.seed = a.seed;
    cfg.tolerance = a.tolerance;
    cfg.step = a.step;
    cfg.design = a.design;
    cfg.patch_side = a.patch_side;
    cfg.blur = a.blur;
    cfg.sampled_entries = a.entries;
    if (a.fault == "none")
        cfg.fault = GradientFault::None;
    else if (a.fault == "drop-resolvent-tau")
        cfg.fault = GradientFault::DropResolventTauTerm;
    else if (a.fault == "flip-prox-sigma")
        cfg.fault = GradientFault::FlipProxSigmaTerm;
    else
        throw UsageError("unknown --fault '" + a.fault + "' (none, drop-resolvent-tau, flip-prox-sigma)");

    if (a.trials == 0) {
        std::cerr << "warning: 0 trials requested; nothing was checked\n";
        std::cout << "gradcheck: PASS (vacuous, 0 trials)\n";
        if (!a.report.empty()) m.write(manifest_path(a.report, false));
        return 0;
    }

    std::optional<std::ofstream> report;
    if (!a.report.empty()) {
        report = open_out(a.report);
        *report << "trial,K,attempts,checked,max_err_tau,max_err_sigma,max_err_L\n";
    }
    std::mt19937_64 rng(a.seed);
    double worst_tau = 0, worst_sigma = 0, worst_L = 0;
    std::size_t checked = 0, failures = 0;
    for (std::size_t t = 0; t < a.trials; ++t) {
        cfg.depth = depths[t % depths.size()];
        const auto trial = run_gradcheck_trial(cfg, rng);
        worst_tau = std::max(worst_tau, trial.max_err_tau);
        worst_sigma = std::max(worst_sigma, trial.max_err_sigma);
        worst_L = std::max(worst_L, trial.max_err_L);
        checked += trial.checked;
        if (trial.max_error() > cfg.tolerance) ++failures;
        if (report)
            *report << t << ',' << cfg.depth << ',' << trial.attempts << ',' << trial.checked << ',' << trial.max_err_tau
                    << ',' << trial.max_err_sigma << ',' << trial.max_err_L << '\n';
    }
    std::cout << std::scientific << std::setprecision(3) << "trials " << a.trials << ", gradients checked " << checked
              << "\nmax relative error  tau " << worst_tau << "  sigma " << worst_sigma << "  L " << worst_L
              << "\ntolerance " << cfg.tolerance << '\n';
    const bool pass = failures == 0;
    std::cout << "gradcheck: " << (pass ? "PASS" : "FAIL") << " (" << failures << " failing trial(s))\n";
    if (!a.report.empty()) {
        m.output(a.report);
        m.write(manifest_path(a.report, false));
    }
    return pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// solve-cp

struct SolveArgs {
    std::string input, output, trace, analysis = "tv", design = "f5s2n30+f7s3n30+f10s10n30";
    bool already_degraded = false;
    std::size_t blur = 3, max_iter = 20000;
    double alpha = 25.0, lambda = 10.0, L_std = 1e-2, theta = 1.0, tol = 1e-8;
    std::optional<double> tau, sigma;
    std::uint64_t seed = 0;
};

/// Anisotropic forward differences (no wrap) scaled by lambda.
Eigen::SparseMatrix<double> tv_operator(GridShape g, double lambda) {
    const auto R = static_cast<Eigen::Index>(g.rows), C = static_cast<Eigen::Index>(g.cols);
    std::vector<Eigen::Triplet<double>> t;
    Eigen::Index row = 0;
    for (Eigen::Index r = 0; r < R; ++r)
        for (Eigen::Index c = 0; c + 1 < C; ++c, ++row) {
            t.emplace_back(row, r * C + c, -lambda);
            t.emplace_back(row, r * C + c + 1, lambda);
        }
    for (Eigen::Index r = 0; r + 1 < R; ++r)
        for (Eigen::Index c = 0; c < C; ++c, ++row) {
            t.emplace_back(row, r * C + c, -lambda);
            t.emplace_back(row, (r + 1) * C + c, lambda);
        }
    Eigen::SparseMatrix<double> L(std::max<Eigen::Index>(row, 1), R * C);
    L.setFromTriplets(t.begin(), t.end());
    return L;
}

template <class M>
CPResult run_cp(const CPProblem<M>& problem, const SolveArgs& a, Manifest& m) {
    const double norm = operator_norm(problem.L);
    CPSettings s = default_settings(norm);
    if (a.tau) s.tau = *a.tau;
    if (a.sigma) s.sigma = *a.sigma;
    s.theta = a.theta;
    s.max_iter = a.max_iter;
    s.tol = a.tol;
    m.arg("tau", s.tau);
    m.arg("sigma", s.sigma);
    m.arg("norm_L", norm);
    std::cout << "||L|| = " << norm << ", tau = " << s.tau << ", sigma = " << s.sigma << ", theta = " << s.theta << '\n';
    std::cout << "objective at z: " << objective(problem, problem.z) << '\n';
    return cp_solve(problem, s, problem.z, norm);
}

int cmd_solve_cp(const SolveArgs& a) {
    Manifest m("solve-cp");
    m.set_seed(a.seed);
    m.arg("analysis", a.analysis);
    m.arg("blur", a.blur);
    m.arg("alpha", a.alpha);
    m.arg("theta", a.theta);
    const auto image = io::read_image(a.input);
    m.input(a.input);
    const auto spec = DegradationSpec::uniform(a.blur, a.alpha, a.seed);
    const CirculantOp op(spec.kernel, image.shape());
    const ImageTensor z = a.already_degraded ? image : degrade(image, spec, op);

    CPResult res;
    if (a.analysis == "tv" || a.analysis == "zero") {
        CPProblem<Eigen::SparseMatrix<double>> p;
        p.op = op;
        p.z = z.flat();
        p.L = a.analysis == "tv" ? tv_operator(image.shape(), a.lambda)
                                 : Eigen::SparseMatrix<double>(1, static_cast<Eigen::Index>(image.shape().size()));
        res = run_cp(p, a, m);
        std::cout << "objective at x: " << objective(p, res.x) << '\n';
    } else if (a.analysis == "design") {
        if (image.shape().rows != image.shape().cols)
            throw UsageError("--L design needs a square patch-sized image");
        const auto design = FeatureDesign::parse(a.design, image.shape().rows);
        CPProblem<> p;
        p.op = op;
        p.z = z.flat();
        p.L = build_feature_operator(design, a.seed, a.L_std).L;
        res = run_cp(p, a, m);
        std::cout << "objective at x: " << objective(p, res.x) << '\n';
    } else {
        throw UsageError("--L must be zero, tv or design");
    }
    std::cout << "iterations " << res.iterations << (res.converged ? " (converged)" : " (max_iter reached)") << '\n';
    const auto restored = ImageTensor::from_flat(res.x, image.shape()).clipped();
    if (!a.already_degraded)
        std::cout << std::fixed << std::setprecision(2) << "PSNR degraded " << psnr(image, z.clipped())
                  << " dB, restored " << psnr(image, restored) << " dB\n";
    ensure_parent(a.output);
    io::write_pgm(a.output, restored);
    m.output(a.output);
    const fs::path trace = a.trace.empty() ? fs::path(a.output).replace_extension(".trace.csv") : fs::path(a.trace);
    auto csv = open_out(trace);
    csv << std::setprecision(17) << "iteration,objective\n";
    for (std::size_t i = 0; i < res.trace.size(); ++i) csv << i + 1 << ',' << res.trace[i] << '\n';
    m.output(trace);
    m.write(manifest_path(a.output, false));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Unfolded primal-dual network for image restoration"};
    app.set_version_flag("--version", std::string(PDNET_VERSION));
    app.require_subcommand(1);

    DegradeArgs dg;
    auto* c_degrade = app.add_subcommand("degrade", "Blur and add Gaussian noise to images");
    c_degrade->add_option("--input", dg.input, "Image file or directory")->required();
    c_degrade->add_option("--output-dir", dg.output_dir, "Directory for degraded PGMs")->required();
    c_degrade->add_option("--list", dg.list, "List file selecting images of the input directory");
    c_degrade->add_option("--blur", dg.blur, "Uniform blur size p (p x p); 1 = no blur")->capture_default_str();
    c_degrade->add_option("--alpha", dg.alpha, "Noise standard deviation (0-255 units)")->capture_default_str();
    c_degrade->add_option("--seed", dg.seed, "Noise seed")->capture_default_str();

    ExtractArgs ex;
    auto* c_extract = app.add_subcommand("extract-patches", "Sample aligned clean/degraded patch pairs");
    c_extract->add_option("--input", ex.input, "Image file or directory of clean images")->required();
    c_extract->add_option("--list", ex.list, "List file selecting images of the input directory");
    c_extract->add_option("--output", ex.output, "Patch set file")->required();
    c_extract->add_option("--count", ex.count, "Total number of patches")->capture_default_str();
    c_extract->add_option("--patch-side", ex.patch_side, "Patch side in pixels")->capture_default_str();
    c_extract->add_option("--blur", ex.blur, "Uniform blur size")->capture_default_str();
    c_extract->add_option("--alpha", ex.alpha, "Noise standard deviation")->capture_default_str();
    c_extract->add_option("--seed", ex.seed, "Seed for corners and noise")->capture_default_str();
    c_extract->add_option("--mode", ex.mode, "crop: crop a degraded image; circulant: degrade each patch periodically")
        ->check(CLI::IsMember({"crop", "circulant"}))
        ->capture_default_str();

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "Train the network on a patch set");
    c_train->add_option("--config", tr.config, "Training config (JSON)");
    c_train->add_option("--patches", tr.patches, "Patch set file")->required();
    c_train->add_option("--output", tr.output, "Checkpoint to write")->required();
    c_train->add_option("--resume", tr.resume, "Checkpoint with training state to continue from");
    c_train->add_option("--loss-csv", tr.loss_csv, "Loss curve CSV (default: <output>.loss.csv)");
    c_train->add_option("--plot", tr.plot, "Also draw the loss curve into this PGM");
    c_train->add_option("--checkpoint-dir", tr.checkpoint_dir, "Directory for periodic checkpoints");
    c_train->add_option("--state-output", tr.state_output, "Where to put the final state when it is not the best");
    c_train->add_option("--K", tr.K, "Override: number of layers");
    c_train->add_option("--batch-size", tr.batch_size, "Override: batch size");
    c_train->add_option("--max-steps", tr.max_steps, "Override: number of steps");
    c_train->add_option("--seed", tr.seed, "Override: seed");
    c_train->add_option("--threads", tr.threads, "Override: worker threads");
    c_train->add_option("--checkpoint-interval", tr.checkpoint_interval, "Override: steps between checkpoints");
    c_train->add_option("--lr", tr.lr, "Override: base learning rate");

    RestoreArgs rs;
    auto* c_restore = app.add_subcommand("restore", "Restore degraded images with a trained network");
    c_restore->add_option("--checkpoint", rs.checkpoint, "Trained checkpoint")->required();
    c_restore->add_option("--input", rs.input, "Degraded image file or directory")->required();
    c_restore->add_option("--output", rs.output, "Output file (or directory when --input is one)")->required();
    c_restore->add_option("--list", rs.list, "List file selecting images of the input directory");
    c_restore->add_option("--mode", rs.mode, "averaged or independent")->capture_default_str();
    c_restore->add_option("--stride", rs.stride, "Window stride in averaged mode")->capture_default_str();
    c_restore->add_option("--threads", rs.threads, "Worker threads");

    EvaluateArgs ev;
    auto* c_eval = app.add_subcommand("evaluate", "PSNR of degraded and restored test images");
    c_eval->add_option("--checkpoint", ev.checkpoints, "Checkpoint, or one per scenario")->required();
    c_eval->add_option("--test-dir", ev.test_dir, "Directory of clean test images")->required();
    c_eval->add_option("--list", ev.list, "List file selecting the test images");
    c_eval->add_option("--scenario", ev.scenarios, "Degradation, e.g. 3x3:50 (repeatable)")->required();
    c_eval->add_option("--mode", ev.mode, "averaged, independent or both")
        ->check(CLI::IsMember({"averaged", "independent", "both"}))
        ->capture_default_str();
    c_eval->add_option("--stride", ev.stride, "Window stride in averaged mode")->capture_default_str();
    c_eval->add_option("--seed", ev.seed, "Noise seed")->capture_default_str();
    c_eval->add_option("--threads", ev.threads, "Worker threads");
    c_eval->add_option("--output", ev.output, "Per-image CSV (image,scenario,method,dB)")->required();
    c_eval->add_option("--table", ev.table, "Method x scenario table (default: <output>.table.csv)");

    GradcheckArgs gc;
    auto* c_grad = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
    c_grad->add_option("--seed", gc.seed, "Seed")->capture_default_str();
    c_grad->add_option("--K", gc.depths, "Comma-separated depths, cycled over trials")->capture_default_str();
    c_grad->add_option("--trials", gc.trials, "Number of random networks")->capture_default_str();
    c_grad->add_option("--tolerance", gc.tolerance, "Maximum relative error")->capture_default_str();
    c_grad->add_option("--step", gc.step, "Central difference step")->capture_default_str();
    c_grad->add_option("--fault", gc.fault, "Inject a derivative fault (none, drop-resolvent-tau, flip-prox-sigma)")
        ->capture_default_str();
    c_grad->add_option("--design", gc.design, "Feature design")->capture_default_str();
    c_grad->add_option("--patch-side", gc.patch_side, "Patch side")->capture_default_str();
    c_grad->add_option("--blur", gc.blur, "Uniform blur size")->capture_default_str();
    c_grad->add_option("--entries", gc.entries, "Sampled L entries per layer")->capture_default_str();
    c_grad->add_option("--report", gc.report, "Per-trial CSV");

    SolveArgs sv;
    auto* c_solve = app.add_subcommand("solve-cp", "Classical Chambolle-Pock restoration");
    c_solve->add_option("--input", sv.input, "Clean image (degraded here) or, with --degraded, an observation")
        ->required();
    c_solve->add_flag("--degraded", sv.already_degraded, "Input is already degraded");
    c_solve->add_option("--output", sv.output, "Restored PGM")->required();
    c_solve->add_option("--trace", sv.trace, "Objective trace CSV (default: <output>.trace.csv)");
    c_solve->add_option("--blur", sv.blur, "Uniform blur size")->capture_default_str();
    c_solve->add_option("--alpha", sv.alpha, "Noise standard deviation")->capture_default_str();
    c_solve->add_option("--seed", sv.seed, "Noise and design seed")->capture_default_str();
    c_solve->add_option("--L", sv.analysis, "Analysis operator: zero, tv or design")->capture_default_str();
    c_solve->add_option("--lambda", sv.lambda, "TV weight")->capture_default_str();
    c_solve->add_option("--design", sv.design, "Feature design for --L design")->capture_default_str();
    c_solve->add_option("--L-std", sv.L_std, "Entry spread for --L design")->capture_default_str();
    c_solve->add_option("--tau", sv.tau, "Primal step (default 0.99/||L||)");
    c_solve->add_option("--sigma", sv.sigma, "Dual step (default 0.99/||L||)");
    c_solve->add_option("--theta", sv.theta, "Relaxation in [0, 1]")->capture_default_str();
    c_solve->add_option("--max-iter", sv.max_iter, "Iteration cap")->capture_default_str();
    c_solve->add_option("--tol", sv.tol, "Relative change tolerance")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*c_degrade) return cmd_degrade(dg);
        if (*c_extract) return cmd_extract(ex);
        if (*c_train) return cmd_train(tr);
        if (*c_restore) return cmd_restore(rs);
        if (*c_eval) return cmd_evaluate(ev);
        if (*c_grad) return cmd_gradcheck(gc);
        if (*c_solve) return cmd_solve_cp(sv);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const io::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return 3;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
