#pragma once

// File formats: training config (JSON), model checkpoint (JSON), patch sets (binary).
//
// Checkpoint, "pdnet-checkpoint" version 1, keys in this order:
//   format, version, K, feature_design, patch_side, grid [rows, cols],
//   kernel {rows, cols, data (row-major)},
//   layers [{tau, sigma, L {rows, cols, data (row-major)}, mask (string of '0'/'1', row-major, or null)}],
//   training (optional) {step, seed, config, loss_history, moments [{m_tau, v_tau, m_sigma, v_sigma, m_L, v_L}]}
//
// Patch set, little-endian:
//   char[8] "PDNPATCH", u32 version (1), u32 patch_side, u64 count,
//   u32 kernel_rows, u32 kernel_cols, f64 kernel[rows*cols], f64 alpha,
//   u32 source_length, char source[source_length],
//   f64 clean[count][side*side], f64 degraded[count][side*side]

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>

#include "json.hpp"
#include "pdnet/dataset.hpp"
#include "pdnet/network.hpp"
#include "pdnet/trainer.hpp"

namespace pdnet::io {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

inline constexpr int kCheckpointVersion = 1;
inline constexpr std::uint32_t kPatchSetVersion = 1;

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Training config

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& prefix) {
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw ConfigError("unknown config key '" + prefix + key + "'");
}

template <class T>
void read_key(const nlohmann::json& j, const std::string& key, T& out, const std::string& prefix = "") {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config key '" + prefix + key + "': " + e.what());
    }
}

}  // namespace detail

inline TrainConfig parse_train_config(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("training config must be a JSON object");
    detail::reject_unknown(j,
                           {"K", "batch_size", "max_steps", "optimizer", "learning_rates", "adam", "init", "seed",
                            "enforce_mask", "positivity_floor", "checkpoint_interval", "threads", "feature_design",
                            "patch_side"},
                           "");
    TrainConfig c;
    detail::read_key(j, "K", c.K);
    detail::read_key(j, "batch_size", c.batch_size);
    detail::read_key(j, "max_steps", c.max_steps);
    if (j.contains("optimizer")) {
        std::string opt;
        detail::read_key(j, "optimizer", opt);
        if (opt == "adam")
            c.optimizer = OptimizerKind::Adam;
        else if (opt == "sgd")
            c.optimizer = OptimizerKind::Sgd;
        else
            throw ConfigError("config key 'optimizer': expected \"adam\" or \"sgd\", got \"" + opt + "\"");
    }
    if (j.contains("learning_rates")) {
        const auto& lr = j.at("learning_rates");
        if (lr.is_number()) {
            detail::read_key(j, "learning_rates", c.learning_rates.base);
        } else {
            detail::reject_unknown(lr, {"base", "tau", "sigma", "L"}, "learning_rates.");
            detail::read_key(lr, "base", c.learning_rates.base, "learning_rates.");
            detail::read_key(lr, "tau", c.learning_rates.tau, "learning_rates.");
            detail::read_key(lr, "sigma", c.learning_rates.sigma, "learning_rates.");
            detail::read_key(lr, "L", c.learning_rates.L, "learning_rates.");
        }
    }
    if (j.contains("adam")) {
        const auto& a = j.at("adam");
        detail::reject_unknown(a, {"beta1", "beta2", "epsilon"}, "adam.");
        detail::read_key(a, "beta1", c.adam.beta1, "adam.");
        detail::read_key(a, "beta2", c.adam.beta2, "adam.");
        detail::read_key(a, "epsilon", c.adam.epsilon, "adam.");
    }
    if (j.contains("init")) {
        const auto& i = j.at("init");
        detail::reject_unknown(i, {"L_std", "c"}, "init.");
        detail::read_key(i, "L_std", c.init.L_std, "init.");
        detail::read_key(i, "c", c.init.c, "init.");
    }
    detail::read_key(j, "seed", c.seed);
    detail::read_key(j, "enforce_mask", c.enforce_mask);
    detail::read_key(j, "positivity_floor", c.positivity_floor);
    detail::read_key(j, "checkpoint_interval", c.checkpoint_interval);
    detail::read_key(j, "threads", c.threads);
    detail::read_key(j, "feature_design", c.feature_design);
    detail::read_key(j, "patch_side", c.patch_side);
    try {
        c.validate();
        FeatureDesign::parse(c.feature_design, c.patch_side);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    return c;
}

inline ordered_json to_json(const TrainConfig& c) {
    return ordered_json{{"K", c.K},
                        {"batch_size", c.batch_size},
                        {"max_steps", c.max_steps},
                        {"optimizer", c.optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
                        {"learning_rates",
                         {{"base", c.learning_rates.base},
                          {"tau", c.learning_rates.tau},
                          {"sigma", c.learning_rates.sigma},
                          {"L", c.learning_rates.L}}},
                        {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
                        {"init", {{"L_std", c.init.L_std}, {"c", c.init.c}}},
                        {"seed", c.seed},
                        {"enforce_mask", c.enforce_mask},
                        {"positivity_floor", c.positivity_floor},
                        {"checkpoint_interval", c.checkpoint_interval},
                        {"threads", c.threads},
                        {"feature_design", c.feature_design},
                        {"patch_side", c.patch_side}};
}

inline TrainConfig load_train_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_train_config(j);
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace detail {

inline ordered_json matrix_json(const Matrix& m) {
    std::vector<double> data(m.data(), m.data() + m.size());
    return ordered_json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Matrix matrix_from_json(const nlohmann::ordered_json& j, const std::string& what) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw IoError("checkpoint: " + what + " has " + std::to_string(data.size()) + " values, expected " +
                      std::to_string(rows * cols));
    return Eigen::Map<const Matrix>(data.data(), rows, cols);
}

inline ordered_json mask_json(const Mask& m) {
    if (m.size() == 0) return nullptr;
    std::string bits(static_cast<std::size_t>(m.size()), '0');
    for (Eigen::Index i = 0; i < m.size(); ++i)
        if (m.data()[i]) bits[static_cast<std::size_t>(i)] = '1';
    return bits;
}

inline Mask mask_from_json(const nlohmann::ordered_json& j, Eigen::Index rows, Eigen::Index cols) {
    if (j.is_null()) return Mask();
    const auto bits = j.get<std::string>();
    if (static_cast<Eigen::Index>(bits.size()) != rows * cols) throw IoError("checkpoint: mask size mismatch");
    Mask m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = bits[static_cast<std::size_t>(i)] == '1';
    return m;
}

}  // namespace detail

struct Checkpoint {
    NetworkParams net;
    /// Present when the checkpoint can resume training.
    std::optional<TrainState> state;
    std::optional<TrainConfig> config;
};

inline ordered_json checkpoint_json(const NetworkParams& net, const TrainState* state = nullptr,
                                    const TrainConfig* config = nullptr) {
    ordered_json j;
    j["format"] = "pdnet-checkpoint";
    j["version"] = kCheckpointVersion;
    j["K"] = net.depth();
    j["feature_design"] = net.design.to_string();
    j["patch_side"] = net.design.patch_side;
    j["grid"] = {net.op.shape().rows, net.op.shape().cols};
    j["kernel"] = detail::matrix_json(net.op.kernel());
    auto layers = ordered_json::array();
    for (const auto& l : net.layers)
        layers.push_back(ordered_json{{"tau", l.tau},
                                      {"sigma", l.sigma},
                                      {"L", detail::matrix_json(l.L)},
                                      {"mask", detail::mask_json(l.support)}});
    j["layers"] = std::move(layers);
    if (state) {
        ordered_json t;
        t["step"] = state->step;
        t["seed"] = state->seed;
        if (config) t["config"] = to_json(*config);
        t["loss_history"] = state->loss_history;
        auto moments = ordered_json::array();
        for (const auto& m : state->moments)
            moments.push_back(ordered_json{{"m_tau", m.m_tau},
                                           {"v_tau", m.v_tau},
                                           {"m_sigma", m.m_sigma},
                                           {"v_sigma", m.v_sigma},
                                           {"m_L", detail::matrix_json(m.m_L)},
                                           {"v_L", detail::matrix_json(m.v_L)}});
        t["moments"] = std::move(moments);
        j["training"] = std::move(t);
    }
    return j;
}

inline void write_checkpoint(const fs::path& path, const NetworkParams& net, const TrainState* state = nullptr,
                             const TrainConfig* config = nullptr) {
    const auto tmp = fs::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp);
        if (!out) throw IoError("cannot write checkpoint " + path.string());
        out << checkpoint_json(net, state, config).dump();
        if (!out) throw IoError("failed writing checkpoint " + path.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

inline Checkpoint parse_checkpoint(const ordered_json& j) {
    try {
        if (j.at("format").get<std::string>() != "pdnet-checkpoint") throw IoError("not a pdnet checkpoint");
        const int version = j.at("version").get<int>();
        if (version != kCheckpointVersion)
            throw IoError("unsupported checkpoint version " + std::to_string(version));
        Checkpoint ck;
        const auto side = j.at("patch_side").get<std::size_t>();
        ck.net.design = FeatureDesign::parse(j.at("feature_design").get<std::string>(), side);
        const auto grid = j.at("grid").get<std::vector<std::size_t>>();
        if (grid.size() != 2) throw IoError("checkpoint: grid must have two entries");
        ck.net.op = CirculantOp(detail::matrix_from_json(j.at("kernel"), "kernel"), {grid[0], grid[1]});
        for (const auto& lj : j.at("layers")) {
            LayerParams l;
            l.tau = lj.at("tau").get<double>();
            l.sigma = lj.at("sigma").get<double>();
            l.L = detail::matrix_from_json(lj.at("L"), "L");
            l.support = detail::mask_from_json(lj.at("mask"), l.L.rows(), l.L.cols());
            ck.net.layers.push_back(std::move(l));
        }
        if (ck.net.depth() != j.at("K").get<std::size_t>()) throw IoError("checkpoint: K does not match layer count");
        ck.net.validate();
        if (j.contains("training")) {
            const auto& t = j.at("training");
            TrainState s;
            s.net = ck.net;
            s.step = t.at("step").get<std::size_t>();
            s.seed = t.at("seed").get<std::uint64_t>();
            s.loss_history = t.at("loss_history").get<std::vector<double>>();
            for (const auto& mj : t.at("moments")) {
                LayerMoments m;
                m.m_tau = mj.at("m_tau").get<double>();
                m.v_tau = mj.at("v_tau").get<double>();
                m.m_sigma = mj.at("m_sigma").get<double>();
                m.v_sigma = mj.at("v_sigma").get<double>();
                m.m_L = detail::matrix_from_json(mj.at("m_L"), "m_L");
                m.v_L = detail::matrix_from_json(mj.at("v_L"), "v_L");
                s.moments.push_back(std::move(m));
            }
            if (s.moments.size() != ck.net.depth()) throw IoError("checkpoint: optimizer state does not match K");
            ck.state = std::move(s);
            if (t.contains("config")) ck.config = parse_train_config(nlohmann::json::parse(t.at("config").dump()));
        }
        return ck;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed checkpoint: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw IoError(std::string("invalid checkpoint: ") + e.what());
    }
}

inline Checkpoint read_checkpoint(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_checkpoint(j);
}

// ---------------------------------------------------------------------------
// Patch sets

namespace detail {

template <class T>
void put(std::ostream& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const fs::path& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("truncated patch set " + path.string());
    return v;
}

}  // namespace detail

inline void write_patch_set(const fs::path& path, const PatchPairSet& set) {
    set.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write patch set " + path.string());
    out.write("PDNPATCH", 8);
    detail::put<std::uint32_t>(out, kPatchSetVersion);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(set.patch_side));
    detail::put<std::uint64_t>(out, set.size());
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(set.kernel.rows()));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(set.kernel.cols()));
    out.write(reinterpret_cast<const char*>(set.kernel.data()), static_cast<std::streamsize>(set.kernel.size() * 8));
    detail::put<double>(out, set.alpha);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(set.source.size()));
    out.write(set.source.data(), static_cast<std::streamsize>(set.source.size()));
    for (const auto* group : {&set.clean, &set.degraded})
        for (const auto& v : *group) out.write(reinterpret_cast<const char*>(v.data()), v.size() * 8);
    if (!out) throw IoError("failed writing patch set " + path.string());
}

inline PatchPairSet read_patch_set(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open patch set " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "PDNPATCH", 8) != 0) throw IoError(path.string() + " is not a patch set");
    const auto version = detail::get<std::uint32_t>(in, path);
    if (version != kPatchSetVersion) throw IoError("unsupported patch set version " + std::to_string(version));
    PatchPairSet set;
    set.patch_side = detail::get<std::uint32_t>(in, path);
    const auto count = detail::get<std::uint64_t>(in, path);
    const auto kr = detail::get<std::uint32_t>(in, path);
    const auto kc = detail::get<std::uint32_t>(in, path);
    set.kernel = Matrix(kr, kc);
    in.read(reinterpret_cast<char*>(set.kernel.data()), static_cast<std::streamsize>(set.kernel.size() * 8));
    set.alpha = detail::get<double>(in, path);
    const auto len = detail::get<std::uint32_t>(in, path);
    set.source.resize(len);
    in.read(set.source.data(), len);
    const auto n = static_cast<Eigen::Index>(set.patch_side * set.patch_side);
    for (auto* group : {&set.clean, &set.degraded}) {
        group->assign(count, Vector(n));
        for (auto& v : *group) in.read(reinterpret_cast<char*>(v.data()), n * 8);
    }
    if (!in) throw IoError("truncated patch set " + path.string());
    return set;
}

}  // namespace pdnet::io
