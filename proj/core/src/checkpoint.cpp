// Binary checkpoint: magic + version, config/schema JSON, episode counter,
// controller state (parameters, Adam moments, baseline, rng), and in dice
// mode the shared supernet weights and child optimizer. Loading stages
// everything in temporaries and commits only after the trailer verifies.

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "voxnas/engine.hpp"
#include "voxnas/errors.hpp"

namespace voxnas {

namespace {

constexpr char kMagic[8] = {'V', 'X', 'N', 'A', 'S', 'C', 'K', '1'};
constexpr char kTail[8] = {'V', 'X', 'N', 'A', 'S', 'E', 'N', 'D'};
constexpr uint32_t kVersion = 1;

void put_bytes(std::ostream& out, const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void put_pod(std::ostream& out, T v) {
    put_bytes(out, &v, sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
    put_pod<uint64_t>(out, s.size());
    put_bytes(out, s.data(), s.size());
}

void get_bytes(std::istream& in, void* p, size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw FormatError("checkpoint truncated");
}

template <typename T>
T get_pod(std::istream& in) {
    T v;
    get_bytes(in, &v, sizeof(T));
    return v;
}

std::string get_string(std::istream& in) {
    const uint64_t n = get_pod<uint64_t>(in);
    if (n > (1ull << 32)) throw FormatError("checkpoint string length is implausible");
    std::string s(n, '\0');
    if (n) get_bytes(in, s.data(), n);
    return s;
}

void put_tensor(std::ostream& out, const Tensor5<float>& t) {
    for (int64_t e : {t.shape.n, t.shape.c, t.shape.d, t.shape.h, t.shape.w})
        put_pod<int64_t>(out, e);
    put_bytes(out, t.ptr(), static_cast<size_t>(t.numel()) * sizeof(float));
}

Tensor5<float> get_tensor(std::istream& in) {
    Shape5 s;
    s.n = get_pod<int64_t>(in);
    s.c = get_pod<int64_t>(in);
    s.d = get_pod<int64_t>(in);
    s.h = get_pod<int64_t>(in);
    s.w = get_pod<int64_t>(in);
    for (int64_t e : {s.n, s.c, s.d, s.h, s.w})
        if (e <= 0 || e > (1 << 24)) throw FormatError("checkpoint tensor extent is implausible");
    Tensor5<float> t(s);
    get_bytes(in, t.ptr(), static_cast<size_t>(t.numel()) * sizeof(float));
    return t;
}

void put_store(std::ostream& out, const ParamStore<float>& store) {
    put_pod<uint64_t>(out, store.tensors.size());
    for (size_t i = 0; i < store.tensors.size(); ++i) {
        put_string(out, store.names[i]);
        put_tensor(out, store.tensors[i]);
    }
}

struct StoreData {
    std::vector<std::string> names;
    std::vector<Tensor5<float>> tensors;
};

StoreData get_store(std::istream& in) {
    const uint64_t n = get_pod<uint64_t>(in);
    if (n > (1ull << 20)) throw FormatError("checkpoint store size is implausible");
    StoreData d;
    for (uint64_t i = 0; i < n; ++i) {
        d.names.push_back(get_string(in));
        d.tensors.push_back(get_tensor(in));
    }
    return d;
}

// Validates names and shapes against the live store before anything commits.
void match_store(const StoreData& got, const ParamStore<float>& want, const char* what) {
    if (got.tensors.size() != want.tensors.size())
        throw ConfigError(std::string(what) + ": checkpoint has " +
                          std::to_string(got.tensors.size()) + " parameters, expected " +
                          std::to_string(want.tensors.size()));
    for (size_t i = 0; i < got.tensors.size(); ++i) {
        if (got.names[i] != want.names[i])
            throw ConfigError(std::string(what) + ": parameter " + std::to_string(i) + " is " +
                              got.names[i] + ", expected " + want.names[i]);
        if (!(got.tensors[i].shape == want.tensors[i].shape))
            throw ConfigError(std::string(what) + ": " + got.names[i] + " has shape " +
                              got.tensors[i].shape.str() + ", expected " +
                              want.tensors[i].shape.str());
    }
}

void put_adam(std::ostream& out, const Adam<float>& adam) {
    put_pod<uint64_t>(out, adam.slots().size());
    for (const AdamSlot<float>& s : adam.slots()) {
        put_pod<int64_t>(out, s.t);
        put_pod<uint64_t>(out, s.m.size());
        put_bytes(out, s.m.data(), s.m.size() * sizeof(float));
        put_bytes(out, s.v.data(), s.v.size() * sizeof(float));
    }
}

std::vector<AdamSlot<float>> get_adam(std::istream& in, const ParamStore<float>& params,
                                      const char* what) {
    const uint64_t n = get_pod<uint64_t>(in);
    if (n != params.tensors.size())
        throw ConfigError(std::string(what) + ": checkpoint has " + std::to_string(n) +
                          " optimizer slots, expected " + std::to_string(params.tensors.size()));
    std::vector<AdamSlot<float>> slots(n);
    for (uint64_t i = 0; i < n; ++i) {
        slots[i].t = get_pod<int64_t>(in);
        if (slots[i].t < 0) throw FormatError("checkpoint optimizer step count is negative");
        const uint64_t len = get_pod<uint64_t>(in);
        const uint64_t want = static_cast<uint64_t>(params.tensors[i].numel());
        if (len != 0 && len != want)
            throw FormatError(std::string(what) + ": optimizer moment length " +
                              std::to_string(len) + " does not match parameter size " +
                              std::to_string(want));
        slots[i].m.resize(len);
        slots[i].v.resize(len);
        if (len) {
            get_bytes(in, slots[i].m.data(), len * sizeof(float));
            get_bytes(in, slots[i].v.data(), len * sizeof(float));
        }
    }
    return slots;
}

}  // namespace

ExperimentConfig checkpoint_peek_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[8];
    get_bytes(in, magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(magic)) != 0)
        throw FormatError(path + " is not a checkpoint file");
    const uint32_t version = get_pod<uint32_t>(in);
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kVersion) + ")");
    return config_from_json_text(get_string(in));
}

void Engine::save_checkpoint(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    put_bytes(out, kMagic, sizeof(kMagic));
    put_pod<uint32_t>(out, kVersion);
    put_string(out, config_to_json_text(cfg_));
    put_string(out, schema_to_json(schema_));
    put_pod<int64_t>(out, next_episode_);

    put_store(out, ctrl_->params());
    put_adam(out, ctrl_->adam());
    put_pod<double>(out, ctrl_->baseline());
    put_pod<uint8_t>(out, ctrl_->baseline_initialized() ? 1 : 0);
    put_string(out, ctrl_rng_.save_state());
    put_string(out, data_rng_.save_state());

    put_pod<uint8_t>(out, net_ ? 1 : 0);
    if (net_) {
        put_store(out, net_->params());
        put_adam(out, child_adam_);
    }
    put_bytes(out, kTail, sizeof(kTail));
    out.flush();
    if (!out) throw IoError("short write to " + path);
}

void Engine::load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);

    char magic[8];
    get_bytes(in, magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(magic)) != 0)
        throw FormatError(path + " is not a checkpoint file");
    const uint32_t version = get_pod<uint32_t>(in);
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kVersion) + ")");

    const ExperimentConfig saved = config_from_json_text(get_string(in));
    if (saved.reward_mode != cfg_.reward_mode)
        throw ConfigError("checkpoint was written in reward mode " + saved.reward_mode +
                          ", engine is in " + cfg_.reward_mode);
    const std::string schema_text = get_string(in);
    if (schema_text != schema_to_json(schema_))
        throw ConfigError("checkpoint schema does not match the engine's schema");
    const int64_t episode = get_pod<int64_t>(in);
    if (episode < 0) throw FormatError("checkpoint episode counter is negative");

    StoreData ctrl_store = get_store(in);
    match_store(ctrl_store, ctrl_->params(), "controller");
    std::vector<AdamSlot<float>> ctrl_slots = get_adam(in, ctrl_->params(), "controller");
    const double baseline = get_pod<double>(in);
    const uint8_t baseline_init = get_pod<uint8_t>(in);
    Rng ctrl_rng, data_rng;
    ctrl_rng.load_state(get_string(in));
    data_rng.load_state(get_string(in));

    const uint8_t has_net = get_pod<uint8_t>(in);
    if ((has_net != 0) != net_.has_value())
        throw ConfigError(std::string("checkpoint ") + (has_net ? "has" : "lacks") +
                          " supernet weights, engine " + (net_ ? "expects" : "does not expect") +
                          " them");
    StoreData net_store;
    std::vector<AdamSlot<float>> child_slots;
    if (has_net) {
        net_store = get_store(in);
        match_store(net_store, net_->params(), "supernet");
        child_slots = get_adam(in, net_->params(), "supernet");
    }

    char tail[8];
    get_bytes(in, tail, sizeof(tail));
    if (std::memcmp(tail, kTail, sizeof(tail)) != 0) throw FormatError("checkpoint trailer mismatch");
    in.peek();
    if (!in.eof()) throw FormatError("checkpoint has trailing bytes");

    // Everything verified; commit.
    ctrl_->params().tensors = std::move(ctrl_store.tensors);
    ctrl_->adam().slots() = std::move(ctrl_slots);
    ctrl_->restore_baseline(baseline, baseline_init != 0);
    ctrl_rng_ = ctrl_rng;
    data_rng_ = data_rng;
    if (has_net) {
        net_->params().tensors = std::move(net_store.tensors);
        child_adam_.slots() = std::move(child_slots);
    }
    next_episode_ = episode;
}

}  // namespace voxnas
