#include "decay_bench/checkpoint.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>

#include "decay_bench/errors.hpp"
#include "decay_bench/util.hpp"

#ifndef DECAY_BENCH_DEFAULT_ASSET_DIR
#define DECAY_BENCH_DEFAULT_ASSET_DIR "assets"
#endif

namespace decay_bench {

namespace {

bool has_prefix(const std::string& name, const std::vector<std::string>& prefixes) {
    for (const auto& p : prefixes) {
        if (name.starts_with(p)) return true;
    }
    return false;
}

}  // namespace

nlohmann::json ModelCheckpoint::metadata() const {
    nlohmann::json freeze = nlohmann::json::object();
    for (const auto& [name, frozen] : freeze_map) freeze[name] = frozen;
    nlohmann::json meta = {{"format", "decay_bench.checkpoint.v1"},
                           {"architecture", architecture},
                           {"config", config},
                           {"freeze_map", freeze},
                           {"train_manifest_hash", train_manifest_hash},
                           {"epochs_trained", epochs_trained},
                           {"provenance", provenance}};
    meta["best_val_loss"] = std::isfinite(best_val_loss) ? nlohmann::json(best_val_loss) : nlohmann::json(nullptr);
    return meta;
}

std::string ModelCheckpoint::content_hash() const {
    std::string bytes = metadata().dump();
    for (const auto& [name, tensor] : state) {
        auto t = tensor.contiguous().cpu();
        bytes += name;
        bytes += t.toString();
        bytes.append(static_cast<const char*>(t.data_ptr()), t.numel() * t.element_size());
    }
    return sha256_hex(bytes);
}

void ModelCheckpoint::save(const std::filesystem::path& path) const {
    torch::serialize::OutputArchive archive;
    archive.write("metadata", c10::IValue(metadata().dump()));
    for (const auto& [name, tensor] : state) archive.write("state/" + name, tensor, /*is_buffer=*/true);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = unique_temp_sibling(path);
    archive.save_to(tmp.string());
    std::filesystem::rename(tmp, path);
}

ModelCheckpoint ModelCheckpoint::load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IncompatibleCheckpoint("checkpoint not found: " + path.string());
    torch::serialize::InputArchive archive;
    try {
        archive.load_from(path.string());
    } catch (const c10::Error& e) {
        throw IncompatibleCheckpoint("not a checkpoint archive: " + path.string());
    }
    c10::IValue meta_value;
    if (!archive.try_read("metadata", meta_value) || !meta_value.isString()) {
        throw IncompatibleCheckpoint("checkpoint lacks metadata: " + path.string());
    }
    const auto meta = nlohmann::json::parse(meta_value.toStringRef());
    if (meta.value("format", "") != "decay_bench.checkpoint.v1") {
        throw IncompatibleCheckpoint("unknown checkpoint format in " + path.string());
    }
    ModelCheckpoint ckpt;
    ckpt.architecture = meta.at("architecture").get<std::string>();
    ckpt.config = meta.at("config");
    for (const auto& [name, frozen] : meta.at("freeze_map").items()) ckpt.freeze_map[name] = frozen.get<bool>();
    ckpt.train_manifest_hash = meta.value("train_manifest_hash", "");
    ckpt.epochs_trained = meta.value("epochs_trained", 0);
    ckpt.best_val_loss = meta.at("best_val_loss").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                            : meta.at("best_val_loss").get<double>();
    ckpt.provenance = meta.value("provenance", nlohmann::json::object());
    for (const auto& key : archive.keys()) {
        if (!key.starts_with("state/")) continue;
        torch::Tensor t;
        archive.read(key, t, /*is_buffer=*/true);
        ckpt.state[key.substr(6)] = t;
    }
    return ckpt;
}

std::map<std::string, torch::Tensor> snapshot_state(const torch::nn::Module& module) {
    std::map<std::string, torch::Tensor> state;
    for (const auto& p : module.named_parameters()) state[p.key()] = p.value().detach().clone();
    for (const auto& b : module.named_buffers()) state[b.key()] = b.value().detach().clone();
    return state;
}

void restore_state(torch::nn::Module& module, const std::map<std::string, torch::Tensor>& state,
                   const std::vector<std::string>& skip_prefixes, bool allow_missing) {
    torch::NoGradGuard guard;
    auto assign = [&](const std::string& name, torch::Tensor& target) {
        if (has_prefix(name, skip_prefixes)) return;
        const auto it = state.find(name);
        if (it == state.end()) {
            if (allow_missing) return;
            throw IncompatibleCheckpoint("checkpoint lacks tensor '" + name + "'");
        }
        if (it->second.sizes() != target.sizes()) {
            throw IncompatibleCheckpoint("shape mismatch for '" + name + "'");
        }
        target.copy_(it->second);
    };
    for (auto& p : module.named_parameters()) assign(p.key(), p.value());
    for (auto& b : module.named_buffers()) assign(b.key(), b.value());
}

std::map<std::string, torch::Tensor> load_pickled_state_dict(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw AssetMissing("weights not found: " + file.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    c10::IValue loaded;
    try {
        loaded = torch::pickle_load(bytes);
    } catch (const c10::Error& e) {
        throw AssetMissing("cannot read weights " + file.string() + ": " + e.what_without_backtrace());
    }
    if (!loaded.isGenericDict()) throw AssetMissing(file.string() + " is not a tensor dictionary");
    std::map<std::string, torch::Tensor> out;
    for (const auto& item : loaded.toGenericDict()) {
        if (item.key().isString() && item.value().isTensor()) out[item.key().toStringRef()] = item.value().toTensor();
    }
    return out;
}

std::filesystem::path asset_root() {
    if (const char* env = std::getenv("DECAY_BENCH_ASSETS"); env && *env) return env;
    return DECAY_BENCH_DEFAULT_ASSET_DIR;
}

}  // namespace decay_bench
