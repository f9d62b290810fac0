#include "duv/checkpoint.hpp"

#include <fstream>

#include "duv/errors.hpp"
#include "json.hpp"

namespace duv {

namespace {

using nlohmann::json;

json arch_to_json(const DenoiserArch& a) {
    json j;
    j["mode"] = a.mode == DenoiserMode::kImage ? "image" : "vector";
    j["input_shape"] = a.input_shape;
    j["base_channels"] = a.base_channels;
    j["blocks_per_level"] = a.blocks_per_level;
    j["levels"] = a.levels;
    j["embed_dim"] = a.embed_dim;
    j["class_count"] = a.class_count;
    return j;
}

DenoiserArch arch_from_json(const json& j) {
    DenoiserArch a;
    std::string mode = j.at("mode").get<std::string>();
    if (mode == "image") {
        a.mode = DenoiserMode::kImage;
    } else if (mode == "vector") {
        a.mode = DenoiserMode::kVector;
    } else {
        throw FormatError("checkpoint: unknown mode '" + mode + "'");
    }
    a.input_shape = j.at("input_shape").get<std::vector<int>>();
    a.base_channels = j.at("base_channels").get<int>();
    a.blocks_per_level = j.at("blocks_per_level").get<int>();
    a.levels = j.at("levels").get<int>();
    a.embed_dim = j.at("embed_dim").get<int>();
    a.class_count = j.at("class_count").get<int>();
    return a;
}

}  // namespace

void save_checkpoint(const DenoiserModel& model, const std::string& path) {
    json j;
    j["format"] = "duv-checkpoint-v1";
    j["arch"] = arch_to_json(model.arch());
    j["trained_steps"] = model.trained_steps();
    json params = json::object();
    for (const auto& [name, t] : model.params()) {
        json p;
        p["shape"] = t.shape;
        p["data"] = t.data;
        params[name] = std::move(p);
    }
    j["params"] = std::move(params);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write checkpoint: " + path);
    out << j.dump() << '\n';
}

DenoiserModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot read checkpoint: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("checkpoint parse error in " + path + ": " + e.what());
    }
    if (j.value("format", "") != "duv-checkpoint-v1") {
        throw FormatError("checkpoint " + path + " has unknown format tag");
    }
    DenoiserModel model(arch_from_json(j.at("arch")), 0);
    model.set_trained_steps(j.value("trained_steps", 0L));
    const json& params = j.at("params");
    for (auto& [name, t] : model.params()) {
        if (!params.contains(name)) throw FormatError("checkpoint missing parameter: " + name);
        const json& p = params.at(name);
        std::vector<int> shape = p.at("shape").get<std::vector<int>>();
        std::vector<double> data = p.at("data").get<std::vector<double>>();
        if (shape != t.shape || data.size() != t.data.size()) {
            throw FormatError("checkpoint parameter " + name + " has wrong shape");
        }
        t.data = std::move(data);
        t.zero_grad();
    }
    return model;
}

}  // namespace duv
