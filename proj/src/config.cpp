// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "invardiff/config.hpp"

#include "invardiff/plan_io.hpp"
#include "json.hpp"

namespace invardiff {
namespace {

using json = nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& path, const std::string& invariant, const std::string& detail) {
    throw PlanViolation(path, invariant, detail);
}

void allow_keys(const json& obj, std::initializer_list<std::string_view> keys, const std::string& path) {
    if (!obj.is_object()) fail(path, "schema", "expected an object");
    for (const auto& [k, v] : obj.items()) {
        bool known = false;
        for (auto key : keys) known = known || key == k;
        if (!known) fail(path + "." + k, "schema", "unknown field");
    }
}

template <typename T>
T get(const json& obj, const char* key, const std::string& path, T fallback) {
    const auto it = obj.find(key);
    if (it == obj.end()) return fallback;
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        fail(path + "." + key, "schema", "wrong type");
    }
}

int get_int(const json& obj, const char* key, const std::string& path, int fallback) {
    const auto it = obj.find(key);
    if (it == obj.end()) return fallback;
    if (!it->is_number_integer()) fail(path + "." + key, "schema", "expected an integer");
    return it->get<int>();
}

ScriptedProfile profile_from_json(const json& j, int layers) {
    allow_keys(j, {"horizon", "amplitude", "ratio", "ratio_mhsa", "ratio_ffn", "sites"}, "backbone.scripted");
    const int horizon = get_int(j, "horizon", "backbone.scripted", 64);
    ScriptedProfile p;
    if (j.contains("sites")) {
        p.horizon = horizon;
        const auto& sites = j["sites"];
        try {
            for (const auto& fam : sites) {
                std::vector<std::vector<RatioSegment>> per_layer;
                for (const auto& segs : fam) {
                    std::vector<RatioSegment> v;
                    for (const auto& s : segs) v.push_back({s.at("from_step").get<int>(), s.at("ratio").get<double>()});
                    per_layer.push_back(std::move(v));
                }
                p.sites.push_back(std::move(per_layer));
            }
        } catch (const json::exception& e) {
            fail("backbone.scripted.sites", "schema", e.what());
        }
    } else if (j.contains("ratio_mhsa") || j.contains("ratio_ffn")) {
        p = ScriptedProfile::per_family(layers, get(j, "ratio_mhsa", "backbone.scripted", 0.5),
                                        get(j, "ratio_ffn", "backbone.scripted", 0.5), horizon);
    } else {
        p = ScriptedProfile::constant(layers, get(j, "ratio", "backbone.scripted", 0.5), horizon);
    }
    p.amplitude = get(j, "amplitude", "backbone.scripted", 1.0);
    try {
        p.validate();
    } catch (const std::invalid_argument& e) {
        fail("backbone.scripted", "profile", e.what());
    }
    return p;
}

json profile_to_json(const ScriptedProfile& p) {
    json j = json::object();
    j["horizon"] = p.horizon;
    j["amplitude"] = p.amplitude;
    json sites = json::array();
    for (const auto& fam : p.sites) {
        json f = json::array();
        for (const auto& segs : fam) {
            json l = json::array();
            for (const auto& s : segs) l.push_back({{"from_step", s.from_step}, {"ratio", s.ratio}});
            f.push_back(std::move(l));
        }
        sites.push_back(std::move(f));
    }
    j["sites"] = std::move(sites);
    return j;
}

FamilyRegistry registry_for(BackboneKind kind) {
    return kind == BackboneKind::ToyDual ? dual_registry() : dit_registry();
}

}  // namespace

int RunConfig::calibration_inputs() const {
    if (inputs > 0) return inputs;
    switch (backbone.kind) {
        case BackboneKind::ToyDiT: return 16;
        case BackboneKind::ToyDual: return 5;
        case BackboneKind::Scripted: return 4;
    }
    return 4;
}

std::vector<SampleInput> RunConfig::calibration_set() const {
    return make_inputs(calibration_inputs(), seed, backbone.cond_classes);
}

CalibrateOptions RunConfig::calibrate_options(bool phase1_only) const {
    CalibrateOptions o;
    o.op = op;
    o.pooling = pooling;
    o.alignment = alignment;
    o.jobs = jobs;
    o.phase1_only = phase1_only;
    return o;
}

RunConfig parse_config(std::string_view text) {
    json doc = json::parse(text.begin(), text.end(), nullptr, false);
    if (doc.is_discarded()) fail("$", "json_syntax", "input is not valid JSON");
    allow_keys(doc, {"backbone", "schedule", "preset", "thresholds", "calibration"}, "$");

    RunConfig cfg;
    if (doc.contains("backbone")) {
        const auto& b = doc["backbone"];
        allow_keys(b, {"kind", "layers", "tokens", "channels", "heads", "cond_classes", "seed", "scripted"}, "backbone");
        try {
            cfg.backbone.kind = backbone_kind_from_string(get<std::string>(b, "kind", "backbone", "toy_dit"));
        } catch (const std::invalid_argument& e) {
            fail("backbone.kind", "schema", e.what());
        }
        cfg.backbone.layers = get_int(b, "layers", "backbone", cfg.backbone.layers);
        cfg.backbone.tokens = get_int(b, "tokens", "backbone", cfg.backbone.tokens);
        cfg.backbone.channels = get_int(b, "channels", "backbone", cfg.backbone.channels);
        cfg.backbone.heads = get_int(b, "heads", "backbone", cfg.backbone.heads);
        cfg.backbone.cond_classes = get_int(b, "cond_classes", "backbone", cfg.backbone.cond_classes);
        cfg.backbone.seed = get<std::uint64_t>(b, "seed", "backbone", cfg.backbone.seed);
        if (b.contains("scripted")) {
            if (cfg.backbone.kind != BackboneKind::Scripted) fail("backbone.scripted", "schema", "only valid for kind 'scripted'");
            cfg.backbone.scripted = profile_from_json(b["scripted"], cfg.backbone.layers);
        }
        try {
            cfg.backbone.validate();
        } catch (const std::invalid_argument& e) {
            fail("backbone", "backbone_config", e.what());
        }
    }
    if (doc.contains("schedule")) {
        const auto& s = doc["schedule"];
        allow_keys(s, {"steps", "sigma_start", "sigma_end"}, "schedule");
        cfg.steps = get_int(s, "steps", "schedule", cfg.steps);
        cfg.sigma_start = get(s, "sigma_start", "schedule", cfg.sigma_start);
        cfg.sigma_end = get(s, "sigma_end", "schedule", cfg.sigma_end);
        try {
            (void)cfg.schedule();
        } catch (const std::invalid_argument& e) {
            fail("schedule", "schedule", e.what());
        }
    }
    const auto registry = registry_for(cfg.backbone.kind);
    if (doc.contains("preset")) {
        const auto name = get<std::string>(doc, "preset", "$", "");
        try {
            if (!(preset_registry(name) == registry)) fail("preset", "threshold_families", "preset '" + name + "' does not match the backbone families");
            cfg.thresholds = threshold_preset(name);
        } catch (const std::invalid_argument& e) {
            fail("preset", "schema", e.what());
        }
    }
    if (doc.contains("thresholds")) {
        json th = doc["thresholds"];
        if (!th.is_object()) fail("thresholds", "schema", "expected an object");
        // Start from the preset, then apply explicit values.
        if (cfg.thresholds) {
            json base = json::parse(thresholds_to_json(*cfg.thresholds));
            for (const auto& [k, v] : th.items()) base[k == "tau_attn" ? "tau_mhsa" : k] = v;
            th = base;
        }
        cfg.thresholds = thresholds_from_json(th.dump(), registry);
    }
    if (doc.contains("calibration")) {
        const auto& c = doc["calibration"];
        allow_keys(c, {"inputs", "seed", "jobs", "pooling", "rate_operator", "rate_alignment"}, "calibration");
        cfg.inputs = get_int(c, "inputs", "calibration", cfg.inputs);
        cfg.seed = get<std::uint64_t>(c, "seed", "calibration", cfg.seed);
        cfg.jobs = get_int(c, "jobs", "calibration", cfg.jobs);
        try {
            cfg.pooling = rate_pooling_from_string(get<std::string>(c, "pooling", "calibration", "average"));
            cfg.op = rate_operator_from_string(get<std::string>(c, "rate_operator", "calibration", "first_difference_ratio"));
            cfg.alignment = rate_alignment_from_string(get<std::string>(c, "rate_alignment", "calibration", "previous"));
        } catch (const std::invalid_argument& e) {
            fail("calibration", "schema", e.what());
        }
        if (cfg.inputs < 0) fail("calibration.inputs", "range", "must be >= 0");
        if (cfg.jobs < 1) fail("calibration.jobs", "range", "must be >= 1");
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) { return parse_config(read_text_file(path)); }

std::string config_to_json(const RunConfig& cfg) {
    json doc = json::object();
    json b = json::object();
    b["kind"] = to_string(cfg.backbone.kind);
    b["layers"] = cfg.backbone.layers;
    b["tokens"] = cfg.backbone.tokens;
    b["channels"] = cfg.backbone.channels;
    b["heads"] = cfg.backbone.heads;
    b["cond_classes"] = cfg.backbone.cond_classes;
    b["seed"] = cfg.backbone.seed;
    if (cfg.backbone.scripted) b["scripted"] = profile_to_json(*cfg.backbone.scripted);
    doc["backbone"] = std::move(b);
    doc["schedule"] = {{"steps", cfg.steps}, {"sigma_start", cfg.sigma_start}, {"sigma_end", cfg.sigma_end}};
    if (cfg.thresholds) doc["thresholds"] = json::parse(thresholds_to_json(*cfg.thresholds));
    doc["calibration"] = {{"inputs", cfg.inputs},
                          {"seed", cfg.seed},
                          {"jobs", cfg.jobs},
                          {"pooling", to_string(cfg.pooling)},
                          {"rate_operator", to_string(cfg.op)},
                          {"rate_alignment", to_string(cfg.alignment)}};
    return doc.dump(2) + "\n";
}

RunConfig sweep_config() {
    RunConfig cfg;
    cfg.backbone.kind = BackboneKind::ToyDiT;
    cfg.backbone.layers = 6;
    cfg.backbone.tokens = 32;
    cfg.backbone.channels = 64;
    cfg.backbone.heads = 4;
    cfg.steps = 28;
    cfg.inputs = 4;
    return cfg;
}

}  // namespace invardiff
