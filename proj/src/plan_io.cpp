// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "invardiff/plan_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "json.hpp"

namespace invardiff {
namespace {

using json = nlohmann::ordered_json;

constexpr std::int64_t kMaxSteps = 100000;
constexpr std::int64_t kMaxLayers = 100000;
constexpr std::size_t kMaxFamilies = 64;

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

const json& field(const json& obj, const std::string& key, const std::string& path) {
    if (!obj.is_object()) fail(path, "schema", "expected an object");
    const auto it = obj.find(key);
    if (it == obj.end()) fail(path.empty() ? key : path + "." + key, "schema", "missing field");
    return *it;
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

std::int64_t as_int(const json& j, const std::string& path, std::int64_t lo, std::int64_t hi) {
    if (!j.is_number_integer()) fail(path, "schema", "expected an integer");
    const auto v = j.get<std::int64_t>();
    if (v < lo || v > hi) fail(path, "range", "value " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return v;
}

double as_double(const json& j, const std::string& path) {
    if (!j.is_number()) fail(path, "schema", "expected a number");
    return j.get<double>();
}

std::string as_string(const json& j, const std::string& path) {
    if (!j.is_string()) fail(path, "schema", "expected a string");
    return j.get<std::string>();
}

std::vector<std::string> as_strings(const json& j, const std::string& path) {
    if (!j.is_array()) fail(path, "schema", "expected an array of strings");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(as_string(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

std::uint8_t as_bit(const json& j, const std::string& path) {
    if (!j.is_number_integer()) fail(path, "binary", "expected 0 or 1");
    const auto v = j.get<std::int64_t>();
    if (v != 0 && v != 1) fail(path, "binary", "expected 0 or 1");
    return static_cast<std::uint8_t>(v);
}

json cut_to_json(double c) { return c == kNoCacheCut ? json(nullptr) : json(c); }

double cut_from_json(const json& j, const std::string& path) {
    if (j.is_null()) return kNoCacheCut;
    const double v = as_double(j, path);
    if (!std::isfinite(v)) fail(path, "finite_cut", "cut must be finite or null");
    return v;
}

json parse_json(std::string_view text) {
    json j = json::parse(text.begin(), text.end(), nullptr, false);
    if (j.is_discarded()) fail("$", "json_syntax", "input is not valid JSON");
    return j;
}

json thresholds_json(const ThresholdSet& t) {
    json j = json::object();
    j["tau_step"] = t.step;
    j["tau_warmup"] = t.warmup;
    for (const auto& [f, v] : t.family) j["tau_" + f] = v;
    return j;
}

ThresholdSet thresholds_from_object(const json& j, const std::vector<FamilyId>& families,
                                    const std::vector<std::vector<FamilyId>>& ties, const std::string& path) {
    if (!j.is_object()) fail(path, "schema", "expected an object");
    auto in_range = [&](double v, const std::string& p) {
        if (!(v >= 0.0 && v <= 1.0)) fail(p, "threshold_range", "must be in [0, 1]");
        return v;
    };
    ThresholdSet t;
    t.ties = ties;
    std::set<FamilyId> seen;
    const bool has_mhsa = std::find(families.begin(), families.end(), "mhsa") != families.end();
    for (const auto& [key, value] : j.items()) {
        const std::string p = join(path, key);
        if (key == "tau_step") {
            t.step = in_range(as_double(value, p), p);
        } else if (key == "tau_warmup") {
            t.warmup = in_range(as_double(value, p), p);
        } else if (key.rfind("tau_", 0) == 0) {
            FamilyId name = key.substr(4);
            if (name == "attn" && has_mhsa) name = "mhsa";
            if (std::find(families.begin(), families.end(), name) == families.end()) {
                fail(p, "threshold_families", "no family '" + name + "'");
            }
            const double v = in_range(as_double(value, p), p);
            if (!seen.insert(name).second) {
                if (t.tau(name) != v) fail(p, "threshold_families", "conflicting values for tau_" + name);
                continue;
            }
            t.family.emplace_back(name, v);
        } else {
            fail(p, "schema", "unknown field");
        }
    }
    // Registry order.
    std::vector<std::pair<FamilyId, double>> ordered;
    for (const auto& f : families) {
        if (!seen.count(f)) fail(join(path, "tau_" + f), "threshold_families", "missing");
        ordered.emplace_back(f, t.tau(f));
    }
    t.family = std::move(ordered);
    for (const auto& group : ties) {
        for (const auto& f : group) {
            if (t.has(f) && t.has(group.front()) && t.tau(f) != t.tau(group.front())) {
                fail(join(path, "tau_" + f), "tie_threshold", "tied with " + group.front() + " but tau differs");
            }
        }
    }
    return t;
}

CachePlan plan_from_document(const json& doc) {
    allow_keys(doc, {"format_version", "plan", "cut_values", "thresholds", "provenance"}, "$");
    const auto& ver = field(doc, "format_version", "");
    if (!ver.is_number_integer() || ver.get<std::int64_t>() != kPlanFormatVersion) {
        fail("format_version", "supported_version",
             "unsupported format version " + ver.dump() + "; supported versions: " + std::to_string(kPlanFormatVersion));
    }

    const auto& pj = field(doc, "plan", "");
    allow_keys(pj, {"T", "L", "families", "tie_groups", "phase", "C", "c_step"}, "plan");
    const auto T = as_int(field(pj, "T", "plan"), "plan.T", 3, kMaxSteps);
    const auto L = as_int(field(pj, "L", "plan"), "plan.L", 1, kMaxLayers);
    const auto families = as_strings(field(pj, "families", "plan"), "plan.families");
    if (families.empty() || families.size() > kMaxFamilies) fail("plan.families", "dims", "between 1 and 64 families required");
    if (std::set<FamilyId>(families.begin(), families.end()).size() != families.size()) {
        fail("plan.families", "unique_families", "duplicate family name");
    }
    std::vector<std::vector<FamilyId>> ties;
    if (pj.contains("tie_groups")) {
        const auto& tg = pj["tie_groups"];
        if (!tg.is_array()) fail("plan.tie_groups", "schema", "expected an array");
        for (std::size_t g = 0; g < tg.size(); ++g) {
            ties.push_back(as_strings(tg[g], "plan.tie_groups[" + std::to_string(g) + "]"));
        }
    }
    const PlanPhase phase = [&] {
        const auto s = as_string(field(pj, "phase", "plan"), "plan.phase");
        if (s != "initial" && s != "corrected") fail("plan.phase", "schema", "expected 'initial' or 'corrected'");
        return plan_phase_from_string(s);
    }();

    const auto& cj = field(pj, "C", "plan");
    if (!cj.is_array() || cj.size() != static_cast<std::size_t>(T)) {
        fail("plan.C", "dims", "expected " + std::to_string(T) + " timestep rows");
    }
    const auto& sj = field(pj, "c_step", "plan");
    if (!sj.is_array() || sj.size() != static_cast<std::size_t>(T)) {
        fail("plan.c_step", "dims", "expected " + std::to_string(T) + " entries");
    }
    for (std::size_t t = 0; t < cj.size(); ++t) {
        const std::string p = "plan.C[" + std::to_string(t) + "]";
        if (!cj[t].is_array() || cj[t].size() != static_cast<std::size_t>(L)) {
            fail(p, "dims", "expected " + std::to_string(L) + " layer rows");
        }
        for (std::size_t l = 0; l < cj[t].size(); ++l) {
            if (!cj[t][l].is_array() || cj[t][l].size() != families.size()) {
                fail(p + "[" + std::to_string(l) + "]", "dims", "expected " + std::to_string(families.size()) + " family entries");
            }
        }
    }

    CachePlan plan(static_cast<int>(T), static_cast<int>(L), families);
    plan.phase = phase;
    plan.tie_groups = ties;
    for (int t = 0; t < T; ++t) {
        plan.set_step_skip(t, as_bit(sj[static_cast<std::size_t>(t)], "plan.c_step[" + std::to_string(t) + "]") != 0);
        for (int l = 0; l < L; ++l) {
            for (int f = 0; f < plan.family_count(); ++f) {
                const auto& e = cj[static_cast<std::size_t>(t)][static_cast<std::size_t>(l)][static_cast<std::size_t>(f)];
                plan.set_cache(t, l, f, as_bit(e, "plan.C[" + std::to_string(t) + "][" + std::to_string(l) + "][" + std::to_string(f) + "]") != 0);
            }
        }
    }

    const auto& cuts = field(doc, "cut_values", "");
    allow_keys(cuts, {"families", "step"}, "cut_values");
    const auto& fc = field(cuts, "families", "cut_values");
    if (!fc.is_object()) fail("cut_values.families", "schema", "expected an object");
    for (const auto& [k, v] : fc.items()) {
        if (std::find(families.begin(), families.end(), k) == families.end()) {
            fail("cut_values.families." + k, "schema", "unknown family");
        }
    }
    for (std::size_t f = 0; f < families.size(); ++f) {
        const std::string p = "cut_values.families." + families[f];
        if (!fc.contains(families[f])) fail(p, "dims", "missing cut");
        plan.cuts[f] = cut_from_json(fc[families[f]], p);
    }
    if (fc.size() != families.size()) fail("cut_values.families", "dims", "one cut per family required");
    plan.step_cut = cut_from_json(field(cuts, "step", "cut_values"), "cut_values.step");

    plan.thresholds = thresholds_from_object(field(doc, "thresholds", ""), families, ties, "thresholds");

    const auto& prov = field(doc, "provenance", "");
    allow_keys(prov, {"backbone_id", "schedule_hash", "calibration_inputs", "rate_operator", "pooling", "rate_alignment"}, "provenance");
    plan.provenance.backbone_id = as_string(field(prov, "backbone_id", "provenance"), "provenance.backbone_id");
    plan.provenance.schedule_hash = as_string(field(prov, "schedule_hash", "provenance"), "provenance.schedule_hash");
    plan.provenance.calibration_inputs =
        as_strings(field(prov, "calibration_inputs", "provenance"), "provenance.calibration_inputs");
    if (prov.contains("rate_operator")) plan.provenance.rate_operator = as_string(prov["rate_operator"], "provenance.rate_operator");
    if (prov.contains("pooling")) plan.provenance.pooling = as_string(prov["pooling"], "provenance.pooling");
    if (prov.contains("rate_alignment")) {
        plan.provenance.rate_alignment = as_string(prov["rate_alignment"], "provenance.rate_alignment");
        if (plan.provenance.rate_alignment != "previous" && plan.provenance.rate_alignment != "same") {
            fail("provenance.rate_alignment", "schema", "expected 'previous' or 'same'");
        }
    }

    validate_plan(plan);
    return plan;
}

}  // namespace

std::string plan_to_json(const CachePlan& plan) {
    validate_plan(plan);
    json doc = json::object();
    doc["format_version"] = kPlanFormatVersion;

    json pj = json::object();
    pj["T"] = plan.steps();
    pj["L"] = plan.layers();
    pj["families"] = plan.families();
    pj["tie_groups"] = plan.tie_groups;
    pj["phase"] = to_string(plan.phase);
    json c = json::array();
    for (int t = 0; t < plan.steps(); ++t) {
        json rows = json::array();
        for (int l = 0; l < plan.layers(); ++l) {
            json row = json::array();
            for (int f = 0; f < plan.family_count(); ++f) row.push_back(plan.cache(t, l, f) ? 1 : 0);
            rows.push_back(std::move(row));
        }
        c.push_back(std::move(rows));
    }
    pj["C"] = std::move(c);
    json steps = json::array();
    for (int t = 0; t < plan.steps(); ++t) steps.push_back(plan.step_skip(t) ? 1 : 0);
    pj["c_step"] = std::move(steps);
    doc["plan"] = std::move(pj);

    json cuts = json::object();
    json fc = json::object();
    for (std::size_t f = 0; f < plan.families().size(); ++f) fc[plan.families()[f]] = cut_to_json(plan.cuts[f]);
    cuts["families"] = std::move(fc);
    cuts["step"] = cut_to_json(plan.step_cut);
    doc["cut_values"] = std::move(cuts);

    doc["thresholds"] = thresholds_json(plan.thresholds);

    json prov = json::object();
    prov["backbone_id"] = plan.provenance.backbone_id;
    prov["schedule_hash"] = plan.provenance.schedule_hash;
    prov["calibration_inputs"] = plan.provenance.calibration_inputs;
    prov["rate_operator"] = plan.provenance.rate_operator;
    prov["pooling"] = plan.provenance.pooling;
    prov["rate_alignment"] = plan.provenance.rate_alignment;
    doc["provenance"] = std::move(prov);
    return doc.dump(2) + "\n";
}

CachePlan plan_from_json(std::string_view text) {
    try {
        return plan_from_document(parse_json(text));
    } catch (const PlanViolation&) {
        throw;
    } catch (const std::exception& e) {
        fail("$", "schema", e.what());
    }
}

void save_plan(const CachePlan& plan, const std::filesystem::path& path) { write_text_file(path, plan_to_json(plan)); }

CachePlan load_plan(const std::filesystem::path& path) { return plan_from_json(read_text_file(path)); }

std::string thresholds_to_json(const ThresholdSet& thresholds) { return thresholds_json(thresholds).dump(2) + "\n"; }

ThresholdSet thresholds_from_json(std::string_view text, const FamilyRegistry& registry) {
    try {
        auto t = thresholds_from_object(parse_json(text), registry.families, registry.tie_groups, "thresholds");
        t.validate(registry);
        return t;
    } catch (const PlanViolation&) {
        throw;
    } catch (const std::exception& e) {
        fail("thresholds", "schema", e.what());
    }
}

// ---- Stats CSV -----------------------------------------------------------------

std::vector<std::string> StatsTable::header() const {
    std::vector<std::string> h{"operating_point", "flops", "speedup_vs_baseline", "latency_s"};
    for (const auto& f : families) h.push_back("skip_" + f);
    for (const char* c : {"step_skip_fraction", "final_psnr", "final_mse", "latency_cv"}) h.emplace_back(c);
    return h;
}

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

double parse_double(const std::string& s, int line) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) {
        throw std::runtime_error("stats csv line " + std::to_string(line) + ": bad number '" + s + "'");
    }
    return v;
}

}  // namespace

std::string stats_csv_string(const StatsTable& table) {
    std::string out;
    const auto h = table.header();
    for (std::size_t i = 0; i < h.size(); ++i) out += (i ? "," : "") + h[i];
    out += "\n";
    for (const auto& r : table.rows) {
        if (r.operating_point.find_first_of(",\"\n\r") != std::string::npos) {
            throw std::invalid_argument("stats csv: operating point name '" + r.operating_point +
                                        "' contains a separator");
        }
        if (r.family_skip.size() != table.families.size()) {
            throw std::invalid_argument("stats csv: row '" + r.operating_point + "' has the wrong number of skip columns");
        }
        out += r.operating_point + "," + std::to_string(r.flops) + "," + fmt(r.speedup_vs_baseline) + "," + fmt(r.latency_s);
        for (double s : r.family_skip) out += "," + fmt(s);
        out += "," + fmt(r.step_skip_fraction) + "," + fmt(r.final_psnr) + "," + fmt(r.final_mse) + "," + fmt(r.latency_cv) + "\n";
    }
    return out;
}

StatsTable parse_stats_csv(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("stats csv: empty input");
    const auto head = split_csv(line);
    StatsTable table;
    if (head.size() < 8 || head[0] != "operating_point" || head[1] != "flops" || head[2] != "speedup_vs_baseline" ||
        head[3] != "latency_s") {
        throw std::runtime_error("stats csv: unexpected header");
    }
    std::size_t i = 4;
    for (; i < head.size() && head[i].rfind("skip_", 0) == 0; ++i) table.families.push_back(head[i].substr(5));
    if (table.header() != head) throw std::runtime_error("stats csv: unexpected header");
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != head.size()) {
            throw std::runtime_error("stats csv line " + std::to_string(lineno) + ": expected " + std::to_string(head.size()) + " fields");
        }
        StatsRow r;
        r.operating_point = cells[0];
        r.flops = static_cast<std::uint64_t>(std::stoull(cells[1]));
        r.speedup_vs_baseline = parse_double(cells[2], lineno);
        r.latency_s = parse_double(cells[3], lineno);
        std::size_t c = 4;
        for (std::size_t f = 0; f < table.families.size(); ++f) r.family_skip.push_back(parse_double(cells[c++], lineno));
        r.step_skip_fraction = parse_double(cells[c++], lineno);
        r.final_psnr = parse_double(cells[c++], lineno);
        r.final_mse = parse_double(cells[c++], lineno);
        r.latency_cv = parse_double(cells[c++], lineno);
        table.rows.push_back(std::move(r));
    }
    return table;
}

void save_stats(const StatsTable& table, const std::filesystem::path& path) { write_text_file(path, stats_csv_string(table)); }

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace invardiff
