// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <fstream>

#include "doctest.h"
#include "invardiff/plan_io.hpp"
#include "json.hpp"
#include "test_support.hpp"

using namespace invardiff;
using namespace invardiff::testing;
using json = nlohmann::ordered_json;

namespace {

CachePlan calibrated_plan(BackboneKind kind, const std::string& preset, int T = 14) {
    const auto bb = build_backbone(small_config(kind, 2, 6, 16));
    const auto sched = SampleSchedule::linear(T);
    return calibrate(*bb, sched, make_inputs(2, 9, 4), threshold_preset(preset)).final_plan;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

void check_identical(const CachePlan& a, const CachePlan& b) {
    CHECK(a == b);
    CHECK(a.same_decisions(b));
    REQUIRE(a.cuts.size() == b.cuts.size());
    for (std::size_t f = 0; f < a.cuts.size(); ++f) CHECK(same_bits(a.cuts[f], b.cuts[f]));
    CHECK(same_bits(a.step_cut, b.step_cut));
    for (std::size_t f = 0; f < a.thresholds.family.size(); ++f) {
        CHECK(same_bits(a.thresholds.family[f].second, b.thresholds.family[f].second));
    }
}

PlanViolation rejection(const std::string& text) {
    try {
        (void)plan_from_json(text);
    } catch (const PlanViolation& e) {
        return e;
    }
    FAIL("plan was accepted");
    return PlanViolation("", "", "");
}

void expect_rejected(const json& doc, const std::string& invariant, const std::string& field_prefix) {
    const auto e = rejection(doc.dump());
    CHECK(e.invariant == invariant);
    CHECK(e.field.rfind(field_prefix, 0) == 0);
    CHECK(std::string(e.what()).find(invariant) != std::string::npos);
}

/// Hand-built plan document for three families with one tie group.
json tied_document() {
    json doc = json::parse(R"({
      "format_version": 1,
      "plan": {"T": 5, "L": 2, "families": ["img_attn", "txt_attn", "ff"],
               "tie_groups": [["img_attn", "txt_attn"]], "phase": "corrected",
               "C": [[[0,0,0],[0,0,0]], [[0,0,0],[0,0,0]], [[1,1,0],[0,0,1]], [[0,0,0],[1,1,0]], [[0,0,0],[0,0,0]]],
               "c_step": [0,0,0,0,0]},
      "cut_values": {"families": {"img_attn": 0.9, "txt_attn": 0.9, "ff": null}, "step": null},
      "thresholds": {"tau_step": 0.0, "tau_warmup": 0.0, "tau_img_attn": 0.4, "tau_txt_attn": 0.4, "tau_ff": 0.3},
      "provenance": {"backbone_id": "hand", "schedule_hash": "0", "calibration_inputs": []}
    })");
    return doc;
}

}  // namespace

TEST_CASE("plan files round trip bit-exactly") {
    for (const auto& [kind, preset] : {std::pair{BackboneKind::ToyDiT, "dit-fast"}, std::pair{BackboneKind::ToyDual, "flux-slow"},
                                       std::pair{BackboneKind::ToyDiT, "dit-slow"}}) {
        const auto plan = calibrated_plan(kind, preset);
        REQUIRE(plan.cached_count() > 0);
        const auto text = plan_to_json(plan);
        const auto back = plan_from_json(text);
        check_identical(plan, back);
        CHECK(plan_to_json(back) == text);

        const auto dir = scratch_dir("plan_io_rt");
        save_plan(plan, dir / "plan.json");
        check_identical(plan, load_plan(dir / "plan.json"));
    }
}

TEST_CASE("awkward doubles survive the round trip") {
    const auto bb = build_backbone(small_config(BackboneKind::ToyDiT, 2, 6, 16));
    auto plan = zero_plan(*bb, 6);
    plan.cuts = {0.1 + 0.2, 5e-324};
    plan.step_cut = 1.0000000000000002;
    plan.thresholds.set("mhsa", 0.7000000000000001);
    plan.thresholds.step = 1.0 / 3.0;
    const auto back = plan_from_json(plan_to_json(plan));
    check_identical(plan, back);
    CHECK(back.cuts[0] != kNoCacheCut);
}

TEST_CASE("the no-cache sentinel is written as null") {
    const auto bb = build_backbone(small_config(BackboneKind::ToyDiT, 2, 6, 16));
    const auto doc = json::parse(plan_to_json(zero_plan(*bb, 6)));
    CHECK(doc["cut_values"]["step"].is_null());
    CHECK(doc["cut_values"]["families"]["mhsa"].is_null());
    CHECK(doc["format_version"] == kPlanFormatVersion);
    std::vector<std::string> keys;
    for (const auto& [k, v] : doc.items()) keys.push_back(k);
    CHECK(keys == std::vector<std::string>{"format_version", "plan", "cut_values", "thresholds", "provenance"});
}

TEST_CASE("invariant-violating plan files are rejected with the field path") {
    const auto plan = calibrated_plan(BackboneKind::ToyDiT, "dit-fast", 10);
    const json good = json::parse(plan_to_json(plan));
    CHECK_NOTHROW(plan_from_json(good.dump()));

    {
        auto d = good;
        d["plan"]["c_step"][0] = 1;
        expect_rejected(d, "forced_boundary", "plan.c_step[0]");
    }
    {
        auto d = good;
        d["plan"]["c_step"][9] = 1;
        expect_rejected(d, "forced_boundary", "plan.c_step[9]");
    }
    {
        auto d = good;
        d["plan"]["C"][0][1][0] = 1;
        expect_rejected(d, "forced_boundary", "plan.C[0][1]");
    }
    {
        auto d = good;
        d["thresholds"]["tau_warmup"] = 0.3;
        d["plan"]["C"][2][0][1] = 1;
        expect_rejected(d, "warmup_forcing", "plan.C[");
    }
    {
        auto d = good;
        d["plan"]["C"][3][0][0] = 2;
        expect_rejected(d, "binary", "plan.C[3][0][0]");
    }
    {
        auto d = good;
        d["plan"]["c_step"][3] = true;
        expect_rejected(d, "binary", "plan.c_step[3]");
    }
    {
        auto d = good;
        d["plan"]["T"] = 11;
        expect_rejected(d, "dims", "plan.C");
    }
    {
        auto d = good;
        d["plan"]["C"][4].erase(1);
        expect_rejected(d, "dims", "plan.C[4]");
    }
    {
        auto d = good;
        d["plan"]["C"][4][0].erase(0);
        expect_rejected(d, "dims", "plan.C[4][0]");
    }
    {
        auto d = good;
        d["plan"]["c_step"].erase(2);
        expect_rejected(d, "dims", "plan.c_step");
    }
    {
        auto d = good;
        d["plan"]["families"][1] = "mhsa";
        expect_rejected(d, "unique_families", "plan.families");
    }
    {
        auto d = good;
        d["format_version"] = 2;
        const auto e = rejection(d.dump());
        CHECK(e.invariant == "supported_version");
        CHECK(std::string(e.what()).find("supported versions: 1") != std::string::npos);
    }
    {
        auto d = good;
        d["thresholds"]["tau_ffn"] = 1.5;
        expect_rejected(d, "threshold_range", "thresholds.tau_ffn");
    }
    {
        auto d = good;
        d["thresholds"].erase("tau_ffn");
        expect_rejected(d, "threshold_families", "thresholds.tau_ffn");
    }
    {
        auto d = good;
        d["cut_values"]["families"].erase("ffn");
        expect_rejected(d, "dims", "cut_values.families.ffn");
    }
    {
        auto d = good;
        d["cut_values"]["step"] = "inf";
        expect_rejected(d, "schema", "cut_values.step");
    }
    {
        auto d = good;
        d["plan"]["phase"] = "final";
        expect_rejected(d, "schema", "plan.phase");
    }
    {
        auto d = good;
        d["plan"]["extra"] = 1;
        expect_rejected(d, "schema", "plan.extra");
    }
    {
        auto d = good;
        d["provenance"]["rate_alignment"] = "next";
        expect_rejected(d, "schema", "provenance.rate_alignment");
    }
    {
        auto d = good;
        d.erase("provenance");
        expect_rejected(d, "schema", "provenance");
    }
    {
        const auto e = rejection("{\"format_version\": 1,");
        CHECK(e.invariant == "json_syntax");
    }
}

TEST_CASE("hand-built tied plan: equal slices load, unequal slices are rejected") {
    const auto doc = tied_document();
    const auto plan = plan_from_json(doc.dump());
    CHECK(plan.tie_groups == std::vector<std::vector<FamilyId>>{{"img_attn", "txt_attn"}});
    CHECK(plan.cache(2, 0, 0));
    CHECK(plan.cache(2, 0, 1));
    check_identical(plan, plan_from_json(plan_to_json(plan)));

    auto d = doc;
    d["plan"]["C"][3][1][1] = 0;
    expect_rejected(d, "tie_slices", "plan.C[3][1][txt_attn]");

    d = doc;
    d["thresholds"]["tau_txt_attn"] = 0.5;
    expect_rejected(d, "tie_threshold", "thresholds.tau_txt_attn");

    d = doc;
    d["plan"]["tie_groups"][0][1] = "conv";
    expect_rejected(d, "tie_groups", "tie_groups[0]");
}

TEST_CASE("any mutated byte stream yields a valid plan or a structured error") {
    const auto text = plan_to_json(calibrated_plan(BackboneKind::ToyDual, "flux-fast", 10));
    SeededRng rng(2024);
    const std::string alphabet = "0123456789{}[]\",:.-+eE ntrufalsl\n";
    int accepted = 0;
    int rejected = 0;
    for (int i = 0; i < 1500; ++i) {
        std::string m = text;
        const int edits = 1 + static_cast<int>(rng.uniform01() * 4);
        for (int k = 0; k < edits; ++k) {
            const auto pos = static_cast<std::size_t>(rng.uniform01() * static_cast<double>(m.size()));
            const double op = rng.uniform01();
            const char c = alphabet[static_cast<std::size_t>(rng.uniform01() * static_cast<double>(alphabet.size()))];
            if (op < 0.5) {
                m[pos] = c;
            } else if (op < 0.75) {
                m.erase(pos, 1);
            } else {
                m.insert(m.begin() + static_cast<std::ptrdiff_t>(pos), c);
            }
        }
        try {
            const auto p = plan_from_json(m);
            CHECK_NOTHROW(validate_plan(p));
            CHECK(plan_from_json(plan_to_json(p)) == p);
            ++accepted;
        } catch (const PlanViolation& e) {
            CHECK_FALSE(e.invariant.empty());
            ++rejected;
        }
    }
    CHECK(rejected > 0);
    CHECK(accepted + rejected == 1500);
    for (std::size_t n = 0; n < text.size(); n += 37) {
        CHECK_THROWS_AS(plan_from_json(text.substr(0, n)), PlanViolation);
    }
}

TEST_CASE("threshold JSON") {
    const auto reg = dual_registry();
    const auto t = threshold_preset("flux-slow");
    const auto back = thresholds_from_json(thresholds_to_json(t), reg);
    CHECK(back == t);

    const auto dit = thresholds_from_json(R"({"tau_step": 0.63, "tau_warmup": 0.0, "tau_attn": 0.22, "tau_ffn": 0.22})",
                                          dit_registry());
    CHECK(dit == threshold_preset("dit-fast"));
    CHECK_THROWS_AS(thresholds_from_json(R"({"tau_step": 0.6, "tau_warmup": 0.0, "tau_mhsa": 0.2})", dit_registry()),
                    PlanViolation);
    CHECK_THROWS_AS(thresholds_from_json(R"({"tau_step": 0.6, "tau_warmup": 0.0, "tau_mhsa": 0.2, "tau_ffn": 0.2, "tau_x": 0.1})",
                                         dit_registry()),
                    PlanViolation);
    CHECK_THROWS_AS(thresholds_from_json(R"({"tau_step": 0.6, "tau_warmup": 0.0, "tau_attn": 0.2, "tau_mhsa": 0.3, "tau_ffn": 0.2})",
                                         dit_registry()),
                    PlanViolation);
    CHECK_THROWS_AS(thresholds_from_json(R"({"tau_step": 1.6, "tau_warmup": 0.0, "tau_mhsa": 0.2, "tau_ffn": 0.2})",
                                         dit_registry()),
                    PlanViolation);
    CHECK_THROWS_AS(thresholds_from_json("[1, 2]", dit_registry()), PlanViolation);
}

TEST_CASE("stats CSV round trips bit-exactly") {
    StatsTable table;
    table.families = {"mhsa", "ffn"};
    table.rows.push_back({"baseline", 123456789012ULL, 1.0, 0.25, {0.0, 0.0}, 0.0, kPsnrCap, 0.0, 0.01});
    table.rows.push_back({"bundle1/step0.40", 98765, 1.0 / 3.0, 0.1 + 0.2, {0.22, 1e-300}, 0.5, 41.234567890123456,
                          3.3e-7, 0.125});
    const auto text = stats_csv_string(table);
    CHECK(text.rfind("operating_point,flops,speedup_vs_baseline,latency_s,skip_mhsa,skip_ffn,step_skip_fraction,"
                     "final_psnr,final_mse,latency_cv\n",
                     0) == 0);
    const auto back = parse_stats_csv(text);
    CHECK(back == table);
    CHECK(same_bits(back.rows[1].speedup_vs_baseline, 1.0 / 3.0));
    CHECK(same_bits(back.rows[1].latency_s, 0.1 + 0.2));

    const auto dir = scratch_dir("stats_csv");
    save_stats(table, dir / "s.csv");
    CHECK(parse_stats_csv(read_text_file(dir / "s.csv")) == table);

    CHECK_THROWS(parse_stats_csv(""));
    CHECK_THROWS(parse_stats_csv("name,flops\n"));
    CHECK_THROWS(parse_stats_csv(text + "x,1,2\n"));
    CHECK_THROWS(parse_stats_csv(text + "x,1,2,3,4,5,6,7,8,abc\n"));
    auto bad = table;
    bad.rows[0].operating_point = "a,b";
    CHECK_THROWS(stats_csv_string(bad));
    bad = table;
    bad.rows[0].family_skip.pop_back();
    CHECK_THROWS(stats_csv_string(bad));
}

TEST_CASE("file helpers report I/O failures") {
    CHECK_THROWS(read_text_file("/nonexistent/dir/plan.json"));
    CHECK_THROWS(write_text_file("/nonexistent/dir/plan.json", "x"));
    CHECK_THROWS(load_plan("/nonexistent/dir/plan.json"));
}
