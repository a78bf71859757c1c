// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "invardiff/rates.hpp"
#include "test_support.hpp"

using namespace invardiff;
using namespace invardiff::testing;

namespace {

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

void check_close(double got, double want, double rel = 1e-12) {
    CHECK(std::fabs(got - want) <= rel * std::max(1.0, std::fabs(want)));
}

}  // namespace

TEST_CASE("rho_layer conventions") {
    CHECK(rho_layer(2.0, 1.0) == doctest::Approx(2.0));
    CHECK(rho_layer(0.0, 0.0) == 0.0);
    CHECK(rho_layer(0.0, 3.0) == 0.0);
    CHECK(rho_layer(1.0, 0.0) == doctest::Approx(1e12));
    CHECK(rho_layer(1.0, 0.0, 1e-6) == doctest::Approx(1e6));
}

TEST_CASE("RateMatrix bookkeeping") {
    RateMatrix m("mhsa", 4, 2);
    CHECK(m.defined_count() == 0);
    m.set(1, 0, 0.5);
    m.set(2, 1, 1.5);
    m.set(1, 1, 2.5);
    CHECK(m.defined_count() == 3);
    CHECK(m.defined_values() == std::vector<double>{0.5, 2.5, 1.5});
    m.set_undefined(1, 1);
    CHECK_FALSE(m.defined(1, 1));
    CHECK_THROWS(m.value(4, 0));
    CHECK_THROWS(m.set(0, 2, 1.0));
    StepRateVector s(5);
    s.set(2, 0.25);
    const auto sm = s.as_matrix();
    CHECK(sm.layers() == 1);
    CHECK(sm.defined(2, 0));
    CHECK_FALSE(sm.defined(0, 0));
}

TEST_CASE("operator and pooling names round trip") {
    for (auto op : {RateOperator::FirstDifferenceRatio, RateOperator::MseToPrevious, RateOperator::CosineDistance,
                    RateOperator::RawNormRatio}) {
        CHECK(rate_operator_from_string(to_string(op)) == op);
    }
    CHECK_THROWS(rate_operator_from_string("l2"));
    CHECK(rate_pooling_from_string("concatenate") == RatePooling::ConcatenateEntries);
    CHECK_THROWS(rate_pooling_from_string("median"));
    for (auto mode : {HeatmapMode::Log2Rho, HeatmapMode::Mse, HeatmapMode::Cos}) {
        CHECK(heatmap_mode_from_string(to_string(mode)) == mode);
    }
}

TEST_CASE("scripted rates equal the closed-form rates") {
    const int T = 20;
    for (const auto& profile : {ScriptedProfile::constant(3, 0.5, 32), ScriptedProfile::piecewise(3, 9, 0.9, 0.35, 32),
                                ScriptedProfile::per_family(3, 0.4, 1.3, 32), ScriptedProfile::constant(3, 0.1),
                                ScriptedProfile::per_family(3, 0.05, 2.0), ScriptedProfile::piecewise(3, 5, 3.0, 0.1)}) {
        const ScriptedBackbone bb(scripted_config(profile), profile);
        const auto sched = SampleSchedule::linear(T);
        const auto rates = collect_input_rates(bb, sched, {3, 1});
        const auto truth = bb.analytic_rates(T);
        for (std::size_t f = 0; f < 2; ++f) {
            const auto& m = rates.families[f];
            for (int l = 0; l < 3; ++l) {
                CHECK_FALSE(m.defined(0, l));
                CHECK_FALSE(m.defined(T - 1, l));
                for (int t = 1; t <= T - 2; ++t) {
                    REQUIRE(m.defined(t, l));
                    CHECK(std::fabs(m.value(t, l) - truth[f].value(t, l)) < 1e-9);
                    CHECK(std::fabs(m.value(t, l) - truth[f].value(t, l)) <= 1e-12 * truth[f].value(t, l));
                }
            }
        }
    }
}

TEST_CASE("with increments far above eps the rates are the profile ratios") {
    const int T = 20;
    auto profile = ScriptedProfile::piecewise(2, 9, 0.9, 0.6, 32);
    profile.amplitude = 1e3;
    const ScriptedBackbone bb(scripted_config(profile), profile);
    const auto rates = collect_input_rates(bb, SampleSchedule::linear(T), {3, 1});
    const auto truth = scripted_rates(profile, T);
    for (std::size_t f = 0; f < 2; ++f) {
        for (int l = 0; l < 2; ++l) {
            for (int t = 1; t <= T - 2; ++t) {
                CHECK(std::fabs(rates.families[f].value(t, l) - truth[f].value(t, l)) < 1e-9);
            }
        }
    }
}

TEST_CASE("scripted constant profile gives the same step rate") {
    const auto profile = ScriptedProfile::constant(2, 0.6, 32);
    const ScriptedBackbone bb(scripted_config(profile), profile);
    const auto rates = collect_input_rates(bb, SampleSchedule::linear(12), {1, 0});
    CHECK_FALSE(rates.step.defined(0));
    CHECK_FALSE(rates.step.defined(11));
    for (int t = 1; t <= 10; ++t) CHECK(std::fabs(rates.step.value(t) - 0.6) < 1e-9);
}

TEST_CASE("online tracking matches brute force over stored trajectories") {
    for (auto kind : {BackboneKind::ToyDiT, BackboneKind::ToyDual}) {
        const auto bb = build_backbone(small_config(kind));
        const auto sched = SampleSchedule::linear(9);
        const SampleInput in{21, 2};
        const auto trace = record_full(*bb, sched, in);
        const auto rates = collect_input_rates(*bb, sched, in);
        const int F = static_cast<int>(bb->registry().size());
        const std::vector<bool> none(9, false);
        for (int f = 0; f < F; ++f) {
            for (int l = 0; l < bb->layers(); ++l) {
                const auto seq = shadow_sequence(trace, l, f, none);
                for (int t = 1; t <= 7; ++t) check_close(rates.families[f].value(t, l), brute_rho(seq, t));
                for (int t = 1; t < 9; ++t) {
                    double m = 0.0;
                    std::size_t n = 0;
                    for (std::size_t h = 0; h < seq[t].size(); ++h) {
                        m += mse(seq[t][h], seq[t - 1][h]) * static_cast<double>(seq[t][h].size());
                        n += seq[t][h].size();
                    }
                    check_close(rates.mse_maps[f].value(t, l), m / static_cast<double>(n));
                }
                CHECK(rates.mse_maps[f].value(0, l) == 0.0);
                CHECK(rates.cos_maps[f].value(0, l) == 0.0);
            }
        }
        const auto net = net_shadow(trace, none);
        for (int t = 1; t <= 7; ++t) check_close(rates.step.value(t), brute_rho(net, t));
    }
}

TEST_CASE("alternative operators keep the index convention") {
    const auto bb = build_backbone(small_config(BackboneKind::ToyDiT));
    const auto sched = SampleSchedule::linear(7);
    const SampleInput in{4, 0};
    const auto trace = record_full(*bb, sched, in);
    for (auto op : {RateOperator::MseToPrevious, RateOperator::CosineDistance, RateOperator::RawNormRatio}) {
        RateOptions o;
        o.op = op;
        const auto rates = collect_input_rates(*bb, sched, in, o);
        const auto& m = rates.families[1];
        for (int l = 0; l < bb->layers(); ++l) {
            CHECK_FALSE(m.defined(0, l));
            CHECK_FALSE(m.defined(6, l));
            for (int t = 1; t <= 5; ++t) {
                const auto& a = trace.sites[t + 1][l][1][0];
                const auto& b = trace.sites[t][l][1][0];
                double want = 0.0;
                switch (op) {
                    case RateOperator::MseToPrevious: want = mse(a, b); break;
                    case RateOperator::CosineDistance: want = 1.0 - cosine_sim(a, b); break;
                    default: {
                        double na = 0.0, nb = 0.0;
                        for (double v : a.data()) na += std::fabs(v);
                        for (double v : b.data()) nb += std::fabs(v);
                        want = na / (nb + 1e-12);
                    }
                }
                check_close(m.value(t, l), want);
            }
        }
    }
}

TEST_CASE("shadow policies match brute-force shadow sequences") {
    const auto bb = build_backbone(small_config(BackboneKind::ToyDual, 2));
    const int T = 10;
    const auto sched = SampleSchedule::linear(T);
    const SampleInput in{8, 1};
    const auto trace = record_full(*bb, sched, in);
    const int F = 5;
    SeededRng rng(77);
    std::vector<ShadowPolicy> policies;
    for (int k = 0; k < 4; ++k) {
        auto p = ShadowPolicy::none(T, 2, F);
        for (auto& b : p.site_reuse) b = rng.uniform01() < 0.4;
        for (auto& b : p.step_reuse) b = rng.uniform01() < 0.4;
        policies.push_back(p);
    }
    const auto got = collect_shadow_rates(*bb, sched, in, policies);
    REQUIRE(got.size() == policies.size());
    for (std::size_t k = 0; k < policies.size(); ++k) {
        const auto& p = policies[k];
        for (int f = 0; f < F; ++f) {
            for (int l = 0; l < 2; ++l) {
                std::vector<bool> reuse(T);
                for (int t = 0; t < T; ++t) reuse[t] = p.site(t, l, f);
                const auto seq = shadow_sequence(trace, l, f, reuse);
                for (int t = 1; t <= T - 2; ++t) check_close(got[k].families[f].value(t, l), brute_rho(seq, t));
            }
        }
        std::vector<bool> sreuse(T);
        for (int t = 0; t < T; ++t) sreuse[t] = p.step(t);
        const auto net = net_shadow(trace, sreuse);
        for (int t = 1; t <= T - 2; ++t) check_close(got[k].step.value(t), brute_rho(net, t));
    }
    // Maps come from policy 0 only.
    CHECK(got[0].mse_maps.size() == 5);
    CHECK(got[1].mse_maps.empty());
}

TEST_CASE("two consecutive step skips measured against the last computed output, T=5") {
    const auto bb = build_backbone(small_config(BackboneKind::ToyDiT, 2));
    const auto sched = SampleSchedule::linear(5);
    const SampleInput in{2, 3};
    const auto trace = record_full(*bb, sched, in);
    auto p = ShadowPolicy::none(5, 2, 2);
    p.step_reuse[2] = 1;
    p.step_reuse[3] = 1;
    const auto r = collect_shadow_rates(*bb, sched, in, {p}).front();
    // shadow: z0, z1, z1, z1, z4
    CHECK(r.step.value(1) == 0.0);
    CHECK(r.step.value(2) == 0.0);
    const double gap = l1_diff_norm(trace.net[4], trace.net[1]);
    check_close(r.step.value(3), gap / 1e-12);
    CHECK(r.step.value(3) > 1e6);
}

TEST_CASE("a cached run on the scripted backbone chains its gap") {
    const double r = 0.5;
    const auto profile = ScriptedProfile::constant(1, r, 16);
    const ScriptedBackbone bb(scripted_config(profile), profile);
    const int T = 10;
    const auto sched = SampleSchedule::linear(T);
    auto p = ShadowPolicy::none(T, 1, 2);
    for (int t = 3; t <= 5; ++t) p.site_reuse[static_cast<std::size_t>(t * 2)] = 1;  // mhsa at 3..5
    const auto got = collect_shadow_rates(bb, sched, {1, 0}, {p}).front().families[0];
    // Differences D_k = |A(k+1) - A(k)| = a r^k. Shadow holds A(2) through step 5.
    auto D = [&](int k) { return std::pow(r, k); };
    check_close(got.value(1, 0), D(1) / D(0), 1e-9);
    CHECK(got.value(2, 0) == 0.0);  // 0 / D(1)
    CHECK(got.value(3, 0) == 0.0);  // 0 / 0
    CHECK(got.value(4, 0) == 0.0);
    // |A(6) - A(2)| spans D(2) + .. + D(5) over a zero gap.
    const double u1 = l1_diff_norm(bb.site_output(0, 0, 1), bb.site_output(0, 0, 0)) / D(0);
    check_close(got.value(5, 0), u1 * (D(2) + D(3) + D(4) + D(5)) / 1e-12, 1e-9);
    check_close(got.value(6, 0), D(6) / (D(2) + D(3) + D(4) + D(5)), 1e-9);
    check_close(got.value(7, 0), r, 1e-9);
}

TEST_CASE("collect_rates averages per entry and ignores job count") {
    const auto bb = build_backbone(small_config(BackboneKind::ToyDiT));
    const auto sched = SampleSchedule::linear(8);
    const auto inputs = make_inputs(5, 10, 4);
    RateOptions one;
    RateOptions many;
    many.jobs = 3;
    const auto a = collect_rates(*bb, sched, inputs, one);
    const auto b = collect_rates(*bb, sched, inputs, many);
    CHECK(a.families == b.families);
    CHECK(a.step == b.step);
    CHECK(a.inputs() == 5);
    for (int t = 1; t <= 6; ++t) {
        double s = 0.0;
        for (const auto& in : a.per_input) s += in.families[0].value(t, 1);
        CHECK(same_bits(a.families[0].value(t, 1), s / 5.0));
    }
    CHECK_THROWS(collect_rates(*bb, sched, {}, one));
    RateOptions zero;
    zero.jobs = 0;
    CHECK_THROWS(collect_rates(*bb, sched, inputs, zero));
}

TEST_CASE("mean_matrix needs every input defined") {
    RateMatrix a("f", 3, 1), b("f", 3, 1);
    a.set(0, 0, 1.0);
    a.set(1, 0, 2.0);
    b.set(1, 0, 4.0);
    const auto m = mean_matrix({&a, &b});
    CHECK_FALSE(m.defined(0, 0));
    CHECK(m.value(1, 0) == 3.0);
    RateMatrix c("g", 3, 1);
    CHECK_THROWS(mean_matrix({&a, &c}));
}

TEST_CASE("compare_rate_matrices over jointly defined entries") {
    RateMatrix a("f", 3, 2), b("f", 3, 2);
    a.set(1, 0, 1.0);
    b.set(1, 0, 3.0);
    a.set(1, 1, 2.0);
    b.set(1, 1, 2.0);
    a.set(2, 0, 9.0);  // b undefined here
    CHECK(compare_rate_matrices(a, b) == 2.0);
    RateMatrix e("f", 3, 2);
    CHECK_THROWS(compare_rate_matrices(a, e));
    CHECK_THROWS_AS(compare_rate_matrices(a, RateMatrix("f", 4, 2)), ShapeError);
}

TEST_CASE("cross-input stability is small relative to the rates") {
    const auto bb = build_backbone(small_config(BackboneKind::ToyDiT));
    const auto sched = SampleSchedule::linear(10);
    const auto table = cross_input_stability(*bb, sched, make_inputs(4, 1, 4), make_inputs(2, 50, 4));
    REQUIRE(table.size() == 2);
    for (const auto& row : table) {
        REQUIRE(row.size() == 2);
        for (double v : row) {
            CHECK(std::isfinite(v));
            CHECK(v >= 0.0);
        }
    }
}

TEST_CASE("rate CSV round trips bit-exactly") {
    SeededRng rng(5);
    RateMatrix m("ffn", 7, 3);
    for (int t = 1; t < 6; ++t) {
        for (int l = 0; l < 3; ++l) m.set(t, l, std::exp(rng.uniform(-30.0, 30.0)) * (rng.uniform01() - 0.1));
    }
    m.set(3, 1, std::numeric_limits<double>::denorm_min());
    m.set(4, 2, 0.1 + 0.2);
    const auto text = rate_csv_string(m);
    const auto back = parse_rate_csv(text, "ffn");
    REQUIRE(back.same_layout(m));
    for (int t = 0; t < 7; ++t) {
        for (int l = 0; l < 3; ++l) {
            CHECK(back.defined(t, l) == m.defined(t, l));
            if (m.defined(t, l)) CHECK(same_bits(back.value(t, l), m.value(t, l)));
        }
    }
    const auto dir = scratch_dir("rates_csv");
    write_rate_csv(m, dir / "m.csv");
    CHECK(read_rate_csv(dir / "m.csv", "ffn") == m);
    CHECK(rate_csv_string(back) == text);
}

TEST_CASE("malformed rate CSV is rejected") {
    CHECK_THROWS_AS(parse_rate_csv("", "f"), RateFormatError);
    CHECK_THROWS_AS(parse_rate_csv("a,b,c\n0,0,1\n", "f"), RateFormatError);
    CHECK_THROWS_AS(parse_rate_csv("t,l,value\n", "f"), RateFormatError);
    CHECK_THROWS_AS(parse_rate_csv("t,l,value\n0,0,1\n0,0,2\n", "f"), RateFormatError);
    CHECK_THROWS_AS(parse_rate_csv("t,l,value\n0,0,1\n1,1,2\n", "f"), RateFormatError);
    CHECK_THROWS_AS(parse_rate_csv("t,l,value\n0,0,abc\n", "f"), RateFormatError);
    CHECK_THROWS_AS(parse_rate_csv("t,l,value\n0,0,1,2\n", "f"), RateFormatError);
    CHECK_THROWS_AS(parse_rate_csv("t,l,value\n-1,0,1\n", "f"), RateFormatError);
    CHECK_THROWS_AS(parse_rate_csv("t,l,value\n0,0,1.5x\n", "f"), RateFormatError);
    CHECK_NOTHROW(parse_rate_csv("t,l,value\r\n0,0,1\r\n1,0,\r\n", "f"));
}

TEST_CASE("heatmap layout and boundary conventions") {
    RateMatrix m("mhsa", 5, 2);
    m.set(1, 0, 0.25);
    m.set(2, 0, 1.0);
    m.set(3, 0, 4.0);
    m.set(1, 1, 2.0);
    m.set(2, 1, 2.0);
    m.set(3, 1, 0.5);
    const auto v = heatmap_display_values(m, HeatmapMode::Log2Rho);
    REQUIRE(v.size() == 10);
    // row-major by layer, x = timestep
    CHECK(v[0] == 0.0);        // undefined t=0 painted as log2(1)
    CHECK(v[4] == 0.0);        // undefined t=T-1
    CHECK(v[1] == -2.0);
    CHECK(v[3] == 2.0);
    CHECK(v[5 + 3] == -1.0);
    const auto img = render_heatmap(m, HeatmapMode::Log2Rho);
    CHECK(img.width == 5);
    CHECK(img.height == 2);
    CHECK(img.at(1, 0) == 0);
    CHECK(img.at(3, 0) == 255);
    CHECK(img.at(0, 0) == 128);  // log2(1) sits mid-range here
}

TEST_CASE("mse and cos maps zero the first column and floor the log") {
    RateMatrix mse_map("ffn", 3, 1);
    mse_map.set(0, 0, 123.0);
    mse_map.set(1, 0, 0.0);
    mse_map.set(2, 0, 0.5);
    const auto v = heatmap_display_values(mse_map, HeatmapMode::Mse);
    CHECK(v[0] == 0.0);
    CHECK(v[1] == -60.0);
    CHECK(v[2] == -1.0);
    RateMatrix cos_map("ffn", 3, 1);
    cos_map.set(0, 0, 0.0);
    cos_map.set(1, 0, 0.75);
    cos_map.set(2, 0, 1.0);
    const auto c = heatmap_display_values(cos_map, HeatmapMode::Cos);
    CHECK(c[0] == 0.0);
    CHECK(c[1] == -2.0);
    CHECK(c[2] == -60.0);
}

TEST_CASE("constant heatmap renders mid gray") {
    RateMatrix m("mhsa", 4, 3);
    for (int t = 1; t < 3; ++t) {
        for (int l = 0; l < 3; ++l) m.set(t, l, 1.0);
    }
    const auto img = render_heatmap(m, HeatmapMode::Log2Rho);
    for (auto p : img.pixels) CHECK(p == 128);
}

TEST_CASE("PGM write/read and export") {
    const auto bb = build_backbone(small_config(BackboneKind::ToyDiT));
    const auto rates = collect_input_rates(*bb, SampleSchedule::linear(8), {1, 1});
    const auto dir = scratch_dir("pgm");
    export_heatmap(rates.families[0], HeatmapMode::Log2Rho, dir / "mhsa");
    REQUIRE(std::filesystem::exists(dir / "mhsa.csv"));
    REQUIRE(std::filesystem::exists(dir / "mhsa.pgm"));
    const auto img = read_pgm(dir / "mhsa.pgm");
    const auto want = render_heatmap(rates.families[0], HeatmapMode::Log2Rho);
    CHECK(img.width == 8);
    CHECK(img.height == bb->layers());
    CHECK(img.pixels == want.pixels);
    CHECK(read_rate_csv(dir / "mhsa.csv", "mhsa") == rates.families[0]);

    std::ofstream(dir / "bad.pgm", std::ios::binary) << "P2\n2 2\n255\n";
    CHECK_THROWS(read_pgm(dir / "bad.pgm"));
    std::ofstream(dir / "short.pgm", std::ios::binary) << "P5\n4 4\n255\nab";
    CHECK_THROWS(read_pgm(dir / "short.pgm"));
    GrayImage broken{2, 2, {1, 2, 3}};
    CHECK_THROWS(write_pgm(broken, dir / "x.pgm"));
}
