// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0
//
// invardiff: calibrate cache plans, inspect them, run and benchmark them.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "invardiff/bench.hpp"
#include "invardiff/config.hpp"
#include "invardiff/plan_io.hpp"
#include "invardiff/planner.hpp"
#include "invardiff/rates.hpp"
#include "invardiff/scheduler.hpp"

namespace fs = std::filesystem;
using namespace invardiff;

namespace {

struct CommonFlags {
    std::string config;
    std::string preset;
    std::string backbone;
    std::optional<int> steps;
    std::optional<int> layers;
    std::optional<int> tokens;
    std::optional<int> channels;
    std::optional<std::uint64_t> seed;
    std::optional<int> inputs;
    std::optional<int> jobs;
    std::string pooling;
    std::string rate_operator;
    std::string rate_alignment;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "Run configuration JSON")->check(CLI::ExistingFile);
    cmd->add_option("--preset", f.preset, "Threshold preset: dit-fast, dit-slow, flux-fast, flux-slow");
    cmd->add_option("--backbone", f.backbone, "Backbone kind: toy_dit, toy_dual, scripted");
    cmd->add_option("--steps", f.steps, "Sampling steps T")->check(CLI::Range(3, 100000));
    cmd->add_option("--layers", f.layers, "Backbone layers L")->check(CLI::Range(1, 4096));
    cmd->add_option("--tokens", f.tokens, "Tokens per latent")->check(CLI::Range(1, 65536));
    cmd->add_option("--channels", f.channels, "Channels per token")->check(CLI::Range(1, 65536));
    cmd->add_option("--seed", f.seed, "Base seed for latents");
    cmd->add_option("--inputs", f.inputs, "Calibration inputs K")->check(CLI::Range(1, 100000));
    cmd->add_option("--jobs", f.jobs, "Concurrent calibration inputs")->check(CLI::Range(1, 1024));
    cmd->add_option("--pooling", f.pooling, "Rate pooling: average or concatenate");
    cmd->add_option("--rate-operator", f.rate_operator,
                    "first_difference_ratio, mse_to_previous, cosine_distance or raw_norm_ratio");
    cmd->add_option("--rate-alignment", f.rate_alignment,
                    "Rate governing step t: previous (rho_{t-1}) or same (rho_t)");
}

RunConfig resolve(const CommonFlags& f) {
    RunConfig cfg = f.config.empty() ? RunConfig{} : load_config(f.config);
    if (!f.preset.empty() && f.config.empty()) {
        cfg.backbone.kind = preset_registry(f.preset) == dual_registry() ? BackboneKind::ToyDual : BackboneKind::ToyDiT;
    }
    if (!f.backbone.empty()) cfg.backbone.kind = backbone_kind_from_string(f.backbone);
    if (f.steps) cfg.steps = *f.steps;
    if (f.layers) cfg.backbone.layers = *f.layers;
    if (f.tokens) cfg.backbone.tokens = *f.tokens;
    if (f.channels) cfg.backbone.channels = *f.channels;
    if (f.seed) cfg.seed = *f.seed;
    if (f.inputs) cfg.inputs = *f.inputs;
    if (f.jobs) cfg.jobs = *f.jobs;
    if (!f.pooling.empty()) cfg.pooling = rate_pooling_from_string(f.pooling);
    if (!f.rate_operator.empty()) cfg.op = rate_operator_from_string(f.rate_operator);
    if (!f.rate_alignment.empty()) cfg.alignment = rate_alignment_from_string(f.rate_alignment);
    if (cfg.backbone.kind == BackboneKind::Scripted && cfg.backbone.scripted &&
        cfg.backbone.scripted->layers() != cfg.backbone.layers) {
        throw std::invalid_argument("--layers disagrees with the scripted profile in the config");
    }
    if (!f.preset.empty()) cfg.thresholds = threshold_preset(f.preset);
    cfg.backbone.validate();
    return cfg;
}

ThresholdSet thresholds_of(const RunConfig& cfg, const Backbone& bb) {
    if (!cfg.thresholds) throw std::invalid_argument("no thresholds: pass --preset or a config with \"thresholds\"");
    cfg.thresholds->validate(bb.registry());
    return *cfg.thresholds;
}

void print_plan_summary(const CachePlan& plan, std::ostream& out) {
    char buf[160];
    out << "phase " << to_string(plan.phase) << "\n";
    out << "T " << plan.steps() << ", L " << plan.layers() << "\n";
    out << "thresholds: tau_step " << plan.thresholds.step << ", tau_warmup " << plan.thresholds.warmup << "\n";
    for (int f = 0; f < plan.family_count(); ++f) {
        const auto& name = plan.families()[static_cast<std::size_t>(f)];
        std::snprintf(buf, sizeof buf, "  %-16s tau %.4g  cut %-12.6g cached %zu / %d (%.1f%%)\n", name.c_str(),
                      plan.thresholds.tau(name), plan.cuts[static_cast<std::size_t>(f)], plan.cached_count(f),
                      plan.steps() * plan.layers(), 100.0 * plan.cached_fraction(f));
        out << buf;
    }
    std::snprintf(buf, sizeof buf, "  %-16s tau %.4g  cut %-12.6g skipped %zu / %d\n", "step", plan.thresholds.step,
                  plan.step_cut, plan.step_skip_count(), plan.steps());
    out << buf;
    out << "skipped steps:";
    for (int t : plan.skipped_steps()) out << " " << t;
    out << "\n";
    out << "warm-up steps: " << warmup_steps(plan.thresholds.warmup, plan.steps()) << "\n";
    for (const auto& g : plan.tie_groups) {
        out << "tie group:";
        for (const auto& f : g) out << " " << f;
        out << "\n";
    }
    out << "backbone " << plan.provenance.backbone_id << "\n";
    out << "schedule " << plan.provenance.schedule_hash << "\n";
    out << "rate operator " << plan.provenance.rate_operator << ", pooling " << plan.provenance.pooling
        << ", rate alignment " << plan.provenance.rate_alignment << "\n";
    out << "calibration inputs (" << plan.provenance.calibration_inputs.size() << "):";
    for (const auto& s : plan.provenance.calibration_inputs) out << " " << s;
    out << "\n";
}

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void print_table(const StatsTable& t) { std::cout << stats_csv_string(t); }

std::vector<SampleInput> evaluation_inputs(const RunConfig& cfg, int count) {
    return make_inputs(count, cfg.seed + 1000003ULL, cfg.backbone.cond_classes);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quantile-threshold feature caching for toy diffusion transformers"};
    app.require_subcommand(1);

    // calibrate
    CommonFlags cal_flags;
    std::string cal_out = "plan.json";
    std::string cal_initial_out;
    bool phase1_only = false;
    auto* cal = app.add_subcommand("calibrate", "Collect rates and emit a cache plan");
    add_common(cal, cal_flags);
    cal->add_option("--out", cal_out, "Output plan file");
    cal->add_option("--initial-out", cal_initial_out, "Also write the uncorrected plan here");
    cal->add_flag("--phase1-only", phase1_only, "Skip the resampling correction");

    // plan-inspect
    std::string inspect_path;
    auto* inspect = app.add_subcommand("plan-inspect", "Summarize a plan file");
    inspect->add_option("plan", inspect_path, "Plan file")->required()->check(CLI::ExistingFile);

    // run
    CommonFlags run_flags;
    std::string run_plan;
    std::string run_out;
    bool run_baseline_flag = false;
    bool run_allow_initial = false;
    int run_cond = -1;
    auto* run = app.add_subcommand("run", "Sample one trajectory with a plan or with full compute");
    add_common(run, run_flags);
    run->add_option("--plan", run_plan, "Plan file")->check(CLI::ExistingFile);
    run->add_flag("--baseline", run_baseline_flag, "Full compute, no plan");
    run->add_flag("--allow-initial", run_allow_initial, "Execute an uncorrected plan");
    run->add_option("--cond", run_cond, "Class index (default: seed modulo classes)");
    run->add_option("--out", run_out, "Write run statistics CSV here");

    // bench
    CommonFlags bench_flags;
    int bench_repeats = 5;
    int bench_eval = 2;
    std::string bench_out;
    bool bench_phase1 = false;
    auto* bench = app.add_subcommand("bench", "Baseline versus scheduled latency, FLOPs and fidelity");
    add_common(bench, bench_flags);
    bench->add_option("--repeats", bench_repeats, "Timing repetitions")->check(CLI::Range(1, 1000));
    bench->add_option("--eval-inputs", bench_eval, "Held-out evaluation inputs")->check(CLI::Range(1, 1000));
    bench->add_option("--out", bench_out, "Stats CSV");
    bench->add_flag("--phase1-only", bench_phase1, "Skip the resampling correction");

    // sweep
    CommonFlags sweep_flags;
    int sweep_repeats = 3;
    int sweep_eval = 1;
    std::string sweep_out;
    bool sweep_phase1 = false;
    auto* sweep = app.add_subcommand("sweep", "Seven bundles crossed with five tau_step values");
    add_common(sweep, sweep_flags);
    sweep->add_option("--repeats", sweep_repeats, "Timing repetitions")->check(CLI::Range(1, 1000));
    sweep->add_option("--eval-inputs", sweep_eval, "Held-out evaluation inputs")->check(CLI::Range(1, 1000));
    sweep->add_option("--out", sweep_out, "Sweep CSV");
    sweep->add_flag("--phase1-only", sweep_phase1, "Skip the resampling correction");

    // heatmap
    CommonFlags heat_flags;
    std::string heat_out = "heatmaps";
    std::string heat_mode = "rho";
    std::string heat_csv;
    std::string heat_family = "rates";
    auto* heat = app.add_subcommand("heatmap", "Export rate or similarity heatmaps as CSV and PGM");
    add_common(heat, heat_flags);
    heat->add_option("--mode", heat_mode, "rho, mse or cos");
    heat->add_option("--out", heat_out, "Output directory");
    heat->add_option("--from-csv", heat_csv, "Render an existing rate CSV instead of calibrating")
        ->check(CLI::ExistingFile);
    heat->add_option("--family", heat_family, "Family label for --from-csv");

    // rates
    CommonFlags rates_flags;
    std::string rates_out = "rates";
    int rates_probes = 0;
    auto* rates_cmd = app.add_subcommand("rates", "Write averaged rate matrices; optionally compare held-out inputs");
    add_common(rates_cmd, rates_flags);
    rates_cmd->add_option("--out", rates_out, "Output directory");
    rates_cmd->add_option("--probes", rates_probes, "Held-out inputs compared against the calibration mean")
        ->check(CLI::Range(0, 10000));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*cal) {
            const auto cfg = resolve(cal_flags);
            const auto bb = build_backbone(cfg.backbone);
            const auto schedule = cfg.schedule();
            const auto inputs = cfg.calibration_set();
            auto result = calibrate(*bb, schedule, inputs, thresholds_of(cfg, *bb), cfg.calibrate_options(phase1_only));
            save_plan(result.final_plan, cal_out);
            if (!cal_initial_out.empty()) save_plan(result.initial, cal_initial_out);
            print_plan_summary(result.final_plan, std::cout);
            if (!phase1_only) {
                const auto changed = [&] {
                    std::size_t n = 0;
                    for (std::size_t i = 0; i < result.initial.site_bits().size(); ++i) {
                        n += result.initial.site_bits()[i] != result.final_plan.site_bits()[i];
                    }
                    for (std::size_t i = 0; i < result.initial.step_bits().size(); ++i) {
                        n += result.initial.step_bits()[i] != result.final_plan.step_bits()[i];
                    }
                    return n;
                }();
                std::cout << "correction changed " << changed << " entries\n";
            }
            std::cout << "wrote " << cal_out << "\n";
        } else if (*inspect) {
            print_plan_summary(load_plan(inspect_path), std::cout);
        } else if (*run) {
            if (run_baseline_flag == !run_plan.empty()) throw std::invalid_argument("pass exactly one of --plan or --baseline");
            const auto cfg = resolve(run_flags);
            const auto bb = build_backbone(cfg.backbone);
            const auto schedule = cfg.schedule();
            const SampleInput input{cfg.seed, run_cond >= 0 ? run_cond : static_cast<int>(cfg.seed % static_cast<std::uint64_t>(cfg.backbone.cond_classes))};
            const auto x0 = input.latent(*bb);
            Trajectory traj = [&] {
                if (run_baseline_flag) return run_baseline(*bb, schedule, x0, input.cond);
                const auto plan = load_plan(run_plan);
                if (!plan.provenance.backbone_id.empty() && plan.provenance.backbone_id != bb->id()) {
                    std::cerr << "warning: plan was calibrated on " << plan.provenance.backbone_id << ", running on "
                              << bb->id() << "\n";
                }
                ExecuteOptions eo;
                eo.allow_initial = run_allow_initial;
                return execute_plan(*bb, schedule, plan, x0, input.cond, eo).trajectory;
            }();
            const auto& s = traj.stats;
            std::cout << "input " << input.describe() << "\n";
            std::cout << "checksum " << hex(checksum(traj.x_final)) << "\n";
            std::cout << "flops " << s.flops << " (baseline " << bb->flop_table().full_forward(bb->layers()) * static_cast<std::uint64_t>(schedule.steps()) << ")\n";
            std::cout << "forward calls " << s.forward_calls << ", step skips " << s.step_skips << ", mask events "
                      << s.mask_events << ", degraded reuses " << s.degraded_reuses << "\n";
            for (std::size_t f = 0; f < s.families.size(); ++f) {
                std::cout << "  " << s.families[f] << ": computed " << s.per_family[f].computed << ", reused "
                          << s.per_family[f].reused << ", under skipped steps " << s.per_family[f].under_skipped_steps << "\n";
            }
            std::cout << "wall " << s.wall_seconds << " s\n";
            if (!run_out.empty()) {
                StatsTable t;
                t.families = s.families;
                StatsRow r;
                r.operating_point = run_baseline_flag ? "baseline" : fs::path(run_plan).stem().string();
                r.flops = s.flops;
                r.latency_s = s.wall_seconds;
                for (std::size_t f = 0; f < s.families.size(); ++f) r.family_skip.push_back(s.family_skip_fraction(f));
                r.step_skip_fraction = s.step_skip_fraction();
                if (!run_baseline_flag) {
                    const auto ref = run_baseline(*bb, schedule, x0, input.cond);
                    const auto rep = compare_runs(ref, traj, reference_peak(ref));
                    r.final_psnr = rep.final_psnr;
                    r.final_mse = rep.final_mse;
                    r.speedup_vs_baseline = s.wall_seconds > 0 ? ref.stats.wall_seconds / s.wall_seconds : 0.0;
                }
                t.rows.push_back(r);
                save_stats(t, run_out);
            }
        } else if (*bench) {
            const auto cfg = resolve(bench_flags);
            const auto bb = build_backbone(cfg.backbone);
            BenchOptions opts;
            opts.repeats = bench_repeats;
            opts.calibrate = cfg.calibrate_options(bench_phase1);
            const auto result = run_benchmark(*bb, cfg.schedule(), cfg.calibration_set(), evaluation_inputs(cfg, bench_eval),
                                              thresholds_of(cfg, *bb), opts);
            const auto table = result.table();
            print_table(table);
            if (!bench_out.empty()) save_stats(table, bench_out);
        } else if (*sweep) {
            auto cfg = sweep_flags.config.empty() ? sweep_config() : RunConfig{};
            if (sweep_flags.config.empty()) {
                CommonFlags f = sweep_flags;
                RunConfig base = sweep_config();
                // Flags override the sweep defaults.
                if (!f.backbone.empty()) base.backbone.kind = backbone_kind_from_string(f.backbone);
                if (f.steps) base.steps = *f.steps;
                if (f.layers) base.backbone.layers = *f.layers;
                if (f.tokens) base.backbone.tokens = *f.tokens;
                if (f.channels) base.backbone.channels = *f.channels;
                if (f.seed) base.seed = *f.seed;
                if (f.inputs) base.inputs = *f.inputs;
                if (f.jobs) base.jobs = *f.jobs;
                if (!f.pooling.empty()) base.pooling = rate_pooling_from_string(f.pooling);
                if (!f.rate_operator.empty()) base.op = rate_operator_from_string(f.rate_operator);
                if (!f.rate_alignment.empty()) base.alignment = rate_alignment_from_string(f.rate_alignment);
                cfg = base;
            } else {
                cfg = resolve(sweep_flags);
            }
            const auto bb = build_backbone(cfg.backbone);
            BenchOptions opts;
            opts.repeats = sweep_repeats;
            opts.calibrate = cfg.calibrate_options(sweep_phase1);
            const auto result = run_sweep(*bb, cfg.schedule(), cfg.calibration_set(), evaluation_inputs(cfg, sweep_eval),
                                          sweep_grid(bb->registry()), opts);
            const auto table = result.table();
            print_table(table);
            if (!sweep_out.empty()) save_stats(table, sweep_out);
            const auto trend = check_sweep_trend(result);
            std::cerr << "flops non-increasing in tau_step: " << (trend.flops_monotone ? "yes" : "no") << "\n";
            for (const auto& v : trend.flop_violations) std::cerr << "  " << v << "\n";
            std::cerr << "worst speedup/FLOP gap: " << trend.worst_speedup_gap << " at " << trend.worst_point << "\n";
        } else if (*heat) {
            const auto mode = heatmap_mode_from_string(heat_mode);
            fs::create_directories(heat_out);
            if (!heat_csv.empty()) {
                const auto m = read_rate_csv(heat_csv, heat_family);
                export_heatmap(m, mode, fs::path(heat_out) / (heat_family + "_" + to_string(mode)));
                std::cout << "wrote " << (fs::path(heat_out) / (heat_family + "_" + to_string(mode))).string() << ".{csv,pgm}\n";
            } else {
                const auto cfg = resolve(heat_flags);
                const auto bb = build_backbone(cfg.backbone);
                RateOptions ro;
                ro.op = cfg.op;
                ro.jobs = cfg.jobs;
                const auto rates = collect_rates(*bb, cfg.schedule(), cfg.calibration_set(), ro);
                const auto& set = mode == HeatmapMode::Log2Rho ? rates.families
                                  : mode == HeatmapMode::Mse   ? rates.mse_maps
                                                               : rates.cos_maps;
                for (const auto& m : set) {
                    const auto stem = fs::path(heat_out) / (m.family() + "_" + to_string(mode));
                    export_heatmap(m, mode, stem);
                    std::cout << "wrote " << stem.string() << ".{csv,pgm}\n";
                }
                if (mode == HeatmapMode::Log2Rho) {
                    const auto stem = fs::path(heat_out) / "step_rho";
                    export_heatmap(rates.step.as_matrix(), mode, stem);
                    std::cout << "wrote " << stem.string() << ".{csv,pgm}\n";
                }
            }
        } else if (*rates_cmd) {
            const auto cfg = resolve(rates_flags);
            const auto bb = build_backbone(cfg.backbone);
            const auto schedule = cfg.schedule();
            RateOptions ro;
            ro.op = cfg.op;
            ro.jobs = cfg.jobs;
            ro.similarity_maps = false;
            fs::create_directories(rates_out);
            const auto rates = collect_rates(*bb, schedule, cfg.calibration_set(), ro);
            for (const auto& m : rates.families) {
                write_rate_csv(m, fs::path(rates_out) / (m.family() + ".csv"));
                const auto v = m.defined_values();
                std::printf("%-16s defined %zu  min %.6g  max %.6g\n", m.family().c_str(), v.size(),
                            v.empty() ? 0.0 : *std::min_element(v.begin(), v.end()),
                            v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()));
            }
            write_rate_csv(rates.step.as_matrix(), fs::path(rates_out) / "step.csv");
            if (rates_probes > 0) {
                const auto probes = evaluation_inputs(cfg, rates_probes);
                const auto mse_rows = cross_input_stability(*bb, schedule, cfg.calibration_set(), probes, ro);
                std::cout << "probe";
                for (const auto& f : bb->registry().families) std::cout << ",mse_" << f;
                std::cout << "\n";
                for (std::size_t i = 0; i < probes.size(); ++i) {
                    std::cout << probes[i].describe();
                    for (double v : mse_rows[i]) std::printf(",%.6g", v);
                    std::cout << "\n";
                }
            }
            std::cout << "wrote " << rates_out << "/\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
