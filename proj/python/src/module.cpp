// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/gil_safe_call_once.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "invardiff/config.hpp"
#include "invardiff/plan_io.hpp"
#include "invardiff/planner.hpp"
#include "invardiff/rates.hpp"

namespace py = pybind11;
using namespace invardiff;

namespace {

py::dict plan_summary(const CachePlan& plan) {
    py::dict cached;
    for (int f = 0; f < plan.family_count(); ++f) {
        cached[py::str(plan.families()[static_cast<std::size_t>(f)])] = plan.cached_count(f);
    }
    py::dict out;
    out["phase"] = to_string(plan.phase);
    out["steps"] = plan.steps();
    out["layers"] = plan.layers();
    out["families"] = plan.families();
    out["cached"] = cached;
    out["skipped_steps"] = plan.skipped_steps();
    out["rate_alignment"] = plan.provenance.rate_alignment;
    out["backbone_id"] = plan.provenance.backbone_id;
    return out;
}

py::dict row_to_dict(const StatsTable& table, const StatsRow& row) {
    py::dict skip;
    for (std::size_t i = 0; i < table.families.size(); ++i) skip[py::str(table.families[i])] = row.family_skip[i];
    py::dict d;
    d["operating_point"] = row.operating_point;
    d["flops"] = row.flops;
    d["speedup_vs_baseline"] = row.speedup_vs_baseline;
    d["latency_s"] = row.latency_s;
    d["family_skip"] = skip;
    d["step_skip_fraction"] = row.step_skip_fraction;
    d["final_psnr"] = row.final_psnr;
    d["final_mse"] = row.final_mse;
    d["latency_cv"] = row.latency_cv;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Bindings for plan files, stats tables and heatmaps";
    m.attr("PLAN_FORMAT_VERSION") = kPlanFormatVersion;

    PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> violation;
    violation.call_once_and_store_result([&]() -> py::object {
        return py::exception<PlanViolation>(m, "PlanViolation", PyExc_ValueError);
    });
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const PlanViolation& e) {
            py::object type = violation.get_stored();
            py::object err = type(e.what());
            err.attr("field") = e.field;
            err.attr("invariant") = e.invariant;
            PyErr_SetObject(type.ptr(), err.ptr());
        }
    });

    m.def("normalize_plan", [](const std::string& text) { return plan_to_json(plan_from_json(text)); },
          py::arg("text"), "Validate PlanFile JSON and return it in canonical form.");
    m.def("plan_summary", [](const std::string& text) { return plan_summary(plan_from_json(text)); },
          py::arg("text"));
    m.def("plan_bits", [](const std::string& text) {
        const auto plan = plan_from_json(text);
        py::list steps;
        for (int t = 0; t < plan.steps(); ++t) {
            py::list layers;
            for (int l = 0; l < plan.layers(); ++l) {
                py::list fams;
                for (int f = 0; f < plan.family_count(); ++f) fams.append(plan.cache(t, l, f));
                layers.append(fams);
            }
            steps.append(layers);
        }
        py::list step_skip;
        for (int t = 0; t < plan.steps(); ++t) step_skip.append(plan.step_skip(t));
        return py::make_tuple(steps, step_skip);
    }, py::arg("text"), "Return (C[t][l][f], c_step[t]) as nested lists of bools.");

    m.def("calibrate", [](const std::string& config_json, bool phase1_only) {
        const auto cfg = parse_config(config_json);
        if (!cfg.thresholds) throw PlanViolation("thresholds", "present", "config has no thresholds or preset");
        const auto backbone = build_backbone(cfg.backbone);
        py::gil_scoped_release release;
        const auto result = calibrate(*backbone, cfg.schedule(), cfg.calibration_set(), *cfg.thresholds,
                                      cfg.calibrate_options(phase1_only));
        return plan_to_json(result.final_plan);
    }, py::arg("config_json"), py::arg("phase1_only") = false, "Calibrate from a config document; returns PlanFile JSON.");

    m.def("parse_stats_csv", [](const std::string& text) {
        const auto table = parse_stats_csv(text);
        py::list rows;
        for (const auto& r : table.rows) rows.append(row_to_dict(table, r));
        py::dict out;
        out["families"] = table.families;
        out["rows"] = rows;
        return out;
    }, py::arg("text"));
    m.def("stats_header", [](const std::vector<std::string>& families) {
        StatsTable t;
        t.families = families;
        return t.header();
    }, py::arg("families"));

    m.def("read_pgm", [](const std::filesystem::path& path) {
        const auto img = read_pgm(path);
        return py::make_tuple(img.width, img.height,
                              py::bytes(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size()));
    }, py::arg("path"), "Return (width, height, pixels) with row-major 8-bit pixels.");

    m.def("quantile_cut", [](const std::vector<double>& values, double tau) { return quantile_cut(values, tau); },
          py::arg("values"), py::arg("tau"));
    m.def("warmup_steps", &warmup_steps, py::arg("tau_warmup"), py::arg("steps"));
    m.def("threshold_presets", &threshold_preset_names);
    m.def("threshold_preset", [](const std::string& name) { return thresholds_to_json(threshold_preset(name)); },
          py::arg("name"));
}
