// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "invardiff/backbone.hpp"
#include "invardiff/random.hpp"
#include "toy_backbones.hpp"

namespace invardiff {
namespace {

constexpr int kScriptedFamilies = 2;

std::vector<std::vector<std::vector<RatioSegment>>> uniform_sites(int layers,
                                                                  std::vector<RatioSegment> mhsa,
                                                                  std::vector<RatioSegment> ffn) {
    return {std::vector<std::vector<RatioSegment>>(static_cast<std::size_t>(layers), mhsa),
            std::vector<std::vector<RatioSegment>>(static_cast<std::size_t>(layers), ffn)};
}

}  // namespace

ScriptedProfile ScriptedProfile::constant(int layers, double ratio, int horizon) {
    return per_family(layers, ratio, ratio, horizon);
}

ScriptedProfile ScriptedProfile::piecewise(int layers, int switch_step, double r_before,
                                           double r_after, int horizon) {
    ScriptedProfile p;
    p.horizon = horizon;
    const std::vector<RatioSegment> segs{{0, r_before}, {switch_step, r_after}};
    p.sites = uniform_sites(layers, segs, segs);
    return p;
}

ScriptedProfile ScriptedProfile::per_family(int layers, double r_mhsa, double r_ffn, int horizon) {
    ScriptedProfile p;
    p.horizon = horizon;
    p.sites = uniform_sites(layers, {{0, r_mhsa}}, {{0, r_ffn}});
    return p;
}

double ScriptedProfile::ratio(int layer, int family, int t) const {
    const auto& segs = sites.at(static_cast<std::size_t>(family)).at(static_cast<std::size_t>(layer));
    double r = segs.front().ratio;
    for (const auto& s : segs) {
        if (s.from_step <= t) r = s.ratio;
    }
    return r;
}

void ScriptedProfile::validate() const {
    if (horizon < 3) throw std::invalid_argument("scripted profile: horizon must be >= 3");
    if (!(amplitude > 0.0) || !std::isfinite(amplitude)) {
        throw std::invalid_argument("scripted profile: amplitude must be positive");
    }
    if (sites.size() != kScriptedFamilies) {
        throw std::invalid_argument("scripted profile: expected ratios for families {mhsa, ffn}");
    }
    const auto layers = sites.front().size();
    if (layers == 0) throw std::invalid_argument("scripted profile: no layers");
    for (const auto& fam : sites) {
        if (fam.size() != layers) {
            throw std::invalid_argument("scripted profile: families disagree on layer count");
        }
        for (const auto& segs : fam) {
            if (segs.empty()) throw std::invalid_argument("scripted profile: site without ratios");
            for (std::size_t i = 0; i < segs.size(); ++i) {
                if (!(segs[i].ratio > 0.0) || !std::isfinite(segs[i].ratio)) {
                    throw std::invalid_argument("scripted profile: ratio must be positive, got " +
                                                std::to_string(segs[i].ratio));
                }
                if (i > 0 && segs[i].from_step <= segs[i - 1].from_step) {
                    throw std::invalid_argument("scripted profile: segments must be sorted");
                }
            }
        }
    }
}

ScriptedBackbone::ScriptedBackbone(BackboneConfig config, ScriptedProfile profile)
    : Backbone([&] {
          config.kind = BackboneKind::Scripted;
          config.scripted = profile;
          return config;
      }(),
               dit_registry()),
      profile_(std::move(profile)) {
    const auto n = static_cast<std::size_t>(config_.tokens);
    const auto d = static_cast<std::size_t>(config_.channels);
    const int horizon = profile_.horizon;
    SeededRng rng(config_.seed);

    coeff_.resize(kScriptedFamilies);
    direction_.resize(kScriptedFamilies);
    for (int f = 0; f < kScriptedFamilies; ++f) {
        for (int l = 0; l < config_.layers; ++l) {
            direction_[static_cast<std::size_t>(f)].push_back(uniform_tensor(n, d, 1.0, rng));

            // Increments D(k) = |A(k+1) - A(k)| with D(k) / D(k-1) = r(k).
            std::vector<double> inc(static_cast<std::size_t>(horizon - 1));
            inc[0] = profile_.amplitude;
            for (int k = 1; k < horizon - 1; ++k) {
                inc[static_cast<std::size_t>(k)] =
                    inc[static_cast<std::size_t>(k - 1)] * profile_.ratio(l, f, k);
            }
            // Anchor A = 0 where increments are smallest and accumulate outward,
            // so each small difference is taken between values of its own magnitude.
            std::size_t smallest = 0;
            for (std::size_t k = 1; k < inc.size(); ++k) {
                if (inc[k] < inc[smallest]) smallest = k;
            }
            std::vector<double> a(static_cast<std::size_t>(horizon), 0.0);
            for (std::size_t k = smallest; k + 1 < a.size(); ++k) a[k + 1] = a[k] + inc[k];
            for (std::size_t k = smallest; k > 0; --k) a[k - 1] = a[k] - inc[k - 1];
            coeff_[static_cast<std::size_t>(f)].push_back(std::move(a));
        }
    }

    const auto N = static_cast<std::uint64_t>(n), D = static_cast<std::uint64_t>(d);
    const auto sites = static_cast<std::uint64_t>(config_.layers) * kScriptedFamilies;
    flops_.site = {{N * D}, {N * D}};
    flops_.glue = sites * 2 * N * D + 2 * N * D;
}

double ScriptedBackbone::coefficient(int layer, int family, int t) const {
    if (t < 0 || t >= profile_.horizon) {
        throw std::out_of_range("scripted backbone: step " + std::to_string(t) +
                                " beyond profile horizon " + std::to_string(profile_.horizon));
    }
    return coeff_.at(static_cast<std::size_t>(family))
        .at(static_cast<std::size_t>(layer))[static_cast<std::size_t>(t)];
}

TokenTensor ScriptedBackbone::site_output(int layer, int family, int t) const {
    const double a = coefficient(layer, family, t);
    TokenTensor out = direction_.at(static_cast<std::size_t>(family)).at(static_cast<std::size_t>(layer));
    for (double& v : out.data()) v *= a;
    return out;
}

std::vector<std::span<const double>> ScriptedBackbone::parameters() const {
    std::vector<std::span<const double>> out;
    for (const auto& fam : direction_) {
        for (const auto& u : fam) out.push_back(u.data());
    }
    for (const auto& fam : coeff_) {
        for (const auto& c : fam) out.emplace_back(c);
    }
    return out;
}

TokenTensor ScriptedBackbone::run(const TokenTensor& x, int cond, int t, const SiteFn& site) const {
    detail::check_condition(config_, cond);
    const double weight = 1.0 / static_cast<double>(config_.layers * kScriptedFamilies);
    TokenTensor z(x.rows(), x.cols());
    for (int l = 0; l < config_.layers; ++l) {
        for (int f = 0; f < kScriptedFamilies; ++f) {
            const TokenTensor out = site(l, f, 0, [&] { return site_output(l, f, t); });
            axpy(weight, out, z);
        }
    }
    return z;
}

std::vector<RateMatrix> ScriptedBackbone::analytic_rates(int steps, double eps) const {
    if (steps < 3 || steps > profile_.horizon) {
        throw std::invalid_argument("analytic_rates: steps must be in [3, horizon]");
    }
    const auto registry = dit_registry();
    std::vector<RateMatrix> out;
    for (int f = 0; f < kScriptedFamilies; ++f) {
        RateMatrix m(registry.families[static_cast<std::size_t>(f)], steps, config_.layers);
        for (int l = 0; l < config_.layers; ++l) {
            double u1 = 0.0;
            for (double v : direction_[static_cast<std::size_t>(f)][static_cast<std::size_t>(l)].data()) {
                u1 += std::fabs(v);
            }
            double d_prev = profile_.amplitude;
            for (int t = 1; t + 1 < steps; ++t) {
                const double d_next = d_prev * profile_.ratio(l, f, t);
                m.set(t, l, u1 * d_next / (u1 * d_prev + eps));
                d_prev = d_next;
            }
        }
        out.push_back(std::move(m));
    }
    return out;
}

std::vector<RateMatrix> scripted_rates(const ScriptedProfile& profile, int steps) {
    profile.validate();
    if (steps < 3 || steps > profile.horizon) {
        throw std::invalid_argument("scripted_rates: steps must be in [3, horizon]");
    }
    const auto registry = dit_registry();
    std::vector<RateMatrix> out;
    for (int f = 0; f < kScriptedFamilies; ++f) {
        RateMatrix m(registry.families[static_cast<std::size_t>(f)], steps, profile.layers());
        for (int t = 1; t + 1 < steps; ++t) {
            for (int l = 0; l < profile.layers(); ++l) m.set(t, l, profile.ratio(l, f, t));
        }
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace invardiff
