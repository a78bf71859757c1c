// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "invardiff/rates.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <future>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <utility>

namespace invardiff {

double rho_layer(double d_next, double d_prev, double eps) {
    if (d_next == 0.0 && d_prev == 0.0) return 0.0;
    return d_next / (d_prev + eps);
}

std::string to_string(RateOperator op) {
    switch (op) {
        case RateOperator::FirstDifferenceRatio: return "first_difference_ratio";
        case RateOperator::MseToPrevious: return "mse_to_previous";
        case RateOperator::CosineDistance: return "cosine_distance";
        case RateOperator::RawNormRatio: return "raw_norm_ratio";
    }
    return "unknown";
}

RateOperator rate_operator_from_string(const std::string& name) {
    for (auto op : {RateOperator::FirstDifferenceRatio, RateOperator::MseToPrevious,
                    RateOperator::CosineDistance, RateOperator::RawNormRatio}) {
        if (to_string(op) == name) return op;
    }
    throw std::invalid_argument("unknown rate operator '" + name + "'");
}

std::string to_string(RatePooling pooling) {
    return pooling == RatePooling::AverageThenQuantile ? "average" : "concatenate";
}

RatePooling rate_pooling_from_string(const std::string& name) {
    if (name == "average") return RatePooling::AverageThenQuantile;
    if (name == "concatenate") return RatePooling::ConcatenateEntries;
    throw std::invalid_argument("unknown pooling '" + name + "' (expected average|concatenate)");
}

ShadowPolicy ShadowPolicy::none(int steps, int layers, int families) {
    ShadowPolicy p;
    p.steps = steps;
    p.layers = layers;
    p.families = families;
    p.site_reuse.assign(static_cast<std::size_t>(steps * layers * families), 0);
    p.step_reuse.assign(static_cast<std::size_t>(steps), 0);
    return p;
}

bool ShadowPolicy::site(int t, int l, int f) const {
    return site_reuse.at(static_cast<std::size_t>((t * layers + l) * families + f)) != 0;
}

bool ShadowPolicy::step(int t) const { return step_reuse.at(static_cast<std::size_t>(t)) != 0; }

const RateMatrix& CalibrationRates::family(const FamilyId& name) const {
    for (const auto& m : families) {
        if (m.family() == name) return m;
    }
    throw std::out_of_range("no rates for family '" + name + "'");
}

namespace {

struct PairStats {
    double l1 = 0.0;
    double mse = 0.0;
    double cos = 1.0;
    double norm_prev = 0.0;  // |prev|_1
    double norm_next = 0.0;  // |next|_1
};

double l1_norm(const TokenTensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += std::fabs(v);
    return s;
}

// Statistics between two multi-hook site outputs, treating the hooks as one
// concatenated vector.
PairStats pair_stats(const std::vector<TokenTensor>& next, const std::vector<TokenTensor>& prev,
                     RateOperator op, bool maps) {
    PairStats s;
    for (std::size_t h = 0; h < next.size(); ++h) s.l1 += l1_diff_norm(next[h], prev[h]);
    if (op == RateOperator::RawNormRatio) {
        for (std::size_t h = 0; h < next.size(); ++h) {
            s.norm_next += l1_norm(next[h]);
            s.norm_prev += l1_norm(prev[h]);
        }
    }
    const bool need_mse = maps || op == RateOperator::MseToPrevious;
    const bool need_cos = maps || op == RateOperator::CosineDistance;
    if (next.size() == 1) {
        if (need_mse) s.mse = mse(next[0], prev[0]);
        if (need_cos) s.cos = cosine_sim(next[0], prev[0]);
        return s;
    }
    if (need_mse) {
        double acc = 0.0;
        std::size_t n = 0;
        for (std::size_t h = 0; h < next.size(); ++h) {
            acc += mse(next[h], prev[h]) * static_cast<double>(next[h].size());
            n += next[h].size();
        }
        s.mse = acc / static_cast<double>(n);
    }
    if (need_cos) {
        double ab = 0.0, aa = 0.0, bb = 0.0;
        for (std::size_t h = 0; h < next.size(); ++h) {
            ab += dot(next[h], prev[h]);
            aa += squared_norm(next[h]);
            bb += squared_norm(prev[h]);
        }
        if (aa == 0.0 && bb == 0.0) {
            s.cos = 1.0;
        } else if (aa == 0.0 || bb == 0.0) {
            s.cos = 0.0;
        } else {
            s.cos = std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
        }
    }
    return s;
}

// Rolling state of one site (or of the network output) under one policy.
class SiteTracker {
public:
    // Feeds the step-t output. `reuse` substitutes the previous shadow.
    // Returns the rate for index t-1 when t >= 2.
    std::optional<double> observe(int t, const std::vector<TokenTensor>& fresh, bool reuse,
                                  RateOperator op, double eps, bool maps,
                                  std::optional<std::pair<double, double>>& map_values) {
        map_values.reset();
        if (!shadow_) {
            shadow_ = fresh;
            return std::nullopt;
        }
        const std::vector<TokenTensor>& next = reuse && t > 0 ? *shadow_ : fresh;
        const PairStats s = pair_stats(next, *shadow_, op, maps);
        if (maps) map_values = std::make_pair(s.mse, s.cos);

        std::optional<double> rate;
        if (t >= 2) {
            switch (op) {
                case RateOperator::FirstDifferenceRatio: rate = rho_layer(s.l1, prev_l1_, eps); break;
                case RateOperator::MseToPrevious: rate = s.mse; break;
                case RateOperator::CosineDistance: rate = 1.0 - s.cos; break;
                case RateOperator::RawNormRatio: rate = s.norm_next / (s.norm_prev + eps); break;
            }
        }
        prev_l1_ = s.l1;
        if (&next != &*shadow_) *shadow_ = fresh;
        return rate;
    }

private:
    std::optional<std::vector<TokenTensor>> shadow_;
    double prev_l1_ = 0.0;
};

struct PolicyState {
    const ShadowPolicy* policy;
    std::vector<SiteTracker> sites;  // [l][f]
    SiteTracker net;
    InputRates out;
};

// Full-compute executor that feeds every module output into the trackers.
class RecordingExecutor final : public StepExecutor {
public:
    RecordingExecutor(const Backbone& backbone, int steps, const std::vector<ShadowPolicy>& policies,
                      const RateOptions& options)
        : options_(options), cache_(backbone.make_cache()) {
        const auto& reg = backbone.registry();
        const int layers = backbone.layers();
        states_.reserve(policies.size());
        for (std::size_t i = 0; i < policies.size(); ++i) {
            const auto& p = policies[i];
            if (p.steps != steps || p.layers != layers ||
                p.families != static_cast<int>(reg.size()) ||
                p.site_reuse.size() != static_cast<std::size_t>(steps * layers * p.families) ||
                p.step_reuse.size() != static_cast<std::size_t>(steps)) {
                throw std::invalid_argument("shadow policy " + std::to_string(i) +
                                            " does not match backbone and schedule");
            }
            PolicyState st{&p, std::vector<SiteTracker>(static_cast<std::size_t>(layers) * reg.size()),
                           SiteTracker{}, InputRates{{}, StepRateVector(steps), {}, {}}};
            for (const auto& name : reg.families) {
                st.out.families.emplace_back(name, steps, layers);
                if (maps(i)) {
                    st.out.mse_maps.emplace_back(name, steps, layers);
                    st.out.cos_maps.emplace_back(name, steps, layers);
                }
            }
            states_.push_back(std::move(st));
        }
    }

    TokenTensor evaluate(const StepContext& ctx, RunStats& stats) override {
        const auto& bb = ctx.backbone;
        auto out = bb.forward_step(ctx.x, ctx.cond, ctx.step, bb.all_compute_gate(), cache_);
        stats.record_forward(bb, out.touched);
        observe(bb, ctx.step, out.z);
        return std::move(out.z);
    }

    std::vector<InputRates> take() {
        std::vector<InputRates> out;
        for (auto& s : states_) out.push_back(std::move(s.out));
        return out;
    }

private:
    // Maps are produced only for the first policy.
    bool maps(std::size_t policy) const { return options_.similarity_maps && policy == 0; }

    void observe(const Backbone& bb, int t, const TokenTensor& z) {
        const auto& reg = bb.registry();
        const auto families = static_cast<int>(reg.size());
        std::vector<TokenTensor> fresh;
        std::optional<std::pair<double, double>> mv;
        for (int l = 0; l < bb.layers(); ++l) {
            for (int f = 0; f < families; ++f) {
                fresh.clear();
                for (int h = 0; h < reg.hooks(static_cast<std::size_t>(f)); ++h) {
                    fresh.push_back(cache_.get(l, f, h));
                }
                for (std::size_t i = 0; i < states_.size(); ++i) {
                    auto& st = states_[i];
                    auto& tracker = st.sites[static_cast<std::size_t>(l * families + f)];
                    const auto rate = tracker.observe(t, fresh, st.policy->site(t, l, f), options_.op,
                                                      options_.eps, maps(i), mv);
                    if (rate) st.out.families[static_cast<std::size_t>(f)].set(t - 1, l, *rate);
                    if (maps(i)) {
                        auto& m = st.out.mse_maps[static_cast<std::size_t>(f)];
                        auto& c = st.out.cos_maps[static_cast<std::size_t>(f)];
                        m.set(t, l, mv ? mv->first : 0.0);
                        c.set(t, l, mv ? mv->second : 0.0);
                    }
                }
            }
        }
        const std::vector<TokenTensor> net{z};
        for (auto& st : states_) {
            const auto rate =
                st.net.observe(t, net, st.policy->step(t), options_.op, options_.eps, false, mv);
            if (rate) st.out.step.set(t - 1, *rate);
        }
    }

    RateOptions options_;
    ModuleCache cache_;
    std::vector<PolicyState> states_;
};

}  // namespace

std::vector<InputRates> collect_shadow_rates(const Backbone& backbone, const SampleSchedule& schedule,
                                             const SampleInput& input,
                                             const std::vector<ShadowPolicy>& policies,
                                             const RateOptions& options) {
    schedule.validate();
    if (policies.empty()) throw std::invalid_argument("collect_shadow_rates: no policies");
    RecordingExecutor exec(backbone, schedule.steps(), policies, options);
    run_trajectory(backbone, schedule, input.latent(backbone), input.cond, exec);
    return exec.take();
}

InputRates collect_input_rates(const Backbone& backbone, const SampleSchedule& schedule,
                               const SampleInput& input, const RateOptions& options) {
    const std::vector<ShadowPolicy> none{ShadowPolicy::none(
        schedule.steps(), backbone.layers(), static_cast<int>(backbone.registry().size()))};
    return std::move(collect_shadow_rates(backbone, schedule, input, none, options).front());
}

CalibrationRates collect_rates(const Backbone& backbone, const SampleSchedule& schedule,
                               const std::vector<SampleInput>& inputs, const RateOptions& options) {
    if (inputs.empty()) throw std::invalid_argument("collect_rates: at least one input is required");
    if (options.jobs < 1) throw std::invalid_argument("collect_rates: jobs must be >= 1");
    std::vector<InputRates> per_input;
    per_input.reserve(inputs.size());
    if (options.jobs == 1) {
        for (const auto& in : inputs) per_input.push_back(collect_input_rates(backbone, schedule, in, options));
    } else {
        const auto wave = static_cast<std::size_t>(options.jobs);
        for (std::size_t begin = 0; begin < inputs.size(); begin += wave) {
            std::vector<std::future<InputRates>> futures;
            for (std::size_t i = begin; i < std::min(inputs.size(), begin + wave); ++i) {
                futures.push_back(std::async(std::launch::async, [&, i] {
                    return collect_input_rates(backbone, schedule, inputs[i], options);
                }));
            }
            for (auto& f : futures) per_input.push_back(f.get());
        }
    }
    return average_rates(std::move(per_input));
}

RateMatrix mean_matrix(const std::vector<const RateMatrix*>& matrices) {
    if (matrices.empty()) throw std::invalid_argument("mean_matrix: no matrices");
    const RateMatrix& first = *matrices.front();
    for (const auto* m : matrices) {
        if (!m->same_layout(first) || m->family() != first.family()) {
            throw std::invalid_argument("mean_matrix: matrices disagree on family or layout");
        }
    }
    RateMatrix out(first.family(), first.steps(), first.layers());
    const double k = static_cast<double>(matrices.size());
    for (int t = 0; t < first.steps(); ++t) {
        for (int l = 0; l < first.layers(); ++l) {
            double sum = 0.0;
            bool all = true;
            for (const auto* m : matrices) {
                if (!m->defined(t, l)) {
                    all = false;
                    break;
                }
                sum += m->value(t, l);
            }
            if (all) out.set(t, l, sum / k);
        }
    }
    return out;
}

CalibrationRates average_rates(std::vector<InputRates> per_input) {
    if (per_input.empty()) throw std::invalid_argument("average_rates: no inputs");
    const auto& first = per_input.front();
    auto mean_of = [&](auto member, std::size_t f) {
        std::vector<const RateMatrix*> ms;
        for (const auto& in : per_input) ms.push_back(&(in.*member).at(f));
        return mean_matrix(ms);
    };

    CalibrationRates out{{}, StepRateVector(first.step.steps()), {}, {}, {}};
    for (std::size_t f = 0; f < first.families.size(); ++f) {
        out.families.push_back(mean_of(&InputRates::families, f));
    }
    for (std::size_t f = 0; f < first.mse_maps.size(); ++f) {
        out.mse_maps.push_back(mean_of(&InputRates::mse_maps, f));
        out.cos_maps.push_back(mean_of(&InputRates::cos_maps, f));
    }

    const double k = static_cast<double>(per_input.size());
    for (int t = 0; t < first.step.steps(); ++t) {
        double sum = 0.0;
        bool all = true;
        for (const auto& in : per_input) {
            if (in.step.steps() != first.step.steps()) {
                throw std::invalid_argument("average_rates: inputs disagree on step count");
            }
            if (!in.step.defined(t)) {
                all = false;
                break;
            }
            sum += in.step.value(t);
        }
        if (all) out.step.set(t, sum / k);
    }
    out.per_input = std::move(per_input);
    return out;
}

double compare_rate_matrices(const RateMatrix& a, const RateMatrix& b) {
    if (!a.same_layout(b)) throw ShapeError("compare_rate_matrices: layouts differ");
    double acc = 0.0;
    std::size_t n = 0;
    for (int t = 0; t < a.steps(); ++t) {
        for (int l = 0; l < a.layers(); ++l) {
            if (!a.defined(t, l) || !b.defined(t, l)) continue;
            const double d = a.value(t, l) - b.value(t, l);
            acc += d * d;
            ++n;
        }
    }
    if (n == 0) throw std::invalid_argument("compare_rate_matrices: no jointly defined entries");
    return acc / static_cast<double>(n);
}

std::vector<std::vector<double>> cross_input_stability(const Backbone& backbone,
                                                       const SampleSchedule& schedule,
                                                       const std::vector<SampleInput>& reference,
                                                       const std::vector<SampleInput>& probes,
                                                       const RateOptions& options) {
    RateOptions opts = options;
    opts.similarity_maps = false;
    const auto ref = collect_rates(backbone, schedule, reference, opts);
    std::vector<std::vector<double>> out;
    for (const auto& p : probes) {
        const auto r = collect_input_rates(backbone, schedule, p, opts);
        std::vector<double> row;
        for (std::size_t f = 0; f < r.families.size(); ++f) {
            row.push_back(compare_rate_matrices(r.families[f], ref.families[f]));
        }
        out.push_back(std::move(row));
    }
    return out;
}

// ---- Export -------------------------------------------------------------------

std::string to_string(HeatmapMode mode) {
    switch (mode) {
        case HeatmapMode::Log2Rho: return "rho";
        case HeatmapMode::Mse: return "mse";
        case HeatmapMode::Cos: return "cos";
    }
    return "unknown";
}

HeatmapMode heatmap_mode_from_string(const std::string& name) {
    if (name == "rho" || name == "log2-rho") return HeatmapMode::Log2Rho;
    if (name == "mse") return HeatmapMode::Mse;
    if (name == "cos") return HeatmapMode::Cos;
    throw std::invalid_argument("unknown heatmap mode '" + name + "' (expected rho|mse|cos)");
}

std::string rate_csv_string(const RateMatrix& m) {
    std::string out = "t,l,value\n";
    char buf[64];
    for (int t = 0; t < m.steps(); ++t) {
        for (int l = 0; l < m.layers(); ++l) {
            out += std::to_string(t) + "," + std::to_string(l) + ",";
            if (m.defined(t, l)) {
                std::snprintf(buf, sizeof buf, "%.17g", m.value(t, l));
                out += buf;
            }
            out += "\n";
        }
    }
    return out;
}

void write_rate_csv(const RateMatrix& m, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << rate_csv_string(m);
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

namespace {

long parse_index(const std::string& field, int line) {
    if (field.empty() || field.size() > 9 ||
        !std::all_of(field.begin(), field.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        throw RateFormatError("rate csv line " + std::to_string(line) + ": bad index '" + field + "'");
    }
    return std::stol(field);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

RateMatrix parse_rate_csv(const std::string& text, const std::string& family) {
    std::istringstream in(text);
    std::string line;
    int lineno = 1;
    if (!std::getline(in, line)) throw RateFormatError("rate csv: empty input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "t,l,value") throw RateFormatError("rate csv: expected header 't,l,value'");

    std::map<std::pair<long, long>, std::optional<double>> entries;
    long max_t = -1, max_l = -1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
        if (c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos) {
            throw RateFormatError("rate csv line " + std::to_string(lineno) + ": expected 3 fields");
        }
        const long t = parse_index(line.substr(0, c1), lineno);
        const long l = parse_index(line.substr(c1 + 1, c2 - c1 - 1), lineno);
        const std::string v = line.substr(c2 + 1);
        std::optional<double> value;
        if (!v.empty()) {
            char* end = nullptr;
            const double d = std::strtod(v.c_str(), &end);
            if (end != v.c_str() + v.size()) {
                throw RateFormatError("rate csv line " + std::to_string(lineno) + ": bad value '" + v + "'");
            }
            value = d;
        }
        if (!entries.emplace(std::make_pair(t, l), value).second) {
            throw RateFormatError("rate csv line " + std::to_string(lineno) + ": duplicate entry");
        }
        max_t = std::max(max_t, t);
        max_l = std::max(max_l, l);
    }
    if (entries.empty()) throw RateFormatError("rate csv: no entries");
    if (static_cast<std::size_t>((max_t + 1) * (max_l + 1)) != entries.size()) {
        throw RateFormatError("rate csv: entries do not form a complete grid");
    }
    RateMatrix m(family, static_cast<int>(max_t + 1), static_cast<int>(max_l + 1));
    for (const auto& [key, value] : entries) {
        if (value) m.set(static_cast<int>(key.first), static_cast<int>(key.second), *value);
    }
    return m;
}

RateMatrix read_rate_csv(const std::filesystem::path& path, const std::string& family) {
    return parse_rate_csv(read_file(path), family);
}

std::vector<double> heatmap_display_values(const RateMatrix& m, HeatmapMode mode) {
    static constexpr double kFloor = -60.0;
    auto safe_log2 = [](double v) { return v > 0.0 ? std::max(std::log2(v), kFloor) : kFloor; };
    std::vector<double> out(static_cast<std::size_t>(m.steps()) * static_cast<std::size_t>(m.layers()));
    for (int l = 0; l < m.layers(); ++l) {
        for (int t = 0; t < m.steps(); ++t) {
            double v = 0.0;
            if (m.defined(t, l) && (mode == HeatmapMode::Log2Rho || t > 0)) {
                const double raw = m.value(t, l);
                switch (mode) {
                    case HeatmapMode::Log2Rho: v = safe_log2(raw); break;
                    case HeatmapMode::Mse: v = safe_log2(raw); break;
                    case HeatmapMode::Cos: v = safe_log2(1.0 - raw); break;
                }
            }
            out[static_cast<std::size_t>(l) * static_cast<std::size_t>(m.steps()) +
                static_cast<std::size_t>(t)] = v;
        }
    }
    return out;
}

GrayImage render_heatmap(const RateMatrix& m, HeatmapMode mode) {
    const auto values = heatmap_display_values(m, mode);
    GrayImage img;
    img.width = m.steps();
    img.height = m.layers();
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    img.pixels.reserve(values.size());
    for (double v : values) {
        if (*hi == *lo) {
            img.pixels.push_back(128);
        } else {
            img.pixels.push_back(
                static_cast<std::uint8_t>(std::lround((v - *lo) / (*hi - *lo) * 255.0)));
        }
    }
    return img;
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
    if (image.width < 1 || image.height < 1 ||
        image.pixels.size() != static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.height)) {
        throw std::invalid_argument("write_pgm: inconsistent image");
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << "P5\n" << image.width << " " << image.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
    const std::string data = read_file(path);
    std::size_t pos = 0;
    auto token = [&]() {
        for (;;) {
            while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
            if (pos < data.size() && data[pos] == '#') {
                while (pos < data.size() && data[pos] != '\n') ++pos;
                continue;
            }
            break;
        }
        const std::size_t start = pos;
        while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
        if (start == pos) throw RateFormatError("pgm: truncated header");
        return data.substr(start, pos - start);
    };
    auto number = [&]() {
        const std::string s = token();
        if (s.size() > 6 || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) {
            throw RateFormatError("pgm: bad header field '" + s + "'");
        }
        return std::stoi(s);
    };
    if (token() != "P5") throw RateFormatError("pgm: not a binary graymap");
    GrayImage img;
    img.width = number();
    img.height = number();
    const int maxval = number();
    if (img.width < 1 || img.height < 1 || maxval < 1 || maxval > 255) {
        throw RateFormatError("pgm: unsupported dimensions or depth");
    }
    ++pos;  // single whitespace after maxval
    const auto n = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height);
    if (data.size() < pos + n) throw RateFormatError("pgm: truncated pixel data");
    img.pixels.assign(data.begin() + static_cast<std::ptrdiff_t>(pos),
                      data.begin() + static_cast<std::ptrdiff_t>(pos + n));
    return img;
}

void export_heatmap(const RateMatrix& m, HeatmapMode mode, const std::filesystem::path& stem) {
    auto csv = stem;
    csv += ".csv";
    auto pgm = stem;
    pgm += ".pgm";
    write_rate_csv(m, csv);
    write_pgm(render_heatmap(m, mode), pgm);
}

}  // namespace invardiff
