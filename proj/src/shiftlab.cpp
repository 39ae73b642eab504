#include "roda/shiftlab.hpp"

#include <cmath>
#include <cstdio>
#include <vector>

#include "roda/error.hpp"
#include "roda/rng.hpp"

namespace roda::shiftlab {

using feature_store::FeatureSet;
using feature_store::Sample;

void validate(const WorldSpec& spec) {
    if (spec.dim < 1) throw config_error("world.dim must be >= 1");
    if (spec.grid_h < 1 || spec.grid_w < 1)
        throw config_error("world.grid dimensions must be >= 1");
    if (spec.n_normal_clusters < 1)
        throw config_error("world.n_normal_clusters must be >= 1");
    if (!(spec.cluster_spread >= 0.0))
        throw config_error("world.cluster_spread must be >= 0");
    if (spec.n_source < 1) throw config_error("world.n_source must be >= 1");
    if (spec.n_target < 1) throw config_error("world.n_target must be >= 1");
    if (!(spec.anomaly_rate >= 0.0) || !(spec.anomaly_rate <= 1.0))
        throw config_error("world.anomaly_rate must be in [0, 1]");
    if (!(spec.anomaly_offset >= 0.0))
        throw config_error("world.anomaly_offset must be >= 0");
}

ShiftKind shift_kind_from_string(const std::string& s) {
    if (s == "additive-gaussian") return ShiftKind::AdditiveGaussian;
    if (s == "channel-gain") return ShiftKind::ChannelGain;
    if (s == "channel-offset") return ShiftKind::ChannelOffset;
    if (s == "grid-smoothing") return ShiftKind::GridSmoothing;
    throw config_error("unknown shift kind: " + s);
}

std::string to_string(ShiftKind k) {
    switch (k) {
        case ShiftKind::AdditiveGaussian: return "additive-gaussian";
        case ShiftKind::ChannelGain: return "channel-gain";
        case ShiftKind::ChannelOffset: return "channel-offset";
        default: return "grid-smoothing";
    }
}

void validate(const ShiftSpec& spec) {
    if (spec.severity < 0 || spec.severity > 5)
        throw config_error("shift.severity must be in 0..5");
}

namespace {

// Anomalous region shape. Fixed rather than configurable: a 1x2 strip is the
// smallest contiguous region that still exercises patch-level pooling.
constexpr int kRegionH = 1;
constexpr int kRegionW = 2;

std::string padded_id(char prefix, int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%c%04d", prefix, i);
    return buf;
}

}  // namespace

std::pair<FeatureSet, FeatureSet> generate_world(const WorldSpec& spec) {
    validate(spec);
    Rng rng(spec.seed);

    const int d = spec.dim;
    const int h = spec.grid_h;
    const int w = spec.grid_w;
    const int np = h * w;
    const int k = spec.n_normal_clusters;

    std::vector<double> centers(static_cast<size_t>(k) * d);
    for (double& v : centers) v = rng.normal();

    // One anomaly direction per world, shared by every anomalous sample, so
    // the anomaly population is a coherent mode instead of isotropic fuzz.
    std::vector<double> world_dir(d);
    double norm = 0.0;
    for (int c = 0; c < d; ++c) {
        world_dir[c] = rng.normal();
        norm += world_dir[c] * world_dir[c];
    }
    norm = std::sqrt(norm);
    if (norm > 0.0)
        for (int c = 0; c < d; ++c) world_dir[c] /= norm;

    const int rh = std::min(kRegionH, h);
    const int rw = std::min(kRegionW, w);

    auto draw_sample = [&](char prefix, int index, bool anomalous) {
        Sample s;
        s.sample_id = padded_id(prefix, index);
        s.grid.resize(static_cast<size_t>(np) * d);
        std::vector<int> ks(np);
        for (int p = 0; p < np; ++p) ks[p] = static_cast<int>(rng.below(k));
        for (int p = 0; p < np; ++p) {
            const double* ctr = centers.data() + static_cast<size_t>(ks[p]) * d;
            for (int c = 0; c < d; ++c)
                s.grid[static_cast<size_t>(p) * d + c] =
                    static_cast<float>(ctr[c] + spec.cluster_spread * rng.normal());
        }
        s.image_label = anomalous ? 1 : 0;
        s.patch_labels = std::vector<uint8_t>(np, 0);
        if (anomalous) {
            const int r0 = static_cast<int>(rng.below(static_cast<uint64_t>(h - rh + 1)));
            const int c0 = static_cast<int>(rng.below(static_cast<uint64_t>(w - rw + 1)));
            for (int dr = 0; dr < rh; ++dr)
                for (int dc = 0; dc < rw; ++dc) {
                    const int p = (r0 + dr) * w + (c0 + dc);
                    for (int c = 0; c < d; ++c)
                        s.grid[static_cast<size_t>(p) * d + c] +=
                            static_cast<float>(spec.anomaly_offset * world_dir[c]);
                    (*s.patch_labels)[p] = 1;
                }
        }
        return s;
    };

    FeatureSet source;
    source.dim = d;
    source.grid_h = h;
    source.grid_w = w;
    source.domain_tag = "source";
    source.samples.reserve(spec.n_source);
    for (int i = 0; i < spec.n_source; ++i)
        source.samples.push_back(draw_sample('s', i, false));

    const int n_anom =
        static_cast<int>(std::lround(spec.anomaly_rate * spec.n_target));
    std::vector<uint32_t> perm = rng.permutation(static_cast<uint32_t>(spec.n_target));
    std::vector<bool> anom(spec.n_target, false);
    for (int i = 0; i < n_anom && i < spec.n_target; ++i) anom[perm[i]] = true;

    FeatureSet target;
    target.dim = d;
    target.grid_h = h;
    target.grid_w = w;
    target.domain_tag = "target-clean";
    target.samples.reserve(spec.n_target);
    for (int i = 0; i < spec.n_target; ++i)
        target.samples.push_back(draw_sample('t', i, anom[i]));

    return {std::move(source), std::move(target)};
}

namespace {

std::string shift_tag_suffix(ShiftKind kind, int severity) {
    const char* abbrev = "";
    switch (kind) {
        case ShiftKind::AdditiveGaussian: abbrev = "gauss"; break;
        case ShiftKind::ChannelGain: abbrev = "gain"; break;
        case ShiftKind::ChannelOffset: abbrev = "offset"; break;
        case ShiftKind::GridSmoothing: abbrev = "smooth"; break;
    }
    return std::string("-") + abbrev + "-s" + std::to_string(severity);
}

std::vector<double> channel_std(const FeatureSet& set) {
    const size_t d = static_cast<size_t>(set.dim);
    const size_t per = static_cast<size_t>(set.patches_per_sample());
    std::vector<double> mean(d, 0.0), var(d, 0.0);
    size_t count = 0;
    for (const Sample& s : set.samples) {
        for (size_t p = 0; p < per; ++p)
            for (size_t c = 0; c < d; ++c)
                mean[c] += static_cast<double>(s.grid[p * d + c]);
        count += per;
    }
    if (count == 0) return std::vector<double>(d, 0.0);
    for (size_t c = 0; c < d; ++c) mean[c] /= static_cast<double>(count);
    for (const Sample& s : set.samples)
        for (size_t p = 0; p < per; ++p)
            for (size_t c = 0; c < d; ++c) {
                double dv = static_cast<double>(s.grid[p * d + c]) - mean[c];
                var[c] += dv * dv;
            }
    std::vector<double> sd(d);
    for (size_t c = 0; c < d; ++c) sd[c] = std::sqrt(var[c] / static_cast<double>(count));
    return sd;
}

void smooth_pass(Sample& s, int h, int w, int d) {
    const std::vector<float> prev = s.grid;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const int p = r * w + c;
            for (int ch = 0; ch < d; ++ch) {
                double acc = static_cast<double>(prev[static_cast<size_t>(p) * d + ch]);
                int cnt = 1;
                const int dr[4] = {-1, 1, 0, 0};
                const int dc[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int rr = r + dr[k];
                    const int cc = c + dc[k];
                    if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
                    acc += static_cast<double>(
                        prev[static_cast<size_t>(rr * w + cc) * d + ch]);
                    ++cnt;
                }
                s.grid[static_cast<size_t>(p) * d + ch] =
                    static_cast<float>(acc / cnt);
            }
        }
}

}  // namespace

FeatureSet apply_shift(const FeatureSet& set, const ShiftSpec& shift) {
    validate(shift);
    if (shift.severity == 0) return set;

    FeatureSet out = set;
    out.domain_tag = set.domain_tag + shift_tag_suffix(shift.kind, shift.severity);
    const size_t d = static_cast<size_t>(set.dim);
    const size_t per = static_cast<size_t>(set.patches_per_sample());
    const double sev = static_cast<double>(shift.severity);
    Rng rng(shift.seed);

    switch (shift.kind) {
        case ShiftKind::AdditiveGaussian: {
            std::vector<double> sd = channel_std(set);
            for (Sample& s : out.samples)
                for (size_t p = 0; p < per; ++p)
                    for (size_t c = 0; c < d; ++c) {
                        double x = static_cast<double>(s.grid[p * d + c]);
                        x += 0.1 * sev * sd[c] * rng.normal();
                        s.grid[p * d + c] = static_cast<float>(x);
                    }
            break;
        }
        case ShiftKind::ChannelGain: {
            std::vector<double> gains(d);
            const double lo = 1.0 - 0.15 * sev;
            const double hi = 1.0 + 0.15 * sev;
            for (size_t c = 0; c < d; ++c) gains[c] = lo + (hi - lo) * rng.next_double();
            for (Sample& s : out.samples)
                for (size_t p = 0; p < per; ++p)
                    for (size_t c = 0; c < d; ++c)
                        s.grid[p * d + c] = static_cast<float>(
                            static_cast<double>(s.grid[p * d + c]) * gains[c]);
            break;
        }
        case ShiftKind::ChannelOffset: {
            std::vector<double> sd = channel_std(set);
            std::vector<double> offs(d);
            for (size_t c = 0; c < d; ++c) {
                const double sign = rng.next_double() < 0.5 ? -1.0 : 1.0;
                offs[c] = 0.1 * sev * sd[c] * sign;
            }
            for (Sample& s : out.samples)
                for (size_t p = 0; p < per; ++p)
                    for (size_t c = 0; c < d; ++c)
                        s.grid[p * d + c] = static_cast<float>(
                            static_cast<double>(s.grid[p * d + c]) + offs[c]);
            break;
        }
        case ShiftKind::GridSmoothing: {
            for (Sample& s : out.samples)
                for (int pass = 0; pass < shift.severity; ++pass)
                    smooth_pass(s, set.grid_h, set.grid_w, set.dim);
            break;
        }
    }
    return out;
}

}  // namespace roda::shiftlab
