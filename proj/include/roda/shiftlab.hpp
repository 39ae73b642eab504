#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "roda/feature_store.hpp"

namespace roda::shiftlab {

// Synthetic world: normal patches from a seeded K-component Gaussian mixture,
// anomalies as a contiguous grid region displaced along a world-coherent
// direction. Defaults were calibrated once so that the default pipeline
// separates cleanly yet degrades under shift; they are plain config values.
struct WorldSpec {
    int dim = 16;
    int grid_h = 4;
    int grid_w = 4;
    int n_normal_clusters = 24;
    double cluster_spread = 0.2;
    int n_source = 60;
    int n_target = 128;
    double anomaly_rate = 0.25;
    double anomaly_offset = 1.1;
    uint64_t seed = 0;
};

void validate(const WorldSpec& spec);

enum class ShiftKind { AdditiveGaussian, ChannelGain, ChannelOffset, GridSmoothing };

ShiftKind shift_kind_from_string(const std::string& s);
std::string to_string(ShiftKind k);

struct ShiftSpec {
    ShiftKind kind = ShiftKind::ChannelGain;
    int severity = 0;  // 0 = identity
    uint64_t seed = 0;
};

void validate(const ShiftSpec& spec);

// Source set (normal only) plus clean labeled target set.
std::pair<feature_store::FeatureSet, feature_store::FeatureSet> generate_world(
    const WorldSpec& spec);

// Severity-graded feature corruptions; labels and ids pass through untouched.
feature_store::FeatureSet apply_shift(const feature_store::FeatureSet& set,
                                      const ShiftSpec& shift);

}  // namespace roda::shiftlab
