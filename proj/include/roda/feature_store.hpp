#pragma once

#include <optional>
#include <string>
#include <vector>

#include "roda/matrix.hpp"

namespace roda::feature_store {

// One sample: a grid of H_g x W_g patches, each a D-channel feature vector.
// Values are stored as float32 (the on-disk precision) so that save/load is
// bit-exact; all downstream math promotes to double.
struct Sample {
    std::string sample_id;
    std::vector<float> grid;                        // H_g * W_g * D, row-major
    std::optional<int> image_label;                 // 1 = anomalous
    std::optional<std::vector<uint8_t>> patch_labels;  // H_g * W_g
};

struct FeatureSet {
    int dim = 0;        // D
    int grid_h = 0;     // H_g
    int grid_w = 0;     // W_g
    std::string domain_tag;
    std::vector<Sample> samples;

    int patches_per_sample() const { return grid_h * grid_w; }
};

struct SplitResult {
    FeatureSet train;   // D_tr
    FeatureSet test;    // D_te
    uint64_t seed = 0;
};

struct PatchRef {
    size_t sample_index;
    std::string sample_id;
    int grid_row;
    int grid_col;
};

// Throws on invariant violations: non-finite values, grid size mismatches,
// inconsistent labels (image_label 0 with a set patch label, or a set patch
// label without image_label 1).
void validate(const FeatureSet& set);

// Meta JSON at meta_path plus a float32 payload next to it. The meta file
// names the payload; see README for the exact schema.
void save_feature_set(const FeatureSet& set, const std::string& meta_path);
FeatureSet load_feature_set(const std::string& meta_path);

// Deterministic stratified split. |train| = round(train_fraction * n) clamped
// to [1, n-1]; selection is a function of the sorted sample_ids and the seed;
// when the set holds >= 2 anomalous samples both splits receive at least one.
SplitResult split_target(const FeatureSet& set, double train_fraction, uint64_t seed);

// Row k of the matrix is the patch at index_map[k]; samples in declared order,
// patches row-major within each sample.
std::pair<Matrix, std::vector<PatchRef>> flatten_patches(const FeatureSet& set);

// Convenience used across modules: the flat patch matrix without the map.
Matrix patch_matrix(const FeatureSet& set);

}  // namespace roda::feature_store
