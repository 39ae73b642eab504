#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "roda/adapter.hpp"
#include "roda/feature_store.hpp"
#include "roda/matrix.hpp"

namespace roda::memory_bank {

// Coreset of source patch features (the prototype set M of the max-min score).
struct MemoryBank {
    Matrix prototypes;                    // N_M x D
    std::vector<uint32_t> source_indices;  // prototype row -> source patch row
    double coreset_fraction = 0.0;         // N_M / N_sp

    size_t size() const { return prototypes.rows; }
    size_t dim() const { return prototypes.cols; }
};

// Greedy farthest-point construction (2-approximation of the k-center
// objective). The first prototype is a seeded uniform draw; every later one is
// the patch farthest from the current set, ties to the lowest index.
MemoryBank build_coreset(const Matrix& source_patches, size_t target_size, uint64_t seed);

// Euclidean distance to the closest prototype; ties to the lowest index.
std::pair<double, size_t> nearest_distance(const MemoryBank& bank, const double* patch);

struct SampleScore {
    double image_score = 0.0;
    std::vector<double> patch_scores;  // grid_h * grid_w, row-major
};

// Max over patches of the nearest-prototype distance; the adapter, when given,
// is applied to each patch before the distance.
SampleScore score_sample(const MemoryBank& bank, const feature_store::Sample& sample,
                         int grid_h, int grid_w, int dim,
                         const alignment::AffineAdapter* adapter);

std::vector<SampleScore> score_set(const MemoryBank& bank, const feature_store::FeatureSet& set,
                                   const alignment::AffineAdapter* adapter);

// Largest nearest-prototype distance over a point set: the achieved minimax
// radius of the coreset construction.
double minimax_radius(const MemoryBank& bank, const Matrix& points);

void save_bank(const MemoryBank& bank, const std::string& meta_path);
MemoryBank load_bank(const std::string& meta_path);

}  // namespace roda::memory_bank
