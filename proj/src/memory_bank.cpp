#include "roda/memory_bank.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "roda/error.hpp"
#include "roda/parallel.hpp"
#include "roda/rng.hpp"

namespace roda::memory_bank {

using nlohmann::json;

namespace {

double sq_dist(const double* a, const double* b, size_t d) {
    double s = 0.0;
    for (size_t c = 0; c < d; ++c) {
        double diff = a[c] - b[c];
        s += diff * diff;
    }
    return s;
}

}  // namespace

MemoryBank build_coreset(const Matrix& source_patches, size_t target_size, uint64_t seed) {
    const size_t n = source_patches.rows;
    const size_t d = source_patches.cols;
    if (n == 0) throw data_error("build_coreset: empty source patch matrix");
    if (target_size == 0) throw data_error("build_coreset: target size 0");
    if (target_size > n)
        throw data_error("build_coreset: target size " + std::to_string(target_size) +
                         " exceeds source patch count " + std::to_string(n));

    Rng rng(seed);
    std::vector<uint32_t> chosen;
    chosen.reserve(target_size);
    chosen.push_back(static_cast<uint32_t>(rng.below(n)));

    // d2[i] = squared distance from patch i to the current prototype set.
    std::vector<double> d2(n);
    const double* first = source_patches.row(chosen[0]);
    for (size_t i = 0; i < n; ++i) d2[i] = sq_dist(source_patches.row(i), first, d);

    while (chosen.size() < target_size) {
        size_t best = 0;
        double best_d = -1.0;
        for (size_t i = 0; i < n; ++i) {
            if (d2[i] > best_d) {
                best_d = d2[i];
                best = i;
            }
        }
        chosen.push_back(static_cast<uint32_t>(best));
        const double* p = source_patches.row(best);
        for (size_t i = 0; i < n; ++i) {
            double dd = sq_dist(source_patches.row(i), p, d);
            if (dd < d2[i]) d2[i] = dd;
        }
    }

    MemoryBank bank;
    bank.prototypes = Matrix(target_size, d);
    for (size_t k = 0; k < target_size; ++k)
        std::memcpy(bank.prototypes.row(k), source_patches.row(chosen[k]), d * sizeof(double));
    bank.source_indices = std::move(chosen);
    bank.coreset_fraction = static_cast<double>(target_size) / static_cast<double>(n);
    return bank;
}

std::pair<double, size_t> nearest_distance(const MemoryBank& bank, const double* patch) {
    const size_t m = bank.size();
    const size_t d = bank.dim();
    if (m == 0) throw data_error("nearest_distance: empty bank");
    size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < m; ++k) {
        double dd = sq_dist(patch, bank.prototypes.row(k), d);
        if (dd < best_d) {
            best_d = dd;
            best = k;
        }
    }
    return {std::sqrt(best_d), best};
}

SampleScore score_sample(const MemoryBank& bank, const feature_store::Sample& sample,
                         int grid_h, int grid_w, int dim,
                         const alignment::AffineAdapter* adapter) {
    if (static_cast<size_t>(dim) != bank.dim())
        throw data_error("score_sample: sample dim " + std::to_string(dim) +
                         " != bank dim " + std::to_string(bank.dim()));
    const size_t n_patches = static_cast<size_t>(grid_h) * grid_w;
    const size_t d = static_cast<size_t>(dim);
    if (sample.grid.size() != n_patches * d)
        throw data_error("score_sample: grid length mismatch for '" + sample.sample_id + "'");
    if (adapter && adapter->dim() != d)
        throw data_error("score_sample: adapter dim mismatch");

    SampleScore out;
    out.patch_scores.resize(n_patches);
    std::vector<double> buf(d);
    for (size_t p = 0; p < n_patches; ++p) {
        for (size_t c = 0; c < d; ++c) buf[c] = static_cast<double>(sample.grid[p * d + c]);
        if (adapter)
            for (size_t c = 0; c < d; ++c) buf[c] = adapter->scale[c] * buf[c] + adapter->shift[c];
        out.patch_scores[p] = nearest_distance(bank, buf.data()).first;
    }
    out.image_score = 0.0;
    for (double v : out.patch_scores)
        if (v > out.image_score) out.image_score = v;
    return out;
}

std::vector<SampleScore> score_set(const MemoryBank& bank, const feature_store::FeatureSet& set,
                                   const alignment::AffineAdapter* adapter) {
    std::vector<SampleScore> scores(set.samples.size());
    parallel_chunks(set.samples.size(), 4, [&](size_t b, size_t e) {
        for (size_t i = b; i < e; ++i)
            scores[i] = score_sample(bank, set.samples[i], set.grid_h, set.grid_w, set.dim,
                                     adapter);
    });
    return scores;
}

double minimax_radius(const MemoryBank& bank, const Matrix& points) {
    double r = 0.0;
    for (size_t i = 0; i < points.rows; ++i) {
        double d = nearest_distance(bank, points.row(i)).first;
        if (d > r) r = d;
    }
    return r;
}

void save_bank(const MemoryBank& bank, const std::string& meta_path) {
    json meta;
    meta["version"] = 1;
    meta["kind"] = "memory_bank";
    meta["dim"] = bank.dim();
    meta["count"] = bank.size();
    meta["coreset_fraction"] = bank.coreset_fraction;
    meta["source_indices"] = bank.source_indices;
    std::filesystem::path p(meta_path);
    p.replace_extension(".f32");
    meta["payload"] = p.filename().string();

    std::string payload;
    payload.reserve(bank.prototypes.data.size() * 4);
    for (double v : bank.prototypes.data) {
        float f = static_cast<float>(v);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        payload.push_back(static_cast<char>(bits & 0xFF));
        payload.push_back(static_cast<char>((bits >> 8) & 0xFF));
        payload.push_back(static_cast<char>((bits >> 16) & 0xFF));
        payload.push_back(static_cast<char>((bits >> 24) & 0xFF));
    }

    std::ofstream mo(meta_path, std::ios::binary | std::ios::trunc);
    if (!mo) throw config_error("cannot write bank meta: " + meta_path);
    mo << meta.dump(2) << "\n";
    std::filesystem::path ppath = std::filesystem::path(meta_path).parent_path() /
                                  meta["payload"].get<std::string>();
    std::ofstream po(ppath, std::ios::binary | std::ios::trunc);
    if (!po) throw config_error("cannot write bank payload: " + ppath.string());
    po.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

MemoryBank load_bank(const std::string& meta_path) {
    std::ifstream in(meta_path);
    if (!in) throw config_error("cannot open bank meta: " + meta_path);
    json meta;
    try {
        in >> meta;
        if (meta.at("kind").get<std::string>() != "memory_bank")
            throw data_error("not a memory_bank file: " + meta_path);
        const size_t d = meta.at("dim").get<size_t>();
        const size_t n = meta.at("count").get<size_t>();
        MemoryBank bank;
        bank.coreset_fraction = meta.at("coreset_fraction").get<double>();
        bank.source_indices = meta.at("source_indices").get<std::vector<uint32_t>>();

        std::filesystem::path ppath = std::filesystem::path(meta_path).parent_path() /
                                      meta.at("payload").get<std::string>();
        std::ifstream pin(ppath, std::ios::binary);
        if (!pin) throw data_error("missing bank payload: " + ppath.string());
        std::string bytes((std::istreambuf_iterator<char>(pin)),
                          std::istreambuf_iterator<char>());
        if (bytes.size() != n * d * 4)
            throw data_error("bank payload length mismatch in " + ppath.string());

        bank.prototypes = Matrix(n, d);
        const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data());
        for (size_t k = 0; k < n * d; ++k) {
            uint32_t bits = static_cast<uint32_t>(p[4 * k]) |
                            (static_cast<uint32_t>(p[4 * k + 1]) << 8) |
                            (static_cast<uint32_t>(p[4 * k + 2]) << 16) |
                            (static_cast<uint32_t>(p[4 * k + 3]) << 24);
            float f;
            std::memcpy(&f, &bits, 4);
            bank.prototypes.data[k] = static_cast<double>(f);
        }
        return bank;
    } catch (const json::exception& e) {
        throw data_error("bank meta schema error in " + meta_path + ": " + e.what());
    }
}

}  // namespace roda::memory_bank
