#include "roda/feature_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "roda/error.hpp"
#include "roda/rng.hpp"

namespace roda::feature_store {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

std::string payload_path_for(const std::string& meta_path, const std::string& payload_name) {
    fs::path p(meta_path);
    return (p.parent_path() / payload_name).string();
}

std::string default_payload_name(const std::string& meta_path) {
    fs::path p(meta_path);
    p.replace_extension(".f32");
    return p.filename().string();
}

// Little-endian float32 encoding, independent of host byte order.
void append_f32_le(std::string& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    out.push_back(static_cast<char>(bits & 0xFF));
    out.push_back(static_cast<char>((bits >> 8) & 0xFF));
    out.push_back(static_cast<char>((bits >> 16) & 0xFF));
    out.push_back(static_cast<char>((bits >> 24) & 0xFF));
}

float read_f32_le(const unsigned char* p) {
    uint32_t bits = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                    (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void check_label_consistency(const Sample& s, size_t n_patches) {
    if (!s.patch_labels) return;
    if (s.patch_labels->size() != n_patches)
        throw data_error("sample '" + s.sample_id + "': patch_labels length " +
                         std::to_string(s.patch_labels->size()) + " != patch count " +
                         std::to_string(n_patches));
    bool any_patch = false;
    for (uint8_t v : *s.patch_labels) {
        if (v != 0 && v != 1)
            throw data_error("sample '" + s.sample_id + "': patch label not 0/1");
        if (v) any_patch = true;
    }
    int img = s.image_label.value_or(0);
    if (img == 0 && any_patch)
        throw data_error("sample '" + s.sample_id +
                         "': image_label 0 but a patch label is set");
    if (any_patch && (!s.image_label || *s.image_label != 1))
        throw data_error("sample '" + s.sample_id +
                         "': anomalous patch requires image_label 1");
}

}  // namespace

void validate(const FeatureSet& set) {
    if (set.dim <= 0 || set.grid_h <= 0 || set.grid_w <= 0)
        throw data_error("feature set has non-positive dim or grid shape");
    const size_t per_sample = static_cast<size_t>(set.grid_h) * set.grid_w * set.dim;
    const size_t n_patches = static_cast<size_t>(set.grid_h) * set.grid_w;
    for (const Sample& s : set.samples) {
        if (s.grid.size() != per_sample)
            throw data_error("sample '" + s.sample_id + "': grid length " +
                             std::to_string(s.grid.size()) + " != " +
                             std::to_string(per_sample));
        for (float v : s.grid)
            if (!std::isfinite(v))
                throw data_error("sample '" + s.sample_id + "': non-finite feature value");
        if (s.image_label && *s.image_label != 0 && *s.image_label != 1)
            throw data_error("sample '" + s.sample_id + "': image_label not 0/1");
        check_label_consistency(s, n_patches);
    }
}

void save_feature_set(const FeatureSet& set, const std::string& meta_path) {
    validate(set);
    const std::string payload_name = default_payload_name(meta_path);

    json meta;
    meta["version"] = kFormatVersion;
    meta["dim"] = set.dim;
    meta["grid"] = {set.grid_h, set.grid_w};
    meta["domain_tag"] = set.domain_tag;
    meta["payload"] = payload_name;
    json samples = json::array();
    for (const Sample& s : set.samples) {
        json js;
        js["id"] = s.sample_id;
        if (s.image_label) js["image_label"] = *s.image_label;
        if (s.patch_labels) {
            json pl = json::array();
            for (uint8_t v : *s.patch_labels) pl.push_back(static_cast<int>(v));
            js["patch_labels"] = pl;
        }
        samples.push_back(std::move(js));
    }
    meta["samples"] = std::move(samples);

    std::string payload;
    payload.reserve(set.samples.size() * set.patches_per_sample() * set.dim * 4);
    for (const Sample& s : set.samples)
        for (float v : s.grid) append_f32_le(payload, v);

    {
        std::ofstream out(meta_path, std::ios::binary | std::ios::trunc);
        if (!out) throw config_error("cannot write meta file: " + meta_path);
        out << meta.dump(2) << "\n";
        if (!out) throw config_error("write failed: " + meta_path);
    }
    {
        const std::string ppath = payload_path_for(meta_path, payload_name);
        std::ofstream out(ppath, std::ios::binary | std::ios::trunc);
        if (!out) throw config_error("cannot write payload file: " + ppath);
        out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        if (!out) throw config_error("write failed: " + ppath);
    }
}

FeatureSet load_feature_set(const std::string& meta_path) {
    std::ifstream in(meta_path);
    if (!in) throw config_error("cannot open meta file: " + meta_path);
    json meta;
    try {
        in >> meta;
    } catch (const json::exception& e) {
        throw data_error("meta parse error in " + meta_path + ": " + e.what());
    }

    FeatureSet set;
    try {
        if (meta.at("version").get<int>() != kFormatVersion)
            throw data_error("unsupported feature-set format version in " + meta_path);
        set.dim = meta.at("dim").get<int>();
        auto grid = meta.at("grid");
        if (!grid.is_array() || grid.size() != 2)
            throw data_error("meta 'grid' must be [H, W] in " + meta_path);
        set.grid_h = grid[0].get<int>();
        set.grid_w = grid[1].get<int>();
        set.domain_tag = meta.value("domain_tag", std::string());
        const std::string payload_name =
            meta.value("payload", default_payload_name(meta_path));

        const std::string ppath = payload_path_for(meta_path, payload_name);
        std::ifstream pin(ppath, std::ios::binary);
        if (!pin)
            throw data_error("missing payload file: " + ppath + " (offset 0)");
        std::string bytes((std::istreambuf_iterator<char>(pin)),
                          std::istreambuf_iterator<char>());

        const json& samples = meta.at("samples");
        const size_t per_sample = static_cast<size_t>(set.grid_h) * set.grid_w * set.dim;
        const size_t expected = samples.size() * per_sample * 4;
        if (bytes.size() != expected)
            throw data_error("payload length mismatch in " + ppath + ": expected " +
                             std::to_string(expected) + " bytes, found " +
                             std::to_string(bytes.size()) + " (diverges at byte offset " +
                             std::to_string(std::min(bytes.size(), expected)) + ")");

        const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data());
        set.samples.reserve(samples.size());
        for (const json& js : samples) {
            Sample s;
            s.sample_id = js.at("id").get<std::string>();
            if (js.contains("image_label")) s.image_label = js["image_label"].get<int>();
            if (js.contains("patch_labels")) {
                std::vector<uint8_t> pl;
                for (const json& v : js["patch_labels"])
                    pl.push_back(static_cast<uint8_t>(v.get<int>()));
                s.patch_labels = std::move(pl);
            }
            s.grid.resize(per_sample);
            for (size_t k = 0; k < per_sample; ++k) s.grid[k] = read_f32_le(p + 4 * k);
            p += 4 * per_sample;
            set.samples.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw data_error("meta schema error in " + meta_path + ": " + e.what());
    }

    validate(set);
    return set;
}

SplitResult split_target(const FeatureSet& set, double train_fraction, uint64_t seed) {
    const size_t n = set.samples.size();
    if (n < 2) throw data_error("split_target needs at least 2 samples");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw config_error("train_fraction must be in (0, 1)");

    auto round_half_up = [](double x) {
        return static_cast<long>(std::floor(x + 0.5));
    };
    long n_tr = round_half_up(train_fraction * static_cast<double>(n));
    n_tr = std::clamp(n_tr, 1L, static_cast<long>(n) - 1);

    // Selection depends only on sorted ids and the seed, per the format docs.
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return set.samples[a].sample_id < set.samples[b].sample_id;
    });

    std::vector<size_t> anom, norm;
    for (size_t idx : order) {
        if (set.samples[idx].image_label.value_or(0) == 1)
            anom.push_back(idx);
        else
            norm.push_back(idx);
    }
    const long n_anom = static_cast<long>(anom.size());
    const long n_norm = static_cast<long>(norm.size());

    long n_tr_anom;
    if (n_anom == 0)
        n_tr_anom = 0;
    else if (n_anom == 1)
        n_tr_anom = std::min(round_half_up(train_fraction), 1L);
    else
        n_tr_anom = std::clamp(round_half_up(train_fraction * n_anom), 1L, n_anom - 1);

    long n_tr_norm = n_tr - n_tr_anom;
    if (n_tr_norm < 0) {
        n_tr_anom = n_tr;
        n_tr_norm = 0;
    }
    if (n_tr_norm > n_norm) {
        n_tr_norm = n_norm;
        n_tr_anom = n_tr - n_norm;  // fits: n_tr <= n-1 implies n_tr_anom <= n_anom-1
    }

    Rng rng(seed);
    auto shuffle_stratum = [&](std::vector<size_t>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(rng.below(i));
            std::swap(v[i - 1], v[j]);
        }
    };
    shuffle_stratum(anom);
    shuffle_stratum(norm);

    std::vector<bool> in_train(n, false);
    for (long k = 0; k < n_tr_anom; ++k) in_train[anom[static_cast<size_t>(k)]] = true;
    for (long k = 0; k < n_tr_norm; ++k) in_train[norm[static_cast<size_t>(k)]] = true;

    SplitResult result;
    result.seed = seed;
    result.train.dim = result.test.dim = set.dim;
    result.train.grid_h = result.test.grid_h = set.grid_h;
    result.train.grid_w = result.test.grid_w = set.grid_w;
    result.train.domain_tag = set.domain_tag + "-train";
    result.test.domain_tag = set.domain_tag + "-test";
    for (size_t i = 0; i < n; ++i) {
        if (in_train[i])
            result.train.samples.push_back(set.samples[i]);
        else
            result.test.samples.push_back(set.samples[i]);
    }
    return result;
}

std::pair<Matrix, std::vector<PatchRef>> flatten_patches(const FeatureSet& set) {
    const size_t n_patches = static_cast<size_t>(set.grid_h) * set.grid_w;
    const size_t d = static_cast<size_t>(set.dim);
    Matrix m(set.samples.size() * n_patches, d);
    std::vector<PatchRef> refs;
    refs.reserve(m.rows);
    size_t row = 0;
    for (size_t s = 0; s < set.samples.size(); ++s) {
        const Sample& smp = set.samples[s];
        for (int gr = 0; gr < set.grid_h; ++gr) {
            for (int gc = 0; gc < set.grid_w; ++gc) {
                const size_t p = static_cast<size_t>(gr) * set.grid_w + gc;
                for (size_t c = 0; c < d; ++c)
                    m.at(row, c) = static_cast<double>(smp.grid[p * d + c]);
                refs.push_back({s, smp.sample_id, gr, gc});
                ++row;
            }
        }
    }
    return {std::move(m), std::move(refs)};
}

Matrix patch_matrix(const FeatureSet& set) {
    return flatten_patches(set).first;
}

}  // namespace roda::feature_store
