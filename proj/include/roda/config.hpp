#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "roda/alignment.hpp"
#include "roda/eval.hpp"
#include "roda/shiftlab.hpp"

namespace roda::cli {

// The unified run config. Every stochastic operation's seed is explicit; the
// ablate/sweep sections carry per-run seeds from which stage sub-seeds are
// derived. Defaults are the calibrated values documented in the README.
struct RunConfig {
    int version = 1;

    shiftlab::WorldSpec world;
    shiftlab::ShiftSpec shift{shiftlab::ShiftKind::ChannelGain, 3, 0};

    double bank_coreset_fraction = 0.3;
    uint64_t bank_seed = 0;

    std::string adapt_method = "robust-ot";
    alignment::AdaptConfig adapt;

    double eval_train_fraction = 0.2;
    uint64_t eval_split_seed = 0;

    std::vector<shiftlab::ShiftSpec> ablate_shifts{
        {shiftlab::ShiftKind::ChannelGain, 3, 0}};
    std::vector<std::string> ablate_methods{
        "none",          "gaussian-kl", "moment-match",  "hungarian",
        "continuous-ot", "robust-ot",   "robust-ot+copy", "robust-ot+jitter"};
    std::vector<uint64_t> ablate_seeds{0, 1, 2, 3, 4};

    eval::SweepAxis sweep_axis = eval::SweepAxis::TrainFraction;
    std::vector<double> sweep_values;  // empty = axis default
    std::vector<uint64_t> sweep_seeds{0, 1, 2, 3, 4};
    std::string sweep_method = "robust-ot+jitter";
};

nlohmann::json config_to_json(const RunConfig& cfg);

// Strict: unknown keys and wrong types are rejected with the full field path.
RunConfig config_from_json(const nlohmann::json& j);

// Defaults, overlaid by the file at config_path (when non-empty), overlaid by
// --set path=value entries, then strictly parsed.
RunConfig load_config(const std::string& config_path,
                      const std::vector<std::string>& set_overrides);

// "a.b.c=value"; the value is parsed as JSON when possible, else as a string.
void apply_set_override(nlohmann::json& doc, const std::string& entry);

}  // namespace roda::cli
