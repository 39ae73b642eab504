#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "roda/alignment.hpp"
#include "roda/feature_store.hpp"
#include "roda/memory_bank.hpp"
#include "roda/shiftlab.hpp"
#include "roda/transport.hpp"

namespace roda::eval {

// Probability that a random positive outscores a random negative, ties as 1/2
// (midrank formula, exactly equal to pair counting). Throws on single-class
// input.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

struct EvalReport {
    double image_auroc = 0.0;
    std::optional<double> patch_auroc;  // present iff every sample carries patch labels
    int n_test = 0;
    // config fingerprint
    std::string method = "none";
    std::string shift_kind;
    int severity = 0;
    uint64_t seed = 0;
};

EvalReport evaluate(const memory_bank::MemoryBank& bank,
                    const alignment::AffineAdapter* adapter,
                    const feature_store::FeatureSet& test);

std::string report_json_line(const EvalReport& r);
void write_reports_jsonl(const std::vector<EvalReport>& reports, const std::string& path);

struct AssignmentDiagnostic {
    int total_pairs = 0;
    int anomalous_pairs = 0;
    double fraction = 0.0;
};

// Joins assignment rows with patch labels through the flatten index map.
AssignmentDiagnostic anomaly_assignment_diagnostic(
    const transport::DiscreteAssignment& pairs,
    const std::vector<feature_store::PatchRef>& index_map,
    const feature_store::FeatureSet& batch);

// Ablation method names: "none", a bare adaptation method ("robust-ot",
// "continuous-ot", "hungarian", "moment-match", "gaussian-kl", all with
// augmentation policy none), or method+policy ("robust-ot+copy",
// "robust-ot+jitter").
struct MethodSpec {
    bool adapts = false;
    alignment::Method method = alignment::Method::RobustOt;
    alignment::AugmentPolicy policy = alignment::AugmentPolicy::None;
};

MethodSpec parse_method_name(const std::string& name);

// Shared per-seed pipeline state: every method evaluated for one (shift, seed)
// pair sees the same world, bank, and split.
struct PipelineContext {
    feature_store::FeatureSet shifted;  // full shifted target set
    memory_bank::MemoryBank bank;
    feature_store::SplitResult split;
    EvalReport unadapted;               // method "none" on the test side
    shiftlab::ShiftSpec shift;
    uint64_t seed = 0;
};

PipelineContext prepare_pipeline(const shiftlab::WorldSpec& world,
                                 const shiftlab::ShiftSpec& shift, double coreset_fraction,
                                 double train_fraction, uint64_t seed);

struct MethodOutcome {
    EvalReport report;
    alignment::AdaptTrace trace;        // empty for "none"
    alignment::AffineAdapter adapter;   // identity for "none"
};

// train_override substitutes the adaptation training set (the train_fraction
// sweep); evaluation always uses ctx.split.test.
MethodOutcome run_method(const PipelineContext& ctx, const std::string& method_name,
                         const alignment::AdaptConfig& base_cfg, uint64_t seed,
                         const feature_store::FeatureSet* train_override = nullptr);

struct AblationSpec {
    shiftlab::WorldSpec world;
    std::vector<shiftlab::ShiftSpec> shifts;
    std::vector<std::string> methods;
    std::vector<uint64_t> seeds;
    alignment::AdaptConfig adapt;
    double coreset_fraction = 0.3;
    double train_fraction = 0.2;
};

struct AblationCell {
    std::string method;
    std::string shift_kind;
    int severity = 0;
    uint64_t seed = 0;
    bool ok = false;
    std::string error;
    EvalReport report;
};

struct AblationTable {
    std::vector<AblationCell> cells;
    std::vector<std::string> methods;           // row order
    std::vector<shiftlab::ShiftSpec> shifts;    // column order
    std::vector<uint64_t> seeds;
};

// Full cross-product; a failing cell records its error and the run continues.
AblationTable ablation_runner(const AblationSpec& spec);

void write_ablation_jsonl(const AblationTable& table, const std::string& path);
std::string render_ablation_text(const AblationTable& table);

enum class SweepAxis { Severity, TrainFraction };

SweepAxis sweep_axis_from_string(const std::string& s);
std::string to_string(SweepAxis axis);

struct SweepSpec {
    shiftlab::WorldSpec world;
    shiftlab::ShiftSpec shift;          // severity is overridden on the severity axis
    std::string method = "robust-ot+jitter";
    SweepAxis axis = SweepAxis::TrainFraction;
    std::vector<double> values;         // empty = axis default
    std::vector<uint64_t> seeds;
    alignment::AdaptConfig adapt;
    double coreset_fraction = 0.3;
    double train_fraction = 0.2;        // the standard split used for testing
};

struct SweepCell {
    uint64_t seed = 0;
    bool ok = false;
    std::string error;
    EvalReport unadapted;
    EvalReport adapted;
};

struct SweepPoint {
    double value = 0.0;
    std::vector<SweepCell> cells;
};

struct SweepResult {
    SweepAxis axis = SweepAxis::Severity;
    std::string method;
    std::vector<SweepPoint> points;
};

SweepResult sweep(const SweepSpec& spec);

void write_sweep_jsonl(const SweepResult& result, const std::string& path);
std::string render_sweep_text(const SweepResult& result);

void write_text_file(const std::string& text, const std::string& path);

}  // namespace roda::eval
