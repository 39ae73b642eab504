#include "roda/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "roda/error.hpp"
#include "roda/rng.hpp"

namespace roda::eval {

using alignment::AdaptConfig;
using alignment::AffineAdapter;
using feature_store::FeatureSet;
using feature_store::PatchRef;
using feature_store::Sample;
using memory_bank::MemoryBank;
using nlohmann::json;
using shiftlab::ShiftSpec;
using shiftlab::WorldSpec;

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw data_error("auroc: scores and labels differ in length");
    const size_t n = scores.size();
    size_t npos = 0, nneg = 0;
    for (size_t i = 0; i < n; ++i) {
        if (!std::isfinite(scores[i])) throw data_error("auroc: non-finite score");
        if (labels[i] == 1)
            ++npos;
        else if (labels[i] == 0)
            ++nneg;
        else
            throw data_error("auroc: label not 0/1");
    }
    if (npos == 0 || nneg == 0)
        throw data_error("auroc undefined: only one class present");

    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // Midranks over tie groups; the rank sum of positives gives the exact
    // pair-counting statistic (ties contribute one half each).
    double rank_sum_pos = 0.0;
    size_t lo = 0;
    while (lo < n) {
        size_t hi = lo;
        while (hi + 1 < n && scores[idx[hi + 1]] == scores[idx[lo]]) ++hi;
        const double midrank = (static_cast<double>(lo) + static_cast<double>(hi)) / 2.0 + 1.0;
        for (size_t k = lo; k <= hi; ++k)
            if (labels[idx[k]] == 1) rank_sum_pos += midrank;
        lo = hi + 1;
    }
    const double np = static_cast<double>(npos);
    const double nn = static_cast<double>(nneg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

EvalReport evaluate(const MemoryBank& bank, const AffineAdapter* adapter,
                    const FeatureSet& test) {
    if (test.samples.empty()) throw data_error("evaluate: empty test set");
    for (const Sample& s : test.samples)
        if (!s.image_label)
            throw data_error("evaluate: sample '" + s.sample_id + "' has no image_label");

    std::vector<memory_bank::SampleScore> scores = memory_bank::score_set(bank, test, adapter);

    std::vector<double> image_scores;
    std::vector<int> image_labels;
    image_scores.reserve(test.samples.size());
    for (size_t i = 0; i < test.samples.size(); ++i) {
        image_scores.push_back(scores[i].image_score);
        image_labels.push_back(*test.samples[i].image_label);
    }

    EvalReport rep;
    rep.image_auroc = auroc(image_scores, image_labels);
    rep.n_test = static_cast<int>(test.samples.size());

    bool all_patch_labels = true;
    for (const Sample& s : test.samples)
        if (!s.patch_labels) { all_patch_labels = false; break; }
    if (all_patch_labels) {
        std::vector<double> ps;
        std::vector<int> pl;
        for (size_t i = 0; i < test.samples.size(); ++i) {
            const auto& labels = *test.samples[i].patch_labels;
            for (size_t p = 0; p < scores[i].patch_scores.size(); ++p) {
                ps.push_back(scores[i].patch_scores[p]);
                pl.push_back(labels[p]);
            }
        }
        rep.patch_auroc = auroc(ps, pl);
    }
    return rep;
}

std::string report_json_line(const EvalReport& r) {
    json j;
    j["image_auroc"] = r.image_auroc;
    j["patch_auroc"] = r.patch_auroc ? json(*r.patch_auroc) : json(nullptr);
    j["n_test"] = r.n_test;
    j["method"] = r.method;
    j["shift"] = r.shift_kind;
    j["severity"] = r.severity;
    j["seed"] = r.seed;
    return j.dump();
}

void write_reports_jsonl(const std::vector<EvalReport>& reports, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw config_error("cannot write report file: " + path);
    for (const EvalReport& r : reports) out << report_json_line(r) << "\n";
    if (!out) throw config_error("failed writing report file: " + path);
}

AssignmentDiagnostic anomaly_assignment_diagnostic(const transport::DiscreteAssignment& pairs,
                                                   const std::vector<PatchRef>& index_map,
                                                   const FeatureSet& batch) {
    AssignmentDiagnostic d;
    d.total_pairs = static_cast<int>(pairs.pairs.size());
    for (const auto& [row, col] : pairs.pairs) {
        (void)col;
        if (row >= index_map.size())
            throw data_error("assignment row " + std::to_string(row) +
                             " outside the index map (" + std::to_string(index_map.size()) +
                             " rows)");
        const PatchRef& ref = index_map[row];
        if (ref.sample_index >= batch.samples.size())
            throw data_error("index map points at sample " +
                             std::to_string(ref.sample_index) + " beyond the batch");
        const Sample& s = batch.samples[ref.sample_index];
        if (!s.patch_labels)
            throw data_error("sample '" + s.sample_id + "' has no patch labels");
        const size_t p = static_cast<size_t>(ref.grid_row) * batch.grid_w + ref.grid_col;
        if (p >= s.patch_labels->size())
            throw data_error("index map patch position outside the grid");
        if ((*s.patch_labels)[p]) ++d.anomalous_pairs;
    }
    d.fraction = d.total_pairs > 0
                     ? static_cast<double>(d.anomalous_pairs) / d.total_pairs
                     : 0.0;
    return d;
}

MethodSpec parse_method_name(const std::string& name) {
    MethodSpec spec;
    if (name == "none") return spec;
    spec.adapts = true;
    const size_t plus = name.find('+');
    const std::string base = plus == std::string::npos ? name : name.substr(0, plus);
    spec.method = alignment::method_from_string(base);
    if (plus != std::string::npos)
        spec.policy = alignment::augment_policy_from_string(name.substr(plus + 1));
    return spec;
}

namespace {

// Sub-stream tags: every pipeline stage draws from its own seed so stages stay
// independent when one of them changes.
constexpr uint64_t kWorldTag = 1;
constexpr uint64_t kShiftTag = 2;
constexpr uint64_t kBankTag = 3;
constexpr uint64_t kSplitTag = 4;
constexpr uint64_t kAdaptTag = 5;

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string shift_label(const ShiftSpec& s) {
    return shiftlab::to_string(s.kind) + "-s" + std::to_string(s.severity);
}

}  // namespace

PipelineContext prepare_pipeline(const WorldSpec& world, const ShiftSpec& shift,
                                 double coreset_fraction, double train_fraction,
                                 uint64_t seed) {
    if (!(coreset_fraction > 0.0) || coreset_fraction > 1.0)
        throw config_error("bank.coreset_fraction must be in (0, 1]");

    WorldSpec w = world;
    w.seed = mix_key(seed, kWorldTag);
    auto [source, clean] = shiftlab::generate_world(w);

    ShiftSpec sh = shift;
    sh.seed = mix_key(seed, kShiftTag);

    PipelineContext ctx;
    ctx.shift = sh;
    ctx.seed = seed;
    ctx.shifted = shiftlab::apply_shift(clean, sh);

    Matrix src = feature_store::patch_matrix(source);
    const size_t n_m = static_cast<size_t>(
        std::lround(coreset_fraction * static_cast<double>(src.rows)));
    if (n_m < 1)
        throw config_error("bank.coreset_fraction resolves to zero prototypes");
    ctx.bank = memory_bank::build_coreset(src, n_m, mix_key(seed, kBankTag));

    ctx.split = feature_store::split_target(ctx.shifted, train_fraction,
                                            mix_key(seed, kSplitTag));

    ctx.unadapted = evaluate(ctx.bank, nullptr, ctx.split.test);
    ctx.unadapted.method = "none";
    ctx.unadapted.shift_kind = shiftlab::to_string(shift.kind);
    ctx.unadapted.severity = shift.severity;
    ctx.unadapted.seed = seed;
    return ctx;
}

MethodOutcome run_method(const PipelineContext& ctx, const std::string& method_name,
                         const AdaptConfig& base_cfg, uint64_t seed,
                         const FeatureSet* train_override) {
    MethodOutcome out;
    const MethodSpec ms = parse_method_name(method_name);
    if (!ms.adapts) {
        out.report = ctx.unadapted;
        out.report.method = method_name;
        out.adapter = AffineAdapter(ctx.bank.dim());
        return out;
    }

    AdaptConfig cfg = base_cfg;
    cfg.seed = mix_key(seed, kAdaptTag);
    cfg.policy = ms.policy;
    if (ms.policy == alignment::AugmentPolicy::Copy) cfg.sigma_aug = 0.0;

    const FeatureSet& train = train_override ? *train_override : ctx.split.train;
    auto [adapter, trace] = alignment::adapt(ctx.bank, train, cfg, ms.method);
    out.adapter = std::move(adapter);
    out.trace = std::move(trace);

    out.report = evaluate(ctx.bank, &out.adapter, ctx.split.test);
    out.report.method = method_name;
    out.report.shift_kind = ctx.unadapted.shift_kind;
    out.report.severity = ctx.unadapted.severity;
    out.report.seed = seed;
    return out;
}

AblationTable ablation_runner(const AblationSpec& spec) {
    if (spec.shifts.empty()) throw config_error("ablate.shifts must be non-empty");
    if (spec.methods.empty()) throw config_error("ablate.methods must be non-empty");
    if (spec.seeds.empty()) throw config_error("ablate.seeds must be non-empty");
    for (const std::string& m : spec.methods) parse_method_name(m);  // fail fast

    AblationTable table;
    table.methods = spec.methods;
    table.shifts = spec.shifts;
    table.seeds = spec.seeds;

    for (const ShiftSpec& shift : spec.shifts) {
        for (uint64_t seed : spec.seeds) {
            bool have_ctx = false;
            std::string ctx_error;
            PipelineContext ctx;
            try {
                ctx = prepare_pipeline(spec.world, shift, spec.coreset_fraction,
                                       spec.train_fraction, seed);
                have_ctx = true;
            } catch (const Error& e) {
                ctx_error = e.what();
            }
            for (const std::string& method : spec.methods) {
                AblationCell cell;
                cell.method = method;
                cell.shift_kind = shiftlab::to_string(shift.kind);
                cell.severity = shift.severity;
                cell.seed = seed;
                if (!have_ctx) {
                    cell.error = ctx_error;
                } else {
                    try {
                        cell.report = run_method(ctx, method, spec.adapt, seed).report;
                        cell.ok = true;
                    } catch (const Error& e) {
                        cell.error = e.what();
                    }
                }
                table.cells.push_back(std::move(cell));
            }
        }
    }
    return table;
}

void write_ablation_jsonl(const AblationTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw config_error("cannot write ablation file: " + path);
    for (const AblationCell& c : table.cells) {
        json j;
        j["method"] = c.method;
        j["shift"] = c.shift_kind;
        j["severity"] = c.severity;
        j["seed"] = c.seed;
        j["ok"] = c.ok;
        j["error"] = c.ok ? json(nullptr) : json(c.error);
        j["image_auroc"] = c.ok ? json(c.report.image_auroc) : json(nullptr);
        j["patch_auroc"] =
            (c.ok && c.report.patch_auroc) ? json(*c.report.patch_auroc) : json(nullptr);
        j["n_test"] = c.ok ? json(c.report.n_test) : json(nullptr);
        out << j.dump() << "\n";
    }
    if (!out) throw config_error("failed writing ablation file: " + path);
}

namespace {

const AblationCell* find_cell(const AblationTable& table, const std::string& method,
                              const ShiftSpec& shift, uint64_t seed) {
    for (const AblationCell& c : table.cells)
        if (c.method == method && c.shift_kind == shiftlab::to_string(shift.kind) &&
            c.severity == shift.severity && c.seed == seed)
            return &c;
    return nullptr;
}

void append_row(std::string& out, const std::string& head, size_t head_w,
                const std::vector<std::string>& cells, size_t cell_w) {
    out += head;
    out.append(head_w > head.size() ? head_w - head.size() : 1, ' ');
    for (const std::string& c : cells) {
        out += c;
        out.append(cell_w > c.size() ? cell_w - c.size() : 1, ' ');
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += "\n";
}

}  // namespace

std::string render_ablation_text(const AblationTable& table) {
    size_t head_w = 8;
    for (const std::string& m : table.methods) head_w = std::max(head_w, m.size());
    head_w += 2;
    size_t cell_w = 14;
    std::vector<std::string> headers;
    for (const ShiftSpec& s : table.shifts) {
        headers.push_back(shift_label(s));
        cell_w = std::max(cell_w, headers.back().size());
    }
    cell_w += 2;

    std::string out;
    char buf[64];

    for (uint64_t seed : table.seeds) {
        out += "seed " + std::to_string(seed) + "\n";
        append_row(out, "method", head_w, headers, cell_w);
        for (const std::string& m : table.methods) {
            std::vector<std::string> cells;
            for (const ShiftSpec& s : table.shifts) {
                const AblationCell* c = find_cell(table, m, s, seed);
                if (c && c->ok) {
                    std::snprintf(buf, sizeof(buf), "%.4f", c->report.image_auroc);
                    cells.emplace_back(buf);
                } else {
                    cells.emplace_back("failed");
                }
            }
            append_row(out, m, head_w, cells, cell_w);
        }
        out += "\n";
    }

    out += "mean +/- sample std over " + std::to_string(table.seeds.size()) + " seeds\n";
    append_row(out, "method", head_w, headers, cell_w);
    for (const std::string& m : table.methods) {
        std::vector<std::string> cells;
        for (const ShiftSpec& s : table.shifts) {
            std::vector<double> vals;
            for (uint64_t seed : table.seeds) {
                const AblationCell* c = find_cell(table, m, s, seed);
                if (c && c->ok) vals.push_back(c->report.image_auroc);
            }
            if (vals.empty()) {
                cells.emplace_back("failed");
            } else {
                std::snprintf(buf, sizeof(buf), "%.4f +/-%.4f", mean_of(vals),
                              sample_std(vals));
                cells.emplace_back(buf);
            }
        }
        append_row(out, m, head_w, cells, cell_w);
    }
    return out;
}

SweepAxis sweep_axis_from_string(const std::string& s) {
    if (s == "severity") return SweepAxis::Severity;
    if (s == "train_fraction") return SweepAxis::TrainFraction;
    throw config_error("unknown sweep axis: " + s);
}

std::string to_string(SweepAxis axis) {
    return axis == SweepAxis::Severity ? "severity" : "train_fraction";
}

SweepResult sweep(const SweepSpec& spec) {
    if (spec.seeds.empty()) throw config_error("sweep.seeds must be non-empty");
    parse_method_name(spec.method);

    std::vector<double> values = spec.values;
    if (values.empty()) {
        if (spec.axis == SweepAxis::Severity)
            values = {0, 1, 2, 3, 4, 5};
        else
            values = {0.2, 0.8, 1.0};
    }
    for (double v : values) {
        if (spec.axis == SweepAxis::Severity) {
            if (v != std::floor(v) || v < 0 || v > 5)
                throw config_error("sweep.values: severity must be an integer in 0..5");
        } else {
            if (!(v > 0.0) || v > 1.0)
                throw config_error("sweep.values: train_fraction must be in (0, 1]");
        }
    }

    SweepResult result;
    result.axis = spec.axis;
    result.method = spec.method;

    for (double v : values) {
        SweepPoint point;
        point.value = v;
        for (uint64_t seed : spec.seeds) {
            SweepCell cell;
            cell.seed = seed;
            try {
                if (spec.axis == SweepAxis::Severity) {
                    ShiftSpec sh = spec.shift;
                    sh.severity = static_cast<int>(v);
                    PipelineContext ctx = prepare_pipeline(
                        spec.world, sh, spec.coreset_fraction, spec.train_fraction, seed);
                    MethodOutcome out = run_method(ctx, spec.method, spec.adapt, seed);
                    cell.unadapted = ctx.unadapted;
                    cell.adapted = out.report;
                } else {
                    // The test side is always the standard split; only the
                    // adaptation pool grows with the fraction. The 0.8 and 1.0
                    // points therefore overlap the test data, mirroring the
                    // source protocol for the full-target row.
                    PipelineContext ctx = prepare_pipeline(
                        spec.world, spec.shift, spec.coreset_fraction, spec.train_fraction,
                        seed);
                    MethodOutcome out;
                    if (v >= 1.0) {
                        out = run_method(ctx, spec.method, spec.adapt, seed, &ctx.shifted);
                    } else if (v == spec.train_fraction) {
                        out = run_method(ctx, spec.method, spec.adapt, seed);
                    } else {
                        feature_store::SplitResult sub = feature_store::split_target(
                            ctx.shifted, v, mix_key(seed, kSplitTag));
                        out = run_method(ctx, spec.method, spec.adapt, seed, &sub.train);
                    }
                    cell.unadapted = ctx.unadapted;
                    cell.adapted = out.report;
                }
                cell.ok = true;
            } catch (const Error& e) {
                cell.error = e.what();
            }
            point.cells.push_back(std::move(cell));
        }
        result.points.push_back(std::move(point));
    }
    return result;
}

void write_sweep_jsonl(const SweepResult& result, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw config_error("cannot write sweep file: " + path);
    for (const SweepPoint& p : result.points) {
        for (const SweepCell& c : p.cells) {
            json j;
            j["axis"] = to_string(result.axis);
            j["value"] = p.value;
            j["seed"] = c.seed;
            j["method"] = result.method;
            j["ok"] = c.ok;
            j["error"] = c.ok ? json(nullptr) : json(c.error);
            j["unadapted_image_auroc"] = c.ok ? json(c.unadapted.image_auroc) : json(nullptr);
            j["image_auroc"] = c.ok ? json(c.adapted.image_auroc) : json(nullptr);
            j["patch_auroc"] = (c.ok && c.adapted.patch_auroc)
                                   ? json(*c.adapted.patch_auroc)
                                   : json(nullptr);
            j["n_test"] = c.ok ? json(c.adapted.n_test) : json(nullptr);
            out << j.dump() << "\n";
        }
    }
    if (!out) throw config_error("failed writing sweep file: " + path);
}

std::string render_sweep_text(const SweepResult& result) {
    std::string out = "axis " + to_string(result.axis) + ", method " + result.method + "\n";
    const size_t head_w = 16;
    const size_t cell_w = 20;
    append_row(out, to_string(result.axis), head_w, {"unadapted", "adapted"}, cell_w);
    char buf[64];
    for (const SweepPoint& p : result.points) {
        std::vector<double> un, ad;
        for (const SweepCell& c : p.cells)
            if (c.ok) {
                un.push_back(c.unadapted.image_auroc);
                ad.push_back(c.adapted.image_auroc);
            }
        std::vector<std::string> cells;
        if (un.empty()) {
            cells = {"failed", "failed"};
        } else {
            std::snprintf(buf, sizeof(buf), "%.4f +/-%.4f", mean_of(un), sample_std(un));
            cells.emplace_back(buf);
            std::snprintf(buf, sizeof(buf), "%.4f +/-%.4f", mean_of(ad), sample_std(ad));
            cells.emplace_back(buf);
        }
        char head[32];
        std::snprintf(head, sizeof(head), "%g", p.value);
        append_row(out, head, head_w, cells, cell_w);
    }
    return out;
}

void write_text_file(const std::string& text, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw config_error("cannot write file: " + path);
    out << text;
    if (!out) throw config_error("failed writing file: " + path);
}

}  // namespace roda::eval
