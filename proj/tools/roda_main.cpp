#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "roda/alignment.hpp"
#include "roda/config.hpp"
#include "roda/error.hpp"
#include "roda/eval.hpp"
#include "roda/feature_store.hpp"
#include "roda/memory_bank.hpp"
#include "roda/rng.hpp"
#include "roda/shiftlab.hpp"

namespace fs = std::filesystem;
using roda::cli::RunConfig;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> sets;
    bool print_config = false;
};

void add_common(CLI::App* cmd, CommonArgs& c) {
    cmd->add_option("--config", c.config_path,
                    "JSON run config; defaults are used when omitted");
    cmd->add_option("--set", c.sets, "Override a config field, path=value (repeatable)");
    cmd->add_flag("--print-config", c.print_config,
                  "Print the fully resolved config and exit");
}

// False means --print-config handled the invocation.
bool resolve(const CommonArgs& c, RunConfig& cfg) {
    cfg = roda::cli::load_config(c.config_path, c.sets);
    if (c.print_config) {
        std::cout << roda::cli::config_to_json(cfg).dump(2) << "\n";
        return false;
    }
    return true;
}

std::string hash_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw roda::config_error("cannot read file for hashing: " + p.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(roda::fnv1a64(bytes.data(), bytes.size())));
    return buf;
}

void cmd_gen(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    auto [source, clean] = roda::shiftlab::generate_world(cfg.world);
    roda::feature_store::FeatureSet shifted = roda::shiftlab::apply_shift(clean, cfg.shift);
    roda::feature_store::SplitResult split = roda::feature_store::split_target(
        shifted, cfg.eval_train_fraction, cfg.eval_split_seed);

    const fs::path out(out_dir);
    const std::vector<std::pair<std::string, const roda::feature_store::FeatureSet*>> sets = {
        {"source", &source},
        {"target-clean", &clean},
        {"target-train", &split.train},
        {"target-test", &split.test},
    };
    nlohmann::json files;
    for (const auto& [name, set] : sets) {
        const fs::path meta = out / (name + ".json");
        roda::feature_store::save_feature_set(*set, meta.string());
        const fs::path payload = out / (name + ".f32");
        files[meta.filename().string()] = hash_file(meta);
        files[payload.filename().string()] = hash_file(payload);
    }
    nlohmann::json manifest;
    manifest["version"] = 1;
    manifest["files"] = files;
    std::ofstream mo(out / "manifest.json", std::ios::binary | std::ios::trunc);
    if (!mo) throw roda::config_error("cannot write manifest in " + out_dir);
    mo << manifest.dump(2) << "\n";
}

void cmd_fit(const RunConfig& cfg, const std::string& features_path,
             const std::string& bank_out) {
    roda::feature_store::FeatureSet set = roda::feature_store::load_feature_set(features_path);
    roda::feature_store::validate(set);
    roda::Matrix patches = roda::feature_store::patch_matrix(set);
    const double frac = cfg.bank_coreset_fraction;
    if (!(frac > 0.0) || frac > 1.0)
        throw roda::config_error("bank.coreset_fraction must be in (0, 1]");
    const long n_m = std::lround(frac * static_cast<double>(patches.rows));
    if (n_m < 1)
        throw roda::config_error("bank.coreset_fraction resolves to zero prototypes");
    roda::memory_bank::MemoryBank bank = roda::memory_bank::build_coreset(
        patches, static_cast<size_t>(n_m), cfg.bank_seed);
    roda::memory_bank::save_bank(bank, bank_out);
}

void cmd_adapt(const RunConfig& cfg, const std::string& bank_path,
               const std::string& train_path, const std::string& method_flag,
               const std::string& adapter_out, const std::string& trace_out) {
    roda::memory_bank::MemoryBank bank = roda::memory_bank::load_bank(bank_path);
    roda::feature_store::FeatureSet train =
        roda::feature_store::load_feature_set(train_path);
    roda::feature_store::validate(train);

    const std::string name = method_flag.empty() ? cfg.adapt_method : method_flag;
    roda::eval::MethodSpec ms = roda::eval::parse_method_name(name);
    if (!ms.adapts)
        throw roda::config_error("adapt requires an adaptation method, got \"none\"");

    roda::alignment::AdaptConfig ac = cfg.adapt;
    if (name.find('+') != std::string::npos) {
        ac.policy = ms.policy;
        if (ac.policy == roda::alignment::AugmentPolicy::Copy) ac.sigma_aug = 0.0;
    }
    auto [adapter, trace] = roda::alignment::adapt(bank, train, ac, ms.method);
    roda::alignment::save_adapter(adapter, adapter_out);
    if (!trace_out.empty()) roda::alignment::save_trace(trace, trace_out);
}

void cmd_eval(const std::string& bank_path, const std::string& adapter_path,
              const std::string& test_path, const std::string& report_out) {
    roda::memory_bank::MemoryBank bank = roda::memory_bank::load_bank(bank_path);
    roda::feature_store::FeatureSet test = roda::feature_store::load_feature_set(test_path);
    roda::feature_store::validate(test);

    roda::alignment::AffineAdapter adapter;
    const roda::alignment::AffineAdapter* ap = nullptr;
    if (!adapter_path.empty()) {
        adapter = roda::alignment::load_adapter(adapter_path);
        ap = &adapter;
    }
    roda::eval::EvalReport rep = roda::eval::evaluate(bank, ap, test);
    rep.method = ap ? "adapted" : "none";
    rep.shift_kind = test.domain_tag;  // provenance; shift parameters live in the config
    roda::eval::write_reports_jsonl({rep}, report_out);
}

void cmd_ablate(const RunConfig& cfg, const std::string& out_dir) {
    roda::eval::AblationSpec spec;
    spec.world = cfg.world;
    spec.shifts = cfg.ablate_shifts;
    spec.methods = cfg.ablate_methods;
    spec.seeds = cfg.ablate_seeds;
    spec.adapt = cfg.adapt;
    spec.coreset_fraction = cfg.bank_coreset_fraction;
    spec.train_fraction = cfg.eval_train_fraction;

    roda::eval::AblationTable table = roda::eval::ablation_runner(spec);
    fs::create_directories(out_dir);
    const fs::path out(out_dir);
    roda::eval::write_ablation_jsonl(table, (out / "ablation.jsonl").string());
    roda::eval::write_text_file(roda::eval::render_ablation_text(table),
                                (out / "ablation.txt").string());
}

void cmd_sweep(const RunConfig& cfg, const std::string& out_dir) {
    roda::eval::SweepSpec spec;
    spec.world = cfg.world;
    spec.shift = cfg.shift;
    spec.method = cfg.sweep_method;
    spec.axis = cfg.sweep_axis;
    spec.values = cfg.sweep_values;
    spec.seeds = cfg.sweep_seeds;
    spec.adapt = cfg.adapt;
    spec.coreset_fraction = cfg.bank_coreset_fraction;
    spec.train_fraction = cfg.eval_train_fraction;

    roda::eval::SweepResult result = roda::eval::sweep(spec);
    fs::create_directories(out_dir);
    const fs::path out(out_dir);
    roda::eval::write_sweep_jsonl(result, (out / "sweep.jsonl").string());
    roda::eval::write_text_file(roda::eval::render_sweep_text(result),
                                (out / "sweep.txt").string());
}

int exit_code_for(roda::ErrorKind kind) {
    switch (kind) {
        case roda::ErrorKind::Config: return 2;
        case roda::ErrorKind::Numeric: return 3;
        default: return 4;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Memory-bank anomaly detection with robust transport adaptation"};
    app.require_subcommand(1);

    CommonArgs gen_c, fit_c, adapt_c, eval_c, ablate_c, sweep_c;
    std::string gen_out;
    std::string fit_features, fit_bank_out;
    std::string adapt_bank, adapt_train, adapt_method, adapt_out, adapt_trace;
    std::string eval_bank, eval_adapter, eval_test, eval_report;
    std::string ablate_out, sweep_out;

    CLI::App* gen = app.add_subcommand("gen", "Generate source/target feature files");
    add_common(gen, gen_c);
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->callback([&] {
        RunConfig cfg;
        if (resolve(gen_c, cfg)) cmd_gen(cfg, gen_out);
    });

    CLI::App* fit = app.add_subcommand("fit", "Build a memory bank from source features");
    add_common(fit, fit_c);
    fit->add_option("--features", fit_features, "Source feature meta file")->required();
    fit->add_option("--bank-out", fit_bank_out, "Bank meta file to write")->required();
    double fit_frac = 0.0;
    uint64_t fit_seed = 0;
    CLI::Option* fit_frac_opt =
        fit->add_option("--coreset-fraction", fit_frac, "Overrides bank.coreset_fraction");
    CLI::Option* fit_seed_opt = fit->add_option("--seed", fit_seed, "Overrides bank.seed");
    fit->callback([&] {
        RunConfig cfg;
        if (!resolve(fit_c, cfg)) return;
        if (fit_frac_opt->count()) cfg.bank_coreset_fraction = fit_frac;
        if (fit_seed_opt->count()) cfg.bank_seed = fit_seed;
        cmd_fit(cfg, fit_features, fit_bank_out);
    });

    CLI::App* adapt = app.add_subcommand("adapt", "Fit an adapter to target training data");
    add_common(adapt, adapt_c);
    adapt->add_option("--bank", adapt_bank, "Bank meta file")->required();
    adapt->add_option("--target-train", adapt_train, "Target training feature meta file")
        ->required();
    adapt->add_option("--method", adapt_method,
                      "Adaptation method, optionally method+policy; default adapt.method");
    adapt->add_option("--adapter-out", adapt_out, "Adapter meta file to write")->required();
    adapt->add_option("--trace-out", adapt_trace, "Optional JSON-lines trace file");
    adapt->callback([&] {
        RunConfig cfg;
        if (resolve(adapt_c, cfg))
            cmd_adapt(cfg, adapt_bank, adapt_train, adapt_method, adapt_out, adapt_trace);
    });

    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a bank (optionally adapted)");
    add_common(eval_cmd, eval_c);
    eval_cmd->add_option("--bank", eval_bank, "Bank meta file")->required();
    eval_cmd->add_option("--adapter", eval_adapter, "Adapter meta file (identity if omitted)");
    eval_cmd->add_option("--test", eval_test, "Labeled test feature meta file")->required();
    eval_cmd->add_option("--report-out", eval_report, "Report file to write")->required();
    eval_cmd->callback([&] {
        RunConfig cfg;
        if (resolve(eval_c, cfg)) cmd_eval(eval_bank, eval_adapter, eval_test, eval_report);
    });

    CLI::App* ablate = app.add_subcommand("ablate", "Run the method ablation table");
    add_common(ablate, ablate_c);
    ablate->add_option("--out", ablate_out, "Output directory")->required();
    ablate->callback([&] {
        RunConfig cfg;
        if (resolve(ablate_c, cfg)) cmd_ablate(cfg, ablate_out);
    });

    CLI::App* sweep = app.add_subcommand("sweep", "Run a severity or train-fraction sweep");
    add_common(sweep, sweep_c);
    sweep->add_option("--out", sweep_out, "Output directory")->required();
    sweep->callback([&] {
        RunConfig cfg;
        if (resolve(sweep_c, cfg)) cmd_sweep(cfg, sweep_out);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const roda::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
