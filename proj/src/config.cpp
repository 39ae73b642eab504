#include "roda/config.hpp"

#include <cmath>
#include <fstream>

#include "roda/error.hpp"

namespace roda::cli {

using nlohmann::json;

namespace {

std::string joined(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
}

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
    if (!obj.is_object())
        throw config_error("config section " + (path.empty() ? "<root>" : path) +
                           " must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) { known = true; break; }
        if (!known)
            throw config_error("unknown config key: " + joined(path, it.key()));
    }
}

int get_int(const json& v, const std::string& path) {
    if (!v.is_number_integer())
        throw config_error("config field " + path + " must be an integer");
    return v.get<int>();
}

uint64_t get_u64(const json& v, const std::string& path) {
    if (v.is_number_unsigned()) return v.get<uint64_t>();
    if (v.is_number_integer() && v.get<int64_t>() >= 0)
        return static_cast<uint64_t>(v.get<int64_t>());
    throw config_error("config field " + path + " must be a non-negative integer");
}

double get_double(const json& v, const std::string& path) {
    if (!v.is_number())
        throw config_error("config field " + path + " must be a number");
    return v.get<double>();
}

bool get_bool(const json& v, const std::string& path) {
    if (!v.is_boolean())
        throw config_error("config field " + path + " must be a boolean");
    return v.get<bool>();
}

std::string get_string(const json& v, const std::string& path) {
    if (!v.is_string())
        throw config_error("config field " + path + " must be a string");
    return v.get<std::string>();
}

shiftlab::ShiftSpec parse_shift(const json& j, const std::string& path) {
    check_keys(j, path, {"kind", "severity", "seed"});
    shiftlab::ShiftSpec s;
    if (j.contains("kind")) {
        try {
            s.kind = shiftlab::shift_kind_from_string(get_string(j["kind"], path + ".kind"));
        } catch (const Error& e) {
            throw config_error(std::string(e.what()) + " (at " + path + ".kind)");
        }
    }
    if (j.contains("severity")) s.severity = get_int(j["severity"], path + ".severity");
    if (j.contains("seed")) s.seed = get_u64(j["seed"], path + ".seed");
    shiftlab::validate(s);
    return s;
}

void require_adapting_method(const std::string& name, const std::string& path) {
    eval::MethodSpec ms;
    try {
        ms = eval::parse_method_name(name);
    } catch (const Error& e) {
        throw config_error(std::string(e.what()) + " (at " + path + ")");
    }
    if (!ms.adapts)
        throw config_error("config field " + path +
                           " must name an adaptation method, got \"none\"");
}

}  // namespace

json config_to_json(const RunConfig& cfg) {
    json j;
    j["version"] = cfg.version;

    json& w = j["world"];
    w["dim"] = cfg.world.dim;
    w["grid_h"] = cfg.world.grid_h;
    w["grid_w"] = cfg.world.grid_w;
    w["n_normal_clusters"] = cfg.world.n_normal_clusters;
    w["cluster_spread"] = cfg.world.cluster_spread;
    w["n_source"] = cfg.world.n_source;
    w["n_target"] = cfg.world.n_target;
    w["anomaly_rate"] = cfg.world.anomaly_rate;
    w["anomaly_offset"] = cfg.world.anomaly_offset;
    w["seed"] = cfg.world.seed;

    json& s = j["shift"];
    s["kind"] = shiftlab::to_string(cfg.shift.kind);
    s["severity"] = cfg.shift.severity;
    s["seed"] = cfg.shift.seed;

    json& b = j["bank"];
    b["coreset_fraction"] = cfg.bank_coreset_fraction;
    b["seed"] = cfg.bank_seed;

    json& a = j["adapt"];
    a["method"] = cfg.adapt_method;
    a["learning_rate"] = cfg.adapt.learning_rate;
    a["epochs"] = cfg.adapt.epochs;
    a["batch_size"] = cfg.adapt.batch_size;
    a["epsilon"] = cfg.adapt.epsilon;
    a["policy"] = alignment::to_string(cfg.adapt.policy);
    a["views"] = cfg.adapt.views;
    a["sigma_aug"] = cfg.adapt.sigma_aug;
    a["seed"] = cfg.adapt.seed;
    a["sinkhorn_max_iter"] = cfg.adapt.sinkhorn_max_iter;
    a["sinkhorn_tol"] = cfg.adapt.sinkhorn_tol;
    a["tail_average"] = cfg.adapt.tail_average;
    a["restarts"] = cfg.adapt.restarts;
    a["weight_decay"] = cfg.adapt.weight_decay;

    json& e = j["eval"];
    e["train_fraction"] = cfg.eval_train_fraction;
    e["split_seed"] = cfg.eval_split_seed;

    json& ab = j["ablate"];
    ab["shifts"] = json::array();
    for (const auto& sh : cfg.ablate_shifts) {
        json o;
        o["kind"] = shiftlab::to_string(sh.kind);
        o["severity"] = sh.severity;
        ab["shifts"].push_back(o);
    }
    ab["methods"] = cfg.ablate_methods;
    ab["seeds"] = cfg.ablate_seeds;

    json& sw = j["sweep"];
    sw["axis"] = eval::to_string(cfg.sweep_axis);
    sw["values"] = cfg.sweep_values;
    sw["seeds"] = cfg.sweep_seeds;
    sw["method"] = cfg.sweep_method;

    return j;
}

RunConfig config_from_json(const json& j) {
    check_keys(j, "",
               {"version", "world", "shift", "bank", "adapt", "eval", "ablate", "sweep"});
    RunConfig cfg;

    if (j.contains("version")) {
        cfg.version = get_int(j["version"], "version");
        if (cfg.version != 1)
            throw config_error("unsupported config version " + std::to_string(cfg.version));
    }

    if (j.contains("world")) {
        const json& w = j["world"];
        check_keys(w, "world",
                   {"dim", "grid_h", "grid_w", "n_normal_clusters", "cluster_spread",
                    "n_source", "n_target", "anomaly_rate", "anomaly_offset", "seed"});
        if (w.contains("dim")) cfg.world.dim = get_int(w["dim"], "world.dim");
        if (w.contains("grid_h")) cfg.world.grid_h = get_int(w["grid_h"], "world.grid_h");
        if (w.contains("grid_w")) cfg.world.grid_w = get_int(w["grid_w"], "world.grid_w");
        if (w.contains("n_normal_clusters"))
            cfg.world.n_normal_clusters =
                get_int(w["n_normal_clusters"], "world.n_normal_clusters");
        if (w.contains("cluster_spread"))
            cfg.world.cluster_spread = get_double(w["cluster_spread"], "world.cluster_spread");
        if (w.contains("n_source"))
            cfg.world.n_source = get_int(w["n_source"], "world.n_source");
        if (w.contains("n_target"))
            cfg.world.n_target = get_int(w["n_target"], "world.n_target");
        if (w.contains("anomaly_rate"))
            cfg.world.anomaly_rate = get_double(w["anomaly_rate"], "world.anomaly_rate");
        if (w.contains("anomaly_offset"))
            cfg.world.anomaly_offset = get_double(w["anomaly_offset"], "world.anomaly_offset");
        if (w.contains("seed")) cfg.world.seed = get_u64(w["seed"], "world.seed");
        shiftlab::validate(cfg.world);
    }

    if (j.contains("shift")) cfg.shift = parse_shift(j["shift"], "shift");

    if (j.contains("bank")) {
        const json& b = j["bank"];
        check_keys(b, "bank", {"coreset_fraction", "seed"});
        if (b.contains("coreset_fraction"))
            cfg.bank_coreset_fraction =
                get_double(b["coreset_fraction"], "bank.coreset_fraction");
        if (b.contains("seed")) cfg.bank_seed = get_u64(b["seed"], "bank.seed");
        if (!(cfg.bank_coreset_fraction > 0.0) || cfg.bank_coreset_fraction > 1.0)
            throw config_error("config field bank.coreset_fraction must be in (0, 1]");
    }

    if (j.contains("adapt")) {
        const json& a = j["adapt"];
        check_keys(a, "adapt",
                   {"method", "learning_rate", "epochs", "batch_size", "epsilon", "policy",
                    "views", "sigma_aug", "seed", "sinkhorn_max_iter", "sinkhorn_tol",
                    "tail_average", "restarts", "weight_decay"});
        if (a.contains("method")) {
            cfg.adapt_method = get_string(a["method"], "adapt.method");
            require_adapting_method(cfg.adapt_method, "adapt.method");
        }
        if (a.contains("learning_rate"))
            cfg.adapt.learning_rate = get_double(a["learning_rate"], "adapt.learning_rate");
        if (a.contains("epochs")) cfg.adapt.epochs = get_int(a["epochs"], "adapt.epochs");
        if (a.contains("batch_size"))
            cfg.adapt.batch_size = get_int(a["batch_size"], "adapt.batch_size");
        if (a.contains("epsilon"))
            cfg.adapt.epsilon = get_double(a["epsilon"], "adapt.epsilon");
        if (a.contains("policy")) {
            try {
                cfg.adapt.policy = alignment::augment_policy_from_string(
                    get_string(a["policy"], "adapt.policy"));
            } catch (const Error& e) {
                throw config_error(std::string(e.what()) + " (at adapt.policy)");
            }
        }
        if (a.contains("views")) cfg.adapt.views = get_int(a["views"], "adapt.views");
        if (a.contains("sigma_aug"))
            cfg.adapt.sigma_aug = get_double(a["sigma_aug"], "adapt.sigma_aug");
        if (a.contains("seed")) cfg.adapt.seed = get_u64(a["seed"], "adapt.seed");
        if (a.contains("sinkhorn_max_iter"))
            cfg.adapt.sinkhorn_max_iter =
                get_int(a["sinkhorn_max_iter"], "adapt.sinkhorn_max_iter");
        if (a.contains("sinkhorn_tol"))
            cfg.adapt.sinkhorn_tol = get_double(a["sinkhorn_tol"], "adapt.sinkhorn_tol");
        if (a.contains("tail_average"))
            cfg.adapt.tail_average = get_bool(a["tail_average"], "adapt.tail_average");
        if (a.contains("restarts"))
            cfg.adapt.restarts = get_int(a["restarts"], "adapt.restarts");
        if (a.contains("weight_decay"))
            cfg.adapt.weight_decay = get_double(a["weight_decay"], "adapt.weight_decay");
        alignment::validate(cfg.adapt);
    }

    if (j.contains("eval")) {
        const json& e = j["eval"];
        check_keys(e, "eval", {"train_fraction", "split_seed"});
        if (e.contains("train_fraction"))
            cfg.eval_train_fraction = get_double(e["train_fraction"], "eval.train_fraction");
        if (e.contains("split_seed"))
            cfg.eval_split_seed = get_u64(e["split_seed"], "eval.split_seed");
        if (!(cfg.eval_train_fraction > 0.0) || !(cfg.eval_train_fraction < 1.0))
            throw config_error("config field eval.train_fraction must be in (0, 1)");
    }

    if (j.contains("ablate")) {
        const json& ab = j["ablate"];
        check_keys(ab, "ablate", {"shifts", "methods", "seeds"});
        if (ab.contains("shifts")) {
            if (!ab["shifts"].is_array())
                throw config_error("config field ablate.shifts must be an array");
            cfg.ablate_shifts.clear();
            size_t i = 0;
            for (const json& entry : ab["shifts"]) {
                const std::string path = "ablate.shifts[" + std::to_string(i++) + "]";
                check_keys(entry, path, {"kind", "severity"});
                cfg.ablate_shifts.push_back(parse_shift(entry, path));
            }
            if (cfg.ablate_shifts.empty())
                throw config_error("config field ablate.shifts must be non-empty");
        }
        if (ab.contains("methods")) {
            if (!ab["methods"].is_array())
                throw config_error("config field ablate.methods must be an array");
            cfg.ablate_methods.clear();
            size_t i = 0;
            for (const json& entry : ab["methods"]) {
                const std::string path = "ablate.methods[" + std::to_string(i++) + "]";
                const std::string name = get_string(entry, path);
                try {
                    eval::parse_method_name(name);
                } catch (const Error& e) {
                    throw config_error(std::string(e.what()) + " (at " + path + ")");
                }
                cfg.ablate_methods.push_back(name);
            }
            if (cfg.ablate_methods.empty())
                throw config_error("config field ablate.methods must be non-empty");
        }
        if (ab.contains("seeds")) {
            if (!ab["seeds"].is_array())
                throw config_error("config field ablate.seeds must be an array");
            cfg.ablate_seeds.clear();
            size_t i = 0;
            for (const json& entry : ab["seeds"])
                cfg.ablate_seeds.push_back(
                    get_u64(entry, "ablate.seeds[" + std::to_string(i++) + "]"));
            if (cfg.ablate_seeds.empty())
                throw config_error("config field ablate.seeds must be non-empty");
        }
    }

    if (j.contains("sweep")) {
        const json& sw = j["sweep"];
        check_keys(sw, "sweep", {"axis", "values", "seeds", "method"});
        if (sw.contains("axis")) {
            try {
                cfg.sweep_axis =
                    eval::sweep_axis_from_string(get_string(sw["axis"], "sweep.axis"));
            } catch (const Error& e) {
                throw config_error(std::string(e.what()) + " (at sweep.axis)");
            }
        }
        if (sw.contains("values")) {
            if (!sw["values"].is_array())
                throw config_error("config field sweep.values must be an array");
            cfg.sweep_values.clear();
            size_t i = 0;
            for (const json& entry : sw["values"])
                cfg.sweep_values.push_back(
                    get_double(entry, "sweep.values[" + std::to_string(i++) + "]"));
        }
        if (sw.contains("seeds")) {
            if (!sw["seeds"].is_array())
                throw config_error("config field sweep.seeds must be an array");
            cfg.sweep_seeds.clear();
            size_t i = 0;
            for (const json& entry : sw["seeds"])
                cfg.sweep_seeds.push_back(
                    get_u64(entry, "sweep.seeds[" + std::to_string(i++) + "]"));
            if (cfg.sweep_seeds.empty())
                throw config_error("config field sweep.seeds must be non-empty");
        }
        if (sw.contains("method")) {
            cfg.sweep_method = get_string(sw["method"], "sweep.method");
            try {
                eval::parse_method_name(cfg.sweep_method);
            } catch (const Error& e) {
                throw config_error(std::string(e.what()) + " (at sweep.method)");
            }
        }
    }

    return cfg;
}

void apply_set_override(json& doc, const std::string& entry) {
    const size_t eq = entry.find('=');
    if (eq == std::string::npos || eq == 0)
        throw config_error("--set expects path=value, got: " + entry);
    const std::string path = entry.substr(0, eq);
    const std::string raw = entry.substr(eq + 1);

    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;  // unquoted strings are taken verbatim
    }

    std::vector<std::string> parts;
    size_t pos = 0;
    while (true) {
        const size_t dot = path.find('.', pos);
        parts.push_back(path.substr(pos, dot == std::string::npos ? dot : dot - pos));
        if (dot == std::string::npos) break;
        pos = dot + 1;
    }
    for (const std::string& p : parts)
        if (p.empty()) throw config_error("--set has an empty path segment: " + entry);

    json* cur = &doc;
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!cur->is_object())
            throw config_error("--set path " + path + " crosses a non-object value");
        cur = &(*cur)[parts[i]];
        if (cur->is_null()) *cur = json::object();
    }
    if (!cur->is_object())
        throw config_error("--set path " + path + " crosses a non-object value");
    (*cur)[parts.back()] = value;
}

RunConfig load_config(const std::string& config_path,
                      const std::vector<std::string>& set_overrides) {
    json doc = config_to_json(RunConfig{});

    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw config_error("cannot open config file: " + config_path);
        json file;
        try {
            in >> file;
        } catch (const json::exception& e) {
            throw config_error("malformed config file " + config_path + ": " + e.what());
        }
        if (!file.is_object())
            throw config_error("config file " + config_path + " must hold a JSON object");
        doc.merge_patch(file);
    }

    for (const std::string& entry : set_overrides) apply_set_override(doc, entry);

    return config_from_json(doc);
}

}  // namespace roda::cli
