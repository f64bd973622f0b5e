#include "azsl/experiment.hpp"

#include <charconv>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "azsl/bytes.hpp"
#include "azsl/error.hpp"
#include "azsl/rng.hpp"
#include "azsl/transport.hpp"

namespace azsl::cli {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// key = value lines

struct KeyValue {
    std::string key;
    std::string value;
    std::size_t line = 0;
};

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<KeyValue> read_pairs(const std::string& text) {
    std::vector<KeyValue> out;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
        const std::string s = trim(raw);
        if (s.empty()) continue;
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line);
        KeyValue kv{trim(std::string_view(s).substr(0, eq)), trim(std::string_view(s).substr(eq + 1)), line};
        if (kv.key.empty()) throw ConfigError("empty key", line);
        if (!seen.insert(kv.key).second) throw ConfigError("duplicate key '" + kv.key + "'", line);
        out.push_back(std::move(kv));
    }
    return out;
}

template <class T>
T parse_number(const KeyValue& kv) {
    T v{};
    const char* b = kv.value.data();
    const char* e = b + kv.value.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e || kv.value.empty()) {
        throw ConfigError(kv.key + ": cannot parse '" + kv.value + "' as a number", kv.line);
    }
    return v;
}

std::size_t parse_count(const KeyValue& kv) { return parse_number<std::size_t>(kv); }

double parse_real(const KeyValue& kv) {
    const double v = parse_number<double>(kv);
    if (!std::isfinite(v)) throw ConfigError(kv.key + ": value must be finite", kv.line);
    return v;
}

bool parse_bool(const KeyValue& kv) {
    if (kv.value == "true" || kv.value == "1" || kv.value == "yes") return true;
    if (kv.value == "false" || kv.value == "0" || kv.value == "no") return false;
    throw ConfigError(kv.key + ": expected true or false", kv.line);
}

template <class T>
std::vector<T> parse_list(const KeyValue& kv) {
    std::vector<T> out;
    std::string item;
    std::istringstream in(kv.value);
    while (std::getline(in, item, ',')) {
        out.push_back(parse_number<T>(KeyValue{kv.key, trim(item), kv.line}));
    }
    if (out.empty()) throw ConfigError(kv.key + ": empty list", kv.line);
    return out;
}

std::string real(double v) {
    char buf[32];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <class T>
std::string list(const std::vector<T>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
    return s;
}

fs::path resolve(const fs::path& base, const std::string& value) {
    fs::path p(value);
    if (p.is_relative() && !base.empty()) p = base / p;
    return p.lexically_normal();
}

// ---------------------------------------------------------------------------
// Config keys

struct Key {
    const char* name;
    std::function<void(ExperimentConfig&, const KeyValue&, const fs::path&)> set;
    std::function<std::optional<std::string>(const ExperimentConfig&)> get;
};

std::optional<std::string> some(std::string s) { return s; }

const std::vector<Key>& keys() {
    using C = ExperimentConfig;
    using KV = KeyValue;
    using P = fs::path;
    auto synth = [](const C& c) { return c.source == DataSource::Synthetic; };
    static const std::vector<Key> table = {
        {"dataset.source",
         [](C& c, const KV& kv, const P&) {
             if (kv.value == "synthetic") c.source = DataSource::Synthetic;
             else if (kv.value == "file") c.source = DataSource::File;
             else throw ConfigError("dataset.source: expected synthetic or file", kv.line);
         },
         [](const C& c) { return some(c.source == DataSource::Synthetic ? "synthetic" : "file"); }},
        {"dataset.path", [](C& c, const KV& kv, const P& b) { c.dataset_path = resolve(b, kv.value); },
         [](const C& c) -> std::optional<std::string> {
             if (c.dataset_path.empty()) return std::nullopt;
             return c.dataset_path.string();
         }},
        {"dataset.eval_features",
         [](C& c, const KV& kv, const P& b) { c.eval_features_path = resolve(b, kv.value); },
         [](const C& c) -> std::optional<std::string> {
             if (c.eval_features_path.empty()) return std::nullopt;
             return c.eval_features_path.string();
         }},
        {"synthetic.num_classes", [](C& c, const KV& kv, const P&) { c.synthetic.num_classes = parse_count(kv); },
         [synth](const C& c) -> std::optional<std::string> {
             if (!synth(c)) return std::nullopt;
             return std::to_string(c.synthetic.num_classes);
         }},
        {"synthetic.seen_count", [](C& c, const KV& kv, const P&) { c.synthetic.seen_count = parse_count(kv); },
         [synth](const C& c) -> std::optional<std::string> {
             if (!synth(c)) return std::nullopt;
             return std::to_string(c.synthetic.seen_count);
         }},
        {"synthetic.feature_dim", [](C& c, const KV& kv, const P&) { c.synthetic.feature_dim = parse_count(kv); },
         [synth](const C& c) -> std::optional<std::string> {
             if (!synth(c)) return std::nullopt;
             return std::to_string(c.synthetic.feature_dim);
         }},
        {"synthetic.semantic_dim", [](C& c, const KV& kv, const P&) { c.synthetic.semantic_dim = parse_count(kv); },
         [synth](const C& c) -> std::optional<std::string> {
             if (!synth(c)) return std::nullopt;
             return std::to_string(c.synthetic.semantic_dim);
         }},
        {"synthetic.per_class", [](C& c, const KV& kv, const P&) { c.synthetic.per_class = parse_count(kv); },
         [synth](const C& c) -> std::optional<std::string> {
             if (!synth(c)) return std::nullopt;
             return std::to_string(c.synthetic.per_class);
         }},
        {"synthetic.separation", [](C& c, const KV& kv, const P&) { c.synthetic.separation = parse_real(kv); },
         [synth](const C& c) -> std::optional<std::string> {
             if (!synth(c)) return std::nullopt;
             return real(c.synthetic.separation);
         }},
        {"synthetic.noise", [](C& c, const KV& kv, const P&) { c.synthetic.noise = parse_real(kv); },
         [synth](const C& c) -> std::optional<std::string> {
             if (!synth(c)) return std::nullopt;
             return real(c.synthetic.noise);
         }},
        {"synthetic.linkage_seed",
         [](C& c, const KV& kv, const P&) { c.synthetic.linkage_seed = parse_number<std::uint64_t>(kv); },
         [synth](const C& c) -> std::optional<std::string> {
             if (!synth(c)) return std::nullopt;
             return std::to_string(c.synthetic.linkage_seed);
         }},
        {"split.unseen", [](C& c, const KV& kv, const P&) { c.unseen = parse_list<ClassId>(kv); },
         [](const C& c) -> std::optional<std::string> {
             if (c.unseen.empty()) return std::nullopt;
             return list(c.unseen);
         }},
        {"split.unseen_count", [](C& c, const KV& kv, const P&) { c.unseen_count = parse_count(kv); },
         [](const C& c) -> std::optional<std::string> {
             if (!c.unseen_count) return std::nullopt;
             return std::to_string(*c.unseen_count);
         }},
        {"split.train_ratio", [](C& c, const KV& kv, const P&) { c.train_ratio = parse_real(kv); },
         [](const C& c) { return some(real(c.train_ratio)); }},
        {"teacher_mode",
         [](C& c, const KV& kv, const P&) {
             if (kv.value == "inductive") c.teacher_mode = data::TeacherMode::Inductive;
             else if (kv.value == "transductive") c.teacher_mode = data::TeacherMode::Transductive;
             else throw ConfigError("teacher_mode: expected inductive or transductive", kv.line);
         },
         [](const C& c) { return some(std::string(data::to_string(c.teacher_mode))); }},
        {"scenario",
         [](C& c, const KV& kv, const P&) {
             try {
                 c.scenario = wire::parse_scenario(kv.value);
             } catch (const Error&) {
                 throw ConfigError("scenario: expected whitebox or blackbox", kv.line);
             }
         },
         [](const C& c) { return some(std::string(wire::to_string(c.scenario))); }},
        {"teacher.hidden", [](C& c, const KV& kv, const P&) { c.teacher.hidden = parse_list<std::size_t>(kv); },
         [](const C& c) { return some(list(c.teacher.hidden)); }},
        {"teacher.epochs", [](C& c, const KV& kv, const P&) { c.teacher.epochs = parse_count(kv); },
         [](const C& c) { return some(std::to_string(c.teacher.epochs)); }},
        {"teacher.batch_size", [](C& c, const KV& kv, const P&) { c.teacher.batch_size = parse_count(kv); },
         [](const C& c) { return some(std::to_string(c.teacher.batch_size)); }},
        {"teacher.learning_rate", [](C& c, const KV& kv, const P&) { c.teacher.learning_rate = parse_real(kv); },
         [](const C& c) { return some(real(c.teacher.learning_rate)); }},
        {"regularizer.kind",
         [](C& c, const KV& kv, const P&) {
             try {
                 c.regularizer = server::parse_regularizer(kv.value);
             } catch (const Error&) {
                 throw ConfigError("regularizer.kind: expected none, kl or mmd", kv.line);
             }
         },
         [](const C& c) { return some(std::string(server::to_string(c.regularizer))); }},
        {"regularizer.alpha", [](C& c, const KV& kv, const P&) { c.train.alpha = parse_real(kv); },
         [](const C& c) { return some(real(c.train.alpha)); }},
        {"noise.dim", [](C& c, const KV& kv, const P&) { c.train.noise.dim = parse_count(kv); },
         [](const C& c) { return some(std::to_string(c.train.noise.dim)); }},
        {"generator.hidden",
         [](C& c, const KV& kv, const P&) { c.train.generator_hidden = parse_list<std::size_t>(kv); },
         [](const C& c) { return some(list(c.train.generator_hidden)); }},
        {"train.gen_epochs", [](C& c, const KV& kv, const P&) { c.train.gen_epochs = parse_count(kv); },
         [](const C& c) { return some(std::to_string(c.train.gen_epochs)); }},
        {"train.student_epochs", [](C& c, const KV& kv, const P&) { c.train.student_epochs = parse_count(kv); },
         [](const C& c) { return some(std::to_string(c.train.student_epochs)); }},
        {"train.classifier_epochs",
         [](C& c, const KV& kv, const P&) { c.train.classifier_epochs = parse_count(kv); },
         [](const C& c) { return some(std::to_string(c.train.classifier_epochs)); }},
        {"train.batch_size", [](C& c, const KV& kv, const P&) { c.train.batch_size = parse_count(kv); },
         [](const C& c) { return some(std::to_string(c.train.batch_size)); }},
        {"train.per_class_count", [](C& c, const KV& kv, const P&) { c.train.per_class_count = parse_count(kv); },
         [](const C& c) { return some(std::to_string(c.train.per_class_count)); }},
        {"train.min_verified_per_class",
         [](C& c, const KV& kv, const P&) { c.train.min_verified_per_class = parse_count(kv); },
         [](const C& c) { return some(std::to_string(c.train.min_verified_per_class)); }},
        {"train.regen_retry_cap", [](C& c, const KV& kv, const P&) { c.train.regen_retry_cap = parse_count(kv); },
         [](const C& c) { return some(std::to_string(c.train.regen_retry_cap)); }},
        {"train.verify_chunk", [](C& c, const KV& kv, const P&) { c.train.verify_chunk = parse_count(kv); },
         [](const C& c) { return some(std::to_string(c.train.verify_chunk)); }},
        {"train.verify", [](C& c, const KV& kv, const P&) { c.train.verify = parse_bool(kv); },
         [](const C& c) { return some(c.train.verify ? "true" : "false"); }},
        {"train.learning_rate",
         [](C& c, const KV& kv, const P&) {
             c.train.gen_lr = c.train.student_lr = c.train.classifier_lr = parse_real(kv);
         },
         [](const C& c) { return some(real(c.train.gen_lr)); }},
        {"eval.masked", [](C& c, const KV& kv, const P&) { c.masked_czsl = parse_bool(kv); },
         [](const C& c) { return some(c.masked_czsl ? "true" : "false"); }},
        {"channel.mode",
         [](C& c, const KV& kv, const P&) {
             if (kv.value == "in-process") c.channel = ChannelMode::InProcess;
             else if (kv.value == "tcp") c.channel = ChannelMode::Tcp;
             else throw ConfigError("channel.mode: expected in-process or tcp", kv.line);
         },
         [](const C& c) { return some(c.channel == ChannelMode::InProcess ? "in-process" : "tcp"); }},
        {"channel.endpoint",
         [](C& c, const KV& kv, const P&) {
             const auto colon = kv.value.rfind(':');
             if (colon == std::string::npos || colon == 0) {
                 throw ConfigError("channel.endpoint: expected host:port", kv.line);
             }
             const std::size_t port = parse_count(KeyValue{kv.key, kv.value.substr(colon + 1), kv.line});
             if (port > 65535) throw ConfigError("channel.endpoint: port out of range", kv.line);
             c.host = kv.value.substr(0, colon);
             c.port = static_cast<std::uint16_t>(port);
         },
         [](const C& c) { return some(c.host + ":" + std::to_string(c.port)); }},
        {"output.dir", [](C& c, const KV& kv, const P&) { c.output_dir = kv.value; },
         [](const C& c) { return some(c.output_dir.string()); }},
        {"seed", [](C& c, const KV& kv, const P&) { c.seed = parse_number<std::uint64_t>(kv); },
         [](const C& c) { return some(std::to_string(c.seed)); }},
    };
    return table;
}

const Key* find_key(const std::string& name) {
    for (const auto& k : keys()) {
        if (name == k.name) return &k;
    }
    return nullptr;
}

void validate(const ExperimentConfig& c, const std::map<std::string, std::size_t>& lines) {
    auto line_of = [&](const std::string& key) {
        auto it = lines.find(key);
        return it == lines.end() ? std::size_t{0} : it->second;
    };
    for (const char* req : {"dataset.source", "scenario", "teacher_mode"}) {
        if (!lines.count(req)) throw ConfigError(std::string("missing required key '") + req + "'", 0);
    }
    if (c.source == DataSource::File) {
        if (c.dataset_path.empty()) throw ConfigError("dataset.path is required for a file source", line_of("dataset.source"));
        for (const auto& [k, l] : lines) {
            if (k.rfind("synthetic.", 0) == 0) throw ConfigError(k + " given with dataset.source = file", l);
        }
        if (!fs::exists(c.dataset_path)) {
            throw ConfigError("dataset.path: no such file " + c.dataset_path.string(), line_of("dataset.path"));
        }
        if (c.unseen.empty() && !c.unseen_count) {
            throw ConfigError("file datasets need split.unseen or split.unseen_count", line_of("dataset.source"));
        }
    } else {
        if (!c.dataset_path.empty()) throw ConfigError("dataset.path given with dataset.source = synthetic", line_of("dataset.path"));
        try {
            c.synthetic.validate();
        } catch (const Error& e) {
            throw ConfigError(std::string("synthetic: ") + e.what(), line_of("dataset.source"));
        }
        for (ClassId u : c.unseen) {
            if (u >= c.synthetic.num_classes) {
                throw ConfigError("split.unseen: class " + std::to_string(u) + " out of range", line_of("split.unseen"));
            }
        }
    }
    if (!c.eval_features_path.empty() && !fs::exists(c.eval_features_path)) {
        throw ConfigError("dataset.eval_features: no such file " + c.eval_features_path.string(),
                          line_of("dataset.eval_features"));
    }
    if (!c.unseen.empty() && c.unseen_count) {
        throw ConfigError("give split.unseen or split.unseen_count, not both", line_of("split.unseen_count"));
    }
    if (!(c.train_ratio > 0.0 && c.train_ratio < 1.0)) {
        throw ConfigError("split.train_ratio must be in (0, 1)", line_of("split.train_ratio"));
    }
    if (c.train.alpha < 0.0) throw ConfigError("regularizer.alpha must be >= 0", line_of("regularizer.alpha"));
    if (c.teacher.epochs == 0 || c.teacher.batch_size == 0 || !(c.teacher.learning_rate > 0.0)) {
        throw ConfigError("teacher epochs, batch_size and learning_rate must be positive", line_of("teacher.epochs"));
    }
    for (std::size_t h : c.teacher.hidden) {
        if (h == 0) throw ConfigError("teacher.hidden widths must be >= 1", line_of("teacher.hidden"));
    }
    for (std::size_t h : c.train.generator_hidden) {
        if (h == 0) throw ConfigError("generator.hidden widths must be >= 1", line_of("generator.hidden"));
    }
    try {
        c.train.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what(), 0);
    }
}

void sync_derived(ExperimentConfig& c) {
    c.train.student_hidden = c.teacher.hidden;
    c.train.scenario = c.scenario;
    c.train.teacher_mode = c.teacher_mode;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string(), 0);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const fs::path& base_dir) {
    ExperimentConfig c;
    std::map<std::string, std::size_t> lines;
    for (const auto& kv : read_pairs(text)) {
        const Key* k = find_key(kv.key);
        if (!k) throw ConfigError("unknown key '" + kv.key + "'", kv.line);
        k->set(c, kv, base_dir);
        lines[kv.key] = kv.line;
    }
    validate(c, lines);
    sync_derived(c);
    return c;
}

ExperimentConfig parse_config(const fs::path& path) {
    return parse_config_text(read_file(path), path.parent_path());
}

std::string emit_config(const ExperimentConfig& cfg) {
    std::string s;
    for (const auto& k : keys()) {
        if (auto v = k.get(cfg)) s += std::string(k.name) + " = " + *v + "\n";
    }
    return s;
}

DataSpecFile parse_data_spec(const fs::path& path) {
    DataSpecFile out;
    ExperimentConfig c;
    for (const auto& kv : read_pairs(read_file(path))) {
        if (kv.key == "seed") {
            out.seed = parse_number<std::uint64_t>(kv);
            continue;
        }
        const Key* k = kv.key.rfind("synthetic.", 0) == 0 ? find_key(kv.key) : nullptr;
        if (!k) throw ConfigError("unknown key '" + kv.key + "' in data spec", kv.line);
        k->set(c, kv, {});
    }
    try {
        c.synthetic.validate();
    } catch (const Error& e) {
        throw ConfigError(e.what(), 0);
    }
    out.spec = c.synthetic;
    return out;
}

void apply_env_overrides(ExperimentConfig& cfg) {
    const char* env = std::getenv("AZSL_SEED");
    if (!env || !*env) return;
    cfg.seed = parse_number<std::uint64_t>(KeyValue{"AZSL_SEED", env, 0});
}

// ---------------------------------------------------------------------------
// Seeds

RunSeeds RunSeeds::from_master(std::uint64_t master) {
    return {derive_seed(master, 100), derive_seed(master, 101), derive_seed(master, 102),
            derive_seed(master, 103), derive_seed(master, 104)};
}

std::vector<std::pair<std::string, std::uint64_t>> RunSeeds::named() const {
    return {{"data", data}, {"split", split}, {"teacher", teacher}, {"regularizer", regularizer}, {"client", client}};
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

std::vector<ClassId> unseen_classes(const ExperimentConfig& cfg, std::size_t num_classes) {
    if (!cfg.unseen.empty()) return cfg.unseen;
    std::size_t count = cfg.unseen_count ? *cfg.unseen_count : num_classes - cfg.synthetic.seen_count;
    if (count == 0 || count >= num_classes) throw ConfigError("unseen class count must be in [1, C)", 0);
    return data::trailing_unseen(num_classes, num_classes - count);
}

data::Dataset load_dataset(const ExperimentConfig& cfg, const RunSeeds& seeds) {
    if (cfg.source == DataSource::Synthetic) return data::make_synthetic(cfg.synthetic, seeds.data);
    return data::load_features(cfg.dataset_path, data::format_from_extension(cfg.dataset_path));
}

// Client-side evaluation data for remote runs.
void client_eval_data(const ExperimentConfig& cfg, const RunSeeds& seeds, data::Dataset& ds,
                      data::SplitBundle& split) {
    if (cfg.source == DataSource::Synthetic) {
        ds = data::make_synthetic(cfg.synthetic, seeds.data);
        split = data::split_azsl(ds, cfg.teacher_mode, unseen_classes(cfg, ds.num_classes()), cfg.train_ratio,
                                 seeds.split);
        return;
    }
    if (cfg.eval_features_path.empty()) {
        throw ConfigError("remote runs over file datasets need dataset.eval_features", 0);
    }
    ds = data::load_features(cfg.eval_features_path, data::format_from_extension(cfg.eval_features_path));
    split = {};
    split.unseen_classes = unseen_classes(cfg, ds.num_classes());
    std::sort(split.unseen_classes.begin(), split.unseen_classes.end());
    for (ClassId c = 0; c < ds.num_classes(); ++c) {
        if (!std::binary_search(split.unseen_classes.begin(), split.unseen_classes.end(), c)) {
            split.seen_classes.push_back(c);
        }
    }
    for (std::size_t r = 0; r < ds.size(); ++r) {
        const bool unseen =
            std::binary_search(split.unseen_classes.begin(), split.unseen_classes.end(), ds.labels[r]);
        (unseen ? split.client_eval_unseen : split.client_eval_seen).push_back(r);
    }
    split.teacher_mode = cfg.teacher_mode;
    split.train_ratio = cfg.train_ratio;
    split.seed = seeds.split;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << text;
    if (!f) throw Error("cannot write " + path.string());
}

std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace

ServerSide build_server_side(const ExperimentConfig& cfg, const RunSeeds& seeds) {
    ServerSide s;
    s.dataset = load_dataset(cfg, seeds);
    s.split = data::split_azsl(s.dataset, cfg.teacher_mode, unseen_classes(cfg, s.dataset.num_classes()),
                               cfg.train_ratio, seeds.split);
    s.teacher = server::train_teacher(s.dataset, s.split, cfg.teacher, seeds.teacher);
    s.regularizer = server::fit_regularizer(s.dataset, s.split, cfg.regularizer, cfg.train.alpha, seeds.regularizer);

    std::vector<std::size_t> rows = s.split.client_eval_seen;
    if (cfg.teacher_mode == data::TeacherMode::Transductive) {
        rows.insert(rows.end(), s.split.client_eval_unseen.begin(), s.split.client_eval_unseen.end());
    }
    if (!rows.empty()) {
        const auto preds = server::teacher_predict(s.teacher, num::select_rows(s.dataset.features, rows));
        std::vector<ClassId> labels;
        for (std::size_t r : rows) labels.push_back(s.dataset.labels[r]);
        s.teacher_test_accuracy = eval::per_class_top1(preds, labels, s.teacher.class_space);
    }
    return s;
}

RunResult run_experiment(const ExperimentConfig& cfg, const RunSeeds& seeds, const fs::path& out_dir) {
    client::TrainConfig train = cfg.train;
    train.seed = seeds.client;

    RunResult result;
    data::Dataset eval_ds;
    data::SplitBundle eval_split;
    if (cfg.channel == ChannelMode::InProcess) {
        ServerSide side = build_server_side(cfg, seeds);
        result.teacher_test_accuracy = side.teacher_test_accuracy;
        auto srv = std::make_shared<server::TeacherServer>(side.teacher, side.regularizer);
        InProcessChannel channel(srv);
        const auto task = client::make_task(side.dataset.semantics, side.split, side.dataset.feature_dim());
        result.bundle = client::run_algorithm1(channel, task, train);
        eval_ds = std::move(side.dataset);
        eval_split = std::move(side.split);
    } else {
        client_eval_data(cfg, seeds, eval_ds, eval_split);
        TcpChannel channel(cfg.host, cfg.port);
        const auto task = client::make_task(eval_ds.semantics, eval_split, eval_ds.feature_dim());
        result.bundle = client::run_algorithm1(channel, task, train);
    }

    result.czsl = eval::eval_czsl(result.bundle, eval_split, eval_ds, cfg.scenario, cfg.masked_czsl);
    result.gzsl = eval::eval_gzsl(result.bundle, eval_split, eval_ds, cfg.scenario);
    auto named = seeds.named();
    named.insert(named.begin(), {"master", cfg.seed});
    result.czsl.seeds = named;
    result.gzsl.seeds = named;

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        client::save_bundle(result.bundle, out_dir);
        write_text(out_dir / "config.txt", emit_config(cfg));
        std::string seeds_txt;
        for (const auto& [k, v] : named) seeds_txt += k + " = " + std::to_string(v) + "\n";
        write_text(out_dir / "seeds.txt", seeds_txt);
        write_text(out_dir / "report_czsl.txt", result.czsl.to_text());
        write_text(out_dir / "report_gzsl.txt", result.gzsl.to_text());
        if (result.teacher_test_accuracy) {
            write_text(out_dir / "teacher.txt", "test_accuracy: " + fixed2(*result.teacher_test_accuracy) + "\n");
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Commands

int report_failure(std::ostream& err) {
    try {
        throw;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ProtocolError& e) {
        err << "protocol error (code " << e.code() << "): " << e.what() << "\n";
        return kExitProtocol;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

int cmd_run(const fs::path& config_path, std::ostream& out, std::ostream& err) {
    try {
        auto cfg = parse_config(config_path);
        apply_env_overrides(cfg);
        const auto res = run_experiment(cfg, RunSeeds::from_master(cfg.seed), cfg.output_dir);
        out << "CZSL u=" << fixed2(res.czsl.u) << "\n";
        out << "GZSL u=" << fixed2(res.gzsl.u) << " s=" << fixed2(res.gzsl.s) << " H=" << fixed2(res.gzsl.H) << "\n";
        out << "wrote " << cfg.output_dir.string() << "\n";
        return kExitOk;
    } catch (...) {
        return report_failure(err);
    }
}

namespace {

std::atomic<bool> g_signal_stop{false};

extern "C" void on_signal(int) { g_signal_stop.store(true); }

}  // namespace

int cmd_serve(const fs::path& config_path, std::ostream& out, std::ostream& err, const std::atomic<bool>* stop) {
    try {
        auto cfg = parse_config(config_path);
        apply_env_overrides(cfg);
        ServerSide side = build_server_side(cfg, RunSeeds::from_master(cfg.seed));
        auto srv = std::make_shared<server::TeacherServer>(side.teacher, side.regularizer);
        RiskLog log;
        TcpServer server(srv, log, cfg.host, cfg.port);
        out << "teacher test accuracy " << fixed2(side.teacher_test_accuracy) << "\n";
        out << "listening on " << cfg.host << ":" << server.port() << std::endl;

        if (!stop) {
            g_signal_stop.store(false);
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
        }
        std::exception_ptr failure;
        try {
            server.serve(stop ? stop : &g_signal_stop);
        } catch (...) {
            failure = std::current_exception();
        }
        fs::create_directories(cfg.output_dir);
        const fs::path transcript = cfg.output_dir / "server_transcript.json";
        log.save(transcript);
        out << "served " << server.frames_handled() << " frames; transcript " << transcript.string() << std::endl;
        if (failure) std::rethrow_exception(failure);
        return kExitOk;
    } catch (...) {
        return report_failure(err);
    }
}

AuditSummary audit(const RiskLog& log) {
    AuditSummary s;
    for (const auto& e : log.entries()) {
        ++s.messages;
        if (e.direction == Direction::Up) {
            ++s.up;
            s.bytes_up += e.bytes;
        } else {
            ++s.down;
            s.bytes_down += e.bytes;
        }
        ++s.kinds[e.kind];
        if (e.risk == wire::Risk::Mid) {
            ++s.mid;
            ++s.mid_kinds[e.kind];
        } else {
            ++s.low;
        }
    }
    return s;
}

std::string AuditSummary::verdict() const {
    if (mid == 0) return "BLACKBOX-CLEAN";
    return "WHITEBOX (" + std::to_string(mid) + " mid-risk messages)";
}

int cmd_audit(const fs::path& transcript, std::ostream& out, std::ostream& err) {
    try {
        const auto s = audit(RiskLog::load(transcript));
        out << "messages: " << s.messages << " (up " << s.up << ", down " << s.down << ")\n";
        out << "bytes: up " << s.bytes_up << ", down " << s.bytes_down << "\n";
        out << "risk: low " << s.low << ", mid " << s.mid << "\n";
        for (const auto& [k, n] : s.kinds) out << "kind " << k << ": " << n << "\n";
        for (const auto& [k, n] : s.mid_kinds) out << "mid-risk " << k << ": " << n << "\n";
        out << s.verdict() << "\n";
        return kExitOk;
    } catch (...) {
        return report_failure(err);
    }
}

namespace {

void set_sweep_param(ExperimentConfig& cfg, const std::string& param, const std::string& value) {
    const KeyValue kv{param, value, 0};
    if (param == "noise_dim" || param == "noise.dim") {
        cfg.train.noise.dim = parse_count(kv);
        if (cfg.train.noise.dim == 0) throw ConfigError("noise_dim must be >= 1", 0);
    } else if (param == "alpha" || param == "regularizer.alpha") {
        cfg.train.alpha = parse_real(kv);
        if (cfg.train.alpha < 0.0) throw ConfigError("alpha must be >= 0", 0);
    } else {
        throw ConfigError("sweep parameter must be noise_dim or alpha, got '" + param + "'", 0);
    }
}

}  // namespace

std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const std::string& param,
                                const std::vector<std::string>& values) {
    if (values.empty()) throw ConfigError("sweep needs at least one value", 0);
    const RunSeeds shared = RunSeeds::from_master(base.seed);
    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < values.size(); ++i) {
        ExperimentConfig cfg = base;
        set_sweep_param(cfg, param, values[i]);
        RunSeeds seeds = shared;
        const std::uint64_t cell = derive_seed(derive_seed(base.seed, 200), i);
        seeds.teacher = derive_seed(cell, 1);
        seeds.regularizer = derive_seed(cell, 2);
        seeds.client = derive_seed(cell, 3);
        const fs::path dir = base.output_dir / ("sweep-" + param) / ("cell-" + std::to_string(i) + "-" + values[i]);
        const auto res = run_experiment(cfg, seeds, dir);
        rows.push_back({values[i], res.gzsl.u, res.gzsl.s, res.gzsl.H});
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string s = "value,u,s,H\n";
    for (const auto& r : rows) s += r.value + "," + real(r.u) + "," + real(r.s) + "," + real(r.H) + "\n";
    return s;
}

int cmd_sweep(const fs::path& config_path, const std::string& param, const std::vector<std::string>& values,
              std::ostream& out, std::ostream& err) {
    try {
        auto cfg = parse_config(config_path);
        apply_env_overrides(cfg);
        const std::string csv = sweep_csv(run_sweep(cfg, param, values));
        fs::create_directories(cfg.output_dir);
        write_text(cfg.output_dir / ("sweep-" + param + ".csv"), csv);
        out << csv;
        return kExitOk;
    } catch (...) {
        return report_failure(err);
    }
}

int cmd_gen_data(const fs::path& spec_path, const fs::path& out_path, std::ostream& out, std::ostream& err) {
    try {
        const auto spec = parse_data_spec(spec_path);
        const auto ds = data::make_synthetic(spec.spec, spec.seed);
        if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
        data::save_features(ds, out_path, data::format_from_extension(out_path));
        out << "wrote " << ds.size() << " rows, " << ds.num_classes() << " classes to " << out_path.string() << "\n";
        return kExitOk;
    } catch (...) {
        return report_failure(err);
    }
}

}  // namespace azsl::cli
