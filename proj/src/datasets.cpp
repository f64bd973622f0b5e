#include "azsl/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "azsl/bytes.hpp"
#include "azsl/error.hpp"
#include "azsl/rng.hpp"

namespace azsl::data {

namespace {

constexpr char kAzbMagic[4] = {'A', 'Z', 'B', '1'};

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

double parse_real(const std::string& cell, std::size_t line) {
    const std::string t = trim(cell);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || ptr != t.data() + t.size()) {
        throw ParseError("not a number: '" + t + "'", line);
    }
    if (!std::isfinite(v)) throw ParseError("non-finite value '" + t + "'", line);
    return v;
}

std::string format_real(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

// Reads `<key>,<prefix>0,<prefix>1,...` style csv into (keys, matrix).
struct KeyedRows {
    std::vector<std::string> keys;
    num::Matrix values;
};

KeyedRows read_keyed_csv(const std::filesystem::path& path, std::string_view key_name) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string(), 0);
    std::string line;
    std::size_t lineno = 0;
    std::size_t width = 0;
    bool have_header = false;
    KeyedRows out;
    std::vector<double> data;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto cells = split_csv(line);
        if (!have_header) {
            if (cells.size() < 2 || trim(cells[0]) != key_name) {
                throw ParseError(path.filename().string() + ": header must start with '" +
                                     std::string(key_name) + "' followed by value columns",
                                 lineno);
            }
            width = cells.size() - 1;
            have_header = true;
            continue;
        }
        if (cells.size() != width + 1) {
            throw ParseError(path.filename().string() + ": expected " + std::to_string(width + 1) +
                                 " columns, found " + std::to_string(cells.size()),
                             lineno);
        }
        out.keys.push_back(trim(cells[0]));
        for (std::size_t c = 1; c < cells.size(); ++c) data.push_back(parse_real(cells[c], lineno));
    }
    if (out.keys.empty()) throw ParseError(path.filename().string() + ": no rows", 0);
    out.values = num::Matrix(out.keys.size(), width, std::move(data));
    return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string(), 0);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + path.string());
}

struct AzbHeader {
    std::uint32_t n, d_x, c, d_a;
};

AzbHeader read_azb_header(ByteReader& r, std::size_t file_size) {
    if (file_size == 0) throw ParseError("no rows", 0);
    auto magic = r.bytes(4);
    if (!std::equal(magic.begin(), magic.end(), kAzbMagic)) throw ParseError("bad AZB magic", 0);
    AzbHeader h{r.u32(), r.u32(), r.u32(), r.u32()};
    if (h.n == 0) throw ParseError("no rows", 0);
    if (h.d_x == 0 || h.d_a == 0 || h.c == 0) throw ParseError("zero dimension in AZB header", 0);
    return h;
}

std::vector<std::string> default_names(std::size_t c) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < c; ++i) names.push_back(std::to_string(i));
    return names;
}

}  // namespace

// ---------------------------------------------------------------------------

void Dataset::validate() const {
    if (features.rows() != labels.size()) {
        throw ParseError("features have " + std::to_string(features.rows()) + " rows but " +
                             std::to_string(labels.size()) + " labels",
                         0);
    }
    if (feature_dim() == 0) throw ParseError("feature dimension is zero", 0);
    if (semantic_dim() == 0) throw ParseError("semantic dimension is zero", 0);
    if (class_names.size() != num_classes()) {
        throw ParseError("class name count does not match semantic rows", 0);
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes()) {
            throw ParseError("label " + std::to_string(labels[i]) + " has no semantic row", i + 1);
        }
    }
    for (std::size_t r = 0; r < features.rows(); ++r) {
        for (double v : features.row(r)) {
            if (!std::isfinite(v)) throw ParseError("non-finite feature value", r + 1);
        }
    }
    if (!semantics.rows.all_finite()) throw ParseError("non-finite semantic value", 0);
}

bool Dataset::operator==(const Dataset& o) const {
    return features == o.features && labels == o.labels && semantics.rows == o.semantics.rows &&
           class_names == o.class_names;
}

void SyntheticSpec::validate() const {
    if (num_classes < 2 || seen_count < 1 || seen_count >= num_classes) {
        throw Error("synthetic spec: need 1 <= seen_count < num_classes");
    }
    if (feature_dim == 0 || semantic_dim == 0 || per_class == 0) {
        throw Error("synthetic spec: counts must be >= 1");
    }
    if (!(separation > 0.0) || !(noise >= 0.0)) {
        throw Error("synthetic spec: separation must be > 0 and noise >= 0");
    }
}

num::Matrix synthetic_class_means(const SyntheticSpec& spec, const SemanticTable& semantics) {
    Rng link(spec.linkage_seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(spec.semantic_dim));
    num::Matrix linkage(spec.semantic_dim, spec.feature_dim);
    for (double& v : linkage.data()) v = scale * link.normal();
    num::Matrix means = num::matmul(semantics.rows, linkage);
    for (double& v : means.data()) v = spec.separation * std::max(v, 0.0);
    return means;
}

Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    Dataset ds;
    ds.semantics.source = SemanticSource::Synthetic;
    ds.semantics.rows = num::Matrix(spec.num_classes, spec.semantic_dim);
    for (double& v : ds.semantics.rows.data()) v = rng.normal();
    ds.class_names = default_names(spec.num_classes);

    const num::Matrix means = synthetic_class_means(spec, ds.semantics);
    const std::size_t n = spec.num_classes * spec.per_class;
    ds.features = num::Matrix(n, spec.feature_dim);
    ds.labels.reserve(n);
    std::size_t r = 0;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t i = 0; i < spec.per_class; ++i, ++r) {
            auto row = ds.features.row(r);
            auto mean = means.row(c);
            for (std::size_t j = 0; j < row.size(); ++j) {
                const double eps = spec.noise > 0.0 ? spec.noise * rng.normal() : 0.0;
                row[j] = std::max(mean[j] + eps, 0.0);
            }
            ds.labels.push_back(static_cast<ClassId>(c));
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Splits

std::string_view to_string(TeacherMode mode) {
    return mode == TeacherMode::Inductive ? "inductive" : "transductive";
}

std::vector<ClassId> SplitBundle::all_classes() const {
    std::vector<ClassId> all = seen_classes;
    all.insert(all.end(), unseen_classes.begin(), unseen_classes.end());
    std::sort(all.begin(), all.end());
    return all;
}

std::vector<ClassId> SplitBundle::teacher_classes() const {
    return teacher_mode == TeacherMode::Inductive ? seen_classes : all_classes();
}

std::size_t eval_count(std::size_t rows, double train_ratio) {
    // Small slack so 100 * 0.2 does not floor to 19 through rounding.
    return static_cast<std::size_t>(
        std::floor(static_cast<double>(rows) * (1.0 - train_ratio) + 1e-9));
}

std::vector<ClassId> trailing_unseen(std::size_t num_classes, std::size_t seen_count) {
    std::vector<ClassId> out;
    for (std::size_t c = seen_count; c < num_classes; ++c) out.push_back(static_cast<ClassId>(c));
    return out;
}

SplitBundle split_azsl(const Dataset& dataset, TeacherMode mode,
                       const std::vector<ClassId>& unseen_classes, double train_ratio,
                       std::uint64_t seed) {
    const std::size_t c = dataset.num_classes();
    if (c < 2) throw Error("split: dataset needs at least 2 classes");
    if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw Error("split: ratio must be in (0,1)");

    std::set<ClassId> unseen(unseen_classes.begin(), unseen_classes.end());
    if (unseen.empty() || unseen.size() >= c) {
        throw Error("split: need at least one seen and one unseen class");
    }
    for (ClassId u : unseen) {
        if (u >= c) throw Error("split: unseen class " + std::to_string(u) + " out of range");
    }

    SplitBundle b;
    b.teacher_mode = mode;
    b.train_ratio = train_ratio;
    b.seed = seed;
    for (std::size_t k = 0; k < c; ++k) {
        (unseen.count(static_cast<ClassId>(k)) ? b.unseen_classes : b.seen_classes)
            .push_back(static_cast<ClassId>(k));
    }

    std::vector<std::vector<std::size_t>> rows_of(c);
    for (std::size_t i = 0; i < dataset.size(); ++i) rows_of[dataset.labels[i]].push_back(i);

    Rng rng(seed);
    for (std::size_t k = 0; k < c; ++k) {
        auto& rows = rows_of[k];
        const bool is_unseen = unseen.count(static_cast<ClassId>(k)) > 0;
        if (is_unseen && mode == TeacherMode::Inductive) {
            b.client_eval_unseen.insert(b.client_eval_unseen.end(), rows.begin(), rows.end());
            continue;
        }
        if (is_unseen && rows.size() < 2) {
            throw Error("split: unseen class " + std::to_string(k) + " has " +
                        std::to_string(rows.size()) + " rows; transductive split needs >= 2");
        }
        rng.shuffle(std::span(rows));
        const std::size_t n_eval = eval_count(rows.size(), train_ratio);
        const std::size_t n_train = rows.size() - n_eval;
        std::vector<std::size_t> train(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
        std::vector<std::size_t> eval(rows.begin() + static_cast<std::ptrdiff_t>(n_train), rows.end());
        std::sort(train.begin(), train.end());
        std::sort(eval.begin(), eval.end());
        b.teacher_train.insert(b.teacher_train.end(), train.begin(), train.end());
        auto& dst = is_unseen ? b.client_eval_unseen : b.client_eval_seen;
        dst.insert(dst.end(), eval.begin(), eval.end());
    }
    std::sort(b.teacher_train.begin(), b.teacher_train.end());
    std::sort(b.client_eval_seen.begin(), b.client_eval_seen.end());
    std::sort(b.client_eval_unseen.begin(), b.client_eval_unseen.end());
    return b;
}

// ---------------------------------------------------------------------------
// Files

std::filesystem::path semantics_path_for(const std::filesystem::path& features_csv) {
    auto p = features_csv;
    p.replace_extension(".sem.csv");
    return p;
}

FileFormat format_from_extension(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".csv") return FileFormat::Csv;
    if (ext == ".azb") return FileFormat::Azb;
    throw Error("unknown dataset extension '" + ext + "' (expected .csv or .azb)");
}

SemanticTable load_semantics(const std::filesystem::path& path, FileFormat format,
                             std::vector<std::string>* class_names) {
    if (format == FileFormat::Csv) {
        auto sem = read_keyed_csv(semantics_path_for(path), "class");
        if (class_names) *class_names = sem.keys;
        return SemanticTable{std::move(sem.values), SemanticSource::Unspecified};
    }
    const auto bytes = read_file(path);
    ByteReader r(bytes);
    const auto h = read_azb_header(r, bytes.size());
    r.bytes(static_cast<std::size_t>(h.n) * h.d_x * 8 + static_cast<std::size_t>(h.n) * 4);
    SemanticTable t{num::Matrix(h.c, h.d_a), SemanticSource::Unspecified};
    r.f64s(t.rows.data());
    if (class_names) *class_names = default_names(h.c);
    return t;
}

Dataset load_features(const std::filesystem::path& path, FileFormat format) {
    Dataset ds;
    if (format == FileFormat::Csv) {
        auto sem = read_keyed_csv(semantics_path_for(path), "class");
        std::map<std::string, ClassId> dense;
        for (std::size_t i = 0; i < sem.keys.size(); ++i) {
            if (!dense.emplace(sem.keys[i], static_cast<ClassId>(i)).second) {
                throw ParseError("duplicate class '" + sem.keys[i] + "' in semantics", i + 2);
            }
        }
        auto feats = read_keyed_csv(path, "label");
        for (std::size_t i = 0; i < feats.keys.size(); ++i) {
            auto it = dense.find(feats.keys[i]);
            if (it == dense.end()) {
                // +2: one for the header, one for 1-based numbering.
                throw ParseError("unknown class id '" + feats.keys[i] + "'", i + 2);
            }
            ds.labels.push_back(it->second);
        }
        ds.features = std::move(feats.values);
        ds.semantics = SemanticTable{std::move(sem.values), SemanticSource::Unspecified};
        ds.class_names = std::move(sem.keys);
    } else {
        const auto bytes = read_file(path);
        ByteReader r(bytes);
        const auto h = read_azb_header(r, bytes.size());
        ds.features = num::Matrix(h.n, h.d_x);
        r.f64s(ds.features.data());
        ds.labels.resize(h.n);
        for (std::size_t i = 0; i < h.n; ++i) {
            ds.labels[i] = r.u32();
            if (ds.labels[i] >= h.c) {
                throw ParseError("label " + std::to_string(ds.labels[i]) + " >= C", i + 1);
            }
        }
        ds.semantics = SemanticTable{num::Matrix(h.c, h.d_a), SemanticSource::Unspecified};
        r.f64s(ds.semantics.rows.data());
        r.expect_end();
        ds.class_names = default_names(h.c);
    }
    ds.validate();
    return ds;
}

void save_features(const Dataset& dataset, const std::filesystem::path& path, FileFormat format) {
    dataset.validate();
    if (format == FileFormat::Azb) {
        ByteWriter w;
        w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(kAzbMagic), 4));
        w.u32(static_cast<std::uint32_t>(dataset.size()));
        w.u32(static_cast<std::uint32_t>(dataset.feature_dim()));
        w.u32(static_cast<std::uint32_t>(dataset.num_classes()));
        w.u32(static_cast<std::uint32_t>(dataset.semantic_dim()));
        w.f64s(dataset.features.data());
        for (ClassId l : dataset.labels) w.u32(l);
        w.f64s(dataset.semantics.rows.data());
        write_file(path, w.buffer());
        return;
    }
    auto write_csv = [](const std::filesystem::path& p, std::string_view key,
                        std::string_view prefix, const num::Matrix& m, auto key_of) {
        std::ofstream out(p, std::ios::trunc);
        if (!out) throw Error("cannot write " + p.string());
        out << key;
        for (std::size_t c = 0; c < m.cols(); ++c) out << ',' << prefix << c;
        out << '\n';
        for (std::size_t r = 0; r < m.rows(); ++r) {
            out << key_of(r);
            for (double v : m.row(r)) out << ',' << format_real(v);
            out << '\n';
        }
        if (!out) throw Error("write failed: " + p.string());
    };
    write_csv(path, "label", "f", dataset.features,
              [&](std::size_t r) { return dataset.class_names[dataset.labels[r]]; });
    write_csv(semantics_path_for(path), "class", "s", dataset.semantics.rows,
              [&](std::size_t r) { return dataset.class_names[r]; });
}

}  // namespace azsl::data
