#include "azsl/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "azsl/bytes.hpp"
#include "azsl/error.hpp"

namespace azsl::eval {

std::string_view to_string(Task task) { return task == Task::CZSL ? "CZSL" : "GZSL"; }

std::vector<ClassId> predict_scores(const Matrix& scores, std::span<const ClassId> head,
                                    std::span<const ClassId> class_space) {
    if (scores.cols() != head.size()) throw ShapeError("predict: score width does not match head");
    if (class_space.empty()) throw Error("predict: empty class space");
    // Candidate columns sorted by class id so the first maximum is the lowest id.
    std::vector<std::pair<ClassId, std::size_t>> cols;
    for (ClassId c : class_space) {
        auto it = std::find(head.begin(), head.end(), c);
        if (it == head.end()) {
            throw Error("predict: class " + std::to_string(c) + " is not covered by the model head");
        }
        cols.emplace_back(c, static_cast<std::size_t>(it - head.begin()));
    }
    std::sort(cols.begin(), cols.end());
    cols.erase(std::unique(cols.begin(), cols.end()), cols.end());

    std::vector<ClassId> out(scores.rows());
    for (std::size_t r = 0; r < scores.rows(); ++r) {
        auto row = scores.row(r);
        std::size_t best = 0;
        for (std::size_t k = 1; k < cols.size(); ++k) {
            if (row[cols[k].second] > row[cols[best].second]) best = k;
        }
        out[r] = cols[best].first;
    }
    return out;
}

std::vector<ClassId> predict(const client::Classifier& model, const Matrix& features,
                             std::span<const ClassId> class_space) {
    return predict_scores(num::mlp_apply(model.net, features), model.head, class_space);
}

double per_class_top1(std::span<const ClassId> preds, std::span<const ClassId> labels,
                      std::span<const ClassId> classes) {
    if (preds.size() != labels.size()) throw ShapeError("per_class_top1: preds and labels differ in length");
    const std::set<ClassId> wanted(classes.begin(), classes.end());
    std::map<ClassId, std::pair<std::size_t, std::size_t>> tally;  // correct, total
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!wanted.count(labels[i])) continue;
        auto& t = tally[labels[i]];
        t.second += 1;
        if (preds[i] == labels[i]) t.first += 1;
    }
    if (tally.empty()) throw Error("per_class_top1: empty evaluation set");
    double sum = 0.0;
    for (const auto& [c, t] : tally) sum += static_cast<double>(t.first) / static_cast<double>(t.second);
    return 100.0 * sum / static_cast<double>(tally.size());
}

double harmonic_mean(double u, double s) {
    if (u < 0.0 || s < 0.0) throw Error("harmonic_mean: accuracies must be non-negative");
    if (u + s == 0.0) return 0.0;
    return 2.0 * u * s / (u + s);
}

// ---------------------------------------------------------------------------
// Reports

EvalReport make_report(Task task, std::span<const ClassId> preds, std::span<const ClassId> labels,
                       std::span<const ClassId> seen, std::span<const ClassId> unseen,
                       std::size_t num_classes) {
    EvalReport r;
    r.task = task;
    r.seen.assign(seen.begin(), seen.end());
    r.unseen.assign(unseen.begin(), unseen.end());
    r.confusion.assign(num_classes, std::vector<std::uint64_t>(num_classes, 0));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes || preds[i] >= num_classes) throw Error("make_report: class out of range");
        ++r.confusion[labels[i]][preds[i]];
    }
    for (ClassId c = 0; c < num_classes; ++c) {
        std::uint64_t total = 0;
        for (auto v : r.confusion[c]) total += v;
        if (total > 0) r.per_class[c] = 100.0 * static_cast<double>(r.confusion[c][c]) / total;
    }
    r.u = per_class_top1(preds, labels, unseen);
    if (task == Task::GZSL) {
        r.s = per_class_top1(preds, labels, seen);
        r.H = harmonic_mean(r.u, r.s);
    }
    return r;
}

double accuracy_from_confusion(const EvalReport& report, std::span<const ClassId> classes) {
    double sum = 0.0;
    std::size_t n = 0;
    for (ClassId c : classes) {
        const auto& row = report.confusion.at(c);
        std::uint64_t total = 0;
        for (auto v : row) total += v;
        if (total == 0) continue;
        sum += static_cast<double>(row[c]) / static_cast<double>(total);
        ++n;
    }
    return n == 0 ? 0.0 : 100.0 * sum / static_cast<double>(n);
}

namespace {

std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string join_ids(std::span<const ClassId> ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? " " : "") + std::to_string(ids[i]);
    return s;
}

std::string name_of(const EvalReport& r, ClassId c) {
    return c < r.class_names.size() ? r.class_names[c] : std::to_string(c);
}

}  // namespace

std::string EvalReport::to_text() const {
    std::string t;
    t += "task: " + std::string(eval::to_string(task)) + "\n";
    t += "teacher_mode: " + std::string(data::to_string(teacher_mode)) + "\n";
    t += "scenario: " + std::string(wire::to_string(scenario)) + "\n";
    if (task == Task::CZSL) t += std::string("masked: ") + (masked ? "true" : "false") + "\n";
    t += "u: " + fixed2(u) + "\n";
    if (task == Task::GZSL) {
        t += "s: " + fixed2(s) + "\n";
        t += "H: " + fixed2(H) + "\n";
    }
    t += "seen_classes: " + join_ids(seen) + "\n";
    t += "unseen_classes: " + join_ids(unseen) + "\n";
    for (const auto& [k, v] : seeds) t += "seed." + k + ": " + std::to_string(v) + "\n";
    t += "transcript_digest: " + hex64(transcript_digest) + "\n";
    t += "\n[per_class]\nclass,name,accuracy\n";
    for (const auto& [c, acc] : per_class) t += std::to_string(c) + "," + name_of(*this, c) + "," + fixed2(acc) + "\n";
    t += "\n[confusion]\ntrue";
    for (std::size_t c = 0; c < confusion.size(); ++c) t += "," + std::to_string(c);
    t += "\n";
    for (std::size_t c = 0; c < confusion.size(); ++c) {
        t += std::to_string(c);
        for (auto v : confusion[c]) t += "," + std::to_string(v);
        t += "\n";
    }
    return t;
}

namespace {

void rows_and_labels(const data::Dataset& dataset, std::span<const std::size_t> rows, Matrix& x,
                     std::vector<ClassId>& y) {
    x = num::select_rows(dataset.features, rows);
    y.clear();
    for (std::size_t r : rows) y.push_back(dataset.labels[r]);
}

void stamp(EvalReport& r, const client::ArtifactBundle& bundle, const data::SplitBundle& split,
           const data::Dataset& dataset, wire::Scenario scenario) {
    r.teacher_mode = split.teacher_mode;
    r.scenario = scenario;
    r.class_names = dataset.class_names;
    r.transcript_digest = bundle.transcript_digest();
    r.seeds.emplace_back("split", split.seed);
}

}  // namespace

EvalReport eval_czsl(const client::ArtifactBundle& bundle, const data::SplitBundle& split,
                     const data::Dataset& dataset, wire::Scenario scenario, bool masked) {
    Matrix x;
    std::vector<ClassId> y;
    rows_and_labels(dataset, split.client_eval_unseen, x, y);
    std::vector<ClassId> preds;
    if (split.teacher_mode == data::TeacherMode::Inductive) {
        if (!bundle.classifier_czsl) throw Error("eval_czsl: inductive bundle has no unseen-class classifier");
        preds = predict(*bundle.classifier_czsl, x, split.unseen_classes);
    } else {
        const auto space = masked ? split.unseen_classes : split.all_classes();
        preds = predict(bundle.student, x, space);
    }
    EvalReport r = make_report(Task::CZSL, preds, y, {}, split.unseen_classes, dataset.num_classes());
    r.masked = masked && split.teacher_mode == data::TeacherMode::Transductive;
    stamp(r, bundle, split, dataset, scenario);
    return r;
}

EvalReport eval_gzsl(const client::ArtifactBundle& bundle, const data::SplitBundle& split,
                     const data::Dataset& dataset, wire::Scenario scenario) {
    std::vector<std::size_t> rows = split.client_eval_seen;
    rows.insert(rows.end(), split.client_eval_unseen.begin(), split.client_eval_unseen.end());
    Matrix x;
    std::vector<ClassId> y;
    rows_and_labels(dataset, rows, x, y);
    const auto space = split.all_classes();
    std::vector<ClassId> preds;
    if (split.teacher_mode == data::TeacherMode::Inductive) {
        if (!bundle.classifier) throw Error("eval_gzsl: inductive bundle has no all-class classifier");
        preds = predict(*bundle.classifier, x, space);
    } else {
        preds = predict(bundle.student, x, space);
    }
    EvalReport r = make_report(Task::GZSL, preds, y, split.seen_classes, split.unseen_classes,
                               dataset.num_classes());
    stamp(r, bundle, split, dataset, scenario);
    return r;
}

// ---------------------------------------------------------------------------
// Projection

Matrix pca_project(const Matrix& features, Matrix* components) {
    const std::size_t n = features.rows(), d = features.cols();
    if (n < 2) throw Error("pca: need at least two rows");
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMat> x(features.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const Eigen::MatrixXd centered = x.rowwise() - mean;
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw Error("pca: eigen decomposition failed");
    const Eigen::VectorXd& values = eig.eigenvalues();  // ascending
    const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
    if (values(static_cast<Eigen::Index>(d) - 1) <= 1e-12 * scale) throw Error("pca: data has rank 0");

    Eigen::MatrixXd comps = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), 2);
    for (Eigen::Index k = 0; k < std::min<Eigen::Index>(2, static_cast<Eigen::Index>(d)); ++k) {
        Eigen::VectorXd v = eig.eigenvectors().col(static_cast<Eigen::Index>(d) - 1 - k);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        comps.col(k) = v;
    }
    const Eigen::MatrixXd proj = centered * comps;
    Matrix out(n, 2);
    for (std::size_t r = 0; r < n; ++r) {
        out(r, 0) = proj(static_cast<Eigen::Index>(r), 0);
        out(r, 1) = proj(static_cast<Eigen::Index>(r), 1);
    }
    if (components) {
        *components = Matrix(d, 2);
        for (std::size_t j = 0; j < d; ++j) {
            (*components)(j, 0) = comps(static_cast<Eigen::Index>(j), 0);
            (*components)(j, 1) = comps(static_cast<Eigen::Index>(j), 1);
        }
    }
    return out;
}

void export_projection(const Matrix& features, std::span<const ClassId> labels,
                       const std::filesystem::path& path) {
    if (labels.size() != features.rows()) throw ShapeError("export_projection: labels do not match rows");
    const Matrix p = pca_project(features);
    std::ofstream f(path);
    if (!f) throw Error("cannot write " + path.string());
    f << "label,pc1,pc2\n";
    char buf[64];
    for (std::size_t r = 0; r < p.rows(); ++r) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g", p(r, 0), p(r, 1));
        f << labels[r] << "," << buf << "\n";
    }
}

}  // namespace azsl::eval
