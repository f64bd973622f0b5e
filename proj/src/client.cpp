#include "azsl/client.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>

#include "azsl/bytes.hpp"
#include "azsl/error.hpp"

namespace azsl::client {

namespace {

enum Stream : std::uint64_t {
    kGenInit = 1,
    kStudentInit = 2,
    kGenTrain = 3,
    kQuota = 4,
    kStudentTrain = 5,
    kClassifierData = 6,
    kClassifierInit = 7,
    kClassifierTrain = 8,
};

std::string fmt(double v) {
    char buf[32];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::uint64_t phase_stream(const std::string& phase) {
    return fnv1a64(std::string_view(phase));
}

}  // namespace

void TrainConfig::validate() const {
    if (gen_epochs == 0 || student_epochs == 0 || classifier_epochs == 0) {
        throw Error("epoch caps must be >= 1");
    }
    if (batch_size == 0) throw Error("batch_size must be >= 1");
    if (per_class_count == 0) throw Error("per_class_count must be >= 1");
    if (verify_chunk == 0) throw Error("verify_chunk must be >= 1");
    if (noise.dim == 0) throw Error("noise dim must be >= 1");
    if (!(alpha >= 0.0)) throw Error("alpha must be >= 0");
    if (!(gen_lr > 0.0 && student_lr > 0.0 && classifier_lr > 0.0)) {
        throw Error("learning rates must be > 0");
    }
    if (generator_hidden.empty()) throw Error("generator needs at least one hidden layer");
}

std::vector<ClassId> ClientTask::all_classes() const {
    std::vector<ClassId> all = seen;
    all.insert(all.end(), unseen.begin(), unseen.end());
    std::sort(all.begin(), all.end());
    return all;
}

ClientTask make_task(const data::SemanticTable& semantics, const data::SplitBundle& split,
                     std::size_t feature_dim) {
    return ClientTask{semantics, split.seen_classes, split.unseen_classes, split.teacher_classes(),
                      feature_dim};
}

num::MlpParams make_generator(const TrainConfig& cfg, std::size_t semantic_dim, std::size_t feature_dim) {
    std::vector<std::size_t> widths{cfg.noise.dim + semantic_dim};
    widths.insert(widths.end(), cfg.generator_hidden.begin(), cfg.generator_hidden.end());
    widths.push_back(feature_dim);
    return num::mlp_init(num::chain_specs(widths, num::Activation::ReLU), num::Role::Generator,
                         derive_seed(cfg.seed, kGenInit));
}

num::MlpParams make_student(const TrainConfig& cfg, std::size_t feature_dim, std::size_t outputs) {
    std::vector<std::size_t> widths{feature_dim};
    widths.insert(widths.end(), cfg.student_hidden.begin(), cfg.student_hidden.end());
    widths.push_back(outputs);
    return num::mlp_init(num::chain_specs(widths, num::Activation::Identity), num::Role::Student,
                         derive_seed(cfg.seed, kStudentInit));
}

// ---------------------------------------------------------------------------
// Generation

GenerationBatch generate_from(const num::MlpParams& gen, const data::SemanticTable& semantics,
                              std::span<const ClassId> labels, Matrix noise) {
    if (gen.role != num::Role::Generator) throw Error("generate: network is not a generator");
    if (noise.rows() != labels.size()) throw ShapeError("generate: noise rows and labels differ");
    if (gen.input_dim() != noise.cols() + semantics.dim()) {
        throw ShapeError("generate: generator input is " + std::to_string(gen.input_dim()) +
                         ", noise + semantics is " + std::to_string(noise.cols() + semantics.dim()));
    }
    GenerationBatch b;
    b.cond_labels.assign(labels.begin(), labels.end());
    b.cond_semantics = Matrix(labels.size(), semantics.dim());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= semantics.num_classes()) {
            throw Error("generate: class " + std::to_string(labels[i]) + " has no semantic row");
        }
        auto src = semantics.rows.row(labels[i]);
        std::copy(src.begin(), src.end(), b.cond_semantics.row(i).begin());
    }
    b.noise_used = std::move(noise);
    b.features = num::mlp_apply(gen, b.generator_input());
    return b;
}

namespace {

GenerationBatch generate_counts(const num::MlpParams& gen, const data::SemanticTable& semantics,
                                const std::vector<std::pair<ClassId, std::size_t>>& counts,
                                std::size_t noise_dim, Rng& rng) {
    std::vector<ClassId> labels;
    for (const auto& [c, n] : counts) labels.insert(labels.end(), n, c);
    Matrix noise(labels.size(), noise_dim);
    for (double& v : noise.data()) v = rng.normal();
    return generate_from(gen, semantics, labels, std::move(noise));
}

std::size_t noise_dim_of(const num::MlpParams& gen, const data::SemanticTable& semantics) {
    if (gen.input_dim() <= semantics.dim()) throw ShapeError("generate: generator input too narrow");
    return gen.input_dim() - semantics.dim();
}

}  // namespace

GenerationBatch generate(const num::MlpParams& gen, const data::SemanticTable& semantics,
                         std::span<const ClassId> classes, std::size_t count_per_class, Rng& rng) {
    std::vector<std::pair<ClassId, std::size_t>> counts;
    for (ClassId c : classes) counts.emplace_back(c, count_per_class);
    return generate_counts(gen, semantics, counts, noise_dim_of(gen, semantics), rng);
}

GenerationBatch generate(const num::MlpParams& gen, const data::SemanticTable& semantics,
                         std::span<const ClassId> classes, std::size_t count_per_class,
                         const NoiseSpec& noise) {
    if (noise_dim_of(gen, semantics) != noise.dim) throw ShapeError("generate: noise dim mismatch");
    Rng rng(noise.seed);
    return generate(gen, semantics, classes, count_per_class, rng);
}

GenerationBatch training_batch(const num::MlpParams& gen, const data::SemanticTable& semantics,
                               std::span<const ClassId> classes, std::size_t batch_size, Rng& rng) {
    if (classes.empty()) throw Error("training batch needs at least one class");
    const std::size_t k = classes.size();
    std::vector<std::pair<ClassId, std::size_t>> counts;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t n = batch_size / k + (i < batch_size % k ? 1 : 0);
        counts.emplace_back(classes[i], std::max<std::size_t>(n, 2));
    }
    return generate_counts(gen, semantics, counts, noise_dim_of(gen, semantics), rng);
}

// ---------------------------------------------------------------------------
// Gradient steps

WhiteStep white_step(const num::MlpParams& gen, FeedbackClient& channel, const GenerationBatch& batch,
                     double alpha) {
    auto fwd = num::mlp_forward(gen, batch.generator_input());
    wire::FeedbackRequest req;
    req.scenario = wire::Scenario::WhiteBox;
    req.batch = fwd.output;
    req.cond_labels = batch.cond_labels;
    req.want_softmax = false;
    req.want_ce_grad = true;
    auto resp = channel.request(req);
    if (!resp.ce_grad || !resp.ce_value) {
        throw ProtocolError(wire::kProtocolViolation, "white-box response without gradient");
    }
    WhiteStep s;
    s.ce_value = *resp.ce_value;
    s.reg_value = resp.reg_value;
    s.feature_grad = std::move(*resp.ce_grad);
    num::add_scaled(s.feature_grad, resp.reg_grad, alpha);
    s.gen_grads = num::mlp_backward(gen, fwd.cache, s.feature_grad).params;
    return s;
}

BlackStep black_step_with_targets(const num::MlpParams& gen, const num::MlpParams& student,
                                  const GenerationBatch& batch, const Matrix& teacher_softmax,
                                  double reg_value, const Matrix& reg_grad, double alpha) {
    auto gfwd = num::mlp_forward(gen, batch.generator_input());
    auto sfwd = num::mlp_forward(student, gfwd.output);
    const Matrix probs = num::softmax(sfwd.output);
    auto mse = num::loss_mse(probs, teacher_softmax);
    auto sback = num::mlp_backward(student, sfwd.cache, num::softmax_backward(probs, mse.grad));
    Matrix dx = std::move(sback.input);
    num::add_scaled(dx, reg_grad, alpha);
    BlackStep s;
    s.mse = mse.value;
    s.reg_value = reg_value;
    s.student_grads = std::move(sback.params);
    s.gen_grads = num::mlp_backward(gen, gfwd.cache, dx).params;
    return s;
}

BlackStep black_step(const num::MlpParams& gen, const num::MlpParams& student, FeedbackClient& channel,
                     const GenerationBatch& batch, double alpha) {
    wire::FeedbackRequest req;
    req.scenario = wire::Scenario::BlackBox;
    req.batch = num::mlp_apply(gen, batch.generator_input());
    req.cond_labels = batch.cond_labels;
    auto resp = channel.request(req);
    return black_step_with_targets(gen, student, batch, resp.softmax, resp.reg_value, resp.reg_grad, alpha);
}

std::vector<TraceRow> train_generator_white(num::MlpParams& gen, FeedbackClient& channel,
                                            const ClientTask& task, std::span<const ClassId> classes,
                                            const TrainConfig& cfg) {
    Rng rng(derive_seed(cfg.seed, kGenTrain));
    auto adam = num::adam_init(gen, {.learning_rate = cfg.gen_lr});
    std::vector<TraceRow> trace;
    trace.reserve(cfg.gen_epochs);
    for (std::size_t t = 0; t < cfg.gen_epochs; ++t) {
        const auto batch = training_batch(gen, task.semantics, classes, cfg.batch_size, rng);
        auto step = white_step(gen, channel, batch, cfg.alpha);
        num::adam_step(gen, step.gen_grads, adam);
        trace.push_back({"generator", t, step.ce_value + cfg.alpha * step.reg_value, step.ce_value,
                         step.reg_value});
    }
    return trace;
}

std::vector<TraceRow> train_black(num::MlpParams& gen, num::MlpParams& student, FeedbackClient& channel,
                                  const ClientTask& task, std::span<const ClassId> classes,
                                  const TrainConfig& cfg) {
    Rng rng(derive_seed(cfg.seed, kGenTrain));
    auto gen_adam = num::adam_init(gen, {.learning_rate = cfg.gen_lr});
    auto student_adam = num::adam_init(student, {.learning_rate = cfg.student_lr});
    std::vector<TraceRow> trace;
    trace.reserve(cfg.gen_epochs);
    for (std::size_t t = 0; t < cfg.gen_epochs; ++t) {
        const auto batch = training_batch(gen, task.semantics, classes, cfg.batch_size, rng);
        auto step = black_step(gen, student, channel, batch, cfg.alpha);
        num::adam_step(gen, step.gen_grads, gen_adam);
        num::adam_step(student, step.student_grads, student_adam);
        trace.push_back({"black", t, step.mse + cfg.alpha * step.reg_value, step.mse, step.reg_value});
    }
    return trace;
}

// ---------------------------------------------------------------------------
// Verification

VerifiedBatch verify(const GenerationBatch& batch, const Matrix& softmax,
                     std::span<const ClassId> teacher_classes) {
    if (softmax.rows() != batch.size() || softmax.cols() != teacher_classes.size()) {
        throw ShapeError("verify: softmax shape does not match batch and teacher classes");
    }
    std::vector<std::size_t> keep;
    for (std::size_t r = 0; r < batch.size(); ++r) {
        auto row = softmax.row(r);
        const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        if (teacher_classes[best] == batch.cond_labels[r]) keep.push_back(r);
    }
    VerifiedBatch v;
    v.features = num::select_rows(batch.features, keep);
    v.teacher_softmax = num::select_rows(softmax, keep);
    for (std::size_t r : keep) {
        v.labels.push_back(batch.cond_labels[r]);
        ++v.kept_per_class[batch.cond_labels[r]];
    }
    v.kept_fraction = batch.size() == 0 ? 0.0 : static_cast<double>(keep.size()) / batch.size();
    v.rounds = 1;
    return v;
}

Matrix teacher_softmax(FeedbackClient& channel, const GenerationBatch& batch, wire::Scenario scenario,
                       std::size_t chunk) {
    Matrix out;
    std::vector<double> values;
    std::size_t cols = 0;
    for (std::size_t start = 0; start < batch.size(); start += chunk) {
        const std::size_t end = std::min(batch.size(), start + chunk);
        std::vector<std::size_t> idx(end - start);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
        wire::FeedbackRequest req;
        req.scenario = scenario;
        req.batch = num::select_rows(batch.features, idx);
        req.cond_labels.assign(batch.cond_labels.begin() + static_cast<std::ptrdiff_t>(start),
                               batch.cond_labels.begin() + static_cast<std::ptrdiff_t>(end));
        const auto resp = channel.request(req);
        cols = resp.softmax.cols();
        values.insert(values.end(), resp.softmax.values().begin(), resp.softmax.values().end());
    }
    return Matrix(batch.size(), cols, std::move(values));
}

namespace {

void append_rows(Matrix& acc, const Matrix& rows) {
    if (rows.rows() == 0) return;
    if (acc.rows() == 0) {
        acc = rows;
        return;
    }
    std::vector<double> v(acc.values().begin(), acc.values().end());
    v.insert(v.end(), rows.values().begin(), rows.values().end());
    acc = Matrix(acc.rows() + rows.rows(), acc.cols(), std::move(v));
}

}  // namespace

VerifiedBatch ensure_quota(const num::MlpParams& gen, FeedbackClient& channel, const ClientTask& task,
                           std::span<const ClassId> classes, const TrainConfig& cfg) {
    Rng rng(derive_seed(cfg.seed, kQuota));
    VerifiedBatch total;
    std::size_t generated = 0;
    std::vector<ClassId> pending(classes.begin(), classes.end());
    for (std::size_t round = 0; round <= cfg.regen_retry_cap && !pending.empty(); ++round) {
        const auto batch = generate(gen, task.semantics, pending, cfg.per_class_count, rng);
        const Matrix sm = teacher_softmax(channel, batch, cfg.scenario, cfg.verify_chunk);
        VerifiedBatch v;
        if (cfg.verify) {
            v = verify(batch, sm, task.teacher_classes);
        } else {
            v.features = batch.features;
            v.labels = batch.cond_labels;
            v.teacher_softmax = sm;
            for (ClassId c : v.labels) ++v.kept_per_class[c];
        }
        generated += batch.size();
        append_rows(total.features, v.features);
        append_rows(total.teacher_softmax, v.teacher_softmax);
        total.labels.insert(total.labels.end(), v.labels.begin(), v.labels.end());
        for (const auto& [c, n] : v.kept_per_class) total.kept_per_class[c] += n;
        total.rounds = round + 1;

        std::vector<ClassId> below;
        for (ClassId c : classes) {
            auto it = total.kept_per_class.find(c);
            if ((it == total.kept_per_class.end() ? 0 : it->second) < cfg.min_verified_per_class) {
                below.push_back(c);
            }
        }
        pending = std::move(below);
    }
    total.shortfall = pending;
    total.kept_fraction = generated == 0 ? 0.0 : static_cast<double>(total.size()) / generated;
    return total;
}

// ---------------------------------------------------------------------------
// Student and classifiers

double student_loss(const num::MlpParams& student, const Matrix& features, const Matrix& targets,
                    num::MlpGrads* grads) {
    auto fwd = num::mlp_forward(student, features);
    const Matrix probs = num::softmax(fwd.output);
    auto mse = num::loss_mse(probs, targets);
    if (grads) *grads = num::mlp_backward(student, fwd.cache, num::softmax_backward(probs, mse.grad)).params;
    return mse.value;
}

std::vector<TraceRow> train_student(num::MlpParams& student, const VerifiedBatch& verified,
                                    const TrainConfig& cfg) {
    if (verified.size() == 0) throw Error("train_student: verified batch is empty");
    if (verified.teacher_softmax.cols() != student.output_dim()) {
        throw ShapeError("train_student: student head does not match teacher softmax width");
    }
    Rng rng(derive_seed(cfg.seed, kStudentTrain));
    auto adam = num::adam_init(student, {.learning_rate = cfg.student_lr});
    const std::size_t n = std::min(cfg.batch_size, verified.size());
    std::vector<std::size_t> idx(n);
    std::vector<TraceRow> trace;
    trace.reserve(cfg.student_epochs);
    for (std::size_t t = 0; t < cfg.student_epochs; ++t) {
        for (auto& i : idx) i = rng.below(verified.size());
        num::MlpGrads g;
        const double loss = student_loss(student, num::select_rows(verified.features, idx),
                                         num::select_rows(verified.teacher_softmax, idx), &g);
        num::adam_step(student, g, adam);
        trace.push_back({"student", t, loss, loss, 0.0});
    }
    return trace;
}

Classifier train_inductive_classifier(const num::MlpParams& gen, const ClientTask& task,
                                      std::span<const ClassId> class_space, const TrainConfig& cfg,
                                      std::vector<TraceRow>* trace, const std::string& phase) {
    if (class_space.empty()) throw Error("train_inductive_classifier: empty class space");
    Classifier clf;
    clf.head.assign(class_space.begin(), class_space.end());
    const std::uint64_t stream = phase_stream(phase);

    Rng data_rng(derive_seed(derive_seed(cfg.seed, kClassifierData), stream));
    const auto batch = generate(gen, task.semantics, clf.head, cfg.per_class_count, data_rng);
    std::vector<std::size_t> local(batch.size());
    for (std::size_t r = 0; r < batch.size(); ++r) {
        local[r] = static_cast<std::size_t>(
            std::find(clf.head.begin(), clf.head.end(), batch.cond_labels[r]) - clf.head.begin());
    }

    const std::size_t widths[] = {batch.features.cols(), clf.head.size()};
    clf.net = num::mlp_init(num::chain_specs(widths, num::Activation::Identity), num::Role::Classifier,
                            derive_seed(derive_seed(cfg.seed, kClassifierInit), stream));
    auto adam = num::adam_init(clf.net, {.learning_rate = cfg.classifier_lr});
    Rng rng(derive_seed(derive_seed(cfg.seed, kClassifierTrain), stream));
    const std::size_t n = std::min(cfg.batch_size, batch.size());
    std::vector<std::size_t> idx(n), y(n);
    for (std::size_t t = 0; t < cfg.classifier_epochs; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            idx[i] = rng.below(batch.size());
            y[i] = local[idx[i]];
        }
        auto fwd = num::mlp_forward(clf.net, num::select_rows(batch.features, idx));
        auto ce = num::loss_ce_logits(fwd.output, y);
        num::adam_step(clf.net, num::mlp_backward(clf.net, fwd.cache, ce.grad).params, adam);
        if (trace) trace->push_back({phase, t, ce.value, ce.value, 0.0});
    }
    return clf;
}

// ---------------------------------------------------------------------------
// Full procedure

ArtifactBundle run_algorithm1(Channel& channel, const ClientTask& task, const TrainConfig& cfg) {
    cfg.validate();
    if (task.teacher_classes.empty()) throw Error("run_algorithm1: teacher class space is empty");
    if (task.feature_dim == 0) throw Error("run_algorithm1: feature dimension unknown");
    FeedbackClient fc(channel);

    ArtifactBundle out;
    out.generator = make_generator(cfg, task.semantics.dim(), task.feature_dim);
    out.student.net = make_student(cfg, task.feature_dim, task.teacher_classes.size());
    out.student.head = task.teacher_classes;

    const std::span<const ClassId> train_classes(task.teacher_classes);
    if (cfg.scenario == wire::Scenario::WhiteBox) {
        out.trace = train_generator_white(out.generator, fc, task, train_classes, cfg);
    } else {
        out.trace = train_black(out.generator, out.student.net, fc, task, train_classes, cfg);
    }

    const auto verified = ensure_quota(out.generator, fc, task, train_classes, cfg);
    out.kept_fraction = verified.kept_fraction;
    out.shortfall = verified.shortfall;
    if (verified.size() > 0) {
        auto st = train_student(out.student.net, verified, cfg);
        out.trace.insert(out.trace.end(), st.begin(), st.end());
    }

    if (cfg.teacher_mode == data::TeacherMode::Inductive) {
        out.classifier_czsl =
            train_inductive_classifier(out.generator, task, task.unseen, cfg, &out.trace, "classifier_czsl");
        out.classifier = train_inductive_classifier(out.generator, task, task.all_classes(), cfg, &out.trace,
                                                    "classifier_gzsl");
    }
    out.transcript = channel.transcript();
    return out;
}

std::string trace_csv(std::span<const TraceRow> trace) {
    std::string s = "phase,step,total,main,reg\n";
    for (const auto& r : trace) {
        s += r.phase + "," + std::to_string(r.step) + "," + fmt(r.total) + "," + fmt(r.main) + "," +
             fmt(r.reg) + "\n";
    }
    return s;
}

std::uint64_t ArtifactBundle::digest() const {
    std::uint64_t h = fnv1a64(std::span<const std::uint8_t>(wire::encode_weights(generator)));
    h = fnv1a64(std::span<const std::uint8_t>(wire::encode_weights(student.net)), h);
    if (classifier) h = fnv1a64(std::span<const std::uint8_t>(wire::encode_weights(classifier->net)), h);
    if (classifier_czsl) {
        h = fnv1a64(std::span<const std::uint8_t>(wire::encode_weights(classifier_czsl->net)), h);
    }
    h = fnv1a64(std::string_view(trace_csv(trace)), h);
    return fnv1a64(std::string_view(transcript.to_json()), h);
}

void save_weights(const num::MlpParams& params, const std::filesystem::path& path) {
    const auto blob = wire::encode_weights(params);
    std::ofstream f(path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!f) throw Error("cannot write " + path.string());
}

num::MlpParams load_weights(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path.string());
    std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return wire::decode_weights(blob);
}

void save_bundle(const ArtifactBundle& bundle, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_weights(bundle.generator, dir / "gen.azw");
    save_weights(bundle.student.net, dir / "student.azw");
    if (bundle.classifier) save_weights(bundle.classifier->net, dir / "classifier.azw");
    if (bundle.classifier_czsl) save_weights(bundle.classifier_czsl->net, dir / "classifier_czsl.azw");
    {
        std::ofstream f(dir / "trace.csv", std::ios::binary);
        f << trace_csv(bundle.trace);
        if (!f) throw Error("cannot write trace.csv");
    }
    bundle.transcript.save(dir / "transcript.json");
}

}  // namespace azsl::client
