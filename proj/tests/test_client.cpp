#include <algorithm>
#include <fstream>
#include <functional>

#include "azsl/client.hpp"
#include "azsl/error.hpp"
#include "azsl/teacher.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace azsl;
using namespace azsl::client;
using data::TeacherMode;
using testutil::random_matrix;
using wire::Scenario;

namespace {

// Answers feedback requests with a softmax chosen per conditioning label.
class ScriptedChannel final : public Channel {
public:
    using Predict = std::function<ClassId(ClassId)>;
    ScriptedChannel(std::vector<ClassId> classes, Predict predict)
        : classes_(std::move(classes)), predict_(std::move(predict)) {}

protected:
    std::vector<std::uint8_t> exchange_bytes(const std::vector<std::uint8_t>& bytes) override {
        const auto frame = wire::decode_frame(bytes);
        const auto req = wire::decode_feedback_request(frame.payload);
        wire::FeedbackResponse resp;
        resp.softmax = Matrix(req.batch.rows(), classes_.size(), 0.0);
        for (std::size_t r = 0; r < req.batch.rows(); ++r) {
            const ClassId p = predict_(req.cond_labels[r]);
            const auto col = std::find(classes_.begin(), classes_.end(), p) - classes_.begin();
            resp.softmax(r, static_cast<std::size_t>(col)) = 1.0;
        }
        resp.reg_grad = Matrix(req.batch.rows(), req.batch.cols(), 0.0);
        resp.risk_tags = {{wire::Field::Softmax, wire::Risk::Low},
                          {wire::Field::RegValue, wire::Risk::Low},
                          {wire::Field::RegGrad, wire::Risk::Low}};
        return wire::encode_frame({wire::MessageKind::FeedbackResponse, wire::encode(resp)});
    }

private:
    std::vector<ClassId> classes_;
    Predict predict_;
};

struct World {
    data::Dataset ds;
    data::SplitBundle split;
    server::TeacherModel teacher;
    server::RegularizerState reg;
    ClientTask task;

    World(TeacherMode mode, std::uint64_t seed, data::SyntheticSpec spec = testutil::small_spec(),
          server::TeacherConfig tcfg = testutil::small_teacher(),
          server::RegularizerKind kind = server::RegularizerKind::GaussianKL) {
        ds = data::make_synthetic(spec, seed);
        split = data::split_azsl(ds, mode, data::trailing_unseen(spec.num_classes, spec.seen_count), 0.8, seed);
        teacher = server::train_teacher(ds, split, tcfg, seed);
        reg = server::fit_regularizer(ds, split, kind, 0.5, seed);
        task = make_task(ds.semantics, split, ds.feature_dim());
    }

    std::shared_ptr<const server::TeacherServer> server() const {
        return std::make_shared<const server::TeacherServer>(teacher, reg);
    }
};

double grads_norm(const num::MlpGrads& g) {
    double s = 0.0;
    for (const auto& w : g.weights)
        for (double v : w.values()) s += v * v;
    for (const auto& b : g.biases)
        for (double v : b) s += v * v;
    return std::sqrt(s);
}

num::MlpParams small_generator(std::uint64_t seed, std::size_t d_a = 6, std::size_t d_x = 12) {
    TrainConfig cfg = testutil::small_client(Scenario::WhiteBox, TeacherMode::Transductive, seed);
    cfg.noise.dim = 4;
    return make_generator(cfg, d_a, d_x);
}

data::SemanticTable table(std::size_t classes, std::size_t dim, std::uint64_t seed) {
    return {random_matrix(classes, dim, seed), data::SemanticSource::Synthetic};
}

}  // namespace

TEST_CASE("generation") {
    const auto sem = table(10, 6, 1);
    const std::vector<ClassId> all = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};

    SUBCASE("shape, labels and non-negative output") {
        const auto gen = small_generator(2);
        CHECK(gen.input_dim() == 4 + 6);
        CHECK(gen.layers.back().activation == num::Activation::ReLU);
        const auto b = generate(gen, sem, all, 400, NoiseSpec{4, 3});
        CHECK(b.size() == 4000);
        CHECK(b.features.rows() == 4000);
        CHECK(b.noise_used.cols() == 4);
        CHECK(b.cond_semantics.cols() == 6);
        for (std::size_t r = 0; r < b.size(); ++r) {
            CHECK(b.cond_labels[r] == r / 400);
            CHECK(std::equal(b.cond_semantics.row(r).begin(), b.cond_semantics.row(r).end(),
                             sem.rows.row(b.cond_labels[r]).begin()));
        }
        for (double v : b.features.values()) CHECK(v >= 0.0);
        CHECK(num::mlp_apply(gen, b.generator_input()) == b.features);
    }
    SUBCASE("zero weights give all-zero features") {
        auto gen = small_generator(2);
        for (auto& w : gen.weights) std::fill(w.data().begin(), w.data().end(), 0.0);
        const auto b = generate(gen, sem, all, 5, NoiseSpec{4, 1});
        for (double v : b.features.values()) CHECK(v == 0.0);
    }
    SUBCASE("identical semantics with shared noise give identical blocks") {
        auto twin = sem;
        for (std::size_t j = 0; j < 6; ++j) twin.rows(7, j) = twin.rows(2, j);
        const auto gen = small_generator(3);
        const Matrix noise = random_matrix(6, 4, 9);
        Matrix both(12, 4);
        for (std::size_t r = 0; r < 12; ++r)
            for (std::size_t j = 0; j < 4; ++j) both(r, j) = noise(r % 6, j);
        const std::vector<ClassId> labels = {2, 2, 2, 2, 2, 2, 7, 7, 7, 7, 7, 7};
        const auto b = generate_from(gen, twin, labels, both);
        for (std::size_t r = 0; r < 6; ++r)
            for (std::size_t j = 0; j < 12; ++j) CHECK(b.features(r, j) == b.features(r + 6, j));
    }
    SUBCASE("deterministic per noise seed") {
        const auto gen = small_generator(4);
        CHECK(generate(gen, sem, all, 3, NoiseSpec{4, 5}).features == generate(gen, sem, all, 3, NoiseSpec{4, 5}).features);
        CHECK_FALSE(generate(gen, sem, all, 3, NoiseSpec{4, 5}).features == generate(gen, sem, all, 3, NoiseSpec{4, 6}).features);
    }
    SUBCASE("errors") {
        const auto gen = small_generator(4);
        const std::vector<ClassId> bad = {3, 10};
        CHECK_THROWS(generate(gen, sem, bad, 2, NoiseSpec{4, 1}));
        CHECK_THROWS(generate(gen, table(10, 5, 1), all, 2, NoiseSpec{4, 1}));
    }
    SUBCASE("training batches spread rows over classes") {
        const auto gen = small_generator(5);
        Rng rng(1);
        const auto b = training_batch(gen, sem, all, 64, rng);
        CHECK(b.size() == 64);
        for (ClassId c : all) {
            const auto n = std::count(b.cond_labels.begin(), b.cond_labels.end(), c);
            CHECK((n == 6 || n == 7));
        }
        const std::vector<ClassId> three = {1, 4, 8};
        const auto small = training_batch(gen, sem, three, 4, rng);
        CHECK(small.size() == 6);
    }
}

TEST_CASE("verification") {
    GenerationBatch b;
    b.features = random_matrix(5, 3, 1);
    b.cond_labels = {0, 1, 2, 1, 0};
    const std::vector<ClassId> cls = {0, 1, 2};

    SUBCASE("mixed fixture keeps exactly the matching rows in order") {
        const Matrix sm(5, 3, std::vector<double>{0.7, 0.2, 0.1,    // keep
                                                  0.6, 0.3, 0.1,    // drop
                                                  0.1, 0.1, 0.8,    // keep
                                                  0.2, 0.5, 0.3,    // keep
                                                  0.3, 0.3, 0.4});  // drop
        const auto v = verify(b, sm, cls);
        REQUIRE(v.size() == 3);
        CHECK(v.labels == std::vector<ClassId>{0, 2, 1});
        const std::size_t kept[] = {0, 2, 3};
        CHECK(v.features == num::select_rows(b.features, kept));
        CHECK(v.teacher_softmax == num::select_rows(sm, kept));
        CHECK(v.kept_fraction == doctest::Approx(0.6));
        CHECK(v.kept_per_class.at(1) == 1);
        for (std::size_t r = 0; r < v.size(); ++r) {
            auto row = v.teacher_softmax.row(r);
            CHECK(cls[std::max_element(row.begin(), row.end()) - row.begin()] == v.labels[r]);
        }
    }
    SUBCASE("all correct and all wrong") {
        Matrix right(5, 3, 0.0), wrong(5, 3, 0.0);
        for (std::size_t r = 0; r < 5; ++r) {
            right(r, b.cond_labels[r]) = 1.0;
            wrong(r, (b.cond_labels[r] + 1) % 3) = 1.0;
        }
        const auto v = verify(b, right, cls);
        CHECK(v.kept_fraction == 1.0);
        CHECK(v.features == b.features);
        CHECK(v.labels == b.cond_labels);
        const auto e = verify(b, wrong, cls);
        CHECK(e.size() == 0);
        CHECK(e.kept_fraction == 0.0);
    }
    SUBCASE("ties go to the lowest column") {
        const Matrix tie(5, 3, 1.0 / 3);
        const auto v = verify(b, tie, cls);
        CHECK(v.labels == std::vector<ClassId>{0, 0});
    }
    SUBCASE("softmax columns follow the teacher's class order") {
        const std::vector<ClassId> sparse = {3, 5, 9};
        GenerationBatch g;
        g.features = random_matrix(2, 3, 2);
        g.cond_labels = {9, 5};
        const Matrix sm(2, 3, std::vector<double>{0, 0, 1, 0, 1, 0});
        CHECK(verify(g, sm, sparse).size() == 2);
    }
    CHECK_THROWS_AS(verify(b, Matrix(4, 3, 0.1), cls), ShapeError);
}

TEST_CASE("quota policy") {
    const auto sem = table(4, 6, 2);
    ClientTask task{sem, {0, 1, 2}, {3}, {0, 1, 2, 3}, 12};
    TrainConfig cfg = testutil::small_client(Scenario::BlackBox, TeacherMode::Transductive, 7);
    cfg.noise.dim = 4;
    cfg.per_class_count = 20;
    cfg.min_verified_per_class = 15;
    cfg.regen_retry_cap = 3;
    const auto gen = small_generator(6);
    const std::vector<ClassId> classes = task.teacher_classes;

    SUBCASE("a perfect generator needs one round") {
        ScriptedChannel ch(classes, [](ClassId c) { return c; });
        FeedbackClient fc(ch);
        const auto v = ensure_quota(gen, fc, task, classes, cfg);
        CHECK(v.rounds == 1);
        CHECK(v.kept_fraction == 1.0);
        CHECK(v.shortfall.empty());
        CHECK(v.size() == 80);
        CHECK(ch.transcript().size() == 2);
    }
    SUBCASE("a class the teacher never predicts is reported after the cap") {
        ScriptedChannel ch(classes, [](ClassId c) { return c == 2 ? ClassId{0} : c; });
        FeedbackClient fc(ch);
        const auto v = ensure_quota(gen, fc, task, classes, cfg);
        CHECK(v.rounds == cfg.regen_retry_cap + 1);
        CHECK(v.shortfall == std::vector<ClassId>{2});
        CHECK(v.kept_per_class.count(2) == 0);
        CHECK(v.size() == 60);
        CHECK(v.kept_fraction == doctest::Approx(60.0 / (80 + 3 * 20)));
    }
    SUBCASE("retry cap zero is a single verification pass") {
        cfg.regen_retry_cap = 0;
        ScriptedChannel ch(classes, [](ClassId c) { return c == 1 ? ClassId{3} : c; });
        FeedbackClient fc(ch);
        const auto v = ensure_quota(gen, fc, task, classes, cfg);
        CHECK(v.rounds == 1);
        CHECK(v.size() == 60);
        CHECK(v.shortfall == std::vector<ClassId>{1});
        CHECK(v.kept_fraction == doctest::Approx(0.75));
    }
    SUBCASE("verification switched off keeps everything") {
        cfg.verify = false;
        ScriptedChannel ch(classes, [](ClassId) { return ClassId{0}; });
        FeedbackClient fc(ch);
        const auto v = ensure_quota(gen, fc, task, classes, cfg);
        CHECK(v.size() == 80);
        CHECK(v.kept_fraction == 1.0);
    }
    SUBCASE("large sets are uploaded in chunks") {
        cfg.verify_chunk = 7;
        ScriptedChannel ch(classes, [](ClassId c) { return c; });
        FeedbackClient fc(ch);
        CHECK(ensure_quota(gen, fc, task, classes, cfg).size() == 80);
        CHECK(ch.transcript().size() == 2 * 12);  // ceil(80 / 7) uploads
    }
}

TEST_CASE("white-box generator step") {
    World w(TeacherMode::Transductive, 3);
    InProcessChannel ch(w.server());
    FeedbackClient fc(ch);

    SUBCASE("generator gradient matches finite differences through a local teacher copy") {
        // Two-class slice of the task.
        const std::vector<ClassId> two = {1, 3};
        auto gen = small_generator(11);
        for (auto& b : gen.biases)
            for (double& v : b) v = 0.3;  // keep ReLU units active
        Rng rng(12);
        const auto batch = training_batch(gen, w.task.semantics, two, 8, rng);
        const double alpha = 0.7;
        const auto step = white_step(gen, fc, batch, alpha);

        const Matrix input = batch.generator_input();
        std::vector<std::size_t> units;
        for (ClassId c : batch.cond_labels) units.push_back(static_cast<std::size_t>(w.teacher.unit_of(c)));
        auto objective = [&](const num::MlpParams& q, num::MlpGrads* g) {
            const Matrix x = num::mlp_apply(q, input);
            const double ce = num::loss_ce_logits(num::mlp_apply(w.teacher.params, x), units).value;
            const double r = server::reg_value_grad(w.reg, x, batch.cond_labels).value;
            if (g) *g = white_step(q, fc, batch, alpha).gen_grads;
            return ce + alpha * r;
        };
        CHECK(num::grad_check(gen, objective) < 1e-4);
        CHECK(step.ce_value > 0.0);
    }
    SUBCASE("no update when the teacher already agrees and alpha is zero") {
        auto sharp = w.teacher;
        for (double& v : sharp.params.weights.back().data()) v *= 1000.0;
        for (double& v : sharp.params.biases.back()) v *= 1000.0;
        InProcessChannel sc(std::make_shared<const server::TeacherServer>(sharp, w.reg));
        FeedbackClient sfc(sc);

        // Constant generator whose output is a real row the teacher assigns to class 2.
        std::size_t row = 0;
        const auto pred = server::teacher_predict(sharp, w.ds.features);
        while (pred[row] != 2 || w.ds.labels[row] != 2) ++row;
        auto gen = small_generator(13);
        std::fill(gen.weights.back().data().begin(), gen.weights.back().data().end(), 0.0);
        for (std::size_t j = 0; j < 12; ++j) gen.biases.back()[j] = w.ds.features(row, j);

        const std::vector<ClassId> only = {2};
        Rng rng(14);
        const auto batch = training_batch(gen, w.task.semantics, only, 8, rng);
        const auto step = white_step(gen, sfc, batch, 0.0);
        CHECK(step.ce_value < 1e-9);
        CHECK(grads_norm(step.gen_grads) < 1e-8);

        auto moved = gen;
        auto adam = num::adam_init(moved, {.learning_rate = 1e-3});
        num::adam_step(moved, step.gen_grads, adam);
        double diff = 0.0;
        for (std::size_t k = 0; k < gen.weights.size(); ++k)
            for (std::size_t i = 0; i < gen.weights[k].size(); ++i)
                diff = std::max(diff, std::abs(moved.weights[k].data()[i] - gen.weights[k].data()[i]));
        CHECK(diff < 1e-6);
    }
    SUBCASE("training requests carry the scenario and ask only for gradients") {
        auto gen = small_generator(15);
        Rng rng(1);
        white_step(gen, fc, training_batch(gen, w.task.semantics, w.task.teacher_classes, 10, rng), 0.5);
        const auto e = ch.transcript().entries();
        REQUIRE(e.size() == 2);
        CHECK(e[0].scenario == Scenario::WhiteBox);
        CHECK(e[1].kind == "ce_grad");
        CHECK(e[1].fields == std::vector<std::string>{"reg_value:low", "reg_grad:low", "ce_value:low", "ce_grad:mid"});
    }
}

TEST_CASE("black-box joint step") {
    World w(TeacherMode::Transductive, 4);
    const auto task = w.task;
    TrainConfig cfg = testutil::small_client(Scenario::BlackBox, TeacherMode::Transductive, 5);
    cfg.noise.dim = 4;
    auto gen = make_generator(cfg, 6, 12);
    for (auto& b : gen.biases)
        for (double& v : b) v = 0.3;
    auto student = make_student(cfg, 12, 5);
    Rng rng(6);
    const auto batch = training_batch(gen, task.semantics, task.teacher_classes, 10, rng);
    const Matrix targets = testutil::random_softmax(batch.size(), 5, 7);
    const double alpha = 0.4;
    const Matrix input = batch.generator_input();

    SUBCASE("joint gradients match finite differences with constant targets") {
        auto step_at = [&](const num::MlpParams& g, const num::MlpParams& s) {
            const Matrix x = num::mlp_apply(g, input);
            const auto r = server::reg_value_grad(w.reg, x, batch.cond_labels);
            return black_step_with_targets(g, s, batch, targets, r.value, r.grad, alpha);
        };
        auto objective = [&](const num::MlpParams& g, const num::MlpParams& s) {
            const Matrix x = num::mlp_apply(g, input);
            const double mse = num::loss_mse(num::softmax(num::mlp_apply(s, x)), targets).value;
            return mse + alpha * server::reg_value_grad(w.reg, x, batch.cond_labels).value;
        };
        CHECK(num::grad_check(gen, [&](const num::MlpParams& q, num::MlpGrads* g) {
                  if (g) *g = step_at(q, student).gen_grads;
                  return objective(q, student);
              }) < 1e-4);
        // regularizer term is constant in the student
        const Matrix x = num::mlp_apply(gen, input);
        CHECK(num::grad_check(student, [&](const num::MlpParams& q, num::MlpGrads* g) {
                  if (g) *g = step_at(gen, q).student_grads;
                  return num::loss_mse(num::softmax(num::mlp_apply(q, x)), targets).value;
              }) < 1e-4);
    }
    SUBCASE("a student that already matches its targets receives no update") {
        const Matrix own = num::softmax(num::mlp_apply(student, num::mlp_apply(gen, input)));
        const auto s = black_step_with_targets(gen, student, batch, own, 0.0, Matrix(batch.size(), 12, 0.0), 0.0);
        CHECK(s.mse == 0.0);
        CHECK(grads_norm(s.gen_grads) == 0.0);
        CHECK(grads_norm(s.student_grads) == 0.0);

        auto g2 = gen;
        auto s2 = student;
        auto ga = num::adam_init(g2), sa = num::adam_init(s2);
        num::adam_step(g2, s.gen_grads, ga);
        num::adam_step(s2, s.student_grads, sa);
        CHECK(g2.same_values(gen));
        CHECK(s2.same_values(student));
    }
    SUBCASE("constant targets give bit-identical updates") {
        const auto r = server::reg_value_grad(w.reg, num::mlp_apply(gen, input), batch.cond_labels);
        const auto a = black_step_with_targets(gen, student, batch, targets, r.value, r.grad, alpha);
        const auto b = black_step_with_targets(gen, student, batch, targets, r.value, r.grad, alpha);
        for (std::size_t k = 0; k < a.gen_grads.weights.size(); ++k) CHECK(a.gen_grads.weights[k] == b.gen_grads.weights[k]);
        for (std::size_t k = 0; k < a.student_grads.weights.size(); ++k)
            CHECK(a.student_grads.weights[k] == b.student_grads.weights[k]);
    }
    SUBCASE("black-box training never produces a mid-risk message") {
        InProcessChannel ch(w.server());
        FeedbackClient fc(ch);
        cfg.gen_epochs = 10;
        auto g = gen;
        auto s = student;
        const auto trace = train_black(g, s, fc, task, task.teacher_classes, cfg);
        CHECK(trace.size() == 10);
        CHECK(ch.transcript().size() == 20);
        for (const auto& e : ch.transcript().entries()) {
            CHECK(e.risk == wire::Risk::Low);
            CHECK(e.scenario == Scenario::BlackBox);
        }
        CHECK_FALSE(g.same_values(gen));
        CHECK_FALSE(s.same_values(student));
    }
}

TEST_CASE("student distillation") {
    TrainConfig cfg = testutil::small_client(Scenario::WhiteBox, TeacherMode::Transductive, 21);
    auto student = make_student(cfg, 12, 5);
    VerifiedBatch v;
    v.features = random_matrix(30, 12, 22, 1.0, 1.0);
    v.labels.assign(30, 0);

    SUBCASE("gradients agree with finite differences") {
        const Matrix targets = testutil::random_softmax(30, 5, 23);
        CHECK(num::grad_check(student, [&](const num::MlpParams& q, num::MlpGrads* g) {
                  return student_loss(q, v.features, targets, g);
              }) < 1e-4);
    }
    SUBCASE("a student that reproduces its targets stays put") {
        v.teacher_softmax = num::softmax(num::mlp_apply(student, v.features));
        auto s = student;
        const auto trace = train_student(s, v, cfg);
        CHECK(trace.size() == cfg.student_epochs);
        for (const auto& row : trace) CHECK(row.main == 0.0);
        CHECK(s.same_values(student));
    }
    SUBCASE("errors") {
        VerifiedBatch empty;
        CHECK_THROWS(train_student(student, empty, cfg));
        v.teacher_softmax = testutil::random_softmax(30, 4, 1);
        CHECK_THROWS_AS(train_student(student, v, cfg), ShapeError);
    }
}

TEST_CASE("loss curves on the synthetic default") {
    // Desk-scale nets on the default 10-class benchmark, five seeds each.
    data::SyntheticSpec spec;
    server::TeacherConfig tcfg{.hidden = {128, 64}, .epochs = 30, .batch_size = 64, .learning_rate = 1e-3};
    std::vector<std::vector<double>> gen_traces, student_curves;

    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        World w(TeacherMode::Transductive, seed, spec, tcfg);
        InProcessChannel ch(w.server());
        FeedbackClient fc(ch);
        TrainConfig cfg = testutil::small_client(Scenario::WhiteBox, TeacherMode::Transductive, seed);
        cfg.generator_hidden = {128};
        cfg.student_hidden = {128, 64};
        cfg.gen_epochs = 50;
        cfg.per_class_count = 50;

        auto gen = make_generator(cfg, spec.semantic_dim, spec.feature_dim);
        const auto trace = train_generator_white(gen, fc, w.task, w.task.teacher_classes, cfg);
        std::vector<double> totals;
        for (const auto& r : trace) totals.push_back(r.total);
        gen_traces.push_back(totals);

        const auto verified = ensure_quota(gen, fc, w.task, w.task.teacher_classes, cfg);
        REQUIRE(verified.size() > 0);
        const auto init = make_student(cfg, spec.feature_dim, 10);
        std::vector<double> curve = {student_loss(init, verified.features, verified.teacher_softmax, nullptr)};
        for (std::size_t k = 1; k <= 10; ++k) {
            auto s = init;
            cfg.student_epochs = k;
            train_student(s, verified, cfg);
            curve.push_back(student_loss(s, verified.features, verified.teacher_softmax, nullptr));
        }
        student_curves.push_back(curve);
    }

    auto median_at = [](const std::vector<std::vector<double>>& runs, std::size_t t) {
        std::vector<double> v;
        for (const auto& r : runs) v.push_back(r[t]);
        std::nth_element(v.begin(), v.begin() + 2, v.end());
        return v[2];
    };
    SUBCASE("generator objective is non-increasing up to 5% upticks") {
        for (std::size_t t = 1; t < 50; ++t) CHECK(median_at(gen_traces, t) <= 1.05 * median_at(gen_traces, t - 1));
        CHECK(median_at(gen_traces, 49) < median_at(gen_traces, 0));
    }
    SUBCASE("student loss strictly decreases over the first ten epochs") {
        for (std::size_t t = 1; t <= 10; ++t) CHECK(median_at(student_curves, t) < median_at(student_curves, t - 1));
    }
}

TEST_CASE("inductive classifiers") {
    World w(TeacherMode::Inductive, 5);
    TrainConfig cfg = testutil::small_client(Scenario::WhiteBox, TeacherMode::Inductive, 3);
    const auto gen = make_generator(cfg, 6, 12);
    const auto czsl = train_inductive_classifier(gen, w.task, w.task.unseen, cfg);
    CHECK(czsl.head == w.task.unseen);
    CHECK(czsl.net.output_dim() == w.task.unseen.size());
    CHECK(czsl.net.layers.size() == 1);
    const auto all = w.task.all_classes();
    std::vector<TraceRow> trace;
    const auto gzsl = train_inductive_classifier(gen, w.task, all, cfg, &trace, "classifier_gzsl");
    CHECK(gzsl.net.output_dim() == 5);
    CHECK(trace.size() == cfg.classifier_epochs);
    CHECK(trace.front().phase == "classifier_gzsl");
    const std::vector<ClassId> none;
    CHECK_THROWS(train_inductive_classifier(gen, w.task, none, cfg));
}

TEST_CASE("full procedure") {
    SUBCASE("transductive white-box") {
        World w(TeacherMode::Transductive, 6);
        const auto cfg = testutil::small_client(Scenario::WhiteBox, TeacherMode::Transductive, 6);
        InProcessChannel a(w.server()), b(w.server());
        const auto ra = run_algorithm1(a, w.task, cfg);
        const auto rb = run_algorithm1(b, w.task, cfg);
        CHECK(ra.digest() == rb.digest());
        CHECK(ra.transcript_digest() == rb.transcript_digest());
        CHECK_FALSE(ra.classifier.has_value());
        CHECK(ra.student.head == w.task.teacher_classes);
        for (const auto& e : ra.transcript.entries())
            if (e.risk == wire::Risk::Mid) CHECK((e.kind == "ce_grad" || e.kind == "weight_blob"));

        const auto dir = testutil::scratch_dir("bundle");
        save_bundle(ra, dir);
        for (const char* f : {"gen.azw", "student.azw", "trace.csv", "transcript.json"}) CHECK(std::filesystem::exists(dir / f));
        CHECK(load_weights(dir / "gen.azw").same_values(ra.generator));
        CHECK(RiskLog::load(dir / "transcript.json").entries() == ra.transcript.entries());
        std::ifstream in(dir / "trace.csv");
        std::string head;
        std::getline(in, head);
        CHECK(head == "phase,step,total,main,reg");
    }
    SUBCASE("black-box transcripts are clean") {
        World w(TeacherMode::Transductive, 7);
        const auto cfg = testutil::small_client(Scenario::BlackBox, TeacherMode::Transductive, 7);
        InProcessChannel ch(w.server());
        const auto r = run_algorithm1(ch, w.task, cfg);
        for (const auto& e : r.transcript.entries()) CHECK(e.risk == wire::Risk::Low);
        CHECK(r.trace.front().phase == "black");
    }
    SUBCASE("inductive mode adds both classifiers") {
        World w(TeacherMode::Inductive, 8);
        const auto cfg = testutil::small_client(Scenario::WhiteBox, TeacherMode::Inductive, 8);
        InProcessChannel ch(w.server());
        const auto r = run_algorithm1(ch, w.task, cfg);
        REQUIRE(r.classifier.has_value());
        REQUIRE(r.classifier_czsl.has_value());
        CHECK(r.classifier_czsl->head == w.task.unseen);
        CHECK(r.classifier->head.size() == 5);
        CHECK(r.student.head == w.task.seen);
        const auto dir = testutil::scratch_dir("bundle-ind");
        save_bundle(r, dir);
        CHECK(std::filesystem::exists(dir / "classifier.azw"));
        CHECK(std::filesystem::exists(dir / "classifier_czsl.azw"));
    }
    SUBCASE("config validation") {
        auto cfg = testutil::small_client(Scenario::WhiteBox, TeacherMode::Inductive, 8);
        cfg.gen_epochs = 0;
        CHECK_THROWS(cfg.validate());
        cfg = testutil::small_client(Scenario::WhiteBox, TeacherMode::Inductive, 8);
        cfg.noise.dim = 0;
        CHECK_THROWS(cfg.validate());
        cfg = testutil::small_client(Scenario::WhiteBox, TeacherMode::Inductive, 8);
        cfg.alpha = -1;
        CHECK_THROWS(cfg.validate());
    }
}
