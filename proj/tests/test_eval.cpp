#include <algorithm>
#include <fstream>
#include <sstream>

#include "azsl/error.hpp"
#include "azsl/eval.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace azsl;
using namespace azsl::eval;
using data::TeacherMode;
using testutil::random_matrix;

namespace {

// Dataset whose features are the one-hot code of the label, plus a linear
// classifier that reads the code back.
struct OneHotWorld {
    data::Dataset ds;
    data::SplitBundle split;

    OneHotWorld(TeacherMode mode, std::size_t per_class = 20) {
        const std::size_t c = 4;
        ds.features = Matrix(c * per_class, c, 0.0);
        for (std::size_t r = 0; r < c * per_class; ++r) {
            ds.labels.push_back(static_cast<ClassId>(r / per_class));
            ds.features(r, r / per_class) = 1.0;
        }
        ds.semantics.rows = random_matrix(c, 3, 1);
        ds.class_names = {"a", "b", "c", "d"};
        split = data::split_azsl(ds, mode, {2, 3}, 0.8, 1);
    }

    static client::Classifier linear(const std::vector<ClassId>& head, const Matrix& w) {
        client::Classifier clf;
        clf.head = head;
        std::vector<num::LayerSpec> spec = {{w.rows(), w.cols(), num::Activation::Identity}};
        clf.net = num::mlp_init(spec, num::Role::Classifier, 0);
        clf.net.weights[0] = w;
        return clf;
    }

    // Column k of the weights copies input unit head[k].
    static client::Classifier oracle(const std::vector<ClassId>& head) {
        Matrix w(4, head.size(), 0.0);
        for (std::size_t k = 0; k < head.size(); ++k) w(head[k], k) = 1.0;
        return linear(head, w);
    }
};

}  // namespace

TEST_CASE("prediction") {
    const std::vector<ClassId> head = {0, 1, 2, 3, 4, 5};
    SUBCASE("one-hot logits pick the hot class") {
        Matrix s(1, 6, 0.0);
        s(0, 4) = 1.0;
        CHECK(predict_scores(s, head, head) == std::vector<ClassId>{4});
    }
    SUBCASE("exact ties go to the lowest class") {
        Matrix s(1, 6, 0.0);
        s(0, 2) = s(0, 5) = 3.0;
        CHECK(predict_scores(s, head, head) == std::vector<ClassId>{2});
    }
    SUBCASE("restricting the class space masks other logits") {
        const Matrix s(1, 6, std::vector<double>{9, 1, 0, 0.5, 3, 2});
        CHECK(predict_scores(s, head, head) == std::vector<ClassId>{0});
        const std::vector<ClassId> unseen = {3, 4, 5};
        CHECK(predict_scores(s, head, unseen) == std::vector<ClassId>{4});
    }
    SUBCASE("singleton class space") {
        const Matrix s = random_matrix(30, 6, 3);
        const std::vector<ClassId> one = {3};
        for (ClassId p : predict_scores(s, head, one)) CHECK(p == 3);
    }
    SUBCASE("class outside the head") {
        const std::vector<ClassId> outside = {1, 9};
        CHECK_THROWS(predict_scores(Matrix(1, 6, 0.0), head, outside));
    }
}

TEST_CASE("per-class top-1") {
    const std::vector<ClassId> cls = {0, 1};
    const std::vector<ClassId> y = {0, 0, 1}, p = {0, 1, 1};
    CHECK(per_class_top1(p, y, cls) == doctest::Approx(75.0));
    CHECK(per_class_top1(y, y, cls) == 100.0);

    // 9/10 right in A, 0/1 in B: macro 45, micro would be 81.8.
    std::vector<ClassId> yi(10, 0), pi(10, 0);
    pi[9] = 1;
    yi.push_back(1);
    pi.push_back(0);
    CHECK(per_class_top1(pi, yi, cls) == doctest::Approx(45.0));

    // Classes without test rows are left out of the mean.
    const std::vector<ClassId> three = {0, 1, 7};
    CHECK(per_class_top1(p, y, three) == doctest::Approx(75.0));

    // Duplicating every row leaves the value unchanged.
    Rng rng(4);
    std::vector<ClassId> ly, lp;
    for (int i = 0; i < 60; ++i) {
        ly.push_back(static_cast<ClassId>(rng.below(5)));
        lp.push_back(static_cast<ClassId>(rng.below(5)));
    }
    const std::vector<ClassId> five = {0, 1, 2, 3, 4};
    const double base = per_class_top1(lp, ly, five);
    for (int k = 2; k <= 4; ++k) {
        std::vector<ClassId> dy, dp;
        for (int j = 0; j < k; ++j) {
            dy.insert(dy.end(), ly.begin(), ly.end());
            dp.insert(dp.end(), lp.begin(), lp.end());
        }
        CHECK(per_class_top1(dp, dy, five) == doctest::Approx(base).epsilon(1e-12));
    }

    const std::vector<ClassId> empty;
    CHECK_THROWS(per_class_top1(empty, empty, cls));
    const std::vector<ClassId> other = {5};
    CHECK_THROWS(per_class_top1(p, y, other));
}

TEST_CASE("harmonic mean") {
    CHECK(std::abs(harmonic_mean(83.9, 85.7) - 84.8) <= 0.05);
    CHECK(std::abs(harmonic_mean(79.0, 86.7) - 82.7) <= 0.05);
    CHECK(harmonic_mean(40.0, 40.0) == doctest::Approx(40.0));
    CHECK(harmonic_mean(0.0, 70.0) == 0.0);
    CHECK(harmonic_mean(0.0, 0.0) == 0.0);
    CHECK_THROWS(harmonic_mean(-1.0, 2.0));
    CHECK_THROWS(harmonic_mean(1.0, -2.0));

    Rng rng(5);
    for (int i = 0; i < 2000; ++i) {
        const double u = 100 * rng.uniform(), s = 100 * rng.uniform();
        const double h = harmonic_mean(u, s);
        CHECK(h <= (u + s) / 2 + 1e-12);
        CHECK(h <= 2 * std::min(u, s) + 1e-12);
        CHECK(h >= 0.0);
        CHECK(h == doctest::Approx(harmonic_mean(s, u)));
    }
}

TEST_CASE("czsl evaluation") {
    SUBCASE("oracle student scores 100") {
        OneHotWorld w(TeacherMode::Transductive);
        client::ArtifactBundle b;
        b.student = OneHotWorld::oracle({0, 1, 2, 3});
        const auto r = eval_czsl(b, w.split, w.ds, wire::Scenario::WhiteBox);
        CHECK(r.u == 100.0);
        CHECK(r.task == Task::CZSL);
        CHECK_FALSE(r.masked);
    }
    SUBCASE("transductive evaluation does not mask seen classes") {
        OneHotWorld w(TeacherMode::Transductive);
        client::ArtifactBundle b;
        // Seen logits dominate on every row; the unseen block still ranks the true class first.
        Matrix wt(4, 4, 0.0);
        for (std::size_t i = 0; i < 4; ++i) {
            wt(i, 0) = 10.0;
            wt(i, i) += 1.0;
        }
        b.student = OneHotWorld::linear({0, 1, 2, 3}, wt);
        CHECK(eval_czsl(b, w.split, w.ds, wire::Scenario::BlackBox).u == 0.0);
        const auto masked = eval_czsl(b, w.split, w.ds, wire::Scenario::BlackBox, true);
        CHECK(masked.u == 100.0);
        CHECK(masked.masked);
    }
    SUBCASE("inductive evaluation needs the unseen-class classifier") {
        OneHotWorld w(TeacherMode::Inductive);
        client::ArtifactBundle b;
        b.student = OneHotWorld::oracle({0, 1});
        CHECK_THROWS(eval_czsl(b, w.split, w.ds, wire::Scenario::WhiteBox));
        b.classifier_czsl = OneHotWorld::oracle({2, 3});
        const auto r = eval_czsl(b, w.split, w.ds, wire::Scenario::WhiteBox);
        CHECK(r.u == 100.0);
        CHECK(r.teacher_mode == TeacherMode::Inductive);
        CHECK(r.confusion[2][2] == 20);
        CHECK(r.confusion[3][3] == 20);
    }
    SUBCASE("a label-blind predictor over two classes averages 50") {
        // Any rule that ignores the label scores p on one class and 1 - p on the other.
        std::vector<double> scores;
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            data::Dataset ds;
            ds.features = random_matrix(400, 8, seed);
            for (std::size_t r = 0; r < 400; ++r) ds.labels.push_back(static_cast<ClassId>(r / 100));
            ds.semantics.rows = random_matrix(4, 3, seed);
            ds.class_names = {"a", "b", "c", "d"};
            const auto split = data::split_azsl(ds, TeacherMode::Inductive, {2, 3}, 0.8, seed);
            client::ArtifactBundle b;
            b.classifier_czsl = OneHotWorld::linear({2, 3}, random_matrix(8, 2, seed + 50));
            scores.push_back(eval_czsl(b, split, ds, wire::Scenario::WhiteBox).u);
        }
        double mean = 0;
        for (double s : scores) mean += s / scores.size();
        CHECK(std::abs(mean - 50.0) <= 5.0);
    }
}

TEST_CASE("gzsl evaluation") {
    OneHotWorld w(TeacherMode::Transductive);
    client::ArtifactBundle b;

    SUBCASE("oracle") {
        b.student = OneHotWorld::oracle({0, 1, 2, 3});
        const auto r = eval_gzsl(b, w.split, w.ds, wire::Scenario::WhiteBox);
        CHECK(r.u == 100.0);
        CHECK(r.s == 100.0);
        CHECK(r.H == 100.0);
    }
    SUBCASE("always predicting one seen class") {
        Matrix wt(4, 4, 0.0);
        for (std::size_t i = 0; i < 4; ++i) wt(i, 1) = 1.0;
        b.student = OneHotWorld::linear({0, 1, 2, 3}, wt);
        const auto r = eval_gzsl(b, w.split, w.ds, wire::Scenario::WhiteBox);
        CHECK(r.u == 0.0);
        CHECK(r.H == 0.0);
        CHECK(r.s == doctest::Approx(50.0));
    }
    SUBCASE("inductive path uses the all-class classifier") {
        OneHotWorld ind(TeacherMode::Inductive);
        b.student = OneHotWorld::oracle({0, 1});
        CHECK_THROWS(eval_gzsl(b, ind.split, ind.ds, wire::Scenario::WhiteBox));
        b.classifier = OneHotWorld::oracle({0, 1, 2, 3});
        CHECK(eval_gzsl(b, ind.split, ind.ds, wire::Scenario::WhiteBox).H == 100.0);
    }
}

TEST_CASE("reports are internally consistent") {
    Rng rng(9);
    const std::vector<ClassId> seen = {0, 1, 2}, unseen = {3, 4};
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<ClassId> y, p;
        for (int i = 0; i < 200; ++i) {
            y.push_back(static_cast<ClassId>(rng.below(5)));
            p.push_back(rng.uniform() < 0.6 ? y.back() : static_cast<ClassId>(rng.below(5)));
        }
        const auto r = make_report(Task::GZSL, p, y, seen, unseen, 5);
        CHECK(std::abs(accuracy_from_confusion(r, unseen) - r.u) <= 1e-9);
        CHECK(std::abs(accuracy_from_confusion(r, seen) - r.s) <= 1e-9);
        CHECK(r.H == doctest::Approx(harmonic_mean(r.u, r.s)));
        for (double v : {r.u, r.s, r.H}) CHECK((v >= 0.0 && v <= 100.0));
        for (ClassId c = 0; c < 5; ++c) {
            std::uint64_t row = 0;
            for (auto n : r.confusion[c]) row += n;
            CHECK(row == static_cast<std::uint64_t>(std::count(y.begin(), y.end(), c)));
        }
    }
}

TEST_CASE("report text") {
    const std::vector<ClassId> y = {0, 1, 2, 2}, p = {0, 2, 2, 2};
    const std::vector<ClassId> seen = {0, 1}, unseen = {2};
    auto r = make_report(Task::GZSL, p, y, seen, unseen, 3);
    r.class_names = {"a", "b", "c"};
    r.seeds = {{"master", 1}};
    const auto text = r.to_text();
    CHECK(text.find("task: GZSL") != std::string::npos);
    CHECK(text.find("u: 100.00") != std::string::npos);
    CHECK(text.find("s: 50.00") != std::string::npos);
    CHECK(text.find("H: 66.67") != std::string::npos);
    CHECK(text.find("[confusion]") != std::string::npos);

    auto cz = make_report(Task::CZSL, p, y, {}, unseen, 3);
    const auto ct = cz.to_text();
    CHECK(ct.find("\ns: ") == std::string::npos);
    CHECK(ct.find("\nH: ") == std::string::npos);
}

TEST_CASE("pca projection") {
    SUBCASE("axis-aligned 2-D data comes back up to sign") {
        Matrix x(6, 2, std::vector<double>{-5, 1, 5, 1, 0, 2, 0, 0, 3, 1, -3, 1});
        const Matrix p = pca_project(x);
        double m0 = 0, m1 = 0;
        for (std::size_t r = 0; r < 6; ++r) m0 += x(r, 0) / 6, m1 += x(r, 1) / 6;
        for (std::size_t r = 0; r < 6; ++r) {
            CHECK(std::abs(std::abs(p(r, 0)) - std::abs(x(r, 0) - m0)) <= 1e-9);
            CHECK(std::abs(std::abs(p(r, 1)) - std::abs(x(r, 1) - m1)) <= 1e-9);
        }
    }
    SUBCASE("rank-2 data reconstructs exactly from two components") {
        const Matrix basis = random_matrix(2, 7, 1);
        const Matrix coef = random_matrix(40, 2, 2, 3.0);
        const Matrix x = num::matmul(coef, basis);
        Matrix comp;
        const Matrix p = pca_project(x, &comp);
        REQUIRE(comp.rows() == 7);
        REQUIRE(comp.cols() == 2);
        std::vector<double> mean(7, 0.0);
        for (std::size_t r = 0; r < 40; ++r)
            for (std::size_t j = 0; j < 7; ++j) mean[j] += x(r, j) / 40;
        const Matrix back = num::matmul_nt(p, comp);
        double err = 0;
        for (std::size_t r = 0; r < 40; ++r)
            for (std::size_t j = 0; j < 7; ++j) err = std::max(err, std::abs(back(r, j) + mean[j] - x(r, j)));
        CHECK(err < 1e-9);
        for (std::size_t k = 0; k < 2; ++k) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < 7; ++j)
                if (std::abs(comp(j, k)) > std::abs(comp(best, k))) best = j;
            CHECK(comp(best, k) > 0.0);
        }
    }
    SUBCASE("duplicated rows project identically") {
        const Matrix base = random_matrix(10, 5, 3);
        Matrix twice(20, 5);
        for (std::size_t r = 0; r < 20; ++r)
            for (std::size_t j = 0; j < 5; ++j) twice(r, j) = base(r % 10, j);
        const Matrix p = pca_project(twice);
        for (std::size_t r = 0; r < 10; ++r) {
            CHECK(p(r, 0) == doctest::Approx(p(r + 10, 0)));
            CHECK(p(r, 1) == doctest::Approx(p(r + 10, 1)));
        }
    }
    SUBCASE("export and errors") {
        const auto dir = testutil::scratch_dir("pca");
        const std::vector<ClassId> labels = {0, 1, 1, 2};
        export_projection(random_matrix(4, 3, 4), labels, dir / "p.csv");
        std::ifstream in(dir / "p.csv");
        std::string line;
        std::getline(in, line);
        CHECK(line == "label,pc1,pc2");
        int n = 0;
        while (std::getline(in, line)) ++n;
        CHECK(n == 4);
        CHECK_THROWS(pca_project(Matrix(5, 3, 2.0)));
        CHECK_THROWS(pca_project(Matrix(1, 3, 2.0)));
    }
}
