#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "azsl/datasets.hpp"
#include "azsl/error.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace azsl;
using namespace azsl::data;
using num::Matrix;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream(p) << text;
}

Matrix class_means(const Dataset& ds) {
    Matrix m(ds.num_classes(), ds.feature_dim());
    std::vector<double> n(ds.num_classes(), 0.0);
    for (std::size_t r = 0; r < ds.size(); ++r) {
        n[ds.labels[r]] += 1.0;
        for (std::size_t j = 0; j < ds.feature_dim(); ++j) m(ds.labels[r], j) += ds.features(r, j);
    }
    for (std::size_t c = 0; c < m.rows(); ++c)
        for (double& v : m.row(c)) v /= n[c];
    return m;
}

std::size_t rows_with_label(const Dataset& ds, const std::vector<std::size_t>& idx, ClassId c) {
    return static_cast<std::size_t>(std::count_if(idx.begin(), idx.end(), [&](std::size_t i) { return ds.labels[i] == c; }));
}

}  // namespace

TEST_CASE("synthetic generation") {
    SyntheticSpec spec;

    SUBCASE("deterministic per seed") {
        CHECK(make_synthetic(spec, 5) == make_synthetic(spec, 5));
        CHECK_FALSE(make_synthetic(spec, 5) == make_synthetic(spec, 6));
    }
    SUBCASE("shape, non-negativity and distinct semantic rows") {
        const auto ds = make_synthetic(spec, 1);
        CHECK(ds.size() == 2000);
        CHECK(ds.feature_dim() == 64);
        CHECK(ds.semantic_dim() == 16);
        CHECK(ds.semantics.source == SemanticSource::Synthetic);
        for (double v : ds.features.values()) CHECK(v >= 0.0);
        std::set<std::vector<double>> rows;
        for (std::size_t c = 0; c < ds.num_classes(); ++c)
            rows.emplace(ds.semantics.rows.row(c).begin(), ds.semantics.rows.row(c).end());
        CHECK(rows.size() == ds.num_classes());
        CHECK_NOTHROW(ds.validate());
    }
    SUBCASE("zero noise puts every sample on its class mean") {
        spec.noise = 0.0;
        spec.per_class = 5;
        const auto ds = make_synthetic(spec, 2);
        const Matrix means = synthetic_class_means(spec, ds.semantics);
        for (std::size_t r = 0; r < ds.size(); ++r)
            for (std::size_t j = 0; j < ds.feature_dim(); ++j) CHECK(ds.features(r, j) == means(ds.labels[r], j));
    }
    SUBCASE("well separated clusters are recovered by nearest centroid") {
        spec.separation = 10.0;
        spec.noise = 0.2;  // ratio 50
        const auto ds = make_synthetic(spec, 3);
        const auto split = split_azsl(ds, TeacherMode::Transductive, trailing_unseen(10, 8), 0.8, 4);
        Matrix centroid(ds.num_classes(), ds.feature_dim());
        std::vector<double> n(ds.num_classes(), 0.0);
        for (std::size_t i : split.teacher_train) {
            n[ds.labels[i]] += 1;
            for (std::size_t j = 0; j < ds.feature_dim(); ++j) centroid(ds.labels[i], j) += ds.features(i, j);
        }
        for (std::size_t c = 0; c < centroid.rows(); ++c)
            for (double& v : centroid.row(c)) v /= n[c];

        std::vector<std::size_t> held = split.client_eval_seen;
        held.insert(held.end(), split.client_eval_unseen.begin(), split.client_eval_unseen.end());
        std::size_t correct = 0;
        for (std::size_t i : held) {
            std::size_t best = 0;
            double best_d = 1e300;
            for (std::size_t c = 0; c < centroid.rows(); ++c) {
                double d = 0;
                for (std::size_t j = 0; j < ds.feature_dim(); ++j) d += std::pow(ds.features(i, j) - centroid(c, j), 2);
                if (d < best_d) best_d = d, best = c;
            }
            correct += best == ds.labels[i];
        }
        CHECK(static_cast<double>(correct) / held.size() >= 0.99);
    }
    SUBCASE("invalid specs") {
        spec.seen_count = spec.num_classes;
        CHECK_THROWS(make_synthetic(spec, 1));
        spec = SyntheticSpec{};
        spec.separation = 0.0;
        CHECK_THROWS(make_synthetic(spec, 1));
        spec = SyntheticSpec{};
        spec.feature_dim = 0;
        CHECK_THROWS(make_synthetic(spec, 1));
    }
}

TEST_CASE("inductive and transductive splits") {
    const auto ds = make_synthetic(SyntheticSpec{}, 11);
    const auto unseen = trailing_unseen(10, 8);
    REQUIRE(unseen == std::vector<ClassId>{8, 9});

    for (auto mode : {TeacherMode::Inductive, TeacherMode::Transductive}) {
        CAPTURE(to_string(mode));
        const auto b = split_azsl(ds, mode, unseen, kDefaultTrainRatio, 12);
        CHECK(b.teacher_mode == mode);
        CHECK(b.seed == 12);

        // Partition: disjoint lists covering every row.
        std::vector<std::size_t> all = b.teacher_train;
        all.insert(all.end(), b.client_eval_seen.begin(), b.client_eval_seen.end());
        all.insert(all.end(), b.client_eval_unseen.begin(), b.client_eval_unseen.end());
        std::sort(all.begin(), all.end());
        std::vector<std::size_t> expect(ds.size());
        std::iota(expect.begin(), expect.end(), 0);
        CHECK(all == expect);

        for (std::size_t i : b.client_eval_seen) CHECK(ds.labels[i] < 8);
        for (std::size_t i : b.client_eval_unseen) CHECK(ds.labels[i] >= 8);

        for (ClassId c = 0; c < 8; ++c) {
            CHECK(rows_with_label(ds, b.teacher_train, c) == 160);
            CHECK(rows_with_label(ds, b.client_eval_seen, c) == 40);
        }
        if (mode == TeacherMode::Inductive) {
            std::set<ClassId> labels;
            for (std::size_t i : b.teacher_train) labels.insert(ds.labels[i]);
            CHECK(labels == std::set<ClassId>(b.seen_classes.begin(), b.seen_classes.end()));
            CHECK(b.client_eval_unseen.size() == 400);
            CHECK(b.teacher_classes() == b.seen_classes);
        } else {
            for (ClassId c : unseen) {
                CHECK(rows_with_label(ds, b.teacher_train, c) == 160);
                CHECK(rows_with_label(ds, b.client_eval_unseen, c) == 40);
            }
            CHECK(b.teacher_classes().size() == 10);
        }
    }

    CHECK(split_azsl(ds, TeacherMode::Transductive, unseen, 0.8, 3).teacher_train ==
          split_azsl(ds, TeacherMode::Transductive, unseen, 0.8, 3).teacher_train);
    CHECK_FALSE(split_azsl(ds, TeacherMode::Transductive, unseen, 0.8, 3).client_eval_seen ==
                split_azsl(ds, TeacherMode::Transductive, unseen, 0.8, 4).client_eval_seen);
}

TEST_CASE("four-to-one split arithmetic") {
    CHECK(eval_count(100, 0.8) == 20);
    CHECK(100 - eval_count(100, 0.8) == 80);
    CHECK(eval_count(7924, 0.8) == 1584);
    CHECK(eval_count(9, 0.8) == 1);  // floor on the eval side
    CHECK(eval_count(4, 0.8) == 0);

    // Unseen-row total of the aPY benchmark under the transductive split.
    const std::size_t apy_unseen = 6333 + 1591;
    CHECK(static_cast<double>(6333) / apy_unseen == doctest::Approx(0.8).epsilon(0.01));

    for (std::size_t n = 1; n <= 300; ++n) {
        const std::size_t e = eval_count(n, 0.8);
        CHECK(e <= n * 0.2 + 1e-9);
        CHECK(e + 1 > n * 0.2 - 1e-9);
    }

    SyntheticSpec spec;
    spec.per_class = 100;
    spec.num_classes = 3;
    spec.seen_count = 2;
    const auto ds = make_synthetic(spec, 1);
    const auto b = split_azsl(ds, TeacherMode::Transductive, {2}, 0.8, 1);
    CHECK(rows_with_label(ds, b.teacher_train, 2) == 80);
    CHECK(b.client_eval_unseen.size() == 20);
}

TEST_CASE("split errors") {
    SyntheticSpec spec;
    spec.num_classes = 3;
    spec.seen_count = 2;
    spec.per_class = 1;
    const auto ds = make_synthetic(spec, 1);
    CHECK_THROWS(split_azsl(ds, TeacherMode::Transductive, {2}, 0.8, 1));
    CHECK_NOTHROW(split_azsl(ds, TeacherMode::Inductive, {2}, 0.8, 1));
    CHECK_THROWS(split_azsl(ds, TeacherMode::Inductive, {}, 0.8, 1));
    CHECK_THROWS(split_azsl(ds, TeacherMode::Inductive, {0, 1, 2}, 0.8, 1));
    CHECK_THROWS(split_azsl(ds, TeacherMode::Inductive, {7}, 0.8, 1));
    CHECK_THROWS(split_azsl(ds, TeacherMode::Inductive, {2}, 1.0, 1));
    CHECK_THROWS(split_azsl(ds, TeacherMode::Inductive, {2}, 0.0, 1));
}

TEST_CASE("csv ingestion") {
    const auto dir = testutil::scratch_dir("csv");

    SUBCASE("three-row fixture with sparse class ids") {
        write_text(dir / "f.csv", "label,f0,f1,f2,f3\n17,1,2,3,4\n5,0.5,0.25,0,1\n17,9,8,7,6\n");
        write_text(dir / "f.sem.csv", "class,s0,s1\n5,1,0\n17,0,1\n");
        const auto ds = load_features(dir / "f.csv", FileFormat::Csv);
        CHECK(ds.size() == 3);
        CHECK(ds.num_classes() == 2);
        CHECK(ds.feature_dim() == 4);
        CHECK(ds.labels == std::vector<ClassId>{1, 0, 1});
        CHECK(ds.class_names == std::vector<std::string>{"5", "17"});
        CHECK(ds.features(1, 1) == 0.25);
        CHECK(format_from_extension(dir / "f.csv") == FileFormat::Csv);
    }
    SUBCASE("empty file") {
        write_text(dir / "e.csv", "");
        write_text(dir / "e.sem.csv", "class,s0\na,1\n");
        try {
            load_features(dir / "e.csv", FileFormat::Csv);
            FAIL("expected an error");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("no rows") != std::string::npos);
        }
    }
    SUBCASE("errors carry row numbers") {
        write_text(dir / "g.sem.csv", "class,s0\na,1\nb,2\n");
        auto line_of = [&](const std::string& body) -> std::size_t {
            write_text(dir / "g.csv", body);
            try {
                load_features(dir / "g.csv", FileFormat::Csv);
            } catch (const ParseError& e) {
                return e.line();
            }
            return 0;
        };
        CHECK(line_of("label,f0,f1\na,1,2\nb,1\n") == 3);
        CHECK(line_of("label,f0,f1\na,1,2\na,1,2\nc,1,2\n") == 4);
        CHECK(line_of("label,f0,f1\na,nan,2\n") == 2);
        CHECK(line_of("label,f0,f1\na,1,inf\n") == 2);
        CHECK(line_of("label,f0,f1\na,1,x\n") == 2);
    }
    SUBCASE("missing semantics sibling") {
        write_text(dir / "h.csv", "label,f0\na,1\n");
        CHECK_THROWS_AS(load_features(dir / "h.csv", FileFormat::Csv), ParseError);
    }
    SUBCASE("single-row save writes one data line") {
        Dataset ds;
        ds.features = Matrix(1, 3, std::vector<double>{0.1, 2.0, -3.5});
        ds.labels = {0};
        ds.semantics.rows = Matrix(1, 2, 1.0);
        ds.class_names = {"only"};
        save_features(ds, dir / "one.csv", FileFormat::Csv);
        std::ifstream in(dir / "one.csv");
        std::vector<std::string> lines;
        for (std::string l; std::getline(in, l);) lines.push_back(l);
        REQUIRE(lines.size() == 2);
        CHECK(lines[0] == "label,f0,f1,f2");
        CHECK(load_features(dir / "one.csv", FileFormat::Csv) == ds);
    }
    SUBCASE("csv round trip is exact") {
        const auto ds = make_synthetic(testutil::small_spec(), 9);
        save_features(ds, dir / "rt.csv", FileFormat::Csv);
        CHECK(load_features(dir / "rt.csv", FileFormat::Csv) == ds);
        std::vector<std::string> names;
        const auto sem = load_semantics(dir / "rt.csv", FileFormat::Csv, &names);
        CHECK(sem.rows == ds.semantics.rows);
        CHECK(names == ds.class_names);
    }
}

TEST_CASE("azb files") {
    const auto dir = testutil::scratch_dir("azb");
    const auto ds = make_synthetic(SyntheticSpec{}, 21);
    save_features(ds, dir / "d.azb", FileFormat::Azb);

    SUBCASE("bit-exact round trip and preserved class means") {
        const auto back = load_features(dir / "d.azb", FileFormat::Azb);
        CHECK(back == ds);
        const Matrix a = class_means(ds), b = class_means(back);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.data()[i] - b.data()[i]) <= 1e-12);
        CHECK(load_semantics(dir / "d.azb", FileFormat::Azb).rows == ds.semantics.rows);
    }
    SUBCASE("layout and size") {
        const auto size = std::filesystem::file_size(dir / "d.azb");
        CHECK(size == 4 + 16 + ds.size() * 64 * 8 + ds.size() * 4 + 10 * 16 * 8);
        std::ifstream in(dir / "d.azb", std::ios::binary);
        char magic[4];
        in.read(magic, 4);
        CHECK(std::string(magic, 4) == "AZB1");
        unsigned char n[4];
        in.read(reinterpret_cast<char*>(n), 4);
        CHECK((n[0] | n[1] << 8 | n[2] << 16 | n[3] << 24) == 2000);
    }
    SUBCASE("corrupt files are rejected") {
        auto bytes = std::vector<char>(std::filesystem::file_size(dir / "d.azb"));
        std::ifstream(dir / "d.azb", std::ios::binary).read(bytes.data(), static_cast<std::streamsize>(bytes.size()));

        auto bad = bytes;
        bad[0] = 'X';
        std::ofstream(dir / "m.azb", std::ios::binary).write(bad.data(), static_cast<std::streamsize>(bad.size()));
        CHECK_THROWS_AS(load_features(dir / "m.azb", FileFormat::Azb), ParseError);

        std::ofstream(dir / "t.azb", std::ios::binary).write(bytes.data(), 100);
        CHECK_THROWS(load_features(dir / "t.azb", FileFormat::Azb));

        // A NaN in the first feature.
        bad = bytes;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        std::memcpy(bad.data() + 20, &nan, 8);
        std::ofstream(dir / "n.azb", std::ios::binary).write(bad.data(), static_cast<std::streamsize>(bad.size()));
        CHECK_THROWS_AS(load_features(dir / "n.azb", FileFormat::Azb), ParseError);

        std::ofstream(dir / "z.azb", std::ios::binary).close();
        CHECK_THROWS_AS(load_features(dir / "z.azb", FileFormat::Azb), ParseError);
    }
    CHECK(format_from_extension("x.azb") == FileFormat::Azb);
    CHECK_THROWS(format_from_extension("x.bin"));
}

TEST_CASE("validate catches broken invariants") {
    auto ds = make_synthetic(testutil::small_spec(), 1);
    auto bad = ds;
    bad.labels[3] = 99;
    CHECK_THROWS_AS(bad.validate(), ParseError);
    bad = ds;
    bad.labels.pop_back();
    CHECK_THROWS_AS(bad.validate(), ParseError);
    bad = ds;
    bad.features(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(bad.validate(), ParseError);
}
