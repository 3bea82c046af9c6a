#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <unistd.h>

#include "hsml/data.hpp"
#include "hsml/error.hpp"

using namespace hsml;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("hsml_test_data_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

fs::path write_file(const fs::path& p, const std::string& text) {
    std::ofstream(p) << text;
    return p;
}

std::pair<std::size_t, std::size_t> signal_columns(const TaskDataset& ds) {
    std::istringstream in(ds.provenance.at("signal_columns"));
    std::size_t a = 0, b = 0;
    in >> a >> b;
    return {a, b};
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST_CASE("circle generator") {
    GeneratorConfig exact;
    exact.radial_jitter = 0.0;
    const auto ds = generate_circle_task(3, 2, exact);
    CHECK(ds.num_examples() == 100);
    CHECK(ds.class_counts() == std::vector<std::size_t>{50, 50});
    const auto classes = ds.classes();
    for (std::size_t i = 0; i < 100; ++i) {
        const double r = std::hypot(ds.x(i, 0), ds.x(i, 1));
        CHECK(r == doctest::Approx(classes[i] == 0 ? 1.0 : 2.0).epsilon(1e-12));
    }
    CHECK_THROWS_AS(generate_circle_task(1, 1), InvalidConfig);
    CHECK_THROWS_AS(generate_circle_task(1, 11), InvalidConfig);

    SUBCASE("noise columns sit beside the signal") {
        const auto wide = generate_circle_task(4, 6, exact);
        const auto [a, b] = signal_columns(wide);
        CHECK(a != b);
        for (std::size_t i = 0; i < 100; ++i) {
            const double r = std::hypot(wide.x(i, a), wide.x(i, b));
            CHECK((std::abs(r - 1.0) < 1e-12 || std::abs(r - 2.0) < 1e-12));
        }
    }
}

TEST_CASE("signal placement varies with the seed") {
    // With M = 10 two draws collide with probability 1/90 for the ordered
    // pair of signal columns; over 20 seeds at least 15 distinct placements
    // are expected with overwhelming probability.
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (std::uint64_t s = 0; s < 20; ++s) seen.insert(signal_columns(generate_circle_task(s, 10)));
    CHECK(seen.size() >= 15);
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto a = generate_spiral_task(2 * s, 5), b = generate_spiral_task(2 * s + 1, 5);
        CHECK(a.x != b.x);
    }
}

TEST_CASE("spiral generator") {
    GeneratorConfig exact;
    exact.spiral_noise = 0.0;
    const auto ds = generate_spiral_task(5, 2, exact);
    CHECK(ds.num_examples() == 100);
    CHECK(ds.class_counts() == std::vector<std::size_t>(5, 20));
    const auto classes = ds.classes();
    const auto [cx, cy] = signal_columns(ds);
    for (std::size_t i = 0; i < 100; ++i) {
        const double x = ds.x(i, cx), y = ds.x(i, cy);
        const double t = std::hypot(x, y);
        CHECK(t >= 0.25 - 1e-12);
        CHECK(t <= 2.25 + 1e-12);
        // Undo the arm rotation; the point must then lie on arm 0.
        const double rot = -2.0 * std::numbers::pi * double(classes[i]) / 5.0;
        const double xr = x * std::cos(rot) - y * std::sin(rot), yr = x * std::sin(rot) + y * std::cos(rot);
        const double theta = 2.0 * std::numbers::pi * t;
        CHECK(xr == doctest::Approx(t * std::cos(theta)).epsilon(1e-9));
        CHECK(yr == doctest::Approx(t * std::sin(theta)).epsilon(1e-9));
    }
}

TEST_CASE("circle-spiral corpus") {
    const auto corpus = generate_circle_spiral_corpus(7, 100);
    CHECK(corpus.size() == 100);
    std::set<std::size_t> widths;
    std::size_t circles = 0;
    for (const auto& t : corpus) {
        CHECK(t.num_attributes() >= 2);
        CHECK(t.num_attributes() <= 10);
        widths.insert(t.num_attributes());
        circles += t.num_targets() == 2;
    }
    CHECK(widths.size() == 9);
    CHECK(circles > 25);
    CHECK(circles < 75);
    CHECK(generate_circle_spiral_corpus(7, 100) == corpus);
    CHECK_THROWS_AS(generate_circle_spiral_corpus(7, 1), InvalidConfig);
}

TEST_CASE("regression corpus") {
    const auto corpus = generate_regression_corpus(3, 10);
    CHECK(corpus.size() == 10);
    for (const auto& t : corpus) {
        CHECK(t.kind == TaskKind::regression);
        double mean = 0.0, sq = 0.0;
        for (double v : t.y.data) mean += v;
        mean /= double(t.y.rows);
        for (double v : t.y.data) sq += (v - mean) * (v - mean);
        CHECK(std::abs(mean) < 1e-12);
        CHECK(std::abs(sq / double(t.y.rows) - 1.0) < 1e-12);

        std::istringstream cols(t.provenance.at("signal_columns"));
        std::set<std::size_t> seen;
        for (std::size_t c; cols >> c;) {
            CHECK(c < t.num_attributes());
            CHECK(seen.insert(c).second);
        }
        CHECK_FALSE(seen.empty());
    }
}

TEST_CASE("tabular ingestion") {
    TempDir tmp("ingest");
    SUBCASE("mean imputation then min-max scaling") {
        const auto p = write_file(tmp.path / "t.csv", "x,cat,k,y\n1,a,5,p\n?,b,5,q\n3,a,5,p\n");
        const auto ds = ingest_tabular(p, "y", TaskKind::classification);
        CHECK(ds.attribute_names == std::vector<std::string>{"x", "cat=a", "cat=b", "k"});
        CHECK(ds.x == Matrix(3, 4, {0, 1, 0, 0, 0.5, 0, 1, 0, 1, 1, 0, 0}));
        CHECK(ds.y == Matrix(3, 2, {1, 0, 0, 1, 1, 0}));
        CHECK(ds.target_names == std::vector<std::string>{"p", "q"});
    }
    SUBCASE("categorical missing takes the mode; rows without a target are dropped") {
        const auto p = write_file(tmp.path / "t.csv", "c,y\nb,1\n,2\nb,3\na,\na,4\n");
        const auto ds = ingest_tabular(p, "y", TaskKind::regression);
        CHECK(ds.num_examples() == 4);
        CHECK(ds.x == Matrix(4, 2, {0, 1, 0, 1, 0, 1, 1, 0}));
        double mean = 0.0;
        for (double v : ds.y.data) mean += v;
        CHECK(std::abs(mean) < 1e-12);
    }
    SUBCASE("errors name the problem") {
        CHECK_THROWS_AS(ingest_tabular(tmp.path / "absent.csv", "y", TaskKind::classification), IngestionError);
        const auto p = write_file(tmp.path / "t.csv", "a,b\n1,2\n");
        try {
            ingest_tabular(p, "target", TaskKind::classification);
            FAIL("expected IngestionError");
        } catch (const IngestionError& e) {
            CHECK(std::string(e.what()).find("target") != std::string::npos);
        }
        const auto q = write_file(tmp.path / "m.csv", "a,gone,y\n1,?,x\n2,,z\n");
        try {
            ingest_tabular(q, "y", TaskKind::classification);
            FAIL("expected IngestionError");
        } catch (const IngestionError& e) {
            CHECK(std::string(e.what()).find("gone") != std::string::npos);
        }
    }
}

TEST_CASE("canonical form round-trips bit-exactly") {
    TempDir tmp("canon");
    for (const auto& ds : {generate_circle_task(1, 4), generate_spiral_task(2, 7), generate_linear_regression_task(3, 5)}) {
        const fs::path dir = tmp.path / ds.provenance.at("seed");
        write_dataset(ds, dir);
        const auto back = read_dataset(dir / (ds.name + ".csv"));
        CHECK(back == ds);
        write_dataset(back, tmp.path / "again");
        CHECK(read_bytes(dir / (ds.name + ".csv")) == read_bytes(tmp.path / "again" / (ds.name + ".csv")));
    }
    const auto p = write_file(tmp.path / "in.csv", "x,c,y\n0.1,u,a\n0.7,v,b\n0.4,u,a\n");
    const auto ingested = ingest_tabular(p, "y", TaskKind::classification);
    write_dataset(ingested, tmp.path / "ing");
    const auto canon = tmp.path / "ing" / (ingested.name + ".csv");
    CHECK(read_dataset(canon) == ingested);
    // Re-ingesting the canonical table reproduces the attribute matrix: it is
    // already in [0,1] with both extremes present.
    CHECK(ingest_tabular(canon, "label", TaskKind::classification).x == ingested.x);
}

TEST_CASE("corpus split") {
    auto tasks = generate_circle_spiral_corpus(2, 100);
    for (std::uint64_t seed : {0u, 1u, 99u}) {
        const auto split = split_corpus(tasks, seed);
        CHECK(split.train.size() == 70);
        CHECK(split.validation.size() == 10);
        CHECK(split.test.size() == 20);
        std::set<std::string> names;
        for (const auto* part : {&split.train, &split.validation, &split.test})
            for (const auto& t : *part) names.insert(t.name);
        CHECK(names.size() == 100);
    }
    CHECK(split_corpus(tasks, 5).train == split_corpus(tasks, 5).train);
    CHECK_THROWS_AS(split_corpus(tasks, 0, 0.95, 0.1), InvalidConfig);

    TempDir tmp("corpus");
    const auto split = split_corpus(generate_circle_spiral_corpus(4, 10), 3);
    write_corpus(split, tmp.path);
    const auto back = read_corpus(tmp.path);
    CHECK(back.train == split.train);
    CHECK(back.validation == split.validation);
    CHECK(back.test == split.test);
    CHECK(back.seed == 3);
    CHECK_THROWS_AS(read_corpus(tmp.path / "missing"), IngestionError);
}

TEST_CASE("sample_episode") {
    const auto circle = generate_circle_task(1, 3);
    std::mt19937_64 rng(5);
    SamplerConfig cfg;
    cfg.shots = 3;
    auto ep = sample_episode(circle, cfg, rng);
    REQUIRE(ep);
    CHECK(ep->n_labeled() == 6);
    CHECK(ep->n_unlabeled() == 40);
    CHECK(ep->has_held_out());

    cfg.shots = 1;
    const auto spiral = generate_spiral_task(2, 4);
    ep = sample_episode(spiral, cfg, rng);
    REQUIRE(ep);
    auto labels = ep->labeled_classes();
    std::sort(labels.begin(), labels.end());
    CHECK(labels == std::vector<std::size_t>{0, 1, 2, 3, 4});
    CHECK(ep->n_unlabeled() == 95); // 19 left per arm

    SUBCASE("strict mode signals a skip when a class is too small") {
        SamplerConfig strict;
        strict.cap_unlabeled = false;
        CHECK_FALSE(sample_episode(spiral, strict, rng).has_value());
        CHECK(sample_episode(circle, strict, rng).has_value());
        strict.shots = 31;
        CHECK_FALSE(sampleable(circle, strict));
    }
    SUBCASE("labeled and unlabeled draws are disjoint") {
        // Tag each row with its index in a spare attribute so rows can be traced.
        TaskDataset tagged = circle;
        for (std::size_t i = 0; i < tagged.num_examples(); ++i) tagged.x(i, 2) = double(i);
        SamplerConfig c;
        c.shots = 5;
        for (int t = 0; t < 1000; ++t) {
            const auto e = sample_episode(tagged, c, rng);
            std::set<double> ids;
            for (std::size_t i = 0; i < e->n_labeled(); ++i) ids.insert(e->x_labeled(i, 2));
            for (std::size_t i = 0; i < e->n_unlabeled(); ++i) ids.insert(e->x_unlabeled(i, 2));
            CHECK(ids.size() == e->n_labeled() + e->n_unlabeled());
        }
    }
    SUBCASE("total unlabeled mode") {
        SamplerConfig c;
        c.unlabeled_total = true;
        c.unlabeled = 7;
        CHECK(sample_episode(spiral, c, rng)->n_unlabeled() == 7);
    }
    SUBCASE("sampled episodes satisfy the episode invariants") {
        const auto corpus = generate_circle_spiral_corpus(9, 30);
        for (std::size_t shots : {1, 3, 5})
            for (const auto& t : corpus) {
                SamplerConfig c;
                c.shots = shots;
                const auto e = sample_episode(t, c, rng);
                REQUIRE(e);
                CHECK_NOTHROW(e->validate());
            }
    }
    SUBCASE("same seed, same episode") {
        std::mt19937_64 a(11), b(11);
        const auto e1 = sample_episode(circle, cfg, a), e2 = sample_episode(circle, cfg, b);
        CHECK(e1->x_labeled == e2->x_labeled);
        CHECK(e1->x_unlabeled == e2->x_unlabeled);
    }
    SUBCASE("regression episodes") {
        const auto reg = generate_linear_regression_task(1, 4);
        const auto e = sample_episode(reg, cfg, rng);
        REQUIRE(e);
        CHECK(e->n_labeled() == 10);
        CHECK(e->n_unlabeled() == 20);
    }
}

TEST_CASE("derive_seed") {
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) != derive_seed(2, 0));
    CHECK(derive_seed(42, 7) == derive_seed(42, 7));
}
