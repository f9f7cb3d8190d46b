#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "everadapt/evaluation.hpp"
#include "test_support.hpp"

using namespace everadapt;

// ---------------------------------------------------------------------------
// Spreadsheet-style oracle: recompute the three metrics straight from the
// formulas on a plain lower-triangular array.
// ---------------------------------------------------------------------------

namespace {

struct MetricsOracle {
    double acc;
    double bwt;        // meaningful only when n >= 2
    bool bwt_defined;
    double adapt_corrected;
    double adapt_literal;   // meaningful only when n >= 2
};

MetricsOracle oracle(const std::vector<std::vector<double>>& r) {
    const std::size_t n = r.size();
    MetricsOracle o{};
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += r[n - 1][j];
    o.acc = s / static_cast<double>(n);

    o.bwt_defined = n >= 2;
    if (o.bwt_defined) {
        double b = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i) b += r[n - 1][i] - r[i][i];
        o.bwt = b / static_cast<double>(n - 1);
    }
    double d = 0.0;
    for (std::size_t i = 0; i < n; ++i) d += r[i][i];
    o.adapt_corrected = d / static_cast<double>(n);
    if (n >= 2) o.adapt_literal = d / static_cast<double>(n - 1);
    return o;
}

ResultMatrix to_matrix(const std::vector<std::vector<double>>& r) {
    ResultMatrix m(r.size());
    for (std::size_t i = 0; i < r.size(); ++i)
        for (std::size_t j = 0; j <= i; ++j) m.set(i, j, r[i][j]);
    return m;
}

} // namespace

TEST_CASE("result matrix bookkeeping invariants") {
    ResultMatrix m(3);
    m.set(1, 0, 85.0);
    CHECK(m.get(1, 0) == 85.0);
    CHECK(m.defined(1, 0));
    CHECK_FALSE(m.defined(0, 0));

    SECTION("cells are write-once") {
        CHECK_THROWS_AS(m.set(1, 0, 90.0), state_error);
    }
    SECTION("upper triangle rejected") {
        CHECK_THROWS_AS(m.set(0, 1, 50.0), value_error);
    }
    SECTION("values clamped to [0,100]") {
        CHECK_THROWS_AS(m.set(2, 0, 101.0), value_error);
        CHECK_THROWS_AS(m.set(2, 1, -1.0), value_error);
    }
    SECTION("undefined reads rejected") {
        CHECK_THROWS_AS(m.get(2, 2), state_error);
    }
}

TEST_CASE("worked metric example") {
    // R = [[90], [85, 92], [80, 88, 95]]
    ResultMatrix m = to_matrix({{90.0}, {85.0, 92.0}, {80.0, 88.0, 95.0}});
    CHECK(acc_metric(m) == Catch::Approx(87.0 + 2.0 / 3.0).epsilon(1e-12));
    REQUIRE(bwt_metric(m).has_value());
    CHECK(*bwt_metric(m) == Catch::Approx(-7.0).epsilon(1e-12));
    CHECK(adapt_metric(m) == Catch::Approx(92.0 + 1.0 / 3.0).epsilon(1e-12));
    CHECK(adapt_metric(m, AdaptMode::PaperLiteral) == Catch::Approx(138.5).epsilon(1e-12));
}

TEST_CASE("metric edge cases") {
    SECTION("single domain") {
        ResultMatrix m = to_matrix({{73.0}});
        CHECK(acc_metric(m) == 73.0);
        CHECK_FALSE(bwt_metric(m).has_value());
        CHECK(adapt_metric(m) == 73.0);
        CHECK_THROWS_AS(adapt_metric(m, AdaptMode::PaperLiteral), value_error);
    }
    SECTION("constant matrix") {
        ResultMatrix m = to_matrix({{60.0}, {60.0, 60.0}, {60.0, 60.0, 60.0}});
        CHECK(acc_metric(m) == Catch::Approx(60.0));
        CHECK(*bwt_metric(m) == Catch::Approx(0.0));
        CHECK(adapt_metric(m) == Catch::Approx(60.0));
    }
    SECTION("no forgetting means zero BWT") {
        ResultMatrix m = to_matrix({{82.0}, {82.0, 91.0}, {82.0, 91.0, 77.0}});
        CHECK(*bwt_metric(m) == Catch::Approx(0.0).margin(1e-15));
    }
    SECTION("improvement gives positive BWT") {
        ResultMatrix m = to_matrix({{70.0}, {75.0, 80.0}});
        CHECK(*bwt_metric(m) == Catch::Approx(5.0));
    }
    SECTION("incomplete final row rejected") {
        ResultMatrix m(2);
        m.set(0, 0, 50.0);
        m.set(1, 1, 60.0);
        CHECK_THROWS_AS(acc_metric(m), state_error);
    }
}

TEST_CASE("metrics match the spreadsheet oracle on 50 random matrices") {
    Rng rng(2025);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = 1 + rng.below(6);
        std::vector<std::vector<double>> r(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j <= i; ++j) r[i].push_back(rng.uniform(0.0, 100.0));
        ResultMatrix m = to_matrix(r);
        MetricsOracle o = oracle(r);
        CHECK(std::fabs(acc_metric(m) - o.acc) < 1e-12);
        CHECK(std::fabs(adapt_metric(m) - o.adapt_corrected) < 1e-12);
        if (o.bwt_defined) {
            REQUIRE(bwt_metric(m).has_value());
            CHECK(std::fabs(*bwt_metric(m) - o.bwt) < 1e-12);
            CHECK(std::fabs(adapt_metric(m, AdaptMode::PaperLiteral) - o.adapt_literal) <
                  1e-12);
        } else {
            CHECK_FALSE(bwt_metric(m).has_value());
        }
    }
}

TEST_CASE("ACC is invariant under consistent domain relabeling") {
    Rng rng(7);
    // Permuting domain identities permutes the final row; the mean is
    // unchanged when the matrix is permuted consistently.
    std::vector<std::vector<double>> r{{90.0}, {85.0, 92.0}, {80.0, 88.0, 95.0}};
    const double base = acc_metric(to_matrix(r));
    std::vector<std::size_t> perm{2, 0, 1};
    std::vector<std::vector<double>> permuted{{0.0}, {0.0, 0.0}, {0.0, 0.0, 0.0}};
    // Relabel columns of the final row only; ACC depends on that row alone.
    for (std::size_t j = 0; j < 3; ++j) permuted[2][j] = r[2][perm[j]];
    permuted[0][0] = r[0][0];
    permuted[1] = r[1];
    CHECK(acc_metric(to_matrix(permuted)) == Catch::Approx(base));
}

TEST_CASE("accuracy counts argmax hits in eval mode") {
    Model m = testutil::make_sign_model();
    // Positive segments are class 0, negative segments class 1.
    DomainDataset ds;
    ds.domain_id = "acc";
    ds.window_len = 4;
    ds.segments = make_tensor({4, 1, 4},
                              {1.0, 2.0, 1.0, 2.0,
                               0.5, 0.25, 0.5, 0.25,
                               -1.0, -2.0, -1.0, -2.0,
                               -0.5, -0.25, -0.5, -0.25});

    SECTION("all correct gives 100") {
        ds.labels = {0, 0, 1, 1};
        CHECK(accuracy(m, ds) == 100.0);
    }
    SECTION("all inverted on a balanced binary set gives 0") {
        ds.labels = {1, 1, 0, 0};
        CHECK(accuracy(m, ds) == 0.0);
    }
    SECTION("3 of 4 correct gives 75") {
        ds.labels = {0, 0, 1, 0};
        CHECK(accuracy(m, ds) == 75.0);
    }
    SECTION("empty dataset rejected") {
        DomainDataset empty;
        empty.domain_id = "none";
        empty.window_len = 4;
        empty.segments = make_tensor({std::size_t{0}, std::size_t{1}, std::size_t{4}});
        CHECK_THROWS_AS(accuracy(m, empty), data_error);
    }
    SECTION("unlabeled dataset rejected") {
        ds.labels.clear();
        CHECK_THROWS_AS(accuracy(m, ds), data_error);
    }
}

TEST_CASE("rmatrix csv renders blanks for undefined cells") {
    ResultMatrix m(2);
    m.set(0, 0, 91.5);
    m.set(1, 0, 88.0);
    m.set(1, 1, 93.25);
    const std::string csv = rmatrix_to_csv(m, {"D1", "D2"});
    CHECK(csv.find("stage,D1,D2") == 0);
    CHECK(csv.find("0,91.5,\n") != std::string::npos);
    CHECK(csv.find("1,88,93.25\n") != std::string::npos);
}
