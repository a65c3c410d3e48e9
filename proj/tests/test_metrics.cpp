#include <catch_amalgamated.hpp>

#include "rockseg/metrics.hpp"
#include "testutil.hpp"

using namespace rockseg;

namespace {

// Independent pixel-loop oracle the implementation is checked against.
struct OracleScores {
    double iou, dice, mae;
};

OracleScores brute_force_scores(const BinaryMask& p, const BinaryMask& t) {
    double inter = 0, uni = 0, np = 0, nt = 0, diff = 0;
    for (int r = 0; r < p.height(); ++r)
        for (int c = 0; c < p.width(); ++c) {
            const bool pv = p.at(r, c) != 0, tv = t.at(r, c) != 0;
            inter += pv && tv;
            uni += pv || tv;
            np += pv;
            nt += tv;
            diff += pv != tv;
        }
    OracleScores s{};
    s.iou = uni == 0 ? 1.0 : inter / uni;
    s.dice = np + nt == 0 ? 1.0 : 2.0 * inter / (np + nt);
    s.mae = diff / static_cast<double>(p.size());
    return s;
}

BinaryMask mask2x2(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d) {
    BinaryMask m(2, 2);
    m.at(0, 0) = a;
    m.at(0, 1) = b;
    m.at(1, 0) = c;
    m.at(1, 1) = d;
    return m;
}

} // namespace

TEST_CASE("iou on fixed examples") {
    const auto p = mask2x2(1, 1, 0, 0);
    const auto t = mask2x2(1, 0, 0, 0);
    CHECK(iou(p, p) == 1.0);
    CHECK(iou(p, t) == 0.5);
    CHECK(iou(mask2x2(1, 0, 0, 0), mask2x2(0, 1, 0, 0)) == 0.0);
}

TEST_CASE("dice on fixed examples") {
    const auto p = mask2x2(1, 1, 0, 0);
    const auto t = mask2x2(1, 0, 0, 0);
    CHECK(dice(p, p) == 1.0);
    CHECK(dice(p, t) == Catch::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(dice(mask2x2(1, 0, 0, 0), mask2x2(0, 1, 0, 0)) == 0.0);
}

TEST_CASE("mae on fixed examples") {
    const auto p = mask2x2(1, 1, 0, 0);
    const auto t = mask2x2(1, 0, 0, 0);
    CHECK(mae(p, p) == 0.0);
    CHECK(mae(p, t) == 0.25);
    CHECK(mae(mask2x2(1, 1, 1, 1), mask2x2(0, 0, 0, 0)) == 1.0); // complement
}

TEST_CASE("empty-empty convention scores perfect agreement") {
    const BinaryMask z(4, 4, 0);
    CHECK(iou(z, z) == 1.0);
    CHECK(dice(z, z) == 1.0);
    CHECK(mae(z, z) == 0.0);
}

TEST_CASE("shape mismatch is a validation error") {
    const BinaryMask a(2, 2, 0), b(2, 3, 0);
    CHECK_THROWS_AS(iou(a, b), Error);
    CHECK_THROWS_AS(dice(a, b), Error);
    CHECK_THROWS_AS(mae(a, b), Error);
}

TEST_CASE("metrics match the brute-force oracle on random pairs") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto p = testutil::random_mask(16, 16, 2 * seed, 0.3 + 0.4 * (seed % 3) / 2.0);
        const auto t = testutil::random_mask(16, 16, 2 * seed + 1);
        const auto o = brute_force_scores(p, t);
        CHECK(std::fabs(iou(p, t) - o.iou) < 1e-12);
        CHECK(std::fabs(dice(p, t) - o.dice) < 1e-12);
        CHECK(std::fabs(mae(p, t) - o.mae) < 1e-12);
    }
}

TEST_CASE("symmetry, identity, range, and the dice-iou identity") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto p = testutil::random_mask(13, 9, 3 * seed, 0.4);
        const auto t = testutil::random_mask(13, 9, 3 * seed + 1, 0.6);
        const double i = iou(p, t), d = dice(p, t), m = mae(p, t);
        CHECK(i == iou(t, p));
        CHECK(d == dice(t, p));
        CHECK(m == mae(t, p));
        CHECK((i >= 0.0 && i <= 1.0));
        CHECK((d >= 0.0 && d <= 1.0));
        CHECK((m >= 0.0 && m <= 1.0));
        CHECK(d == Catch::Approx(2.0 * i / (1.0 + i)).margin(1e-15)); // exact set identity
        CHECK(d >= i);
        if (p == t) {
            CHECK(i == 1.0);
        } else {
            CHECK(m > 0.0);
        }
    }
}

TEST_CASE("evaluate_set aggregates per-image means") {
    const auto p1 = mask2x2(1, 1, 0, 0), t1 = p1; // iou 1
    // iou 0.4: |P∩T| = 2, |P∪T| = 5 needs bigger mask
    BinaryMask p2(2, 4, 0), t2(2, 4, 0);
    p2.at(0, 0) = p2.at(0, 1) = p2.at(0, 2) = 1;       // P = 3 pixels
    t2.at(0, 0) = t2.at(0, 1) = t2.at(1, 0) = t2.at(1, 1) = 1; // T = 4, ∩ = 2, ∪ = 5
    std::vector<EvalPair> pairs;
    pairs.push_back({p1, t1, "a"});
    pairs.push_back({p2, t2, "b"});
    const auto report = evaluate_set(pairs);
    REQUIRE(report.per_image.size() == 2);
    CHECK(report.per_image[0].iou == 1.0);
    CHECK(report.per_image[1].iou == Catch::Approx(0.4));
    CHECK(report.iou == Catch::Approx(0.7));
    CHECK(report.n_pixels == 12);

    const auto single = evaluate_set({{p2, t2, "only"}});
    CHECK(single.iou == Catch::Approx(iou(p2, t2)));
    CHECK(single.dice == Catch::Approx(dice(p2, t2)));
    CHECK(single.mae == Catch::Approx(mae(p2, t2)));
}

TEST_CASE("evaluate_set on two pairs with iou 0.4 and 0.6 averages to 0.5") {
    // 0.4: ∩2 ∪5 ; 0.6: ∩3 ∪5
    BinaryMask p1(1, 5, 0), t1(1, 5, 0), p2(1, 5, 0), t2(1, 5, 0);
    for (int c = 0; c < 3; ++c) p1.at(0, c) = 1;
    for (int c = 1; c < 5; ++c) t1.at(0, c) = 1; // ∩ = 2, ∪ = 5
    for (int c = 0; c < 3; ++c) p2.at(0, c) = 1;
    for (int c = 0; c < 5; ++c) t2.at(0, c) = 1; // ∩ = 3, ∪ = 5
    REQUIRE(iou(p1, t1) == 0.4);
    REQUIRE(iou(p2, t2) == 0.6);
    const auto report = evaluate_set({{p1, t1, "a"}, {p2, t2, "b"}});
    CHECK(report.iou == Catch::Approx(0.5));
}

TEST_CASE("evaluate_set rejects an empty list") {
    CHECK_THROWS_AS(evaluate_set({}), Error);
}

TEST_CASE("report CSV includes per-image, mean, and pooled rows") {
    const auto p = mask2x2(1, 0, 0, 0);
    std::ostringstream os;
    write_report_csv(evaluate_set({{p, p, "img"}}), os);
    const std::string text = os.str();
    CHECK(text.find("img,") != std::string::npos);
    CHECK(text.find("mean,") != std::string::npos);
    CHECK(text.find("pooled,") != std::string::npos);
}
