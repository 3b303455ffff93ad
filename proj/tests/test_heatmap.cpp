#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>

#include <biometry/core.hpp>
#include <biometry/heatmap.hpp>

using namespace biometry;

namespace {

HeatmapStack make_stack(int w, int h, double fill = 0.0, int stride = 4) {
    HeatmapStack s;
    s.stride = stride;
    s.maps[0] = Image<double>(w, h, fill);
    s.maps[1] = Image<double>(w, h, fill);
    return s;
}

} // namespace

TEST_CASE("encode/decode round-trip stays within half a stride, exhaustively") {
    const HeatmapConfig cfg; // sigma 2, stride 4
    const double bound = cfg.stride / 2.0;
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            const LandmarkPair pair{{static_cast<double>(x), static_cast<double>(y)},
                                    {63.0 - x, 63.0 - y},
                                    MeasurementKind::FL};
            const HeatmapStack stack = encode(pair, 64, 64, cfg);
            const DecodeResult dec = decode(stack);
            REQUIRE(std::abs(dec.points[0].x - pair.first.x) <= bound);
            REQUIRE(std::abs(dec.points[0].y - pair.first.y) <= bound);
            REQUIRE(std::abs(dec.points[1].x - pair.second.x) <= bound);
            REQUIRE(std::abs(dec.points[1].y - pair.second.y) <= bound);
            REQUIRE_FALSE(dec.low_confidence);
        }
    }
}

TEST_CASE("round-trip bound holds for fractional landmarks too") {
    const HeatmapConfig cfg;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 64.0 - 1e-9);
    for (int i = 0; i < 500; ++i) {
        const LandmarkPair pair{{u(rng), u(rng)}, {u(rng), u(rng)}, MeasurementKind::FL};
        const DecodeResult plain = decode(encode(pair, 64, 64, cfg), false);
        const DecodeResult sub = decode(encode(pair, 64, 64, cfg), true);
        for (int k = 0; k < 2; ++k) {
            const Point2D truth = k == 0 ? pair.first : pair.second;
            REQUIRE(std::abs(plain.points[k].x - truth.x) <= 2.0);
            REQUIRE(std::abs(plain.points[k].y - truth.y) <= 2.0);
            REQUIRE(std::abs(sub.points[k].x - truth.x) <= 2.0);
            REQUIRE(std::abs(sub.points[k].y - truth.y) <= 2.0);
        }
    }
}

TEST_CASE("subpixel refinement beats plain argmax on average") {
    const HeatmapConfig cfg;
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(8.0, 56.0);
    double err_plain = 0.0, err_sub = 0.0;
    for (int i = 0; i < 200; ++i) {
        const Point2D p{u(rng), u(rng)};
        const LandmarkPair pair{p, {u(rng), u(rng)}, MeasurementKind::FL};
        const HeatmapStack stack = encode(pair, 64, 64, cfg);
        err_plain += euclidean_distance(decode(stack, false).points[0], p);
        err_sub += euclidean_distance(decode(stack, true).points[0], p);
    }
    CHECK(err_sub < err_plain);
    CHECK(err_sub / 200.0 < 1.0);
}

TEST_CASE("target peaks at exactly 1 on cell centers and truncates to exact zero") {
    HeatmapConfig cfg;
    cfg.truncation_radius = 6.0;
    // landmark on the center of heatmap cell (12, 8): x = 4*(12+0.5)
    const LandmarkPair pair{{50.0, 34.0}, {10.0, 10.0}, MeasurementKind::BPD};
    const HeatmapStack stack = encode(pair, 128, 128, cfg);
    CHECK(stack.maps[0].at(12, 8) == 1.0);
    // one cell away: exp(-1/(2*4))
    CHECK(stack.maps[0].at(13, 8) == Catch::Approx(std::exp(-0.125)).epsilon(1e-12));
    // beyond the truncation radius: identically zero
    CHECK(stack.maps[0].at(12 + 7, 8) == 0.0);
    CHECK(stack.maps[0].at(12, 8 + 7) == 0.0);
    int nonzero = 0;
    for (int i = 0; i < stack.height(); ++i)
        for (int j = 0; j < stack.width(); ++j)
            if (stack.maps[0].at(j, i) != 0.0) {
                ++nonzero;
                const double dx = j - 12.0, dy = i - 8.0;
                REQUIRE(dx * dx + dy * dy <= 36.0 + 1e-12);
            }
    CHECK(nonzero > 0);
}

TEST_CASE("channel mass approximates the Gaussian integral") {
    HeatmapConfig cfg;
    cfg.truncation_radius = 8.0; // 4 sigma: truncated mass < 0.04%
    const LandmarkPair pair{{50.0, 50.0}, {70.0, 70.0}, MeasurementKind::OFD};
    const HeatmapStack stack = encode(pair, 128, 128, cfg);
    const double expected = 2.0 * M_PI * cfg.sigma * cfg.sigma;
    for (int k = 0; k < 2; ++k) {
        double sum = 0.0;
        for (int i = 0; i < stack.height(); ++i)
            for (int j = 0; j < stack.width(); ++j) sum += stack.maps[k].at(j, i);
        CHECK(sum == Catch::Approx(expected).epsilon(0.01));
    }
}

TEST_CASE("decode handles flat channels as low confidence") {
    const HeatmapStack flat = make_stack(16, 16, 0.25);
    const DecodeResult dec = decode(flat);
    CHECK(dec.flat_channel[0]);
    CHECK(dec.flat_channel[1]);
    CHECK(dec.low_confidence);
    // tie-break: first row-major cell, mapped to its input-space center
    CHECK(dec.points[0].x == 2.0);
    CHECK(dec.points[0].y == 2.0);
    CHECK(dec.peak_values[0] == 0.25);

    HeatmapStack mixed = make_stack(16, 16, 0.0);
    mixed.maps[1].at(5, 9) = 1.0;
    const DecodeResult dec2 = decode(mixed);
    CHECK(dec2.flat_channel[0]);
    CHECK_FALSE(dec2.flat_channel[1]);
    CHECK(dec2.low_confidence);
    CHECK(dec2.points[1].x == 4.0 * 5.5);
    CHECK(dec2.points[1].y == 4.0 * 9.5);
}

TEST_CASE("equal maxima resolve to the first row-major cell") {
    HeatmapStack stack = make_stack(8, 8, 0.0);
    stack.maps[0].at(3, 3) = 0.7;
    stack.maps[0].at(1, 1) = 0.7;
    stack.maps[1].at(0, 0) = 0.1;
    const DecodeResult dec = decode(stack);
    CHECK(dec.points[0].x == 4.0 * 1.5);
    CHECK(dec.points[0].y == 4.0 * 1.5);
}

TEST_CASE("decode rejects malformed stacks") {
    HeatmapStack bad = make_stack(4, 4, 0.0);
    bad.maps[0].at(2, 2) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(decode(bad), DomainError);

    HeatmapStack empty;
    CHECK_THROWS_AS(decode(empty), DomainError);

    HeatmapStack zero_stride = make_stack(4, 4, 0.0, 0);
    CHECK_THROWS_AS(decode(zero_stride), DomainError);
}

TEST_CASE("encode validates inputs") {
    const LandmarkPair pair{{10.0, 10.0}, {20.0, 20.0}, MeasurementKind::FL};
    HeatmapConfig cfg;
    cfg.sigma = 0.0;
    CHECK_THROWS_AS(encode(pair, 64, 64, cfg), DomainError);
    cfg = {};
    cfg.stride = 0;
    CHECK_THROWS_AS(encode(pair, 64, 64, cfg), DomainError);
    cfg = {};
    cfg.truncation_radius = 5.0; // < 3 sigma
    CHECK_THROWS_AS(encode(pair, 64, 64, cfg), DomainError);

    const LandmarkPair oob{{64.0, 10.0}, {20.0, 20.0}, MeasurementKind::FL};
    CHECK_THROWS_AS(encode(oob, 64, 64, HeatmapConfig{}), DomainError);
    const LandmarkPair neg{{-0.5, 10.0}, {20.0, 20.0}, MeasurementKind::FL};
    CHECK_THROWS_AS(encode(neg, 64, 64, HeatmapConfig{}), DomainError);
    CHECK_THROWS_AS(encode(pair, 2, 64, HeatmapConfig{}), DomainError);
}

TEST_CASE("mse loss matches a hand computation") {
    HeatmapStack p = make_stack(2, 1, 0.0);
    p.maps[0].at(0, 0) = 1.0;
    p.maps[0].at(1, 0) = 3.0;
    p.maps[1].at(1, 0) = 2.0;
    const HeatmapStack t = make_stack(2, 1, 0.0);
    CHECK(mse_loss(p, t) == Catch::Approx((1.0 + 9.0 + 0.0 + 4.0) / 4.0).epsilon(1e-15));
    CHECK(mse_loss(p, p) == 0.0);

    const HeatmapStack other = make_stack(3, 1, 0.0);
    CHECK_THROWS_AS(mse_loss(p, other), DomainError);
    const HeatmapStack empty_a, empty_b;
    CHECK_THROWS_AS(mse_loss(empty_a, empty_b), DomainError);
}

TEST_CASE("loss gradient matches central finite differences") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    HeatmapStack pred = make_stack(6, 5, 0.0);
    HeatmapStack target = make_stack(6, 5, 0.0);
    for (int k = 0; k < 2; ++k)
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 6; ++j) {
                pred.maps[k].at(j, i) = u(rng);
                target.maps[k].at(j, i) = u(rng);
            }

    const HeatmapStack grad = mse_loss_gradient(pred, target);
    const double h = 1e-6;
    for (int k = 0; k < 2; ++k)
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 6; ++j) {
                const double saved = pred.maps[k].at(j, i);
                pred.maps[k].at(j, i) = saved + h;
                const double up = mse_loss(pred, target);
                pred.maps[k].at(j, i) = saved - h;
                const double dn = mse_loss(pred, target);
                pred.maps[k].at(j, i) = saved;
                const double numeric = (up - dn) / (2.0 * h);
                const double analytic = grad.maps[k].at(j, i);
                const double rel = std::abs(numeric - analytic) /
                                   std::max({std::abs(numeric), std::abs(analytic), 1e-12});
                REQUIRE(rel <= 1e-3);
            }
}
