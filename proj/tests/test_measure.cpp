#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include <biometry/core.hpp>
#include <biometry/image.hpp>
#include <biometry/measure.hpp>

using namespace biometry;

namespace {

std::vector<Point2D> ellipse_points(const Ellipse& e, int n) {
    std::vector<Point2D> pts;
    const Point2D u{std::cos(e.theta), std::sin(e.theta)};
    const Point2D w{-std::sin(e.theta), std::cos(e.theta)};
    for (int i = 0; i < n; ++i) {
        const double t = 2.0 * M_PI * i / n;
        pts.push_back(e.center + (e.a * std::cos(t)) * u + (e.b * std::sin(t)) * w);
    }
    return pts;
}

double angle_dist_mod_pi(double a, double b) {
    double d = std::fmod(std::abs(a - b), M_PI);
    return std::min(d, M_PI - d);
}

/// Square bright markers on a dark field; centers on integer pixels.
ImageF marker_image(const std::vector<Point2D>& centers, int w, int h) {
    ImageF img(w, h, 0.03f);
    for (const auto& c : centers)
        for (int dy = -2; dy <= 2; ++dy)
            for (int dx = -2; dx <= 2; ++dx) {
                const int x = static_cast<int>(c.x) + dx;
                const int y = static_cast<int>(c.y) + dy;
                if (img.in_bounds(x, y)) img.at(x, y) = 0.9f;
            }
    return img;
}

ImageF marker_patch() {
    ImageF patch(7, 7, 0.03f);
    for (int y = 1; y <= 5; ++y)
        for (int x = 1; x <= 5; ++x) patch.at(x, y) = 0.9f;
    return patch;
}

RulerTemplate vertical_ruler_template() {
    RulerTemplate tpl;
    tpl.patch = marker_patch();
    tpl.physical_spacing_mm = 1.0;
    tpl.search_band = Rect{103, 0, 14, 120};
    return tpl;
}

} // namespace

TEST_CASE("noiseless sampled ellipses are recovered within 1e-6") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> ua(20.0, 80.0), uc(60.0, 160.0),
        ut(0.0, M_PI), ur(0.35, 0.95);
    for (int rep = 0; rep < 50; ++rep) {
        Ellipse truth;
        truth.a = ua(rng);
        truth.b = truth.a * ur(rng);
        truth.center = {uc(rng), uc(rng)};
        truth.theta = ut(rng);
        const auto pts = ellipse_points(truth, 40);
        const Ellipse fit = fit_ellipse(pts);
        REQUIRE(fit.a == Catch::Approx(truth.a).margin(1e-6));
        REQUIRE(fit.b == Catch::Approx(truth.b).margin(1e-6));
        REQUIRE(fit.center.x == Catch::Approx(truth.center.x).margin(1e-6));
        REQUIRE(fit.center.y == Catch::Approx(truth.center.y).margin(1e-6));
        REQUIRE(angle_dist_mod_pi(fit.theta, truth.theta) <= 1e-6);
        REQUIRE(fit.a >= fit.b);
        REQUIRE(fit.theta >= 0.0);
        REQUIRE(fit.theta < M_PI);
    }
}

TEST_CASE("circles fit without a preferred orientation") {
    Ellipse truth;
    truth.a = 30.0;
    truth.b = 30.0;
    truth.center = {100.0, 90.0};
    truth.theta = 0.0;
    const Ellipse fit = fit_ellipse(ellipse_points(truth, 24));
    CHECK(fit.a == Catch::Approx(30.0).margin(1e-6));
    CHECK(fit.b == Catch::Approx(30.0).margin(1e-6));
    CHECK(fit.center.x == Catch::Approx(100.0).margin(1e-6));
    CHECK(fit.center.y == Catch::Approx(90.0).margin(1e-6));
}

TEST_CASE("six exact points are enough") {
    Ellipse truth;
    truth.a = 50.0;
    truth.b = 25.0;
    truth.center = {80.0, 120.0};
    truth.theta = 1.1;
    const Ellipse fit = fit_ellipse(ellipse_points(truth, 6));
    CHECK(fit.a == Catch::Approx(50.0).margin(1e-6));
    CHECK(fit.b == Catch::Approx(25.0).margin(1e-6));
}

TEST_CASE("ellipse fitting rejects unusable inputs") {
    std::vector<Point2D> five = {{0, 0}, {1, 0}, {2, 1}, {3, 3}, {1, 2}};
    CHECK_THROWS_AS(fit_ellipse(five), FitError);

    std::vector<Point2D> coincident(10, Point2D{5.0, 5.0});
    CHECK_THROWS_AS(fit_ellipse(coincident), FitError);

    std::vector<Point2D> collinear;
    for (int i = 0; i < 12; ++i) collinear.push_back({static_cast<double>(i), 2.0 * i + 1.0});
    CHECK_THROWS_AS(fit_ellipse(collinear), FitError);
}

TEST_CASE("axis landmarks sit on the ellipse axes") {
    Ellipse e;
    e.center = {50.0, 40.0};
    e.a = 20.0;
    e.b = 10.0;
    e.theta = 0.7;
    const AxisLandmarks lm = ellipse_axis_landmarks(e);

    CHECK(lm.ofd.measurement == MeasurementKind::OFD);
    CHECK(lm.bpd.measurement == MeasurementKind::BPD);
    CHECK(euclidean_distance(lm.ofd.first, lm.ofd.second) == Catch::Approx(40.0).margin(1e-12));
    CHECK(euclidean_distance(lm.bpd.first, lm.bpd.second) == Catch::Approx(20.0).margin(1e-12));
    // midpoints at the center, axes orthogonal
    CHECK((lm.ofd.first.x + lm.ofd.second.x) / 2.0 == Catch::Approx(50.0).margin(1e-12));
    CHECK((lm.bpd.first.y + lm.bpd.second.y) / 2.0 == Catch::Approx(40.0).margin(1e-12));
    const Point2D d1 = lm.ofd.second - lm.ofd.first;
    const Point2D d2 = lm.bpd.second - lm.bpd.first;
    CHECK(d1.x * d2.x + d1.y * d2.y == Catch::Approx(0.0).margin(1e-9));

    Ellipse bad = e;
    bad.b = 25.0; // b > a
    CHECK_THROWS_AS(ellipse_axis_landmarks(bad), DomainError);
    bad = e;
    bad.b = 0.0;
    CHECK_THROWS_AS(ellipse_axis_landmarks(bad), DomainError);
}

TEST_CASE("template matching finds every marker exactly once") {
    std::vector<Point2D> centers;
    for (int y = 10; y <= 110; y += 10) centers.push_back({110.0, static_cast<double>(y)});
    const ImageF img = marker_image(centers, 120, 120);
    const auto peaks =
        detail::match_template_ncc(img, marker_patch(), Rect{103, 0, 14, 120}, 0.6, 3);
    REQUIRE(peaks.size() == centers.size());
    for (const auto& p : peaks) {
        CHECK(p.score == Catch::Approx(1.0).margin(1e-6));
        CHECK(p.x == 110.0);
        const double fy = p.y - 10.0;
        CHECK(std::fmod(fy, 10.0) == 0.0);
    }
}

TEST_CASE("ncc scores are invariant to affine intensity changes") {
    std::vector<Point2D> centers = {{110, 20}, {110, 50}, {110, 80}};
    ImageF img = marker_image(centers, 120, 120);
    const auto base =
        detail::match_template_ncc(img, marker_patch(), Rect{103, 0, 14, 120}, 0.6, 3);

    ImageF scaled = img;
    for (auto& v : scaled.pixels()) v = 0.5f * v + 0.2f;
    const auto after =
        detail::match_template_ncc(scaled, marker_patch(), Rect{103, 0, 14, 120}, 0.6, 3);
    REQUIRE(after.size() == base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        CHECK(after[i].x == base[i].x);
        CHECK(after[i].y == base[i].y);
        CHECK(after[i].score == Catch::Approx(base[i].score).margin(1e-5));
    }
}

TEST_CASE("template matching input validation") {
    const ImageF img(50, 50, 0.1f);
    CHECK_THROWS_AS(detail::match_template_ncc(img, ImageF(), Rect{0, 0, 50, 50}, 0.6, 3),
                    DomainError);
    CHECK_THROWS_AS(
        detail::match_template_ncc(img, ImageF(9, 9, 0.5f), Rect{0, 0, 50, 50}, 0.6, 3),
        DomainError); // constant template
    CHECK_THROWS_AS(
        detail::match_template_ncc(img, marker_patch(), Rect{45, 45, 5, 5}, 0.6, 3),
        DomainError); // band smaller than template
}

TEST_CASE("a clean 10 px ruler recovers exactly 0.1 mm per pixel") {
    std::vector<Point2D> centers;
    for (int y = 10; y <= 110; y += 10) centers.push_back({110.0, static_cast<double>(y)});
    const ImageF img = marker_image(centers, 120, 120);
    const double mmpp = recover_scale(img, vertical_ruler_template());
    CHECK(mmpp == 0.1);
}

TEST_CASE("scale recovery shrugs off one spurious marker") {
    std::vector<Point2D> centers;
    for (int y = 10; y <= 110; y += 10) centers.push_back({110.0, static_cast<double>(y)});
    centers.push_back({110.0, 55.0}); // interloper between two real markers
    const ImageF img = marker_image(centers, 120, 120);
    const double mmpp = recover_scale(img, vertical_ruler_template());
    CHECK(mmpp == 0.1);
}

TEST_CASE("scale recovery shrugs off one missing marker") {
    std::vector<Point2D> centers;
    for (int y = 10; y <= 110; y += 10)
        if (y != 60) centers.push_back({110.0, static_cast<double>(y)});
    const ImageF img = marker_image(centers, 120, 120);
    const double mmpp = recover_scale(img, vertical_ruler_template());
    CHECK(mmpp == 0.1);
}

TEST_CASE("horizontal ruler bands measure x gaps") {
    std::vector<Point2D> centers;
    for (int x = 10; x <= 90; x += 8) centers.push_back({static_cast<double>(x), 110.0});
    const ImageF img = marker_image(centers, 120, 120);
    RulerTemplate tpl;
    tpl.patch = marker_patch();
    tpl.physical_spacing_mm = 2.0;
    tpl.search_band = Rect{0, 103, 120, 14};
    CHECK(recover_scale(img, tpl) == 0.25);
}

TEST_CASE("scale recovery failure modes") {
    RulerTemplate tpl = vertical_ruler_template();

    std::vector<Point2D> two = {{110, 30}, {110, 60}};
    const ImageF img2 = marker_image(two, 120, 120);
    CHECK_THROWS_AS(recover_scale(img2, tpl), ScaleRecoveryError);

    const ImageF blank(120, 120, 0.03f);
    CHECK_THROWS_AS(recover_scale(blank, tpl), ScaleRecoveryError);

    tpl.physical_spacing_mm = 0.0;
    std::vector<Point2D> many;
    for (int y = 10; y <= 110; y += 10) many.push_back({110.0, static_cast<double>(y)});
    CHECK_THROWS_AS(recover_scale(marker_image(many, 120, 120), tpl), DomainError);
}

TEST_CASE("measurement arithmetic and labeling") {
    const LandmarkPair pair{{0.0, 0.0}, {3.0, 4.0}, MeasurementKind::FL};
    const BiometricResult r = compute_measurement(pair, 2.0, ScaleSource::recovered);
    CHECK(r.length_px == 5.0);
    CHECK(r.length_mm == 10.0);
    CHECK(r.kind == MeasurementKind::FL);
    CHECK(r.scale_source == ScaleSource::recovered);
    CHECK(std::string(to_string(ScaleSource::recovered)) == "recovered");
    CHECK(std::string(to_string(ScaleSource::metadata)) == "metadata");

    CHECK_THROWS_AS(compute_measurement(pair, 0.0, ScaleSource::metadata), DomainError);
    CHECK_THROWS_AS(compute_measurement(pair, -1.0, ScaleSource::metadata), DomainError);
    const LandmarkPair coincident{{1.0, 1.0}, {1.0, 1.0}, MeasurementKind::FL};
    CHECK_THROWS_AS(compute_measurement(coincident, 1.0, ScaleSource::metadata), DomainError);
}
