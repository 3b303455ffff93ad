#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "biometry/core.hpp"
#include "biometry/errors.hpp"
#include "biometry/image.hpp"
#include "biometry/metrics.hpp"

namespace biometry {

/// Conic could not be fitted or is not an ellipse.
class FitError : public Error {
public:
    using Error::Error;
};

/// Fewer than three ruler markers were detected.
class ScaleRecoveryError : public Error {
public:
    using Error::Error;
};

/// Geometric ellipse: semi-major a >= semi-minor b, theta = major-axis angle
/// from +x in [0, pi).
struct Ellipse {
    Point2D center;
    double a = 0.0;
    double b = 0.0;
    double theta = 0.0;
};

/// One ruler marker patch plus the physical spacing between adjacent markers
/// and the image region to search.
struct RulerTemplate {
    ImageF patch;
    double physical_spacing_mm = 0.0;
    Rect search_band;
};

struct NccParams {
    double threshold = 0.6;
    int nms_radius = -1; // <0: half the template width
};

enum class ScaleSource { metadata, recovered };

inline const char* to_string(ScaleSource s) {
    return s == ScaleSource::metadata ? "metadata" : "recovered";
}

/// A named biometric measurement in pixels and millimeters.
struct BiometricResult {
    MeasurementKind kind = MeasurementKind::OFD;
    double length_px = 0.0;
    double mm_per_pixel = 0.0;
    double length_mm = 0.0;
    LandmarkPair landmarks;
    ScaleSource scale_source = ScaleSource::metadata;
};

// ---------------------------------------------------------------------------
// Ellipse fitting: direct least-squares conic fit constrained to an ellipse,
// in the numerically stable partitioned form (quadratic/linear scatter blocks)
// that avoids the singular generalized eigenproblem on near-circles.
// ---------------------------------------------------------------------------

inline Ellipse fit_ellipse(std::span<const Point2D> points) {
    const int n = static_cast<int>(points.size());
    if (n < 6) throw FitError("fit_ellipse: need at least 6 points");

    // Isotropic normalization keeps the scatter blocks well conditioned.
    double mx = 0.0, my = 0.0;
    for (const auto& p : points) {
        mx += p.x;
        my += p.y;
    }
    mx /= n;
    my /= n;
    double rms = 0.0;
    for (const auto& p : points)
        rms += (p.x - mx) * (p.x - mx) + (p.y - my) * (p.y - my);
    rms = std::sqrt(rms / n);
    if (rms < 1e-12) throw FitError("fit_ellipse: all points coincident");
    const double s = 1.0 / rms;

    Eigen::MatrixXd d1(n, 3), d2(n, 3);
    for (int i = 0; i < n; ++i) {
        const double x = (points[i].x - mx) * s;
        const double y = (points[i].y - my) * s;
        d1(i, 0) = x * x;
        d1(i, 1) = x * y;
        d1(i, 2) = y * y;
        d2(i, 0) = x;
        d2(i, 1) = y;
        d2(i, 2) = 1.0;
    }
    const Eigen::Matrix3d s1 = d1.transpose() * d1;
    const Eigen::Matrix3d s2 = d1.transpose() * d2;
    const Eigen::Matrix3d s3 = d2.transpose() * d2;

    Eigen::FullPivLU<Eigen::Matrix3d> lu(s3);
    if (!lu.isInvertible())
        throw FitError("fit_ellipse: degenerate point configuration");
    const Eigen::Matrix3d t = -lu.solve(s2.transpose());
    const Eigen::Matrix3d m_full = s1 + s2 * t;

    // Reduced system: premultiply by the inverse of the ellipse constraint
    // matrix C1 = [[0,0,2],[0,-1,0],[2,0,0]].
    Eigen::Matrix3d m_red;
    m_red.row(0) = m_full.row(2) / 2.0;
    m_red.row(1) = -m_full.row(1);
    m_red.row(2) = m_full.row(0) / 2.0;

    Eigen::EigenSolver<Eigen::Matrix3d> eig(m_red);
    if (eig.info() != Eigen::Success)
        throw FitError("fit_ellipse: eigen decomposition failed");

    Eigen::Vector3d a1 = Eigen::Vector3d::Zero();
    bool found = false;
    for (int k = 0; k < 3; ++k) {
        if (std::abs(eig.eigenvalues()[k].imag()) > 1e-9) continue;
        Eigen::Vector3d v = eig.eigenvectors().col(k).real();
        const double cond = 4.0 * v(0) * v(2) - v(1) * v(1);
        if (cond > 0.0) {
            a1 = v;
            found = true;
            break;
        }
    }
    if (!found) throw FitError("fit_ellipse: no elliptic solution");

    const Eigen::Vector3d a2 = t * a1;
    const double ca = a1(0), cb = a1(1), cc = a1(2);
    const double cd = a2(0), ce = a2(1), cf = a2(2);

    // Conic -> geometric parameters, still in normalized coordinates.
    Eigen::Matrix2d qm;
    qm << ca, cb / 2.0, cb / 2.0, cc;
    const double det = qm.determinant();
    if (det <= 0.0) throw FitError("fit_ellipse: conic is not an ellipse");

    const Eigen::Vector2d center_n = qm.colPivHouseholderQr().solve(Eigen::Vector2d(-cd / 2.0, -ce / 2.0));
    const double mu = ca * center_n.x() * center_n.x() + cb * center_n.x() * center_n.y() +
                      cc * center_n.y() * center_n.y() + cd * center_n.x() + ce * center_n.y() + cf;

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> qe(qm);
    const double r0 = -mu / qe.eigenvalues()(0);
    const double r1 = -mu / qe.eigenvalues()(1);
    if (r0 <= 0.0 || r1 <= 0.0) throw FitError("fit_ellipse: degenerate ellipse");

    int major = r0 >= r1 ? 0 : 1;
    Ellipse e;
    e.a = std::sqrt(std::max(r0, r1)) * rms;
    e.b = std::sqrt(std::min(r0, r1)) * rms;
    e.center = {center_n.x() * rms + mx, center_n.y() * rms + my};
    const Eigen::Vector2d axis = qe.eigenvectors().col(major);
    e.theta = std::atan2(axis.y(), axis.x());
    if (e.theta < 0.0) e.theta += std::numbers::pi;
    if (e.theta >= std::numbers::pi) e.theta -= std::numbers::pi;
    return e;
}

/// Landmark pairs at the ellipse axis endpoints: OFD on the major axis, BPD
/// on the minor axis.
struct AxisLandmarks {
    LandmarkPair ofd;
    LandmarkPair bpd;
};

inline AxisLandmarks ellipse_axis_landmarks(const Ellipse& e) {
    if (!(e.a >= e.b && e.b > 0.0)) throw DomainError("ellipse_axis_landmarks: invalid ellipse");
    const Point2D u{std::cos(e.theta), std::sin(e.theta)};
    const Point2D w{-std::sin(e.theta), std::cos(e.theta)};
    AxisLandmarks out;
    out.ofd = {e.center - e.a * u, e.center + e.a * u, MeasurementKind::OFD};
    out.bpd = {e.center - e.b * w, e.center + e.b * w, MeasurementKind::BPD};
    return out;
}

// ---------------------------------------------------------------------------
// Scale recovery: normalized cross-correlation of a ruler-marker template over
// the search band, non-maximum suppression, then mm per pixel from the median
// inter-peak gap.
// ---------------------------------------------------------------------------

namespace detail {

struct NccPeak {
    double x = 0.0; // peak center, image coordinates
    double y = 0.0;
    double score = 0.0;
};

inline std::vector<NccPeak> match_template_ncc(const ImageF& image, const ImageF& patch,
                                               Rect band, double threshold, int nms_radius) {
    const int pw = patch.width(), ph = patch.height();
    if (pw <= 0 || ph <= 0) throw DomainError("match_template_ncc: empty template");

    // Clip the band to the image and make sure the patch fits inside it.
    Rect b = band;
    b.x = std::max(0, b.x);
    b.y = std::max(0, b.y);
    b.width = std::min(band.x + band.width, image.width()) - b.x;
    b.height = std::min(band.y + band.height, image.height()) - b.y;
    if (b.width < pw || b.height < ph)
        throw DomainError("match_template_ncc: search band smaller than template");

    double tmean = 0.0;
    for (float v : patch.pixels()) tmean += v;
    tmean /= static_cast<double>(patch.size());
    double tnorm2 = 0.0;
    for (float v : patch.pixels()) tnorm2 += (v - tmean) * (v - tmean);
    if (tnorm2 < 1e-12) throw DomainError("match_template_ncc: constant template");
    const double tnorm = std::sqrt(tnorm2);

    std::vector<NccPeak> candidates;
    for (int v = b.y; v + ph <= b.y + b.height; ++v) {
        for (int u = b.x; u + pw <= b.x + b.width; ++u) {
            double imean = 0.0;
            for (int j = 0; j < ph; ++j)
                for (int i = 0; i < pw; ++i) imean += image.at(u + i, v + j);
            imean /= static_cast<double>(pw) * ph;
            double cross = 0.0, inorm2 = 0.0;
            for (int j = 0; j < ph; ++j) {
                for (int i = 0; i < pw; ++i) {
                    const double iv = image.at(u + i, v + j) - imean;
                    cross += iv * (patch.at(i, j) - tmean);
                    inorm2 += iv * iv;
                }
            }
            if (inorm2 < 1e-12) continue;
            const double score = cross / (tnorm * std::sqrt(inorm2));
            if (score >= threshold)
                candidates.push_back({u + 0.5 * (pw - 1), v + 0.5 * (ph - 1), score});
        }
    }

    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const NccPeak& a, const NccPeak& b) { return a.score > b.score; });
    const double radius = nms_radius >= 0 ? nms_radius : pw / 2;
    std::vector<NccPeak> peaks;
    for (const auto& c : candidates) {
        bool suppressed = false;
        for (const auto& p : peaks) {
            if (std::max(std::abs(c.x - p.x), std::abs(c.y - p.y)) <= radius) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) peaks.push_back(c);
    }
    return peaks;
}

} // namespace detail

/// mm per pixel from ruler markers found by template matching inside the
/// search band. Robust to a single spurious or missing marker via the median
/// of consecutive peak gaps.
inline double recover_scale(const ImageF& image, const RulerTemplate& tpl,
                            const NccParams& params = {}) {
    if (tpl.physical_spacing_mm <= 0.0)
        throw DomainError("recover_scale: non-positive marker spacing");

    std::vector<detail::NccPeak> peaks =
        detail::match_template_ncc(image, tpl.patch, tpl.search_band, params.threshold,
                                   params.nms_radius >= 0 ? params.nms_radius
                                                          : tpl.patch.width() / 2);
    if (peaks.size() < 3)
        throw ScaleRecoveryError("recover_scale: found " + std::to_string(peaks.size()) +
                                 " ruler markers, need at least 3");

    const bool horizontal = tpl.search_band.width >= tpl.search_band.height;
    std::sort(peaks.begin(), peaks.end(), [&](const detail::NccPeak& a, const detail::NccPeak& b) {
        return horizontal ? a.x < b.x : a.y < b.y;
    });
    std::vector<double> gaps(peaks.size() - 1);
    for (std::size_t i = 1; i < peaks.size(); ++i)
        gaps[i - 1] = horizontal ? peaks[i].x - peaks[i - 1].x : peaks[i].y - peaks[i - 1].y;

    const double gap = median(gaps);
    if (gap <= 0.0) throw ScaleRecoveryError("recover_scale: non-positive median marker gap");
    return tpl.physical_spacing_mm / gap;
}

/// Pixel length of the pair times the scale.
inline BiometricResult compute_measurement(const LandmarkPair& pair, double mm_per_pixel,
                                           ScaleSource source) {
    if (mm_per_pixel <= 0.0) throw DomainError("compute_measurement: non-positive scale");
    BiometricResult r;
    r.kind = pair.measurement;
    r.landmarks = pair;
    r.length_px = euclidean_distance(pair.first, pair.second);
    if (r.length_px <= 0.0) throw DomainError("compute_measurement: coincident landmarks");
    r.mm_per_pixel = mm_per_pixel;
    r.length_mm = r.length_px * mm_per_pixel;
    r.scale_source = source;
    return r;
}

} // namespace biometry
