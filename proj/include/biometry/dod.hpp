#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "biometry/core.hpp"
#include "biometry/errors.hpp"

namespace biometry {

/// Fitted centroids are too close to define an orientation.
class DegenerateOrientationError : public Error {
public:
    using Error::Error;
};

/// Minimum centroid separation (normalized units) for a valid orientation.
inline constexpr double kMinCentroidSeparation = 1e-3;

struct GmmFitConfig {
    int max_iterations = 200;
    double log_likelihood_tolerance = 1e-9;
    double covariance_floor = 1e-6; // added to the covariance diagonal each M-step
    std::uint64_t seed = 0;
};

/// Two-component GMM over normalized landmark endpoints plus the derived
/// inter-centroid direction for one measurement type.
struct OrientationModel {
    NormalizedPoint centroid_1;
    NormalizedPoint centroid_2;
    Eigen::Vector2d direction = Eigen::Vector2d::Zero(); // centroid_2 - centroid_1
    std::array<Eigen::Matrix2d, 2> covariances = {Eigen::Matrix2d::Identity(),
                                                  Eigen::Matrix2d::Identity()};
    std::array<double, 2> weights = {0.5, 0.5};
};

struct FitReport {
    int iterations = 0;
    bool converged = false;
    std::vector<double> log_likelihood; // one entry per EM iteration
};

struct OrientationFit {
    OrientationModel model;
    FitReport report;
};

/// EM stopped without reaching the log-likelihood tolerance; carries the last
/// iterate so callers can inspect it.
class GmmConvergenceError : public Error {
public:
    GmmConvergenceError(const std::string& what, OrientationFit last)
        : Error(what), last_fit(std::move(last)) {}
    OrientationFit last_fit;
};

/// An annotation pair with both endpoints normalized to [0,1]^2.
struct NormalizedPair {
    NormalizedPoint first;
    NormalizedPoint second;
};

inline std::vector<NormalizedPair> collect_normalized_pairs(std::span<const AnnotatedImage> images,
                                                            MeasurementKind kind) {
    std::vector<NormalizedPair> out;
    for (const auto& img : images) {
        for (const auto& pair : img.landmarks) {
            if (pair.measurement != kind) continue;
            out.push_back({normalize(pair.first, img.width(), img.height()),
                           normalize(pair.second, img.width(), img.height())});
        }
    }
    return out;
}

namespace detail {

inline double log_gaussian2(const Eigen::Vector2d& x, const Eigen::Vector2d& mu,
                            const Eigen::Matrix2d& cov) {
    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
    const Eigen::Vector2d d = x - mu;
    Eigen::Matrix2d inv;
    inv << cov(1, 1), -cov(0, 1), -cov(1, 0), cov(0, 0);
    inv /= det;
    const double quad = d.dot(inv * d);
    return -std::log(2.0 * M_PI) - 0.5 * std::log(det) - 0.5 * quad;
}

/// k-means++ seeding for two centers, then Lloyd refinement. Deterministic
/// given the RNG state; the refinement makes EM robust to an unlucky second
/// seed landing in the first cluster.
inline std::array<Eigen::Vector2d, 2> two_means(const std::vector<Eigen::Vector2d>& pts,
                                                std::mt19937_64& rng) {
    const std::size_t n = pts.size();
    std::uniform_int_distribution<std::size_t> uni(0, n - 1);
    std::array<Eigen::Vector2d, 2> c;
    c[0] = pts[uni(rng)];

    std::vector<double> d2(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        d2[i] = (pts[i] - c[0]).squaredNorm();
        total += d2[i];
    }
    if (total <= 0.0) {
        c[1] = c[0];
        return c;
    }
    std::uniform_real_distribution<double> ur(0.0, total);
    double r = ur(rng), acc = 0.0;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= r) {
            pick = i;
            break;
        }
    }
    c[1] = pts[pick];

    for (int it = 0; it < 20; ++it) {
        Eigen::Vector2d sum0 = Eigen::Vector2d::Zero(), sum1 = Eigen::Vector2d::Zero();
        std::size_t n0 = 0, n1 = 0;
        for (const auto& p : pts) {
            if ((p - c[0]).squaredNorm() <= (p - c[1]).squaredNorm()) {
                sum0 += p;
                ++n0;
            } else {
                sum1 += p;
                ++n1;
            }
        }
        if (n0 == 0 || n1 == 0) break;
        const Eigen::Vector2d nc0 = sum0 / static_cast<double>(n0);
        const Eigen::Vector2d nc1 = sum1 / static_cast<double>(n1);
        const double moved = (nc0 - c[0]).norm() + (nc1 - c[1]).norm();
        c[0] = nc0;
        c[1] = nc1;
        if (moved < 1e-12) break;
    }
    return c;
}

} // namespace detail

/// Fit a two-component GMM to the pooled (unlabeled) pair endpoints with EM
/// and derive the inter-centroid direction. The direction sign is canonical:
/// flipped if needed so its first nonzero component is positive.
inline OrientationFit fit_orientation(std::span<const NormalizedPair> pairs,
                                      const GmmFitConfig& config = {}) {
    if (pairs.size() < 2)
        throw DomainError("fit_orientation: need at least 2 landmark pairs");
    if (config.max_iterations < 1 || config.log_likelihood_tolerance <= 0.0 ||
        config.covariance_floor <= 0.0)
        throw DomainError("fit_orientation: invalid GmmFitConfig");

    std::vector<Eigen::Vector2d> pts;
    pts.reserve(2 * pairs.size());
    for (const auto& p : pairs) {
        pts.emplace_back(p.first.u, p.first.v);
        pts.emplace_back(p.second.u, p.second.v);
    }
    const std::size_t n = pts.size();

    std::mt19937_64 rng(config.seed);
    std::array<Eigen::Vector2d, 2> mu = detail::two_means(pts, rng);
    if ((mu[0] - mu[1]).norm() <= kMinCentroidSeparation)
        throw DegenerateOrientationError("fit_orientation: coincident landmark clusters");

    std::array<Eigen::Matrix2d, 2> cov = {Eigen::Matrix2d::Identity() * 1e-2,
                                          Eigen::Matrix2d::Identity() * 1e-2};
    std::array<double, 2> w = {0.5, 0.5};

    FitReport report;
    std::vector<std::array<double, 2>> resp(n);
    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < config.max_iterations; ++iter) {
        // E-step with the usual log-sum-exp guard.
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            std::array<double, 2> lp;
            for (int k = 0; k < 2; ++k)
                lp[k] = std::log(w[k]) + detail::log_gaussian2(pts[i], mu[k], cov[k]);
            const double m = std::max(lp[0], lp[1]);
            const double lse = m + std::log(std::exp(lp[0] - m) + std::exp(lp[1] - m));
            resp[i] = {std::exp(lp[0] - lse), std::exp(lp[1] - lse)};
            ll += lse;
        }
        report.log_likelihood.push_back(ll);
        report.iterations = iter + 1;
        if (std::abs(ll - prev_ll) < config.log_likelihood_tolerance) {
            report.converged = true;
            break;
        }
        prev_ll = ll;

        // M-step with a diagonal floor against singular covariances.
        for (int k = 0; k < 2; ++k) {
            double nk = 0.0;
            Eigen::Vector2d sum = Eigen::Vector2d::Zero();
            for (std::size_t i = 0; i < n; ++i) {
                nk += resp[i][k];
                sum += resp[i][k] * pts[i];
            }
            nk = std::max(nk, 1e-12);
            mu[k] = sum / nk;
            Eigen::Matrix2d c = Eigen::Matrix2d::Zero();
            for (std::size_t i = 0; i < n; ++i) {
                const Eigen::Vector2d d = pts[i] - mu[k];
                c += resp[i][k] * (d * d.transpose());
            }
            c /= nk;
            c += config.covariance_floor * Eigen::Matrix2d::Identity();
            cov[k] = c;
            w[k] = nk / static_cast<double>(n);
        }
        const double wsum = w[0] + w[1];
        w[0] /= wsum;
        w[1] /= wsum;
    }

    OrientationFit fit;
    fit.model.centroid_1 = {mu[0].x(), mu[0].y()};
    fit.model.centroid_2 = {mu[1].x(), mu[1].y()};
    fit.model.covariances = cov;
    fit.model.weights = w;
    fit.model.direction = mu[1] - mu[0];
    fit.report = report;

    if (fit.model.direction.norm() <= kMinCentroidSeparation)
        throw DegenerateOrientationError("fit_orientation: centroid separation below minimum");
    if (!report.converged)
        throw GmmConvergenceError("fit_orientation: EM did not converge within max_iterations",
                                  fit);

    // Canonical sign: first nonzero component of the direction is positive.
    const Eigen::Vector2d& d = fit.model.direction;
    const bool flip = (d.x() != 0.0) ? d.x() < 0.0 : d.y() < 0.0;
    if (flip) {
        std::swap(fit.model.centroid_1, fit.model.centroid_2);
        std::swap(fit.model.covariances[0], fit.model.covariances[1]);
        std::swap(fit.model.weights[0], fit.model.weights[1]);
        fit.model.direction = -fit.model.direction;
    }
    return fit;
}

/// Scalar projection of the point position vector onto the model direction.
/// Both products are rounded individually (volatile blocks FMA contraction)
/// and hypot is symmetric in its arguments, so the result is bit-identical
/// under a common quarter-turn rotation of point and direction.
inline double project(NormalizedPoint p, const OrientationModel& model) {
    const double len = std::hypot(model.direction.x(), model.direction.y());
    if (len <= 0.0) throw DomainError("project: zero-length direction");
    volatile double t1 = p.u * model.direction.x();
    volatile double t2 = p.v * model.direction.y();
    return (t1 + t2) / len;
}

/// Sort key for reassignment: the absolute projection follows the method as
/// published; signed ordering is offered because |r| can invert the order
/// when projections straddle zero.
enum class ProjectionOrdering { absolute_projection, signed_projection };

/// Relabel the pair so class 1 gets the smaller projection key. The point set
/// is unchanged; only labels move. Ties break on (x, then y) of the points.
/// Coordinates are taken as already normalized; use the width/height overload
/// for pixel-space pairs.
inline LandmarkPair reassign(const LandmarkPair& pair, const OrientationModel& model,
                             ProjectionOrdering ordering = ProjectionOrdering::absolute_projection) {
    const double r1 = project({pair.first.x, pair.first.y}, model);
    const double r2 = project({pair.second.x, pair.second.y}, model);
    double k1 = r1, k2 = r2;
    if (ordering == ProjectionOrdering::absolute_projection) {
        k1 = std::abs(r1);
        k2 = std::abs(r2);
    }
    bool in_order;
    if (k1 != k2) {
        in_order = k1 < k2;
    } else if (pair.first.x != pair.second.x) {
        in_order = pair.first.x < pair.second.x;
    } else {
        in_order = pair.first.y <= pair.second.y;
    }
    return in_order ? pair : pair.swapped();
}

inline LandmarkPair reassign(const LandmarkPair& pair, const OrientationModel& model, int width,
                             int height,
                             ProjectionOrdering ordering = ProjectionOrdering::absolute_projection) {
    NormalizedPoint f = normalize(pair.first, width, height);
    NormalizedPoint s = normalize(pair.second, width, height);
    LandmarkPair norm_pair{{f.u, f.v}, {s.u, s.v}, pair.measurement};
    const LandmarkPair ordered = reassign(norm_pair, model, ordering);
    const bool swapped = ordered.first.x != norm_pair.first.x || ordered.first.y != norm_pair.first.y;
    return swapped ? pair.swapped() : pair;
}

/// The class-consistency modes compared in the studies: a learned direction,
/// the two fixed axes, or no reassignment at all.
enum class OrientationMode { dynamic, fixed_horizontal, fixed_vertical, none };

inline std::string to_string(OrientationMode m) {
    switch (m) {
    case OrientationMode::dynamic: return "dynamic";
    case OrientationMode::fixed_horizontal: return "fixed_horizontal";
    case OrientationMode::fixed_vertical: return "fixed_vertical";
    case OrientationMode::none: return "none";
    }
    return "?";
}

inline OrientationMode parse_orientation_mode(std::string_view s) {
    if (s == "dynamic") return OrientationMode::dynamic;
    if (s == "fixed_horizontal") return OrientationMode::fixed_horizontal;
    if (s == "fixed_vertical") return OrientationMode::fixed_vertical;
    if (s == "none") return OrientationMode::none;
    throw DomainError("unknown orientation mode: " + std::string(s));
}

/// Orientation model with a fixed axis direction, for the fixed-orientation
/// baseline modes.
inline OrientationModel fixed_orientation_model(double dx, double dy) {
    Eigen::Vector2d d(dx, dy);
    if (d.norm() <= 0.0) throw DomainError("fixed_orientation_model: zero direction");
    OrientationModel m;
    m.centroid_1 = {0.5 - 0.5 * dx, 0.5 - 0.5 * dy};
    m.centroid_2 = {0.5 + 0.5 * dx, 0.5 + 0.5 * dy};
    m.direction = d;
    return m;
}

} // namespace biometry
