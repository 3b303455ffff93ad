#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "biometry/errors.hpp"

namespace biometry {

/// Too few cases for the requested statistic.
class InsufficientDataError : public Error {
public:
    using Error::Error;
};

/// Paired test with zero variance of the pair deltas.
class DegenerateTestError : public Error {
public:
    using Error::Error;
};

/// Millimeter measurements aligned with case identifiers.
struct MeasurementSet {
    std::vector<double> values;
    std::vector<std::string> ids;
};

/// How the 95% agreement interval is centered. `abs_centered` centers the
/// squared deviations on the mean absolute difference; `classical` is the
/// Bland-Altman convention and centers on the signed bias.
enum class Ci95Mode { abs_centered, classical };

inline const char* to_string(Ci95Mode m) {
    return m == Ci95Mode::abs_centered ? "abs_centered" : "classical";
}

struct AgreementReport {
    double bias = 0.0;
    double ci95 = 0.0;
    double mean_abs = 0.0;
    double median_abs = 0.0;
    std::size_t n = 0;
    std::vector<double> differences;
    Ci95Mode ci95_mode = Ci95Mode::abs_centered;
};

/// Median; even-length lists average the two central order statistics.
inline double median(std::vector<double> v) {
    if (v.empty()) throw InsufficientDataError("median of empty list");
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    if (v.size() % 2 == 1) return v[mid];
    const double hi = v[mid];
    std::nth_element(v.begin(), v.begin() + mid - 1, v.begin() + mid);
    return 0.5 * (v[mid - 1] + hi);
}

/// Signed per-case differences d_i, first set minus second (ground truth
/// minus computed). Sets must be aligned id-by-id.
inline std::vector<double> differences(const MeasurementSet& m1, const MeasurementSet& m2) {
    if (m1.values.size() != m1.ids.size() || m2.values.size() != m2.ids.size())
        throw DomainError("differences: values/ids length mismatch");
    if (m1.values.size() != m2.values.size())
        throw DomainError("differences: measurement sets differ in length");
    if (m1.values.empty())
        throw DomainError("differences: empty measurement sets");
    for (std::size_t i = 0; i < m1.ids.size(); ++i)
        if (m1.ids[i] != m2.ids[i])
            throw DomainError("differences: id mismatch at index " + std::to_string(i) +
                              " (" + m1.ids[i] + " vs " + m2.ids[i] + ")");
    std::vector<double> d(m1.values.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = m1.values[i] - m2.values[i];
    return d;
}

/// Bias, 95% agreement interval and mean/median absolute difference for two
/// aligned measurement sets.
inline AgreementReport agreement_report(const MeasurementSet& m1, const MeasurementSet& m2,
                                        Ci95Mode mode = Ci95Mode::abs_centered) {
    std::vector<double> d = differences(m1, m2);
    if (d.size() < 2) throw InsufficientDataError("agreement_report: need at least 2 cases");

    AgreementReport r;
    r.n = d.size();
    r.ci95_mode = mode;
    const double n = static_cast<double>(d.size());

    double sum = 0.0, sum_abs = 0.0;
    std::vector<double> abs_d(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        sum += d[i];
        abs_d[i] = std::abs(d[i]);
        sum_abs += abs_d[i];
    }
    r.bias = sum / n;
    r.mean_abs = sum_abs / n;
    r.median_abs = median(abs_d);

    const double center = (mode == Ci95Mode::abs_centered) ? r.mean_abs : r.bias;
    double ss = 0.0;
    for (double di : d) ss += (center - di) * (center - di);
    r.ci95 = 1.96 * std::sqrt(ss / n);

    r.differences = std::move(d);
    return r;
}

/// Per-case Bland-Altman coordinates: ((m1+m2)/2, d_i).
inline std::vector<std::pair<double, double>> bland_altman_points(const MeasurementSet& m1,
                                                                  const MeasurementSet& m2) {
    std::vector<double> d = differences(m1, m2);
    std::vector<std::pair<double, double>> pts(d.size());
    for (std::size_t i = 0; i < d.size(); ++i)
        pts[i] = {0.5 * (m1.values[i] + m2.values[i]), d[i]};
    return pts;
}

namespace detail {

/// Regularized incomplete beta I_x(a,b) by Lentz continued fraction.
inline double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);

    auto cont_fraction = [](double a_, double b_, double x_) {
        const double eps = 1e-15;
        const double tiny = 1e-300;
        double c = 1.0;
        double d = 1.0 - (a_ + b_) * x_ / (a_ + 1.0);
        if (std::abs(d) < tiny) d = tiny;
        d = 1.0 / d;
        double h = d;
        for (int m = 1; m <= 300; ++m) {
            const double m2 = 2.0 * m;
            double num = m * (b_ - m) * x_ / ((a_ + m2 - 1.0) * (a_ + m2));
            d = 1.0 + num * d;
            if (std::abs(d) < tiny) d = tiny;
            c = 1.0 + num / c;
            if (std::abs(c) < tiny) c = tiny;
            d = 1.0 / d;
            h *= d * c;
            num = -(a_ + m) * (a_ + b_ + m) * x_ / ((a_ + m2) * (a_ + m2 + 1.0));
            d = 1.0 + num * d;
            if (std::abs(d) < tiny) d = tiny;
            c = 1.0 + num / c;
            if (std::abs(c) < tiny) c = tiny;
            d = 1.0 / d;
            const double delta = d * c;
            h *= delta;
            if (std::abs(delta - 1.0) < eps) break;
        }
        return h;
    };

    // Standard symmetry switch for faster convergence.
    if (x < (a + 1.0) / (a + b + 2.0))
        return std::exp(ln_front) * cont_fraction(a, b, x) / a;
    return 1.0 - std::exp(std::lgamma(a + b) - std::lgamma(b) - std::lgamma(a) +
                          b * std::log1p(-x) + a * std::log(x)) *
                     cont_fraction(b, a, 1.0 - x) / b;
}

/// CDF of Student's t with `dof` degrees of freedom.
inline double student_t_cdf(double t, int dof) {
    const double v = static_cast<double>(dof);
    const double x = v / (v + t * t);
    const double tail = 0.5 * incomplete_beta(0.5 * v, 0.5, x);
    return t >= 0.0 ? 1.0 - tail : tail;
}

} // namespace detail

struct PairedTTestResult {
    double t = 0.0;
    double p = 1.0;
    int dof = 0;
};

/// Paired two-sided t-test on |dA_i| - |dB_i|, where dA and dB are the signed
/// per-case differences of two methods against the same ground truth.
inline PairedTTestResult paired_t_test(std::span<const double> d_a, std::span<const double> d_b) {
    if (d_a.size() != d_b.size())
        throw DomainError("paired_t_test: samples differ in length");
    const std::size_t n = d_a.size();
    if (n < 2) throw InsufficientDataError("paired_t_test: need at least 2 pairs");

    std::vector<double> delta(n);
    for (std::size_t i = 0; i < n; ++i) delta[i] = std::abs(d_a[i]) - std::abs(d_b[i]);

    double mean = 0.0;
    for (double v : delta) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : delta) ss += (v - mean) * (v - mean);
    const double var = ss / static_cast<double>(n - 1);
    if (var <= 0.0)
        throw DegenerateTestError("paired_t_test: zero variance of pair deltas");

    PairedTTestResult r;
    r.dof = static_cast<int>(n) - 1;
    r.t = mean / std::sqrt(var / static_cast<double>(n));
    r.p = 2.0 * (1.0 - detail::student_t_cdf(std::abs(r.t), r.dof));
    return r;
}

} // namespace biometry
