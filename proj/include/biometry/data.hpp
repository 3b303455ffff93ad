#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "biometry/core.hpp"
#include "biometry/errors.hpp"
#include "biometry/image.hpp"
#include "biometry/measure.hpp"
#include "biometry/png_io.hpp"

namespace biometry {

/// One CSV annotation row: a single landmark pair on one image.
struct AnnotationRow {
    std::string image; // path as written in the file (resolved by the loader)
    MeasurementKind measurement = MeasurementKind::FL;
    Point2D p1{0, 0}, p2{0, 0};
    std::string subject_id;
    std::optional<double> mm_per_pixel;
    int line = 0; // 1-based source line, 0 when synthesized
};

struct RowError {
    int line = 0;
    std::string reason;
};

inline constexpr std::string_view kAnnotationHeader =
    "image,measurement,x1,y1,x2,y2,subject_id,mm_per_pixel";

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

inline bool parse_double(const std::string& s, double& out) {
    const char* b = s.data();
    const char* e = b + s.size();
    auto [p, ec] = std::from_chars(b, e, out);
    return ec == std::errc() && p == e && std::isfinite(out);
}

inline std::string format_double(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

} // namespace detail

struct RowParseResult {
    std::vector<AnnotationRow> rows;
    std::vector<RowError> rejected;
    std::size_t rows_in = 0; // data rows seen (header excluded)
};

/// Line-level CSV parse; no filesystem access. Malformed rows are collected,
/// never silently dropped: rows_in == rows.size() + rejected.size().
inline RowParseResult parse_annotation_rows(std::istream& in) {
    RowParseResult out;
    std::string line;
    int line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
        if (!header_seen) {
            std::string stripped = line;
            if (!stripped.empty() && stripped.back() == '\r') stripped.pop_back();
            if (stripped != kAnnotationHeader)
                throw ConfigError("annotation CSV: bad header, expected \"" +
                                  std::string(kAnnotationHeader) + "\"");
            header_seen = true;
            continue;
        }
        ++out.rows_in;
        const std::vector<std::string> f = detail::split_csv_line(line);
        if (f.size() != 8) {
            out.rejected.push_back({line_no, "expected 8 fields"});
            continue;
        }
        AnnotationRow row;
        row.line = line_no;
        row.image = f[0];
        if (row.image.empty()) {
            out.rejected.push_back({line_no, "missing image path"});
            continue;
        }
        try {
            row.measurement = parse_measurement_kind(f[1]);
        } catch (const DomainError&) {
            out.rejected.push_back({line_no, "unknown measurement"});
            continue;
        }
        double x1, y1, x2, y2;
        int points = 0;
        if (!f[2].empty() && !f[3].empty() && detail::parse_double(f[2], x1) &&
            detail::parse_double(f[3], y1))
            ++points;
        if (!f[4].empty() && !f[5].empty() && detail::parse_double(f[4], x2) &&
            detail::parse_double(f[5], y2))
            ++points;
        if (points < 2) {
            out.rejected.push_back({line_no, "expected 2 points"});
            continue;
        }
        row.p1 = {x1, y1};
        row.p2 = {x2, y2};
        if (row.p1 == row.p2) {
            out.rejected.push_back({line_no, "identical landmark points"});
            continue;
        }
        row.subject_id = f[6];
        if (row.subject_id.empty()) {
            out.rejected.push_back({line_no, "missing subject_id"});
            continue;
        }
        if (!f[7].empty()) {
            double mm;
            if (!detail::parse_double(f[7], mm) || mm <= 0.0) {
                out.rejected.push_back({line_no, "invalid mm_per_pixel"});
                continue;
            }
            row.mm_per_pixel = mm;
        }
        out.rows.push_back(std::move(row));
    }
    if (!header_seen) throw ConfigError("annotation CSV: empty file (missing header)");
    return out;
}

inline void save_annotation_rows(const std::vector<AnnotationRow>& rows,
                                 const std::string& csv_path) {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw IoError("cannot write annotations: " + csv_path);
    out << kAnnotationHeader << "\n";
    for (const auto& r : rows) {
        out << r.image << ',' << to_string(r.measurement) << ',' << detail::format_double(r.p1.x)
            << ',' << detail::format_double(r.p1.y) << ',' << detail::format_double(r.p2.x) << ','
            << detail::format_double(r.p2.y) << ',' << r.subject_id << ',';
        if (r.mm_per_pixel) out << detail::format_double(*r.mm_per_pixel);
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + csv_path);
}

struct LoadResult {
    std::vector<AnnotatedImage> images;
    std::vector<RowError> rejected;
    std::size_t rows_in = 0;
};

/// Full loader: parse rows, resolve paths against the CSV's directory, read
/// each image once, group rows per image, validate bounds. Row- and
/// image-level failures land in `rejected` with line numbers.
inline LoadResult load_point_annotations(const std::string& csv_path) {
    std::ifstream in(csv_path, std::ios::binary);
    if (!in) throw IoError("cannot read annotations: " + csv_path);
    RowParseResult parsed = parse_annotation_rows(in);

    LoadResult out;
    out.rows_in = parsed.rows_in;
    out.rejected = std::move(parsed.rejected);

    const std::filesystem::path base = std::filesystem::path(csv_path).parent_path();
    // group rows by resolved path, keeping first-seen image order
    std::vector<std::string> order;
    std::vector<std::vector<AnnotationRow>> groups;
    for (auto& row : parsed.rows) {
        std::filesystem::path p(row.image);
        if (p.is_relative()) p = base / p;
        row.image = p.lexically_normal().string();
        auto it = std::find(order.begin(), order.end(), row.image);
        if (it == order.end()) {
            order.push_back(row.image);
            groups.emplace_back();
            groups.back().push_back(std::move(row));
        } else {
            groups[static_cast<std::size_t>(it - order.begin())].push_back(std::move(row));
        }
    }

    for (std::size_t g = 0; g < order.size(); ++g) {
        ImageU8 raw;
        try {
            raw = read_image_gray(order[g]);
        } catch (const Error& e) {
            for (const auto& row : groups[g])
                out.rejected.push_back({row.line, std::string("unreadable image: ") + e.what()});
            continue;
        }
        AnnotatedImage img;
        img.pixels = to_float(raw);
        for (auto& v : img.pixels.pixels()) v /= 255.0f;
        img.image_path = order[g];
        img.case_id = std::filesystem::path(order[g]).stem().string();
        img.source_id = std::filesystem::path(csv_path).stem().string();
        bool have_any = false;
        for (const auto& row : groups[g]) {
            if (have_any && row.subject_id != img.subject_id) {
                out.rejected.push_back({row.line, "conflicting subject_id for image"});
                continue;
            }
            if (have_any && row.mm_per_pixel && img.mm_per_pixel &&
                *row.mm_per_pixel != *img.mm_per_pixel) {
                out.rejected.push_back({row.line, "conflicting mm_per_pixel for image"});
                continue;
            }
            LandmarkPair pair{row.p1, row.p2, row.measurement};
            const auto inside = [&](Point2D p) {
                return p.x >= 0.0 && p.x < img.width() && p.y >= 0.0 && p.y < img.height();
            };
            if (!inside(pair.first) || !inside(pair.second)) {
                out.rejected.push_back({row.line, "landmark out of bounds"});
                continue;
            }
            img.landmarks.push_back(pair);
            img.subject_id = row.subject_id;
            if (row.mm_per_pixel) img.mm_per_pixel = row.mm_per_pixel;
            have_any = true;
        }
        if (have_any) out.images.push_back(std::move(img));
    }
    return out;
}

inline std::vector<AnnotationRow> to_rows(const std::vector<AnnotatedImage>& images) {
    std::vector<AnnotationRow> rows;
    for (const auto& img : images)
        for (const auto& pair : img.landmarks) {
            AnnotationRow r;
            r.image = img.image_path;
            r.measurement = pair.measurement;
            r.p1 = pair.first;
            r.p2 = pair.second;
            r.subject_id = img.subject_id;
            r.mm_per_pixel = img.mm_per_pixel;
            rows.push_back(std::move(r));
        }
    return rows;
}

/// Throws with a full line-numbered report when any row was rejected.
inline void require_clean(const LoadResult& r, const std::string& csv_path) {
    if (r.rejected.empty()) return;
    std::ostringstream msg;
    msg << csv_path << ": " << r.rejected.size() << " rejected row(s):";
    for (const auto& e : r.rejected) msg << "\n  line " << e.line << ": " << e.reason;
    throw ConfigError(msg.str());
}

// ---- VIA point-annotation export conversion ----

struct ViaConversion {
    std::vector<AnnotationRow> rows;
    std::vector<std::string> warnings;
};

/// Accepts the standard VIA 2.x point-region export: either the raw
/// project's _via_img_metadata map or a flat {key: {filename, regions,
/// file_attributes}} map. Points are grouped per region_attributes
/// "measurement"; exactly two points per measurement per image.
inline ViaConversion convert_via_export(const nlohmann::json& doc) {
    const nlohmann::json* meta = &doc;
    if (doc.contains("_via_img_metadata")) meta = &doc.at("_via_img_metadata");
    if (!meta->is_object()) throw ConfigError("VIA export: expected an object of images");

    ViaConversion out;
    for (auto it = meta->begin(); it != meta->end(); ++it) {
        const nlohmann::json& entry = it.value();
        if (!entry.is_object() || !entry.contains("filename")) continue; // settings blobs
        const std::string filename = entry.at("filename").get<std::string>();
        std::string subject = std::filesystem::path(filename).stem().string();
        std::optional<double> mm;
        if (entry.contains("file_attributes") && entry.at("file_attributes").is_object()) {
            const auto& fa = entry.at("file_attributes");
            if (fa.contains("subject_id") && fa.at("subject_id").is_string())
                subject = fa.at("subject_id").get<std::string>();
            if (fa.contains("mm_per_pixel")) {
                const auto& v = fa.at("mm_per_pixel");
                if (v.is_number()) mm = v.get<double>();
                else if (v.is_string()) {
                    double parsed;
                    if (detail::parse_double(v.get<std::string>(), parsed)) mm = parsed;
                }
            }
        }
        std::array<std::vector<Point2D>, 3> buckets; // by MeasurementKind index
        bool bad = false;
        if (entry.contains("regions")) {
            for (const auto& region : entry.at("regions")) {
                if (!region.contains("shape_attributes")) continue;
                const auto& sa = region.at("shape_attributes");
                if (sa.at("name").get<std::string>() != "point") {
                    out.warnings.push_back(filename + ": skipped non-point region");
                    continue;
                }
                std::string meas;
                if (region.contains("region_attributes") &&
                    region.at("region_attributes").contains("measurement"))
                    meas = region.at("region_attributes").at("measurement").get<std::string>();
                std::transform(meas.begin(), meas.end(), meas.begin(),
                               [](unsigned char c) { return std::toupper(c); });
                int kind_idx = -1;
                if (meas == "OFD") kind_idx = 0;
                else if (meas == "BPD") kind_idx = 1;
                else if (meas == "FL") kind_idx = 2;
                if (kind_idx < 0) {
                    out.warnings.push_back(filename + ": point without a known measurement tag");
                    bad = true;
                    continue;
                }
                buckets[kind_idx].push_back(
                    {sa.at("cx").get<double>(), sa.at("cy").get<double>()});
            }
        }
        (void)bad;
        const std::array<MeasurementKind, 3> kinds = {MeasurementKind::OFD, MeasurementKind::BPD,
                                                      MeasurementKind::FL};
        for (int k = 0; k < 3; ++k) {
            if (buckets[k].empty()) continue;
            if (buckets[k].size() != 2) {
                out.warnings.push_back(filename + ": " + to_string(kinds[k]) + " has " +
                                       std::to_string(buckets[k].size()) +
                                       " points, expected 2; dropped");
                continue;
            }
            AnnotationRow row;
            row.image = filename;
            row.measurement = kinds[k];
            row.p1 = buckets[k][0];
            row.p2 = buckets[k][1];
            row.subject_id = subject;
            row.mm_per_pixel = mm;
            out.rows.push_back(std::move(row));
        }
    }
    return out;
}

// ---- mask-derived head landmarks ----

struct MaskLandmarks {
    LandmarkPair ofd{{0, 0}, {1, 1}, MeasurementKind::OFD};
    LandmarkPair bpd{{0, 0}, {1, 1}, MeasurementKind::BPD};
    Ellipse ellipse;
};

namespace detail {

/// Largest 8-connected foreground component (value > 127), as a mask.
inline Image<std::uint8_t> largest_component(const ImageU8& mask) {
    const int w = mask.width(), h = mask.height();
    Image<int> label(w, h, 0);
    int next = 0;
    std::size_t best_size = 0;
    int best_label = 0;
    std::vector<std::pair<int, int>> stack;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (mask.at(x, y) <= 127 || label.at(x, y) != 0) continue;
            ++next;
            std::size_t size = 0;
            stack.push_back({x, y});
            label.at(x, y) = next;
            while (!stack.empty()) {
                auto [cx, cy] = stack.back();
                stack.pop_back();
                ++size;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dx == 0 && dy == 0) continue;
                        const int nx = cx + dx, ny = cy + dy;
                        if (!mask.in_bounds(nx, ny) || mask.at(nx, ny) <= 127 ||
                            label.at(nx, ny) != 0)
                            continue;
                        label.at(nx, ny) = next;
                        stack.push_back({nx, ny});
                    }
            }
            if (size > best_size) {
                best_size = size;
                best_label = next;
            }
        }
    }
    Image<std::uint8_t> out(w, h, 0);
    if (best_label > 0)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (label.at(x, y) == best_label) out.at(x, y) = 1;
    return out;
}

} // namespace detail

/// Boundary points of the mask's largest component. Border pixel centers sit
/// about half a pixel inside the continuous contour of a filled mask, so each
/// is pushed 0.5 px along its estimated outward normal; thin outline masks
/// (background on both sides) produce no net normal and stay in place.
inline std::vector<Point2D> mask_boundary_points(const ImageU8& mask) {
    const Image<std::uint8_t> comp = detail::largest_component(mask);
    std::vector<Point2D> points;
    const int w = comp.width(), h = comp.height();
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!comp.at(x, y)) continue;
            bool border = false;
            double nx = 0.0, ny = 0.0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    const int qx = x + dx, qy = y + dy;
                    const bool bg = !comp.in_bounds(qx, qy) || !comp.at(qx, qy);
                    if (!bg) continue;
                    if (dx == 0 || dy == 0) border = true;
                    const double s = (dx != 0 && dy != 0) ? inv_sqrt2 : 1.0;
                    nx += s * dx;
                    ny += s * dy;
                }
            if (!border) continue;
            const double norm = std::hypot(nx, ny);
            if (norm >= 0.25)
                points.push_back({x + 0.5 * nx / norm, y + 0.5 * ny / norm});
            else
                points.push_back({static_cast<double>(x), static_cast<double>(y)});
        }
    }
    return points;
}

/// Head annotation mask -> boundary -> ellipse fit -> axis-endpoint pairs.
inline MaskLandmarks derive_landmarks_from_mask(const ImageU8& mask) {
    const std::vector<Point2D> boundary = mask_boundary_points(mask);
    if (boundary.size() < 6) throw DomainError("mask: too few boundary points");
    MaskLandmarks out;
    out.ellipse = fit_ellipse(boundary);
    const AxisLandmarks axes = ellipse_axis_landmarks(out.ellipse);
    out.ofd = axes.ofd;
    out.bpd = axes.bpd;
    return out;
}

// ---- dataset splitting ----

struct SplitManifest {
    std::vector<std::string> train_ids; // image paths
    std::vector<std::string> test_ids;
    bool subject_disjoint = true;
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
};

/// Random split at the configured ratio. Subject-disjoint mode assigns whole
/// subjects to a side; call it once over the combined record set so every
/// per-measurement view of the manifest keeps subjects on one side.
inline SplitManifest make_split(const std::vector<AnnotatedImage>& records, double train_fraction,
                                bool subject_disjoint, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw DomainError("make_split: train_fraction must be in (0, 1)");
    if (records.empty()) throw DomainError("make_split: no records");
    SplitManifest m;
    m.subject_disjoint = subject_disjoint;
    m.train_fraction = train_fraction;
    m.seed = seed;
    std::mt19937_64 rng(seed);
    if (subject_disjoint) {
        std::vector<std::string> subjects;
        for (const auto& r : records) subjects.push_back(r.subject_id);
        std::sort(subjects.begin(), subjects.end());
        subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
        const std::size_t k = static_cast<std::size_t>(std::lround(train_fraction * subjects.size()));
        if (k == 0 || k == subjects.size())
            throw DomainError("make_split: too few subjects for the requested ratio");
        std::shuffle(subjects.begin(), subjects.end(), rng);
        std::vector<std::string> train_subjects(subjects.begin(), subjects.begin() + k);
        std::sort(train_subjects.begin(), train_subjects.end());
        for (const auto& r : records) {
            const bool in_train = std::binary_search(train_subjects.begin(),
                                                     train_subjects.end(), r.subject_id);
            (in_train ? m.train_ids : m.test_ids).push_back(r.image_path);
        }
    } else {
        std::vector<std::size_t> idx(records.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        const std::size_t k = static_cast<std::size_t>(std::lround(train_fraction * records.size()));
        if (k == 0 || k == records.size())
            throw DomainError("make_split: too few records for the requested ratio");
        for (std::size_t i = 0; i < idx.size(); ++i)
            (i < k ? m.train_ids : m.test_ids).push_back(records[idx[i]].image_path);
    }
    return m;
}

inline void save_split(const SplitManifest& m, const std::string& path) {
    nlohmann::ordered_json j;
    j["format"] = "split-manifest-v1";
    j["subject_disjoint"] = m.subject_disjoint;
    j["train_fraction"] = m.train_fraction;
    j["seed"] = m.seed;
    j["train_ids"] = m.train_ids;
    j["test_ids"] = m.test_ids;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write split manifest: " + path);
    out << j.dump(2) << "\n";
}

inline SplitManifest load_split(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read split manifest: " + path);
    nlohmann::json j;
    try {
        in >> j;
        SplitManifest m;
        m.subject_disjoint = j.at("subject_disjoint").get<bool>();
        m.train_fraction = j.at("train_fraction").get<double>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.train_ids = j.at("train_ids").get<std::vector<std::string>>();
        m.test_ids = j.at("test_ids").get<std::vector<std::string>>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("split manifest: malformed JSON: ") + e.what());
    }
}

/// Records whose image path is on the requested side, in manifest order.
inline std::vector<AnnotatedImage> apply_split(const std::vector<AnnotatedImage>& records,
                                               const SplitManifest& m, bool train_side) {
    const auto& ids = train_side ? m.train_ids : m.test_ids;
    std::vector<AnnotatedImage> out;
    for (const auto& id : ids)
        for (const auto& r : records)
            if (r.image_path == id) {
                out.push_back(r);
                break;
            }
    return out;
}

/// Keep only pairs of one measurement; drops images without any.
inline std::vector<AnnotatedImage> filter_by_kind(const std::vector<AnnotatedImage>& records,
                                                  MeasurementKind kind) {
    std::vector<AnnotatedImage> out;
    for (const auto& r : records) {
        AnnotatedImage copy = r;
        copy.landmarks.clear();
        for (const auto& p : r.landmarks)
            if (p.measurement == kind) copy.landmarks.push_back(p);
        if (!copy.landmarks.empty()) out.push_back(std::move(copy));
    }
    return out;
}

// ---- synthetic dataset generator ----

enum class SyntheticShape { ellipse_head, rod_femur };

inline std::string to_string(SyntheticShape s) {
    return s == SyntheticShape::ellipse_head ? "ellipse_head" : "rod_femur";
}

inline SyntheticShape parse_synthetic_shape(std::string_view s) {
    if (s == "ellipse_head") return SyntheticShape::ellipse_head;
    if (s == "rod_femur") return SyntheticShape::rod_femur;
    throw DomainError("unknown synthetic shape: " + std::string(s));
}

struct SyntheticRulerSpec {
    double spacing_mm = 2.0; // physical distance between adjacent markers
    int gap_px = 10;         // pixel distance between adjacent marker centers
    int marker_size = 5;     // odd marker square side
};

struct SyntheticConfig {
    int image_size = 128;
    int n_images = 100;
    int images_per_subject = 4;
    SyntheticShape shape = SyntheticShape::rod_femur;
    double center_jitter_px = 12.0;
    double rod_half_length_min = 28.0, rod_half_length_max = 44.0;
    double rod_radius = 2.5;
    double head_a_min = 30.0, head_a_max = 44.0; // semi-major
    double head_ratio_min = 0.65, head_ratio_max = 0.85; // b = ratio * a
    double orientation_min_deg = -5.0, orientation_max_deg = 45.0;
    double speckle = 0.05;
    double base_intensity = 0.12;
    double amplitude = 0.75;
    double mm_per_pixel = 0.2; // <= 0 means no metadata scale
    bool with_ruler = false;
    SyntheticRulerSpec ruler;
    std::uint64_t seed = 0;
};

inline void validate(const SyntheticConfig& c) {
    if (c.n_images < 1) throw DomainError("SyntheticConfig: n_images >= 1");
    if (c.image_size < 32) throw DomainError("SyntheticConfig: image_size >= 32");
    if (c.images_per_subject < 1) throw DomainError("SyntheticConfig: images_per_subject >= 1");
    if (c.orientation_min_deg > c.orientation_max_deg ||
        c.orientation_min_deg < -180.0 || c.orientation_max_deg > 180.0)
        throw DomainError("SyntheticConfig: orientation range within [-180, 180]");
    if (c.rod_half_length_min > c.rod_half_length_max || c.rod_half_length_min <= 0.0)
        throw DomainError("SyntheticConfig: invalid rod length range");
    if (c.head_a_min > c.head_a_max || c.head_a_min <= 0.0 || c.head_ratio_min > c.head_ratio_max ||
        c.head_ratio_min <= 0.0 || c.head_ratio_max > 1.0)
        throw DomainError("SyntheticConfig: invalid head shape ranges");
    if (c.with_ruler && (c.ruler.gap_px < 4 || c.ruler.marker_size < 3 ||
                         c.ruler.marker_size % 2 == 0 || !(c.ruler.spacing_mm > 0.0)))
        throw DomainError("SyntheticConfig: invalid ruler spec (gap >= 4, odd marker >= 3)");
}

struct SyntheticDataset {
    std::vector<AnnotatedImage> images;
    std::vector<double> orientations_deg; // pose draw per image
    std::optional<RulerTemplate> ruler_template;
};

namespace detail {

inline constexpr int kRulerBandWidth = 12;
inline constexpr double kRulerBackground = 0.03;
inline constexpr double kRulerBrightness = 0.9;

inline void render_ruler(ImageF& img, const SyntheticRulerSpec& spec) {
    const int s = img.width();
    const int x0 = s - kRulerBandWidth;
    for (int y = 0; y < img.height(); ++y)
        for (int x = x0; x < s; ++x) img.at(x, y) = static_cast<float>(kRulerBackground);
    const int cx = s - kRulerBandWidth / 2 - 1; // marker center column
    const int half = spec.marker_size / 2;
    const int y_start = 10;
    for (int cy = y_start; cy + half < img.height() - 4; cy += spec.gap_px)
        for (int dy = -half; dy <= half; ++dy)
            for (int dx = -half; dx <= half; ++dx)
                img.at(cx + dx, cy + dy) = static_cast<float>(kRulerBrightness);
}

inline RulerTemplate make_ruler_template(const SyntheticRulerSpec& spec, int image_size) {
    const int pad = 1;
    const int side = spec.marker_size + 2 * pad;
    ImageF patch(side, side, static_cast<float>(kRulerBackground));
    for (int y = pad; y < side - pad; ++y)
        for (int x = pad; x < side - pad; ++x)
            patch.at(x, y) = static_cast<float>(kRulerBrightness);
    RulerTemplate t;
    t.patch = std::move(patch);
    t.physical_spacing_mm = spec.spacing_mm;
    t.search_band = Rect{image_size - kRulerBandWidth, 0, kRulerBandWidth, image_size};
    return t;
}

} // namespace detail

/// Bright ellipse shell or rod on a speckle background with exact landmark
/// ground truth. Deterministic given the seed; poses that would clip the
/// frame (or the ruler band) are resampled internally.
inline SyntheticDataset generate_synthetic(const SyntheticConfig& config) {
    validate(config);
    SyntheticDataset out;
    const int s = config.image_size;
    const double usable_right =
        config.with_ruler ? s - detail::kRulerBandWidth - 3.0 : s - 1.0;

    for (int i = 0; i < config.n_images; ++i) {
        std::mt19937_64 rng(derive_seed(config.seed, 0x53594e54ull + i));
        ImageF img(s, s);
        std::normal_distribution<double> noise(0.0, 1.0);
        for (auto& v : img.pixels())
            v = static_cast<float>(std::clamp(
                config.base_intensity + config.speckle * noise(rng), 0.0, 1.0));

        std::uniform_real_distribution<double> jitter(-config.center_jitter_px,
                                                      config.center_jitter_px);
        std::uniform_real_distribution<double> angle(config.orientation_min_deg,
                                                     config.orientation_max_deg);

        AnnotatedImage rec;
        double phi_deg = 0.0;
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            const double cx = (s - 1) / 2.0 + jitter(rng);
            const double cy = (s - 1) / 2.0 + jitter(rng);
            phi_deg = angle(rng);
            const double phi = phi_deg * M_PI / 180.0;
            const double ux = std::cos(phi), uy = std::sin(phi);

            if (config.shape == SyntheticShape::rod_femur) {
                std::uniform_real_distribution<double> len(config.rod_half_length_min,
                                                           config.rod_half_length_max);
                const double L = len(rng);
                const Point2D a{cx - L * ux, cy - L * uy};
                const Point2D b{cx + L * ux, cy + L * uy};
                const double m = config.rod_radius + 4.0;
                if (std::min(a.x, b.x) < m || std::max(a.x, b.x) > usable_right - m ||
                    std::min(a.y, b.y) < m || std::max(a.y, b.y) > s - 1.0 - m)
                    continue;
                // capsule intensity profile around segment ab
                const double inv2r2 = 1.0 / (2.0 * config.rod_radius * config.rod_radius);
                const int x0 = std::max(0, static_cast<int>(std::min(a.x, b.x) - m));
                const int x1 = std::min(s - 1, static_cast<int>(std::max(a.x, b.x) + m));
                const int y0 = std::max(0, static_cast<int>(std::min(a.y, b.y) - m));
                const int y1 = std::min(s - 1, static_cast<int>(std::max(a.y, b.y) + m));
                const double abx = b.x - a.x, aby = b.y - a.y;
                const double ab2 = abx * abx + aby * aby;
                for (int y = y0; y <= y1; ++y)
                    for (int x = x0; x <= x1; ++x) {
                        const double t =
                            std::clamp(((x - a.x) * abx + (y - a.y) * aby) / ab2, 0.0, 1.0);
                        const double dx = x - (a.x + t * abx), dy = y - (a.y + t * aby);
                        const double d2 = dx * dx + dy * dy;
                        const double add = config.amplitude * std::exp(-d2 * inv2r2);
                        img.at(x, y) = static_cast<float>(std::min(1.0, img.at(x, y) + add));
                    }
                rec.landmarks.push_back({a, b, MeasurementKind::FL});
                placed = true;
            } else {
                std::uniform_real_distribution<double> a_dist(config.head_a_min, config.head_a_max);
                std::uniform_real_distribution<double> r_dist(config.head_ratio_min,
                                                              config.head_ratio_max);
                const double a = a_dist(rng);
                const double b = r_dist(rng) * a;
                const double shell = 1.5; // shell falloff in px
                const double ex = std::sqrt(a * a * ux * ux + b * b * uy * uy);
                const double ey = std::sqrt(a * a * uy * uy + b * b * ux * ux);
                const double m = shell * 3.0 + 2.0;
                if (cx - ex < m || cx + ex > usable_right - m || cy - ey < m ||
                    cy + ey > s - 1.0 - m)
                    continue;
                const int x0 = std::max(0, static_cast<int>(cx - ex - m));
                const int x1 = std::min(s - 1, static_cast<int>(cx + ex + m));
                const int y0 = std::max(0, static_cast<int>(cy - ey - m));
                const int y1 = std::min(s - 1, static_cast<int>(cy + ey + m));
                for (int y = y0; y <= y1; ++y)
                    for (int x = x0; x <= x1; ++x) {
                        const double rx = (x - cx) * ux + (y - cy) * uy;
                        const double ry = -(x - cx) * uy + (y - cy) * ux;
                        const double rho = std::hypot(rx / a, ry / b);
                        const double d = (rho - 1.0) * b; // approx distance to shell
                        const double add = config.amplitude * std::exp(-d * d / (2.0 * shell * shell));
                        img.at(x, y) = static_cast<float>(std::min(1.0, img.at(x, y) + add));
                    }
                const double wx = -uy, wy = ux;
                rec.landmarks.push_back(
                    {{cx - a * ux, cy - a * uy}, {cx + a * ux, cy + a * uy}, MeasurementKind::OFD});
                rec.landmarks.push_back(
                    {{cx - b * wx, cy - b * wy}, {cx + b * wx, cy + b * wy}, MeasurementKind::BPD});
                placed = true;
            }
        }
        if (!placed) throw Error("generate_synthetic: could not place shape within frame");
        if (config.with_ruler) detail::render_ruler(img, config.ruler);

        rec.pixels = std::move(img);
        char case_name[32];
        std::snprintf(case_name, sizeof case_name, "synth-%05d", i);
        rec.case_id = case_name;
        rec.subject_id = "s" + std::to_string(i / config.images_per_subject);
        rec.source_id = "synthetic";
        if (config.mm_per_pixel > 0.0) rec.mm_per_pixel = config.mm_per_pixel;
        validate(rec);
        out.images.push_back(std::move(rec));
        out.orientations_deg.push_back(phi_deg);
    }
    if (config.with_ruler)
        out.ruler_template = detail::make_ruler_template(config.ruler, config.image_size);
    return out;
}

} // namespace biometry
