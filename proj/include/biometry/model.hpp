#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "biometry/augment.hpp"
#include "biometry/core.hpp"
#include "biometry/dod.hpp"
#include "biometry/errors.hpp"
#include "biometry/heatmap.hpp"
#include "biometry/image.hpp"
#include "biometry/metrics.hpp"
#include "biometry/nn.hpp"
#include "biometry/orientation_io.hpp"

namespace biometry {

enum class RegressorVariant { multi_resolution_full, tiny_encoder_decoder };

inline std::string to_string(RegressorVariant v) {
    return v == RegressorVariant::multi_resolution_full ? "multi_resolution_full"
                                                        : "tiny_encoder_decoder";
}

inline RegressorVariant parse_regressor_variant(std::string_view s) {
    if (s == "multi_resolution_full") return RegressorVariant::multi_resolution_full;
    if (s == "tiny_encoder_decoder") return RegressorVariant::tiny_encoder_decoder;
    throw DomainError("unknown regressor variant: " + std::string(s));
}

struct RegressorSpec {
    RegressorVariant variant = RegressorVariant::tiny_encoder_decoder;
    int input_size = 256;   // square model input
    int output_stride = 4;  // both variants emit at /4
    std::vector<int> channels; // empty = variant default
};

inline void validate(const RegressorSpec& spec) {
    if (spec.output_stride != 4)
        throw DomainError("RegressorSpec: both variants emit heatmaps at stride 4");
    if (spec.input_size < 16 || spec.input_size % 8 != 0)
        throw DomainError("RegressorSpec: input_size must be a multiple of 8, >= 16");
}

inline nn::NetDef build_net(const RegressorSpec& spec) {
    validate(spec);
    if (spec.variant == RegressorVariant::tiny_encoder_decoder)
        return spec.channels.empty() ? nn::build_tiny() : nn::build_tiny(spec.channels);
    return spec.channels.empty() ? nn::build_multires() : nn::build_multires(spec.channels);
}

struct TrainConfig {
    int epochs = 200;
    int batch_size = 16;
    double initial_lr = 1e-4;
    double lr_drop_factor = 0.2;
    std::vector<int> lr_drop_epochs = {10, 40, 90, 150};
    std::uint64_t seed = 0;
    OrientationMode orientation_mode = OrientationMode::dynamic;
    ProjectionOrdering ordering = ProjectionOrdering::absolute_projection;
    double val_fraction = 0.2; // internal subject-disjoint validation split
    bool subpixel_decode = false;
};

inline void validate(const TrainConfig& c) {
    if (c.epochs < 1 || c.batch_size < 1) throw DomainError("TrainConfig: epochs/batch_size >= 1");
    if (!(c.initial_lr > 0.0)) throw DomainError("TrainConfig: initial_lr must be > 0");
    if (!(c.lr_drop_factor > 0.0 && c.lr_drop_factor <= 1.0))
        throw DomainError("TrainConfig: lr_drop_factor must be in (0, 1]");
    for (std::size_t i = 0; i < c.lr_drop_epochs.size(); ++i) {
        if (c.lr_drop_epochs[i] < 1 || c.lr_drop_epochs[i] >= c.epochs)
            throw DomainError("TrainConfig: drop epochs must lie in [1, epochs)");
        if (i > 0 && c.lr_drop_epochs[i] <= c.lr_drop_epochs[i - 1])
            throw DomainError("TrainConfig: drop epochs must be strictly increasing");
    }
    if (!(c.val_fraction > 0.0 && c.val_fraction < 1.0))
        throw DomainError("TrainConfig: val_fraction must be in (0, 1)");
}

/// lr at a 1-based epoch: one factor per drop epoch d <= epoch.
inline double learning_rate_at(const TrainConfig& c, int epoch) {
    int drops = 0;
    for (int d : c.lr_drop_epochs)
        if (d <= epoch) ++drops;
    return c.initial_lr * std::pow(c.lr_drop_factor, drops);
}

/// Resize longest side to input_size, pad bottom/right to square, normalize
/// the padded frame to zero mean / unit std. ratio_out is the resize factor
/// rho: model coords = rho * original coords.
template <typename T>
nn::Tensor<T> preprocess_image(const ImageF& img, int input_size, double* ratio_out = nullptr) {
    if (img.empty()) throw DomainError("preprocess_image: empty image");
    const int longest = std::max(img.width(), img.height());
    const double rho = static_cast<double>(input_size) / longest;
    int nw = img.width() >= img.height()
                 ? input_size
                 : std::max(1, static_cast<int>(std::lround(img.width() * rho)));
    int nh = img.height() >= img.width()
                 ? input_size
                 : std::max(1, static_cast<int>(std::lround(img.height() * rho)));
    nw = std::min(nw, input_size);
    nh = std::min(nh, input_size);
    const ImageF resized = bilinear_resize(img, nw, nh);

    double sum = 0.0, sum2 = 0.0;
    const double n = static_cast<double>(input_size) * input_size;
    for (int y = 0; y < nh; ++y)
        for (int x = 0; x < nw; ++x) {
            const double v = resized.at(x, y);
            sum += v;
            sum2 += v * v;
        }
    const double mean = sum / n;
    const double var = std::max(sum2 / n - mean * mean, 0.0);
    const double inv_std = 1.0 / std::max(std::sqrt(var), 1e-6);

    nn::Tensor<T> t(1, input_size, input_size);
    for (int y = 0; y < input_size; ++y)
        for (int x = 0; x < input_size; ++x) {
            const double v = (y < nh && x < nw) ? resized.at(x, y) : 0.0;
            t.at(0, y, x) = static_cast<T>((v - mean) * inv_std);
        }
    if (ratio_out) *ratio_out = rho;
    return t;
}

template <typename T>
HeatmapStack tensor_to_stack(const nn::Tensor<T>& t, int stride) {
    if (t.c != 2) throw DomainError("tensor_to_stack: expected 2 channels");
    HeatmapStack s;
    s.stride = stride;
    for (int k = 0; k < 2; ++k) {
        Image<double> map(t.w, t.h);
        for (int y = 0; y < t.h; ++y)
            for (int x = 0; x < t.w; ++x) map.at(x, y) = static_cast<double>(t.at(k, y, x));
        s.maps[k] = std::move(map);
    }
    return s;
}

template <typename T>
nn::Tensor<T> stack_to_tensor(const HeatmapStack& s) {
    nn::Tensor<T> t(2, s.height(), s.width());
    for (int k = 0; k < 2; ++k)
        for (int y = 0; y < s.height(); ++y)
            for (int x = 0; x < s.width(); ++x)
                t.at(k, y, x) = static_cast<T>(s.maps[k].at(x, y));
    return t;
}

/// Mean endpoint distance under the better of the two label assignments.
/// Labels are a training construct; validation scores geometry.
inline double pair_error_px(const LandmarkPair& predicted, const LandmarkPair& truth) {
    const double direct = 0.5 * (euclidean_distance(predicted.first, truth.first) +
                                 euclidean_distance(predicted.second, truth.second));
    const double crossed = 0.5 * (euclidean_distance(predicted.first, truth.second) +
                                  euclidean_distance(predicted.second, truth.first));
    return std::min(direct, crossed);
}

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_median_px_error = 0.0;
    double lr = 0.0;
};

struct Checkpoint {
    RegressorSpec spec;
    TrainConfig train;
    HeatmapConfig heatmap;
    AugmentConfig augment;
    MeasurementKind kind = MeasurementKind::FL;
    std::string fingerprint;

    nn::NetParams<float> best_params; // weights used by predict
    int best_epoch = 0;
    double best_val = 0.0;
    std::vector<EpochRecord> curve;

    // resume state
    nn::NetParams<float> last_params;
    nn::Adam<float> adam;
    int completed_epochs = 0;

    bool has_orientation = false;
    OrientationModel orientation;
};

namespace detail {

inline const LandmarkPair& single_pair(const AnnotatedImage& img, MeasurementKind kind) {
    const LandmarkPair* found = nullptr;
    for (const auto& p : img.landmarks) {
        if (p.measurement != kind) continue;
        if (found) throw DomainError("train: image carries duplicate pairs of one measurement");
        found = &p;
    }
    if (!found) throw DomainError("train: image lacks the target measurement pair");
    return *found;
}

inline MeasurementKind dataset_kind(const std::vector<AnnotatedImage>& data) {
    if (data.empty()) throw DomainError("train: empty dataset");
    std::optional<MeasurementKind> kind;
    for (const auto& img : data) {
        if (img.landmarks.empty()) throw DomainError("train: image without landmarks");
        for (const auto& p : img.landmarks) {
            if (!kind) kind = p.measurement;
            else if (*kind != p.measurement)
                throw DomainError("train: mixed measurement kinds in dataset; one model per "
                                  "measurement");
        }
    }
    return *kind;
}

/// Subject-disjoint index split, deterministic in the seed.
inline std::pair<std::vector<int>, std::vector<int>> split_train_val(
    const std::vector<AnnotatedImage>& data, double val_fraction, std::uint64_t seed) {
    std::vector<std::string> subjects;
    for (const auto& img : data) subjects.push_back(img.subject_id);
    std::sort(subjects.begin(), subjects.end());
    subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
    if (subjects.size() < 2)
        throw DomainError("train: need at least 2 subjects for a subject-disjoint validation "
                          "split");
    std::mt19937_64 rng(seed);
    std::shuffle(subjects.begin(), subjects.end(), rng);
    std::size_t n_val = static_cast<std::size_t>(std::lround(val_fraction * subjects.size()));
    n_val = std::clamp<std::size_t>(n_val, 1, subjects.size() - 1);
    std::vector<std::string> val_subjects(subjects.end() - n_val, subjects.end());
    std::sort(val_subjects.begin(), val_subjects.end());
    auto is_val = [&](const std::string& s) {
        return std::binary_search(val_subjects.begin(), val_subjects.end(), s);
    };
    std::pair<std::vector<int>, std::vector<int>> out;
    for (int i = 0; i < static_cast<int>(data.size()); ++i)
        (is_val(data[i].subject_id) ? out.second : out.first).push_back(i);
    if (out.first.empty() || out.second.empty())
        throw DomainError("train: degenerate validation split");
    return out;
}

inline constexpr std::uint64_t kInitStream = 0;
inline constexpr std::uint64_t kSplitStream = 1ull << 32;
inline constexpr std::uint64_t kEpochStreamBase = 1ull << 33;

} // namespace detail

struct Prediction {
    LandmarkPair pair{{0, 0}, {1, 1}, MeasurementKind::FL};
    std::array<double, 2> confidence = {0.0, 0.0};
    bool low_confidence = false;
};

/// Forward pass on an already-preprocessed input tensor.
inline HeatmapStack forward(const nn::NetDef& def, const nn::NetParams<float>& params,
                            const nn::Tensor<float>& input, int stride) {
    nn::Tensor<float> y = nn::net_forward(def, params, input);
    return tensor_to_stack(y, stride);
}

inline Prediction predict(const ImageF& image, const Checkpoint& ckpt) {
    const nn::NetDef def = build_net(ckpt.spec);
    double rho = 1.0;
    const nn::Tensor<float> x = preprocess_image<float>(image, ckpt.spec.input_size, &rho);
    const HeatmapStack stack = forward(def, ckpt.best_params, x, ckpt.spec.output_stride);
    const DecodeResult dec = decode(stack, ckpt.train.subpixel_decode);
    Prediction out;
    out.pair = LandmarkPair{{dec.points[0].x / rho, dec.points[0].y / rho},
                            {dec.points[1].x / rho, dec.points[1].y / rho},
                            ckpt.kind};
    out.confidence = dec.peak_values;
    out.low_confidence = dec.low_confidence;
    return out;
}

struct TrainResult {
    Checkpoint checkpoint;
    AugmentStats aug_stats;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

namespace detail {

struct TrainState {
    nn::NetDef def;
    nn::NetParams<float> params;
    nn::NetParams<float> grads;
    nn::Adam<float> adam;
};

inline double validate_epoch(const TrainState& st, const std::vector<AnnotatedImage>& data,
                             const std::vector<int>& val_idx, const Checkpoint& ckpt) {
    std::vector<double> errors;
    errors.reserve(val_idx.size());
    for (int idx : val_idx) {
        const AnnotatedImage& img = data[idx];
        double rho = 1.0;
        const nn::Tensor<float> x =
            preprocess_image<float>(img.pixels, ckpt.spec.input_size, &rho);
        const HeatmapStack stack =
            forward(st.def, st.params, x, ckpt.spec.output_stride);
        const DecodeResult dec = decode(stack, ckpt.train.subpixel_decode);
        const LandmarkPair& truth = single_pair(img, ckpt.kind);
        const LandmarkPair predicted{{dec.points[0].x / rho, dec.points[0].y / rho},
                                     {dec.points[1].x / rho, dec.points[1].y / rho},
                                     ckpt.kind};
        errors.push_back(pair_error_px(predicted, truth));
    }
    return median(errors);
}

inline void run_epochs(TrainState& st, Checkpoint& ckpt, const std::vector<AnnotatedImage>& data,
                       const std::vector<int>& train_idx, const std::vector<int>& val_idx,
                       const OrientationModel* active_model, int first_epoch,
                       AugmentStats& stats, const EpochCallback& on_epoch) {
    const TrainConfig& cfg = ckpt.train;
    const int hm_cells = 2 * (ckpt.spec.input_size / ckpt.spec.output_stride) *
                         (ckpt.spec.input_size / ckpt.spec.output_stride);
    nn::ForwardCache<float> cache;

    for (int epoch = first_epoch; epoch <= cfg.epochs; ++epoch) {
        std::mt19937_64 rng(derive_seed(cfg.seed, kEpochStreamBase + epoch));
        std::vector<int> order = train_idx;
        std::shuffle(order.begin(), order.end(), rng);
        const double lr = learning_rate_at(cfg, epoch);

        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            st.grads.zero();
            int n_eff = 0;
            double batch_loss = 0.0;
            for (std::size_t s = start; s < stop; ++s) {
                const std::optional<AnnotatedImage> aug = augment_sample(
                    data[order[s]], active_model, ckpt.augment, rng, &stats, cfg.ordering);
                if (!aug) continue;
                double rho = 1.0;
                const nn::Tensor<float> x =
                    preprocess_image<float>(aug->pixels, ckpt.spec.input_size, &rho);
                const LandmarkPair& pair = single_pair(*aug, ckpt.kind);
                const LandmarkPair mapped{{pair.first.x * rho, pair.first.y * rho},
                                          {pair.second.x * rho, pair.second.y * rho},
                                          pair.measurement};
                const HeatmapStack target_stack =
                    encode(mapped, ckpt.spec.input_size, ckpt.spec.input_size, ckpt.heatmap);
                const nn::Tensor<float> target = stack_to_tensor<float>(target_stack);

                const nn::Tensor<float> y = nn::net_forward(st.def, st.params, x, &cache);
                nn::Tensor<float> grad_y(y.c, y.h, y.w);
                double sample_loss = 0.0;
                const float gscale = 2.0f / static_cast<float>(hm_cells);
                for (std::size_t t = 0; t < y.v.size(); ++t) {
                    const float d = y.v[t] - target.v[t];
                    sample_loss += static_cast<double>(d) * d;
                    grad_y.v[t] = gscale * d;
                }
                sample_loss /= hm_cells;
                nn::net_backward(st.def, st.params, cache, grad_y, st.grads);
                batch_loss += sample_loss;
                ++n_eff;
            }
            if (n_eff == 0) continue; // every sample in the batch was skipped
            if (!std::isfinite(batch_loss))
                throw Error("train: non-finite loss at epoch " + std::to_string(epoch) +
                            ", batch starting at index " + std::to_string(start) +
                            " (lr=" + std::to_string(lr) + ")");
            const float inv = 1.0f / static_cast<float>(n_eff);
            for (auto& a : st.grads.w)
                for (auto& g : a) g *= inv;
            for (auto& a : st.grads.b)
                for (auto& g : a) g *= inv;
            st.adam.step(st.params, st.grads, lr);
            loss_sum += batch_loss;
            loss_count += n_eff;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
        rec.lr = lr;
        rec.val_median_px_error = validate_epoch(st, data, val_idx, ckpt);
        ckpt.curve.push_back(rec);
        ckpt.completed_epochs = epoch;
        if (ckpt.best_epoch == 0 || rec.val_median_px_error < ckpt.best_val) {
            ckpt.best_val = rec.val_median_px_error;
            ckpt.best_epoch = epoch;
            ckpt.best_params = st.params;
        }
        if (on_epoch) on_epoch(rec);
    }
    ckpt.last_params = st.params;
    ckpt.adam = st.adam;
}

inline const OrientationModel* resolve_orientation(const TrainConfig& cfg,
                                                   const OrientationModel* dod_model,
                                                   OrientationModel& fixed_storage) {
    switch (cfg.orientation_mode) {
    case OrientationMode::dynamic:
        if (!dod_model)
            throw MissingPrerequisiteError("train: dynamic orientation mode requires a fitted "
                                           "orientation model");
        return dod_model;
    case OrientationMode::fixed_horizontal:
        fixed_storage = fixed_orientation_model(1.0, 0.0);
        return &fixed_storage;
    case OrientationMode::fixed_vertical:
        fixed_storage = fixed_orientation_model(0.0, 1.0);
        return &fixed_storage;
    case OrientationMode::none: return nullptr;
    }
    return nullptr;
}

} // namespace detail

/// Full training run. The dataset must be single-measurement with exactly one
/// pair per image; an internal subject-disjoint validation split is carved
/// out of it. Returns the best-validation checkpoint (with resume state).
inline TrainResult train(const std::vector<AnnotatedImage>& dataset,
                         const OrientationModel* dod_model, const TrainConfig& train_config,
                         const RegressorSpec& spec, const HeatmapConfig& heatmap_config = {},
                         const AugmentConfig& augment_config = {},
                         const EpochCallback& on_epoch = {}) {
    validate(train_config);
    validate(spec);
    validate(heatmap_config);
    validate(augment_config);

    Checkpoint ckpt;
    ckpt.spec = spec;
    ckpt.train = train_config;
    ckpt.heatmap = heatmap_config;
    ckpt.augment = augment_config;
    ckpt.kind = detail::dataset_kind(dataset);
    for (const auto& img : dataset) detail::single_pair(img, ckpt.kind); // exactly-one check

    OrientationModel fixed_storage;
    const OrientationModel* active =
        detail::resolve_orientation(train_config, dod_model, fixed_storage);
    if (dod_model && train_config.orientation_mode == OrientationMode::dynamic) {
        ckpt.has_orientation = true;
        ckpt.orientation = *dod_model;
    }

    const auto [train_idx, val_idx] = detail::split_train_val(
        dataset, train_config.val_fraction, derive_seed(train_config.seed, detail::kSplitStream));

    detail::TrainState st;
    st.def = build_net(spec);
    std::mt19937_64 init_rng(derive_seed(train_config.seed, detail::kInitStream));
    st.params = nn::init_params<float>(st.def, init_rng);
    st.grads = st.params;
    st.grads.zero();
    st.adam.init(st.params);

    TrainResult result;
    detail::run_epochs(st, ckpt, dataset, train_idx, val_idx, active, 1, result.aug_stats,
                       on_epoch);
    result.checkpoint = std::move(ckpt);
    return result;
}

/// Continue a run from its stored resume state up to checkpoint.train.epochs.
/// With the same dataset and config this reproduces exactly the curve a
/// single uninterrupted run would have produced.
inline TrainResult train_resume(const Checkpoint& from, const std::vector<AnnotatedImage>& dataset,
                                const OrientationModel* dod_model,
                                const EpochCallback& on_epoch = {}) {
    Checkpoint ckpt = from;
    if (ckpt.completed_epochs >= ckpt.train.epochs)
        throw DomainError("train_resume: run already complete");
    if (detail::dataset_kind(dataset) != ckpt.kind)
        throw DomainError("train_resume: dataset measurement differs from checkpoint");

    OrientationModel fixed_storage;
    const OrientationModel* active =
        detail::resolve_orientation(ckpt.train, dod_model ? dod_model
                                                          : (ckpt.has_orientation ? &ckpt.orientation
                                                                                  : nullptr),
                                    fixed_storage);

    const auto [train_idx, val_idx] = detail::split_train_val(
        dataset, ckpt.train.val_fraction, derive_seed(ckpt.train.seed, detail::kSplitStream));

    detail::TrainState st;
    st.def = build_net(ckpt.spec);
    st.params = ckpt.last_params;
    st.grads = st.params;
    st.grads.zero();
    st.adam = ckpt.adam;

    TrainResult result;
    detail::run_epochs(st, ckpt, dataset, train_idx, val_idx, active, ckpt.completed_epochs + 1,
                       result.aug_stats, on_epoch);
    result.checkpoint = std::move(ckpt);
    return result;
}

// ---- checkpoint serialization: binary parameter blob + JSON sidecar ----

namespace detail {

inline void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
inline void read_bytes(std::ifstream& in, void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw IoError("checkpoint: truncated blob");
}

template <typename T>
void write_array(std::ofstream& out, const std::vector<T>& a) {
    const std::uint64_t n = a.size();
    write_bytes(out, &n, sizeof n);
    if (n) write_bytes(out, a.data(), n * sizeof(T));
}

template <typename T>
void read_array(std::ifstream& in, std::vector<T>& a) {
    std::uint64_t n = 0;
    read_bytes(in, &n, sizeof n);
    a.resize(n);
    if (n) read_bytes(in, a.data(), n * sizeof(T));
}

template <typename T>
void write_params(std::ofstream& out, const nn::NetParams<T>& p) {
    const std::uint64_t layers = p.w.size();
    write_bytes(out, &layers, sizeof layers);
    for (std::size_t i = 0; i < p.w.size(); ++i) {
        write_array(out, p.w[i]);
        write_array(out, p.b[i]);
    }
}

template <typename T>
void read_params(std::ifstream& in, nn::NetParams<T>& p) {
    std::uint64_t layers = 0;
    read_bytes(in, &layers, sizeof layers);
    p.w.resize(layers);
    p.b.resize(layers);
    for (std::size_t i = 0; i < layers; ++i) {
        read_array(in, p.w[i]);
        read_array(in, p.b[i]);
    }
}

inline nlohmann::ordered_json train_config_to_json(const TrainConfig& c) {
    nlohmann::ordered_json j;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["initial_lr"] = c.initial_lr;
    j["lr_drop_factor"] = c.lr_drop_factor;
    j["lr_drop_epochs"] = c.lr_drop_epochs;
    j["seed"] = c.seed;
    j["orientation_mode"] = to_string(c.orientation_mode);
    j["ordering"] = c.ordering == ProjectionOrdering::absolute_projection ? "absolute" : "signed";
    j["val_fraction"] = c.val_fraction;
    j["subpixel_decode"] = c.subpixel_decode;
    return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c; // absent keys keep their defaults
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.initial_lr = j.value("initial_lr", c.initial_lr);
    c.lr_drop_factor = j.value("lr_drop_factor", c.lr_drop_factor);
    c.lr_drop_epochs = j.value("lr_drop_epochs", c.lr_drop_epochs);
    c.seed = j.value("seed", c.seed);
    if (j.contains("orientation_mode"))
        c.orientation_mode = parse_orientation_mode(j.at("orientation_mode").get<std::string>());
    if (j.contains("ordering"))
        c.ordering = j.at("ordering").get<std::string>() == "signed"
                         ? ProjectionOrdering::signed_projection
                         : ProjectionOrdering::absolute_projection;
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.subpixel_decode = j.value("subpixel_decode", c.subpixel_decode);
    return c;
}

} // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write checkpoint: " + path);
        const char magic[8] = {'B', 'M', 'C', 'K', 'P', 'T', '0', '1'};
        detail::write_bytes(out, magic, sizeof magic);
        detail::write_params(out, ckpt.best_params);
        detail::write_params(out, ckpt.last_params);
        const std::int64_t t = ckpt.adam.t;
        detail::write_bytes(out, &t, sizeof t);
        const std::uint64_t layers = ckpt.adam.mw.size();
        detail::write_bytes(out, &layers, sizeof layers);
        for (std::size_t i = 0; i < layers; ++i) {
            detail::write_array(out, ckpt.adam.mw[i]);
            detail::write_array(out, ckpt.adam.vw[i]);
            detail::write_array(out, ckpt.adam.mb[i]);
            detail::write_array(out, ckpt.adam.vb[i]);
        }
        if (!out) throw IoError("write failed: " + path);
    }

    nlohmann::ordered_json j;
    j["format"] = "checkpoint-v1";
    j["fingerprint"] = ckpt.fingerprint;
    j["measurement"] = to_string(ckpt.kind);
    j["regressor"] = {{"variant", to_string(ckpt.spec.variant)},
                      {"input_size", ckpt.spec.input_size},
                      {"output_stride", ckpt.spec.output_stride},
                      {"channels", ckpt.spec.channels}};
    j["train"] = detail::train_config_to_json(ckpt.train);
    j["heatmap"] = {{"sigma", ckpt.heatmap.sigma},
                    {"stride", ckpt.heatmap.stride},
                    {"truncation_radius", ckpt.heatmap.truncation_radius}};
    j["augment"] = {{"rotation_min_deg", ckpt.augment.rotation_min_deg},
                    {"rotation_max_deg", ckpt.augment.rotation_max_deg},
                    {"scale_min_pct", ckpt.augment.scale_min_pct},
                    {"scale_max_pct", ckpt.augment.scale_max_pct},
                    {"max_resample_attempts", ckpt.augment.max_resample_attempts}};
    j["completed_epochs"] = ckpt.completed_epochs;
    j["best_epoch"] = ckpt.best_epoch;
    j["best_val_median_px_error"] = ckpt.best_val;
    nlohmann::ordered_json curve = nlohmann::ordered_json::array();
    for (const auto& r : ckpt.curve)
        curve.push_back({{"epoch", r.epoch},
                         {"train_loss", r.train_loss},
                         {"val_median_px_error", r.val_median_px_error},
                         {"lr", r.lr}});
    j["curve"] = curve;
    if (ckpt.has_orientation) j["orientation_model"] = orientation_model_to_json(ckpt.orientation);

    std::ofstream meta(path + ".json", std::ios::binary);
    if (!meta) throw IoError("cannot write checkpoint sidecar: " + path + ".json");
    meta << j.dump(2) << "\n";
    if (!meta) throw IoError("write failed: " + path + ".json");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    Checkpoint ckpt;
    {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot read checkpoint: " + path);
        char magic[8];
        detail::read_bytes(in, magic, sizeof magic);
        if (std::memcmp(magic, "BMCKPT01", 8) != 0)
            throw ConfigError("checkpoint: bad magic in " + path);
        detail::read_params(in, ckpt.best_params);
        detail::read_params(in, ckpt.last_params);
        std::int64_t t = 0;
        detail::read_bytes(in, &t, sizeof t);
        ckpt.adam.t = t;
        std::uint64_t layers = 0;
        detail::read_bytes(in, &layers, sizeof layers);
        ckpt.adam.mw.resize(layers);
        ckpt.adam.vw.resize(layers);
        ckpt.adam.mb.resize(layers);
        ckpt.adam.vb.resize(layers);
        for (std::size_t i = 0; i < layers; ++i) {
            detail::read_array(in, ckpt.adam.mw[i]);
            detail::read_array(in, ckpt.adam.vw[i]);
            detail::read_array(in, ckpt.adam.mb[i]);
            detail::read_array(in, ckpt.adam.vb[i]);
        }
    }

    std::ifstream meta_in(path + ".json", std::ios::binary);
    if (!meta_in) throw IoError("cannot read checkpoint sidecar: " + path + ".json");
    nlohmann::json j;
    try {
        meta_in >> j;
        ckpt.fingerprint = j.at("fingerprint").get<std::string>();
        ckpt.kind = parse_measurement_kind(j.at("measurement").get<std::string>());
        const auto& r = j.at("regressor");
        ckpt.spec.variant = parse_regressor_variant(r.at("variant").get<std::string>());
        ckpt.spec.input_size = r.at("input_size").get<int>();
        ckpt.spec.output_stride = r.at("output_stride").get<int>();
        ckpt.spec.channels = r.at("channels").get<std::vector<int>>();
        ckpt.train = detail::train_config_from_json(j.at("train"));
        const auto& h = j.at("heatmap");
        ckpt.heatmap.sigma = h.at("sigma").get<double>();
        ckpt.heatmap.stride = h.at("stride").get<int>();
        ckpt.heatmap.truncation_radius = h.at("truncation_radius").get<double>();
        const auto& a = j.at("augment");
        ckpt.augment.rotation_min_deg = a.at("rotation_min_deg").get<double>();
        ckpt.augment.rotation_max_deg = a.at("rotation_max_deg").get<double>();
        ckpt.augment.scale_min_pct = a.at("scale_min_pct").get<double>();
        ckpt.augment.scale_max_pct = a.at("scale_max_pct").get<double>();
        ckpt.augment.max_resample_attempts = a.at("max_resample_attempts").get<int>();
        ckpt.completed_epochs = j.at("completed_epochs").get<int>();
        ckpt.best_epoch = j.at("best_epoch").get<int>();
        ckpt.best_val = j.at("best_val_median_px_error").get<double>();
        for (const auto& rec : j.at("curve"))
            ckpt.curve.push_back({rec.at("epoch").get<int>(), rec.at("train_loss").get<double>(),
                                  rec.at("val_median_px_error").get<double>(),
                                  rec.at("lr").get<double>()});
        if (j.contains("orientation_model")) {
            ckpt.has_orientation = true;
            ckpt.orientation = orientation_model_from_json(j.at("orientation_model"));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("checkpoint sidecar: malformed JSON: ") + e.what());
    }

    // shape validation against the declared architecture
    const nn::NetDef def = build_net(ckpt.spec);
    std::mt19937_64 probe_rng(0);
    const nn::NetParams<float> shape = nn::init_params<float>(def, probe_rng);
    auto check = [&](const nn::NetParams<float>& p) {
        if (p.w.size() != shape.w.size()) throw ConfigError("checkpoint: layer count mismatch");
        for (std::size_t i = 0; i < p.w.size(); ++i)
            if (p.w[i].size() != shape.w[i].size() || p.b[i].size() != shape.b[i].size())
                throw ConfigError("checkpoint: parameter shape mismatch");
    };
    check(ckpt.best_params);
    check(ckpt.last_params);
    return ckpt;
}

} // namespace biometry
