#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "biometry/core.hpp"
#include "biometry/data.hpp"
#include "biometry/dod.hpp"
#include "biometry/errors.hpp"
#include "biometry/measure.hpp"
#include "biometry/metrics.hpp"
#include "biometry/model.hpp"
#include "biometry/orientation_io.hpp"
#include "biometry/png_io.hpp"
#include "biometry/svg_plot.hpp"

// Experiment harness: one structured config drives every subcommand, every
// run lands in its own directory stamped with the config fingerprint.

namespace biometry {

enum class ScaleSourcePolicy { metadata, recover, auto_select };

inline std::string to_string(ScaleSourcePolicy p) {
    switch (p) {
    case ScaleSourcePolicy::metadata: return "metadata";
    case ScaleSourcePolicy::recover: return "recover";
    case ScaleSourcePolicy::auto_select: return "auto";
    }
    return "?";
}

inline ScaleSourcePolicy parse_scale_source(std::string_view s) {
    if (s == "metadata") return ScaleSourcePolicy::metadata;
    if (s == "recover") return ScaleSourcePolicy::recover;
    if (s == "auto") return ScaleSourcePolicy::auto_select;
    throw ConfigError("unknown scale source: " + std::string(s) +
                      " (expected metadata|recover|auto)");
}

// ---- ruler template files: PNG patch + JSON sidecar ----

inline void save_ruler_template(const RulerTemplate& tpl, const std::string& json_path) {
    std::filesystem::path png = std::filesystem::path(json_path).replace_extension(".png");
    ImageU8 patch(tpl.patch.width(), tpl.patch.height());
    for (int y = 0; y < patch.height(); ++y)
        for (int x = 0; x < patch.width(); ++x)
            patch.at(x, y) = static_cast<std::uint8_t>(
                std::clamp<long>(std::lround(tpl.patch.at(x, y) * 255.0), 0, 255));
    write_png_gray(png.string(), patch);

    nlohmann::ordered_json j;
    j["format"] = "ruler-template-v1";
    j["patch"] = png.filename().string();
    j["physical_spacing_mm"] = tpl.physical_spacing_mm;
    j["search_band"] = {{"x", tpl.search_band.x},
                        {"y", tpl.search_band.y},
                        {"width", tpl.search_band.width},
                        {"height", tpl.search_band.height}};
    std::ofstream out(json_path, std::ios::binary);
    if (!out) throw IoError("cannot write ruler template: " + json_path);
    out << j.dump(2) << "\n";
}

inline RulerTemplate load_ruler_template(const std::string& json_path) {
    std::ifstream in(json_path, std::ios::binary);
    if (!in) throw IoError("cannot read ruler template: " + json_path);
    nlohmann::json j;
    RulerTemplate tpl;
    try {
        in >> j;
        tpl.physical_spacing_mm = j.at("physical_spacing_mm").get<double>();
        const auto& b = j.at("search_band");
        tpl.search_band = Rect{b.at("x").get<int>(), b.at("y").get<int>(),
                               b.at("width").get<int>(), b.at("height").get<int>()};
        const std::filesystem::path png =
            std::filesystem::path(json_path).parent_path() / j.at("patch").get<std::string>();
        ImageU8 patch = read_png_gray(png.string());
        tpl.patch = to_float(patch);
        for (auto& v : tpl.patch.pixels()) v /= 255.0f;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("ruler template: malformed JSON: ") + e.what());
    }
    return tpl;
}

// ---- experiment configuration ----

struct ExperimentConfig {
    MeasurementKind measurement = MeasurementKind::FL;
    std::string train_manifest;
    std::vector<std::string> test_manifests;
    std::string orientation_model; // fit-dod output consumed by train
    std::string checkpoint;        // train output consumed by evaluate/measure
    ScaleSourcePolicy scale_source = ScaleSourcePolicy::auto_select;
    std::string ruler_template;
    std::string out_dir = "runs";
    Ci95Mode ci95_mode = Ci95Mode::abs_centered;
    RegressorSpec regressor;
    TrainConfig train;
    AugmentConfig augment;
    HeatmapConfig heatmap;
};

inline nlohmann::ordered_json experiment_config_to_json(const ExperimentConfig& c) {
    nlohmann::ordered_json j;
    j["measurement"] = to_string(c.measurement);
    j["train_manifest"] = c.train_manifest;
    j["test_manifests"] = c.test_manifests;
    j["orientation_model"] = c.orientation_model;
    j["checkpoint"] = c.checkpoint;
    j["scale_source"] = to_string(c.scale_source);
    j["ruler_template"] = c.ruler_template;
    j["out_dir"] = c.out_dir;
    j["ci95_mode"] = to_string(c.ci95_mode);
    j["regressor"] = {{"variant", to_string(c.regressor.variant)},
                      {"input_size", c.regressor.input_size},
                      {"output_stride", c.regressor.output_stride},
                      {"channels", c.regressor.channels}};
    j["train"] = detail::train_config_to_json(c.train);
    j["augment"] = {{"rotation_min_deg", c.augment.rotation_min_deg},
                    {"rotation_max_deg", c.augment.rotation_max_deg},
                    {"scale_min_pct", c.augment.scale_min_pct},
                    {"scale_max_pct", c.augment.scale_max_pct},
                    {"max_resample_attempts", c.augment.max_resample_attempts}};
    j["heatmap"] = {{"sigma", c.heatmap.sigma},
                    {"stride", c.heatmap.stride},
                    {"truncation_radius", c.heatmap.truncation_radius}};
    return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j,
                                                    const std::string& base_dir = "") {
    ExperimentConfig c;
    const auto resolve = [&](std::string p) {
        if (p.empty() || base_dir.empty()) return p;
        std::filesystem::path fp(p);
        if (fp.is_relative()) return (std::filesystem::path(base_dir) / fp).string();
        return p;
    };
    try {
        if (j.contains("measurement"))
            c.measurement = parse_measurement_kind(j.at("measurement").get<std::string>());
        if (j.contains("train_manifest"))
            c.train_manifest = resolve(j.at("train_manifest").get<std::string>());
        if (j.contains("test_manifests"))
            for (const auto& t : j.at("test_manifests"))
                c.test_manifests.push_back(resolve(t.get<std::string>()));
        if (j.contains("orientation_model"))
            c.orientation_model = resolve(j.at("orientation_model").get<std::string>());
        if (j.contains("checkpoint")) c.checkpoint = resolve(j.at("checkpoint").get<std::string>());
        if (j.contains("scale_source"))
            c.scale_source = parse_scale_source(j.at("scale_source").get<std::string>());
        if (j.contains("ruler_template"))
            c.ruler_template = resolve(j.at("ruler_template").get<std::string>());
        if (j.contains("out_dir")) c.out_dir = resolve(j.at("out_dir").get<std::string>());
        if (j.contains("ci95_mode"))
            c.ci95_mode = j.at("ci95_mode").get<std::string>() == "classical"
                              ? Ci95Mode::classical
                              : Ci95Mode::abs_centered;
        if (j.contains("regressor")) {
            const auto& r = j.at("regressor");
            if (r.contains("variant"))
                c.regressor.variant = parse_regressor_variant(r.at("variant").get<std::string>());
            if (r.contains("input_size")) c.regressor.input_size = r.at("input_size").get<int>();
            if (r.contains("output_stride"))
                c.regressor.output_stride = r.at("output_stride").get<int>();
            if (r.contains("channels"))
                c.regressor.channels = r.at("channels").get<std::vector<int>>();
        }
        if (j.contains("train")) c.train = detail::train_config_from_json(j.at("train"));
        if (j.contains("augment")) {
            const auto& a = j.at("augment");
            if (a.contains("rotation_min_deg"))
                c.augment.rotation_min_deg = a.at("rotation_min_deg").get<double>();
            if (a.contains("rotation_max_deg"))
                c.augment.rotation_max_deg = a.at("rotation_max_deg").get<double>();
            if (a.contains("scale_min_pct"))
                c.augment.scale_min_pct = a.at("scale_min_pct").get<double>();
            if (a.contains("scale_max_pct"))
                c.augment.scale_max_pct = a.at("scale_max_pct").get<double>();
            if (a.contains("max_resample_attempts"))
                c.augment.max_resample_attempts = a.at("max_resample_attempts").get<int>();
        }
        if (j.contains("heatmap")) {
            const auto& h = j.at("heatmap");
            if (h.contains("sigma")) c.heatmap.sigma = h.at("sigma").get<double>();
            if (h.contains("stride")) c.heatmap.stride = h.at("stride").get<int>();
            if (h.contains("truncation_radius"))
                c.heatmap.truncation_radius = h.at("truncation_radius").get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("experiment config: ") + e.what());
    }
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("experiment config: parse error: ") + e.what());
    }
    return experiment_config_from_json(j, std::filesystem::path(path).parent_path().string());
}

/// FNV-1a 64 over the canonical config dump; stable across runs and hosts.
inline std::string fingerprint_hex(const std::string& canonical) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : canonical) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string config_fingerprint(const ExperimentConfig& c, const std::string& command) {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["config"] = experiment_config_to_json(c);
    return fingerprint_hex(j.dump());
}

/// Run directory: explicit override wins; otherwise
/// <out_dir>/<command>-<UTC timestamp>-<fingerprint[:8]>. The full config and
/// fingerprint are written next to the outputs.
inline std::string prepare_run_dir(const ExperimentConfig& c, const std::string& command,
                                   const std::string& out_override) {
    const std::string fp = config_fingerprint(c, command);
    std::filesystem::path dir;
    if (!out_override.empty()) {
        dir = out_override;
    } else {
        const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        gmtime_r(&now, &tm);
        std::ostringstream name;
        name << command << '-' << std::put_time(&tm, "%Y%m%d-%H%M%S") << '-' << fp.substr(0, 8);
        dir = std::filesystem::path(c.out_dir) / name.str();
        int n = 0;
        while (std::filesystem::exists(dir))
            dir = std::filesystem::path(c.out_dir) / (name.str() + "-" + std::to_string(++n));
    }
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create run directory: " + dir.string());

    nlohmann::ordered_json j;
    j["command"] = command;
    j["fingerprint"] = fp;
    j["config"] = experiment_config_to_json(c);
    std::ofstream cfg(dir / "config.json", std::ios::binary);
    if (!cfg) throw IoError("cannot write run config: " + (dir / "config.json").string());
    cfg << j.dump(2) << "\n";
    return dir.string();
}

// ---- shared helpers ----

namespace detail {

inline std::vector<AnnotatedImage> load_manifest_strict(const std::string& csv_path) {
    if (csv_path.empty()) throw ConfigError("no manifest path given");
    LoadResult r = load_point_annotations(csv_path);
    require_clean(r, csv_path);
    return std::move(r.images);
}

struct ResolvedScale {
    double mm_per_pixel = 0.0;
    ScaleSource source = ScaleSource::metadata;
};

inline ResolvedScale resolve_scale(const ImageF& image, std::optional<double> metadata,
                                   ScaleSourcePolicy policy, const RulerTemplate* tpl) {
    switch (policy) {
    case ScaleSourcePolicy::metadata:
        if (metadata) return {*metadata, ScaleSource::metadata};
        throw MissingPrerequisiteError("no scale available");
    case ScaleSourcePolicy::recover:
        if (!tpl) throw MissingPrerequisiteError("no scale available");
        return {recover_scale(image, *tpl), ScaleSource::recovered};
    case ScaleSourcePolicy::auto_select:
        if (metadata) return {*metadata, ScaleSource::metadata};
        if (tpl) return {recover_scale(image, *tpl), ScaleSource::recovered};
        throw MissingPrerequisiteError("no scale available");
    }
    throw Error("unreachable");
}

inline std::string csv_num(double v) { return format_double(v); }

inline void write_curves_csv(const std::vector<EpochRecord>& curve, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write curves: " + path);
    out << "epoch,train_loss,val_median_px_error\n";
    for (const auto& r : curve)
        out << r.epoch << ',' << csv_num(r.train_loss) << ',' << csv_num(r.val_median_px_error)
            << "\n";
}

inline const char* mode_color(OrientationMode m) {
    switch (m) {
    case OrientationMode::dynamic: return "#1f77b4";
    case OrientationMode::fixed_horizontal: return "#ff7f0e";
    case OrientationMode::fixed_vertical: return "#2ca02c";
    case OrientationMode::none: return "#d62728";
    }
    return "#555555";
}

struct CurveSet {
    std::string label;
    std::string color;
    const std::vector<EpochRecord>* curve;
    int best_epoch = 0;
};

/// Two stacked panels: validation error (with best-epoch markers) over
/// training loss (with lr-drop markers).
inline std::string render_convergence(const std::vector<CurveSet>& sets,
                                      const std::vector<int>& lr_drops) {
    svg::LinePlot val;
    val.title = "validation median landmark error";
    val.x_label = "epoch";
    val.y_label = "error [px]";
    svg::LinePlot loss;
    loss.title = "training loss";
    loss.x_label = "epoch";
    loss.y_label = "MSE";
    for (const auto& s : sets) {
        svg::Series sv{s.label, s.color, {}, false};
        svg::Series sl{s.label, s.color, {}, false};
        for (const auto& r : *s.curve) {
            sv.points.push_back({static_cast<double>(r.epoch), r.val_median_px_error});
            sl.points.push_back({static_cast<double>(r.epoch), r.train_loss});
        }
        val.series.push_back(std::move(sv));
        loss.series.push_back(std::move(sl));
        if (s.best_epoch > 0)
            val.vlines.push_back({static_cast<double>(s.best_epoch), s.color,
                                  sets.size() == 1 ? "best epoch" : ""});
    }
    for (int e : lr_drops) loss.vlines.push_back({static_cast<double>(e), "#bbbbbb", ""});
    return svg::compose_vertical({svg::render(val), svg::render(loss)});
}

} // namespace detail

// ---- fit-dod ----

struct FitDodOutcome {
    std::string run_dir;
    std::string model_path;
    OrientationFit fit;
};

inline FitDodOutcome run_fit_dod(const ExperimentConfig& config,
                                 const std::string& out_override = "",
                                 std::ostream& log = std::cerr) {
    std::vector<AnnotatedImage> records = detail::load_manifest_strict(config.train_manifest);
    const std::vector<NormalizedPair> pairs =
        collect_normalized_pairs(records, config.measurement);
    if (pairs.empty()) throw ConfigError("no training records");

    GmmFitConfig gmm;
    gmm.seed = config.train.seed;
    FitDodOutcome out;
    out.fit = fit_orientation(pairs, gmm);
    out.run_dir = prepare_run_dir(config, "fit-dod", out_override);
    out.model_path = (std::filesystem::path(out.run_dir) / "orientation_model.json").string();
    save_orientation_model(out.fit.model, config.measurement, out.fit.report, gmm.seed,
                           out.model_path);
    log << "fit-dod: " << pairs.size() << " pairs, " << out.fit.report.iterations
        << " EM iterations, direction (" << out.fit.model.direction.x() << ", "
        << out.fit.model.direction.y() << ")\n";
    return out;
}

// ---- train ----

struct TrainOutcome {
    std::string run_dir;
    // one entry per trained mode; single-mode runs have exactly one
    std::vector<OrientationMode> modes;
    std::vector<std::string> checkpoint_paths;
    std::vector<Checkpoint> checkpoints;
};

namespace detail {

inline const OrientationModel* orientation_for_mode(OrientationMode mode,
                                                    const OrientationModel* dynamic_model) {
    // fixed/none are materialized inside model.train; only dynamic needs input
    return mode == OrientationMode::dynamic ? dynamic_model : nullptr;
}

} // namespace detail

inline TrainOutcome run_train(const ExperimentConfig& config, bool ablation = false,
                              const std::string& resume_from = "",
                              const std::string& out_override = "",
                              std::ostream& log = std::cerr) {
    TrainOutcome out;

    if (!resume_from.empty()) {
        if (ablation) throw ConfigError("--resume cannot be combined with --ablation");
        Checkpoint from = load_checkpoint(resume_from);
        std::vector<AnnotatedImage> records =
            filter_by_kind(detail::load_manifest_strict(config.train_manifest), from.kind);
        if (records.empty()) throw ConfigError("no training records");
        ExperimentConfig effective = config;
        effective.measurement = from.kind;
        effective.train = from.train;
        effective.regressor = from.spec;
        effective.heatmap = from.heatmap;
        effective.augment = from.augment;
        out.run_dir = prepare_run_dir(effective, "train", out_override);
        TrainResult res = train_resume(from, records, nullptr, [&](const EpochRecord& r) {
            log << "epoch " << r.epoch << "/" << from.train.epochs << " loss " << r.train_loss
                << " val " << r.val_median_px_error << " px\n";
        });
        res.checkpoint.fingerprint = config_fingerprint(effective, "train");
        const std::string path =
            (std::filesystem::path(out.run_dir) / "checkpoint.bin").string();
        save_checkpoint(res.checkpoint, path);
        detail::write_curves_csv(res.checkpoint.curve,
                                 (std::filesystem::path(out.run_dir) / "curves.csv").string());
        svg::write_svg((std::filesystem::path(out.run_dir) / "convergence.svg").string(),
                       detail::render_convergence(
                           {{to_string(res.checkpoint.train.orientation_mode),
                             detail::mode_color(res.checkpoint.train.orientation_mode),
                             &res.checkpoint.curve, res.checkpoint.best_epoch}},
                           res.checkpoint.train.lr_drop_epochs));
        out.modes.push_back(res.checkpoint.train.orientation_mode);
        out.checkpoint_paths.push_back(path);
        out.checkpoints.push_back(std::move(res.checkpoint));
        return out;
    }

    std::vector<AnnotatedImage> records =
        filter_by_kind(detail::load_manifest_strict(config.train_manifest), config.measurement);
    if (records.empty()) throw ConfigError("no training records");

    // Dynamic orientation input: an explicit model file wins; otherwise fit
    // one from the training records (and keep it with the outputs).
    OrientationModel dyn_model;
    bool have_dyn = false;
    const bool needs_dyn =
        ablation || config.train.orientation_mode == OrientationMode::dynamic;
    if (needs_dyn) {
        if (!config.orientation_model.empty()) {
            dyn_model = load_orientation_model(config.orientation_model);
            have_dyn = true;
        } else {
            const std::vector<NormalizedPair> pairs =
                collect_normalized_pairs(records, config.measurement);
            GmmFitConfig gmm;
            gmm.seed = config.train.seed;
            OrientationFit fit = fit_orientation(pairs, gmm);
            dyn_model = fit.model;
            have_dyn = true;
            out.run_dir = prepare_run_dir(config, "train", out_override);
            save_orientation_model(
                dyn_model, config.measurement, fit.report, gmm.seed,
                (std::filesystem::path(out.run_dir) / "orientation_model.json").string());
        }
    }
    if (out.run_dir.empty()) out.run_dir = prepare_run_dir(config, "train", out_override);

    const std::vector<OrientationMode> modes =
        ablation ? std::vector<OrientationMode>{OrientationMode::dynamic,
                                                OrientationMode::fixed_horizontal,
                                                OrientationMode::fixed_vertical,
                                                OrientationMode::none}
                 : std::vector<OrientationMode>{config.train.orientation_mode};

    std::vector<detail::CurveSet> curves;
    for (OrientationMode mode : modes) {
        TrainConfig tc = config.train;
        tc.orientation_mode = mode;
        log << "training, orientation_mode=" << to_string(mode) << "\n";
        TrainResult res =
            train(records, detail::orientation_for_mode(mode, have_dyn ? &dyn_model : nullptr),
                  tc, config.regressor, config.heatmap, config.augment,
                  [&](const EpochRecord& r) {
                      log << "  epoch " << r.epoch << "/" << tc.epochs << " loss " << r.train_loss
                          << " val " << r.val_median_px_error << " px\n";
                  });
        res.checkpoint.fingerprint = config_fingerprint(config, "train");
        const std::string suffix = ablation ? "-" + to_string(mode) : "";
        const std::string path =
            (std::filesystem::path(out.run_dir) / ("checkpoint" + suffix + ".bin")).string();
        save_checkpoint(res.checkpoint, path);
        detail::write_curves_csv(
            res.checkpoint.curve,
            (std::filesystem::path(out.run_dir) / ("curves" + suffix + ".csv")).string());
        out.modes.push_back(mode);
        out.checkpoint_paths.push_back(path);
        out.checkpoints.push_back(std::move(res.checkpoint));
    }
    for (std::size_t i = 0; i < out.checkpoints.size(); ++i)
        curves.push_back({to_string(out.modes[i]), detail::mode_color(out.modes[i]),
                          &out.checkpoints[i].curve, out.checkpoints[i].best_epoch});
    svg::write_svg((std::filesystem::path(out.run_dir) / "convergence.svg").string(),
                   detail::render_convergence(curves, config.train.lr_drop_epochs));
    return out;
}

// ---- evaluate ----

struct EvaluateRow {
    std::string dataset;
    MeasurementKind measurement = MeasurementKind::FL;
    AgreementReport report;
};

struct EvaluateOutcome {
    std::string run_dir;
    std::string report_csv;
    std::vector<EvaluateRow> rows;
};

/// predictor: "model" runs the checkpoint, "oracle" feeds ground truth back
/// (self-agreement harness check).
inline EvaluateOutcome run_evaluate(const ExperimentConfig& config,
                                    const std::string& predictor = "model",
                                    const std::string& out_override = "",
                                    std::ostream& log = std::cerr) {
    if (config.test_manifests.empty()) throw ConfigError("no test manifests given");
    const bool oracle = predictor == "oracle";
    if (!oracle && predictor != "model")
        throw ConfigError("unknown predictor: " + predictor + " (expected model|oracle)");

    Checkpoint ckpt;
    if (!oracle) {
        if (config.checkpoint.empty()) throw ConfigError("no checkpoint given");
        ckpt = load_checkpoint(config.checkpoint);
        if (ckpt.kind != config.measurement)
            throw ConfigError("checkpoint measurement " + to_string(ckpt.kind) +
                              " does not match configured " + to_string(config.measurement));
    }
    RulerTemplate tpl;
    bool have_tpl = false;
    if (!config.ruler_template.empty()) {
        tpl = load_ruler_template(config.ruler_template);
        have_tpl = true;
    }

    EvaluateOutcome out;
    out.run_dir = prepare_run_dir(config, "evaluate", out_override);
    out.report_csv = (std::filesystem::path(out.run_dir) / "report.csv").string();
    std::ofstream report(out.report_csv, std::ios::binary);
    if (!report) throw IoError("cannot write report: " + out.report_csv);
    report << "dataset,measurement,n,bias_mm,ci95_mm,mean_abs_mm,median_abs_mm,ci95_mode\n";

    for (const auto& manifest : config.test_manifests) {
        std::vector<AnnotatedImage> records =
            filter_by_kind(detail::load_manifest_strict(manifest), config.measurement);
        if (records.size() < 2)
            throw ConfigError("test manifest " + manifest +
                              " has fewer than 2 records for " + to_string(config.measurement));
        const std::string dataset = std::filesystem::path(manifest).stem().string();

        MeasurementSet predicted, truth;
        std::ofstream pred_csv(
            (std::filesystem::path(out.run_dir) / ("predictions-" + dataset + ".csv")).string(),
            std::ios::binary);
        pred_csv << "case_id,x1,y1,x2,y2,length_px,length_mm,scale_source,low_confidence\n";
        for (const auto& rec : records) {
            const std::optional<LandmarkPair> gt = find_pair(rec, config.measurement);
            if (!gt) continue;
            LandmarkPair pair = *gt;
            bool low_confidence = false;
            if (!oracle) {
                Prediction p = predict(rec.pixels, ckpt);
                pair = p.pair;
                low_confidence = p.low_confidence;
            }
            const detail::ResolvedScale scale = detail::resolve_scale(
                rec.pixels, rec.mm_per_pixel, config.scale_source, have_tpl ? &tpl : nullptr);
            const BiometricResult pred_res =
                compute_measurement(pair, scale.mm_per_pixel, scale.source);
            const BiometricResult gt_res =
                compute_measurement(*gt, scale.mm_per_pixel, scale.source);
            predicted.values.push_back(pred_res.length_mm);
            predicted.ids.push_back(rec.case_id);
            truth.values.push_back(gt_res.length_mm);
            truth.ids.push_back(rec.case_id);
            pred_csv << rec.case_id << ',' << detail::csv_num(pair.first.x) << ','
                     << detail::csv_num(pair.first.y) << ',' << detail::csv_num(pair.second.x)
                     << ',' << detail::csv_num(pair.second.y) << ','
                     << detail::csv_num(pred_res.length_px) << ','
                     << detail::csv_num(pred_res.length_mm) << ',' << to_string(scale.source)
                     << ',' << (low_confidence ? 1 : 0) << "\n";
        }

        EvaluateRow row;
        row.dataset = dataset;
        row.measurement = config.measurement;
        row.report = agreement_report(predicted, truth, config.ci95_mode);
        report << dataset << ',' << to_string(row.measurement) << ',' << row.report.n << ','
               << detail::csv_num(row.report.bias) << ',' << detail::csv_num(row.report.ci95)
               << ',' << detail::csv_num(row.report.mean_abs) << ','
               << detail::csv_num(row.report.median_abs) << ',' << to_string(row.report.ci95_mode)
               << "\n";

        // Bland-Altman scatter against ground truth
        svg::ScatterPlot ba;
        ba.title = "Bland-Altman: " + dataset + " " + to_string(config.measurement);
        ba.x_label = "mean of methods [mm]";
        ba.y_label = "difference [mm]";
        for (const auto& [mean, diff] : bland_altman_points(predicted, truth))
            ba.points.push_back({mean, diff});
        const double sd_term = row.report.ci95 / 1.96;
        ba.hlines.push_back({row.report.bias, "bias", "#d62728", false});
        ba.hlines.push_back({row.report.bias + 1.96 * sd_term, "+CI95", "#d62728", true});
        ba.hlines.push_back({row.report.bias - 1.96 * sd_term, "-CI95", "#d62728", true});
        svg::write_svg((std::filesystem::path(out.run_dir) /
                        ("bland_altman-" + dataset + "-" + to_string(config.measurement) + ".svg"))
                           .string(),
                       svg::render(ba));
        std::ofstream ba_csv(
            (std::filesystem::path(out.run_dir) / ("bland_altman-" + dataset + ".csv")).string(),
            std::ios::binary);
        ba_csv << "case_id,mean_mm,diff_mm\n";
        const auto pts = bland_altman_points(predicted, truth);
        for (std::size_t i = 0; i < pts.size(); ++i)
            ba_csv << predicted.ids[i] << ',' << detail::csv_num(pts[i].first) << ','
                   << detail::csv_num(pts[i].second) << "\n";

        log << "evaluate " << dataset << " " << to_string(config.measurement) << ": n="
            << row.report.n << " bias=" << row.report.bias << " ci95=" << row.report.ci95
            << " mean_abs=" << row.report.mean_abs << " median_abs=" << row.report.median_abs
            << "\n";
        out.rows.push_back(std::move(row));
    }
    return out;
}

// ---- measure ----

struct MeasureArgs {
    std::string image_path;
    std::string checkpoint_path;
    ScaleSourcePolicy scale_source = ScaleSourcePolicy::auto_select;
    std::optional<double> mm_per_pixel; // metadata supplied on the command line
    std::string ruler_template;
};

inline nlohmann::ordered_json run_measure(const MeasureArgs& args) {
    if (args.image_path.empty()) throw ConfigError("no image given");
    if (args.checkpoint_path.empty()) throw ConfigError("no checkpoint given");
    ImageU8 raw = read_image_gray(args.image_path);
    ImageF image = to_float(raw);
    for (auto& v : image.pixels()) v /= 255.0f;

    const Checkpoint ckpt = load_checkpoint(args.checkpoint_path);
    const Prediction pred = predict(image, ckpt);

    RulerTemplate tpl;
    bool have_tpl = false;
    if (!args.ruler_template.empty()) {
        tpl = load_ruler_template(args.ruler_template);
        have_tpl = true;
    }
    const detail::ResolvedScale scale = detail::resolve_scale(
        image, args.mm_per_pixel, args.scale_source, have_tpl ? &tpl : nullptr);
    const BiometricResult res =
        compute_measurement(pred.pair, scale.mm_per_pixel, scale.source);

    nlohmann::ordered_json j;
    j["measurement"] = to_string(res.kind);
    j["landmarks"] = {{{"x", res.landmarks.first.x}, {"y", res.landmarks.first.y}},
                      {{"x", res.landmarks.second.x}, {"y", res.landmarks.second.y}}};
    j["length_px"] = res.length_px;
    j["mm_per_pixel"] = res.mm_per_pixel;
    j["length_mm"] = res.length_mm;
    j["scale_source"] = to_string(res.scale_source);
    j["confidence"] = {pred.confidence[0], pred.confidence[1]};
    j["low_confidence"] = pred.low_confidence;
    return j;
}

// ---- synth ----

struct SynthOutcome {
    std::string out_dir;
    std::string csv_path;
    std::string ruler_template_json; // empty when no ruler configured
    std::size_t n_images = 0;
};

inline SynthOutcome run_synth(const SyntheticConfig& config, const std::string& out_dir,
                              std::ostream& log = std::cerr) {
    if (out_dir.empty()) throw ConfigError("no output directory given");
    const SyntheticDataset ds = generate_synthetic(config);

    const std::filesystem::path root(out_dir);
    std::error_code ec;
    std::filesystem::create_directories(root / "images", ec);
    if (ec) throw IoError("cannot create output directory: " + out_dir);

    std::vector<AnnotationRow> rows;
    for (const auto& rec : ds.images) {
        const std::string rel = "images/" + rec.case_id + ".png";
        ImageU8 u8(rec.pixels.width(), rec.pixels.height());
        for (int y = 0; y < u8.height(); ++y)
            for (int x = 0; x < u8.width(); ++x)
                u8.at(x, y) = static_cast<std::uint8_t>(
                    std::clamp<long>(std::lround(rec.pixels.at(x, y) * 255.0), 0, 255));
        write_png_gray((root / rel).string(), u8);
        for (const auto& pair : rec.landmarks) {
            AnnotationRow row;
            row.image = rel;
            row.measurement = pair.measurement;
            row.p1 = pair.first;
            row.p2 = pair.second;
            row.subject_id = rec.subject_id;
            row.mm_per_pixel = rec.mm_per_pixel;
            rows.push_back(std::move(row));
        }
    }
    SynthOutcome out;
    out.out_dir = out_dir;
    out.n_images = ds.images.size();
    out.csv_path = (root / "annotations.csv").string();
    save_annotation_rows(rows, out.csv_path);
    if (ds.ruler_template) {
        out.ruler_template_json = (root / "ruler_template.json").string();
        save_ruler_template(*ds.ruler_template, out.ruler_template_json);
    }
    log << "synth: wrote " << ds.images.size() << " images, " << rows.size() << " rows to "
        << out_dir << "\n";
    return out;
}

// ---- converters ----

inline std::size_t run_convert_via(const std::string& via_json_path, const std::string& out_csv,
                                   std::ostream& log = std::cerr) {
    std::ifstream in(via_json_path, std::ios::binary);
    if (!in) throw IoError("cannot read VIA export: " + via_json_path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("VIA export: parse error: ") + e.what());
    }
    ViaConversion conv = convert_via_export(doc);
    for (const auto& w : conv.warnings) log << "warning: " << w << "\n";
    if (conv.rows.empty()) throw ConfigError("no annotations converted");
    save_annotation_rows(conv.rows, out_csv);
    log << "convert-via: " << conv.rows.size() << " rows -> " << out_csv << "\n";
    return conv.rows.size();
}

struct HcMaskArgs {
    std::string mask_dir;
    std::string out_csv;
    std::string mask_suffix = "_Annotation";
    std::string pixel_size_csv; // optional: filename,mm_per_pixel per row
};

inline std::size_t run_convert_hc_masks(const HcMaskArgs& args, std::ostream& log = std::cerr) {
    if (args.mask_dir.empty() || args.out_csv.empty())
        throw ConfigError("mask directory and output CSV required");

    // optional physical pixel size table, keyed by image file name
    std::vector<std::pair<std::string, double>> scales;
    if (!args.pixel_size_csv.empty()) {
        std::ifstream in(args.pixel_size_csv, std::ios::binary);
        if (!in) throw IoError("cannot read pixel size CSV: " + args.pixel_size_csv);
        std::string line;
        bool first = true;
        while (std::getline(in, line)) {
            const std::vector<std::string> f = detail::split_csv_line(line);
            if (f.size() < 2) continue;
            double mm;
            if (!detail::parse_double(f[1], mm)) {
                if (!first) log << "warning: unparsable pixel size row: " << line << "\n";
                first = false;
                continue;
            }
            first = false;
            scales.emplace_back(f[0], mm);
        }
    }
    const auto scale_for = [&](const std::string& image_name) -> std::optional<double> {
        for (const auto& [name, mm] : scales)
            if (name == image_name) return mm;
        return std::nullopt;
    };

    std::vector<std::filesystem::path> masks;
    for (const auto& entry : std::filesystem::directory_iterator(args.mask_dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string stem = entry.path().stem().string();
        if (stem.size() > args.mask_suffix.size() &&
            stem.compare(stem.size() - args.mask_suffix.size(), args.mask_suffix.size(),
                         args.mask_suffix) == 0)
            masks.push_back(entry.path());
    }
    std::sort(masks.begin(), masks.end());
    if (masks.empty()) throw ConfigError("no mask files matching *" + args.mask_suffix + " found");

    std::vector<AnnotationRow> rows;
    std::size_t skipped = 0;
    for (const auto& mask_path : masks) {
        const std::string stem = mask_path.stem().string();
        const std::string image_stem = stem.substr(0, stem.size() - args.mask_suffix.size());
        const std::string image_name = image_stem + mask_path.extension().string();
        try {
            const ImageU8 mask = read_image_gray(mask_path.string());
            const MaskLandmarks lm = derive_landmarks_from_mask(mask);
            const std::string subject = image_stem.substr(0, image_stem.find('_'));
            for (const LandmarkPair& pair : {lm.ofd, lm.bpd}) {
                AnnotationRow row;
                row.image = image_name;
                row.measurement = pair.measurement;
                row.p1 = pair.first;
                row.p2 = pair.second;
                row.subject_id = subject;
                row.mm_per_pixel = scale_for(image_name);
                rows.push_back(std::move(row));
            }
        } catch (const Error& e) {
            ++skipped;
            log << "warning: skipped " << mask_path.filename().string() << ": " << e.what()
                << "\n";
        }
    }
    if (rows.empty()) throw ConfigError("no masks produced landmarks");
    save_annotation_rows(rows, args.out_csv);
    log << "convert-hc-masks: " << rows.size() << " rows (" << skipped << " masks skipped) -> "
        << args.out_csv << "\n";
    return rows.size();
}

/// Process exit code for an error escaping a command: invalid input 2,
/// missing prerequisite 3, anything else 1.
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const MissingPrerequisiteError*>(&e)) return 3;
    if (dynamic_cast<const ScaleRecoveryError*>(&e)) return 3;
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const DomainError*>(&e)) return 2;
    if (dynamic_cast<const IoError*>(&e)) return 2;
    if (dynamic_cast<const InsufficientDataError*>(&e)) return 2;
    return 1;
}

} // namespace biometry
