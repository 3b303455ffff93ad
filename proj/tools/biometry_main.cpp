// Command-line entry point. Subcommands wrap the experiment harness; every
// command takes an optional JSON config plus targeted flag overrides, and
// writes its outputs into a fingerprinted run directory.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <biometry/biometry.hpp>

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
};

biometry::ExperimentConfig load_config_or_default(const CommonOpts& opts) {
    if (opts.config_path.empty()) return {};
    return biometry::load_experiment_config(opts.config_path);
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "experiment config JSON");
    cmd->add_option("--out", opts.out_dir, "output directory (default: fingerprinted run dir)");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fetal biometry landmark toolkit"};
    app.require_subcommand(1);

    // ---- fit-dod ----
    CommonOpts fit_opts;
    std::string fit_train, fit_measurement;
    std::optional<std::uint64_t> fit_seed;
    auto* fit = app.add_subcommand("fit-dod", "fit the orientation model on a training manifest");
    add_common(fit, fit_opts);
    fit->add_option("--train", fit_train, "training annotation CSV");
    fit->add_option("--measurement", fit_measurement, "OFD|BPD|FL");
    fit->add_option("--seed", fit_seed, "fit seed");

    // ---- train ----
    CommonOpts train_opts;
    std::string train_train, train_measurement, train_orientation_model, train_mode, train_resume;
    std::optional<std::uint64_t> train_seed;
    std::optional<int> train_epochs;
    bool train_ablation = false;
    auto* tr = app.add_subcommand("train", "train the landmark regressor");
    add_common(tr, train_opts);
    tr->add_option("--train", train_train, "training annotation CSV");
    tr->add_option("--measurement", train_measurement, "OFD|BPD|FL");
    tr->add_option("--orientation-model", train_orientation_model,
                   "orientation model JSON (fit-dod output)");
    tr->add_option("--orientation-mode", train_mode,
                   "dynamic|fixed_horizontal|fixed_vertical|none");
    tr->add_option("--epochs", train_epochs, "override epoch count");
    tr->add_option("--seed", train_seed, "training seed");
    tr->add_flag("--ablation", train_ablation, "train all four orientation modes");
    tr->add_option("--resume", train_resume, "resume from checkpoint file");

    // ---- evaluate ----
    CommonOpts eval_opts;
    std::vector<std::string> eval_tests;
    std::string eval_checkpoint, eval_measurement, eval_scale, eval_ruler, eval_predictor = "model";
    auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on test manifests");
    add_common(ev, eval_opts);
    ev->add_option("--test", eval_tests, "test annotation CSV (repeatable)");
    ev->add_option("--checkpoint", eval_checkpoint, "checkpoint file");
    ev->add_option("--measurement", eval_measurement, "OFD|BPD|FL");
    ev->add_option("--scale-source", eval_scale, "metadata|recover|auto");
    ev->add_option("--ruler-template", eval_ruler, "ruler template JSON");
    ev->add_option("--predictor", eval_predictor, "model|oracle");

    // ---- measure ----
    biometry::MeasureArgs measure_args;
    std::string measure_scale = "auto";
    double measure_mm = 0.0;
    auto* me = app.add_subcommand("measure", "measure one image, print JSON");
    me->add_option("--image", measure_args.image_path, "input image (PNG or JPEG)")->required();
    me->add_option("--checkpoint", measure_args.checkpoint_path, "checkpoint file")->required();
    me->add_option("--scale-source", measure_scale, "metadata|recover|auto");
    me->add_option("--mm-per-pixel", measure_mm, "metadata scale");
    me->add_option("--ruler-template", measure_args.ruler_template, "ruler template JSON");

    // ---- synth ----
    std::string synth_out, synth_shape = "rod_femur";
    int synth_n = 100, synth_size = 128;
    std::uint64_t synth_seed = 0;
    double synth_mm = 0.2;
    double synth_rot_min = -5.0, synth_rot_max = 45.0;
    bool synth_ruler = false;
    auto* sy = app.add_subcommand("synth", "generate a synthetic dataset");
    sy->add_option("--out", synth_out, "output directory")->required();
    sy->add_option("--shape", synth_shape, "ellipse_head|rod_femur");
    sy->add_option("--n", synth_n, "number of images");
    sy->add_option("--size", synth_size, "image side length");
    sy->add_option("--seed", synth_seed, "generator seed");
    sy->add_option("--mm-per-pixel", synth_mm, "metadata scale (<=0: none)");
    sy->add_option("--rotation-min", synth_rot_min, "orientation range start, degrees");
    sy->add_option("--rotation-max", synth_rot_max, "orientation range end, degrees");
    sy->add_flag("--ruler", synth_ruler, "render a calibration ruler");

    // ---- convert-via ----
    std::string via_in, via_out;
    auto* cv = app.add_subcommand("convert-via", "convert a VIA point export to annotation CSV");
    cv->add_option("--in", via_in, "VIA JSON export")->required();
    cv->add_option("--out", via_out, "output CSV")->required();

    // ---- convert-hc-masks ----
    biometry::HcMaskArgs hc_args;
    auto* ch = app.add_subcommand("convert-hc-masks",
                                  "derive OFD/BPD landmarks from head-contour masks");
    ch->add_option("--masks", hc_args.mask_dir, "mask directory")->required();
    ch->add_option("--out", hc_args.out_csv, "output CSV")->required();
    ch->add_option("--suffix", hc_args.mask_suffix, "mask filename suffix");
    ch->add_option("--pixel-size-csv", hc_args.pixel_size_csv,
                   "CSV of image name, mm per pixel");

    CLI11_PARSE(app, argc, argv);

    try {
        if (fit->parsed()) {
            biometry::ExperimentConfig cfg = load_config_or_default(fit_opts);
            if (!fit_train.empty()) cfg.train_manifest = fit_train;
            if (!fit_measurement.empty())
                cfg.measurement = biometry::parse_measurement_kind(fit_measurement);
            if (fit_seed) cfg.train.seed = *fit_seed;
            const auto outcome = biometry::run_fit_dod(cfg, fit_opts.out_dir);
            std::cout << outcome.model_path << "\n";
        } else if (tr->parsed()) {
            biometry::ExperimentConfig cfg = load_config_or_default(train_opts);
            if (!train_train.empty()) cfg.train_manifest = train_train;
            if (!train_measurement.empty())
                cfg.measurement = biometry::parse_measurement_kind(train_measurement);
            if (!train_orientation_model.empty()) cfg.orientation_model = train_orientation_model;
            if (!train_mode.empty())
                cfg.train.orientation_mode = biometry::parse_orientation_mode(train_mode);
            if (train_epochs) cfg.train.epochs = *train_epochs;
            if (train_seed) cfg.train.seed = *train_seed;
            const auto outcome =
                biometry::run_train(cfg, train_ablation, train_resume, train_opts.out_dir);
            for (const auto& p : outcome.checkpoint_paths) std::cout << p << "\n";
        } else if (ev->parsed()) {
            biometry::ExperimentConfig cfg = load_config_or_default(eval_opts);
            if (!eval_tests.empty()) cfg.test_manifests = eval_tests;
            if (!eval_checkpoint.empty()) cfg.checkpoint = eval_checkpoint;
            if (!eval_measurement.empty())
                cfg.measurement = biometry::parse_measurement_kind(eval_measurement);
            if (!eval_scale.empty()) cfg.scale_source = biometry::parse_scale_source(eval_scale);
            if (!eval_ruler.empty()) cfg.ruler_template = eval_ruler;
            const auto outcome = biometry::run_evaluate(cfg, eval_predictor, eval_opts.out_dir);
            std::cout << outcome.report_csv << "\n";
        } else if (me->parsed()) {
            measure_args.scale_source = biometry::parse_scale_source(measure_scale);
            if (measure_mm > 0.0) measure_args.mm_per_pixel = measure_mm;
            std::cout << biometry::run_measure(measure_args).dump(2) << "\n";
        } else if (sy->parsed()) {
            biometry::SyntheticConfig cfg;
            cfg.shape = biometry::parse_synthetic_shape(synth_shape);
            cfg.n_images = synth_n;
            cfg.image_size = synth_size;
            cfg.seed = synth_seed;
            cfg.mm_per_pixel = synth_mm;
            cfg.orientation_min_deg = synth_rot_min;
            cfg.orientation_max_deg = synth_rot_max;
            cfg.with_ruler = synth_ruler;
            if (synth_ruler) cfg.ruler.spacing_mm = synth_mm > 0 ? synth_mm * cfg.ruler.gap_px : 1.0;
            const auto outcome = biometry::run_synth(cfg, synth_out);
            std::cout << outcome.csv_path << "\n";
        } else if (cv->parsed()) {
            biometry::run_convert_via(via_in, via_out);
            std::cout << via_out << "\n";
        } else if (ch->parsed()) {
            biometry::run_convert_hc_masks(hc_args);
            std::cout << hc_args.out_csv << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return biometry::exit_code_for(e);
    }
    return 0;
}
