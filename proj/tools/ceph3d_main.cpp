#include <CLI11.hpp>
#include <array>
#include <cstdio>
#include <string>
#include <vector>

#include "ceph3d/common.hpp"
#include "ceph3d/errors.hpp"
#include "ceph3d/phantom.hpp"
#include "ceph3d/runner.hpp"

namespace {

int run(int argc, char** argv) {
    CLI::App app{"3D cephalometric landmark regression toolkit"};
    app.require_subcommand(1);

    // gen-phantoms
    auto* gen = app.add_subcommand("gen-phantoms", "Generate a synthetic skull-phantom dataset");
    std::int64_t gen_n = 20;
    std::uint64_t gen_seed = 0;
    std::string gen_out;
    std::vector<std::int64_t> gen_grid{64, 64, 64};
    std::vector<double> gen_spacing{2.0, 2.0, 2.0};
    gen->add_option("--n", gen_n, "number of phantoms");
    gen->add_option("--seed", gen_seed, "master seed");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--grid", gen_grid, "grid shape nx ny nz")->expected(3);
    gen->add_option("--spacing", gen_spacing, "voxel spacing mm")->expected(3);

    // preprocess
    auto* prep = app.add_subcommand("preprocess", "Resample and z-score volumes to the working grid");
    std::string prep_in, prep_out;
    std::vector<std::int64_t> prep_shape{64, 64, 64};
    bool prep_no_zscore = false;
    prep->add_option("--in", prep_in, "input dataset directory")->required();
    prep->add_option("--out", prep_out, "output directory")->required();
    prep->add_option("--shape", prep_shape, "target shape nx ny nz")->expected(3);
    prep->add_flag("--no-zscore", prep_no_zscore, "skip z-score normalization");

    // train
    auto* train = app.add_subcommand("train", "Train a single cross-validation fold");
    std::string train_config, train_data, train_out;
    std::int64_t train_fold_idx = 0;
    train->add_option("--config", train_config, "run config file")->required();
    train->add_option("--fold", train_fold_idx, "fold index");
    train->add_option("--data", train_data, "override paths.data_dir");
    train->add_option("--out", train_out, "override paths.out_dir");

    // cross-validate
    auto* cv = app.add_subcommand("cross-validate", "Train all folds and emit the pooled report");
    std::string cv_config, cv_data, cv_out;
    cv->add_option("--config", cv_config, "run config file")->required();
    cv->add_option("--data", cv_data, "override paths.data_dir");
    cv->add_option("--out", cv_out, "override paths.out_dir");

    // predict
    auto* pred = app.add_subcommand("predict", "Predict landmarks for one volume");
    std::string pred_ckpt, pred_volume, pred_out;
    pred->add_option("--checkpoint", pred_ckpt, "checkpoint file")->required();
    pred->add_option("--volume", pred_volume, "volume stem or .raw/.volhdr path")->required();
    pred->add_option("--out", pred_out, "output landmark file")->required();

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Compare predictions against annotations");
    std::string ev_pred, ev_gt, ev_out;
    std::vector<double> ev_radii{2.0, 3.0, 4.0};
    ev->add_option("--pred", ev_pred, "prediction directory (*.lmk)")->required();
    ev->add_option("--gt", ev_gt, "annotation directory (*.lmk)")->required();
    ev->add_option("--out", ev_out, "report output directory")->required();
    ev->add_option("--radii", ev_radii, "likelihood radii in mm")->expected(-1);

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        ceph3d::PhantomSpec spec;
        spec.grid_shape = {gen_grid[0], gen_grid[1], gen_grid[2]};
        spec.spacing_mm = {gen_spacing[0], gen_spacing[1], gen_spacing[2]};
        const auto manifest = ceph3d::generate_dataset(gen_n, spec, gen_seed, gen_out);
        std::printf("wrote %zu phantoms and %s\n", manifest.ids.size(), manifest.path.c_str());
        return 0;
    }
    if (prep->parsed()) {
        ceph3d::run_preprocess(prep_in, prep_out, {prep_shape[0], prep_shape[1], prep_shape[2]},
                               !prep_no_zscore);
        std::printf("preprocessed volumes written to %s\n", prep_out.c_str());
        return 0;
    }
    if (train->parsed()) {
        ceph3d::RunConfig cfg = ceph3d::parse_config(train_config);
        if (!train_data.empty()) cfg.data_dir = train_data;
        if (!train_out.empty()) cfg.out_dir = train_out;
        if (cfg.data_dir.empty() || cfg.out_dir.empty())
            throw ceph3d::parameter_error("train needs paths.data_dir and paths.out_dir");
        const auto ds = ceph3d::preprocess_dataset(ceph3d::load_dataset(cfg.data_dir), cfg);
        const auto plan = ceph3d::make_folds(static_cast<std::int64_t>(ds.size()), cfg.folds, cfg.seed);
        const auto res = ceph3d::run_train_fold(cfg, ds, plan, train_fold_idx);
        std::printf("fold %lld: best val RMSE %.4f mm at update %lld\n",
                    static_cast<long long>(train_fold_idx), res.best_val_rmse_mm,
                    static_cast<long long>(res.best_update));
        return 0;
    }
    if (cv->parsed()) {
        ceph3d::RunConfig cfg = ceph3d::parse_config(cv_config);
        if (!cv_data.empty()) cfg.data_dir = cv_data;
        if (!cv_out.empty()) cfg.out_dir = cv_out;
        const auto res = ceph3d::run_cross_validate(cfg);
        std::printf("cross-validation over %zu samples: total RMSE %.4f mm, FH mean %.4f deg\n",
                    res.ids.size(), res.report.rmse_3d.total, res.report.fh_angle_mean_deg);
        return 0;
    }
    if (pred->parsed()) {
        ceph3d::run_predict(pred_ckpt, pred_volume, pred_out);
        std::printf("landmarks written to %s\n", pred_out.c_str());
        return 0;
    }
    if (ev->parsed()) {
        const auto report = ceph3d::run_evaluate(ev_pred, ev_gt, ev_out, ev_radii);
        std::printf("evaluated %zu samples: total RMSE %.4f mm\n", report.sample_ids.size(),
                    report.rmse_3d.total);
        return 0;
    }
    return 1;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
