#pragma once

#include <string>
#include <vector>

#include "ceph3d/evaluation.hpp"
#include "ceph3d/run_config.hpp"
#include "ceph3d/training.hpp"

namespace ceph3d {

/// Load every <id>.volhdr/.raw + <id>.lmk pair under data_dir, sorted by id.
Dataset load_dataset(const std::string& data_dir);

/// Resample to the working grid and z-score per the config.
Volume preprocess_volume(const Volume& v, const std::array<std::int64_t, 3>& target_shape,
                         bool zscore);
Dataset preprocess_dataset(const Dataset& ds, const RunConfig& cfg);

/// Materialize preprocessed volumes (and copied landmark files) to out_dir.
void run_preprocess(const std::string& data_dir, const std::string& out_dir,
                    const std::array<std::int64_t, 3>& target_shape, bool zscore);

/// Train one fold and write fold_<i>/{manifest.txt, history.csv,
/// checkpoint.ckpt} plus predictions for its validation samples under
/// out_dir. Returns the fold result.
TrainFoldResult run_train_fold(const RunConfig& cfg, const Dataset& preprocessed,
                               const FoldPlan& plan, std::int64_t fold);

struct CrossValResult {
    std::vector<std::string> ids;  // pooled validation ids, sorted
    EvalReport report;
};

/// All folds; pooled validation predictions are evaluated and written to
/// out_dir/report plus out_dir/predictions/<id>.lmk.
CrossValResult run_cross_validate(const RunConfig& cfg);

/// Load a checkpoint, preprocess the volume per its config echo, predict,
/// and write the landmark file.
LandmarkSet run_predict(const std::string& checkpoint_path, const std::string& volume_path,
                        const std::string& out_path);

/// Pair <id>.lmk files from both directories (ids must match exactly),
/// evaluate and emit the report files into out_dir.
EvalReport run_evaluate(const std::string& pred_dir, const std::string& gt_dir,
                        const std::string& out_dir, const std::vector<double>& radii);

} // namespace ceph3d
