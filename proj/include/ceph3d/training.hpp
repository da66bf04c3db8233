#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ceph3d/augmentation.hpp"
#include "ceph3d/common.hpp"
#include "ceph3d/landmarks.hpp"
#include "ceph3d/networks.hpp"
#include "ceph3d/volume.hpp"

namespace ceph3d {

struct TrainConfig {
    double learning_rate = 1e-3;
    double weight_decay = 1e-5; // 1e-6 for the direct kind (config layer applies it)
    std::int64_t total_updates = 16000;
    std::int64_t batch_size = 1;
    std::int64_t eval_interval = 800; // defaults to total_updates / 20
    std::uint64_t seed = 0;
    double heatmap_sigma = 2.0;       // Gaussian target width, voxels
    bool softargmax_pure_bce = false; // drop the coordinate-MSE terms

    void validate() const;

    KvFile to_kv(const std::string& prefix = "train.") const;
    static TrainConfig from_kv(const KvFile& kv, const std::string& prefix = "train.");
};

/// k validation folds partitioning sample ids 0..n-1, sizes differing by at
/// most one. Deterministic for fixed (n, k, seed).
struct FoldPlan {
    std::int64_t n = 0;
    std::vector<std::vector<std::int64_t>> validation;

    std::vector<std::int64_t> train_ids(std::int64_t fold) const;
};

FoldPlan make_folds(std::int64_t n, std::int64_t k, std::uint64_t seed);

struct HistoryEntry {
    std::int64_t update;
    double train_loss;
    double val_rmse_mm; // averaged across landmarks
};

struct RunHistory {
    std::vector<HistoryEntry> entries;
    std::string to_csv() const;
};

struct Sample {
    std::string id;
    Volume volume;
    LandmarkSet landmarks;
};
using Dataset = std::vector<Sample>;

/// Per-step supervision, built from one (possibly augmented) sample.
struct LossTargets {
    nn::Var heatmap_target; // (N,L,D,H,W)
    nn::Var coord_target;   // (N,L,3) normalized to [0,1], (x,y,z) order
};

LossTargets make_targets(ModelKind kind, const std::vector<const Sample*>& batch, double sigma);

/// The per-kind composite loss:
///   direct     -> MSE over the normalized coordinates
///   hourglass  -> mean of the per-stack voxelwise BCE terms
///   softargmax -> BCE on the backing heatmap plus MSE of the final and each
///                 auxiliary coordinate output, summed with equal weights
///                 (pure_bce keeps only the BCE term)
nn::Var compute_loss(ModelKind kind, const ModelOutput& out, const LossTargets& targets,
                     bool softargmax_pure_bce = false);

/// Decode a forward pass into world-mm landmarks for the volume's grid:
/// direct/softargmax denormalize their coordinate outputs, hourglass takes
/// the per-channel voxel argmax of the final heatmap. A degenerate
/// softargmax heatmap (rectified mass < 1e-12) raises
/// degenerate_heatmap_error.
LandmarkSet predict(const Model& model, const Volume& v);

struct TrainFoldResult {
    Model model; // parameters restored to the best checkpoint
    RunHistory history;
    double best_val_rmse_mm = std::numeric_limits<double>::infinity();
    std::int64_t best_update = -1;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double wall_clock_sec = 0.0;
};

/// Run cfg.total_updates Adam steps on the fold's training samples with
/// augmentation, evaluating validation RMSE every eval_interval updates and
/// returning the parameters of the best evaluation. Throws divergence_error
/// (reporting the update index) when the loss leaves the finite range.
TrainFoldResult train_fold(const Dataset& dataset, const FoldPlan& plan, std::int64_t fold,
                           const ModelConfig& mcfg, const TrainConfig& tcfg,
                           const AugmentConfig& acfg);

} // namespace ceph3d
