#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ceph3d/common.hpp"
#include "ceph3d/nn.hpp"

namespace ceph3d {

enum class ModelKind { direct, hourglass, softargmax };
enum class BlockKind { plain, resnext };
enum class NormKind { instance, group };

std::string to_string(ModelKind k);
std::string to_string(BlockKind k);
std::string to_string(NormKind k);
ModelKind model_kind_from_string(const std::string& s);
BlockKind block_kind_from_string(const std::string& s);
NormKind norm_kind_from_string(const std::string& s);

/// Architecture description. Defaults are the hourglass-family settings;
/// kind-specific defaults (direct: 5 stages, instance norm) are applied by
/// the config layer.
struct ModelConfig {
    ModelKind kind = ModelKind::softargmax;
    std::int64_t base_width = 16;
    std::int64_t num_stages = 4;  // downsampling steps
    std::int64_t num_stacks = 3;  // hourglass count (1 for softargmax)
    BlockKind block = BlockKind::resnext;
    NormKind norm = NormKind::group;
    std::int64_t groups = 8;      // ResNeXt cardinality and group-norm groups
    std::int64_t num_landmarks = 4;
    std::array<std::int64_t, 3> input_shape{64, 128, 128}; // (nz, ny, nx)

    // Throws construction_error naming the violated invariant.
    void validate() const;

    KvFile to_kv(const std::string& prefix = "model.") const;
    static ModelConfig from_kv(const KvFile& kv, const std::string& prefix = "model.");
};

/// What one forward pass yields. Which members are populated depends on the
/// model kind:
///   direct     -> coordinates only
///   hourglass  -> heatmaps (final) + per-stack aux_heatmaps (final included
///                 as the last entry)
///   softargmax -> coordinates + backing heatmaps + per-decoder-level
///                 aux_coordinates
/// Coordinates are (N, L, 3) in (x, y, z) axis order, normalized per axis to
/// [0,1] by dim-1. Heatmap handles are sigmoid outputs; matching logits are
/// kept alongside so losses can use the numerically stable form.
struct ModelOutput {
    nn::Var coordinates;
    std::vector<nn::Var> aux_coordinates;
    nn::Var heatmaps;
    std::vector<nn::Var> aux_heatmaps;
    nn::Var heatmap_logits;
    std::vector<nn::Var> aux_heatmap_logits;
    std::vector<double> rectified_mass; // per (n,l), softargmax kind only
};

inline constexpr std::uint64_t kDefaultInitSeed = 0x9d2c5680u;

namespace detail {
struct ParamStore;
}

class Model;

/// A checkpointed model together with its config echo.
struct LoadedModel;

/// One built network: long-lived parameter nodes plus the forward graph
/// builder. Construction and inference on distinct instances are
/// thread-safe; a single instance must not be trained concurrently.
class Model {
public:
    static Model build(const ModelConfig& cfg, std::uint64_t init_seed = kDefaultInitSeed);

    /// batch is (N, 1, nz, ny, nx); spatial dims must be divisible by
    /// 2^num_stages. Throws shape_error naming expected vs received dims.
    ModelOutput forward(const nn::Tensor& batch) const;

    std::int64_t parameter_count() const;
    const std::vector<nn::Var>& parameters() const;
    const ModelConfig& config() const { return cfg_; }

    /// Binary checkpoint: config echo (plus caller-supplied extra keys) and
    /// named parameter arrays, bit-exact across save/load.
    void save_checkpoint(const std::string& path, const KvFile& extra = {}) const;
    static LoadedModel load_checkpoint(const std::string& path);

private:
    ModelConfig cfg_;
    std::shared_ptr<detail::ParamStore> store_;

    nn::Var block(const std::string& prefix, const nn::Var& x) const;
    nn::Var norm(const std::string& prefix, const nn::Var& x) const;
    struct HourglassOut {
        nn::Var features;                    // full-res feature map
        std::vector<nn::Var> decoder_levels; // sub-full-res decoder outputs, coarse to fine
    };
    HourglassOut hourglass_core(const std::string& prefix, const nn::Var& x) const;

    ModelOutput forward_direct(const nn::Var& input) const;
    ModelOutput forward_hourglass(const nn::Var& input) const;
    ModelOutput forward_softargmax(const nn::Var& input) const;
};

struct LoadedModel {
    Model model;
    KvFile echo;
};

} // namespace ceph3d
