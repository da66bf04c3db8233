#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ceph3d/augmentation.hpp"
#include "ceph3d/networks.hpp"
#include "ceph3d/training.hpp"

namespace ceph3d {

/// Everything one run needs, parsed from a strict key=value file. Unknown
/// keys are fatal; every key left to its default is recorded so manifests
/// can echo the applied configuration faithfully.
struct RunConfig {
    std::string data_dir;
    std::string out_dir;
    std::array<std::int64_t, 3> target_shape{64, 64, 64}; // nx, ny, nz
    bool zscore = true;
    ModelConfig model;
    TrainConfig train;
    AugmentConfig augment;
    std::vector<double> radii{2.0, 3.0, 4.0};
    std::int64_t folds = 5;
    std::uint64_t seed = 0;

    std::vector<std::string> defaulted_keys; // filled by parse_config

    void validate() const;
    KvFile to_kv() const;
};

RunConfig parse_config(const std::string& path);
RunConfig config_from_kv(const KvFile& kv, const std::string& origin);
void emit_config(const RunConfig& cfg, const std::string& path);

} // namespace ceph3d
