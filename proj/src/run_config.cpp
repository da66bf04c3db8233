#include "ceph3d/run_config.hpp"

#include <algorithm>
#include <set>

#include "ceph3d/errors.hpp"

namespace ceph3d {

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "paths.data_dir", "paths.out_dir",
        "preprocess.target_shape", "preprocess.zscore",
        "model.kind", "model.base_width", "model.num_stages", "model.num_stacks",
        "model.block", "model.norm", "model.groups", "model.num_landmarks",
        "train.learning_rate", "train.weight_decay", "train.total_updates",
        "train.batch_size", "train.eval_interval", "train.heatmap_sigma",
        "train.softargmax_pure_bce",
        "augment.contrast_range", "augment.intensity_shift_range",
        "augment.max_rotation_deg", "augment.max_translation_mm",
        "augment.erase_probability", "augment.erase_size_range",
        "augment.mirror_axis", "augment.mirror_probability",
        "eval.radii", "cv.folds", "seed",
    };
    return keys;
}

} // namespace

void RunConfig::validate() const {
    model.validate();
    train.validate();
    augment.validate();
    if (folds < 2) throw parameter_error("config: cv.folds must be >= 2");
    if (radii.empty()) throw parameter_error("config: eval.radii must not be empty");
    for (std::size_t i = 0; i < radii.size(); ++i) {
        if (!(radii[i] > 0.0)) throw parameter_error("config: eval.radii must be positive");
        if (i > 0 && radii[i] <= radii[i - 1])
            throw parameter_error("config: eval.radii must be ascending");
    }
    for (int d = 0; d < 3; ++d)
        if (target_shape[d] < 1) throw parameter_error("config: preprocess.target_shape must be >= 1");
}

RunConfig config_from_kv(const KvFile& kv, const std::string& origin) {
    std::set<std::string> seen;
    for (const auto& e : kv.entries) {
        if (!known_keys().count(e.key))
            throw format_error(origin + ": unknown config key '" + e.key + "'");
        if (!seen.insert(e.key).second)
            throw format_error(origin + ": duplicate config key '" + e.key + "'");
    }

    RunConfig cfg;
    if (const auto* v = kv.find("paths.data_dir")) cfg.data_dir = *v;
    if (const auto* v = kv.find("paths.out_dir")) cfg.out_dir = *v;
    if (const auto* v = kv.find("preprocess.target_shape")) {
        const auto s = parse_ints("preprocess.target_shape", *v, 3);
        cfg.target_shape = {s[0], s[1], s[2]};
    }
    if (const auto* v = kv.find("preprocess.zscore")) cfg.zscore = parse_bool("preprocess.zscore", *v);
    if (const auto* v = kv.find("seed")) cfg.seed = static_cast<std::uint64_t>(parse_int("seed", *v));
    if (const auto* v = kv.find("cv.folds")) cfg.folds = parse_int("cv.folds", *v);
    if (const auto* v = kv.find("eval.radii")) cfg.radii = parse_doubles("eval.radii", *v, 0);

    // Model, with kind-dependent defaults where the file is silent.
    ModelConfig& m = cfg.model;
    if (const auto* v = kv.find("model.kind")) m.kind = model_kind_from_string(*v);
    const bool is_direct = m.kind == ModelKind::direct;
    m.base_width = 16;
    m.num_stages = is_direct ? 5 : 4;
    m.num_stacks = is_direct ? 1 : (m.kind == ModelKind::hourglass ? 3 : 1);
    m.block = is_direct ? BlockKind::plain : BlockKind::resnext;
    m.norm = is_direct ? NormKind::instance : NormKind::group;
    m.groups = 8;
    if (const auto* v = kv.find("model.base_width")) m.base_width = parse_int("model.base_width", *v);
    if (const auto* v = kv.find("model.num_stages")) m.num_stages = parse_int("model.num_stages", *v);
    if (const auto* v = kv.find("model.num_stacks")) m.num_stacks = parse_int("model.num_stacks", *v);
    if (const auto* v = kv.find("model.block")) m.block = block_kind_from_string(*v);
    if (const auto* v = kv.find("model.norm")) m.norm = norm_kind_from_string(*v);
    if (const auto* v = kv.find("model.groups")) m.groups = parse_int("model.groups", *v);
    if (const auto* v = kv.find("model.num_landmarks"))
        m.num_landmarks = parse_int("model.num_landmarks", *v);
    m.input_shape = {cfg.target_shape[2], cfg.target_shape[1], cfg.target_shape[0]};

    TrainConfig& t = cfg.train;
    t.weight_decay = is_direct ? 1e-6 : 1e-5;
    t.total_updates = is_direct ? 6000 : 16000;
    if (const auto* v = kv.find("train.learning_rate"))
        t.learning_rate = parse_double("train.learning_rate", *v);
    if (const auto* v = kv.find("train.weight_decay"))
        t.weight_decay = parse_double("train.weight_decay", *v);
    if (const auto* v = kv.find("train.total_updates"))
        t.total_updates = parse_int("train.total_updates", *v);
    if (const auto* v = kv.find("train.batch_size")) t.batch_size = parse_int("train.batch_size", *v);
    t.eval_interval = std::max<std::int64_t>(1, t.total_updates / 20);
    if (const auto* v = kv.find("train.eval_interval"))
        t.eval_interval = parse_int("train.eval_interval", *v);
    if (const auto* v = kv.find("train.heatmap_sigma"))
        t.heatmap_sigma = parse_double("train.heatmap_sigma", *v);
    if (const auto* v = kv.find("train.softargmax_pure_bce"))
        t.softargmax_pure_bce = parse_bool("train.softargmax_pure_bce", *v);
    t.seed = cfg.seed;

    cfg.augment = AugmentConfig::from_kv(kv, "augment.");
    cfg.augment.seed = cfg.seed;

    cfg.validate();
    for (const auto& key : known_keys())
        if (!seen.count(key)) cfg.defaulted_keys.push_back(key);
    return cfg;
}

RunConfig parse_config(const std::string& path) {
    return config_from_kv(load_kv_file(path), path);
}

KvFile RunConfig::to_kv() const {
    KvFile kv;
    kv.set("paths.data_dir", data_dir);
    kv.set("paths.out_dir", out_dir);
    kv.set("preprocess.target_shape", join_ints({target_shape[0], target_shape[1], target_shape[2]}));
    kv.set("preprocess.zscore", zscore ? "true" : "false");
    kv.set("model.kind", to_string(model.kind));
    kv.set("model.base_width", std::to_string(model.base_width));
    kv.set("model.num_stages", std::to_string(model.num_stages));
    kv.set("model.num_stacks", std::to_string(model.num_stacks));
    kv.set("model.block", to_string(model.block));
    kv.set("model.norm", to_string(model.norm));
    kv.set("model.groups", std::to_string(model.groups));
    kv.set("model.num_landmarks", std::to_string(model.num_landmarks));
    kv.set("train.learning_rate", format_double(train.learning_rate));
    kv.set("train.weight_decay", format_double(train.weight_decay));
    kv.set("train.total_updates", std::to_string(train.total_updates));
    kv.set("train.batch_size", std::to_string(train.batch_size));
    kv.set("train.eval_interval", std::to_string(train.eval_interval));
    kv.set("train.heatmap_sigma", format_double(train.heatmap_sigma));
    kv.set("train.softargmax_pure_bce", train.softargmax_pure_bce ? "true" : "false");
    for (const auto& e : augment.to_kv().entries) kv.set(e.key, e.value);
    kv.set("eval.radii", join_doubles(radii));
    kv.set("cv.folds", std::to_string(folds));
    kv.set("seed", std::to_string(seed));
    return kv;
}

void emit_config(const RunConfig& cfg, const std::string& path) { save_kv_file(cfg.to_kv(), path); }

} // namespace ceph3d
