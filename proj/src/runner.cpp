#include "ceph3d/runner.hpp"

#include <algorithm>
#include <filesystem>
#include <map>

#include "ceph3d/errors.hpp"

namespace ceph3d {

namespace fs = std::filesystem;

Dataset load_dataset(const std::string& data_dir) {
    if (!fs::is_directory(data_dir)) throw io_error("data directory '" + data_dir + "' does not exist");
    std::vector<std::string> stems;
    for (const auto& entry : fs::directory_iterator(data_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".volhdr")
            stems.push_back(entry.path().stem().string());
    std::sort(stems.begin(), stems.end());
    if (stems.empty()) throw io_error("no volumes (*.volhdr) found under '" + data_dir + "'");

    Dataset ds;
    for (const auto& stem : stems) {
        Sample s;
        s.id = stem;
        s.volume = load_volume(data_dir + "/" + stem);
        const std::string lmk = data_dir + "/" + stem + ".lmk";
        if (!fs::exists(lmk)) throw io_error("missing landmark file '" + lmk + "'");
        s.landmarks = parse_landmarks(lmk);
        ds.push_back(std::move(s));
    }
    return ds;
}

Volume preprocess_volume(const Volume& v, const std::array<std::int64_t, 3>& target_shape,
                         bool zscore) {
    Volume out = (v.shape == target_shape) ? v : resample_trilinear(v, target_shape);
    if (zscore) out = zscore_normalize(out);
    return out;
}

Dataset preprocess_dataset(const Dataset& ds, const RunConfig& cfg) {
    Dataset out;
    out.reserve(ds.size());
    for (const auto& s : ds)
        out.push_back(Sample{s.id, preprocess_volume(s.volume, cfg.target_shape, cfg.zscore),
                             s.landmarks});
    return out;
}

void run_preprocess(const std::string& data_dir, const std::string& out_dir,
                    const std::array<std::int64_t, 3>& target_shape, bool zscore) {
    const Dataset ds = load_dataset(data_dir);
    fs::create_directories(out_dir);
    for (const auto& s : ds) {
        save_volume(preprocess_volume(s.volume, target_shape, zscore), out_dir + "/" + s.id);
        write_landmarks(s.landmarks, out_dir + "/" + s.id + ".lmk");
    }
}

namespace {

KvFile checkpoint_echo(const RunConfig& cfg) {
    KvFile extra;
    extra.set("version", kVersion);
    extra.set("preprocess.target_shape",
              join_ints({cfg.target_shape[0], cfg.target_shape[1], cfg.target_shape[2]}));
    extra.set("preprocess.zscore", cfg.zscore ? "true" : "false");
    for (const auto& e : cfg.train.to_kv().entries) extra.set(e.key, e.value);
    return extra;
}

void write_fold_manifest(const RunConfig& cfg, const TrainFoldResult& res, std::int64_t fold,
                         const std::string& fold_dir) {
    KvFile m;
    m.set("version", kVersion);
    m.set("fold", std::to_string(fold));
    m.set("seed", std::to_string(cfg.seed));
    m.set("best_checkpoint", "checkpoint.ckpt");
    m.set("best_update", std::to_string(res.best_update));
    m.set("best_val_rmse_mm", format_double(res.best_val_rmse_mm));
    m.set("initial_loss", format_double(res.initial_loss));
    m.set("final_loss", format_double(res.final_loss));
    m.set("wall_clock_sec", format_double(res.wall_clock_sec));
    for (const auto& e : cfg.to_kv().entries) m.set("config." + e.key, e.value);
    std::string defaulted;
    for (const auto& k : cfg.defaulted_keys) {
        if (!defaulted.empty()) defaulted += ' ';
        defaulted += k;
    }
    m.set("defaults_applied", defaulted);
    save_kv_file(m, fold_dir + "/manifest.txt");
}

} // namespace

TrainFoldResult run_train_fold(const RunConfig& cfg, const Dataset& preprocessed,
                               const FoldPlan& plan, std::int64_t fold) {
    TrainFoldResult res = train_fold(preprocessed, plan, fold, cfg.model, cfg.train, cfg.augment);

    const std::string fold_dir = cfg.out_dir + "/fold_" + std::to_string(fold);
    fs::create_directories(fold_dir);
    res.model.save_checkpoint(fold_dir + "/checkpoint.ckpt", checkpoint_echo(cfg));
    write_text_file(fold_dir + "/history.csv", res.history.to_csv());
    write_fold_manifest(cfg, res, fold, fold_dir);

    fs::create_directories(cfg.out_dir + "/predictions");
    for (std::int64_t id : plan.validation[static_cast<std::size_t>(fold)]) {
        const Sample& s = preprocessed[static_cast<std::size_t>(id)];
        write_landmarks(predict(res.model, s.volume), cfg.out_dir + "/predictions/" + s.id + ".lmk");
    }
    return res;
}

CrossValResult run_cross_validate(const RunConfig& cfg) {
    if (cfg.data_dir.empty() || cfg.out_dir.empty())
        throw parameter_error("cross-validate needs paths.data_dir and paths.out_dir");
    const Dataset raw = load_dataset(cfg.data_dir);
    const Dataset ds = preprocess_dataset(raw, cfg);
    const FoldPlan plan = make_folds(static_cast<std::int64_t>(ds.size()), cfg.folds, cfg.seed);

    for (std::int64_t fold = 0; fold < cfg.folds; ++fold) run_train_fold(cfg, ds, plan, fold);

    // Pool validation predictions (each sample is predicted exactly once).
    std::map<std::string, std::pair<LandmarkSet, LandmarkSet>> pooled; // id -> (pred, gt)
    for (const auto& s : ds) {
        const std::string pred_path = cfg.out_dir + "/predictions/" + s.id + ".lmk";
        pooled.emplace(s.id, std::make_pair(parse_landmarks(pred_path), s.landmarks));
    }

    CrossValResult out;
    std::vector<LandmarkSet> preds, gts;
    for (const auto& [id, pair] : pooled) {
        out.ids.push_back(id);
        preds.push_back(pair.first);
        gts.push_back(pair.second);
    }
    out.report = evaluate_predictions(out.ids, preds, gts, cfg.radii);
    emit_report(out.report, cfg.out_dir + "/report");
    return out;
}

LandmarkSet run_predict(const std::string& checkpoint_path, const std::string& volume_path,
                        const std::string& out_path) {
    LoadedModel loaded = Model::load_checkpoint(checkpoint_path);
    const Volume raw = load_volume(volume_path);

    std::array<std::int64_t, 3> target = raw.shape;
    bool zscore = true;
    if (const auto* v = loaded.echo.find("preprocess.target_shape")) {
        const auto s = parse_ints("preprocess.target_shape", *v, 3);
        target = {s[0], s[1], s[2]};
    }
    if (const auto* v = loaded.echo.find("preprocess.zscore"))
        zscore = parse_bool("preprocess.zscore", *v);

    const Volume prepared = preprocess_volume(raw, target, zscore);
    const LandmarkSet lm = predict(loaded.model, prepared);
    if (!out_path.empty()) write_landmarks(lm, out_path);
    return lm;
}

namespace {

std::vector<std::string> lmk_ids(const std::string& dir) {
    if (!fs::is_directory(dir)) throw io_error("directory '" + dir + "' does not exist");
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".lmk")
            ids.push_back(entry.path().stem().string());
    std::sort(ids.begin(), ids.end());
    return ids;
}

} // namespace

EvalReport run_evaluate(const std::string& pred_dir, const std::string& gt_dir,
                        const std::string& out_dir, const std::vector<double>& radii) {
    const auto pred_ids = lmk_ids(pred_dir);
    const auto gt_ids = lmk_ids(gt_dir);

    std::string missing;
    for (const auto& id : pred_ids)
        if (!std::binary_search(gt_ids.begin(), gt_ids.end(), id)) missing += " " + id + "(no annotation)";
    for (const auto& id : gt_ids)
        if (!std::binary_search(pred_ids.begin(), pred_ids.end(), id)) missing += " " + id + "(no prediction)";
    if (!missing.empty()) throw contract_error("prediction/annotation ids mismatch:" + missing);
    if (pred_ids.empty()) throw parameter_error("no .lmk files to evaluate");

    std::vector<LandmarkSet> preds, gts;
    for (const auto& id : pred_ids) {
        preds.push_back(parse_landmarks(pred_dir + "/" + id + ".lmk"));
        gts.push_back(parse_landmarks(gt_dir + "/" + id + ".lmk"));
    }
    const EvalReport report = evaluate_predictions(pred_ids, preds, gts, radii);
    if (!out_dir.empty()) emit_report(report, out_dir);
    return report;
}

} // namespace ceph3d
