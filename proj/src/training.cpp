#include "ceph3d/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "ceph3d/errors.hpp"

namespace ceph3d {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw parameter_error("train: learning_rate must be > 0");
    if (weight_decay < 0.0) throw parameter_error("train: weight_decay must be >= 0");
    if (total_updates < 1) throw parameter_error("train: total_updates must be >= 1");
    if (batch_size < 1) throw parameter_error("train: batch_size must be >= 1");
    if (eval_interval < 1) throw parameter_error("train: eval_interval must be >= 1");
    if (!(heatmap_sigma > 0.0)) throw parameter_error("train: heatmap_sigma must be > 0");
}

KvFile TrainConfig::to_kv(const std::string& prefix) const {
    KvFile kv;
    kv.set(prefix + "learning_rate", format_double(learning_rate));
    kv.set(prefix + "weight_decay", format_double(weight_decay));
    kv.set(prefix + "total_updates", std::to_string(total_updates));
    kv.set(prefix + "batch_size", std::to_string(batch_size));
    kv.set(prefix + "eval_interval", std::to_string(eval_interval));
    kv.set(prefix + "seed", std::to_string(seed));
    kv.set(prefix + "heatmap_sigma", format_double(heatmap_sigma));
    kv.set(prefix + "softargmax_pure_bce", softargmax_pure_bce ? "true" : "false");
    return kv;
}

TrainConfig TrainConfig::from_kv(const KvFile& kv, const std::string& prefix) {
    TrainConfig cfg;
    if (const auto* v = kv.find(prefix + "learning_rate"))
        cfg.learning_rate = parse_double(prefix + "learning_rate", *v);
    if (const auto* v = kv.find(prefix + "weight_decay"))
        cfg.weight_decay = parse_double(prefix + "weight_decay", *v);
    if (const auto* v = kv.find(prefix + "total_updates"))
        cfg.total_updates = parse_int(prefix + "total_updates", *v);
    if (const auto* v = kv.find(prefix + "batch_size"))
        cfg.batch_size = parse_int(prefix + "batch_size", *v);
    if (const auto* v = kv.find(prefix + "eval_interval"))
        cfg.eval_interval = parse_int(prefix + "eval_interval", *v);
    if (const auto* v = kv.find(prefix + "seed"))
        cfg.seed = static_cast<std::uint64_t>(parse_int(prefix + "seed", *v));
    if (const auto* v = kv.find(prefix + "heatmap_sigma"))
        cfg.heatmap_sigma = parse_double(prefix + "heatmap_sigma", *v);
    if (const auto* v = kv.find(prefix + "softargmax_pure_bce"))
        cfg.softargmax_pure_bce = parse_bool(prefix + "softargmax_pure_bce", *v);
    cfg.validate();
    return cfg;
}

FoldPlan make_folds(std::int64_t n, std::int64_t k, std::uint64_t seed) {
    if (k <= 1 || k > n) throw parameter_error("make_folds requires 1 < k <= n");
    std::vector<std::int64_t> ids(static_cast<std::size_t>(n));
    std::iota(ids.begin(), ids.end(), 0);

    // Fisher-Yates with the shared generator, then contiguous cut.
    Rng rng(derive_seed(seed, "folds"));
    for (std::int64_t i = n - 1; i > 0; --i) {
        const std::int64_t j = uniform_int(rng, 0, i);
        std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
    }

    FoldPlan plan;
    plan.n = n;
    std::int64_t start = 0;
    for (std::int64_t f = 0; f < k; ++f) {
        const std::int64_t size = n / k + (f < n % k ? 1 : 0);
        plan.validation.emplace_back(ids.begin() + start, ids.begin() + start + size);
        start += size;
    }
    return plan;
}

std::vector<std::int64_t> FoldPlan::train_ids(std::int64_t fold) const {
    const auto& val = validation[static_cast<std::size_t>(fold)];
    std::vector<std::int64_t> out;
    for (std::int64_t i = 0; i < n; ++i)
        if (std::find(val.begin(), val.end(), i) == val.end()) out.push_back(i);
    return out;
}

std::string RunHistory::to_csv() const {
    std::string out = "update,train_loss,val_rmse_mm\n";
    for (const auto& e : entries)
        out += std::to_string(e.update) + "," + format_double(e.train_loss) + "," +
               format_double(e.val_rmse_mm) + "\n";
    return out;
}

namespace {

nn::Tensor batch_tensor(const std::vector<const Sample*>& batch) {
    const auto& s0 = batch.front()->volume;
    const std::int64_t nx = s0.shape[0], ny = s0.shape[1], nz = s0.shape[2];
    nn::Tensor t({static_cast<std::int64_t>(batch.size()), 1, nz, ny, nx});
    double* dst = t.data();
    for (const Sample* s : batch) {
        if (s->volume.shape != s0.shape)
            throw contract_error("batched samples must share the working grid");
        for (std::int64_t p = 0; p < s->volume.num_voxels(); ++p)
            *dst++ = static_cast<double>(s->volume.data[static_cast<std::size_t>(p)]);
    }
    return t;
}

std::vector<VoxelCoord> landmark_voxels(const Sample& s) {
    std::vector<VoxelCoord> pts;
    for (const auto& [name, p] : s.landmarks.entries) pts.push_back(world_to_voxel(s.volume, p));
    return pts;
}

} // namespace

LossTargets make_targets(ModelKind kind, const std::vector<const Sample*>& batch, double sigma) {
    const auto& shape = batch.front()->volume.shape;
    const std::int64_t L = static_cast<std::int64_t>(batch.front()->landmarks.size());
    LossTargets t;

    if (kind == ModelKind::direct || kind == ModelKind::softargmax) {
        nn::Tensor coords({static_cast<std::int64_t>(batch.size()), L, 3});
        double* dst = coords.data();
        for (const Sample* s : batch)
            for (const auto& vc : landmark_voxels(*s)) {
                *dst++ = vc.i / static_cast<double>(std::max<std::int64_t>(shape[0] - 1, 1));
                *dst++ = vc.j / static_cast<double>(std::max<std::int64_t>(shape[1] - 1, 1));
                *dst++ = vc.k / static_cast<double>(std::max<std::int64_t>(shape[2] - 1, 1));
            }
        t.coord_target = nn::make_input(std::move(coords));
    }
    if (kind == ModelKind::hourglass || kind == ModelKind::softargmax) {
        nn::Tensor hm({static_cast<std::int64_t>(batch.size()), L, shape[2], shape[1], shape[0]});
        double* dst = hm.data();
        for (const Sample* s : batch) {
            const HeatmapStack target = gaussian_heatmap_target(landmark_voxels(*s), shape, sigma);
            std::copy(target.data.begin(), target.data.end(), dst);
            dst += target.data.size();
        }
        t.heatmap_target = nn::make_input(std::move(hm));
    }
    return t;
}

nn::Var compute_loss(ModelKind kind, const ModelOutput& out, const LossTargets& targets,
                     bool softargmax_pure_bce) {
    switch (kind) {
        case ModelKind::direct: {
            if (!out.coordinates || !targets.coord_target)
                throw contract_error("direct loss needs coordinate output and target");
            return nn::mse_mean(out.coordinates, targets.coord_target);
        }
        case ModelKind::hourglass: {
            if (out.aux_heatmap_logits.empty() || !targets.heatmap_target)
                throw contract_error("hourglass loss needs per-stack heatmaps and a target");
            nn::Var sum;
            for (const auto& logits : out.aux_heatmap_logits) {
                nn::Var term = nn::bce_with_logits_mean(logits, targets.heatmap_target);
                sum = sum ? nn::add(sum, term) : term;
            }
            return nn::scale(sum, 1.0 / static_cast<double>(out.aux_heatmap_logits.size()));
        }
        case ModelKind::softargmax: {
            if (!out.heatmap_logits || !targets.heatmap_target)
                throw contract_error("softargmax loss needs the backing heatmap and a target");
            nn::Var loss = nn::bce_with_logits_mean(out.heatmap_logits, targets.heatmap_target);
            if (softargmax_pure_bce) return loss;
            if (!out.coordinates || !targets.coord_target)
                throw contract_error("softargmax loss needs coordinate output and target");
            loss = nn::add(loss, nn::mse_mean(out.coordinates, targets.coord_target));
            for (const auto& aux : out.aux_coordinates)
                loss = nn::add(loss, nn::mse_mean(aux, targets.coord_target));
            return loss;
        }
    }
    throw contract_error("unreachable loss kind");
}

LandmarkSet predict(const Model& model, const Volume& v) {
    v.validate();
    Sample s{"", v, {}};
    const nn::Tensor input = batch_tensor({&s});
    const ModelOutput out = model.forward(input);
    const std::int64_t L = model.config().num_landmarks;
    const auto& names = canonical_landmark_names();
    if (L != static_cast<std::int64_t>(names.size()))
        throw contract_error("predict expects the four canonical landmarks");

    LandmarkSet lm;
    const std::int64_t nx = v.shape[0], ny = v.shape[1], nz = v.shape[2];

    if (model.config().kind == ModelKind::hourglass) {
        const nn::Tensor& hm = out.heatmaps->value; // (1,L,nz,ny,nx)
        const std::int64_t S = nz * ny * nx;
        for (std::int64_t l = 0; l < L; ++l) {
            const double* ch = hm.data() + l * S;
            std::int64_t best = 0;
            for (std::int64_t p = 1; p < S; ++p)
                if (ch[p] > ch[best]) best = p;
            const std::int64_t i = best % nx;
            const std::int64_t j = (best / nx) % ny;
            const std::int64_t k = best / (nx * ny);
            lm.entries.emplace_back(names[static_cast<std::size_t>(l)],
                                    voxel_to_world(v, {static_cast<double>(i), static_cast<double>(j),
                                                       static_cast<double>(k)}));
        }
        return lm;
    }

    if (model.config().kind == ModelKind::softargmax) {
        for (std::int64_t l = 0; l < L; ++l)
            if (out.rectified_mass[static_cast<std::size_t>(l)] < 1e-12)
                throw degenerate_heatmap_error("softargmax channel " + std::to_string(l) +
                                               " has no positive heatmap mass");
    }

    const nn::Tensor& coords = out.coordinates->value; // (1,L,3) normalized
    for (std::int64_t l = 0; l < L; ++l) {
        const double cx = coords.v[static_cast<std::size_t>(3 * l + 0)] * static_cast<double>(nx - 1);
        const double cy = coords.v[static_cast<std::size_t>(3 * l + 1)] * static_cast<double>(ny - 1);
        const double cz = coords.v[static_cast<std::size_t>(3 * l + 2)] * static_cast<double>(nz - 1);
        lm.entries.emplace_back(names[static_cast<std::size_t>(l)], voxel_to_world(v, {cx, cy, cz}));
    }
    return lm;
}

namespace {

double validation_rmse_mm(const Model& model, const Dataset& dataset,
                          const std::vector<std::int64_t>& val_ids) {
    const std::size_t L = canonical_landmark_names().size();
    std::vector<double> sq(L, 0.0);
    for (std::int64_t id : val_ids) {
        const Sample& s = dataset[static_cast<std::size_t>(id)];
        const LandmarkSet pred = predict(model, s.volume);
        for (std::size_t l = 0; l < L; ++l) {
            const auto& a = pred.point(l);
            const auto& b = s.landmarks.point(l);
            const double d2 = (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) +
                              (a.z - b.z) * (a.z - b.z);
            sq[l] += d2;
        }
    }
    double mean_rmse = 0.0;
    for (std::size_t l = 0; l < L; ++l)
        mean_rmse += std::sqrt(sq[l] / static_cast<double>(val_ids.size()));
    return mean_rmse / static_cast<double>(L);
}

} // namespace

TrainFoldResult train_fold(const Dataset& dataset, const FoldPlan& plan, std::int64_t fold,
                           const ModelConfig& mcfg, const TrainConfig& tcfg,
                           const AugmentConfig& acfg) {
    tcfg.validate();
    mcfg.validate();
    acfg.validate();
    if (fold < 0 || fold >= static_cast<std::int64_t>(plan.validation.size()))
        throw parameter_error("train_fold: fold index out of range");
    if (plan.n != static_cast<std::int64_t>(dataset.size()))
        throw contract_error("train_fold: fold plan does not match dataset size");

    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<std::int64_t> train = plan.train_ids(fold);
    const std::vector<std::int64_t>& val = plan.validation[static_cast<std::size_t>(fold)];
    if (train.empty()) throw parameter_error("train_fold: empty training split");

    TrainFoldResult res;
    res.model = Model::build(mcfg, derive_seed(tcfg.seed, "model-init", fold));
    nn::Adam adam(res.model.parameters(), tcfg.learning_rate, tcfg.weight_decay);

    // Epoch-shuffled sample stream.
    std::vector<std::int64_t> order = train;
    std::size_t cursor = order.size();
    std::int64_t epoch = -1;
    auto next_id = [&]() {
        if (cursor == order.size()) {
            ++epoch;
            Rng rng(derive_seed(tcfg.seed, "order", fold, epoch));
            for (std::size_t i = order.size() - 1; i > 0; --i)
                std::swap(order[i], order[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i)))]);
            cursor = 0;
        }
        return order[cursor++];
    };

    std::vector<nn::Tensor> best_params;
    for (std::int64_t update = 1; update <= tcfg.total_updates; ++update) {
        std::vector<Sample> augmented;
        augmented.reserve(static_cast<std::size_t>(tcfg.batch_size));
        for (std::int64_t b = 0; b < tcfg.batch_size; ++b) {
            const Sample& src = dataset[static_cast<std::size_t>(next_id())];
            Rng rng(derive_seed(tcfg.seed, "augment", fold, update, b));
            Volume v = apply_photometric(src.volume, acfg, rng);
            auto [gv, glm] = apply_geometric(v, src.landmarks, acfg, rng);
            gv = random_erase(gv, acfg, rng);
            augmented.push_back(Sample{src.id, std::move(gv), std::move(glm)});
        }
        std::vector<const Sample*> batch;
        for (const auto& s : augmented) batch.push_back(&s);

        const LossTargets targets = make_targets(mcfg.kind, batch, tcfg.heatmap_sigma);
        const ModelOutput out = res.model.forward(batch_tensor(batch));
        nn::Var loss = compute_loss(mcfg.kind, out, targets, tcfg.softargmax_pure_bce);
        const double loss_value = loss->value.v[0];
        if (!std::isfinite(loss_value))
            throw divergence_error("non-finite training loss at update " + std::to_string(update));
        if (update == 1) res.initial_loss = loss_value;
        res.final_loss = loss_value;

        adam.zero_grad();
        nn::backward(loss);
        adam.step();

        if (update % tcfg.eval_interval == 0) {
            const double val_rmse = validation_rmse_mm(res.model, dataset, val);
            res.history.entries.push_back({update, loss_value, val_rmse});
            if (val_rmse < res.best_val_rmse_mm) {
                res.best_val_rmse_mm = val_rmse;
                res.best_update = update;
                best_params.clear();
                for (const auto& p : res.model.parameters()) best_params.push_back(p->value);
            }
        }
    }

    // Restore the best evaluation's parameters.
    if (!best_params.empty()) {
        const auto& params = res.model.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_params[i];
    }
    res.wall_clock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

} // namespace ceph3d
