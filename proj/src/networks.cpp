#include "ceph3d/networks.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include "ceph3d/errors.hpp"

namespace ceph3d {

std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::direct: return "direct";
        case ModelKind::hourglass: return "hourglass";
        case ModelKind::softargmax: return "softargmax";
    }
    return "?";
}
std::string to_string(BlockKind k) { return k == BlockKind::plain ? "plain" : "resnext"; }
std::string to_string(NormKind k) { return k == NormKind::instance ? "instance" : "group"; }

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "direct") return ModelKind::direct;
    if (s == "hourglass") return ModelKind::hourglass;
    if (s == "softargmax") return ModelKind::softargmax;
    throw format_error("unknown model kind '" + s + "' (direct|hourglass|softargmax)");
}
BlockKind block_kind_from_string(const std::string& s) {
    if (s == "plain") return BlockKind::plain;
    if (s == "resnext") return BlockKind::resnext;
    throw format_error("unknown block kind '" + s + "' (plain|resnext)");
}
NormKind norm_kind_from_string(const std::string& s) {
    if (s == "instance") return NormKind::instance;
    if (s == "group") return NormKind::group;
    throw format_error("unknown norm kind '" + s + "' (instance|group)");
}

void ModelConfig::validate() const {
    if (num_landmarks < 1) throw construction_error("model config: num_landmarks must be >= 1");
    if (base_width < 1) throw construction_error("model config: base_width must be >= 1");
    if (num_stages < 1) throw construction_error("model config: num_stages must be >= 1");
    if (groups < 1) throw construction_error("model config: groups must be >= 1");
    if (kind == ModelKind::hourglass && num_stacks < 1)
        throw construction_error("model config: hourglass kind requires num_stacks >= 1");
    if (kind == ModelKind::softargmax && num_stacks != 1)
        throw construction_error("model config: softargmax kind requires num_stacks == 1");
    const std::int64_t div = std::int64_t{1} << num_stages;
    for (int d = 0; d < 3; ++d) {
        if (input_shape[d] < div || input_shape[d] % div != 0)
            throw construction_error("model config: input dim " + std::to_string(input_shape[d]) +
                                     " is not divisible by 2^num_stages = " + std::to_string(div));
    }
    if (kind != ModelKind::direct) {
        if (block == BlockKind::resnext && base_width % groups != 0)
            throw construction_error("model config: base_width must divide the ResNeXt cardinality");
        if (norm == NormKind::group && base_width % groups != 0)
            throw construction_error("model config: base_width must divide the group-norm groups");
    }
}

KvFile ModelConfig::to_kv(const std::string& prefix) const {
    KvFile kv;
    kv.set(prefix + "kind", to_string(kind));
    kv.set(prefix + "base_width", std::to_string(base_width));
    kv.set(prefix + "num_stages", std::to_string(num_stages));
    kv.set(prefix + "num_stacks", std::to_string(num_stacks));
    kv.set(prefix + "block", to_string(block));
    kv.set(prefix + "norm", to_string(norm));
    kv.set(prefix + "groups", std::to_string(groups));
    kv.set(prefix + "num_landmarks", std::to_string(num_landmarks));
    kv.set(prefix + "input_shape", join_ints({input_shape[0], input_shape[1], input_shape[2]}));
    return kv;
}

ModelConfig ModelConfig::from_kv(const KvFile& kv, const std::string& prefix) {
    ModelConfig cfg;
    cfg.kind = model_kind_from_string(kv.get(prefix + "kind"));
    cfg.base_width = parse_int(prefix + "base_width", kv.get(prefix + "base_width"));
    cfg.num_stages = parse_int(prefix + "num_stages", kv.get(prefix + "num_stages"));
    cfg.num_stacks = parse_int(prefix + "num_stacks", kv.get(prefix + "num_stacks"));
    cfg.block = block_kind_from_string(kv.get(prefix + "block"));
    cfg.norm = norm_kind_from_string(kv.get(prefix + "norm"));
    cfg.groups = parse_int(prefix + "groups", kv.get(prefix + "groups"));
    cfg.num_landmarks = parse_int(prefix + "num_landmarks", kv.get(prefix + "num_landmarks"));
    const auto is = parse_ints(prefix + "input_shape", kv.get(prefix + "input_shape"), 3);
    cfg.input_shape = {is[0], is[1], is[2]};
    cfg.validate();
    return cfg;
}

// ---- Parameter registry ---------------------------------------------------------

namespace {

constexpr std::int64_t kFcHidden = 256;

enum class Init { conv_uniform, zeros, ones };

} // namespace

namespace detail {

struct ParamStore {
    std::unordered_map<std::string, nn::Var> by_name;
    std::vector<nn::Var> ordered;
    bool frozen = true;
    Rng rng;
};

} // namespace detail

namespace {

using detail::ParamStore;

nn::Var get_or_create(ParamStore& st, const std::string& name,
                      const std::vector<std::int64_t>& shape, Init init) {
    auto it = st.by_name.find(name);
    if (it != st.by_name.end()) {
        if (it->second->value.shape != shape)
            throw contract_error("parameter '" + name + "' exists with a different shape");
        return it->second;
    }
    if (st.frozen) throw contract_error("parameter '" + name + "' missing from frozen model");

    nn::Tensor t(shape);
    switch (init) {
        case Init::zeros:
            break;
        case Init::ones:
            std::fill(t.v.begin(), t.v.end(), 1.0);
            break;
        case Init::conv_uniform: {
            // fan-in scaled uniform; fan_in = product of all dims but the first
            std::int64_t fan_in = 1;
            for (std::size_t d = 1; d < shape.size(); ++d) fan_in *= shape[d];
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (auto& v : t.v) v = uniform_in(st.rng, -bound, bound);
            break;
        }
    }
    nn::Var p = nn::make_param(std::move(t), name);
    st.by_name.emplace(name, p);
    st.ordered.push_back(p);
    return p;
}

} // namespace

nn::Var Model::norm(const std::string& prefix, const nn::Var& x) const {
    auto& st = *store_;
    const std::int64_t C = x->value.shape[1];
    nn::Var g = get_or_create(st, prefix + ".norm_scale", {C}, Init::ones);
    nn::Var b = get_or_create(st, prefix + ".norm_shift", {C}, Init::zeros);
    if (cfg_.norm == NormKind::instance) return nn::instance_norm(x, g, b);
    return nn::group_norm(x, g, b, static_cast<int>(cfg_.groups));
}

namespace {

nn::Var conv_layer(ParamStore& st, const std::string& prefix, const nn::Var& x,
                   std::int64_t cout, int k, int stride, int groups) {
    const std::int64_t cin = x->value.shape[1];
    nn::Var w = get_or_create(st, prefix + ".w", {cout, cin / groups, k, k, k}, Init::conv_uniform);
    nn::Var b = get_or_create(st, prefix + ".b", {cout}, Init::zeros);
    return nn::conv3d(x, w, b, stride, groups);
}

} // namespace

nn::Var Model::block(const std::string& prefix, const nn::Var& x) const {
    auto& st = *store_;
    const std::int64_t F = x->value.shape[1];
    if (cfg_.block == BlockKind::plain) {
        nn::Var t = conv_layer(st, prefix + ".conv", x, F, 3, 1, 1);
        return nn::relu(norm(prefix + ".conv", t));
    }
    // ResNeXt: 1x1 -> grouped 3x3 -> 1x1, residual add
    nn::Var t = conv_layer(st, prefix + ".reduce", x, F, 1, 1, 1);
    t = nn::relu(norm(prefix + ".reduce", t));
    t = conv_layer(st, prefix + ".gconv", t, F, 3, 1, static_cast<int>(cfg_.groups));
    t = nn::relu(norm(prefix + ".gconv", t));
    t = conv_layer(st, prefix + ".expand", t, F, 1, 1, 1);
    t = norm(prefix + ".expand", t);
    return nn::relu(nn::add(x, t));
}

Model::HourglassOut Model::hourglass_core(const std::string& prefix, const nn::Var& x) const {
    auto& st = *store_;
    const std::int64_t F = cfg_.base_width;

    std::vector<nn::Var> skips; // skips[i] holds level i+1 (sub-full resolutions)
    nn::Var cur = x;
    for (std::int64_t s = 1; s <= cfg_.num_stages; ++s) {
        cur = conv_layer(st, prefix + ".down" + std::to_string(s), cur, F, 3, 2, 1);
        cur = nn::relu(norm(prefix + ".down" + std::to_string(s), cur));
        cur = block(prefix + ".enc" + std::to_string(s), cur);
        if (s < cfg_.num_stages) skips.push_back(cur);
    }

    HourglassOut out;
    for (std::int64_t s = cfg_.num_stages; s >= 1; --s) {
        cur = nn::upsample_nearest2(cur);
        cur = conv_layer(st, prefix + ".up" + std::to_string(s), cur, F, 1, 1, 1);
        cur = nn::relu(norm(prefix + ".up" + std::to_string(s), cur));
        const std::int64_t level = s - 1;
        cur = nn::add(cur, level == 0 ? x : skips[static_cast<std::size_t>(level - 1)]);
        if (level >= 1) {
            cur = block(prefix + ".dec" + std::to_string(level), cur);
            out.decoder_levels.push_back(cur);
        }
    }
    out.features = cur;
    return out;
}

ModelOutput Model::forward_direct(const nn::Var& input) const {
    auto& st = *store_;
    nn::Var cur = input;
    for (std::int64_t s = 0; s < cfg_.num_stages; ++s) {
        const std::int64_t w_s = cfg_.base_width << s;
        cur = conv_layer(st, "stage" + std::to_string(s) + ".conv", cur, w_s, 3, 1, 1);
        cur = nn::relu(norm("stage" + std::to_string(s) + ".conv", cur));
        cur = conv_layer(st, "stage" + std::to_string(s) + ".down", cur, cfg_.base_width << (s + 1), 3, 2, 1);
        cur = nn::relu(norm("stage" + std::to_string(s) + ".down", cur));
    }
    nn::Var feat = nn::global_avg_pool(cur);
    const std::int64_t fin = feat->value.shape[1];
    nn::Var w1 = get_or_create(st, "fc1.w", {kFcHidden, fin}, Init::conv_uniform);
    nn::Var b1 = get_or_create(st, "fc1.b", {kFcHidden}, Init::zeros);
    nn::Var h = nn::relu(nn::linear(feat, w1, b1));
    nn::Var w2 = get_or_create(st, "fc2.w", {cfg_.num_landmarks * 3, kFcHidden}, Init::conv_uniform);
    nn::Var b2 = get_or_create(st, "fc2.b", {cfg_.num_landmarks * 3}, Init::zeros);
    nn::Var outv = nn::linear(h, w2, b2);

    ModelOutput out;
    out.coordinates = nn::reshape(outv, {input->value.shape[0], cfg_.num_landmarks, 3});
    return out;
}

ModelOutput Model::forward_hourglass(const nn::Var& input) const {
    auto& st = *store_;
    const std::int64_t F = cfg_.base_width;
    nn::Var x = conv_layer(st, "stem", input, F, 3, 1, 1);
    x = nn::relu(norm("stem", x));

    ModelOutput out;
    for (std::int64_t stk = 1; stk <= cfg_.num_stacks; ++stk) {
        const std::string prefix = "hg" + std::to_string(stk);
        HourglassOut hg = hourglass_core(prefix, x);
        nn::Var logits = conv_layer(st, prefix + ".head", hg.features, cfg_.num_landmarks, 1, 1, 1);
        out.aux_heatmap_logits.push_back(logits);
        out.aux_heatmaps.push_back(nn::sigmoid(logits));
        if (stk < cfg_.num_stacks)
            x = nn::add(hg.features, conv_layer(st, prefix + ".remap", logits, F, 1, 1, 1));
    }
    out.heatmap_logits = out.aux_heatmap_logits.back();
    out.heatmaps = out.aux_heatmaps.back();
    return out;
}

ModelOutput Model::forward_softargmax(const nn::Var& input) const {
    auto& st = *store_;
    const std::int64_t F = cfg_.base_width;
    nn::Var x = conv_layer(st, "stem", input, F, 3, 1, 1);
    x = nn::relu(norm("stem", x));

    HourglassOut hg = hourglass_core("hg1", x);
    nn::Var raw = conv_layer(st, "hg1.head", hg.features, cfg_.num_landmarks, 1, 1, 1);

    ModelOutput out;
    out.coordinates = nn::dsnt_coords(raw);
    out.heatmap_logits = raw;
    out.heatmaps = nn::sigmoid(raw);
    out.rectified_mass = nn::dsnt_rectified_mass(raw->value);
    for (std::size_t i = 0; i < hg.decoder_levels.size(); ++i) {
        nn::Var araw = conv_layer(st, "hg1.aux" + std::to_string(i), hg.decoder_levels[i],
                                  cfg_.num_landmarks, 1, 1, 1);
        out.aux_coordinates.push_back(nn::dsnt_coords(araw));
    }
    return out;
}

ModelOutput Model::forward(const nn::Tensor& batch) const {
    if (batch.shape.size() != 5)
        throw shape_error("forward expects rank-5 (N,1,nz,ny,nx) input, got rank " +
                          std::to_string(batch.shape.size()));
    if (batch.shape[0] < 1) throw shape_error("forward batch size must be >= 1");
    if (batch.shape[1] != 1)
        throw shape_error("forward expects 1 input channel, got " + std::to_string(batch.shape[1]));
    const std::int64_t div = std::int64_t{1} << cfg_.num_stages;
    for (int d = 0; d < 3; ++d) {
        const std::int64_t dim = batch.shape[static_cast<std::size_t>(2 + d)];
        if (dim < div || dim % div != 0)
            throw shape_error("forward spatial dim " + std::to_string(dim) +
                              " must be a positive multiple of 2^num_stages = " + std::to_string(div));
    }

    nn::Var input = nn::make_input(batch);
    switch (cfg_.kind) {
        case ModelKind::direct: return forward_direct(input);
        case ModelKind::hourglass: return forward_hourglass(input);
        case ModelKind::softargmax: return forward_softargmax(input);
    }
    throw contract_error("unreachable model kind");
}

Model Model::build(const ModelConfig& cfg, std::uint64_t init_seed) {
    cfg.validate();
    Model m;
    m.cfg_ = cfg;
    m.store_ = std::make_shared<ParamStore>();
    auto& st = *m.store_;
    st.frozen = false;
    st.rng.seed(derive_seed(init_seed, "model-init"));

    // Prime the parameter registry with one forward pass on the smallest
    // valid input; parameter shapes depend only on channel counts.
    const std::int64_t s = std::int64_t{1} << cfg.num_stages;
    nn::Tensor probe({1, 1, s, s, s});
    (void)m.forward(probe);
    st.frozen = true;
    return m;
}

const std::vector<nn::Var>& Model::parameters() const { return store_->ordered; }

std::int64_t Model::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : store_->ordered) n += p->value.numel();
    return n;
}

// ---- Checkpoint I/O -------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', '3', 'D', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

} // namespace

void Model::save_checkpoint(const std::string& path, const KvFile& extra) const {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot open checkpoint '" + path + "' for writing");

    KvFile echo = cfg_.to_kv();
    for (const auto& e : extra.entries) echo.set(e.key, e.value);
    const std::string echo_text = render_kv(echo);

    os.write(kMagic, 8);
    write_u64(os, echo_text.size());
    os.write(echo_text.data(), static_cast<std::streamsize>(echo_text.size()));
    write_u64(os, store_->ordered.size());
    for (const auto& p : store_->ordered) {
        write_u64(os, p->name.size());
        os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        write_u64(os, p->value.shape.size());
        for (auto d : p->value.shape) write_u64(os, static_cast<std::uint64_t>(d));
        os.write(reinterpret_cast<const char*>(p->value.data()),
                 static_cast<std::streamsize>(p->value.numel() * 8));
    }
    if (!os) throw io_error("write to checkpoint '" + path + "' failed");
}

LoadedModel Model::load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open checkpoint '" + path + "'");
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw format_error("'" + path + "' is not a checkpoint file");

    const std::uint64_t echo_len = read_u64(is);
    std::string echo_text(echo_len, '\0');
    is.read(echo_text.data(), static_cast<std::streamsize>(echo_len));
    const KvFile echo = parse_kv_text(echo_text, path);

    Model m;
    m.cfg_ = ModelConfig::from_kv(echo);
    m.store_ = std::make_shared<ParamStore>();
    auto& st = *m.store_;
    st.frozen = false;

    const std::uint64_t nparams = read_u64(is);
    for (std::uint64_t i = 0; i < nparams; ++i) {
        const std::uint64_t name_len = read_u64(is);
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        const std::uint64_t ndim = read_u64(is);
        std::vector<std::int64_t> shape(ndim);
        for (auto& d : shape) d = static_cast<std::int64_t>(read_u64(is));
        nn::Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 8));
        if (!is) throw format_error("checkpoint '" + path + "' truncated at parameter '" + name + "'");
        nn::Var p = nn::make_param(std::move(t), name);
        st.by_name.emplace(name, p);
        st.ordered.push_back(p);
    }
    st.frozen = true;
    return LoadedModel{std::move(m), echo};
}

} // namespace ceph3d
