#include "ceph3d/landmarks.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "ceph3d/common.hpp"
#include "ceph3d/errors.hpp"

namespace ceph3d {

const WorldPoint* LandmarkSet::find(const std::string& name) const {
    for (const auto& [n, p] : entries)
        if (n == name) return &p;
    return nullptr;
}

void LandmarkSet::validate(bool cephalometric) const {
    std::set<std::string> seen;
    for (const auto& [n, p] : entries) {
        if (!seen.insert(n).second) throw duplication_error("duplicate landmark name '" + n + "'");
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
            throw data_error("landmark '" + n + "' has a non-finite coordinate");
    }
    if (cephalometric) {
        const auto& canon = canonical_landmark_names();
        for (const auto& name : canon)
            if (!seen.count(name)) throw completeness_error("missing canonical landmark '" + name + "'");
        if (entries.size() != canon.size())
            throw contract_error("cephalometric set must hold exactly the four canonical landmarks");
        for (std::size_t i = 0; i < canon.size(); ++i)
            if (entries[i].first != canon[i])
                throw contract_error("cephalometric set out of canonical order at index " + std::to_string(i));
    }
}

namespace {

LandmarkSet canonicalize(std::vector<std::pair<std::string, WorldPoint>> raw, const std::string& origin) {
    std::set<std::string> seen;
    for (const auto& [n, p] : raw)
        if (!seen.insert(n).second) throw duplication_error(origin + ": duplicate landmark '" + n + "'");

    LandmarkSet lm;
    for (const auto& name : canonical_landmark_names()) {
        const auto it = std::find_if(raw.begin(), raw.end(), [&](const auto& e) { return e.first == name; });
        if (it == raw.end()) throw completeness_error(origin + ": missing canonical landmark '" + name + "'");
        lm.entries.push_back(*it);
    }
    if (raw.size() != canonical_landmark_names().size())
        throw format_error(origin + ": expected exactly the four canonical landmarks, got " +
                           std::to_string(raw.size()) + " records");
    lm.validate();
    return lm;
}

// Extract the text of the first <tag>...</tag> inside `body`, or empty.
std::string xml_tag_text(const std::string& body, const std::string& tag) {
    const std::string open = "<" + tag + ">";
    const std::string close = "</" + tag + ">";
    const auto b = body.find(open);
    if (b == std::string::npos) return {};
    const auto e = body.find(close, b);
    if (e == std::string::npos) return {};
    return body.substr(b + open.size(), e - b - open.size());
}

// Minimal reader for the MITK point-set subset: <point> elements carrying
// <id>, <x>, <y>, <z>. Ids 0..3 map to the canonical order.
LandmarkSet parse_mitk_pointset(const std::string& text, const std::string& origin) {
    std::vector<std::pair<std::string, WorldPoint>> raw;
    std::size_t pos = 0;
    while (true) {
        const auto b = text.find("<point>", pos);
        if (b == std::string::npos) break;
        const auto e = text.find("</point>", b);
        if (e == std::string::npos) throw format_error(origin + ": unterminated <point> element");
        const std::string body = text.substr(b, e - b);
        pos = e + 8;

        const std::string id_s = xml_tag_text(body, "id");
        const std::string x_s = xml_tag_text(body, "x");
        const std::string y_s = xml_tag_text(body, "y");
        const std::string z_s = xml_tag_text(body, "z");
        if (id_s.empty() || x_s.empty() || y_s.empty() || z_s.empty())
            throw format_error(origin + ": <point> element missing id/x/y/z");
        const std::int64_t id = parse_int("id", id_s);
        if (id < 0 || id > 3)
            throw format_error(origin + ": point id " + std::to_string(id) + " outside the 0-3 mapping");
        WorldPoint p{parse_double("x", x_s), parse_double("y", y_s), parse_double("z", z_s)};
        raw.emplace_back(canonical_landmark_names()[static_cast<std::size_t>(id)], p);
    }
    if (raw.empty()) throw format_error(origin + ": no <point> elements found");
    return canonicalize(std::move(raw), origin);
}

} // namespace

LandmarkSet parse_landmarks(const std::string& path) {
    const std::string text = read_text_file(path);
    if (text.find("<point>") != std::string::npos || text.find("<point_set>") != std::string::npos)
        return parse_mitk_pointset(text, path);

    std::vector<std::pair<std::string, WorldPoint>> raw;
    std::istringstream iss(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(iss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string name;
        if (!(ls >> name)) continue;
        double x, y, z;
        if (!(ls >> x >> y >> z))
            throw format_error(path + ":" + std::to_string(lineno) +
                               ": expected 'name x y z', got '" + line + "'");
        std::string extra;
        if (ls >> extra)
            throw format_error(path + ":" + std::to_string(lineno) + ": trailing token '" + extra + "'");
        raw.emplace_back(name, WorldPoint{x, y, z});
    }
    if (raw.empty()) throw format_error(path + ": no landmark records found");
    return canonicalize(std::move(raw), path);
}

void write_landmarks(const LandmarkSet& lm, const std::string& path) {
    lm.validate();
    std::string out;
    for (const auto& [name, p] : lm.entries) {
        out += name;
        out += ' ';
        out += format_double(p.x);
        out += ' ';
        out += format_double(p.y);
        out += ' ';
        out += format_double(p.z);
        out += '\n';
    }
    write_text_file(path, out);
}

HeatmapStack gaussian_heatmap_target(const std::vector<VoxelCoord>& points,
                                     const std::array<std::int64_t, 3>& shape,
                                     double sigma) {
    if (!(sigma > 0.0)) throw parameter_error("gaussian target sigma must be > 0");
    for (const auto& p : points)
        if (!std::isfinite(p.i) || !std::isfinite(p.j) || !std::isfinite(p.k))
            throw data_error("gaussian target point is not finite");

    HeatmapStack hm;
    hm.channels = static_cast<std::int64_t>(points.size());
    hm.shape = shape;
    hm.data.assign(static_cast<std::size_t>(hm.channels * hm.voxels_per_channel()), 0.0);

    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (std::int64_t l = 0; l < hm.channels; ++l) {
        const VoxelCoord p = points[static_cast<std::size_t>(l)];
        double* ch = hm.data.data() + l * hm.voxels_per_channel();
        for (std::int64_t k = 0; k < shape[2]; ++k) {
            const double dk = static_cast<double>(k) - p.k;
            for (std::int64_t j = 0; j < shape[1]; ++j) {
                const double dj = static_cast<double>(j) - p.j;
                const double djk = dj * dj + dk * dk;
                double* row = ch + (k * shape[1] + j) * shape[0];
                for (std::int64_t i = 0; i < shape[0]; ++i) {
                    const double di = static_cast<double>(i) - p.i;
                    row[i] = std::exp(-(di * di + djk) * inv2s2);
                }
            }
        }
    }
    return hm;
}

std::array<double, 2> lateral_project(const WorldPoint& p) { return {p.y, p.z}; }

} // namespace ceph3d
