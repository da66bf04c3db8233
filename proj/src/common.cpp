#include "ceph3d/common.hpp"

#include <cctype>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ceph3d/errors.hpp"

namespace ceph3d {

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream iss(s);
    std::string tok;
    while (iss >> tok) out.push_back(tok);
    return out;
}

} // namespace

bool KvFile::has(std::string_view key) const { return find(key) != nullptr; }

const std::string* KvFile::find(std::string_view key) const {
    for (const auto& e : entries)
        if (e.key == key) return &e.value;
    return nullptr;
}

const std::string& KvFile::get(std::string_view key) const {
    const std::string* v = find(key);
    if (!v) throw format_error("missing key '" + std::string(key) + "'");
    return *v;
}

void KvFile::set(std::string_view key, std::string value) {
    for (auto& e : entries) {
        if (e.key == key) {
            e.value = std::move(value);
            return;
        }
    }
    entries.push_back({std::string(key), std::move(value)});
}

KvFile parse_kv_text(const std::string& text, const std::string& origin) {
    KvFile kv;
    std::istringstream iss(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(iss, line)) {
        ++lineno;
        const std::string stripped = trim(line.substr(0, line.find('#')));
        if (stripped.empty()) continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw format_error(origin + ":" + std::to_string(lineno) +
                               ": expected 'key = value', got '" + stripped + "'");
        std::string key = trim(stripped.substr(0, eq));
        std::string value = trim(stripped.substr(eq + 1));
        if (key.empty())
            throw format_error(origin + ":" + std::to_string(lineno) + ": empty key");
        kv.entries.push_back({std::move(key), std::move(value)});
    }
    return kv;
}

KvFile load_kv_file(const std::string& path) {
    return parse_kv_text(read_text_file(path), path);
}

std::string render_kv(const KvFile& kv) {
    std::string out;
    for (const auto& e : kv.entries) {
        out += e.key;
        out += " = ";
        out += e.value;
        out += '\n';
    }
    return out;
}

void save_kv_file(const KvFile& kv, const std::string& path) {
    write_text_file(path, render_kv(kv));
}

double parse_double(const std::string& key, const std::string& value) {
    const char* begin = value.c_str();
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(begin, &end);
    if (end == begin || trim(std::string(end)).size() != 0 || errno == ERANGE)
        throw format_error("key '" + key + "': expected a float, got '" + value + "'");
    return v;
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
    std::int64_t v = 0;
    const std::string t = trim(value);
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || p != t.data() + t.size())
        throw format_error("key '" + key + "': expected an integer, got '" + value + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    const std::string t = trim(value);
    if (t == "true" || t == "1") return true;
    if (t == "false" || t == "0") return false;
    throw format_error("key '" + key + "': expected a bool (true/false), got '" + value + "'");
}

std::vector<double> parse_doubles(const std::string& key, const std::string& value, std::size_t count) {
    const auto toks = split_ws(value);
    if (count != 0 && toks.size() != count)
        throw format_error("key '" + key + "': expected " + std::to_string(count) +
                           " floats, got " + std::to_string(toks.size()));
    std::vector<double> out;
    out.reserve(toks.size());
    for (const auto& t : toks) out.push_back(parse_double(key, t));
    return out;
}

std::vector<std::int64_t> parse_ints(const std::string& key, const std::string& value, std::size_t count) {
    const auto toks = split_ws(value);
    if (count != 0 && toks.size() != count)
        throw format_error("key '" + key + "': expected " + std::to_string(count) +
                           " integers, got " + std::to_string(toks.size()));
    std::vector<std::int64_t> out;
    out.reserve(toks.size());
    for (const auto& t : toks) out.push_back(parse_int(key, t));
    return out;
}

std::string format_double(double v) {
    // %.17g always round-trips; drop digits while the value still survives
    // a parse so files stay readable.
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string join_doubles(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ' ';
        out += format_double(v[i]);
    }
    return out;
}

std::string join_ints(const std::vector<std::int64_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ' ';
        out += std::to_string(v[i]);
    }
    return out;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open '" + path + "' for writing");
    out << content;
    if (!out) throw io_error("write to '" + path + "' failed");
}

} // namespace ceph3d
