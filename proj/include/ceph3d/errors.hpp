#pragma once

#include <stdexcept>
#include <string>

namespace ceph3d {

// Error taxonomy used across the library. Each class corresponds to one
// failure mode a caller may want to catch separately; all derive from
// std::runtime_error so a catch-all at the CLI boundary stays trivial.

struct format_error : std::runtime_error {
    explicit format_error(const std::string& what) : std::runtime_error(what) {}
};

struct size_error : std::runtime_error {
    explicit size_error(const std::string& what) : std::runtime_error(what) {}
};

struct data_error : std::runtime_error {
    explicit data_error(const std::string& what) : std::runtime_error(what) {}
};

struct parameter_error : std::runtime_error {
    explicit parameter_error(const std::string& what) : std::runtime_error(what) {}
};

struct completeness_error : std::runtime_error {
    explicit completeness_error(const std::string& what) : std::runtime_error(what) {}
};

struct duplication_error : std::runtime_error {
    explicit duplication_error(const std::string& what) : std::runtime_error(what) {}
};

struct degenerate_heatmap_error : std::runtime_error {
    explicit degenerate_heatmap_error(const std::string& what) : std::runtime_error(what) {}
};

struct contract_error : std::runtime_error {
    explicit contract_error(const std::string& what) : std::runtime_error(what) {}
};

struct shape_error : std::runtime_error {
    explicit shape_error(const std::string& what) : std::runtime_error(what) {}
};

struct construction_error : std::runtime_error {
    explicit construction_error(const std::string& what) : std::runtime_error(what) {}
};

struct geometry_error : std::runtime_error {
    explicit geometry_error(const std::string& what) : std::runtime_error(what) {}
};

struct divergence_error : std::runtime_error {
    explicit divergence_error(const std::string& what) : std::runtime_error(what) {}
};

struct io_error : std::runtime_error {
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace ceph3d
