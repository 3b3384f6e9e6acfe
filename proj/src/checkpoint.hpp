#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "common.hpp"

namespace svs {

//
// Repo-wide checkpoint container: little-endian, magic "CFLW", version u32,
// then a count-prefixed list of named f64 arrays
// (name length u32, UTF-8 name, rank u32, dims u64 each, raw row-major data).
//

struct named_array {
    std::string name;
    std::vector<int64_t> dims;
    std::vector<double> data;

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : dims) n *= d;
        return n;
    }
};

struct checkpoint {
    static constexpr uint32_t kVersion = 1;

    std::vector<named_array> arrays; // order preserved; written as listed

    void add(std::string name, std::vector<int64_t> dims, std::vector<double> data);
    void add_scalar(std::string name, double v) { add(std::move(name), {1}, {v}); }

    const named_array *find(const std::string &name) const;
    const named_array &get(const std::string &name) const;
    double get_scalar(const std::string &name) const;
    bool has(const std::string &name) const { return find(name) != nullptr; }

    void save(const std::string &path) const;
    static checkpoint load(const std::string &path);
};

} // namespace svs
