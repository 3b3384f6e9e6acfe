#include "checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <memory>

namespace svs {

static const char kMagic[4] = {'C', 'F', 'L', 'W'};

namespace {

struct file_closer {
    void operator()(FILE *f) const { if (f) fclose(f); }
};
using file_ptr = std::unique_ptr<FILE, file_closer>;

void write_u32(FILE *f, uint32_t v) { fwrite(&v, 4, 1, f); }
void write_u64(FILE *f, uint64_t v) { fwrite(&v, 8, 1, f); }

uint32_t read_u32(FILE *f, const std::string &path) {
    uint32_t v;
    if (fread(&v, 4, 1, f) != 1)
        fail(errc::runtime, "checkpoint truncated: " + path);
    return v;
}

uint64_t read_u64(FILE *f, const std::string &path) {
    uint64_t v;
    if (fread(&v, 8, 1, f) != 1)
        fail(errc::runtime, "checkpoint truncated: " + path);
    return v;
}

} // namespace

void checkpoint::add(std::string name, std::vector<int64_t> dims, std::vector<double> data) {
    named_array a;
    a.name = std::move(name);
    a.dims = std::move(dims);
    a.data = std::move(data);
    if (a.numel() != int64_t(a.data.size()))
        fail(errc::usage, strfmt("checkpoint array '%s': %zu values do not match dims",
                                 a.name.c_str(), a.data.size()));
    arrays.push_back(std::move(a));
}

const named_array *checkpoint::find(const std::string &name) const {
    for (const auto &a : arrays)
        if (a.name == name) return &a;
    return nullptr;
}

const named_array &checkpoint::get(const std::string &name) const {
    const named_array *a = find(name);
    if (!a) fail(errc::missing_prereq, "checkpoint array missing: " + name);
    return *a;
}

double checkpoint::get_scalar(const std::string &name) const {
    const named_array &a = get(name);
    if (a.numel() != 1)
        fail(errc::runtime, "checkpoint array not scalar: " + name);
    return a.data[0];
}

void checkpoint::save(const std::string &path) const {
    file_ptr f(fopen(path.c_str(), "wb"));
    if (!f) fail(errc::runtime, "cannot write checkpoint: " + path);
    fwrite(kMagic, 1, 4, f.get());
    write_u32(f.get(), kVersion);
    write_u32(f.get(), uint32_t(arrays.size()));
    for (const auto &a : arrays) {
        write_u32(f.get(), uint32_t(a.name.size()));
        fwrite(a.name.data(), 1, a.name.size(), f.get());
        write_u32(f.get(), uint32_t(a.dims.size()));
        for (int64_t d : a.dims) write_u64(f.get(), uint64_t(d));
        fwrite(a.data.data(), 8, a.data.size(), f.get());
    }
    if (ferror(f.get())) fail(errc::runtime, "write failure: " + path);
}

checkpoint checkpoint::load(const std::string &path) {
    file_ptr f(fopen(path.c_str(), "rb"));
    if (!f) fail(errc::missing_prereq, "checkpoint missing: " + path);
    char magic[4];
    if (fread(magic, 1, 4, f.get()) != 4 || memcmp(magic, kMagic, 4) != 0)
        fail(errc::runtime, "bad checkpoint magic: " + path);
    uint32_t version = read_u32(f.get(), path);
    if (version != kVersion)
        fail(errc::runtime, strfmt("unsupported checkpoint version %u: %s", version, path.c_str()));
    uint32_t count = read_u32(f.get(), path);
    checkpoint ck;
    for (uint32_t i = 0; i < count; i++) {
        named_array a;
        uint32_t name_len = read_u32(f.get(), path);
        a.name.resize(name_len);
        if (name_len && fread(a.name.data(), 1, name_len, f.get()) != name_len)
            fail(errc::runtime, "checkpoint truncated: " + path);
        uint32_t rank = read_u32(f.get(), path);
        a.dims.resize(rank);
        for (uint32_t r = 0; r < rank; r++) a.dims[r] = int64_t(read_u64(f.get(), path));
        int64_t n = a.numel();
        if (n < 0) fail(errc::runtime, "checkpoint corrupt dims: " + path);
        a.data.resize(size_t(n));
        if (n && fread(a.data.data(), 8, size_t(n), f.get()) != size_t(n))
            fail(errc::runtime, "checkpoint truncated: " + path);
        ck.arrays.push_back(std::move(a));
    }
    return ck;
}

} // namespace svs
