#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "checkpoint.hpp"

using namespace svs;

static std::string tmp_path(const char *name) {
    auto p = std::filesystem::temp_directory_path() / name;
    return p.string();
}

TEST_CASE("checkpoint round trip preserves names, dims and bits") {
    checkpoint ck;
    ck.add("alpha", {2, 3}, {1.0, -2.5, 3.25, 0.0, 1e-300, -0.0});
    ck.add("beta/gamma", {4}, {4, 3, 2, 1});
    ck.add_scalar("meta/stage", 2.0);
    const std::string path = tmp_path("ck_roundtrip.ckpt");
    ck.save(path);

    checkpoint back = checkpoint::load(path);
    REQUIRE(back.arrays.size() == 3);
    CHECK(back.arrays[0].name == "alpha");
    CHECK(back.get("alpha").dims == std::vector<int64_t>{2, 3});
    CHECK(back.get("alpha").data == ck.get("alpha").data);
    CHECK(back.get_scalar("meta/stage") == 2.0);
    CHECK(back.find("missing") == nullptr);
    CHECK_THROWS_AS(back.get("missing"), error);
    std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects bad magic and truncation") {
    const std::string path = tmp_path("ck_bad.ckpt");
    {
        std::ofstream f(path, std::ios::binary);
        f << "NOPE1234567890";
    }
    CHECK_THROWS_WITH_AS(checkpoint::load(path), doctest::Contains("magic"), error);

    checkpoint ck;
    ck.add("x", {8}, std::vector<double>(8, 1.0));
    ck.save(path);
    {
        // drop the tail of the data payload
        std::filesystem::resize_file(path, std::filesystem::file_size(path) - 16);
    }
    CHECK_THROWS_WITH_AS(checkpoint::load(path), doctest::Contains("truncated"), error);
    std::remove(path.c_str());
}

TEST_CASE("checkpoint missing file is a missing-prerequisite error") {
    try {
        checkpoint::load(tmp_path("ck_never_written.ckpt"));
        FAIL("expected an error");
    } catch (const error &e) {
        CHECK(e.code == errc::missing_prereq);
    }
}

TEST_CASE("array size validation") {
    checkpoint ck;
    CHECK_THROWS_AS(ck.add("bad", {2, 2}, {1.0}), error);
}
