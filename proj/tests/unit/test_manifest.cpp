#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "manifest.hpp"

using namespace mechxfer::cli;

TEST_CASE("git blob hashes") {
    // Values printed by `git hash-object`.
    CHECK(git_blob_sha1("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    CHECK(git_blob_sha1("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
    CHECK(git_blob_sha1(std::string("a\0b", 3)) != git_blob_sha1("ab"));
}

TEST_CASE("manifest file") {
    const auto dir = std::filesystem::temp_directory_path() / "mechxfer_manifest_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "in.txt") << "hello\n";
    std::ofstream(dir / "out.txt") << "";
    Manifest m("synth", {"mechxfer", "synth"});
    m.set_seed(7);
    m.set_config({{"dim", 2}});
    m.add_input(dir / "in.txt");
    m.write(dir, {dir / "out.txt", dir / "absent.txt"}, 0);
    std::ifstream is(dir / "manifest.json");
    const auto j = nlohmann::json::parse(is);
    CHECK(j["command"] == "synth");
    CHECK(j["seed"] == 7);
    CHECK(j["config"]["dim"] == 2);
    CHECK(j["inputs"][0]["sha1"] == "ce013625030ba8dba906f756967f9e9ca394464a");
    CHECK(j["outputs"].size() == 1);
    CHECK(j["outputs"][0]["sha1"] == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    CHECK(j["started_at"].get<std::string>().size() == 20);
    CHECK_THROWS(git_blob_sha1_file(dir / "absent.txt"));
    std::filesystem::remove_all(dir);
}
