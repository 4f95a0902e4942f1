#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "mmnas/param_store.hpp"
#include "testutil.hpp"

using namespace mmnas;

namespace {

std::filesystem::path temp_file(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "mmnas_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_SUITE_BEGIN("param_store");

TEST_CASE("names iterate sorted and unique") {
  ParamStore store;
  store.create("b/w", {2});
  store.create("a/w", {3});
  store.create("a/b", {1});
  const auto names = store.names();
  CHECK(names == std::vector<std::string>{"a/b", "a/w", "b/w"});
  CHECK_THROWS_AS(store.create("a/w", {3}), std::invalid_argument);
  CHECK(store.total_parameters() == 6);
  CHECK(store.names_with_prefix("a/") == std::vector<std::string>{"a/b", "a/w"});
}

TEST_CASE("save/load round-trips bit-exactly") {
  Rng rng(123);
  ParamStore store;
  store.create_fan_in_uniform("cell/edge_0_2/conv3/kernel", {2, 2, 3, 3, 3}, 54, rng);
  store.create_full("cell/edge_0_2/conv3/norm_gamma", {2}, 1.0);
  store.create_fan_in_uniform("head/fc/weight", {2, 7}, 7, rng);
  const auto path = temp_file("roundtrip.mmp");
  store.save(path);
  ParamStore loaded = ParamStore::load(path);
  REQUIRE(loaded.names() == store.names());
  for (const auto& name : store.names()) {
    auto a = store.get(name).values();
    auto b = loaded.get(name).values();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    CHECK(loaded.get(name).requires_grad());
  }
  CHECK(store.serialize() == loaded.serialize());
}

TEST_CASE("container header is validated") {
  const auto path = temp_file("badmagic.mmp");
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("XXXXgarbage", f);
    std::fclose(f);
  }
  CHECK_THROWS_WITH_AS(ParamStore::load(path), doctest::Contains("magic"), std::invalid_argument);
}

TEST_CASE("truncated payload is rejected") {
  Rng rng(5);
  ParamStore store;
  store.create_fan_in_uniform("w", {4, 4}, 4, rng);
  auto bytes = store.serialize();
  bytes.resize(bytes.size() - 3);
  CHECK_THROWS_WITH_AS(ParamStore::deserialize(bytes), doctest::Contains("truncated"),
                       std::invalid_argument);
}

TEST_CASE("clone is deep") {
  ParamStore store;
  store.create_full("w", {2}, 1.0);
  ParamStore copy = store.clone();
  copy.get("w").values()[0] = 9.0;
  CHECK(store.get("w").values()[0] == 1.0);
}

TEST_CASE("content hash tracks values") {
  ParamStore a, b;
  a.create_full("w", {2}, 1.0);
  b.create_full("w", {2}, 1.0);
  CHECK(a.content_hash() == b.content_hash());
  b.get("w").values()[1] = 2.0;
  CHECK(a.content_hash() != b.content_hash());
}

TEST_SUITE_END();
