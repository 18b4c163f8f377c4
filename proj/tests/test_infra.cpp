#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <vector>

#include "ntl/errors.hpp"
#include "ntl/rng.hpp"
#include "ntl/serial.hpp"
#include "ntl/tensor.hpp"

using namespace ntl;
namespace fs = std::filesystem;

TEST_CASE("identical seeds give identical streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(42), d(43);
  bool same = true;
  for (int i = 0; i < 16; ++i) same = same && c.next_u64() == d.next_u64();
  CHECK_FALSE(same);
}

TEST_CASE("derived streams are stable and distinct") {
  const std::uint64_t s1 = Rng::derive(2021, 7);
  CHECK(s1 == Rng::derive(2021, 7));
  CHECK(s1 != Rng::derive(2021, 8));
  CHECK(s1 != Rng::derive(2022, 7));
}

TEST_CASE("uniform and normal sampling stay in range") {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform(2.0, 5.0);
    CHECK(u >= 2.0);
    CHECK(u < 5.0);
    CHECK(rng.uniform_int(10) < 10);
  }
  double mean = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) mean += rng.normal();
  mean /= n;
  CHECK(std::abs(mean) < 0.05);
}

TEST_CASE("permutation contains every index once") {
  Rng rng(3);
  auto p = rng.permutation(257);
  std::vector<std::int64_t> sorted(p.begin(), p.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::int64_t i = 0; i < 257; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
  CHECK(p != sorted);
}

TEST_CASE("shuffle is deterministic per seed") {
  std::vector<int> a(50), b(50);
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), 0);
  Rng r1(77), r2(77);
  r1.shuffle(a);
  r2.shuffle(b);
  CHECK(a == b);
}

TEST_CASE("tensor layout is C order with the last axis fastest") {
  Tensor t({2, 3, 4, 5});
  t.at4(1, 2, 3, 4) = 9.0;
  CHECK(t[((1 * 3 + 2) * 4 + 3) * 5 + 4] == 9.0);
  CHECK(t.size() == 120);
  CHECK(t.dim(0) == 2);

  const Tensor m = Tensor::from_vector({2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(m.at2(0, 1) == 2.0);
  CHECK(m.at2(1, 0) == 3.0);
  CHECK(m.mat()(1, 1) == 4.0);
}

TEST_CASE("tensor zero-initializes, reshapes, and accumulates") {
  Tensor t({3, 2});
  for (std::int64_t i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0);
  Tensor r = t.reshaped({2, 3});
  CHECK(r.dim(0) == 2);
  CHECK(r.size() == 6);
  CHECK_THROWS_AS(t.reshaped({4, 2}), DimensionError);

  Tensor x = Tensor::full({2, 2}, 1.0);
  const Tensor y = Tensor::from_vector({2, 2}, {1.0, 2.0, 3.0, 4.0});
  x.add_(y, 0.5);
  CHECK(x.at2(0, 0) == 1.5);
  CHECK(x.at2(1, 1) == 3.0);
  x.scale_(2.0);
  CHECK(x.at2(0, 1) == 4.0);
  Tensor bad({3});
  CHECK_THROWS_AS(x.add_(bad), DimensionError);
}

TEST_CASE("container round-trips kind, metadata, and tensors") {
  const fs::path dir = fs::temp_directory_path() / "ntl-serial-test";
  fs::create_directories(dir);
  const std::string path = (dir / "round.ckpt").string();

  const Tensor a = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b = Tensor::from_vector({4}, {-1.5, 0.0, 2.25, 1e300});
  serial::write_container(path, "unit-test", "{\"k\":1}", {{"alpha", &a}, {"beta", &b}});

  const auto box = serial::read_container(path);
  CHECK(box.kind == "unit-test");
  CHECK(box.meta_json == "{\"k\":1}");
  REQUIRE(box.tensors.size() == 2);
  const Tensor& ra = box.tensors.at("alpha");
  REQUIRE(ra.same_shape(a));
  for (std::int64_t i = 0; i < a.size(); ++i) CHECK(ra[i] == a[i]);
  CHECK(box.tensors.at("beta")[3] == 1e300);
  fs::remove_all(dir);
}

TEST_CASE("container rejects missing files and foreign bytes") {
  CHECK_THROWS_AS(serial::read_container("/nonexistent/nowhere.ckpt"), Error);
  const fs::path dir = fs::temp_directory_path() / "ntl-serial-bad";
  fs::create_directories(dir);
  const std::string path = (dir / "bad.ckpt").string();
  {
    FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    std::fputs("this is not a container", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(serial::read_container(path), Error);
  fs::remove_all(dir);
}
