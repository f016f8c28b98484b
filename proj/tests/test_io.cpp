#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>

#include "gramode/errors.hpp"
#include "gramode/io.hpp"
#include "support/model_check.hpp"
#include "support/temp_dir.hpp"

using namespace gramode;
using namespace gramode::testing;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Dataset random_dataset(std::size_t t, std::size_t n, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1000.0f, 1000.0f);
  Dataset d;
  d.steps = t;
  d.nodes = n;
  d.channels = c;
  d.interval_minutes = 5;
  d.data.resize(t * n * c);
  for (auto& v : d.data) v = u(rng);
  return d;
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

std::string what_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("stdf") {
  TempDir dir;
  const std::string path = dir.file("d.stdf");

  SUBCASE("round trip is bit-exact") {
    Dataset d = random_dataset(17, 5, 3, 1);
    d.data[0] = -0.0f;
    d.data[1] = std::numeric_limits<float>::denorm_min();
    d.data[2] = std::numeric_limits<float>::max();
    d.interval_minutes = 15;
    write_stdf(d, path);
    CHECK(std::filesystem::file_size(path) == 19 + 4 * d.data.size());
    Dataset r = read_stdf(path);
    CHECK(r.steps == 17);
    CHECK(r.nodes == 5);
    CHECK(r.channels == 3);
    CHECK(r.interval_minutes == 15);
    CHECK(same_bits(r.data, d.data));
  }
  SUBCASE("header layout is little-endian") {
    Dataset d = random_dataset(2, 1, 1, 2);
    d.data = {1.0f, -2.5f};
    write_stdf(d, path);
    const std::string b = slurp(path);
    CHECK(b.substr(0, 4) == "STDF");
    CHECK(b[4] == 1);
    CHECK(static_cast<unsigned char>(b[5]) == 2);
    CHECK(b[6] == 0);
    CHECK(static_cast<unsigned char>(b[17]) == 5);
    // 1.0f = 0x3F800000
    CHECK(static_cast<unsigned char>(b[21]) == 0x80);
    CHECK(static_cast<unsigned char>(b[22]) == 0x3F);
  }
  SUBCASE("truncated payload names expected and actual sizes") {
    write_stdf(random_dataset(4, 2, 1, 3), path);
    std::string b = slurp(path);
    b.resize(b.size() - 6);
    spit(path, b);
    const std::string msg = what_of([&] { read_stdf(path); });
    CHECK(msg.find("expected 32 bytes") != std::string::npos);
    CHECK(msg.find("found 26") != std::string::npos);
    CHECK(msg.find("offset 19") != std::string::npos);
    CHECK_THROWS_AS(read_stdf(path), FormatError);
  }
  SUBCASE("bad magic, version and trailing bytes") {
    write_stdf(random_dataset(2, 2, 1, 4), path);
    const std::string good = slurp(path);
    std::string b = good;
    b[0] = 'X';
    spit(path, b);
    CHECK_THROWS_AS(read_stdf(path), FormatError);
    b = good;
    b[4] = 2;
    spit(path, b);
    CHECK(what_of([&] { read_stdf(path); }).find("version 2") != std::string::npos);
    spit(path, good + "xx");
    CHECK(what_of([&] { read_stdf(path); }).find("trailing") != std::string::npos);
    spit(path, "STD");
    CHECK_THROWS_AS(read_stdf(path), FormatError);
  }
  SUBCASE("a huge declared size is rejected before allocation") {
    std::string b = "STDF";
    b.push_back(1);
    for (int i = 0; i < 12; ++i) b.push_back(static_cast<char>(0xFF));
    b += std::string(2, '\0');
    b += std::string(64, '\0');
    spit(path, b);
    const std::string msg = what_of([&] { read_stdf(path); });
    CHECK(msg.find("truncated payload") != std::string::npos);
  }
  SUBCASE("non-finite values are rejected both ways") {
    Dataset d = random_dataset(2, 2, 1, 5);
    d.data[3] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(write_stdf(d, path), InputError);
    d.data[3] = 1.0f;
    write_stdf(d, path);
    std::string b = slurp(path);
    const std::uint32_t inf = std::bit_cast<std::uint32_t>(std::numeric_limits<float>::infinity());
    for (int i = 0; i < 4; ++i) b[19 + 12 + i] = static_cast<char>(inf >> (8 * i));
    spit(path, b);
    CHECK(what_of([&] { read_stdf(path); }).find("offset 31") != std::string::npos);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(read_stdf(dir.file("none.stdf")), InputError); }
}

TEST_CASE("adjacency csv") {
  TempDir dir;
  const std::string path = dir.file("a.csv");
  auto write = [&](const std::string& s) { spit(path, s); };

  write("from,to,cost\n0,1,3.5\n");
  CHECK(read_adjacency_csv(path, 2) == EdgeList{{0, 1}});
  write("from,to,cost\r\n0,1,3.5\r\n1,0,2\r\n0,1,3.5\r\n\r\n2,3,1e3\r\n");
  CHECK(read_adjacency_csv(path, 4) == EdgeList{{0, 1}, {1, 0}, {0, 1}, {2, 3}});
  write("from,to,cost\n0,1,1\n1,5,1\n");
  const std::string msg = what_of([&] { read_adjacency_csv(path, 5); });
  CHECK(msg.find(":3:") != std::string::npos);
  CHECK(msg.find("out of range") != std::string::npos);
  for (const char* bad : {"from,to,cost\n0,1\n", "from,to,cost\n0,x,1\n", "from,to,cost\n0,1,abc\n",
                          "from,to,cost\n-1,1,1\n", "from,to,cost\n0,1,1,1\n", "src,dst,cost\n0,1,1\n", ""}) {
    write(bad);
    CHECK_THROWS_AS(read_adjacency_csv(path, 3), InputError);
  }
}

TEST_CASE("stgf") {
  TempDir dir;
  TrafficGraph g = toy_graph(6, 4);
  write_stgf(g, dir.file("g.stgf"));
  TrafficGraph r = read_stgf(dir.file("g.stgf"));
  CHECK(r.n_nodes == 6);
  for (std::size_t i = 0; i < 36; ++i) {
    CHECK(r.a_hat_connection[i] == static_cast<double>(static_cast<float>(g.a_hat_connection[i])));
    CHECK(r.a_hat_dtw[i] == static_cast<double>(static_cast<float>(g.a_hat_dtw[i])));
  }
  write_stgf(r, dir.file("g2.stgf"));
  CHECK(slurp(dir.file("g.stgf")) == slurp(dir.file("g2.stgf")));
  std::string b = slurp(dir.file("g.stgf"));
  spit(dir.file("t.stgf"), b.substr(0, b.size() - 1));
  CHECK_THROWS_AS(read_stgf(dir.file("t.stgf")), FormatError);
}

TEST_CASE("checkpoint") {
  TempDir dir;
  ModelConfig cfg = gradcheck_model_config();
  cfg.precision = Precision::float32;
  Model m(cfg, 11);
  const NormStats norm{{123.25}, {40.5}};
  save_checkpoint(dir.file("m.grmd"), m, norm);

  SUBCASE("round trip is bit-exact") {
    NormStats back;
    auto loaded = load_checkpoint(dir.file("m.grmd"), back);
    CHECK(back.mean == norm.mean);
    CHECK(back.std == norm.std);
    CHECK(to_json(loaded->config()) == to_json(cfg));
    auto a = m.params().all();
    auto b = loaded->params().all();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i]->path == b[i]->path);
      CHECK(identical(a[i]->value, b[i]->value));
    }
    save_checkpoint(dir.file("m2.grmd"), *loaded, back);
    CHECK(slurp(dir.file("m.grmd")) == slurp(dir.file("m2.grmd")));
  }
  SUBCASE("corrupt files") {
    const std::string good = slurp(dir.file("m.grmd"));
    NormStats back;
    spit(dir.file("c.grmd"), good.substr(0, good.size() - 3));
    CHECK_THROWS_AS(load_checkpoint(dir.file("c.grmd"), back), FormatError);
    std::string renamed = good;
    const auto at = renamed.find("head/w");
    REQUIRE(at != std::string::npos);
    renamed[at + 5] = 'q';
    spit(dir.file("c.grmd"), renamed);
    CHECK(what_of([&] { load_checkpoint(dir.file("c.grmd"), back); }).find("unknown parameter 'head/q'") !=
          std::string::npos);
  }
}
