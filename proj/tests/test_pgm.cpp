#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tripimg/pgm.hpp"
#include "tripimg/prng.hpp"

using namespace tripimg;

namespace {

std::string temp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("all-zero 4x4 image produces header plus 16 zero bytes") {
  ImageSample img;
  img.ni = 4;
  img.nj = 4;
  img.pixels.assign(16, 0);
  const auto path = temp_file("zero.pgm");
  write_pgm(img, path);

  std::ifstream in(path, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  // "P5\n4 4\n255\n" is 11 bytes of header, then the raw payload.
  REQUIRE(content.size() == 11 + 16);
  CHECK(content.substr(0, 11) == "P5\n4 4\n255\n");
  for (size_t i = 11; i < content.size(); ++i) CHECK(content[i] == 0);
  std::remove(path.c_str());
}

TEST_CASE("pgm round-trip is bit-exact on fuzzed images") {
  Rng rng(99);
  for (int iter = 0; iter < 20; ++iter) {
    ImageSample img;
    img.ni = 1 + rng.next_below(8);
    img.nj = 1 + rng.next_below(8);
    img.pixels.resize(img.ni * img.nj);
    for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.next_below(256));
    const auto path = temp_file("fuzz.pgm");
    write_pgm(img, path);
    const ImageSample back = read_pgm(path);
    REQUIRE(back.ni == img.ni);
    REQUIRE(back.nj == img.nj);
    REQUIRE(back.pixels == img.pixels);
    std::remove(path.c_str());
  }
}

TEST_CASE("read_pgm rejects a maxval other than 255") {
  const auto path = temp_file("maxval.pgm");
  {
    std::ofstream out(path, std::ios::binary);
    out << "P5\n2 2\n127\n";
    out.write("\0\0\0\0", 4);
  }
  CHECK_THROWS_AS(read_pgm(path), IoError);
  std::remove(path.c_str());
}
