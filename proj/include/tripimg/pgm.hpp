#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tripimg/igtd.hpp"

namespace tripimg {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Binary PGM, magic P5, maxval pinned to 255.
inline void write_pgm(const ImageSample& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P5\n" << img.nj << ' ' << img.ni << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("write failed: " + path);
}

inline ImageSample read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw IoError("not a P5 PGM: " + path);
  size_t width = 0, height = 0;
  int maxval = 0;
  in >> width >> height >> maxval;
  if (!in) throw IoError("malformed PGM header: " + path);
  if (maxval != 255) throw IoError("unsupported maxval (must be 255): " + path);
  in.get();  // single whitespace after maxval
  ImageSample img;
  img.ni = height;
  img.nj = width;
  img.pixels.resize(width * height);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw IoError("truncated PGM payload: " + path);
  return img;
}

}  // namespace tripimg
