#include "depthforge/imageio.hpp"

#include <fstream>
#include <sstream>

namespace df {

namespace {

// Reads one whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    return tok;
  }
  throw IoError("image read: unexpected end of header");
}

std::size_t parse_dim(const std::string& tok, const std::string& path) {
  long v = 0;
  try {
    v = std::stol(tok);
  } catch (const std::exception&) {
    throw IoError("image read: bad dimension '" + tok + "' in " + path);
  }
  if (v <= 0) throw IoError("image read: nonpositive dimension in " + path);
  return static_cast<std::size_t>(v);
}

}  // namespace

void write_pgm(const std::string& path, std::size_t width, std::size_t height,
               const std::vector<uint8_t>& pixels) {
  if (pixels.size() != width * height) {
    throw IoError("write_pgm: pixel count does not match " + std::to_string(width) + "x" +
                  std::to_string(height));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_pgm: cannot open " + path);
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("write_pgm: short write to " + path);
}

std::vector<uint8_t> read_pgm(const std::string& path, std::size_t& width, std::size_t& height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_pgm: cannot open " + path);
  if (next_token(in) != "P5") throw IoError("read_pgm: not a binary PGM: " + path);
  width = parse_dim(next_token(in), path);
  height = parse_dim(next_token(in), path);
  const std::string maxval = next_token(in);
  if (maxval != "255") throw IoError("read_pgm: unsupported maxval " + maxval + " in " + path);
  in.get();  // single whitespace byte after the header
  std::vector<uint8_t> pixels(width * height);
  in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(pixels.size())) {
    throw IoError("read_pgm: truncated payload in " + path);
  }
  return pixels;
}

void write_pfm(const std::string& path, std::size_t width, std::size_t height,
               std::size_t channels, const std::vector<float>& data) {
  if (channels != 1 && channels != 3) throw IoError("write_pfm: channels must be 1 or 3");
  if (data.size() != width * height * channels) {
    throw IoError("write_pfm: data length does not match shape for " + path);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_pfm: cannot open " + path);
  out << (channels == 3 ? "PF" : "Pf") << "\n" << width << " " << height << "\n-1.0\n";
  // PFM stores rows bottom-up; callers pass top-down.
  const std::size_t row = width * channels;
  for (std::size_t y = height; y-- > 0;) {
    out.write(reinterpret_cast<const char*>(data.data() + y * row),
              static_cast<std::streamsize>(row * sizeof(float)));
  }
  if (!out) throw IoError("write_pfm: short write to " + path);
}

std::vector<float> read_pfm(const std::string& path, std::size_t& width, std::size_t& height,
                            std::size_t& channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_pfm: cannot open " + path);
  const std::string magic = next_token(in);
  if (magic == "PF") {
    channels = 3;
  } else if (magic == "Pf") {
    channels = 1;
  } else {
    throw IoError("read_pfm: bad magic '" + magic + "' in " + path);
  }
  width = parse_dim(next_token(in), path);
  height = parse_dim(next_token(in), path);
  double scale = 0.0;
  try {
    scale = std::stod(next_token(in));
  } catch (const std::exception&) {
    throw IoError("read_pfm: bad scale in " + path);
  }
  if (scale >= 0.0) throw IoError("read_pfm: big-endian payloads unsupported: " + path);
  in.get();
  std::vector<float> data(width * height * channels);
  const std::size_t row = width * channels;
  for (std::size_t y = height; y-- > 0;) {
    in.read(reinterpret_cast<char*>(data.data() + y * row),
            static_cast<std::streamsize>(row * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(row * sizeof(float))) {
      throw IoError("read_pfm: truncated payload in " + path);
    }
  }
  return data;
}

}  // namespace df
