#include "softattr/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace softattr {

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string encode_pgm(const TensorD& image) {
  if (image.rank() != 2 && !(image.rank() == 3 && image.dim(2) == 1)) {
    throw Error("PGM needs an H x W or H x W x 1 image, got " + shape_string(image.shape()));
  }
  const Eigen::Index h = image.dim(0), w = image.dim(1);
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(h * w));
  for (Eigen::Index i = 0; i < h * w; ++i) {
    const double v = std::clamp(image[i], 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, const TensorD& image) {
  write_file_atomic(path, encode_pgm(image));
}

TensorD decode_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < bytes.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (next_token() != "P5") throw Error("not a binary PGM (P5)");
  long w = 0, h = 0, maxval = 0;
  try {
    w = std::stol(next_token());
    h = std::stol(next_token());
    maxval = std::stol(next_token());
  } catch (const std::exception&) {
    throw Error("malformed PGM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw Error("unsupported PGM header");
  ++pos;  // single whitespace after maxval
  if (bytes.size() < pos + static_cast<std::size_t>(w * h)) {
    throw Error("PGM pixel data truncated at byte " + std::to_string(bytes.size()));
  }
  TensorD img({h, w, 1});
  for (long i = 0; i < w * h; ++i) {
    img[i] = static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>(i)]) /
             static_cast<double>(maxval);
  }
  return img;
}

TensorD read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file(path)); }

}  // namespace softattr
