#pragma once

#include "softattr/tensor.hpp"

#include <filesystem>
#include <string>

namespace softattr {

/// Writes `contents` to a sibling temp file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

std::string read_file(const std::filesystem::path& path);

/// Binary PGM (P5, maxval 255). Values are clamped to [0,1] and rounded.
std::string encode_pgm(const TensorD& image);
void write_pgm(const std::filesystem::path& path, const TensorD& image);

/// Reads a P5 PGM into an H x W x 1 tensor scaled to [0,1].
TensorD read_pgm(const std::filesystem::path& path);
TensorD decode_pgm(const std::string& bytes);

}  // namespace softattr
