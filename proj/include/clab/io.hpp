#pragma once

// File formats:
//   .vct  "VCT1" magic, u32 LE rank, rank x u64 LE extents, then float32 LE
//         values in row-major order.
//   .pgm  binary P5, 8-bit, values scaled so that the image maximum maps to 255.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "clab/tensor.hpp"

namespace clab::io {

class FormatError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

void write_vct(const std::filesystem::path &path, const Tensor &t);
Tensor read_vct(const std::filesystem::path &path);

std::vector<unsigned char> encode_vct(const Tensor &t);
Tensor decode_vct(const std::vector<unsigned char> &bytes);

// Writes an H x W single-channel image (any tensor whose last two extents
// are H, W and whose element count is H*W).
void write_pgm(const std::filesystem::path &path, const Tensor &image);

void write_text(const std::filesystem::path &path, const std::string &text);
std::string read_text(const std::filesystem::path &path);

}  // namespace clab::io
