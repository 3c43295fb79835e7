// Binary tensor container.
//
// Layout (all integers little-endian):
//   bytes 0..3   magic "SART"
//   byte  4      format version (1)
//   byte  5      rank
//   rank x u32   dimensions
//   byte         dtype tag (1 = f32, 2 = f64)
//   payload      row-major values, IEEE-754 little-endian
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "sadreg/tensor.hpp"

namespace sadreg::sart {

inline constexpr std::uint8_t kVersion = 1;

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> encode(const Tensor &t, DType dtype = DType::f64);
Tensor decode(const std::vector<std::uint8_t> &bytes);

void write(std::ostream &os, const Tensor &t, DType dtype = DType::f64);
Tensor read(std::istream &is);

void save(const std::filesystem::path &path, const Tensor &t, DType dtype = DType::f64);
Tensor load(const std::filesystem::path &path);

} // namespace sadreg::sart
