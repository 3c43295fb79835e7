#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "sadreg/tensor.hpp"

namespace testing {

inline sadreg::Tensor random_tensor(sadreg::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(lo, hi);
    sadreg::Tensor t(std::move(shape));
    for (auto &v : t.data()) v = d(rng);
    return t;
}

inline double max_abs_diff(const sadreg::Tensor &a, const sadreg::Tensor &b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string &name) {
    auto p = std::filesystem::temp_directory_path() / ("sadreg_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace testing
