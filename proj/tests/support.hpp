#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mit/autograd.hpp"
#include "mit/params.hpp"
#include "mit/tensor.hpp"

namespace testing {

inline mit::Tensor random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  mit::Tensor t = mit::Tensor::matrix(rows, cols);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

inline mit::Tensor identity(std::size_t n) {
  mit::Tensor t = mit::Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

// Zeroes every stored tensor whose name ends with one of the suffixes.
inline void zero_params(mit::ParameterStore& store, const std::vector<std::string>& suffixes) {
  for (auto& [name, t] : store.all_mut()) {
    for (const auto& s : suffixes) {
      if (name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0) {
        for (auto& v : t.values()) v = 0.0;
      }
    }
  }
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  static std::uint64_t counter = 0;
  auto p = std::filesystem::temp_directory_path() /
           ("mit_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing
