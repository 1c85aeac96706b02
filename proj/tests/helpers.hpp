#pragma once

// Shared test utilities. Reference computations here deliberately avoid the
// library's kernels (long double loops, std::mt19937_64).

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "idforge/numkit.hpp"

namespace testutil {

using idforge::Matrix;
using idforge::Vector;

inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                              double scale = 1.0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(gen);
  return m;
}

inline Vector gaussian_vector(Eigen::Index n, std::uint64_t seed, double scale = 1.0) {
  return gaussian_matrix(1, n, seed, scale).row(0).transpose();
}

inline long double ref_dot(const double* a, const double* b, std::size_t n) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<long double>(a[i]) * b[i];
  return s;
}

inline double ref_cosine(const double* a, const double* b, std::size_t n) {
  const long double d = ref_dot(a, b, n);
  const long double na = std::sqrt(ref_dot(a, a, n));
  const long double nb = std::sqrt(ref_dot(b, b, n));
  return static_cast<double>(d / (na * nb));
}

inline double ref_cosine(const Vector& a, const Vector& b) {
  return ref_cosine(a.data(), b.data(), static_cast<std::size_t>(a.size()));
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() /
                 ("idforge_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::FILE* f = std::fopen(p.c_str(), "rb");
  if (!f) return {};
  std::string out;
  char buf[65536];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) out.append(buf, n);
  std::fclose(f);
  return out;
}

}  // namespace testutil
