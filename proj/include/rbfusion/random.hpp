#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "rbfusion/linalg.hpp"

namespace rbfusion {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed from a parent seed and a path of tags,
/// e.g. derive_seed(run_seed, {node, step}).
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = mix64(seed);
  for (auto t : tags) s = mix64(s ^ mix64(t + 0x632be59bd9b4e019ULL));
  return s;
}

using Engine = std::mt19937_64;

inline double uniform01(Engine& eng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(eng);
}

/// Draw from N(0, cov) using a Cholesky factor; zero covariance gives zeros.
inline Vector sample_gaussian(Engine& eng, const Matrix& cov) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vector z(cov.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = nd(eng);
  if (cov.isZero(0.0)) return Vector::Zero(cov.rows());
  Eigen::LDLT<Matrix> ldlt(symmetrize(cov));
  // L D^{1/2} handles PSD (e.g. rank-deficient process noise).
  Vector d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
  Vector x = ldlt.matrixL() * (d.asDiagonal() * z);
  return ldlt.transpositionsP().transpose() * x;
}

}  // namespace rbfusion
