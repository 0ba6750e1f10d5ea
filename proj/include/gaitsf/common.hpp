#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gaitsf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value or argument violates a documented precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Frame or tensor dimensions do not match what an operation expects.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// The gallery/probe protocol cannot be evaluated.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A centroid whose mean has (numerically) zero length.
class DegenerateCentroidError : public Error {
 public:
  DegenerateCentroidError(int cluster, const std::string& what)
      : Error(what), cluster_(cluster) {}
  int cluster() const { return cluster_; }

 private:
  int cluster_;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ValidationError(what);
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi_inclusive) {
  return std::uniform_int_distribution<int>(lo, hi_inclusive)(rng);
}

/// Derive an independent stream seed from a base seed and a salt.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

}  // namespace gaitsf
