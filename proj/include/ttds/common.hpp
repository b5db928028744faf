#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ttds {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using MatF = Mat<float>;
using MatD = Mat<double>;

using TokenId = std::int32_t;

enum class Tower : std::uint8_t { item = 0, user = 1 };

inline const char* tower_name(Tower t) { return t == Tower::item ? "item" : "user"; }
Tower parse_tower(const std::string& s);

// Error hierarchy. Each subclass maps to a distinct failure class surfaced by the CLI.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};
class DataError : public Error {
 public:
  using Error::Error;
};
class EmptyCorpusError : public DataError {
 public:
  using DataError::DataError;
};
class StateError : public Error {
 public:
  using Error::Error;
};
class DimensionError : public Error {
 public:
  using Error::Error;
};
class NumericError : public Error {
 public:
  using Error::Error;
};
class CollisionOverflowError : public Error {
 public:
  using Error::Error;
};
class CheckpointError : public Error {
 public:
  using Error::Error;
};
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

// splitmix64 finalizer; used to derive independent per-purpose seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace ttds
