#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace cisum {

// All numerics run in double precision; gradient checks rely on it.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// 1 = real position, 0 = padding.
using Mask = std::vector<std::uint8_t>;

inline Mask full_mask(Index n) { return Mask(static_cast<std::size_t>(n), 1); }

inline Index count_valid(const Mask& mask) {
  Index n = 0;
  for (auto m : mask) n += m ? 1 : 0;
  return n;
}

struct SequenceTensor {
  Matrix values;  // [len x d_h]
  Mask mask;      // [len]

  Index length() const { return values.rows(); }
  Index width() const { return values.cols(); }
};

}  // namespace cisum
