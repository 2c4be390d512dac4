#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace dam {

// Dense types, templated on scalar. Production code runs in 32-bit floats;
// gradient-check and oracle code instantiates the same templates in 64-bit.
template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;
using VectorF = Vector<float>;
using VectorD = Vector<double>;

// Error raised for problems the user can fix (bad config, bad data, bad
// flags). The CLI maps it to exit code 1; everything else is exit code 2.
class user_error : public std::runtime_error {
public:
    explicit user_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dam
