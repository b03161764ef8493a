#ifndef TANLOSS_TYPES_HPP
#define TANLOSS_TYPES_HPP

#include <span>

#include <Eigen/Dense>

namespace tanloss {

// Row-major so that each sample's row is a contiguous span.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline std::span<const double> row_span(const RowMatrix& m, Eigen::Index r) {
    return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

inline std::span<double> row_span(RowMatrix& m, Eigen::Index r) {
    return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

inline std::span<const double> as_span(const Vector& v) {
    return {v.data(), static_cast<std::size_t>(v.size())};
}

} // namespace tanloss

#endif
