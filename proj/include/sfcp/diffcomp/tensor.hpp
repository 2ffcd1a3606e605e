#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace sfcp::dc {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A learnable value grid with a gradient slot of the same shape.
struct Param {
    Param() = default;
    Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}

    std::string name;
    Mat value;
    Mat grad;

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Row layout of a batch of token sequences stacked into one matrix.
/// Sequence i occupies rows [offsets[i], offsets[i] + lengths[i]); rows with
/// valid == 0 are padding and never influence valid rows.
struct SeqLayout {
    std::vector<std::size_t> offsets;
    std::vector<std::size_t> lengths;
    std::vector<std::uint8_t> valid;

    std::size_t rows() const { return valid.size(); }
    std::size_t sequences() const { return offsets.size(); }

    /// Position of every row within its own sequence.
    std::vector<std::size_t> positions() const;

    static SeqLayout single(std::size_t n);
    static SeqLayout packed(const std::vector<std::size_t>& lengths);
    /// Every sequence padded to `pad_to` rows; trailing rows are masked.
    static SeqLayout padded(const std::vector<std::size_t>& lengths, std::size_t pad_to);
};

}  // namespace sfcp::dc
