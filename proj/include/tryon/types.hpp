#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tryon
{
    using Index = Eigen::Index;

    template <typename Scalar> using Vec2T = Eigen::Matrix<Scalar, 2, 1>;
    template <typename Scalar> using Vec3T = Eigen::Matrix<Scalar, 3, 1>;
    template <typename Scalar> using MatX3T = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;
    template <typename Scalar> using MatXT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    template <typename Scalar> using VecXT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    using Vec2 = Vec2T<double>;
    using Vec3 = Vec3T<double>;
    using Mat3 = Eigen::Matrix3d;
    using MatX3 = MatX3T<double>;  // Nx3 rows of points / colors
    using MatX = MatXT<double>;
    using VecX = VecXT<double>;
    using MatX3i = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;
    using MatX4i = Eigen::Matrix<int, Eigen::Dynamic, 4, Eigen::RowMajor>;

    /// Rejected input: violated precondition, malformed file, bad flag. Maps to exit code 1.
    class InvalidInput : public std::invalid_argument
    {
    public:
        using std::invalid_argument::invalid_argument;
    };

    /// Numerical failure during optimization (divergence, NaN, collapse). Maps to exit code 2.
    class NumericalError : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    /**
     * Dense image with interleaved channels. Pixel (row, col) lives in data row
     * `row * width + col`; channels are columns. Masks are single-channel images.
     */
    template <typename Scalar>
    struct ImageT
    {
        int height = 0;
        int width = 0;
        MatXT<Scalar> data;  // (height*width) x channels

        ImageT() = default;
        ImageT(int h, int w, int c, Scalar fill = Scalar(0)) : height(h), width(w), data(MatXT<Scalar>::Constant(Index(h) * w, c, fill)) {}

        int channels() const { return int(data.cols()); }
        Index pixels() const { return Index(height) * width; }
        bool empty() const { return data.size() == 0; }
        bool same_shape(const ImageT & o) const { return height == o.height && width == o.width && channels() == o.channels(); }

        Scalar & at(int r, int c, int ch = 0) { return data(Index(r) * width + c, ch); }
        Scalar at(int r, int c, int ch = 0) const { return data(Index(r) * width + c, ch); }
    };

    using Image = ImageT<double>;

    /// Latent grid: h*w tokens (row-major) by c channels.
    struct Latent
    {
        int height = 0;
        int width = 0;
        MatX data;  // (height*width) x channels

        Latent() = default;
        Latent(int h, int w, int c) : height(h), width(w), data(MatX::Zero(Index(h) * w, c)) {}

        int channels() const { return int(data.cols()); }
        Index tokens() const { return data.rows(); }
    };

    inline void require(bool ok, const std::string & message)
    {
        if (!ok)
        {
            throw InvalidInput(message);
        }
    }
}  // namespace tryon
