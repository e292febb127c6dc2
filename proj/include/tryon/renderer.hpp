#pragma once

#include "tryon/mesh.hpp"

#include <cstdint>

namespace tryon
{
    enum class CameraTag
    {
        Front,
        Back,
        Random,
    };

    enum class Stage
    {
        Geometry,
        Texture,
    };

    /// Look-at camera orbiting the origin. Azimuth 0 sits on +z looking at the body's front; up is +y.
    struct Camera
    {
        double azimuth = 0.0;    // degrees
        double elevation = 0.0;  // degrees
        double radius = 2.0;     // body heights
        double fov = 30.0;       // vertical, degrees
        int resolution = 64;     // square image side in pixels
        CameraTag tag = CameraTag::Front;

        /// Throws InvalidInput on fov outside (0, 180), resolution < 32, or a front/back pose mismatch.
        void validate() const;
    };

    Camera front_camera(int resolution = 64);
    Camera back_camera(int resolution = 64);

    struct CameraRanges
    {
        double elevation_min = -10.0;
        double elevation_max = 30.0;
        double radius = 2.0;
        double fov = 30.0;
    };

    /// Front/back are fixed poses; random draws azimuth in [0, 360) and elevation in the range. Deterministic per seed and stage.
    Camera sample_camera(Stage stage, CameraTag mode, std::uint64_t seed, int resolution = 64, const CameraRanges & ranges = {});

    /// World-to-screen mapping of a camera. Pixel (row, col) has its center at x = col + 0.5, y = row + 0.5.
    struct View
    {
        Vec3 eye;
        Vec3 right;
        Vec3 up;
        Vec3 forward;
        double focal = 0.0;  // pixels
        double center = 0.0;
        int resolution = 0;

        explicit View(const Camera & camera);

        Vec3 to_camera(const Vec3 & p) const;  // (x right, y up, z depth)
        Vec2 project(const Vec3 & p) const;

        /// Rows are d(screen x)/dp and d(screen y)/dp.
        Eigen::Matrix<double, 2, 3> project_jacobian(const Vec3 & p) const;
    };

    inline constexpr double kDefaultSharpness = 2.0;  // pixels

    /**
     * Rendered buffers and the per-pixel state the backward pass needs.
     *
     * Mask is the soft silhouette 1 - prod_j (1 - sigmoid(d_j / sigma)), with
     * triangles beyond 9 sigma dropped and the rest shifted by that tail. Normal
     * and color come from the nearest front-facing triangle covering the pixel
     * center; normals are expressed in the camera frame (+z toward the viewer)
     * and stored as n * 0.5 + 0.5.
     */
    struct RenderOutput
    {
        Image mask;    // 1 channel
        Image normal;  // 3 channels, background (0.5, 0.5, 1)
        Image color;   // 3 channels, background black
        std::vector<int> face;  // covering face per pixel, -1 for background
        MatX bary;              // pixels x 3 screen-space barycentrics
        double sharpness = kDefaultSharpness;

        int resolution() const { return mask.height; }
        bool covered(Index pixel) const { return face[std::size_t(pixel)] >= 0; }
    };

    /// Empty meshes render as background. Rejects sigma <= 0.
    RenderOutput rasterize(const TriMesh & mesh, const Camera & camera, double sharpness = kDefaultSharpness);

    struct RenderGrad
    {
        MatX3 vertices;
        MatX3 colors;
    };

    /**
     * Vector-Jacobian product of rasterize. Any of the image gradients may be null.
     * Mask gradients flow to vertices through d_j; normal and color gradients flow
     * through barycentrics, vertex normals and vertex colors of the covering face.
     */
    RenderGrad rasterize_backward(const TriMesh & mesh, const Camera & camera, const RenderOutput & out, const Image * grad_mask, const Image * grad_normal,
                                  const Image * grad_color);

    inline constexpr int kLatentPool = 4;
    inline constexpr int kLatentChannels = 4;

    /// Fixed 3 -> 4 channel map of the latent stand-in encoder (full column rank).
    const Eigen::Matrix<double, 4, 3> & latent_matrix();
    const Eigen::Vector4d & latent_offset();

    /// Average-pool by 4 per axis, then the fixed affine color map. Rejects sides not divisible by 4.
    Latent encode_latent(const Image & image);

    /// dL/dimage for a given dL/dlatent; the map is linear so this is exact.
    Image encode_latent_backward(const Latent & grad_latent, int height, int width);

    /// Pseudo-inverse color map, then nearest-neighbor upsampling by 4.
    Image decode_latent(const Latent & latent);
}  // namespace tryon
