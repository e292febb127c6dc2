#pragma once

#include "tryon/mesh.hpp"

#include <compare>

namespace tryon
{
    struct Pixel
    {
        int row = 0;
        int col = 0;

        auto operator<=>(const Pixel &) const = default;
    };

    /// Pixels whose thresholded value differs from at least one 4-neighbor, in row-major order.
    std::vector<Pixel> edge_pixels(const Image & mask, double threshold = 0.5);

    /// Exact L1 distance to the nearest seed on an h x w grid, two raster passes. Infinite everywhere when there are no seeds.
    Image l1_distance_transform(const std::vector<Pixel> & seeds, int height, int width);

    /// Scalar loss and its gradient with respect to the first image argument.
    struct ImageLoss
    {
        double value = 0.0;
        Image grad;
    };

    struct SilhouetteLoss
    {
        double mse = 0.0;
        double chamfer = 0.0;  // mean L1 distance from rendered edge pixels to the pseudo edge set
        Image grad;            // w.r.t. the rendered mask

        double value() const { return mse + chamfer; }
    };

    /**
     * Mask MSE plus edge chamfer. The MSE gradient is exact. The chamfer term is
     * passed straight through: each rendered edge pixel k receives
     * D_k (I_k - H_k) / |E|, pulling it toward the pseudo mask value with a
     * strength set by its distance to the pseudo edge.
     */
    SilhouetteLoss pseudo_silhouette_loss(const Image & rendered, const Image & pseudo);

    /// m * pseudo + keep * source per pixel and channel; m and keep are single-channel.
    Image composite_pseudo_normal(const Image & pseudo_normal, const Image & source_normal, const Image & m, const Image & keep);

    /// Mean squared error over all pixels and channels.
    ImageLoss normal_loss(const Image & rendered, const Image & composite);

    /// Squared error on pixels with keep > 0.5, averaged over those pixels times channels. Zero for an empty mask.
    ImageLoss recon_loss(const Image & rendered, const Image & source, const Image & keep);

    struct MeshLoss
    {
        double value = 0.0;
        MatX3 grad;
    };

    /// Mean over non-isolated vertices of |v_i - mean of its one-ring|^2, uniform weights.
    MeshLoss laplacian_loss(const TriMesh & mesh);

    struct LossWeights
    {
        double psl = 10000.0;
        double norm = 10000.0;
        double lap = 10000.0;
        double sds_norm = 1.0;
        double recon = 10000.0;
        double sds_tex = 1.0;

        /// Throws InvalidInput on negative or non-finite weights.
        void validate() const;
    };

    struct GeometryParts
    {
        double psl = 0.0;
        double norm = 0.0;
        double sds = 0.0;
        double lap = 0.0;
    };

    struct TextureParts
    {
        double sds = 0.0;
        double recon = 0.0;
    };

    /// Weighted sum. Throws NumericalError naming the first NaN or negative term.
    double total_geometry_loss(const GeometryParts & parts, const LossWeights & weights = {});
    double total_texture_loss(const TextureParts & parts, const LossWeights & weights = {});
}  // namespace tryon
