#pragma once

#include "tryon/mesh.hpp"

#include <memory>

namespace tryon
{
    /**
     * Exact signed distance to a watertight triangle mesh.
     *
     * Magnitude comes from a closest-point query over an AABB tree. The sign is
     * taken from the angle-weighted pseudonormal of the closest feature (face,
     * edge or vertex): negative inside, positive outside.
     */
    class MeshDistance
    {
    public:
        explicit MeshDistance(const TriMesh & mesh);
        ~MeshDistance();
        MeshDistance(MeshDistance &&) noexcept;
        MeshDistance & operator=(MeshDistance &&) noexcept;

        double signed_distance(const Vec3 & point) const;
        double unsigned_distance(const Vec3 & point) const;
        VecX signed_distances(const MatX3 & points) const;

    private:
        struct Impl;
        std::unique_ptr<Impl> impl_;
    };

    /// One-shot convenience; builds the tree per call.
    double mesh_signed_distance(const TriMesh & mesh, const Vec3 & point);
}  // namespace tryon
