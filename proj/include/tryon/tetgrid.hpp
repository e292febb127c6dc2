#pragma once

#include "tryon/mesh.hpp"

#include <Eigen/Geometry>

#include <array>
#include <functional>

namespace tryon
{
    /// Tetrahedral lattice over a box: every cube split into 6 Kuhn tets sharing the main diagonal.
    struct TetGrid
    {
        Eigen::AlignedBox3d bounds;
        int resolution = 0;  // cubes per axis
        MatX3 vertices;
        MatX4i tets;
        std::vector<std::uint8_t> active;  // one flag per tet
        std::vector<int> active_vertices;  // sorted vertices referenced by active tets

        Index num_vertices() const { return vertices.rows(); }
        Index num_tets() const { return tets.rows(); }
        Index num_active() const;
        double cell_size() const { return (bounds.max() - bounds.min()).maxCoeff() / resolution; }
    };

    /// Lattice with every tet active. Rejects resolution < 8.
    TetGrid build_tet_grid(const Eigen::AlignedBox3d & bounds, int resolution);

    /// Lattice restricted to tets whose cube meets the band |SDF(body)| <= band.
    TetGrid build_tet_grid(const Eigen::AlignedBox3d & bounds, int resolution, const TriMesh & body, double band);

    /// Same, with the band test driven by an arbitrary distance function.
    TetGrid build_tet_grid(const Eigen::AlignedBox3d & bounds, int resolution, const std::function<double(const Vec3 &)> & sdf, double band);

    double tet_volume(const TetGrid & grid, Index tet);

    /// Connected components of active tets (tets sharing a vertex are adjacent).
    int count_active_components(const TetGrid & grid);

    /// Marching Tetrahedra output; `edges[i]` holds the grid vertices whose edge produced mesh vertex i.
    struct MtResult
    {
        TriMesh mesh;
        std::vector<std::array<int, 2>> edges;
    };

    inline constexpr double kZeroNudge = 1e-8;

    /**
     * Extract the zero level set of per-vertex SDF samples over the active tets.
     *
     * Crossing vertices sit at (s_b v_a - s_a v_b) / (s_b - s_a) and are shared
     * between tets through an edge-keyed map. Exact zeros are nudged to +1e-8.
     * Triangles are oriented so their normals point toward positive SDF.
     */
    MtResult marching_tetrahedra(const TetGrid & grid, const VecX & sdf);

    template <typename Scalar>
    struct CrossingJacobian
    {
        Vec3T<Scalar> d_sa;
        Vec3T<Scalar> d_sb;
    };

    /// Crossing point of the interpolation formula, for any scalar type.
    template <typename Scalar>
    Vec3T<Scalar> mt_crossing(const Vec3T<Scalar> & va, const Vec3T<Scalar> & vb, Scalar sa, Scalar sb)
    {
        return (sb * va - sa * vb) / (sb - sa);
    }

    /// Partial derivatives of mt_crossing with respect to the two SDF samples.
    template <typename Scalar>
    CrossingJacobian<Scalar> mt_vertex_jacobian(const Vec3T<Scalar> & va, const Vec3T<Scalar> & vb, Scalar sa, Scalar sb)
    {
        require(sa != sb, "mt_vertex_jacobian: equal SDF samples have no crossing");
        const Scalar denom = (sb - sa) * (sb - sa);
        return {(sb / denom) * (va - vb), (sa / denom) * (vb - va)};
    }

    /// Chain dL/dvertex of an MT mesh back to dL/ds on grid vertices (dense, one entry per grid vertex).
    VecX marching_tetrahedra_backward(const TetGrid & grid, const VecX & sdf, const MtResult & mt, const MatX3 & grad_vertices);
}  // namespace tryon
