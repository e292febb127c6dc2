#pragma once

#include "tryon/types.hpp"

#include <filesystem>
#include <optional>

namespace tryon
{
    /// Triangle mesh with optional per-vertex colors. Faces wind counter-clockwise seen from outside.
    struct TriMesh
    {
        MatX3 vertices;
        MatX3i faces;
        MatX3 colors;  // empty, or one RGB row per vertex in [0,1]

        Index num_vertices() const { return vertices.rows(); }
        Index num_faces() const { return faces.rows(); }
        bool empty() const { return faces.rows() == 0; }
        bool has_colors() const { return colors.rows() == vertices.rows() && colors.rows() > 0; }
    };

    /// Throws InvalidInput when a face references a missing vertex.
    void validate_indices(const TriMesh & mesh);

    /// Every undirected edge is shared by exactly two faces, with opposite directions.
    bool is_watertight(const TriMesh & mesh);

    /// Connected components under face adjacency (shared edges).
    int count_face_components(const TriMesh & mesh);

    double signed_volume(const TriMesh & mesh);
    double surface_area(const TriMesh & mesh);

    /// Unnormalized face normals (cross product of edges, length = 2 * area).
    MatX3 face_area_normals(const TriMesh & mesh);

    /// Unit vertex normals from the area-weighted sum of incident face normals.
    MatX3 vertex_normals_area(const TriMesh & mesh);

    /// Unit vertex normals weighted by incident corner angles (pseudonormals).
    MatX3 vertex_normals_angle(const TriMesh & mesh);

    /// Vector-Jacobian product of vertex_normals_area: maps dL/dN (per vertex) to dL/dV.
    MatX3 vertex_normals_area_backward(const TriMesh & mesh, const MatX3 & grad_normals);

    /// Sorted one-ring neighbor lists (vertices sharing an edge).
    std::vector<std::vector<int>> vertex_neighbors(const TriMesh & mesh);

    /// Euler characteristic V - E + F, for genus checks on closed meshes.
    Index euler_characteristic(const TriMesh & mesh);

    /// Remove vertices that no face references; face indices are remapped.
    TriMesh compact(const TriMesh & mesh);

    /// Writes `v x y z [r g b]` and 1-indexed `f` lines with 9 significant digits.
    void write_obj(const TriMesh & mesh, const std::filesystem::path & path);
    TriMesh read_obj(const std::filesystem::path & path);

    TriMesh make_icosphere(int subdivisions, double radius = 1.0);
}  // namespace tryon
