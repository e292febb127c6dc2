#pragma once

#include "tryon/mesh.hpp"

#include <Eigen/Geometry>

#include <filesystem>
#include <string>

namespace tryon
{
    struct Bone
    {
        std::string name;
        Vec3 joint_a;
        Vec3 joint_b;
        double radius = 0.0;
    };

    /// Capsule skeleton standing in for a parametric body model. Height is measured along +y.
    struct SkeletonSpec
    {
        std::vector<Bone> bones;

        /// Throws InvalidInput on an empty list, non-positive radii or a disconnected bone graph.
        void validate() const;

        /// Axis-aligned bounds of the capsule union.
        Eigen::AlignedBox3d bounds() const;

        /// Scaled to height 1 and centered: y spans [-0.5, 0.5], x and z centered on 0.
        SkeletonSpec normalized() const;

        /// Signed distance to the capsule union; `nearest` receives the closest bone index.
        double signed_distance(const Vec3 & p, int * nearest = nullptr) const;
    };

    /// Fifteen-bone A-pose humanoid facing +z.
    SkeletonSpec default_humanoid_spec();

    /// Text format: one `bone <name> ax ay az bx by bz radius` per line, `#` comments.
    SkeletonSpec read_skeleton(const std::filesystem::path & path);
    void write_skeleton(const SkeletonSpec & spec, const std::filesystem::path & path);

    /// Extract the capsule union of an already-normalized spec on a lattice with `resolution` cells per body height.
    TriMesh extract_capsule_union(const SkeletonSpec & spec, int resolution);

    /// Normalize, validate, and extract: watertight proxy body of height 1.
    TriMesh build_humanoid_proxy(const SkeletonSpec & spec, int resolution);

    inline constexpr double kDefaultShellOffset = 0.05;

    /// Displace each vertex along its angle-weighted normal. Rejects non-watertight input.
    TriMesh build_outer_shell(const TriMesh & mesh, double offset = kDefaultShellOffset);

    /// Area-weighted surface samples jittered uniformly by [-band, band] along the face normal.
    MatX3 sample_points_near_shell(const TriMesh & shell, int count, double band, std::uint64_t seed);
}  // namespace tryon
