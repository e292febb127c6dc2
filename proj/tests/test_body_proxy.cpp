#include <doctest.h>

#include "tryon/body_proxy.hpp"
#include "tryon/mesh_sdf.hpp"

#include <cmath>
#include <filesystem>
#include <random>

using namespace tryon;

namespace
{
    // Möller-Trumbore crossing count along a ray: odd means inside.
    bool ray_parity_inside(const TriMesh & m, const Vec3 & origin, const Vec3 & dir)
    {
        int hits = 0;
        for (Index f = 0; f < m.num_faces(); ++f)
        {
            const Vec3 a = m.vertices.row(m.faces(f, 0));
            const Vec3 b = m.vertices.row(m.faces(f, 1));
            const Vec3 c = m.vertices.row(m.faces(f, 2));
            const Vec3 e1 = b - a, e2 = c - a;
            const Vec3 p = dir.cross(e2);
            const double det = e1.dot(p);
            if (std::abs(det) < 1e-14)
            {
                continue;
            }
            const Vec3 s = origin - a;
            const double u = s.dot(p) / det;
            if (u < 0.0 || u > 1.0)
            {
                continue;
            }
            const Vec3 q = s.cross(e1);
            const double v = dir.dot(q) / det;
            if (v < 0.0 || u + v > 1.0)
            {
                continue;
            }
            hits += e2.dot(q) / det > 0.0 ? 1 : 0;
        }
        return hits % 2 == 1;
    }

    double capsule_sdf(const Vec3 & p, const Vec3 & a, const Vec3 & b, double r)
    {
        const Vec3 ab = b - a;
        const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
        return (p - (a + t * ab)).norm() - r;
    }

    double sign_agreement(const TriMesh & mesh, int queries, double extent, std::uint64_t seed)
    {
        const MeshDistance dist(mesh);
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(-extent, extent);
        std::normal_distribution<double> n(0.0, 1.0);
        int agree = 0;
        for (int i = 0; i < queries; ++i)
        {
            const Vec3 p(u(rng), u(rng), u(rng));
            const Vec3 dir = Vec3(n(rng), n(rng), n(rng)).normalized();
            agree += (dist.signed_distance(p) < 0.0) == ray_parity_inside(mesh, p, dir) ? 1 : 0;
        }
        return double(agree) / queries;
    }
}  // namespace

TEST_CASE("single capsule proxy matches the analytic capsule")
{
    SkeletonSpec spec;
    spec.bones.push_back({"rod", Vec3(0, -0.25, 0), Vec3(0, 0.25, 0), 0.1});
    const int res = 40;
    const TriMesh mesh = build_humanoid_proxy(spec, res);
    CHECK(is_watertight(mesh));
    const SkeletonSpec n = spec.normalized();
    const auto & bone = n.bones[0];
    double worst = 0.0;
    for (Index v = 0; v < mesh.num_vertices(); ++v)
    {
        worst = std::max(worst, std::abs(capsule_sdf(mesh.vertices.row(v).transpose(), bone.joint_a, bone.joint_b, bone.radius)));
    }
    CHECK(worst < 1.0 / res);
    const double height = mesh.vertices.col(1).maxCoeff() - mesh.vertices.col(1).minCoeff();
    CHECK(std::abs(height - 1.0) <= 1.0 / res);
}

TEST_CASE("empty or degenerate skeletons are rejected")
{
    CHECK_THROWS_AS(build_humanoid_proxy(SkeletonSpec {}, 32), InvalidInput);
    SkeletonSpec degenerate;
    degenerate.bones.push_back({"dot", Vec3::Zero(), Vec3::Zero(), 0.0});
    CHECK_THROWS_AS(build_humanoid_proxy(degenerate, 32), InvalidInput);
    SkeletonSpec apart;
    apart.bones.push_back({"a", Vec3(0, 0, 0), Vec3(0, 1, 0), 0.1});
    apart.bones.push_back({"b", Vec3(2, 0, 0), Vec3(2, 1, 0), 0.1});
    CHECK_THROWS_AS(apart.validate(), InvalidInput);
}

TEST_CASE("default humanoid proxy is one watertight genus-0 component of height 1")
{
    const int res = 64;
    const TriMesh body = build_humanoid_proxy(default_humanoid_spec(), res);
    CHECK(is_watertight(body));
    CHECK(count_face_components(body) == 1);
    CHECK(euler_characteristic(body) == 2);
    CHECK(signed_volume(body) > 0.0);
    const double height = body.vertices.col(1).maxCoeff() - body.vertices.col(1).minCoeff();
    CHECK(std::abs(height - 1.0) <= 1.0 / res);
}

TEST_CASE("skeleton file round trip")
{
    const auto path = std::filesystem::temp_directory_path() / "tryon_test.skel";
    const SkeletonSpec spec = default_humanoid_spec();
    write_skeleton(spec, path);
    const SkeletonSpec back = read_skeleton(path);
    REQUIRE(back.bones.size() == spec.bones.size());
    for (std::size_t i = 0; i < spec.bones.size(); ++i)
    {
        CHECK(back.bones[i].name == spec.bones[i].name);
        CHECK((back.bones[i].joint_b - spec.bones[i].joint_b).norm() < 1e-6);
        CHECK(back.bones[i].radius == doctest::Approx(spec.bones[i].radius));
    }
}

TEST_CASE("outer shell of a unit icosphere has radius 1 + offset")
{
    const TriMesh sphere = make_icosphere(4);
    const TriMesh shell = build_outer_shell(sphere, 0.05);
    CHECK(shell.faces == sphere.faces);
    CHECK((shell.vertices.rowwise().norm().array() - 1.05).abs().maxCoeff() < 1e-3);

    const TriMesh same = build_outer_shell(sphere, 0.0);
    CHECK(same.vertices == sphere.vertices);
}

TEST_CASE("outer shell rejects open meshes and grows the humanoid")
{
    TriMesh open = make_icosphere(1);
    open.faces.conservativeResize(open.num_faces() - 1, 3);
    CHECK_THROWS_AS(build_outer_shell(open, 0.05), InvalidInput);

    const TriMesh body = build_humanoid_proxy(default_humanoid_spec(), 48);
    const TriMesh shell = build_outer_shell(body, 0.05);
    CHECK(signed_volume(shell) > signed_volume(body));
}

TEST_CASE("original vertices sit at -offset from a convex shell")
{
    const TriMesh sphere = make_icosphere(3, 0.4);
    const double offset = 0.05;
    const MeshDistance shell(build_outer_shell(sphere, offset));
    for (Index v = 0; v < sphere.num_vertices(); ++v)
    {
        const double d = shell.signed_distance(sphere.vertices.row(v).transpose());
        CHECK(std::abs(d + offset) < 0.1 * offset);
    }
}

TEST_CASE("signed distance on the unit icosphere")
{
    const TriMesh sphere = make_icosphere(4);
    const MeshDistance dist(sphere);
    // inscribed-radius error of a level-4 icosphere is well below 1e-3
    CHECK(dist.signed_distance(Vec3::Zero()) == doctest::Approx(-1.0).epsilon(2e-3));
    CHECK(dist.signed_distance(Vec3(10, 0, 0)) == doctest::Approx(9.0).epsilon(1e-4));
    CHECK(dist.signed_distance(sphere.vertices.row(17).transpose()) == 0.0);
    CHECK_THROWS_AS(MeshDistance(TriMesh {}), InvalidInput);
}

TEST_CASE("pseudonormal sign agrees with ray parity")
{
    CHECK(sign_agreement(make_icosphere(3, 0.5), 10000, 0.8, 1) >= 0.999);
    const TriMesh body = build_humanoid_proxy(default_humanoid_spec(), 40);
    CHECK(sign_agreement(body, 10000, 0.55, 2) >= 0.999);
}

TEST_CASE("points near the shell stay within the band and are seed-deterministic")
{
    const TriMesh shell = build_outer_shell(build_humanoid_proxy(default_humanoid_spec(), 40), 0.05);
    const MatX3 pts = sample_points_near_shell(shell, 1000, 0.05, 42);
    const MeshDistance dist(shell);
    for (Index i = 0; i < pts.rows(); ++i)
    {
        CHECK(dist.unsigned_distance(pts.row(i).transpose()) <= 0.05 + 1e-9);
    }
    CHECK(sample_points_near_shell(shell, 1000, 0.05, 42) == pts);
    CHECK_THROWS_AS(sample_points_near_shell(shell, 0, 0.05, 42), InvalidInput);
}
