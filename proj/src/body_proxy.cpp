#include "tryon/body_proxy.hpp"

#include "tryon/tetgrid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace tryon
{
    namespace
    {
        double segment_distance(const Vec3 & p, const Vec3 & a, const Vec3 & b)
        {
            const Vec3 ab = b - a;
            const double len2 = ab.squaredNorm();
            const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
            return (p - (a + t * ab)).norm();
        }

        // closest distance between two segments, by sampling-free clamped solve
        double segment_segment_distance(const Vec3 & p1, const Vec3 & q1, const Vec3 & p2, const Vec3 & q2)
        {
            const Vec3 d1 = q1 - p1, d2 = q2 - p2, r = p1 - p2;
            const double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
            double s = 0.0, t = 0.0;
            if (a <= 1e-300 && e <= 1e-300)
            {
                return r.norm();
            }
            if (a <= 1e-300)
            {
                t = std::clamp(f / e, 0.0, 1.0);
            }
            else
            {
                const double c = d1.dot(r);
                if (e <= 1e-300)
                {
                    s = std::clamp(-c / a, 0.0, 1.0);
                }
                else
                {
                    const double b = d1.dot(d2);
                    const double denom = a * e - b * b;
                    s = denom > 0.0 ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
                    t = (b * s + f) / e;
                    if (t < 0.0)
                    {
                        t = 0.0;
                        s = std::clamp(-c / a, 0.0, 1.0);
                    }
                    else if (t > 1.0)
                    {
                        t = 1.0;
                        s = std::clamp((b - c) / a, 0.0, 1.0);
                    }
                }
            }
            return ((p1 + d1 * s) - (p2 + d2 * t)).norm();
        }
    }  // namespace

    void SkeletonSpec::validate() const
    {
        require(!bones.empty(), "skeleton has no bones");
        for (const auto & b : bones)
        {
            require(b.radius > 0.0 && std::isfinite(b.radius), "bone '" + b.name + "' has non-positive radius");
            require(b.joint_a.allFinite() && b.joint_b.allFinite(), "bone '" + b.name + "' has non-finite joints");
        }
        // capsules that touch are connected
        std::vector<int> parent(bones.size());
        std::iota(parent.begin(), parent.end(), 0);
        auto find = [&](int x)
        {
            while (parent[std::size_t(x)] != x)
            {
                x = parent[std::size_t(x)] = parent[std::size_t(parent[std::size_t(x)])];
            }
            return x;
        };
        for (std::size_t i = 0; i < bones.size(); ++i)
        {
            for (std::size_t j = i + 1; j < bones.size(); ++j)
            {
                const double d = segment_segment_distance(bones[i].joint_a, bones[i].joint_b, bones[j].joint_a, bones[j].joint_b);
                if (d <= bones[i].radius + bones[j].radius)
                {
                    parent[std::size_t(find(int(i)))] = find(int(j));
                }
            }
        }
        int roots = 0;
        for (std::size_t i = 0; i < bones.size(); ++i)
        {
            roots += find(int(i)) == int(i) ? 1 : 0;
        }
        require(roots == 1, "skeleton bone graph is disconnected");
    }

    Eigen::AlignedBox3d SkeletonSpec::bounds() const
    {
        Eigen::AlignedBox3d box;
        for (const auto & b : bones)
        {
            const Vec3 r = Vec3::Constant(b.radius);
            box.extend(b.joint_a - r).extend(b.joint_a + r).extend(b.joint_b - r).extend(b.joint_b + r);
        }
        return box;
    }

    SkeletonSpec SkeletonSpec::normalized() const
    {
        validate();
        const auto box = bounds();
        const double height = box.max().y() - box.min().y();
        require(height > 0.0, "skeleton has zero height");
        const double scale = 1.0 / height;
        const Vec3 center = box.center();
        SkeletonSpec out = *this;
        for (auto & b : out.bones)
        {
            b.joint_a = (b.joint_a - center) * scale;
            b.joint_b = (b.joint_b - center) * scale;
            b.radius *= scale;
        }
        const auto nb = out.bounds();
        require(nb.min().minCoeff() >= -0.5 - 1e-12 && nb.max().maxCoeff() <= 0.5 + 1e-12, "normalized skeleton leaves the unit box");
        return out;
    }

    double SkeletonSpec::signed_distance(const Vec3 & p, int * nearest) const
    {
        double best = std::numeric_limits<double>::infinity();
        int arg = -1;
        for (std::size_t i = 0; i < bones.size(); ++i)
        {
            const double d = segment_distance(p, bones[i].joint_a, bones[i].joint_b) - bones[i].radius;
            if (d < best)
            {
                best = d;
                arg = int(i);
            }
        }
        if (nearest)
        {
            *nearest = arg;
        }
        return best;
    }

    SkeletonSpec default_humanoid_spec()
    {
        SkeletonSpec s;
        auto add = [&](std::string name, Vec3 a, Vec3 b, double r) { s.bones.push_back({std::move(name), a, b, r}); };
        add("head", {0, 1.60, 0.01}, {0, 1.70, 0.01}, 0.10);
        add("neck", {0, 1.42, 0}, {0, 1.58, 0}, 0.055);
        add("chest", {0, 1.18, 0}, {0, 1.38, 0}, 0.15);
        add("pelvis", {0, 0.95, 0}, {0, 1.15, 0}, 0.14);
        add("shoulders", {-0.19, 1.40, 0}, {0.19, 1.40, 0}, 0.06);
        add("upper_arm_l", {0.21, 1.40, 0}, {0.31, 1.13, 0}, 0.045);
        add("forearm_l", {0.31, 1.13, 0}, {0.38, 0.82, 0}, 0.04);
        add("upper_arm_r", {-0.21, 1.40, 0}, {-0.31, 1.13, 0}, 0.045);
        add("forearm_r", {-0.31, 1.13, 0}, {-0.38, 0.82, 0}, 0.04);
        add("thigh_l", {0.105, 0.92, 0}, {0.12, 0.50, 0}, 0.07);
        add("shin_l", {0.12, 0.50, 0}, {0.13, 0.10, 0}, 0.052);
        add("foot_l", {0.13, 0.05, 0.0}, {0.13, 0.05, 0.13}, 0.045);
        add("thigh_r", {-0.105, 0.92, 0}, {-0.12, 0.50, 0}, 0.07);
        add("shin_r", {-0.12, 0.50, 0}, {-0.13, 0.10, 0}, 0.052);
        add("foot_r", {-0.13, 0.05, 0.0}, {-0.13, 0.05, 0.13}, 0.045);
        return s;
    }

    SkeletonSpec read_skeleton(const std::filesystem::path & path)
    {
        std::ifstream in(path);
        require(bool(in), "cannot open skeleton file: " + path.string());
        SkeletonSpec spec;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line))
        {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos)
            {
                line.resize(hash);
            }
            std::istringstream ss(line);
            std::string tag;
            if (!(ss >> tag))
            {
                continue;
            }
            require(tag == "bone", path.string() + ":" + std::to_string(lineno) + ": expected 'bone'");
            Bone b;
            ss >> b.name >> b.joint_a.x() >> b.joint_a.y() >> b.joint_a.z() >> b.joint_b.x() >> b.joint_b.y() >> b.joint_b.z() >> b.radius;
            require(!ss.fail(), path.string() + ":" + std::to_string(lineno) + ": malformed bone line");
            spec.bones.push_back(std::move(b));
        }
        return spec;
    }

    void write_skeleton(const SkeletonSpec & spec, const std::filesystem::path & path)
    {
        std::ofstream out(path);
        if (!out)
        {
            throw std::runtime_error("cannot write skeleton: " + path.string());
        }
        out << "# bone <name> ax ay az bx by bz radius\n";
        char line[256];
        for (const auto & b : spec.bones)
        {
            std::snprintf(line, sizeof(line), "bone %s %.6f %.6f %.6f %.6f %.6f %.6f %.6f\n", b.name.c_str(), b.joint_a.x(), b.joint_a.y(), b.joint_a.z(),
                          b.joint_b.x(), b.joint_b.y(), b.joint_b.z(), b.radius);
            out << line;
        }
    }

    TriMesh extract_capsule_union(const SkeletonSpec & spec, int resolution)
    {
        spec.validate();
        require(resolution >= 8, "proxy resolution must be at least 8");
        const double cell = 1.0 / resolution;
        const auto body = spec.bounds();
        const Vec3 lo = body.min() - Vec3::Constant(2.0 * cell);
        const Vec3 hi = body.max() + Vec3::Constant(2.0 * cell);
        // cubic cells: extend every axis to a whole number of cells of the same size
        const double extent = (hi - lo).maxCoeff();
        const int cells = int(std::ceil(extent / cell));
        const Vec3 center = 0.5 * (lo + hi);
        const Eigen::AlignedBox3d box(center - Vec3::Constant(0.5 * cells * cell), center + Vec3::Constant(0.5 * cells * cell));
        const auto sdf_fn = [&](const Vec3 & p) { return spec.signed_distance(p); };
        const TetGrid grid = build_tet_grid(box, cells, sdf_fn, 2.0 * cell);
        VecX sdf = VecX::Constant(grid.num_vertices(), 1.0);
        for (int v : grid.active_vertices)
        {
            sdf[v] = spec.signed_distance(grid.vertices.row(v).transpose());
        }
        return marching_tetrahedra(grid, sdf).mesh;
    }

    TriMesh build_humanoid_proxy(const SkeletonSpec & spec, int resolution)
    {
        return extract_capsule_union(spec.normalized(), resolution);
    }

    TriMesh build_outer_shell(const TriMesh & mesh, double offset)
    {
        require(offset >= 0.0, "shell offset must be non-negative");
        require(is_watertight(mesh), "outer shell requires a watertight mesh");
        TriMesh shell = mesh;
        if (offset == 0.0)
        {
            return shell;
        }
        shell.vertices += offset * vertex_normals_angle(mesh);
        return shell;
    }

    MatX3 sample_points_near_shell(const TriMesh & shell, int count, double band, std::uint64_t seed)
    {
        require(count > 0, "sample count must be positive");
        require(band > 0.0, "sample band must be positive");
        require(!shell.empty(), "cannot sample an empty mesh");
        const MatX3 fn = face_area_normals(shell);
        std::vector<double> cumulative(std::size_t(shell.num_faces()));
        double total = 0.0;
        for (Index f = 0; f < shell.num_faces(); ++f)
        {
            total += 0.5 * fn.row(f).norm();
            cumulative[std::size_t(f)] = total;
        }
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        MatX3 points(count, 3);
        for (int i = 0; i < count; ++i)
        {
            const double pick = unit(rng) * total;
            auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
            const Index f = std::min<Index>(Index(it - cumulative.begin()), shell.num_faces() - 1);
            double u = unit(rng), v = unit(rng);
            if (u + v > 1.0)
            {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            const Vec3 a = shell.vertices.row(shell.faces(f, 0));
            const Vec3 b = shell.vertices.row(shell.faces(f, 1));
            const Vec3 c = shell.vertices.row(shell.faces(f, 2));
            const double len = fn.row(f).norm();
            const Vec3 n = len > 0.0 ? Vec3(fn.row(f).transpose() / len) : Vec3::Zero();
            const double jitter = (2.0 * unit(rng) - 1.0) * band;
            points.row(i) = (a + u * (b - a) + v * (c - a) + jitter * n).transpose();
        }
        return points;
    }
}  // namespace tryon
