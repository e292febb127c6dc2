#include "tryon/tetgrid.hpp"

#include "tryon/mesh_sdf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace tryon
{
    namespace
    {
        // Kuhn subdivision: one tet per axis permutation, all along the 0 -> 7 diagonal
        constexpr int kPerms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};

        int corner_offset(int bits, int res)
        {
            const int n = res + 1;
            return (bits & 1) + n * (((bits >> 1) & 1) + n * ((bits >> 2) & 1));
        }

        double signed_tet_volume(const Vec3 & a, const Vec3 & b, const Vec3 & c, const Vec3 & d)
        {
            return (b - a).dot((c - a).cross(d - a)) / 6.0;
        }

        TetGrid lattice(const Eigen::AlignedBox3d & bounds, int resolution)
        {
            require(resolution >= 8, "tet grid resolution must be at least 8");
            require(!bounds.isEmpty() && (bounds.max() - bounds.min()).minCoeff() > 0.0, "tet grid bounds are empty");
            TetGrid grid;
            grid.bounds = bounds;
            grid.resolution = resolution;
            const int n = resolution + 1;
            const Vec3 step = (bounds.max() - bounds.min()) / resolution;
            grid.vertices.resize(Index(n) * n * n, 3);
            for (int k = 0; k < n; ++k)
            {
                for (int j = 0; j < n; ++j)
                {
                    for (int i = 0; i < n; ++i)
                    {
                        const Index id = i + Index(n) * (j + Index(n) * k);
                        grid.vertices.row(id) = (bounds.min() + Vec3(i * step.x(), j * step.y(), k * step.z())).transpose();
                    }
                }
            }
            // corner lists for the 6 tets, oriented once on the reference cube
            std::array<std::array<int, 4>, 6> local {};
            auto corner = [](int b) { return Vec3(b & 1, (b >> 1) & 1, (b >> 2) & 1); };
            for (std::size_t t = 0; t < 6; ++t)
            {
                int bits = 0;
                local[t][0] = 0;
                for (std::size_t s = 0; s < 3; ++s)
                {
                    bits |= 1 << kPerms[t][s];
                    local[t][s + 1] = bits;
                }
                const auto & c = local[t];
                if (signed_tet_volume(corner(c[0]), corner(c[1]), corner(c[2]), corner(c[3])) < 0.0)
                {
                    std::swap(local[t][2], local[t][3]);
                }
            }
            grid.tets.resize(Index(resolution) * resolution * resolution * 6, 4);
            Index t = 0;
            for (int k = 0; k < resolution; ++k)
            {
                for (int j = 0; j < resolution; ++j)
                {
                    for (int i = 0; i < resolution; ++i)
                    {
                        const int base = i + n * (j + n * k);
                        for (const auto & c : local)
                        {
                            for (std::size_t q = 0; q < 4; ++q)
                            {
                                grid.tets(t, Index(q)) = base + corner_offset(c[q], resolution);
                            }
                            ++t;
                        }
                    }
                }
            }
            return grid;
        }

        void finalize_active(TetGrid & grid)
        {
            std::vector<std::uint8_t> used(std::size_t(grid.num_vertices()), 0);
            for (Index t = 0; t < grid.num_tets(); ++t)
            {
                if (grid.active[std::size_t(t)])
                {
                    for (int q = 0; q < 4; ++q)
                    {
                        used[std::size_t(grid.tets(t, q))] = 1;
                    }
                }
            }
            grid.active_vertices.clear();
            for (std::size_t v = 0; v < used.size(); ++v)
            {
                if (used[v])
                {
                    grid.active_vertices.push_back(int(v));
                }
            }
        }

        double nudged(const VecX & sdf, int v)
        {
            const double s = sdf[v];
            return s == 0.0 ? kZeroNudge : s;
        }
    }  // namespace

    Index TetGrid::num_active() const
    {
        return Index(std::count(active.begin(), active.end(), std::uint8_t(1)));
    }

    TetGrid build_tet_grid(const Eigen::AlignedBox3d & bounds, int resolution)
    {
        TetGrid grid = lattice(bounds, resolution);
        grid.active.assign(std::size_t(grid.num_tets()), 1);
        finalize_active(grid);
        return grid;
    }

    TetGrid build_tet_grid(const Eigen::AlignedBox3d & bounds, int resolution, const std::function<double(const Vec3 &)> & sdf, double band)
    {
        require(band > 0.0, "tet grid band must be positive");
        TetGrid grid = lattice(bounds, resolution);
        grid.active.assign(std::size_t(grid.num_tets()), 0);
        const Vec3 step = (bounds.max() - bounds.min()) / resolution;
        const double half_diagonal = 0.5 * step.norm();
        for (int k = 0; k < resolution; ++k)
        {
            for (int j = 0; j < resolution; ++j)
            {
                for (int i = 0; i < resolution; ++i)
                {
                    const Vec3 center = bounds.min() + Vec3((i + 0.5) * step.x(), (j + 0.5) * step.y(), (k + 0.5) * step.z());
                    // distance is 1-Lipschitz, so the cube can only meet the band if this holds
                    if (std::abs(sdf(center)) <= band + half_diagonal)
                    {
                        const Index cube = i + Index(resolution) * (j + Index(resolution) * k);
                        std::fill_n(grid.active.begin() + cube * 6, 6, std::uint8_t(1));
                    }
                }
            }
        }
        finalize_active(grid);
        return grid;
    }

    TetGrid build_tet_grid(const Eigen::AlignedBox3d & bounds, int resolution, const TriMesh & body, double band)
    {
        const MeshDistance dist(body);
        return build_tet_grid(bounds, resolution, [&](const Vec3 & p) { return dist.signed_distance(p); }, band);
    }

    double tet_volume(const TetGrid & grid, Index tet)
    {
        return signed_tet_volume(grid.vertices.row(grid.tets(tet, 0)).transpose(), grid.vertices.row(grid.tets(tet, 1)).transpose(),
                                 grid.vertices.row(grid.tets(tet, 2)).transpose(), grid.vertices.row(grid.tets(tet, 3)).transpose());
    }

    int count_active_components(const TetGrid & grid)
    {
        std::vector<int> parent(std::size_t(grid.num_vertices()));
        std::iota(parent.begin(), parent.end(), 0);
        auto find = [&](int x)
        {
            while (parent[std::size_t(x)] != x)
            {
                parent[std::size_t(x)] = parent[std::size_t(parent[std::size_t(x)])];
                x = parent[std::size_t(x)];
            }
            return x;
        };
        for (Index t = 0; t < grid.num_tets(); ++t)
        {
            if (!grid.active[std::size_t(t)])
            {
                continue;
            }
            for (int q = 1; q < 4; ++q)
            {
                parent[std::size_t(find(grid.tets(t, q)))] = find(grid.tets(t, 0));
            }
        }
        int count = 0;
        for (int v : grid.active_vertices)
        {
            count += find(v) == v ? 1 : 0;
        }
        return count;
    }

    MtResult marching_tetrahedra(const TetGrid & grid, const VecX & sdf)
    {
        require(sdf.size() == grid.num_vertices(), "SDF sample count differs from grid vertex count");
        require(sdf.allFinite(), "SDF samples must be finite");
        MtResult out;
        std::unordered_map<std::uint64_t, int> edge_vertex;
        std::vector<Vec3> verts;
        std::vector<std::array<int, 3>> faces;

        using Edge = std::array<int, 2>;
        auto crossing = [&](const Edge & e)
        {
            const int lo = std::min(e[0], e[1]), hi = std::max(e[0], e[1]);
            const auto key = (std::uint64_t(hi) << 32) | std::uint64_t(lo);
            auto [it, inserted] = edge_vertex.emplace(key, int(verts.size()));
            if (inserted)
            {
                // canonical endpoint order so the position does not depend on visiting order
                verts.push_back(mt_crossing<double>(grid.vertices.row(lo).transpose(), grid.vertices.row(hi).transpose(), nudged(sdf, lo), nudged(sdf, hi)));
                out.edges.push_back({lo, hi});
            }
            return it->second;
        };
        // Winding is decided on edge midpoints: same orientation as the crossing
        // triangle but never degenerate, so slivers stay consistent.
        auto midpoint = [&](const Edge & e) -> Vec3 { return 0.5 * (grid.vertices.row(e[0]) + grid.vertices.row(e[1])).transpose(); };
        auto emit = [&](Edge e0, Edge e1, Edge e2, const Vec3 & toward_positive)
        {
            const Vec3 m0 = midpoint(e0);
            const Vec3 n = (midpoint(e1) - m0).cross(midpoint(e2) - m0);
            if (n.dot(toward_positive) < 0.0)
            {
                std::swap(e1, e2);
            }
            faces.push_back({crossing(e0), crossing(e1), crossing(e2)});
        };

        for (Index t = 0; t < grid.num_tets(); ++t)
        {
            if (!grid.active[std::size_t(t)])
            {
                continue;
            }
            int neg[4], pos[4];
            int nn = 0, np = 0;
            for (int q = 0; q < 4; ++q)
            {
                const int v = grid.tets(t, q);
                if (nudged(sdf, v) < 0.0)
                {
                    neg[nn++] = v;
                }
                else
                {
                    pos[np++] = v;
                }
            }
            if (nn == 0 || np == 0)
            {
                continue;
            }
            Vec3 dir = Vec3::Zero();
            for (int q = 0; q < np; ++q)
            {
                dir += grid.vertices.row(pos[q]).transpose() / np;
            }
            for (int q = 0; q < nn; ++q)
            {
                dir -= grid.vertices.row(neg[q]).transpose() / nn;
            }
            if (nn == 1 || np == 1)
            {
                const int lone = nn == 1 ? neg[0] : pos[0];
                const int * others = nn == 1 ? pos : neg;
                emit({lone, others[0]}, {lone, others[1]}, {lone, others[2]}, dir);
            }
            else
            {
                // quad cycle a-c, a-d, b-d, b-c
                const Edge q0 {neg[0], pos[0]}, q1 {neg[0], pos[1]}, q2 {neg[1], pos[1]}, q3 {neg[1], pos[0]};
                emit(q0, q1, q2, dir);
                emit(q0, q2, q3, dir);
            }
        }

        out.mesh.vertices.resize(Index(verts.size()), 3);
        for (std::size_t i = 0; i < verts.size(); ++i)
        {
            out.mesh.vertices.row(Index(i)) = verts[i].transpose();
        }
        out.mesh.faces.resize(Index(faces.size()), 3);
        for (std::size_t i = 0; i < faces.size(); ++i)
        {
            out.mesh.faces.row(Index(i)) << faces[i][0], faces[i][1], faces[i][2];
        }
        return out;
    }

    VecX marching_tetrahedra_backward(const TetGrid & grid, const VecX & sdf, const MtResult & mt, const MatX3 & grad_vertices)
    {
        require(grad_vertices.rows() == mt.mesh.num_vertices(), "vertex gradient count differs from MT mesh");
        VecX grad = VecX::Zero(grid.num_vertices());
        for (std::size_t i = 0; i < mt.edges.size(); ++i)
        {
            const auto [a, b] = mt.edges[i];
            const auto jac = mt_vertex_jacobian<double>(grid.vertices.row(a).transpose(), grid.vertices.row(b).transpose(), nudged(sdf, a), nudged(sdf, b));
            const Vec3 g = grad_vertices.row(Index(i)).transpose();
            grad[a] += g.dot(jac.d_sa);
            grad[b] += g.dot(jac.d_sb);
        }
        return grad;
    }
}  // namespace tryon
