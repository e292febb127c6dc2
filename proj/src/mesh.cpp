#include "tryon/mesh.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace tryon
{
    namespace
    {
        std::uint64_t edge_key(int a, int b)
        {
            const auto lo = std::uint64_t(std::min(a, b));
            const auto hi = std::uint64_t(std::max(a, b));
            return (hi << 32) | lo;
        }

        struct UnionFind
        {
            std::vector<int> parent;
            explicit UnionFind(Index n) : parent(std::size_t(n)) { std::iota(parent.begin(), parent.end(), 0); }
            int find(int x)
            {
                while (parent[std::size_t(x)] != x)
                {
                    parent[std::size_t(x)] = parent[std::size_t(parent[std::size_t(x)])];
                    x = parent[std::size_t(x)];
                }
                return x;
            }
            void unite(int a, int b) { parent[std::size_t(find(a))] = find(b); }
        };
    }  // namespace

    void validate_indices(const TriMesh & mesh)
    {
        if (mesh.faces.size() == 0)
        {
            return;
        }
        require(mesh.faces.minCoeff() >= 0 && mesh.faces.maxCoeff() < mesh.num_vertices(), "mesh face index out of range");
        require(mesh.colors.rows() == 0 || mesh.colors.rows() == mesh.num_vertices(), "mesh color count differs from vertex count");
    }

    bool is_watertight(const TriMesh & mesh)
    {
        if (mesh.empty())
        {
            return false;
        }
        // directed edge counts: each undirected edge must appear once in each direction
        std::unordered_map<std::uint64_t, int> balance;
        std::unordered_map<std::uint64_t, int> uses;
        balance.reserve(std::size_t(mesh.num_faces()) * 3);
        for (Index f = 0; f < mesh.num_faces(); ++f)
        {
            for (int k = 0; k < 3; ++k)
            {
                const int a = mesh.faces(f, k);
                const int b = mesh.faces(f, (k + 1) % 3);
                if (a == b)
                {
                    return false;
                }
                const auto key = edge_key(a, b);
                balance[key] += a < b ? 1 : -1;
                uses[key] += 1;
            }
        }
        for (const auto & [key, n] : uses)
        {
            if (n != 2 || balance[key] != 0)
            {
                return false;
            }
        }
        return true;
    }

    int count_face_components(const TriMesh & mesh)
    {
        UnionFind uf(mesh.num_faces());
        std::unordered_map<std::uint64_t, int> first_face;
        for (Index f = 0; f < mesh.num_faces(); ++f)
        {
            for (int k = 0; k < 3; ++k)
            {
                const auto key = edge_key(mesh.faces(f, k), mesh.faces(f, (k + 1) % 3));
                auto [it, inserted] = first_face.emplace(key, int(f));
                if (!inserted)
                {
                    uf.unite(int(f), it->second);
                }
            }
        }
        int count = 0;
        for (Index f = 0; f < mesh.num_faces(); ++f)
        {
            count += uf.find(int(f)) == int(f) ? 1 : 0;
        }
        return count;
    }

    double signed_volume(const TriMesh & mesh)
    {
        double vol = 0.0;
        for (Index f = 0; f < mesh.num_faces(); ++f)
        {
            const Vec3 a = mesh.vertices.row(mesh.faces(f, 0));
            const Vec3 b = mesh.vertices.row(mesh.faces(f, 1));
            const Vec3 c = mesh.vertices.row(mesh.faces(f, 2));
            vol += a.dot(b.cross(c));
        }
        return vol / 6.0;
    }

    double surface_area(const TriMesh & mesh)
    {
        return 0.5 * face_area_normals(mesh).rowwise().norm().sum();
    }

    MatX3 face_area_normals(const TriMesh & mesh)
    {
        MatX3 n(mesh.num_faces(), 3);
        for (Index f = 0; f < mesh.num_faces(); ++f)
        {
            const Vec3 a = mesh.vertices.row(mesh.faces(f, 0));
            const Vec3 b = mesh.vertices.row(mesh.faces(f, 1));
            const Vec3 c = mesh.vertices.row(mesh.faces(f, 2));
            n.row(f) = (b - a).cross(c - a).transpose();
        }
        return n;
    }

    MatX3 vertex_normals_area(const TriMesh & mesh)
    {
        const MatX3 fn = face_area_normals(mesh);
        MatX3 vn = MatX3::Zero(mesh.num_vertices(), 3);
        for (Index f = 0; f < mesh.num_faces(); ++f)
        {
            for (int k = 0; k < 3; ++k)
            {
                vn.row(mesh.faces(f, k)) += fn.row(f);
            }
        }
        for (Index v = 0; v < vn.rows(); ++v)
        {
            const double len = vn.row(v).norm();
            if (len > 0.0)
            {
                vn.row(v) /= len;
            }
        }
        return vn;
    }

    MatX3 vertex_normals_area_backward(const TriMesh & mesh, const MatX3 & grad_normals)
    {
        // raw accumulated normals
        const MatX3 fn = face_area_normals(mesh);
        MatX3 raw = MatX3::Zero(mesh.num_vertices(), 3);
        for (Index f = 0; f < mesh.num_faces(); ++f)
        {
            for (int k = 0; k < 3; ++k)
            {
                raw.row(mesh.faces(f, k)) += fn.row(f);
            }
        }
        // d normalize(r) / dr = (I - n n^T) / |r|
        MatX3 grad_raw = MatX3::Zero(raw.rows(), 3);
        for (Index v = 0; v < raw.rows(); ++v)
        {
            const double len = raw.row(v).norm();
            if (len <= 0.0)
            {
                continue;
            }
            const Vec3 n = raw.row(v).transpose() / len;
            const Vec3 g = grad_normals.row(v).transpose();
            grad_raw.row(v) = ((g - n * n.dot(g)) / len).transpose();
        }
        // face normal = (b - a) x (c - a); grad wrt a, b, c
        MatX3 grad_v = MatX3::Zero(mesh.num_vertices(), 3);
        for (Index f = 0; f < mesh.num_faces(); ++f)
        {
            const int ia = mesh.faces(f, 0), ib = mesh.faces(f, 1), ic = mesh.faces(f, 2);
            const Vec3 gf = (grad_raw.row(ia) + grad_raw.row(ib) + grad_raw.row(ic)).transpose();
            const Vec3 a = mesh.vertices.row(ia);
            const Vec3 b = mesh.vertices.row(ib);
            const Vec3 c = mesh.vertices.row(ic);
            const Vec3 e1 = b - a, e2 = c - a;
            // d(e1 x e2)^T g: wrt e1 -> e2 x g ; wrt e2 -> g x e1
            const Vec3 ge1 = e2.cross(gf);
            const Vec3 ge2 = gf.cross(e1);
            grad_v.row(ib) += ge1.transpose();
            grad_v.row(ic) += ge2.transpose();
            grad_v.row(ia) -= (ge1 + ge2).transpose();
        }
        return grad_v;
    }

    MatX3 vertex_normals_angle(const TriMesh & mesh)
    {
        MatX3 vn = MatX3::Zero(mesh.num_vertices(), 3);
        for (Index f = 0; f < mesh.num_faces(); ++f)
        {
            const Vec3 p[3] = {mesh.vertices.row(mesh.faces(f, 0)), mesh.vertices.row(mesh.faces(f, 1)), mesh.vertices.row(mesh.faces(f, 2))};
            Vec3 n = (p[1] - p[0]).cross(p[2] - p[0]);
            const double len = n.norm();
            if (len <= 0.0)
            {
                continue;
            }
            n /= len;
            for (int k = 0; k < 3; ++k)
            {
                const Vec3 u = p[(k + 1) % 3] - p[k];
                const Vec3 w = p[(k + 2) % 3] - p[k];
                const double angle = std::atan2(u.cross(w).norm(), u.dot(w));
                vn.row(mesh.faces(f, k)) += angle * n.transpose();
            }
        }
        for (Index v = 0; v < vn.rows(); ++v)
        {
            const double len = vn.row(v).norm();
            if (len > 0.0)
            {
                vn.row(v) /= len;
            }
        }
        return vn;
    }

    std::vector<std::vector<int>> vertex_neighbors(const TriMesh & mesh)
    {
        std::vector<std::vector<int>> nbrs(std::size_t(mesh.num_vertices()));
        for (Index f = 0; f < mesh.num_faces(); ++f)
        {
            for (int k = 0; k < 3; ++k)
            {
                const int a = mesh.faces(f, k);
                const int b = mesh.faces(f, (k + 1) % 3);
                nbrs[std::size_t(a)].push_back(b);
                nbrs[std::size_t(b)].push_back(a);
            }
        }
        for (auto & list : nbrs)
        {
            std::sort(list.begin(), list.end());
            list.erase(std::unique(list.begin(), list.end()), list.end());
        }
        return nbrs;
    }

    Index euler_characteristic(const TriMesh & mesh)
    {
        std::unordered_map<std::uint64_t, int> edges;
        for (Index f = 0; f < mesh.num_faces(); ++f)
        {
            for (int k = 0; k < 3; ++k)
            {
                edges[edge_key(mesh.faces(f, k), mesh.faces(f, (k + 1) % 3))] = 1;
            }
        }
        return mesh.num_vertices() - Index(edges.size()) + mesh.num_faces();
    }

    TriMesh compact(const TriMesh & mesh)
    {
        std::vector<int> remap(std::size_t(mesh.num_vertices()), -1);
        int next = 0;
        for (Index f = 0; f < mesh.num_faces(); ++f)
        {
            for (int k = 0; k < 3; ++k)
            {
                auto & slot = remap[std::size_t(mesh.faces(f, k))];
                if (slot < 0)
                {
                    slot = next++;
                }
            }
        }
        TriMesh out;
        out.vertices.resize(next, 3);
        if (mesh.has_colors())
        {
            out.colors.resize(next, 3);
        }
        for (Index v = 0; v < mesh.num_vertices(); ++v)
        {
            const int r = remap[std::size_t(v)];
            if (r >= 0)
            {
                out.vertices.row(r) = mesh.vertices.row(v);
                if (mesh.has_colors())
                {
                    out.colors.row(r) = mesh.colors.row(v);
                }
            }
        }
        out.faces.resize(mesh.num_faces(), 3);
        for (Index f = 0; f < mesh.num_faces(); ++f)
        {
            for (int k = 0; k < 3; ++k)
            {
                out.faces(f, k) = remap[std::size_t(mesh.faces(f, k))];
            }
        }
        return out;
    }

    void write_obj(const TriMesh & mesh, const std::filesystem::path & path)
    {
        validate_indices(mesh);
        std::ofstream out(path);
        if (!out)
        {
            throw std::runtime_error("cannot open for writing: " + path.string());
        }
        char line[256];
        for (Index v = 0; v < mesh.num_vertices(); ++v)
        {
            if (mesh.has_colors())
            {
                std::snprintf(line, sizeof(line), "v %.9g %.9g %.9g %.6f %.6f %.6f\n", mesh.vertices(v, 0), mesh.vertices(v, 1), mesh.vertices(v, 2),
                              mesh.colors(v, 0), mesh.colors(v, 1), mesh.colors(v, 2));
            }
            else
            {
                std::snprintf(line, sizeof(line), "v %.9g %.9g %.9g\n", mesh.vertices(v, 0), mesh.vertices(v, 1), mesh.vertices(v, 2));
            }
            out << line;
        }
        for (Index f = 0; f < mesh.num_faces(); ++f)
        {
            out << "f " << mesh.faces(f, 0) + 1 << ' ' << mesh.faces(f, 1) + 1 << ' ' << mesh.faces(f, 2) + 1 << '\n';
        }
        if (!out)
        {
            throw std::runtime_error("write failed: " + path.string());
        }
    }

    TriMesh read_obj(const std::filesystem::path & path)
    {
        std::ifstream in(path);
        if (!in)
        {
            throw InvalidInput("cannot open mesh: " + path.string());
        }
        std::vector<std::array<double, 6>> verts;
        std::vector<std::array<int, 3>> faces;
        bool colored = true;
        std::string line;
        while (std::getline(in, line))
        {
            std::istringstream ss(line);
            std::string tag;
            ss >> tag;
            if (tag == "v")
            {
                std::array<double, 6> v {0, 0, 0, 0, 0, 0};
                ss >> v[0] >> v[1] >> v[2];
                require(!ss.fail(), "malformed vertex line in " + path.string());
                if (!(ss >> v[3] >> v[4] >> v[5]))
                {
                    colored = false;
                }
                verts.push_back(v);
            }
            else if (tag == "f")
            {
                std::array<int, 3> f {};
                for (int k = 0; k < 3; ++k)
                {
                    std::string tok;
                    ss >> tok;
                    require(!tok.empty(), "malformed face line in " + path.string());
                    f[std::size_t(k)] = std::stoi(tok.substr(0, tok.find('/'))) - 1;
                }
                faces.push_back(f);
            }
        }
        TriMesh mesh;
        mesh.vertices.resize(Index(verts.size()), 3);
        if (colored && !verts.empty())
        {
            mesh.colors.resize(Index(verts.size()), 3);
        }
        for (std::size_t i = 0; i < verts.size(); ++i)
        {
            for (int k = 0; k < 3; ++k)
            {
                mesh.vertices(Index(i), k) = verts[i][std::size_t(k)];
                if (colored)
                {
                    mesh.colors(Index(i), k) = verts[i][std::size_t(k) + 3];
                }
            }
        }
        mesh.faces.resize(Index(faces.size()), 3);
        for (std::size_t i = 0; i < faces.size(); ++i)
        {
            for (int k = 0; k < 3; ++k)
            {
                mesh.faces(Index(i), k) = faces[i][std::size_t(k)];
            }
        }
        validate_indices(mesh);
        return mesh;
    }

    TriMesh make_icosphere(int subdivisions, double radius)
    {
        const double t = (1.0 + std::sqrt(5.0)) / 2.0;
        std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                               {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
        std::vector<std::array<int, 3>> f = {{0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                                             {11, 10, 2}, {10, 7, 6}, {7, 1, 8}, {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8},
                                             {3, 8, 9}, {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
        for (auto & p : v)
        {
            p.normalize();
        }
        for (int s = 0; s < subdivisions; ++s)
        {
            std::map<std::pair<int, int>, int> mid;
            auto midpoint = [&](int a, int b)
            {
                const auto key = std::minmax(a, b);
                auto it = mid.find(key);
                if (it != mid.end())
                {
                    return it->second;
                }
                v.push_back((v[std::size_t(a)] + v[std::size_t(b)]).normalized());
                const int idx = int(v.size()) - 1;
                mid.emplace(key, idx);
                return idx;
            };
            std::vector<std::array<int, 3>> next;
            next.reserve(f.size() * 4);
            for (const auto & tri : f)
            {
                const int a = midpoint(tri[0], tri[1]);
                const int b = midpoint(tri[1], tri[2]);
                const int c = midpoint(tri[2], tri[0]);
                next.push_back({tri[0], a, c});
                next.push_back({tri[1], b, a});
                next.push_back({tri[2], c, b});
                next.push_back({a, b, c});
            }
            f = std::move(next);
        }
        TriMesh mesh;
        mesh.vertices.resize(Index(v.size()), 3);
        for (std::size_t i = 0; i < v.size(); ++i)
        {
            mesh.vertices.row(Index(i)) = radius * v[i].transpose();
        }
        mesh.faces.resize(Index(f.size()), 3);
        for (std::size_t i = 0; i < f.size(); ++i)
        {
            mesh.faces.row(Index(i)) << f[i][0], f[i][1], f[i][2];
        }
        return mesh;
    }
}  // namespace tryon
