#include "tryon/mesh_sdf.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <limits>
#include <numeric>
#include <unordered_map>

namespace tryon
{
    namespace
    {
        // closest feature on a triangle: 0 = face, 1..3 = vertex k-1, 4..6 = edge (k, k+1)
        struct ClosestPoint
        {
            Vec3 point;
            int feature = 0;
        };

        ClosestPoint closest_on_triangle(const Vec3 & p, const Vec3 & a, const Vec3 & b, const Vec3 & c)
        {
            const Vec3 ab = b - a, ac = c - a, ap = p - a;
            const double d1 = ab.dot(ap), d2 = ac.dot(ap);
            if (d1 <= 0.0 && d2 <= 0.0)
            {
                return {a, 1};
            }
            const Vec3 bp = p - b;
            const double d3 = ab.dot(bp), d4 = ac.dot(bp);
            if (d3 >= 0.0 && d4 <= d3)
            {
                return {b, 2};
            }
            const double vc = d1 * d4 - d3 * d2;
            if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0)
            {
                const double v = d1 / (d1 - d3);
                return {a + v * ab, 4};
            }
            const Vec3 cp = p - c;
            const double d5 = ab.dot(cp), d6 = ac.dot(cp);
            if (d6 >= 0.0 && d5 <= d6)
            {
                return {c, 3};
            }
            const double vb = d5 * d2 - d1 * d6;
            if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0)
            {
                const double w = d2 / (d2 - d6);
                return {a + w * ac, 6};
            }
            const double va = d3 * d6 - d5 * d4;
            if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
            {
                const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
                return {b + w * (c - b), 5};
            }
            const double denom = 1.0 / (va + vb + vc);
            const double v = vb * denom, w = vc * denom;
            return {a + ab * v + ac * w, 0};
        }

        std::uint64_t edge_key(int a, int b)
        {
            return (std::uint64_t(std::max(a, b)) << 32) | std::uint64_t(std::min(a, b));
        }

        struct Node
        {
            Eigen::AlignedBox3d box;
            int left = -1, right = -1;
            int begin = 0, end = 0;  // leaf triangle range into order
        };
    }  // namespace

    struct MeshDistance::Impl
    {
        TriMesh mesh;
        MatX3 face_normals;    // unit
        MatX3 vertex_normals;  // angle weighted
        std::unordered_map<std::uint64_t, Vec3> edge_normals;
        std::vector<int> order;
        std::vector<Node> nodes;
        std::vector<Eigen::AlignedBox3d> tri_boxes;

        int build(int begin, int end)
        {
            Node node;
            for (int i = begin; i < end; ++i)
            {
                node.box.extend(tri_boxes[std::size_t(order[std::size_t(i)])]);
            }
            const int id = int(nodes.size());
            nodes.push_back(node);
            if (end - begin <= 4)
            {
                nodes[std::size_t(id)].begin = begin;
                nodes[std::size_t(id)].end = end;
                return id;
            }
            Eigen::Index axis = 0;
            (node.box.max() - node.box.min()).maxCoeff(&axis);
            const int mid = (begin + end) / 2;
            std::nth_element(order.begin() + begin, order.begin() + mid, order.begin() + end,
                             [&](int x, int y)
                             {
                                 const double cx = tri_boxes[std::size_t(x)].center()[axis];
                                 const double cy = tri_boxes[std::size_t(y)].center()[axis];
                                 return cx < cy || (cx == cy && x < y);
                             });
            const int l = build(begin, mid);
            const int r = build(mid, end);
            nodes[std::size_t(id)].left = l;
            nodes[std::size_t(id)].right = r;
            return id;
        }

        struct Hit
        {
            double dist2 = std::numeric_limits<double>::infinity();
            int face = -1;
            ClosestPoint cp;
        };

        void query(int node_id, const Vec3 & p, Hit & hit) const
        {
            const Node & node = nodes[std::size_t(node_id)];
            if (node.box.squaredExteriorDistance(p) > hit.dist2)
            {
                return;
            }
            if (node.left < 0)
            {
                for (int i = node.begin; i < node.end; ++i)
                {
                    const int f = order[std::size_t(i)];
                    const Vec3 a = mesh.vertices.row(mesh.faces(f, 0));
                    const Vec3 b = mesh.vertices.row(mesh.faces(f, 1));
                    const Vec3 c = mesh.vertices.row(mesh.faces(f, 2));
                    const ClosestPoint cp = closest_on_triangle(p, a, b, c);
                    const double d2 = (p - cp.point).squaredNorm();
                    if (d2 < hit.dist2 || (d2 == hit.dist2 && f < hit.face))
                    {
                        hit = {d2, f, cp};
                    }
                }
                return;
            }
            const double dl = nodes[std::size_t(node.left)].box.squaredExteriorDistance(p);
            const double dr = nodes[std::size_t(node.right)].box.squaredExteriorDistance(p);
            if (dl <= dr)
            {
                query(node.left, p, hit);
                query(node.right, p, hit);
            }
            else
            {
                query(node.right, p, hit);
                query(node.left, p, hit);
            }
        }

        Hit closest(const Vec3 & p) const
        {
            Hit hit;
            query(0, p, hit);
            return hit;
        }

        Vec3 pseudonormal(const Hit & hit) const
        {
            const int f = hit.face;
            switch (hit.cp.feature)
            {
            case 0:
                return face_normals.row(f).transpose();
            case 1:
            case 2:
            case 3:
                return vertex_normals.row(mesh.faces(f, hit.cp.feature - 1)).transpose();
            default:
            {
                const int k = hit.cp.feature - 4;
                const auto it = edge_normals.find(edge_key(mesh.faces(f, k), mesh.faces(f, (k + 1) % 3)));
                return it == edge_normals.end() ? Vec3(face_normals.row(f).transpose()) : it->second;
            }
            }
        }
    };

    MeshDistance::MeshDistance(const TriMesh & mesh) : impl_(std::make_unique<Impl>())
    {
        require(!mesh.empty(), "signed distance requires a non-empty mesh");
        validate_indices(mesh);
        Impl & m = *impl_;
        m.mesh = mesh;
        m.face_normals = face_area_normals(mesh);
        for (Index f = 0; f < m.face_normals.rows(); ++f)
        {
            const double len = m.face_normals.row(f).norm();
            if (len > 0.0)
            {
                m.face_normals.row(f) /= len;
            }
        }
        m.vertex_normals = vertex_normals_angle(mesh);
        for (Index f = 0; f < mesh.num_faces(); ++f)
        {
            for (int k = 0; k < 3; ++k)
            {
                auto & n = m.edge_normals.try_emplace(edge_key(mesh.faces(f, k), mesh.faces(f, (k + 1) % 3)), Vec3::Zero()).first->second;
                n += m.face_normals.row(f).transpose();
            }
        }
        m.tri_boxes.resize(std::size_t(mesh.num_faces()));
        for (Index f = 0; f < mesh.num_faces(); ++f)
        {
            auto & box = m.tri_boxes[std::size_t(f)];
            for (int k = 0; k < 3; ++k)
            {
                box.extend(Vec3(mesh.vertices.row(mesh.faces(f, k)).transpose()));
            }
        }
        m.order.resize(std::size_t(mesh.num_faces()));
        std::iota(m.order.begin(), m.order.end(), 0);
        m.nodes.reserve(std::size_t(mesh.num_faces()) / 2 + 1);
        m.build(0, int(mesh.num_faces()));
    }

    MeshDistance::~MeshDistance() = default;
    MeshDistance::MeshDistance(MeshDistance &&) noexcept = default;
    MeshDistance & MeshDistance::operator=(MeshDistance &&) noexcept = default;

    double MeshDistance::unsigned_distance(const Vec3 & point) const
    {
        return std::sqrt(impl_->closest(point).dist2);
    }

    double MeshDistance::signed_distance(const Vec3 & point) const
    {
        const auto hit = impl_->closest(point);
        const double dist = std::sqrt(hit.dist2);
        if (dist == 0.0)
        {
            return 0.0;
        }
        const double side = (point - hit.cp.point).dot(impl_->pseudonormal(hit));
        return side < 0.0 ? -dist : dist;
    }

    VecX MeshDistance::signed_distances(const MatX3 & points) const
    {
        VecX out(points.rows());
        for (Index i = 0; i < points.rows(); ++i)
        {
            out[i] = signed_distance(Vec3(points.row(i).transpose()));
        }
        return out;
    }

    double mesh_signed_distance(const TriMesh & mesh, const Vec3 & point)
    {
        return MeshDistance(mesh).signed_distance(point);
    }
}  // namespace tryon
