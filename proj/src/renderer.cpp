#include "tryon/renderer.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <tuple>

namespace tryon
{
    namespace
    {
        // triangles farther than this many sigmas outside a pixel are dropped from its mask product
        constexpr double kMaskCutoff = 9.0;
        constexpr double kNear = 1e-6;

        double radians(double deg)
        {
            return deg * std::numbers::pi / 180.0;
        }

        double cross2(const Vec2 & u, const Vec2 & v)
        {
            return u.x() * v.y() - u.y() * v.x();
        }

        // twice the signed area of (a, b, c)
        double area2(const Vec2 & a, const Vec2 & b, const Vec2 & c)
        {
            return cross2(b - a, c - a);
        }

        // gradients of area2 with respect to a, b, c
        std::array<Vec2, 3> area2_grad(const Vec2 & a, const Vec2 & b, const Vec2 & c)
        {
            return {Vec2(b.y() - c.y(), c.x() - b.x()), Vec2(c.y() - a.y(), a.x() - c.x()), Vec2(a.y() - b.y(), b.x() - a.x())};
        }

        double softplus(double x)
        {
            return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
        }

        double sigmoid(double x)
        {
            return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        }

        struct Boundary
        {
            double d = 0.0;                // positive inside
            std::array<Vec2, 3> grad {Vec2::Zero(), Vec2::Zero(), Vec2::Zero()};  // dd / d(corner)
        };

        // signed distance from p to the triangle boundary, with its gradient in the corners
        Boundary boundary_distance(const Vec2 & p, const std::array<Vec2, 3> & v)
        {
            const double area = area2(v[0], v[1], v[2]);
            bool inside = false;
            if (area != 0.0)
            {
                const double s = area > 0.0 ? 1.0 : -1.0;
                inside = s * area2(p, v[1], v[2]) >= 0.0 && s * area2(v[0], p, v[2]) >= 0.0 && s * area2(v[0], v[1], p) >= 0.0;
            }
            double best = std::numeric_limits<double>::infinity();
            int edge = 0;
            double best_t = 0.0;
            Vec2 best_n = Vec2::Zero();
            for (int e = 0; e < 3; ++e)
            {
                const Vec2 & a = v[std::size_t(e)];
                const Vec2 & b = v[std::size_t((e + 1) % 3)];
                const Vec2 ab = b - a;
                const double len2 = ab.squaredNorm();
                const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
                const Vec2 diff = p - (a + t * ab);
                const double dist = diff.norm();
                if (dist < best)
                {
                    best = dist;
                    edge = e;
                    best_t = t;
                    best_n = dist > 0.0 ? Vec2(diff / dist) : Vec2::Zero();
                }
            }
            Boundary out;
            const double sign = inside ? 1.0 : -1.0;
            out.d = sign * best;
            out.grad[std::size_t(edge)] = -sign * (1.0 - best_t) * best_n;
            out.grad[std::size_t((edge + 1) % 3)] = -sign * best_t * best_n;
            return out;
        }

        struct Projected
        {
            std::vector<Vec2> screen;
            VecX depth;
            std::vector<std::uint8_t> visible;  // in front of the near plane
        };

        Projected project_all(const TriMesh & mesh, const View & view)
        {
            Projected p;
            p.screen.resize(std::size_t(mesh.num_vertices()));
            p.depth.resize(mesh.num_vertices());
            p.visible.resize(std::size_t(mesh.num_vertices()));
            for (Index i = 0; i < mesh.num_vertices(); ++i)
            {
                const Vec3 c = view.to_camera(mesh.vertices.row(i).transpose());
                p.depth[i] = c.z();
                p.visible[std::size_t(i)] = c.z() > kNear ? 1 : 0;
                p.screen[std::size_t(i)] = p.visible[std::size_t(i)] ? view.project(mesh.vertices.row(i).transpose()) : Vec2::Zero();
            }
            return p;
        }

        struct PixelRange
        {
            int r0, r1, c0, c1;  // inclusive
            bool empty() const { return r0 > r1 || c0 > c1; }
        };

        // pixels whose centers lie within the corner bounding box grown by `pad`
        PixelRange pixel_range(const std::array<Vec2, 3> & v, double pad, int res)
        {
            double xmin = std::min({v[0].x(), v[1].x(), v[2].x()}) - pad;
            double xmax = std::max({v[0].x(), v[1].x(), v[2].x()}) + pad;
            double ymin = std::min({v[0].y(), v[1].y(), v[2].y()}) - pad;
            double ymax = std::max({v[0].y(), v[1].y(), v[2].y()}) + pad;
            PixelRange r;
            r.c0 = std::max(0, int(std::ceil(xmin - 0.5)));
            r.c1 = std::min(res - 1, int(std::floor(xmax - 0.5)));
            r.r0 = std::max(0, int(std::ceil(ymin - 0.5)));
            r.r1 = std::min(res - 1, int(std::floor(ymax - 0.5)));
            if (xmax < 0.0 || ymax < 0.0 || xmin > res || ymin > res)
            {
                r.r0 = 1;
                r.r1 = 0;
            }
            return r;
        }

        std::array<int, 3> corners(const TriMesh & mesh, Index f)
        {
            return {mesh.faces(f, 0), mesh.faces(f, 1), mesh.faces(f, 2)};
        }

        bool face_visible(const Projected & p, const std::array<int, 3> & idx)
        {
            return p.visible[std::size_t(idx[0])] && p.visible[std::size_t(idx[1])] && p.visible[std::size_t(idx[2])];
        }

        // signed edge value of p against the directed edge i->j, evaluated in index order so a shared edge gives exactly negated values
        double edge_value(const Projected & p, int i, int j, const Vec2 & q)
        {
            const Vec2 & a = p.screen[std::size_t(std::min(i, j))];
            const Vec2 & b = p.screen[std::size_t(std::max(i, j))];
            const double e = area2(a, b, q);
            return i < j ? e : -e;
        }

        std::array<Vec2, 3> screen_corners(const Projected & p, const std::array<int, 3> & idx)
        {
            return {p.screen[std::size_t(idx[0])], p.screen[std::size_t(idx[1])], p.screen[std::size_t(idx[2])]};
        }

        Vec3 camera_normal(const View & view, const Vec3 & n)
        {
            return {n.dot(view.right), n.dot(view.up), -n.dot(view.forward)};
        }

        Vec3 vertex_color(const TriMesh & mesh, int v)
        {
            return mesh.has_colors() ? Vec3(mesh.colors.row(v).transpose()) : Vec3::Ones();
        }
    }  // namespace

    void Camera::validate() const
    {
        require(fov > 0.0 && fov < 180.0, "camera fov must lie in (0, 180) degrees");
        require(resolution >= 32, "camera resolution must be at least 32");
        require(radius > 0.0, "camera radius must be positive");
        if (tag == CameraTag::Front)
        {
            require(azimuth == 0.0 && elevation == 0.0, "front camera must have azimuth 0 and elevation 0");
        }
        if (tag == CameraTag::Back)
        {
            require(azimuth == 180.0 && elevation == 0.0, "back camera must have azimuth 180 and elevation 0");
        }
    }

    Camera front_camera(int resolution)
    {
        Camera c;
        c.resolution = resolution;
        c.tag = CameraTag::Front;
        return c;
    }

    Camera back_camera(int resolution)
    {
        Camera c;
        c.azimuth = 180.0;
        c.resolution = resolution;
        c.tag = CameraTag::Back;
        return c;
    }

    Camera sample_camera(Stage stage, CameraTag mode, std::uint64_t seed, int resolution, const CameraRanges & ranges)
    {
        Camera c = mode == CameraTag::Back ? back_camera(resolution) : front_camera(resolution);
        c.radius = ranges.radius;
        c.fov = ranges.fov;
        if (mode == CameraTag::Random)
        {
            require(ranges.elevation_min <= ranges.elevation_max, "camera elevation range is inverted");
            // the stage salts the stream so both stages see different poses for one seed
            std::mt19937_64 rng(seed ^ (stage == Stage::Geometry ? 0x9e3779b97f4a7c15ULL : 0xc2b2ae3d27d4eb4fULL));
            std::uniform_real_distribution<double> az(0.0, 360.0);
            std::uniform_real_distribution<double> el(ranges.elevation_min, ranges.elevation_max);
            c.azimuth = az(rng);
            c.elevation = el(rng);
            c.tag = CameraTag::Random;
        }
        c.validate();
        return c;
    }

    View::View(const Camera & camera)
    {
        camera.validate();
        const double az = radians(camera.azimuth), el = radians(camera.elevation);
        eye = camera.radius * Vec3(std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az));
        forward = (-eye).normalized();
        right = forward.cross(Vec3::UnitY()).normalized();
        up = right.cross(forward);
        resolution = camera.resolution;
        center = 0.5 * camera.resolution;
        focal = center / std::tan(0.5 * radians(camera.fov));
    }

    Vec3 View::to_camera(const Vec3 & p) const
    {
        const Vec3 d = p - eye;
        return {d.dot(right), d.dot(up), d.dot(forward)};
    }

    Vec2 View::project(const Vec3 & p) const
    {
        const Vec3 c = to_camera(p);
        return {center + focal * c.x() / c.z(), center - focal * c.y() / c.z()};
    }

    Eigen::Matrix<double, 2, 3> View::project_jacobian(const Vec3 & p) const
    {
        const Vec3 c = to_camera(p);
        const double iz = 1.0 / c.z();
        Eigen::Matrix<double, 2, 3> j;
        j.row(0) = focal * (right * iz - forward * (c.x() * iz * iz)).transpose();
        j.row(1) = -focal * (up * iz - forward * (c.y() * iz * iz)).transpose();
        return j;
    }

    RenderOutput rasterize(const TriMesh & mesh, const Camera & camera, double sharpness)
    {
        require(sharpness > 0.0, "raster sharpness must be positive");
        const View view(camera);
        const int res = camera.resolution;
        const Index npix = Index(res) * res;
        RenderOutput out;
        out.sharpness = sharpness;
        out.mask = Image(res, res, 1, 0.0);
        out.normal = Image(res, res, 3, 0.5);
        out.normal.data.col(2).setOnes();
        out.color = Image(res, res, 3, 0.0);
        out.face.assign(std::size_t(npix), -1);
        out.bary = MatX::Zero(npix, 3);
        if (mesh.empty())
        {
            return out;
        }
        validate_indices(mesh);
        const Projected proj = project_all(mesh, view);

        // soft silhouette: accumulate sum_j log(1 - sigmoid(d_j / sigma)) = -sum_j softplus(d_j / sigma)
        VecX log_empty = VecX::Zero(npix);
        const double pad = kMaskCutoff * sharpness;
        // shifted so each term vanishes at the cutoff and the mask stays continuous in the vertices
        const double cutoff_tail = softplus(-kMaskCutoff);
        for (Index f = 0; f < mesh.num_faces(); ++f)
        {
            const auto idx = corners(mesh, f);
            if (!face_visible(proj, idx))
            {
                continue;
            }
            const auto v = screen_corners(proj, idx);
            const PixelRange r = pixel_range(v, pad, res);
            for (int row = r.r0; row <= r.r1; ++row)
            {
                for (int col = r.c0; col <= r.c1; ++col)
                {
                    const double d = boundary_distance(Vec2(col + 0.5, row + 0.5), v).d;
                    if (d >= -pad)
                    {
                        log_empty[Index(row) * res + col] -= softplus(d / sharpness) - cutoff_tail;
                    }
                }
            }
        }
        out.mask.data.col(0) = 1.0 - log_empty.array().exp();

        // hard pass: nearest front-facing triangle, ties broken by sorted corner indices
        VecX best_depth = VecX::Constant(npix, std::numeric_limits<double>::infinity());
        std::vector<std::array<int, 3>> best_key(static_cast<std::size_t>(npix));
        const MatX3 fn = face_area_normals(mesh);
        for (Index f = 0; f < mesh.num_faces(); ++f)
        {
            const auto idx = corners(mesh, f);
            if (!face_visible(proj, idx))
            {
                continue;
            }
            const Vec3 a = mesh.vertices.row(idx[0]).transpose();
            if (fn.row(f).dot((view.eye - a).transpose()) <= 0.0)
            {
                continue;
            }
            const auto v = screen_corners(proj, idx);
            const double area = area2(v[0], v[1], v[2]);
            if (area == 0.0)
            {
                continue;
            }
            auto key = idx;
            std::sort(key.begin(), key.end());
            const PixelRange r = pixel_range(v, 0.0, res);
            for (int row = r.r0; row <= r.r1; ++row)
            {
                for (int col = r.c0; col <= r.c1; ++col)
                {
                    const Vec2 p(col + 0.5, row + 0.5);
                    const Vec3 e(edge_value(proj, idx[1], idx[2], p), edge_value(proj, idx[2], idx[0], p), edge_value(proj, idx[0], idx[1], p));
                    if ((area > 0.0 ? e.minCoeff() : -e.maxCoeff()) < 0.0)
                    {
                        continue;
                    }
                    const Vec3 b = e / area;
                    const double depth = b[0] * proj.depth[idx[0]] + b[1] * proj.depth[idx[1]] + b[2] * proj.depth[idx[2]];
                    const Index pix = Index(row) * res + col;
                    if (std::tie(depth, key) < std::tie(best_depth[pix], best_key[std::size_t(pix)]))
                    {
                        best_depth[pix] = depth;
                        best_key[std::size_t(pix)] = key;
                        out.face[std::size_t(pix)] = int(f);
                        out.bary.row(pix) = b.transpose();
                    }
                }
            }
        }

        const MatX3 vn = vertex_normals_area(mesh);
        for (Index pix = 0; pix < npix; ++pix)
        {
            const int f = out.face[std::size_t(pix)];
            if (f < 0)
            {
                continue;
            }
            const auto idx = corners(mesh, f);
            Vec3 n = Vec3::Zero(), c = Vec3::Zero();
            for (int k = 0; k < 3; ++k)
            {
                n += out.bary(pix, k) * vn.row(idx[std::size_t(k)]).transpose();
                c += out.bary(pix, k) * vertex_color(mesh, idx[std::size_t(k)]);
            }
            const double len = n.norm();
            const Vec3 nc = len > 0.0 ? camera_normal(view, n / len) : Vec3::UnitZ();
            out.normal.data.row(pix) = (0.5 * nc.array() + 0.5).matrix().transpose();
            out.color.data.row(pix) = c.transpose();
        }
        return out;
    }

    RenderGrad rasterize_backward(const TriMesh & mesh, const Camera & camera, const RenderOutput & out, const Image * grad_mask, const Image * grad_normal,
                                  const Image * grad_color)
    {
        const View view(camera);
        const int res = camera.resolution;
        const Index npix = Index(res) * res;
        RenderGrad g;
        g.vertices = MatX3::Zero(mesh.num_vertices(), 3);
        g.colors = MatX3::Zero(mesh.num_vertices(), 3);
        require(out.resolution() == res, "render output does not match the camera");
        auto check = [&](const Image * img, int channels, const char * name)
        {
            if (img)
            {
                require(img->height == res && img->width == res && img->channels() == channels, std::string(name) + " gradient has the wrong shape");
            }
        };
        check(grad_mask, 1, "mask");
        check(grad_normal, 3, "normal");
        check(grad_color, 3, "color");
        if (mesh.empty())
        {
            return g;
        }
        const Projected proj = project_all(mesh, view);
        MatX screen_grad = MatX::Zero(mesh.num_vertices(), 2);
        const double sigma = out.sharpness;

        if (grad_mask)
        {
            const double pad = kMaskCutoff * sigma;
            for (Index f = 0; f < mesh.num_faces(); ++f)
            {
                const auto idx = corners(mesh, f);
                if (!face_visible(proj, idx))
                {
                    continue;
                }
                const auto v = screen_corners(proj, idx);
                const PixelRange r = pixel_range(v, pad, res);
                for (int row = r.r0; row <= r.r1; ++row)
                {
                    for (int col = r.c0; col <= r.c1; ++col)
                    {
                        const Index pix = Index(row) * res + col;
                        const double gm = grad_mask->data(pix, 0);
                        if (gm == 0.0)
                        {
                            continue;
                        }
                        const Boundary bd = boundary_distance(Vec2(col + 0.5, row + 0.5), v);
                        if (bd.d < -pad)
                        {
                            continue;
                        }
                        // d mask / d d_j = (1 - mask) sigmoid(d_j / sigma) / sigma
                        const double coeff = gm * (1.0 - out.mask.data(pix, 0)) * sigmoid(bd.d / sigma) / sigma;
                        for (int k = 0; k < 3; ++k)
                        {
                            screen_grad.row(idx[std::size_t(k)]) += coeff * bd.grad[std::size_t(k)].transpose();
                        }
                    }
                }
            }
        }

        if (grad_normal || grad_color)
        {
            const MatX3 vn = vertex_normals_area(mesh);
            MatX3 normal_grad = MatX3::Zero(mesh.num_vertices(), 3);
            for (Index pix = 0; pix < npix; ++pix)
            {
                const int f = out.face[std::size_t(pix)];
                if (f < 0)
                {
                    continue;
                }
                const auto idx = corners(mesh, f);
                const Vec3 b = out.bary.row(pix).transpose();
                Vec3 gb = Vec3::Zero();  // dL / d barycentric
                if (grad_normal)
                {
                    Vec3 n = Vec3::Zero();
                    for (int k = 0; k < 3; ++k)
                    {
                        n += b[k] * vn.row(idx[std::size_t(k)]).transpose();
                    }
                    const double len = n.norm();
                    if (len > 0.0)
                    {
                        const Vec3 ge = 0.5 * grad_normal->data.row(pix).transpose();
                        const Vec3 gw = view.right * ge.x() + view.up * ge.y() - view.forward * ge.z();
                        const Vec3 unit = n / len;
                        const Vec3 gn = (gw - unit * unit.dot(gw)) / len;
                        for (int k = 0; k < 3; ++k)
                        {
                            normal_grad.row(idx[std::size_t(k)]) += b[k] * gn.transpose();
                            gb[k] += vn.row(idx[std::size_t(k)]).dot(gn);
                        }
                    }
                }
                if (grad_color)
                {
                    const Vec3 gc = grad_color->data.row(pix).transpose();
                    for (int k = 0; k < 3; ++k)
                    {
                        if (mesh.has_colors())
                        {
                            g.colors.row(idx[std::size_t(k)]) += b[k] * gc.transpose();
                        }
                        gb[k] += vertex_color(mesh, idx[std::size_t(k)]).dot(gc);
                    }
                }
                // b_k = area2(triangle with corner k replaced by p) / area2(triangle)
                const auto v = screen_corners(proj, idx);
                const Vec2 p((pix % res) + 0.5, double(pix / res) + 0.5);
                const double area = area2(v[0], v[1], v[2]);
                const auto ga = area2_grad(v[0], v[1], v[2]);
                std::array<Vec2, 3> gv {Vec2::Zero(), Vec2::Zero(), Vec2::Zero()};
                for (int k = 0; k < 3; ++k)
                {
                    if (gb[k] == 0.0)
                    {
                        continue;
                    }
                    auto sub = v;
                    sub[std::size_t(k)] = p;
                    const auto gs = area2_grad(sub[0], sub[1], sub[2]);
                    for (int q = 0; q < 3; ++q)
                    {
                        const Vec2 dnum = q == k ? Vec2::Zero() : gs[std::size_t(q)];
                        gv[std::size_t(q)] += gb[k] * (dnum - b[k] * ga[std::size_t(q)]) / area;
                    }
                }
                for (int k = 0; k < 3; ++k)
                {
                    screen_grad.row(idx[std::size_t(k)]) += gv[std::size_t(k)].transpose();
                }
            }
            if (grad_normal)
            {
                g.vertices += vertex_normals_area_backward(mesh, normal_grad);
            }
        }

        for (Index i = 0; i < mesh.num_vertices(); ++i)
        {
            if (proj.visible[std::size_t(i)] && (screen_grad(i, 0) != 0.0 || screen_grad(i, 1) != 0.0))
            {
                g.vertices.row(i) += (view.project_jacobian(mesh.vertices.row(i).transpose()).transpose() * screen_grad.row(i).transpose()).transpose();
            }
        }
        return g;
    }

    const Eigen::Matrix<double, 4, 3> & latent_matrix()
    {
        static const Eigen::Matrix<double, 4, 3> m = []
        {
            Eigen::Matrix<double, 4, 3> a;
            a << 0.25, 0.5, 0.25,  //
                0.5, 0.0, -0.5,    //
                -0.25, 0.5, -0.25, //
                0.3, 0.3, 0.3;
            return a;
        }();
        return m;
    }

    const Eigen::Vector4d & latent_offset()
    {
        static const Eigen::Vector4d b(-0.5, 0.0, 0.0, -0.45);
        return b;
    }

    Latent encode_latent(const Image & image)
    {
        require(image.channels() == 3, "encode_latent expects an RGB image");
        require(image.height % kLatentPool == 0 && image.width % kLatentPool == 0 && image.height > 0, "image sides must be divisible by 4");
        const int h = image.height / kLatentPool, w = image.width / kLatentPool;
        Latent z(h, w, kLatentChannels);
        const auto & a = latent_matrix();
        const double inv = 1.0 / (kLatentPool * kLatentPool);
        for (int r = 0; r < h; ++r)
        {
            for (int c = 0; c < w; ++c)
            {
                Vec3 mean = Vec3::Zero();
                for (int dr = 0; dr < kLatentPool; ++dr)
                {
                    for (int dc = 0; dc < kLatentPool; ++dc)
                    {
                        mean += image.data.row(Index(r * kLatentPool + dr) * image.width + c * kLatentPool + dc).transpose();
                    }
                }
                z.data.row(Index(r) * w + c) = (a * (mean * inv) + latent_offset()).transpose();
            }
        }
        return z;
    }

    Image encode_latent_backward(const Latent & grad_latent, int height, int width)
    {
        require(height == grad_latent.height * kLatentPool && width == grad_latent.width * kLatentPool, "latent gradient does not match the image size");
        require(grad_latent.channels() == kLatentChannels, "latent gradient has the wrong channel count");
        Image g(height, width, 3);
        const double inv = 1.0 / (kLatentPool * kLatentPool);
        for (int r = 0; r < height; ++r)
        {
            for (int c = 0; c < width; ++c)
            {
                const Index tok = Index(r / kLatentPool) * grad_latent.width + c / kLatentPool;
                g.data.row(Index(r) * width + c) = inv * (latent_matrix().transpose() * grad_latent.data.row(tok).transpose()).transpose();
            }
        }
        return g;
    }

    Image decode_latent(const Latent & latent)
    {
        require(latent.channels() == kLatentChannels, "decode_latent expects 4 channels");
        const auto & a = latent_matrix();
        const Eigen::Matrix<double, 3, 4> pinv = (a.transpose() * a).inverse() * a.transpose();
        Image img(latent.height * kLatentPool, latent.width * kLatentPool, 3);
        for (int r = 0; r < img.height; ++r)
        {
            for (int c = 0; c < img.width; ++c)
            {
                const Index tok = Index(r / kLatentPool) * latent.width + c / kLatentPool;
                img.data.row(Index(r) * img.width + c) = (pinv * (latent.data.row(tok).transpose() - latent_offset())).transpose();
            }
        }
        return img;
    }
}  // namespace tryon
