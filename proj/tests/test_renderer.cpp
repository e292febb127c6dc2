#include <doctest.h>

#include "tryon/image_io.hpp"
#include "tryon/renderer.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

using namespace tryon;

namespace
{
    TriMesh quad(double half, double z)
    {
        TriMesh m;
        m.vertices.resize(4, 3);
        m.vertices << -half, -half, z, half, -half, z, half, half, z, -half, half, z;
        m.faces.resize(2, 3);
        m.faces << 0, 1, 2, 0, 2, 3;
        return m;
    }

    TriMesh reversed_faces(const TriMesh & mesh)
    {
        TriMesh out = mesh;
        out.faces = mesh.faces.colwise().reverse();
        return out;
    }

    Image random_image(int res, int channels, std::uint64_t seed)
    {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> nd;
        Image img(res, res, channels);
        for (Index i = 0; i < img.data.size(); ++i)
        {
            img.data.data()[i] = nd(rng);
        }
        return img;
    }

    double dot(const Image & a, const Image & b)
    {
        return a.data.cwiseProduct(b.data).sum();
    }

    TriMesh jittered_sphere(std::uint64_t seed, int subdivisions = 2)
    {
        TriMesh m = make_icosphere(subdivisions, 0.3);
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(-0.01, 0.01);
        for (Index i = 0; i < m.vertices.size(); ++i)
        {
            m.vertices.data()[i] += u(rng);
        }
        return m;
    }
}  // namespace

TEST_CASE("camera sampling")
{
    const Camera f = sample_camera(Stage::Geometry, CameraTag::Front, 3);
    CHECK(f.azimuth == 0.0);
    CHECK(f.elevation == 0.0);
    const Camera b = sample_camera(Stage::Geometry, CameraTag::Back, 3);
    CHECK(b.azimuth == 180.0);
    CHECK(b.elevation == 0.0);
    const Camera r1 = sample_camera(Stage::Texture, CameraTag::Random, 42);
    const Camera r2 = sample_camera(Stage::Texture, CameraTag::Random, 42);
    CHECK(r1.azimuth == r2.azimuth);
    CHECK(r1.elevation == r2.elevation);
    for (std::uint64_t s = 0; s < 200; ++s)
    {
        const Camera c = sample_camera(Stage::Geometry, CameraTag::Random, s);
        CHECK(c.azimuth >= 0.0);
        CHECK(c.azimuth < 360.0);
        CHECK(c.elevation >= -10.0);
        CHECK(c.elevation <= 30.0);
        CHECK(c.radius == 2.0);
    }
}

TEST_CASE("camera validation")
{
    Camera c = front_camera();
    c.fov = 0.0;
    CHECK_THROWS_AS(c.validate(), InvalidInput);
    c = front_camera(16);
    CHECK_THROWS_AS(c.validate(), InvalidInput);
    c = front_camera();
    c.azimuth = 10.0;
    CHECK_THROWS_AS(c.validate(), InvalidInput);
    c.tag = CameraTag::Random;
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("front camera looks down -z with +y up")
{
    const View v(front_camera(64));
    const Vec2 center = v.project(Vec3::Zero());
    CHECK(center.x() == doctest::Approx(32.0));
    CHECK(center.y() == doctest::Approx(32.0));
    CHECK(v.project(Vec3(0.1, 0, 0)).x() > 32.0);
    CHECK(v.project(Vec3(0, 0.1, 0)).y() < 32.0);
    const View back(back_camera(64));
    CHECK(back.project(Vec3(0.1, 0, 0)).x() < 32.0);
}

TEST_CASE("projection jacobian matches finite differences")
{
    const Camera cam = sample_camera(Stage::Geometry, CameraTag::Random, 5);
    const View v(cam);
    const Vec3 p(0.1, -0.2, 0.15);
    const auto j = v.project_jacobian(p);
    for (int k = 0; k < 3; ++k)
    {
        Vec3 d = Vec3::Zero();
        d[k] = 1e-6;
        const Vec2 fd = (v.project(p + d) - v.project(p - d)) / 2e-6;
        CHECK((fd - j.col(k)).norm() < 1e-6 * (1.0 + fd.norm()));
    }
}

TEST_CASE("empty mesh renders background")
{
    const RenderOutput out = rasterize(TriMesh {}, front_camera(32));
    CHECK(out.mask.data.isZero(0.0));
    CHECK(out.color.data.isZero(0.0));
    CHECK((out.normal.data.col(2).array() == 1.0).all());
    CHECK((out.normal.data.col(0).array() == 0.5).all());
    CHECK_THROWS_AS(rasterize(quad(0.1, 0), front_camera(32), 0.0), InvalidInput);
}

TEST_CASE("large triangle saturates the mask at its centroid")
{
    TriMesh tri;
    tri.vertices.resize(3, 3);
    tri.vertices << -0.5, -0.4, 0, 0.5, -0.4, 0, 0.0, 0.5, 0;
    tri.faces.resize(1, 3);
    tri.faces << 0, 1, 2;
    const Camera cam = front_camera(64);
    const RenderOutput out = rasterize(tri, cam);
    const Vec2 c = View(cam).project(Vec3(0.0, -0.1, 0.0));
    CHECK(out.mask.at(int(c.y()), int(c.x())) >= 1.0 - 1e-3);
}

TEST_CASE("sphere silhouette area matches the projected disc")
{
    const double r = 0.3;
    const Camera cam = front_camera(128);
    const View view(cam);
    const double alpha = std::asin(r / cam.radius);
    const double disc_radius = view.focal * std::tan(alpha);
    const double disc_area = std::numbers::pi * disc_radius * disc_radius;
    // the product over overlapping near-silhouette triangles widens the soft edge as sigma grows
    for (auto [subdivisions, sigma] : {std::pair {2, 0.5}, std::pair {3, 0.25}})
    {
        const RenderOutput out = rasterize(make_icosphere(subdivisions, r), cam, sigma);
        CAPTURE(subdivisions);
        CHECK(std::abs(out.mask.data.sum() - disc_area) / disc_area < 0.05);
    }
}

TEST_CASE("flat quad facing the camera decodes to +z normals")
{
    const RenderOutput out = rasterize(quad(0.3, 0.0), front_camera(64));
    int covered = 0;
    for (Index p = 0; p < out.mask.pixels(); ++p)
    {
        if (out.covered(p))
        {
            const Vec3 n = (2.0 * out.normal.data.row(p).array() - 1.0).matrix().transpose();
            CHECK((n - Vec3::UnitZ()).norm() < 1e-3);
            ++covered;
        }
    }
    CHECK(covered > 500);
}

TEST_CASE("a shared edge through pixel centres leaves no hole")
{
    // the quad diagonal projects onto the image diagonal, which passes through every pixel centre on it
    const Camera cam = front_camera(64);
    const RenderOutput out = rasterize(quad(0.3, 0.0), cam);
    const View view(cam);
    const double lo = view.project(Vec3(-0.3, 0.3, 0.0)).x(), hi = view.project(Vec3(0.3, -0.3, 0.0)).x();
    int inside = 0;
    for (int k = 0; k < 64; ++k)
    {
        const int pix = k * 64 + (63 - k);
        if (63 - k + 0.5 > lo + 0.1 && 63 - k + 0.5 < hi - 0.1)
        {
            ++inside;
            CHECK(out.covered(pix));
        }
    }
    CHECK(inside > 20);
}

TEST_CASE("decoded normals have unit length on covered pixels")
{
    const RenderOutput out = rasterize(make_icosphere(2, 0.3), sample_camera(Stage::Geometry, CameraTag::Random, 8));
    for (Index p = 0; p < out.mask.pixels(); ++p)
    {
        if (out.covered(p))
        {
            const Vec3 n = (2.0 * out.normal.data.row(p).array() - 1.0).matrix().transpose();
            CHECK(std::abs(n.norm() - 1.0) < 1e-4);
            CHECK(n.z() > -1e-9);
        }
    }
}

TEST_CASE("rendering is invariant to face order")
{
    TriMesh m = jittered_sphere(4);
    m.colors = MatX3::Random(m.num_vertices(), 3).cwiseAbs();
    const Camera cam = sample_camera(Stage::Texture, CameraTag::Random, 2);
    const RenderOutput a = rasterize(m, cam);
    const RenderOutput b = rasterize(reversed_faces(m), cam);
    CHECK((a.mask.data - b.mask.data).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((a.normal.data - b.normal.data).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((a.color.data - b.color.data).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mask gradient matches finite differences at sigma 2")
{
    TriMesh m = jittered_sphere(11, 1);
    const Camera cam = sample_camera(Stage::Geometry, CameraTag::Random, 13);
    const Image w = random_image(cam.resolution, 1, 17);
    const RenderOutput out = rasterize(m, cam, 2.0);
    const RenderGrad g = rasterize_backward(m, cam, out, &w, nullptr, nullptr);
    const double h = 1e-6;
    VecX fd(m.vertices.size()), an(m.vertices.size());
    for (Index i = 0; i < m.vertices.size(); ++i)
    {
        const double keep = m.vertices.data()[i];
        m.vertices.data()[i] = keep + h;
        const double up = dot(rasterize(m, cam, 2.0).mask, w);
        m.vertices.data()[i] = keep - h;
        const double down = dot(rasterize(m, cam, 2.0).mask, w);
        m.vertices.data()[i] = keep;
        fd[i] = (up - down) / (2 * h);
        an[i] = g.vertices.data()[i];
    }
    MESSAGE("relative error " << (fd - an).norm() / fd.norm());
    CHECK((fd - an).norm() / fd.norm() < 1e-2);
}

TEST_CASE("normal and color gradients match finite differences")
{
    TriMesh m = jittered_sphere(21, 1);
    m.colors = (MatX3::Random(m.num_vertices(), 3).array() * 0.5 + 0.5).matrix();
    const Camera cam = sample_camera(Stage::Geometry, CameraTag::Random, 23);
    const Image wn = random_image(cam.resolution, 3, 29);
    const Image wc = random_image(cam.resolution, 3, 31);
    const RenderOutput out = rasterize(m, cam);
    const RenderGrad g = rasterize_backward(m, cam, out, nullptr, &wn, &wc);
    auto objective = [&](const TriMesh & mm)
    {
        const RenderOutput o = rasterize(mm, cam);
        return dot(o.normal, wn) + dot(o.color, wc);
    };

    SUBCASE("vertex colors")
    {
        const double h = 1e-4;
        double worst = 0.0;
        for (Index i = 0; i < m.colors.size(); ++i)
        {
            const double keep = m.colors.data()[i];
            m.colors.data()[i] = keep + h;
            const double up = objective(m);
            m.colors.data()[i] = keep - h;
            const double down = objective(m);
            m.colors.data()[i] = keep;
            worst = std::max(worst, std::abs((up - down) / (2 * h) - g.colors.data()[i]));
        }
        CHECK(worst < 1e-5);
    }
    SUBCASE("vertex positions")
    {
        // hard coverage switches are not differentiated; a tiny step keeps pixel assignment fixed
        const double h = 1e-7;
        VecX fd(m.vertices.size()), an(m.vertices.size());
        for (Index i = 0; i < m.vertices.size(); ++i)
        {
            const double keep = m.vertices.data()[i];
            m.vertices.data()[i] = keep + h;
            const double up = objective(m);
            m.vertices.data()[i] = keep - h;
            const double down = objective(m);
            m.vertices.data()[i] = keep;
            fd[i] = (up - down) / (2 * h);
            an[i] = g.vertices.data()[i];
        }
        MESSAGE("relative error " << (fd - an).norm() / fd.norm());
        CHECK((fd - an).norm() / fd.norm() < 1e-4);
    }
}

TEST_CASE("latent encoder")
{
    Image gray(64, 64, 3, 0.4);
    const Latent z = encode_latent(gray);
    CHECK(z.height == 16);
    CHECK(z.width == 16);
    CHECK(z.channels() == 4);
    for (Index t = 1; t < z.tokens(); ++t)
    {
        CHECK(z.data.row(t) == z.data.row(0));
    }

    // block-constant images survive encode then decode
    Image blocks(32, 32, 3);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    MatX tile = MatX::Zero(64, 3);
    for (Index i = 0; i < tile.size(); ++i)
    {
        tile.data()[i] = u(rng);
    }
    for (int r = 0; r < 32; ++r)
    {
        for (int c = 0; c < 32; ++c)
        {
            blocks.data.row(r * 32 + c) = tile.row((r / 4) * 8 + c / 4);
        }
    }
    CHECK((decode_latent(encode_latent(blocks)).data - blocks.data).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(encode_latent(Image(30, 32, 3)), InvalidInput);
}

TEST_CASE("latent encoder gradient is exact")
{
    Image img = random_image(32, 3, 5);
    Latent w(8, 8, 4);
    std::mt19937_64 rng(6);
    std::normal_distribution<double> nd;
    for (Index i = 0; i < w.data.size(); ++i)
    {
        w.data.data()[i] = nd(rng);
    }
    const Image g = encode_latent_backward(w, 32, 32);
    const double h = 1e-3;
    for (Index i = 0; i < img.data.size(); i += 7)
    {
        const double keep = img.data.data()[i];
        img.data.data()[i] = keep + h;
        const double up = encode_latent(img).data.cwiseProduct(w.data).sum();
        img.data.data()[i] = keep - h;
        const double down = encode_latent(img).data.cwiseProduct(w.data).sum();
        img.data.data()[i] = keep;
        CHECK(std::abs((up - down) / (2 * h) - g.data.data()[i]) < 1e-6);
    }
}

TEST_CASE("PNG and float plane round trips")
{
    const auto dir = std::filesystem::temp_directory_path();
    Image rgb(5, 7, 3);
    for (Index i = 0; i < rgb.data.size(); ++i)
    {
        rgb.data.data()[i] = double(i % 256) / 255.0;
    }
    write_png(rgb, dir / "tryon_rt.png");
    const Image back = read_png(dir / "tryon_rt.png");
    CHECK(back.same_shape(rgb));
    CHECK((back.data - rgb.data).cwiseAbs().maxCoeff() < 1e-12);

    Image gray(4, 4, 1, 0.25);
    write_png(gray, dir / "tryon_gray.png");
    CHECK(read_image(dir / "tryon_gray.png").channels() == 1);

    const Image noisy = random_image(6, 3, 2);
    write_raw_plane(noisy, dir / "tryon_rt.trfp");
    const Image raw = read_image(dir / "tryon_rt.trfp");
    CHECK(raw.same_shape(noisy));
    CHECK((raw.data - noisy.data).cwiseAbs().maxCoeff() < 1e-6);
    CHECK_THROWS_AS(read_image(dir / "tryon_missing.png"), InvalidInput);
    for (const char * f : {"tryon_rt.png", "tryon_gray.png", "tryon_rt.trfp"})
    {
        std::filesystem::remove(dir / f);
    }
}

TEST_CASE("area resampling")
{
    const Image flat(12, 12, 3, 0.3);
    const Image down = resize_area(flat, 5, 5);
    CHECK((down.data.array() - 0.3).abs().maxCoeff() < 1e-12);
    Image ramp(4, 4, 1);
    for (int r = 0; r < 4; ++r)
    {
        for (int c = 0; c < 4; ++c)
        {
            ramp.at(r, c) = r * 4 + c;
        }
    }
    const Image half = resize_area(ramp, 2, 2);
    CHECK(half.at(0, 0) == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
    CHECK(half.at(1, 1) == doctest::Approx((10 + 11 + 14 + 15) / 4.0));
    // mean is preserved for any target size
    CHECK(resize_area(ramp, 3, 3).data.mean() == doctest::Approx(ramp.data.mean()));
}
