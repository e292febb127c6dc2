#include <doctest.h>

#include "tryon/losses.hpp"

#include <cmath>
#include <random>
#include <set>

using namespace tryon;

namespace
{
    Image square(int res, int r0, int c0, int side)
    {
        Image m(res, res, 1);
        for (int r = r0; r < r0 + side; ++r)
        {
            for (int c = c0; c < c0 + side; ++c)
            {
                m.at(r, c) = 1.0;
            }
        }
        return m;
    }

    Image random_mask(int res, std::mt19937_64 & rng, double p)
    {
        std::bernoulli_distribution b(p);
        Image m(res, res, 1);
        for (Index i = 0; i < m.pixels(); ++i)
        {
            m.data(i, 0) = b(rng) ? 1.0 : 0.0;
        }
        return m;
    }

    // pads with a copy of the border so out-of-range neighbors never differ
    std::vector<Pixel> brute_edges(const Image & m)
    {
        const int h = m.height, w = m.width;
        std::vector<std::vector<int>> padded(std::size_t(h + 2), std::vector<int>(std::size_t(w + 2)));
        for (int r = -1; r <= h; ++r)
        {
            for (int c = -1; c <= w; ++c)
            {
                const int rr = std::clamp(r, 0, h - 1), cc = std::clamp(c, 0, w - 1);
                padded[std::size_t(r + 1)][std::size_t(c + 1)] = m.at(rr, cc) > 0.5;
            }
        }
        std::vector<Pixel> out;
        const int dr[4] = {-1, 1, 0, 0}, dc[4] = {0, 0, -1, 1};
        for (int r = 0; r < h; ++r)
        {
            for (int c = 0; c < w; ++c)
            {
                int diff = 0;
                for (int k = 0; k < 4; ++k)
                {
                    diff += padded[std::size_t(r + 1 + dr[k])][std::size_t(c + 1 + dc[k])] != padded[std::size_t(r + 1)][std::size_t(c + 1)];
                }
                if (diff > 0)
                {
                    out.push_back({r, c});
                }
            }
        }
        return out;
    }

    double brute_chamfer(const Image & rendered, const Image & pseudo)
    {
        const auto a = brute_edges(rendered);
        const auto b = brute_edges(pseudo);
        if (a.empty())
        {
            return 0.0;
        }
        double total = 0.0;
        for (const Pixel & p : a)
        {
            int best = 1 << 30;
            for (const Pixel & q : b)
            {
                best = std::min(best, std::abs(p.row - q.row) + std::abs(p.col - q.col));
            }
            total += best;
        }
        return total / double(a.size());
    }

    Image random_image(int h, int w, int c, std::uint64_t seed, double lo = 0.0, double hi = 1.0)
    {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(lo, hi);
        Image img(h, w, c);
        for (Index i = 0; i < img.data.size(); ++i)
        {
            img.data.data()[i] = u(rng);
        }
        return img;
    }

    TriMesh planar_grid(int n)
    {
        TriMesh m;
        m.vertices.resize(Index(n + 1) * (n + 1), 3);
        for (int r = 0; r <= n; ++r)
        {
            for (int c = 0; c <= n; ++c)
            {
                m.vertices.row(Index(r) * (n + 1) + c) << c, r, 0.0;
            }
        }
        m.faces.resize(Index(2) * n * n, 3);
        Index f = 0;
        for (int r = 0; r < n; ++r)
        {
            for (int c = 0; c < n; ++c)
            {
                const int a = r * (n + 1) + c, b = a + 1, d = a + n + 1, e = d + 1;
                m.faces.row(f++) << a, b, e;
                m.faces.row(f++) << a, e, d;
            }
        }
        return m;
    }

    double brute_laplacian(const TriMesh & mesh)
    {
        std::vector<std::set<int>> ring(std::size_t(mesh.num_vertices()));
        for (Index f = 0; f < mesh.num_faces(); ++f)
        {
            for (int a = 0; a < 3; ++a)
            {
                for (int b = 0; b < 3; ++b)
                {
                    if (a != b)
                    {
                        ring[std::size_t(mesh.faces(f, a))].insert(mesh.faces(f, b));
                    }
                }
            }
        }
        double total = 0.0;
        int used = 0;
        for (Index i = 0; i < mesh.num_vertices(); ++i)
        {
            const auto & s = ring[std::size_t(i)];
            if (s.empty())
            {
                continue;
            }
            Vec3 mean = Vec3::Zero();
            for (int j : s)
            {
                mean += mesh.vertices.row(j).transpose();
            }
            mean /= double(s.size());
            total += (mesh.vertices.row(i).transpose() - mean).squaredNorm();
            ++used;
        }
        return total / used;
    }
}  // namespace

TEST_CASE("edge pixels")
{
    CHECK(edge_pixels(Image(16, 16, 1)).empty());
    CHECK(edge_pixels(Image(16, 16, 1, 1.0)).empty());

    Image single(9, 9, 1);
    single.at(4, 4) = 1.0;
    const auto e = edge_pixels(single);
    const std::vector<Pixel> expected {{3, 4}, {4, 3}, {4, 4}, {4, 5}, {5, 4}};
    CHECK(e == expected);

    const Image sq = square(32, 11, 11, 10);
    const auto edges = edge_pixels(sq);
    int inside = 0, outside = 0;
    for (const Pixel & p : edges)
    {
        (sq.at(p.row, p.col) > 0.5 ? inside : outside) += 1;
    }
    CHECK(inside == 36);
    CHECK(outside == 40);
    CHECK(edges == brute_edges(sq));
}

TEST_CASE("edge pixels match a padded brute-force scan on random masks")
{
    std::mt19937_64 rng(5);
    for (int t = 0; t < 50; ++t)
    {
        const Image m = random_mask(32, rng, 0.1 + 0.8 * (t / 50.0));
        CHECK(edge_pixels(m) == brute_edges(m));
    }
}

TEST_CASE("L1 distance transform equals the brute-force nearest seed")
{
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<int> pos(0, 23);
    for (int t = 0; t < 20; ++t)
    {
        std::vector<Pixel> seeds;
        for (int k = 0; k < 1 + t; ++k)
        {
            seeds.push_back({pos(rng), pos(rng)});
        }
        const Image d = l1_distance_transform(seeds, 24, 24);
        for (int r = 0; r < 24; ++r)
        {
            for (int c = 0; c < 24; ++c)
            {
                int best = 1 << 30;
                for (const Pixel & s : seeds)
                {
                    best = std::min(best, std::abs(s.row - r) + std::abs(s.col - c));
                }
                CHECK(d.at(r, c) == double(best));
            }
        }
    }
    CHECK(std::isinf(l1_distance_transform({}, 4, 4).at(2, 2)));
}

TEST_CASE("pseudo silhouette loss")
{
    const Image sq = square(32, 8, 8, 8);
    const SilhouetteLoss same = pseudo_silhouette_loss(sq, sq);
    CHECK(same.mse == 0.0);
    CHECK(same.chamfer == 0.0);
    CHECK(same.grad.data.isZero(0.0));

    SUBCASE("shifted square chamfer equals the brute-force double loop")
    {
        const Image shifted = square(32, 8, 10, 8);
        const SilhouetteLoss l = pseudo_silhouette_loss(shifted, sq);
        const double oracle = brute_chamfer(shifted, sq);
        MESSAGE("chamfer of an 8x8 square shifted by 2: " << l.chamfer);
        CHECK(l.chamfer == doctest::Approx(oracle).epsilon(1e-15));
        CHECK(l.mse == doctest::Approx(32.0 / 1024.0));
        const Image dist = l1_distance_transform(edge_pixels(sq), 32, 32);
        double farthest = 0.0;
        for (const Pixel & p : edge_pixels(shifted))
        {
            farthest = std::max(farthest, dist.at(p.row, p.col));
        }
        CHECK(farthest == 2.0);
    }

    SUBCASE("empty render leaves only the area term")
    {
        const SilhouetteLoss l = pseudo_silhouette_loss(Image(32, 32, 1), sq);
        CHECK(l.chamfer == 0.0);
        CHECK(l.value() == doctest::Approx(64.0 / 1024.0));
    }

    SUBCASE("rejections")
    {
        CHECK_THROWS_AS(pseudo_silhouette_loss(Image(16, 16, 1), sq), InvalidInput);
        CHECK_THROWS_AS(pseudo_silhouette_loss(sq, Image(32, 32, 1)), InvalidInput);
    }
}

TEST_CASE("chamfer term equals brute force on random binary masks")
{
    std::mt19937_64 rng(77);
    for (int t = 0; t < 100; ++t)
    {
        const Image a = random_mask(32, rng, 0.3);
        const Image b = random_mask(32, rng, 0.5);
        CHECK(pseudo_silhouette_loss(a, b).chamfer == doctest::Approx(brute_chamfer(a, b)).epsilon(1e-14));
    }
}

TEST_CASE("silhouette gradient: exact area term plus straight-through edge term")
{
    const Image pseudo = square(32, 8, 8, 12);
    Image soft = random_image(32, 32, 1, 3, 0.0, 0.4);
    for (int r = 10; r < 22; ++r)
    {
        for (int c = 6; c < 18; ++c)
        {
            soft.at(r, c) = 0.6 + 0.3 * soft.at(r, c);
        }
    }
    const SilhouetteLoss l = pseudo_silhouette_loss(soft, pseudo);
    const auto edges = edge_pixels(soft);
    const Image dist = l1_distance_transform(edge_pixels(pseudo), 32, 32);
    std::set<Pixel> on_edge(edges.begin(), edges.end());
    const double h = 1e-6;
    for (int r = 0; r < 32; ++r)
    {
        for (int c = 0; c < 32; ++c)
        {
            Image up = soft, down = soft;
            up.at(r, c) += h;
            down.at(r, c) -= h;
            const double fd = (pseudo_silhouette_loss(up, pseudo).mse - pseudo_silhouette_loss(down, pseudo).mse) / (2 * h);
            const double st = on_edge.count({r, c}) ? dist.at(r, c) * (soft.at(r, c) - pseudo.at(r, c)) / double(edges.size()) : 0.0;
            CHECK(std::abs(l.grad.at(r, c) - fd - st) < 1e-8);
        }
    }
}

TEST_CASE("composite pseudo normal")
{
    const Image a(8, 8, 3, 0.2), b(8, 8, 3, 0.7);
    const Image ones(8, 8, 1, 1.0), zeros(8, 8, 1);
    CHECK(composite_pseudo_normal(a, b, ones, zeros).data == a.data);
    CHECK(composite_pseudo_normal(a, b, zeros, ones).data == b.data);

    std::mt19937_64 rng(1);
    const Image m = random_mask(8, rng, 0.5);
    Image keep = m;
    keep.data = (1.0 - m.data.array()).matrix();
    const Image out = composite_pseudo_normal(a, b, m, keep);
    for (int r = 0; r < 8; ++r)
    {
        for (int c = 0; c < 8; ++c)
        {
            for (int ch = 0; ch < 3; ++ch)
            {
                CHECK(out.at(r, c, ch) == (m.at(r, c) > 0.5 ? 0.2 : 0.7));
            }
        }
    }
    const Image x = random_image(8, 8, 3, 4);
    CHECK(composite_pseudo_normal(x, x, m, keep).data == x.data);
    CHECK_THROWS_AS(composite_pseudo_normal(a, Image(4, 4, 3), m, keep), InvalidInput);
    CHECK_THROWS_AS(composite_pseudo_normal(a, b, Image(4, 4, 1), keep), InvalidInput);
}

TEST_CASE("normal loss")
{
    const Image x = random_image(16, 16, 3, 2);
    CHECK(normal_loss(x, x).value == 0.0);
    Image y = x;
    y.data.array() += 0.1;
    CHECK(normal_loss(y, x).value == doctest::Approx(0.01).epsilon(1e-12));
    CHECK_THROWS_AS(normal_loss(x, Image(16, 16, 1)), InvalidInput);

    const Image target = random_image(16, 16, 3, 3);
    const ImageLoss l = normal_loss(x, target);
    const double h = 1e-5;
    double worst = 0.0;
    for (Index i = 0; i < x.data.size(); ++i)
    {
        Image up = x, down = x;
        up.data.data()[i] += h;
        down.data.data()[i] -= h;
        const double fd = (normal_loss(up, target).value - normal_loss(down, target).value) / (2 * h);
        worst = std::max(worst, std::abs(fd - l.grad.data.data()[i]));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("reconstruction loss")
{
    const Image x = random_image(16, 16, 3, 6);
    Image keep(16, 16, 1);
    for (int r = 0; r < 8; ++r)
    {
        for (int c = 0; c < 16; ++c)
        {
            keep.at(r, c) = 1.0;
        }
    }
    CHECK(recon_loss(x, x, keep).value == 0.0);
    const ImageLoss empty = recon_loss(x, random_image(16, 16, 3, 7), Image(16, 16, 1));
    CHECK(empty.value == 0.0);
    CHECK(empty.grad.data.isZero(0.0));

    Image y = random_image(16, 16, 3, 8);
    Image source = y;
    source.data.topRows(8 * 16).array() -= 0.2;
    const ImageLoss l = recon_loss(y, source, keep);
    CHECK(l.value == doctest::Approx(0.04).epsilon(1e-12));
    CHECK(l.grad.data.bottomRows(8 * 16).isZero(0.0));

    const double h = 1e-5;
    for (Index i = 0; i < y.data.size(); i += 7)
    {
        Image up = y, down = y;
        up.data.data()[i] += h;
        down.data.data()[i] -= h;
        const double fd = (recon_loss(up, source, keep).value - recon_loss(down, source, keep).value) / (2 * h);
        CHECK(std::abs(fd - l.grad.data.data()[i]) < 1e-8);
    }
}

TEST_CASE("laplacian loss")
{
    TriMesh grid = planar_grid(6);
    const MeshLoss flat = laplacian_loss(grid);
    const auto nbrs = vertex_neighbors(grid);
    CHECK(flat.value == doctest::Approx(brute_laplacian(grid)).epsilon(1e-14));

    SUBCASE("interior vertices of a regular grid are at their one-ring centroid")
    {
        for (int r = 1; r < 6; ++r)
        {
            for (int c = 1; c < 6; ++c)
            {
                const int i = r * 7 + c;
                Vec3 mean = Vec3::Zero();
                for (int j : nbrs[std::size_t(i)])
                {
                    mean += grid.vertices.row(j).transpose();
                }
                CHECK((grid.vertices.row(i).transpose() - mean / double(nbrs[std::size_t(i)].size())).norm() < 1e-14);
            }
        }
    }

    SUBCASE("displacing one interior vertex")
    {
        const int i = 3 * 7 + 3;
        REQUIRE(nbrs[std::size_t(i)].size() == 6);
        const double delta = 0.37;
        TriMesh bumped = grid;
        bumped.vertices(i, 2) = delta;
        const double change = laplacian_loss(bumped).value - flat.value;
        // the vertex itself moves by delta from its centroid, each of its 6 neighbors' centroids moves by delta / 6
        double expected = delta * delta;
        for (int j : nbrs[std::size_t(i)])
        {
            const double share = delta / double(nbrs[std::size_t(j)].size());
            expected += share * share;
        }
        CHECK(change * double(grid.num_vertices()) == doctest::Approx(expected).epsilon(1e-12));
        CHECK(laplacian_loss(bumped).value == doctest::Approx(brute_laplacian(bumped)).epsilon(1e-14));
    }

    SUBCASE("gradient matches finite differences")
    {
        TriMesh m = make_icosphere(1, 0.5);
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> u(-0.05, 0.05);
        for (Index i = 0; i < m.vertices.size(); ++i)
        {
            m.vertices.data()[i] += u(rng);
        }
        const MeshLoss l = laplacian_loss(m);
        CHECK(l.value == doctest::Approx(brute_laplacian(m)).epsilon(1e-13));
        const double h = 1e-6;
        for (Index i = 0; i < m.vertices.size(); ++i)
        {
            const double keep = m.vertices.data()[i];
            m.vertices.data()[i] = keep + h;
            const double up = laplacian_loss(m).value;
            m.vertices.data()[i] = keep - h;
            const double down = laplacian_loss(m).value;
            m.vertices.data()[i] = keep;
            CHECK(std::abs((up - down) / (2 * h) - l.grad.data()[i]) < 1e-5);
        }
    }

    SUBCASE("isolated vertices are excluded")
    {
        TriMesh extra = grid;
        extra.vertices.conservativeResize(grid.num_vertices() + 1, 3);
        extra.vertices.bottomRows(1) << 100.0, 100.0, 100.0;
        CHECK(laplacian_loss(extra).value == doctest::Approx(flat.value).epsilon(1e-14));
        TriMesh lonely;
        lonely.vertices = MatX3::Zero(3, 3);
        lonely.faces.resize(0, 3);
        CHECK_THROWS_AS(laplacian_loss(lonely), InvalidInput);
    }
}

TEST_CASE("losses are non-negative on random inputs")
{
    std::mt19937_64 rng(12);
    for (int t = 0; t < 20; ++t)
    {
        const Image a = random_image(16, 16, 1, 100 + t), b = random_mask(16, rng, 0.4);
        CHECK(pseudo_silhouette_loss(a, b).value() >= 0.0);
        const Image x = random_image(16, 16, 3, 200 + t), y = random_image(16, 16, 3, 300 + t);
        CHECK(normal_loss(x, y).value >= 0.0);
        CHECK(recon_loss(x, y, b).value >= 0.0);
    }
}

TEST_CASE("weighted totals")
{
    CHECK(total_geometry_loss({}) == 0.0);
    CHECK(total_geometry_loss({1, 1, 1, 1}) == 30001.0);
    CHECK(total_texture_loss({}) == 0.0);
    CHECK(total_texture_loss({1, 1}) == 10001.0);
    CHECK_THROWS_AS(total_geometry_loss({1, -1e-9, 0, 0}), NumericalError);
    try
    {
        total_geometry_loss({0, 0, 0, std::nan("")});
        FAIL("expected an abort");
    }
    catch (const NumericalError & e)
    {
        CHECK(std::string(e.what()).find("lap") != std::string::npos);
    }
    try
    {
        total_texture_loss({0, std::nan("")});
        FAIL("expected an abort");
    }
    catch (const NumericalError & e)
    {
        CHECK(std::string(e.what()).find("recon") != std::string::npos);
    }
    LossWeights bad;
    bad.lap = -1.0;
    CHECK_THROWS_AS(total_geometry_loss({}, bad), InvalidInput);
}
