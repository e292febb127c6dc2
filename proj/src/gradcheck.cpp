#include "tryon/gradcheck.hpp"

#include "tryon/losses.hpp"
#include "tryon/neural_fields.hpp"
#include "tryon/prompt_denoiser.hpp"
#include "tryon/renderer.hpp"
#include "tryon/sds_engine.hpp"
#include "tryon/tetgrid.hpp"

#include <chrono>
#include <functional>
#include <random>

namespace tryon
{
    namespace
    {
        struct Rng
        {
            std::mt19937_64 engine;
            std::normal_distribution<double> normal;
            std::uniform_real_distribution<double> uniform;

            explicit Rng(std::uint64_t seed) : engine(seed) {}

            template <typename M>
            void fill_normal(M & m)
            {
                for (Index i = 0; i < m.size(); ++i)
                {
                    m.data()[i] = normal(engine);
                }
            }

            template <typename M>
            void fill_uniform(M & m, double lo, double hi)
            {
                for (Index i = 0; i < m.size(); ++i)
                {
                    m.data()[i] = lo + (hi - lo) * uniform(engine);
                }
            }
        };

        // central differences of f over the coordinates in `x`, compared with `analytic`
        double relative_error(double * x, Index n, const VecX & analytic, double h, const std::function<double()> & f)
        {
            VecX fd(n);
            for (Index i = 0; i < n; ++i)
            {
                const double keep = x[i];
                x[i] = keep + h;
                const double up = f();
                x[i] = keep - h;
                const double down = f();
                x[i] = keep;
                fd[i] = (up - down) / (2 * h);
            }
            return (fd - analytic).norm() / std::max(fd.norm(), 1e-300);
        }

        VecX flat(const MatX & m)
        {
            VecX v(m.size());
            Eigen::Map<MatX>(v.data(), m.rows(), m.cols()) = m;
            return v;
        }

        double dot(const Image & a, const Image & b)
        {
            return a.data.cwiseProduct(b.data).sum();
        }

        TriMesh jittered_sphere(Rng & rng, int subdivisions)
        {
            TriMesh m = make_icosphere(subdivisions, 0.3);
            MatX3 jitter(m.num_vertices(), 3);
            rng.fill_uniform(jitter, -0.01, 0.01);
            m.vertices += jitter;
            return m;
        }

        Image random_image(Rng & rng, int res, int channels)
        {
            Image img(res, res, channels);
            rng.fill_normal(img.data);
            return img;
        }

        GradcheckResult field_params(Rng & rng, FieldHead head)
        {
            MLPField f(FieldConfig {.head = head, .bands = 2, .hidden = 16, .depth = 2}, rng.engine());
            MatX3 pts(24, 3);
            rng.fill_uniform(pts, -0.5, 0.5);
            MatX w(pts.rows(), f.output_dim());
            rng.fill_normal(w);
            MLPField::Cache cache;
            f.forward(pts, &cache);
            VecX grad;
            f.backward(pts, cache, w, grad);
            const double e = relative_error(f.params().data(), f.num_params(), grad, 1e-6, [&] { return f.forward(pts).cwiseProduct(w).sum(); });
            return {head == FieldHead::Sdf ? "sdf field parameters" : "albedo field parameters", e, 1e-6};
        }

        GradcheckResult field_points(Rng & rng)
        {
            MLPField f(FieldConfig {.bands = 3, .hidden = 16, .depth = 2}, rng.engine());
            MatX3 pts(16, 3);
            rng.fill_uniform(pts, -0.5, 0.5);
            MatX w(pts.rows(), 1);
            rng.fill_normal(w);
            MLPField::Cache cache;
            f.forward(pts, &cache);
            VecX grad;
            MatX3 gp;
            f.backward(pts, cache, w, grad, &gp);
            const double e = relative_error(pts.data(), pts.size(), flat(gp), 1e-6, [&] { return f.forward(pts).cwiseProduct(w).sum(); });
            return {"sdf field input points", e, 1e-6};
        }

        GradcheckResult soft_mask(Rng & rng)
        {
            TriMesh m = jittered_sphere(rng, 1);
            const Camera cam = sample_camera(Stage::Geometry, CameraTag::Random, rng.engine());
            const Image w = random_image(rng, cam.resolution, 1);
            const RenderOutput out = rasterize(m, cam, 2.0);
            const RenderGrad g = rasterize_backward(m, cam, out, &w, nullptr, nullptr);
            const double e = relative_error(m.vertices.data(), m.vertices.size(), flat(g.vertices), 1e-6,
                                            [&] { return dot(rasterize(m, cam, 2.0).mask, w); });
            return {"soft raster mask (sigma 2)", e, 1e-2};
        }

        GradcheckResult render_shading(Rng & rng, bool colors)
        {
            TriMesh m = jittered_sphere(rng, 1);
            m.colors.resize(m.num_vertices(), 3);
            rng.fill_uniform(m.colors, 0.2, 0.8);
            const Camera cam = sample_camera(Stage::Texture, CameraTag::Random, rng.engine());
            const Image wn = random_image(rng, cam.resolution, 3);
            const Image wc = random_image(rng, cam.resolution, 3);
            const RenderOutput out = rasterize(m, cam);
            const RenderGrad g = rasterize_backward(m, cam, out, nullptr, &wn, &wc);
            auto objective = [&]
            {
                const RenderOutput o = rasterize(m, cam);
                return dot(o.normal, wn) + dot(o.color, wc);
            };
            if (colors)
            {
                return {"rendered vertex colors", relative_error(m.colors.data(), m.colors.size(), flat(g.colors), 1e-5, objective), 1e-6};
            }
            // a tiny step keeps every pixel on its triangle
            return {"rendered normals and colors, vertex positions", relative_error(m.vertices.data(), m.vertices.size(), flat(g.vertices), 1e-7, objective),
                    1e-4};
        }

        GradcheckResult mt_jacobian(Rng & rng)
        {
            const TetGrid grid = build_tet_grid(Eigen::AlignedBox3d(Vec3::Constant(-0.5), Vec3::Constant(0.5)), 10);
            VecX sdf(grid.num_vertices());
            for (Index v = 0; v < grid.num_vertices(); ++v)
            {
                sdf[v] = grid.vertices.row(v).norm() - 0.31 + 0.01 * rng.normal(rng.engine);
            }
            const MtResult mt = marching_tetrahedra(grid, sdf);
            MatX3 w(mt.mesh.num_vertices(), 3);
            rng.fill_normal(w);
            const VecX grad = marching_tetrahedra_backward(grid, sdf, mt, w);
            // only values on crossing edges move the surface; the topology stays fixed for a tiny step
            std::vector<Index> used;
            for (Index v = 0; v < grid.num_vertices(); ++v)
            {
                if (grad[v] != 0.0)
                {
                    used.push_back(v);
                }
            }
            VecX fd(Index(used.size())), an(Index(used.size()));
            const double h = 1e-7;
            auto objective = [&] { return marching_tetrahedra(grid, sdf).mesh.vertices.cwiseProduct(w).sum(); };
            for (std::size_t i = 0; i < used.size(); ++i)
            {
                const Index v = used[i];
                const double keep = sdf[v];
                sdf[v] = keep + h;
                const double up = objective();
                sdf[v] = keep - h;
                const double down = objective();
                sdf[v] = keep;
                fd[Index(i)] = (up - down) / (2 * h);
                an[Index(i)] = grad[v];
            }
            return {"marching tetrahedra vertex jacobian", (fd - an).norm() / fd.norm(), 1e-6};
        }

        GradcheckResult silhouette(Rng & rng)
        {
            const int res = 24;
            Image rendered(res, res, 1), pseudo(res, res, 1);
            for (int r = 0; r < res; ++r)
            {
                for (int c = 0; c < res; ++c)
                {
                    const double d = std::hypot(r - 11.5, c - 11.5);
                    // values stay clear of 0.5 so a step never changes the edge sets
                    const double u = rng.uniform(rng.engine);
                    rendered.at(r, c) = d < 7.0 ? 0.6 + 0.35 * u : 0.05 + 0.35 * u;
                    pseudo.at(r, c) = std::hypot(r - 12.5, c - 10.5) < 6.0 ? 1.0 : 0.0;
                }
            }
            const SilhouetteLoss l = pseudo_silhouette_loss(rendered, pseudo);
            // the chamfer term is piecewise constant; its straight-through share sits on rendered edge pixels only
            std::vector<bool> edge(std::size_t(res * res), false);
            for (const Pixel & p : edge_pixels(rendered))
            {
                edge[std::size_t(p.row * res + p.col)] = true;
            }
            VecX fd, an;
            std::vector<Index> off;
            for (Index p = 0; p < rendered.pixels(); ++p)
            {
                if (!edge[std::size_t(p)])
                {
                    off.push_back(p);
                }
            }
            fd.resize(Index(off.size()));
            an.resize(Index(off.size()));
            const double h = 1e-6;
            for (std::size_t i = 0; i < off.size(); ++i)
            {
                double & x = rendered.data(off[i], 0);
                const double keep = x;
                x = keep + h;
                const double up = pseudo_silhouette_loss(rendered, pseudo).value();
                x = keep - h;
                const double down = pseudo_silhouette_loss(rendered, pseudo).value();
                x = keep;
                fd[Index(i)] = (up - down) / (2 * h);
                an[Index(i)] = l.grad.data(off[i], 0);
            }
            return {"pseudo silhouette loss", (fd - an).norm() / fd.norm(), 1e-6};
        }

        GradcheckResult image_loss(Rng & rng, bool recon)
        {
            const int res = 16;
            Image rendered = random_image(rng, res, 3);
            const Image target = random_image(rng, res, 3);
            Image keep(res, res, 1);
            rng.fill_uniform(keep.data, 0.0, 1.0);
            const ImageLoss l = recon ? recon_loss(rendered, target, keep) : normal_loss(rendered, target);
            const double e = relative_error(rendered.data.data(), rendered.data.size(), flat(l.grad.data), 1e-6,
                                            [&] { return recon ? recon_loss(rendered, target, keep).value : normal_loss(rendered, target).value; });
            return {recon ? "reconstruction loss" : "normal loss", e, 1e-6};
        }

        GradcheckResult laplacian(Rng & rng)
        {
            TriMesh m = jittered_sphere(rng, 2);
            const MeshLoss l = laplacian_loss(m);
            const double e = relative_error(m.vertices.data(), m.vertices.size(), flat(l.grad), 1e-6, [&] { return laplacian_loss(m).value; });
            return {"laplacian loss", e, 1e-6};
        }

        GradcheckResult latent_encoder(Rng & rng)
        {
            Image img = random_image(rng, 64, 3);
            Latent w(kLatentSide, kLatentSide, kLatentChannels);
            rng.fill_normal(w.data);
            const Image g = encode_latent_backward(w, img.height, img.width);
            const double e = relative_error(img.data.data(), img.data.size(), flat(g.data), 1e-4,
                                            [&] { return encode_latent(img).data.cwiseProduct(w.data).sum(); });
            return {"latent encoder", e, 1e-8};
        }

        GradcheckResult image_prompt(Rng & rng)
        {
            const Denoiser d(DenoiserConfig {.latent_side = 4, .width = 8, .hidden = 8, .blocks = 1}, Vocabulary::builtin().size(), rng.engine());
            Image img(24, 24, 3);
            rng.fill_uniform(img.data, 0.0, 1.0);
            MatX w(kImagePromptTokens, d.config().width);
            rng.fill_normal(w);
            const Image g = d.encode_image_prompt_backward(w, img.height, img.width);
            const double e = relative_error(img.data.data(), img.data.size(), flat(g.data), 1e-6,
                                            [&] { return d.encode_image_prompt(img).cwiseProduct(w).sum(); });
            return {"image prompt encoder", e, 1e-6};
        }

        GradcheckResult denoiser_params(Rng & rng)
        {
            Denoiser d(DenoiserConfig {.latent_side = 4, .width = 8, .hidden = 8, .blocks = 1, .steps = 100}, Vocabulary::builtin().size(), rng.engine());
            Condition c;
            c.text_ids = Vocabulary::builtin().encode(tokenize("a white top"));
            rng.fill_uniform(c.image_means, 0.0, 1.0);
            c.has_image = true;
            c.m_tokens = VecX::Constant(d.tokens(), 0.7);
            Latent z(4, 4, 4), eps(4, 4, 4);
            rng.fill_normal(z.data);
            rng.fill_normal(eps.data);
            Denoiser::Gradients g;
            d.loss_and_grad(z, 37, d.prompts(c), true, eps, g);
            d.accumulate_condition_grad(c, g.text, g.image, g.params);
            // prompts are re-embedded per evaluation so the text table and image map move too
            const double e = relative_error(d.params().data(), d.num_params(), g.params, 1e-6, [&]
                                            {
                                                Denoiser::Gradients unused;
                                                return d.loss_and_grad(z, 37, d.prompts(c), true, eps, unused);
                                            });
            return {"denoiser parameters", e, 1e-6};
        }

        GradcheckResult texture_chain(Rng & rng)
        {
            const Denoiser d(DenoiserConfig {}, Vocabulary::builtin().size(), rng.engine());
            const TriMesh mesh = make_icosphere(2, 0.3);
            MLPField f(FieldConfig {.head = FieldHead::Albedo, .bands = 2, .hidden = 8, .depth = 1}, rng.engine());
            SdsSample sample;
            sample.t = 500;
            sample.eps = Latent(kLatentSide, kLatentSide, kLatentChannels);
            rng.fill_normal(sample.eps.data);
            sample.camera = front_camera(64);
            sample.weight = sds_weight(sample.t, d.schedule());
            Condition c;
            c.text_ids = Vocabulary::builtin().encode(tokenize("a person wearing a white top"));
            c.has_image = true;
            const PromptSet prompts = d.prompts(c);
            const SdsStep step = texture_sds_step(f, mesh, d, prompts, sample);
            const Latent frozen = color_sds_vertex_grad(evaluate_texture(f, mesh).mesh, d, prompts, sample).latent.grad;
            const double e = relative_error(f.params().data(), f.num_params(), step.grad, 1e-5, [&]
                                            { return encode_latent(rasterize(evaluate_texture(f, mesh).mesh, sample.camera).color).data.cwiseProduct(frozen.data).sum(); });
            return {"texture SDS chain", e, 1e-3};
        }

        template <typename F>
        GradcheckResult timed(F && f)
        {
            const auto start = std::chrono::steady_clock::now();
            GradcheckResult r = f();
            r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            return r;
        }
    }  // namespace

    std::vector<GradcheckResult> run_gradcheck(std::uint64_t seed)
    {
        Rng rng(seed);
        std::vector<GradcheckResult> out;
        out.push_back(timed([&] { return field_params(rng, FieldHead::Sdf); }));
        out.push_back(timed([&] { return field_params(rng, FieldHead::Albedo); }));
        out.push_back(timed([&] { return field_points(rng); }));
        out.push_back(timed([&] { return soft_mask(rng); }));
        out.push_back(timed([&] { return render_shading(rng, false); }));
        out.push_back(timed([&] { return render_shading(rng, true); }));
        out.push_back(timed([&] { return mt_jacobian(rng); }));
        out.push_back(timed([&] { return silhouette(rng); }));
        out.push_back(timed([&] { return image_loss(rng, false); }));
        out.push_back(timed([&] { return image_loss(rng, true); }));
        out.push_back(timed([&] { return laplacian(rng); }));
        out.push_back(timed([&] { return latent_encoder(rng); }));
        out.push_back(timed([&] { return image_prompt(rng); }));
        out.push_back(timed([&] { return denoiser_params(rng); }));
        out.push_back(timed([&] { return texture_chain(rng); }));
        return out;
    }
}  // namespace tryon
