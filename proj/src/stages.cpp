#include "tryon/mesh_sdf.hpp"
#include "tryon/pipeline.hpp"

#include <chrono>
#include <cmath>

namespace tryon
{
    namespace
    {
        Camera view_camera(const StageConfig & config, bool back)
        {
            Camera c = back ? back_camera(config.render_resolution) : front_camera(config.render_resolution);
            c.radius = config.cameras.radius;
            c.fov = config.cameras.fov;
            return c;
        }

        int sds_resolution(const Denoiser & denoiser)
        {
            return 4 * denoiser.config().latent_side;
        }

        Image scaled(const Image & img, double s)
        {
            Image out = img;
            out.data *= s;
            return out;
        }

        void require_finite(const VecX & grad, const char * stage, int iteration)
        {
            if (!grad.allFinite())
            {
                throw NumericalError(std::string(stage) + " gradient is not finite at iteration " + std::to_string(iteration));
            }
        }

        double stage_lr(const StageConfig & config, int it)
        {
            return config.lr * std::pow(config.final_lr_fraction, double(it) / double(std::max(1, config.iterations - 1)));
        }

        double seconds_since(std::chrono::steady_clock::time_point start)
        {
            return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        }

        // camera and noise draws are taken every iteration so a run's stream does not depend on its weights
        struct SdsStream
        {
            const StageConfig & config;
            const Denoiser & denoiser;
            Stage stage;
            std::mt19937_64 rng;

            SdsStream(const StageConfig & c, const Denoiser & d, Stage s)
                : config(c), denoiser(d), stage(s), rng(c.seed ^ (s == Stage::Geometry ? 0x5bd1e995ULL : 0x27d4eb2fULL))
            {
            }

            SdsSample next(int iteration)
            {
                const Camera cam = sample_camera(stage, CameraTag::Random, config.seed * 1000003ULL + std::uint64_t(iteration), sds_resolution(denoiser),
                                                 config.cameras);
                return draw_sds_sample(denoiser.schedule(), cam, rng, config.t_range, denoiser.config().latent_side, denoiser.config().channels);
            }
        };
    }  // namespace

    Eigen::AlignedBox3d geometry_bounds()
    {
        return {Vec3::Constant(-0.6), Vec3::Constant(0.6)};
    }

    GeometrySetup prepare_geometry(const StageConfig & config, const TriMesh & proxy, const MLPField * init)
    {
        config.validate();
        GeometrySetup s;
        s.proxy = proxy;
        s.shell = build_outer_shell(proxy, config.shell_offset);
        // the field starts at the body; the shell only bounds the region it may grow into
        const MeshDistance dist(proxy);
        auto sdf = [&](const Vec3 & p) { return dist.signed_distance(p); };
        const double half = 0.5 * config.shell_offset;
        s.grid = build_tet_grid(geometry_bounds(), config.tet_resolution, [&](const Vec3 & p) { return sdf(p) - half; }, half + config.band);
        require(s.grid.num_active() > 0, "no active tets around the shell");
        if (init)
        {
            require(init->head() == FieldHead::Sdf, "initial geometry field must have an SDF head");
            s.field = *init;
            return s;
        }

        // samples near the shell and the body plus every active grid vertex, so the field is fitted where MT reads it
        const MatX3 near_shell = sample_points_near_shell(s.shell, config.init_points / 2, config.band, config.seed + 1);
        const MatX3 near_body = sample_points_near_shell(proxy, config.init_points - config.init_points / 2, config.band, config.seed + 2);
        const Index n = near_shell.rows() + near_body.rows();
        MatX3 points(n + Index(s.grid.active_vertices.size()), 3);
        points << near_shell, near_body, s.grid.vertices(s.grid.active_vertices, Eigen::all);
        s.field = MLPField(FieldConfig {.base_frequency = kFieldBaseFrequency}, config.seed);
        s.init = fit_sdf_init(s.field, points, sdf, {.steps = config.init_steps, .seed = config.seed});
        return s;
    }

    PromptSet stage_prompts(const StageConfig & config, const AssetBundle & assets, const Denoiser & denoiser, const Image & image_prompt)
    {
        PromptSet p;
        p.text = denoiser.encode_text(build_target_prompt(assets.source_desc, assets.garment_desc).tokens());
        if (config.use_image_prompt)
        {
            p.image = denoiser.encode_image_prompt(image_prompt);
        }
        p.m_tokens = config.mask_mode == MaskMode::Unmasked ? VecX::Ones(denoiser.tokens()) : mask_to_tokens(assets.try_on_mask, denoiser.config().latent_side);
        return p;
    }

    GeometryResult run_geometry_stage(const StageConfig & config, const AssetBundle & assets, const GeometrySetup & setup, const Denoiser & denoiser)
    {
        config.validate();
        require(assets.resolution == config.render_resolution, "asset resolution differs from render_resolution");
        const auto start = std::chrono::steady_clock::now();
        const LossWeights & w = config.weights;
        const Camera front = view_camera(config, false);
        const Camera back = view_camera(config, true);
        const bool has_back = !assets.pseudo_mask_back.empty();
        const bool has_back_normal = !assets.pseudo_normal_back.empty();
        const PromptSet prompts = stage_prompts(config, assets, denoiser, assets.garment_normal);
        const SdsOptions options {.cfg_scale = config.cfg_scale, .use_image_prompt = config.use_image_prompt, .mask_gate = true};

        GeometryResult result;
        result.record.stage = "geometry";
        MLPField field = setup.field;
        Adam adam;
        adam.lr = config.lr;
        SdsStream stream(config, denoiser, Stage::Geometry);
        int empty_run = 0;

        for (int it = 0; it < config.iterations; ++it)
        {
            const SdsSample sample = stream.next(it);
            const GeometryEval eval = evaluate_geometry(field, setup.grid);
            IterationRecord rec;
            rec.iteration = it;
            rec.values["t"] = sample.t;
            if (eval.mt.mesh.empty())
            {
                if (++empty_run >= 5)
                {
                    throw NumericalError("geometry collapsed: empty surface for 5 consecutive iterations (last " + std::to_string(it) + ")");
                }
                rec.values["empty"] = 1.0;
                rec.values["iou"] = silhouette_iou(Image(front.resolution, front.resolution, 1), assets.pseudo_mask);
                result.record.iterations.push_back(std::move(rec));
                continue;
            }
            empty_run = 0;
            const TriMesh & mesh = eval.mt.mesh;
            MatX3 gv = MatX3::Zero(mesh.num_vertices(), 3);

            const RenderOutput fo = rasterize(mesh, front, config.sharpness);
            const SilhouetteLoss psl_f = pseudo_silhouette_loss(fo.mask, assets.pseudo_mask);
            const ImageLoss norm_f = normal_loss(fo.normal, assets.composite_normal);
            {
                const Image gm = scaled(psl_f.grad, w.psl);
                const Image gn = scaled(norm_f.grad, w.norm);
                gv += rasterize_backward(mesh, front, fo, &gm, &gn, nullptr).vertices;
            }
            double psl = psl_f.value(), psl_mse = psl_f.mse, psl_chamfer = psl_f.chamfer, norm = norm_f.value;
            if (has_back)
            {
                const RenderOutput bo = rasterize(mesh, back, config.sharpness);
                const SilhouetteLoss psl_b = pseudo_silhouette_loss(bo.mask, assets.pseudo_mask_back);
                const Image gm = scaled(psl_b.grad, w.psl);
                psl += psl_b.value();
                psl_mse += psl_b.mse;
                psl_chamfer += psl_b.chamfer;
                if (has_back_normal)
                {
                    const ImageLoss norm_b = normal_loss(bo.normal, assets.pseudo_normal_back);
                    const Image gn = scaled(norm_b.grad, w.norm);
                    norm += norm_b.value;
                    gv += rasterize_backward(mesh, back, bo, &gm, &gn, nullptr).vertices;
                }
                else
                {
                    gv += rasterize_backward(mesh, back, bo, &gm, nullptr, nullptr).vertices;
                }
            }

            const MeshLoss lap = laplacian_loss(mesh);
            gv += w.lap * lap.grad;

            double sds = 0.0;
            if (w.sds_norm > 0.0)
            {
                const VertexSds g = normal_sds_vertex_grad(mesh, denoiser, prompts, sample, options);
                gv += w.sds_norm * g.vertices;
                sds = g.latent.loss;
            }

            rec.values["psl"] = psl;
            rec.values["psl_mse"] = psl_mse;
            rec.values["psl_chamfer"] = psl_chamfer;
            rec.values["norm"] = norm;
            rec.values["lap"] = lap.value;
            rec.values["sds"] = sds;
            rec.values["total"] = total_geometry_loss({.psl = psl, .norm = norm, .sds = sds, .lap = lap.value}, w);
            rec.values["iou"] = silhouette_iou(fo.mask, assets.pseudo_mask);
            rec.values["hard_iou"] = silhouette_iou(hard_silhouette(fo), assets.pseudo_mask);
            rec.values["front_norm"] = norm_f.value;
            rec.values["vertices"] = double(mesh.num_vertices());
            rec.values["empty"] = 0.0;
            result.record.iterations.push_back(std::move(rec));

            const VecX grad = geometry_param_grad(field, setup.grid, eval, gv);
            require_finite(grad, "geometry", it);
            adam.lr = stage_lr(config, it);
            adam.step(field.params(), grad);
        }

        const GeometryEval final_eval = evaluate_geometry(field, setup.grid);
        result.mesh = final_eval.mt.mesh;
        result.field = std::move(field);
        auto & fm = result.record.final_metrics;
        if (result.mesh.empty())
        {
            fm["iou"] = silhouette_iou(Image(front.resolution, front.resolution, 1), assets.pseudo_mask);
            fm["empty"] = 1.0;
        }
        else
        {
            const RenderOutput fo = rasterize(result.mesh, front, config.sharpness);
            fm["iou"] = silhouette_iou(fo.mask, assets.pseudo_mask);
            fm["hard_iou"] = silhouette_iou(hard_silhouette(fo), assets.pseudo_mask);
            fm["front_norm"] = normal_loss(fo.normal, assets.composite_normal).value;
            fm["psl"] = pseudo_silhouette_loss(fo.mask, assets.pseudo_mask).value();
            fm["vertices"] = double(result.mesh.num_vertices());
            fm["faces"] = double(result.mesh.num_faces());
            fm["empty"] = 0.0;
        }
        result.record.wall_seconds = seconds_since(start);
        return result;
    }

    MLPField initial_albedo_field(const StageConfig & config)
    {
        return MLPField(FieldConfig {.head = FieldHead::Albedo, .base_frequency = kAlbedoBaseFrequency}, config.seed + 7);
    }

    TextureResult run_texture_stage(const StageConfig & config, const AssetBundle & assets, const TriMesh & mesh, const MLPField & albedo,
                                    const Denoiser & denoiser)
    {
        config.validate();
        require(assets.resolution == config.render_resolution, "asset resolution differs from render_resolution");
        require(!mesh.empty(), "texture stage needs a non-empty mesh");
        const auto start = std::chrono::steady_clock::now();
        const LossWeights & w = config.weights;
        const Camera front = view_camera(config, false);
        const PromptSet prompts = stage_prompts(config, assets, denoiser, assets.garment_image);
        const SdsOptions options {.cfg_scale = config.cfg_scale, .use_image_prompt = config.use_image_prompt, .mask_gate = true};
        const Vec3 garment_color = foreground_mean_color(assets.garment_image);

        TextureResult result;
        result.record.stage = "texture";
        MLPField field = albedo;
        Adam adam;
        adam.lr = config.lr;
        SdsStream stream(config, denoiser, Stage::Texture);
        double initial_distance = 0.0;

        for (int it = 0; it < config.iterations; ++it)
        {
            const SdsSample sample = stream.next(it);
            const TextureEval te = evaluate_texture(field, mesh);
            const RenderOutput fo = rasterize(te.mesh, front, config.sharpness);
            const ImageLoss recon = recon_loss(fo.color, assets.source_image, assets.keep_mask);
            const Image gc = scaled(recon.grad, w.recon);
            MatX3 gcol = rasterize_backward(te.mesh, front, fo, nullptr, nullptr, &gc).colors;

            double sds = 0.0;
            if (w.sds_tex > 0.0)
            {
                const VertexSds g = color_sds_vertex_grad(te.mesh, denoiser, prompts, sample, options);
                gcol += w.sds_tex * g.colors;
                sds = g.latent.loss;
            }

            const double distance = (masked_mean_color(fo, assets.try_on_mask) - garment_color).norm();
            if (it == 0)
            {
                initial_distance = distance;
            }
            IterationRecord rec;
            rec.iteration = it;
            rec.values["t"] = sample.t;
            rec.values["recon"] = recon.value;
            rec.values["sds"] = sds;
            rec.values["total"] = total_texture_loss({.sds = sds, .recon = recon.value}, w);
            rec.values["garment_distance"] = distance;
            result.record.iterations.push_back(std::move(rec));

            const VecX grad = texture_param_grad(field, te, gcol);
            require_finite(grad, "texture", it);
            adam.lr = stage_lr(config, it);
            adam.step(field.params(), grad);
        }

        const TextureEval te = evaluate_texture(field, mesh);
        const RenderOutput fo = rasterize(te.mesh, front, config.sharpness);
        auto & fm = result.record.final_metrics;
        fm["masked_mse"] = recon_loss(fo.color, assets.source_image, assets.keep_mask).value;
        fm["garment_distance"] = (masked_mean_color(fo, assets.try_on_mask) - garment_color).norm();
        fm["initial_garment_distance"] = initial_distance;
        result.mesh = te.mesh;
        result.field = std::move(field);
        result.record.wall_seconds = seconds_since(start);
        return result;
    }
}  // namespace tryon
