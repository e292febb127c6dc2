#include "tryon/sds_engine.hpp"

#include <iostream>

namespace tryon
{
    double sds_weight(int t, const NoiseSchedule & schedule)
    {
        return 1.0 - schedule.at(t);
    }

    SdsSample draw_sds_sample(const NoiseSchedule & schedule, const Camera & camera, std::mt19937_64 & rng, const TimeRange & range, int side, int channels)
    {
        require(range.min >= 1 && range.min <= range.max && schedule.covers(range.max), "SDS time range must lie inside the schedule");
        std::uniform_int_distribution<int> td(range.min, range.max);
        std::normal_distribution<double> nd;
        SdsSample s;
        s.t = td(rng);
        s.eps = Latent(side, side, channels);
        for (Index i = 0; i < s.eps.data.size(); ++i)
        {
            s.eps.data.data()[i] = nd(rng);
        }
        s.camera = camera;
        s.weight = sds_weight(s.t, schedule);
        return s;
    }

    SdsLatent sds_latent_grad(const Latent & z, const NoisePredictor & predictor, const PromptSet & prompts, const SdsSample & sample, const SdsOptions & options)
    {
        require(z.data.rows() == sample.eps.data.rows() && z.data.cols() == sample.eps.data.cols(), "SDS noise shape differs from the latent");
        const Latent z_t = add_noise(z, sample.eps, sample.t, predictor.schedule());
        const Latent cond = predictor.predict(z_t, sample.t, prompts, options.use_image_prompt);
        const Latent uncond = predictor.predict(z_t, sample.t, predictor.unconditional(), false);
        const Latent eps_hat = cfg_combine(cond, uncond, options.cfg_scale);
        SdsLatent out;
        out.grad = z;
        out.grad.data = sample.weight * (eps_hat.data - sample.eps.data);
        if (options.mask_gate && prompts.m_tokens.size() > 0)
        {
            require(prompts.m_tokens.size() == z.tokens(), "m_tokens length differs from the latent token count");
            out.grad.data = prompts.m_tokens.asDiagonal() * out.grad.data;
        }
        // w |r|^2 / 2 with r = grad / w
        out.loss = sample.weight > 0.0 ? out.grad.data.squaredNorm() / (2.0 * sample.weight) : 0.0;
        return out;
    }

    VertexSds normal_sds_vertex_grad(const TriMesh & mesh, const NoisePredictor & predictor, const PromptSet & prompts, const SdsSample & sample,
                                     const SdsOptions & options)
    {
        const RenderOutput out = rasterize(mesh, sample.camera);
        const Latent z = encode_latent(out.normal);
        VertexSds g;
        g.latent = sds_latent_grad(z, predictor, prompts, sample, options);
        const Image grad_normal = encode_latent_backward(g.latent.grad, out.normal.height, out.normal.width);
        const RenderGrad rg = rasterize_backward(mesh, sample.camera, out, nullptr, &grad_normal, nullptr);
        g.vertices = rg.vertices;
        g.colors = rg.colors;
        return g;
    }

    VertexSds color_sds_vertex_grad(const TriMesh & mesh, const NoisePredictor & predictor, const PromptSet & prompts, const SdsSample & sample,
                                    const SdsOptions & options)
    {
        const RenderOutput out = rasterize(mesh, sample.camera);
        const Latent z = encode_latent(out.color);
        VertexSds g;
        g.latent = sds_latent_grad(z, predictor, prompts, sample, options);
        const Image grad_color = encode_latent_backward(g.latent.grad, out.color.height, out.color.width);
        const RenderGrad rg = rasterize_backward(mesh, sample.camera, out, nullptr, nullptr, &grad_color);
        g.vertices = rg.vertices;
        g.colors = rg.colors;
        return g;
    }

    GeometryEval evaluate_geometry(const MLPField & field, const TetGrid & grid)
    {
        GeometryEval e;
        e.active_points.resize(Index(grid.active_vertices.size()), 3);
        for (std::size_t i = 0; i < grid.active_vertices.size(); ++i)
        {
            e.active_points.row(Index(i)) = grid.vertices.row(grid.active_vertices[i]);
        }
        e.sdf = VecX::Ones(grid.num_vertices());
        if (e.active_points.rows() > 0)
        {
            require(field.head() == FieldHead::Sdf, "geometry needs an SDF-headed field");
            const MatX values = field.forward(e.active_points, &e.cache);
            for (std::size_t i = 0; i < grid.active_vertices.size(); ++i)
            {
                e.sdf[grid.active_vertices[i]] = values(Index(i), 0);
            }
        }
        e.mt = marching_tetrahedra(grid, e.sdf);
        return e;
    }

    VecX geometry_param_grad(const MLPField & field, const TetGrid & grid, const GeometryEval & eval, const MatX3 & grad_vertices)
    {
        VecX grad = VecX::Zero(field.num_params());
        if (eval.mt.mesh.empty() || eval.active_points.rows() == 0)
        {
            return grad;
        }
        const VecX ds = marching_tetrahedra_backward(grid, eval.sdf, eval.mt, grad_vertices);
        MatX g_active(eval.active_points.rows(), 1);
        for (std::size_t i = 0; i < grid.active_vertices.size(); ++i)
        {
            g_active(Index(i), 0) = ds[grid.active_vertices[i]];
        }
        field.backward(eval.active_points, eval.cache, g_active, grad);
        return grad;
    }

    TextureEval evaluate_texture(const MLPField & field, const TriMesh & mesh)
    {
        require(field.head() == FieldHead::Albedo, "texture needs an albedo-headed field");
        TextureEval e;
        e.mesh = mesh;
        e.mesh.colors = field.forward(mesh.vertices, &e.cache);
        return e;
    }

    VecX texture_param_grad(const MLPField & field, const TextureEval & eval, const MatX3 & grad_colors)
    {
        VecX grad = VecX::Zero(field.num_params());
        if (eval.mesh.num_vertices() > 0)
        {
            field.backward(eval.mesh.vertices, eval.cache, grad_colors, grad);
        }
        return grad;
    }

    SdsStep normal_sds_step(const MLPField & field, const TetGrid & grid, const NoisePredictor & predictor, const PromptSet & prompts, const SdsSample & sample,
                            const SdsOptions & options)
    {
        const GeometryEval eval = evaluate_geometry(field, grid);
        SdsStep step;
        if (eval.mt.mesh.empty())
        {
            std::cerr << "warning: normal SDS on an empty surface, gradient is zero\n";
            step.grad = VecX::Zero(field.num_params());
            step.empty_mesh = true;
            return step;
        }
        const VertexSds g = normal_sds_vertex_grad(eval.mt.mesh, predictor, prompts, sample, options);
        step.grad = geometry_param_grad(field, grid, eval, g.vertices);
        step.loss = g.latent.loss;
        return step;
    }

    SdsStep texture_sds_step(const MLPField & field, const TriMesh & mesh, const NoisePredictor & predictor, const PromptSet & prompts, const SdsSample & sample,
                             const SdsOptions & options)
    {
        SdsStep step;
        if (mesh.empty())
        {
            std::cerr << "warning: texture SDS on an empty surface, gradient is zero\n";
            step.grad = VecX::Zero(field.num_params());
            step.empty_mesh = true;
            return step;
        }
        const TextureEval eval = evaluate_texture(field, mesh);
        const VertexSds g = color_sds_vertex_grad(eval.mesh, predictor, prompts, sample, options);
        step.grad = texture_param_grad(field, eval, g.colors);
        step.loss = g.latent.loss;
        return step;
    }
}  // namespace tryon
