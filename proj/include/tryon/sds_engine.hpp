#pragma once

#include "tryon/neural_fields.hpp"
#include "tryon/prompt_denoiser.hpp"
#include "tryon/renderer.hpp"
#include "tryon/tetgrid.hpp"

#include <random>

namespace tryon
{
    /// One noise draw for one camera.
    struct SdsSample
    {
        int t = 1;
        Latent eps;
        Camera camera;
        double weight = 0.0;  // w(t) = 1 - alpha_bar_t
    };

    struct TimeRange
    {
        int min = 20;
        int max = 980;
    };

    double sds_weight(int t, const NoiseSchedule & schedule);

    /// t uniform in the range, standard normal eps of the given latent shape.
    SdsSample draw_sds_sample(const NoiseSchedule & schedule, const Camera & camera, std::mt19937_64 & rng, const TimeRange & range = {},
                              int side = kLatentSide, int channels = kLatentChannels);

    struct SdsOptions
    {
        double cfg_scale = 7.5;
        bool use_image_prompt = true;
        bool mask_gate = true;  // scale each latent token's gradient by m_tokens, when present
    };

    struct SdsLatent
    {
        Latent grad;        // w (eps_hat - eps), after the optional mask gate
        double loss = 0.0;  // w |eps_hat - eps|^2 / 2 over the same tokens, for logging
    };

    /**
     * Noises z with the sample, predicts with guidance and returns w (eps_hat - eps)
     * as dL/dz. The predictor is only evaluated; nothing flows into its parameters.
     */
    SdsLatent sds_latent_grad(const Latent & z, const NoisePredictor & predictor, const PromptSet & prompts, const SdsSample & sample, const SdsOptions & options = {});

    /// Latent SDS chained through encode_latent and the normal rasterizer to mesh vertices.
    struct VertexSds
    {
        MatX3 vertices;
        MatX3 colors;
        SdsLatent latent;
    };

    VertexSds normal_sds_vertex_grad(const TriMesh & mesh, const NoisePredictor & predictor, const PromptSet & prompts, const SdsSample & sample,
                                     const SdsOptions & options = {});

    VertexSds color_sds_vertex_grad(const TriMesh & mesh, const NoisePredictor & predictor, const PromptSet & prompts, const SdsSample & sample,
                                    const SdsOptions & options = {});

    /// SDF field evaluated at the active grid vertices and its Marching Tetrahedra surface.
    struct GeometryEval
    {
        VecX sdf;                // dense over grid vertices; inactive entries are +1
        MatX3 active_points;     // grid.active_vertices, in order
        MLPField::Cache cache;   // of the active evaluation
        MtResult mt;
    };

    GeometryEval evaluate_geometry(const MLPField & field, const TetGrid & grid);

    /// dL/dphi_g from dL/d(MT vertices) through the MT jacobian and the field.
    VecX geometry_param_grad(const MLPField & field, const TetGrid & grid, const GeometryEval & eval, const MatX3 & grad_vertices);

    /// Per-vertex albedo of a frozen mesh and its field cache.
    struct TextureEval
    {
        TriMesh mesh;  // input mesh with colors set
        MLPField::Cache cache;
    };

    TextureEval evaluate_texture(const MLPField & field, const TriMesh & mesh);

    /// dL/dphi_c from dL/d(vertex colors).
    VecX texture_param_grad(const MLPField & field, const TextureEval & eval, const MatX3 & grad_colors);

    struct SdsStep
    {
        VecX grad;  // w.r.t. the field parameters
        double loss = 0.0;
        bool empty_mesh = false;
    };

    /// Full chain phi_g -> SDF -> MT -> normal render -> latent -> SDS. An empty surface gives a zero gradient and a warning on stderr.
    SdsStep normal_sds_step(const MLPField & field, const TetGrid & grid, const NoisePredictor & predictor, const PromptSet & prompts, const SdsSample & sample,
                            const SdsOptions & options = {});

    /// Full chain phi_c -> vertex albedo -> color render -> latent -> SDS, with the mesh frozen.
    SdsStep texture_sds_step(const MLPField & field, const TriMesh & mesh, const NoisePredictor & predictor, const PromptSet & prompts, const SdsSample & sample,
                             const SdsOptions & options = {});
}  // namespace tryon
