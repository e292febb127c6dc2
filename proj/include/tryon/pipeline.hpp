#pragma once

#include "tryon/body_proxy.hpp"
#include "tryon/losses.hpp"
#include "tryon/sds_engine.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace tryon
{
    /// Every image and mask the two stages consume, resampled to one working resolution.
    struct AssetBundle
    {
        int resolution = 0;
        Image source_image;    // H_I
        Image garment_image;   // H_g
        Image garment_normal;  // H_g^n
        Image pseudo_image;    // H_I'
        Image pseudo_mask;     // H^M_I'
        Image try_on_mask;     // m
        Image keep_mask;       // m-hat
        Image source_normal;
        Image pseudo_normal;
        Image pseudo_mask_back;    // optional, empty when absent
        Image pseudo_normal_back;  // optional
        Image composite_normal;    // built once at ingest
        SlottedDescription source_desc;
        GarmentDescription garment_desc;
        std::filesystem::path skeleton;  // empty = default humanoid
    };

    inline constexpr std::array<const char *, 9> kRequiredAssets {"source_image", "garment_image",  "garment_normal", "pseudo_image", "pseudo_mask",
                                                                  "try_on_mask",  "keep_mask",      "source_normal",  "pseudo_normal"};

    /**
     * Reads a JSON manifest naming the asset files relative to `dir`. Images are
     * area-resampled to `resolution` (0 = the manifest's own value) and masks are
     * thresholded at 0.5. Rejects missing keys and files by name, and try-on / keep
     * masks that overlap, reporting the overlap pixel count.
     */
    AssetBundle ingest_assets(const std::filesystem::path & dir, const std::filesystem::path & manifest = "manifest.json", int resolution = 0);

    /// Mask-weighted prompt tokens: `Guided` uses m, `Unmasked` sets every token weight to 1.
    enum class MaskMode
    {
        Guided,
        Unmasked
    };

    struct StageConfig
    {
        int iterations = 100;
        double lr = 2e-4;
        double final_lr_fraction = 0.1;  // exponential decay of lr over the stage
        int render_resolution = 64;
        int tet_resolution = 64;
        double cfg_scale = 7.5;
        std::uint64_t seed = 0;
        double sharpness = 0.05;  // soft raster sigma, pixels
        TimeRange t_range;
        CameraRanges cameras;
        LossWeights weights;
        MaskMode mask_mode = MaskMode::Guided;
        bool use_image_prompt = true;
        double shell_offset = kDefaultShellOffset;
        double band = 0.04;  // margin of active tets beyond the body and the shell
        int init_steps = 3000;
        int init_points = 20000;

        /// Rejects zero iterations, resolutions that are not powers of two >= 32, and bad ranges.
        void validate() const;
    };

    /// The texture stage steps a fresh albedo field at a much larger, constant rate.
    StageConfig stage_defaults(Stage stage);

    /// `key = value` lines naming StageConfig fields, `#` comments. Unknown keys and malformed values are rejected.
    StageConfig parse_stage_config(const std::string & text, const StageConfig & base = {});
    StageConfig read_stage_config(const std::filesystem::path & path, const StageConfig & base = {});
    std::string format_stage_config(const StageConfig & config);

    struct IterationRecord
    {
        int iteration = 0;
        std::map<std::string, double> values;
    };

    struct RunRecord
    {
        std::string stage;
        std::vector<IterationRecord> iterations;
        std::map<std::string, double> final_metrics;
        std::vector<std::string> checkpoints;
        double wall_seconds = 0.0;
    };

    /// One JSON object per iteration, then one summary line. Wall time is left out so equal runs give equal files.
    void write_run_record(const RunRecord & record, const std::filesystem::path & path);
    std::vector<IterationRecord> read_run_record(const std::filesystem::path & path);
    void write_timing(const RunRecord & record, const std::filesystem::path & path);

    /// Intersection over union of two masks thresholded at 0.5; 1 when both are empty.
    double silhouette_iou(const Image & a, const Image & b);

    /// 1 on pixels the hard pass covers. Free of the soft mask's halo where triangles pile up at the rim.
    Image hard_silhouette(const RenderOutput & out);

    inline constexpr double kFieldBaseFrequency = 2.0;  // limbs are a few hundredths wide
    inline constexpr double kAlbedoBaseFrequency = 4.0;

    struct GeometrySetup
    {
        TriMesh proxy;
        TriMesh shell;
        TetGrid grid;
        MLPField field;  // fitted to the body's signed distance
        FitTrace init;
    };

    inline constexpr int kProxyResolution = 64;

    /// Humanoid proxy from the bundle's skeleton file, or the default humanoid.
    TriMesh body_proxy_for(const AssetBundle & assets, int resolution = kProxyResolution);

    /// Cubic lattice enclosing the shell.
    Eigen::AlignedBox3d geometry_bounds();

    /// Outer shell, the active grid between body and shell, and the SDF field fitted to the body. A given `init` field is used as is.
    GeometrySetup prepare_geometry(const StageConfig & config, const TriMesh & proxy, const MLPField * init = nullptr);

    /// Prompt set for one stage: target text, the given image prompt and the try-on mask tokens.
    PromptSet stage_prompts(const StageConfig & config, const AssetBundle & assets, const Denoiser & denoiser, const Image & image_prompt);

    struct GeometryResult
    {
        MLPField field;
        TriMesh mesh;
        RunRecord record;
    };

    /// Pseudo silhouette and normal supervision at the front and back cameras, normal SDS at one random camera, Laplacian smoothing.
    GeometryResult run_geometry_stage(const StageConfig & config, const AssetBundle & assets, const GeometrySetup & setup, const Denoiser & denoiser);

    MLPField initial_albedo_field(const StageConfig & config);

    struct TextureResult
    {
        MLPField field;
        TriMesh mesh;  // input geometry with albedo colors
        RunRecord record;
    };

    /// Front-view reconstruction under the keep mask and texture SDS at one random camera. The mesh is never modified.
    TextureResult run_texture_stage(const StageConfig & config, const AssetBundle & assets, const TriMesh & mesh, const MLPField & albedo,
                                    const Denoiser & denoiser);

    /// Mean rendered color over covered pixels where the mask exceeds 0.5; zero when there are none.
    Vec3 masked_mean_color(const RenderOutput & render, const Image & mask);

    /// Mean color of the non-background (non-black) pixels of an image.
    Vec3 foreground_mean_color(const Image & image);

    /// OBJ with `v x y z r g b` lines when colored.
    void export_mesh(const TriMesh & mesh, const std::filesystem::path & path);

    /// Azimuth of frame k out of `frames`, in degrees.
    double turntable_azimuth(int frame, int frames);

    /// Frames evenly spaced in azimuth at elevation 0, written as frame_000.png, ... Colors when the mesh has them, normals otherwise.
    std::vector<std::filesystem::path> render_turntable(const TriMesh & mesh, int frames, int resolution, const std::filesystem::path & dir);
}  // namespace tryon
