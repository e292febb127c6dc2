#pragma once

#include "tryon/types.hpp"

#include <filesystem>
#include <functional>

namespace tryon
{
    enum class FieldHead
    {
        Sdf,     // identity output, 1 channel
        Albedo,  // logistic output, 3 channels in (0,1)
    };

    struct FieldConfig
    {
        FieldHead head = FieldHead::Sdf;
        int bands = 6;
        double base_frequency = 0.25;
        int hidden = 64;
        int depth = 3;  // hidden layers
    };

    /// Rows and columns of one dense layer's weight matrix.
    struct LayerShape
    {
        int out = 0;
        int in = 0;
    };

    /**
     * Frequency-encoded MLP with SiLU hidden layers and a flat parameter vector.
     *
     * Input encoding is (x, sin(f_k x), cos(f_k x)) with f_k = base_frequency * 2^k, k < bands. Parameters are
     * stored layer by layer, each a row-major weight block followed by its bias.
     */
    class MLPField
    {
    public:
        struct Cache
        {
            MatX encoded;
            std::vector<MatX> pre;   // pre-activation per layer
            std::vector<MatX> gate;  // logistic of pre-activation per hidden layer
            std::vector<MatX> post;  // activation per hidden layer
            MatX output;             // after the head transform
        };

        MLPField() = default;
        explicit MLPField(const FieldConfig & config, std::uint64_t seed = 0);

        const FieldConfig & config() const { return config_; }
        FieldHead head() const { return config_.head; }
        int input_dim() const { return 3 + 6 * config_.bands; }
        int output_dim() const { return config_.head == FieldHead::Sdf ? 1 : 3; }
        const std::vector<LayerShape> & layers() const { return layers_; }
        Index num_params() const { return params_.size(); }

        VecX & params() { return params_; }
        const VecX & params() const { return params_; }

        Eigen::Map<const MatX> weight(std::size_t layer) const;
        Eigen::Map<const VecX> bias(std::size_t layer) const;
        Eigen::Map<MatX> weight(std::size_t layer);
        Eigen::Map<VecX> bias(std::size_t layer);

        MatX encode(const MatX3 & points) const;

        /// N x output_dim; fills `cache` when given, for a later backward pass.
        MatX forward(const MatX3 & points, Cache * cache = nullptr) const;

        /// Accumulate dL/dθ into `grad_params` (resized if empty); optionally write dL/dpoints.
        void backward(const MatX3 & points, const Cache & cache, const MatX & grad_output, VecX & grad_params, MatX3 * grad_points = nullptr) const;

    private:
        Index offset(std::size_t layer) const { return offsets_[layer]; }

        FieldConfig config_;
        std::vector<LayerShape> layers_;
        std::vector<Index> offsets_;
        VecX params_;
    };

    /// One signed distance per point. Rejects albedo-headed fields.
    VecX eval_sdf(const MLPField & field, const MatX3 & points);

    /// RGB per point, components in (0,1). Rejects SDF-headed fields.
    MatX3 eval_albedo(const MLPField & field, const MatX3 & points);

    /// Adaptive-moment optimizer state for one flat parameter vector.
    struct Adam
    {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        VecX m;
        VecX v;
        long step_count = 0;

        void step(VecX & params, const VecX & grad);
    };

    struct FitOptions
    {
        int steps = 2000;
        double lr = 3e-3;
        double final_lr_fraction = 0.1;  // exponential decay target
        int batch = 1024;  // 0 = full batch
        std::uint64_t seed = 0;
        double divergence = 1e6;
    };

    struct FitTrace
    {
        std::vector<double> loss;      // batch mean squared error before each update
        std::vector<double> smoothed;  // running minimum of an exponential moving average
    };

    /// Regress the SDF head onto target distances with Adam. Throws NumericalError on divergence.
    FitTrace fit_sdf_init(MLPField & field, const MatX3 & points, const VecX & targets, const FitOptions & options = {});

    /// Same, with targets taken from a distance oracle.
    FitTrace fit_sdf_init(MLPField & field, const MatX3 & points, const std::function<double(const Vec3 &)> & oracle, const FitOptions & options = {});

    /// Binary checkpoint: magic, head, bands, base frequency, layer table, float32 LE parameters.
    void save_field(const MLPField & field, const std::filesystem::path & path);
    MLPField load_field(const std::filesystem::path & path);
}  // namespace tryon
