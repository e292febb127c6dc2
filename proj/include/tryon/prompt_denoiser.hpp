#pragma once

#include "tryon/types.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace tryon
{
    inline constexpr int kLatentSide = 16;  // latent grid of a 64x64 render
    inline constexpr int kTokenWidth = 32;  // attention width d
    inline constexpr int kTextLength = 16;
    inline constexpr int kImagePromptTokens = 4;
    inline constexpr int kImagePromptSide = 32;

    /// Whitespace-separated words, one token per word.
    std::vector<std::string> tokenize(const std::string & text);

    /// Fixed word list; index 0 is the null token used for padding.
    class Vocabulary
    {
    public:
        explicit Vocabulary(std::vector<std::string> words);

        /// The checked-in data/vocab.txt, embedded at build time.
        static const Vocabulary & builtin();
        static Vocabulary load(const std::filesystem::path & path);

        int size() const { return int(words_.size()); }
        const std::string & word(int id) const { return words_[std::size_t(id)]; }

        /// Ids padded with the null token to kTextLength. Rejects unknown words (naming them) and over-long prompts.
        std::vector<int> encode(const std::vector<std::string> & tokens) const;

    private:
        std::vector<std::string> words_;
        std::map<std::string, int> index_;
    };

    /// Outfit description in fixed slots.
    struct SlottedDescription
    {
        static constexpr std::array<const char *, 4> kSlots {"top", "bottom", "shoes", "hair"};

        std::map<std::string, std::string> slots;

        /// Slot texts in kSlots order, tokenized and concatenated.
        std::vector<std::string> tokens() const;
        bool operator==(const SlottedDescription &) const = default;
    };

    struct GarmentDescription
    {
        std::string slot;
        std::string text;
    };

    /// Source description with the garment's slot text replaced. Rejects unknown slots and slots absent from the source.
    SlottedDescription build_target_prompt(const SlottedDescription & source, const GarmentDescription & garment);

    /// Cosine cumulative signal schedule over steps 1..T.
    struct NoiseSchedule
    {
        int steps = 0;
        VecX alpha_bar;  // alpha_bar[t - 1] for t in [1, steps]

        double at(int t) const;
        bool covers(int t) const { return t >= 1 && t <= steps; }
    };

    NoiseSchedule cosine_schedule(int steps = 1000, double offset = 0.008);

    /// z_t = sqrt(a) z0 + sqrt(1 - a) eps.
    Latent add_noise(const Latent & z0, const Latent & eps, int t, const NoiseSchedule & schedule);

    Latent standard_normal_latent(int height, int width, int channels, std::uint64_t seed);

    /// Text tokens, image-prompt tokens and the per-latent-token try-on mask. An empty `image` means no image prompt.
    struct PromptSet
    {
        MatX text;      // kTextLength x d
        MatX image;     // kImagePromptTokens x d, or empty
        VecX m_tokens;  // one weight per latent token
    };

    /// Average-pools an image-space mask onto the latent grid.
    VecX mask_to_tokens(const Image & mask, int side = kLatentSide);

    /// Area-weighted per-channel means of the four quadrants (row-major: TL, TR, BL, BR) of a square RGB image.
    Eigen::Matrix<double, 4, 3> quadrant_means(const Image & image);

    /// Adjoint of quadrant_means: dL/dimage from dL/dmeans.
    Image quadrant_means_backward(const Eigen::Matrix<double, 4, 3> & grad_means, int height, int width);

    /// Result of one attention evaluation; `weights` holds the pre-mask softmax rows.
    struct Attention
    {
        MatX output;
        MatX weights;
    };

    /// Row i of Softmax(Q K^T / sqrt(d)) V scaled by m_tokens[i], with Q = Z Wq, K = Y Wk, V = Y Wv.
    Attention masked_cross_attention(const MatX & queries, const MatX & keys_source, const VecX & m_tokens, const MatX & wq, const MatX & wk, const MatX & wv);

    /// Uncond + scale (cond - uncond).
    Latent cfg_combine(const Latent & cond, const Latent & uncond, double scale);

    /// Anything that predicts the noise in a noisy latent.
    class NoisePredictor
    {
    public:
        virtual ~NoisePredictor() = default;
        virtual Latent predict(const Latent & z_t, int t, const PromptSet & prompts, bool use_image_prompt) const = 0;
        virtual const NoiseSchedule & schedule() const = 0;

        /// Prompts of the unguided branch.
        virtual PromptSet unconditional() const { return {}; }
    };

    /// Exact posterior-mean noise for data drawn from N(mu, sigma^2 I).
    Latent gaussian_oracle_eps(const Latent & mu, double sigma, const Latent & z_t, int t, const NoiseSchedule & schedule);

    class GaussianOracle : public NoisePredictor
    {
    public:
        GaussianOracle(Latent mu, double sigma, NoiseSchedule schedule);

        Latent predict(const Latent & z_t, int t, const PromptSet & prompts, bool use_image_prompt) const override;
        const NoiseSchedule & schedule() const override { return schedule_; }
        const Latent & mean() const { return mu_; }

    private:
        Latent mu_;
        double sigma_;
        NoiseSchedule schedule_;
    };

    struct DenoiserConfig
    {
        int latent_side = kLatentSide;
        int channels = 4;
        int width = kTokenWidth;
        int hidden = 64;  // feed-forward width
        int blocks = 2;
        int steps = 1000;  // schedule length T
    };

    /// Raw conditioning of one training or sampling call; embedded with the denoiser's own tables.
    struct Condition
    {
        std::vector<int> text_ids;  // kTextLength ids, empty = all null
        Eigen::Matrix<double, 4, 3> image_means = Eigen::Matrix<double, 4, 3>::Zero();
        bool has_image = false;
        VecX m_tokens;  // empty = all ones
    };

    /**
     * Token transformer over the latent grid.
     *
     * Tokens are projected to width d, offset by a learned position table and a
     * linear map of the sinusoidal time embedding, then run through blocks of
     * self-attention, decoupled cross-attention and a SiLU feed-forward, each
     * residual. Cross-attention shares the query projection between the text
     * branch and the image branch; the image branch is scaled row-wise by
     * m_tokens. The text table and image-prompt affine map are parameters too.
     */
    class Denoiser : public NoisePredictor
    {
    public:
        struct Slot
        {
            std::string name;
            Index rows = 0;
            Index cols = 0;
            Index offset = 0;
        };

        struct Gradients
        {
            VecX params;
            MatX latent;  // dL/dz_t
            MatX text;    // dL/d text tokens
            MatX image;   // dL/d image tokens
        };

        Denoiser() = default;
        Denoiser(const DenoiserConfig & config, int vocab_size, std::uint64_t seed = 0);

        const DenoiserConfig & config() const { return config_; }
        int vocab_size() const { return vocab_size_; }
        int tokens() const { return config_.latent_side * config_.latent_side; }
        Index num_params() const { return params_.size(); }
        VecX & params() { return params_; }
        const VecX & params() const { return params_; }
        const std::vector<Slot> & slots() const { return slots_; }
        Eigen::Map<const MatX> param(const std::string & name) const;

        MatX encode_text(const std::vector<int> & ids) const;
        MatX encode_text(const std::vector<std::string> & tokens, const Vocabulary & vocab = Vocabulary::builtin()) const;
        MatX null_text() const { return encode_text(std::vector<int> {}); }

        /// 4 tokens from the quadrant means of an image resized to 32x32. Rejects non-square or non-RGB images.
        MatX encode_image_prompt(const Image & image) const;
        MatX encode_image_means(const Eigen::Matrix<double, 4, 3> & means) const;

        /// dL/dimage given dL/dtokens of encode_image_prompt.
        Image encode_image_prompt_backward(const MatX & grad_tokens, int height, int width) const;

        PromptSet prompts(const Condition & condition) const;
        PromptSet unconditional() const override;

        /// Rejects t outside the schedule and shape mismatches. The image branch is skipped when use_image_prompt is false.
        Latent denoise(const Latent & z_t, int t, const PromptSet & prompts, bool use_image_prompt) const;

        Latent predict(const Latent & z_t, int t, const PromptSet & prompts, bool use_image_prompt) const override
        {
            return denoise(z_t, t, prompts, use_image_prompt);
        }
        const NoiseSchedule & schedule() const override { return schedule_; }

        /// Mean squared error against `eps` and its gradients (parameters, latent, prompt tokens).
        double loss_and_grad(const Latent & z_t, int t, const PromptSet & prompts, bool use_image_prompt, const Latent & eps, Gradients & grad) const;

        /// Adds the parameter gradients of the text table and image-prompt map for given token gradients.
        void accumulate_condition_grad(const Condition & condition, const MatX & grad_text, const MatX & grad_image, VecX & grad_params) const;

    private:
        struct Cache;

        Index add_slot(const std::string & name, Index rows, Index cols);
        const Slot & slot(const std::string & name) const;
        Eigen::Map<const MatX> view(const Slot & s) const;
        Eigen::Map<MatX> grad_view(const Slot & s, VecX & grad) const;
        MatX forward(const MatX & x, int t, const PromptSet & prompts, bool use_image_prompt, Cache * cache) const;

        DenoiserConfig config_;
        int vocab_size_ = 0;
        NoiseSchedule schedule_;
        std::vector<Slot> slots_;
        VecX params_;
    };

    struct TrainingSample
    {
        Latent z0;
        Condition condition;
    };

    struct TrainOptions
    {
        int steps = 1500;
        int batch = 8;
        double lr = 2e-3;
        double final_lr_fraction = 0.1;
        double condition_dropout = 0.1;
        std::uint64_t seed = 0;
        double divergence = 1e3;
    };

    struct TrainTrace
    {
        std::vector<double> loss;  // batch mean per step
    };

    /// Noise-prediction regression with Adam. Requires at least 256 samples; throws NumericalError on divergence.
    TrainTrace train_denoiser(Denoiser & denoiser, const std::vector<TrainingSample> & data, const TrainOptions & options = {});

    /// Header (magic, architecture, vocabulary size) then float32 LE parameters.
    void save_denoiser(const Denoiser & denoiser, const std::filesystem::path & path);
    Denoiser load_denoiser(const std::filesystem::path & path);
}  // namespace tryon
