#include "tryon/prompt_denoiser.hpp"

#include "binary_io.hpp"
#include "tryon/image_io.hpp"
#include "tryon/neural_fields.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace tryon
{
    namespace detail
    {
        extern const char * const kBuiltinVocabulary;
    }

    namespace
    {
        constexpr char kDenoiserMagic[8] = {'T', 'R', 'Y', 'D', 'E', 'N', 'O', 'I'};

        using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

        MatX softmax_rows(const MatX & scores)
        {
            MatX a = scores;
            for (Index i = 0; i < a.rows(); ++i)
            {
                a.row(i).array() -= a.row(i).maxCoeff();
            }
            a = a.array().exp().matrix();
            const VecX sums = a.rowwise().sum();
            for (Index i = 0; i < a.rows(); ++i)
            {
                a.row(i) /= sums[i];
            }
            return a;
        }

        MatX logistic(const MatX & z)
        {
            return (1.0 + (-z.array()).exp()).inverse().matrix();
        }

        struct AttentionGrad
        {
            MatX q, k, v;
        };

        // gradients of O = softmax(Q K^T * scale) V given dO
        AttentionGrad attention_backward(const MatX & q, const MatX & k, const MatX & v, const MatX & a, const MatX & grad_out, double scale)
        {
            AttentionGrad g;
            const MatX da = grad_out * v.transpose();
            g.v = a.transpose() * grad_out;
            const VecX inner = (da.cwiseProduct(a)).rowwise().sum();
            MatX ds = a.cwiseProduct(da.colwise() - inner) * scale;
            g.q = ds * k;
            g.k = ds.transpose() * q;
            return g;
        }

        RowVec time_features(int t, int width)
        {
            const int half = width / 2;
            RowVec s(width);
            for (int k = 0; k < half; ++k)
            {
                const double freq = std::exp(-std::log(10000.0) * double(k) / double(half));
                s[k] = std::sin(double(t) * freq);
                s[half + k] = std::cos(double(t) * freq);
            }
            return s;
        }

        void check_latent(const Latent & z, const DenoiserConfig & c)
        {
            require(z.height == c.latent_side && z.width == c.latent_side && z.channels() == c.channels, "latent shape does not match the denoiser");
        }
    }  // namespace

    std::vector<std::string> tokenize(const std::string & text)
    {
        std::istringstream in(text);
        std::vector<std::string> out;
        for (std::string w; in >> w;)
        {
            out.push_back(w);
        }
        return out;
    }

    Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words))
    {
        require(!words_.empty(), "vocabulary is empty");
        for (std::size_t i = 0; i < words_.size(); ++i)
        {
            require(index_.emplace(words_[i], int(i)).second, "duplicate vocabulary word: " + words_[i]);
        }
    }

    const Vocabulary & Vocabulary::builtin()
    {
        static const Vocabulary v(tokenize(detail::kBuiltinVocabulary));
        return v;
    }

    Vocabulary Vocabulary::load(const std::filesystem::path & path)
    {
        std::ifstream in(path);
        require(bool(in), "cannot open vocabulary: " + path.string());
        std::vector<std::string> words;
        for (std::string line; std::getline(in, line);)
        {
            const auto t = tokenize(line);
            if (!t.empty())
            {
                words.push_back(t.front());
            }
        }
        return Vocabulary(std::move(words));
    }

    std::vector<int> Vocabulary::encode(const std::vector<std::string> & tokens) const
    {
        require(tokens.size() <= std::size_t(kTextLength), "prompt has " + std::to_string(tokens.size()) + " tokens, at most 16 allowed");
        std::vector<int> ids(kTextLength, 0);
        for (std::size_t i = 0; i < tokens.size(); ++i)
        {
            const auto it = index_.find(tokens[i]);
            require(it != index_.end(), "unknown prompt token: " + tokens[i]);
            ids[i] = it->second;
        }
        return ids;
    }

    std::vector<std::string> SlottedDescription::tokens() const
    {
        std::vector<std::string> out;
        for (const char * name : kSlots)
        {
            const auto it = slots.find(name);
            if (it != slots.end())
            {
                const auto words = tokenize(it->second);
                out.insert(out.end(), words.begin(), words.end());
            }
        }
        return out;
    }

    SlottedDescription build_target_prompt(const SlottedDescription & source, const GarmentDescription & garment)
    {
        const bool known = std::find_if(SlottedDescription::kSlots.begin(), SlottedDescription::kSlots.end(), [&](const char * s)
                                        { return garment.slot == s; }) != SlottedDescription::kSlots.end();
        require(known, "unknown description slot: " + garment.slot);
        require(source.slots.count(garment.slot) > 0, "source description has no slot " + garment.slot);
        SlottedDescription out = source;
        out.slots[garment.slot] = garment.text;
        return out;
    }

    double NoiseSchedule::at(int t) const
    {
        require(covers(t), "time step " + std::to_string(t) + " outside [1, " + std::to_string(steps) + "]");
        return alpha_bar[t - 1];
    }

    NoiseSchedule cosine_schedule(int steps, double offset)
    {
        require(steps >= 2 && offset > 0.0, "invalid noise schedule");
        auto f = [&](double t)
        {
            const double c = std::cos((t / steps + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
            return c * c;
        };
        NoiseSchedule s;
        s.steps = steps;
        s.alpha_bar.resize(steps);
        double prev = 1.0;
        for (int t = 1; t <= steps; ++t)
        {
            // per-step retention clipped so the last step keeps a sliver of signal
            const double beta = std::min(1.0 - f(t) / f(t - 1), 0.999);
            prev *= 1.0 - beta;
            s.alpha_bar[t - 1] = prev;
        }
        return s;
    }

    Latent add_noise(const Latent & z0, const Latent & eps, int t, const NoiseSchedule & schedule)
    {
        require(z0.data.rows() == eps.data.rows() && z0.data.cols() == eps.data.cols(), "noise shape differs from the latent");
        const double a = schedule.at(t);
        Latent z = z0;
        z.data = std::sqrt(a) * z0.data + std::sqrt(1.0 - a) * eps.data;
        return z;
    }

    Latent standard_normal_latent(int height, int width, int channels, std::uint64_t seed)
    {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> nd;
        Latent z(height, width, channels);
        for (Index i = 0; i < z.data.size(); ++i)
        {
            z.data.data()[i] = nd(rng);
        }
        return z;
    }

    VecX mask_to_tokens(const Image & mask, int side)
    {
        require(mask.channels() == 1 && mask.pixels() > 0, "mask_to_tokens expects a single-channel mask");
        return resize_area(mask, side, side).data.col(0);
    }

    Eigen::Matrix<double, 4, 3> quadrant_means(const Image & image)
    {
        require(image.channels() == 3 && image.height == image.width && image.height > 0, "image prompt must be a non-empty square RGB image");
        const int n = image.height;
        const double half = 0.5 * n;
        Eigen::Matrix<double, 4, 3> sums = Eigen::Matrix<double, 4, 3>::Zero();
        for (int r = 0; r < n; ++r)
        {
            const double top = std::clamp(half - r, 0.0, 1.0);
            for (int c = 0; c < n; ++c)
            {
                const double left = std::clamp(half - c, 0.0, 1.0);
                const auto px = image.data.row(Index(r) * n + c);
                sums.row(0) += top * left * px;
                sums.row(1) += top * (1.0 - left) * px;
                sums.row(2) += (1.0 - top) * left * px;
                sums.row(3) += (1.0 - top) * (1.0 - left) * px;
            }
        }
        return sums / (half * half);
    }

    Image quadrant_means_backward(const Eigen::Matrix<double, 4, 3> & grad_means, int height, int width)
    {
        require(height == width && height > 0, "image prompt must be square");
        const int n = height;
        const double half = 0.5 * n;
        const Eigen::Matrix<double, 4, 3> g = grad_means / (half * half);
        Image out(n, n, 3);
        for (int r = 0; r < n; ++r)
        {
            const double top = std::clamp(half - r, 0.0, 1.0);
            for (int c = 0; c < n; ++c)
            {
                const double left = std::clamp(half - c, 0.0, 1.0);
                out.data.row(Index(r) * n + c) = top * left * g.row(0) + top * (1.0 - left) * g.row(1) + (1.0 - top) * left * g.row(2) +
                                                 (1.0 - top) * (1.0 - left) * g.row(3);
            }
        }
        return out;
    }

    Attention masked_cross_attention(const MatX & queries, const MatX & keys_source, const VecX & m_tokens, const MatX & wq, const MatX & wk, const MatX & wv)
    {
        require(wq.rows() == queries.cols() && wk.rows() == keys_source.cols() && wv.rows() == keys_source.cols(), "attention projection input sizes differ");
        require(wq.cols() == wk.cols() && wq.cols() > 0, "query and key projections differ in width");
        require(m_tokens.size() == queries.rows(), "mask length differs from the query count");
        require(keys_source.rows() > 0, "attention needs at least one key token");
        const MatX q = queries * wq;
        const MatX k = keys_source * wk;
        const MatX v = keys_source * wv;
        Attention out;
        out.weights = softmax_rows(q * k.transpose() / std::sqrt(double(wq.cols())));
        out.output = m_tokens.asDiagonal() * (out.weights * v);
        return out;
    }

    Latent cfg_combine(const Latent & cond, const Latent & uncond, double scale)
    {
        require(cond.height == uncond.height && cond.width == uncond.width && cond.channels() == uncond.channels(), "guidance inputs differ in shape");
        Latent out = uncond;
        out.data = uncond.data + scale * (cond.data - uncond.data);
        return out;
    }

    Latent gaussian_oracle_eps(const Latent & mu, double sigma, const Latent & z_t, int t, const NoiseSchedule & schedule)
    {
        require(mu.data.rows() == z_t.data.rows() && mu.data.cols() == z_t.data.cols(), "oracle mean shape differs from the latent");
        const double a = schedule.at(t);
        const double s2 = sigma * sigma;
        const MatX mean0 = (std::sqrt(a) * s2 * z_t.data + (1.0 - a) * mu.data) / (a * s2 + 1.0 - a);
        Latent eps = z_t;
        eps.data = (z_t.data - std::sqrt(a) * mean0) / std::sqrt(1.0 - a);
        return eps;
    }

    GaussianOracle::GaussianOracle(Latent mu, double sigma, NoiseSchedule schedule) : mu_(std::move(mu)), sigma_(sigma), schedule_(std::move(schedule))
    {
        require(sigma >= 0.0, "oracle sigma must be non-negative");
    }

    Latent GaussianOracle::predict(const Latent & z_t, int t, const PromptSet &, bool) const
    {
        return gaussian_oracle_eps(mu_, sigma_, z_t, t, schedule_);
    }

    struct Denoiser::Cache
    {
        struct Block
        {
            MatX h0, q, k, v, a, o, h1;
            MatX qc, kt, vt, at, ki, vi, ai, oi, ctx, h2;
            MatX p, g, f;
        };

        MatX x;
        RowVec time;
        std::vector<Block> blocks;
        MatX h;
    };

    Index Denoiser::add_slot(const std::string & name, Index rows, Index cols)
    {
        const Index offset = slots_.empty() ? 0 : slots_.back().offset + slots_.back().rows * slots_.back().cols;
        slots_.push_back({name, rows, cols, offset});
        return offset + rows * cols;
    }

    Denoiser::Denoiser(const DenoiserConfig & config, int vocab_size, std::uint64_t seed) : config_(config), vocab_size_(vocab_size)
    {
        require(config.latent_side > 0 && config.channels > 0 && config.width > 0 && config.width % 2 == 0 && config.hidden > 0 && config.blocks > 0,
                "invalid denoiser configuration");
        require(vocab_size > 0, "denoiser needs a non-empty vocabulary");
        schedule_ = cosine_schedule(config.steps);
        const Index d = config.width, c = config.channels, n = tokens();
        Index total = 0;
        total = add_slot("in.w", c, d);
        total = add_slot("in.b", 1, d);
        total = add_slot("pos", n, d);
        total = add_slot("time.w", d, d);
        total = add_slot("time.b", 1, d);
        total = add_slot("text.table", vocab_size, d);
        total = add_slot("image.w", 3, d);
        total = add_slot("image.b", 1, d);
        for (int b = 0; b < config.blocks; ++b)
        {
            const std::string p = "block" + std::to_string(b) + ".";
            for (const char * name : {"self.q", "self.k", "self.v", "self.o", "cross.q", "cross.text_k", "cross.text_v", "cross.image_k", "cross.image_v", "cross.o"})
            {
                total = add_slot(p + name, d, d);
            }
            total = add_slot(p + "ff.w1", d, config.hidden);
            total = add_slot(p + "ff.b1", 1, config.hidden);
            total = add_slot(p + "ff.w2", config.hidden, d);
            total = add_slot(p + "ff.b2", 1, d);
        }
        total = add_slot("out.w", d, c);
        total = add_slot("out.b", 1, c);
        params_ = VecX::Zero(total);

        std::mt19937_64 rng(seed);
        for (const Slot & s : slots_)
        {
            double limit = 0.0;
            if (s.name == "pos")
            {
                limit = 0.1;
            }
            else if (s.name == "text.table")
            {
                limit = 1.0;
            }
            else if (s.rows > 1)
            {
                limit = std::sqrt(6.0 / double(s.rows + s.cols));
            }
            std::uniform_real_distribution<double> u(-limit, limit);
            for (Index i = 0; i < s.rows * s.cols; ++i)
            {
                params_[s.offset + i] = limit > 0.0 ? u(rng) : 0.0;
            }
        }
    }

    const Denoiser::Slot & Denoiser::slot(const std::string & name) const
    {
        for (const Slot & s : slots_)
        {
            if (s.name == name)
            {
                return s;
            }
        }
        throw InvalidInput("no denoiser parameter named " + name);
    }

    Eigen::Map<const MatX> Denoiser::view(const Slot & s) const
    {
        return {params_.data() + s.offset, s.rows, s.cols};
    }

    Eigen::Map<MatX> Denoiser::grad_view(const Slot & s, VecX & grad) const
    {
        return {grad.data() + s.offset, s.rows, s.cols};
    }

    Eigen::Map<const MatX> Denoiser::param(const std::string & name) const
    {
        return view(slot(name));
    }

    MatX Denoiser::encode_text(const std::vector<int> & ids) const
    {
        require(ids.size() <= std::size_t(kTextLength), "text condition longer than 16 tokens");
        const auto table = param("text.table");
        MatX y(kTextLength, config_.width);
        for (int i = 0; i < kTextLength; ++i)
        {
            const int id = i < int(ids.size()) ? ids[std::size_t(i)] : 0;
            require(id >= 0 && id < vocab_size_, "token id outside the vocabulary");
            y.row(i) = table.row(id);
        }
        return y;
    }

    MatX Denoiser::encode_text(const std::vector<std::string> & tokens, const Vocabulary & vocab) const
    {
        require(vocab.size() == vocab_size_, "vocabulary size differs from the denoiser's text table");
        return encode_text(vocab.encode(tokens));
    }

    MatX Denoiser::encode_image_means(const Eigen::Matrix<double, 4, 3> & means) const
    {
        MatX y = means * param("image.w");
        y.rowwise() += param("image.b").row(0);
        return y;
    }

    MatX Denoiser::encode_image_prompt(const Image & image) const
    {
        // quadrant means of an area-resampled 32x32 image equal the area-weighted quadrant means of the original
        return encode_image_means(quadrant_means(image));
    }

    Image Denoiser::encode_image_prompt_backward(const MatX & grad_tokens, int height, int width) const
    {
        require(grad_tokens.rows() == kImagePromptTokens && grad_tokens.cols() == config_.width, "image token gradient has the wrong shape");
        const Eigen::Matrix<double, 4, 3> gm = grad_tokens * param("image.w").transpose();
        return quadrant_means_backward(gm, height, width);
    }

    PromptSet Denoiser::prompts(const Condition & condition) const
    {
        PromptSet p;
        p.text = encode_text(condition.text_ids);
        if (condition.has_image)
        {
            p.image = encode_image_means(condition.image_means);
        }
        p.m_tokens = condition.m_tokens.size() == 0 ? VecX::Ones(tokens()) : condition.m_tokens;
        return p;
    }

    PromptSet Denoiser::unconditional() const
    {
        PromptSet p;
        p.text = null_text();
        p.m_tokens = VecX::Zero(tokens());
        return p;
    }

    MatX Denoiser::forward(const MatX & x, int t, const PromptSet & prompts, bool use_image_prompt, Cache * cache) const
    {
        require(schedule_.covers(t), "time step " + std::to_string(t) + " outside [1, " + std::to_string(config_.steps) + "]");
        const Index d = config_.width;
        require(prompts.text.rows() > 0 && prompts.text.cols() == d, "text tokens have the wrong width");
        const bool image = use_image_prompt && prompts.image.rows() > 0;
        if (image)
        {
            require(prompts.image.cols() == d, "image tokens have the wrong width");
            require(prompts.m_tokens.size() == tokens(), "m_tokens length differs from the latent token count");
        }
        const double scale = 1.0 / std::sqrt(double(d));
        const RowVec time = time_features(t, int(d));

        MatX h = x * param("in.w");
        h.rowwise() += param("in.b").row(0) + time * param("time.w") + param("time.b").row(0);
        h += param("pos");
        if (cache)
        {
            cache->x = x;
            cache->time = time;
            cache->blocks.assign(std::size_t(config_.blocks), {});
        }
        for (int b = 0; b < config_.blocks; ++b)
        {
            const std::string p = "block" + std::to_string(b) + ".";
            Cache::Block local;
            Cache::Block & c = cache ? cache->blocks[std::size_t(b)] : local;
            c.h0 = h;
            c.q = h * param(p + "self.q");
            c.k = h * param(p + "self.k");
            c.v = h * param(p + "self.v");
            c.a = softmax_rows(c.q * c.k.transpose() * scale);
            c.o = c.a * c.v;
            h.noalias() += c.o * param(p + "self.o");
            c.h1 = h;

            c.qc = h * param(p + "cross.q");
            c.kt = prompts.text * param(p + "cross.text_k");
            c.vt = prompts.text * param(p + "cross.text_v");
            c.at = softmax_rows(c.qc * c.kt.transpose() * scale);
            c.ctx = c.at * c.vt;
            if (image)
            {
                c.ki = prompts.image * param(p + "cross.image_k");
                c.vi = prompts.image * param(p + "cross.image_v");
                c.ai = softmax_rows(c.qc * c.ki.transpose() * scale);
                c.oi = c.ai * c.vi;
                c.ctx += prompts.m_tokens.asDiagonal() * c.oi;
            }
            h.noalias() += c.ctx * param(p + "cross.o");
            c.h2 = h;

            c.p = h * param(p + "ff.w1");
            c.p.rowwise() += param(p + "ff.b1").row(0);
            c.g = logistic(c.p);
            c.f = c.p.cwiseProduct(c.g);
            h.noalias() += c.f * param(p + "ff.w2");
            h.rowwise() += param(p + "ff.b2").row(0);
        }
        if (cache)
        {
            cache->h = h;
        }
        MatX out = h * param("out.w");
        out.rowwise() += param("out.b").row(0);
        return out;
    }

    Latent Denoiser::denoise(const Latent & z_t, int t, const PromptSet & prompts, bool use_image_prompt) const
    {
        check_latent(z_t, config_);
        Latent out(z_t.height, z_t.width, z_t.channels());
        out.data = forward(z_t.data, t, prompts, use_image_prompt, nullptr);
        return out;
    }

    double Denoiser::loss_and_grad(const Latent & z_t, int t, const PromptSet & prompts, bool use_image_prompt, const Latent & eps, Gradients & grad) const
    {
        check_latent(z_t, config_);
        check_latent(eps, config_);
        Cache cache;
        const MatX pred = forward(z_t.data, t, prompts, use_image_prompt, &cache);
        const MatX resid = pred - eps.data;
        const double count = double(resid.size());
        const double loss = resid.squaredNorm() / count;
        if (grad.params.size() != num_params())
        {
            grad.params = VecX::Zero(num_params());
        }
        grad.text = MatX::Zero(prompts.text.rows(), prompts.text.cols());
        grad.image = MatX::Zero(prompts.image.rows(), prompts.image.cols());
        VecX & gp = grad.params;
        const bool image = use_image_prompt && prompts.image.rows() > 0;
        const double scale = 1.0 / std::sqrt(double(config_.width));
        auto G = [&](const std::string & name) { return grad_view(slot(name), gp); };

        const MatX dout = (2.0 / count) * resid;
        G("out.w").noalias() += cache.h.transpose() * dout;
        G("out.b").row(0) += dout.colwise().sum();
        MatX dh = dout * param("out.w").transpose();
        for (int b = config_.blocks; b-- > 0;)
        {
            const std::string p = "block" + std::to_string(b) + ".";
            const Cache::Block & c = cache.blocks[std::size_t(b)];

            G(p + "ff.w2").noalias() += c.f.transpose() * dh;
            G(p + "ff.b2").row(0) += dh.colwise().sum();
            MatX dp = dh * param(p + "ff.w2").transpose();
            dp.array() *= c.g.array() * (1.0 + c.p.array() * (1.0 - c.g.array()));
            G(p + "ff.w1").noalias() += c.h2.transpose() * dp;
            G(p + "ff.b1").row(0) += dp.colwise().sum();
            dh.noalias() += dp * param(p + "ff.w1").transpose();

            G(p + "cross.o").noalias() += c.ctx.transpose() * dh;
            const MatX dctx = dh * param(p + "cross.o").transpose();
            const AttentionGrad gt = attention_backward(c.qc, c.kt, c.vt, c.at, dctx, scale);
            MatX dqc = gt.q;
            G(p + "cross.text_k").noalias() += prompts.text.transpose() * gt.k;
            G(p + "cross.text_v").noalias() += prompts.text.transpose() * gt.v;
            grad.text.noalias() += gt.k * param(p + "cross.text_k").transpose() + gt.v * param(p + "cross.text_v").transpose();
            if (image)
            {
                const MatX doi = prompts.m_tokens.asDiagonal() * dctx;
                const AttentionGrad gi = attention_backward(c.qc, c.ki, c.vi, c.ai, doi, scale);
                dqc += gi.q;
                G(p + "cross.image_k").noalias() += prompts.image.transpose() * gi.k;
                G(p + "cross.image_v").noalias() += prompts.image.transpose() * gi.v;
                grad.image.noalias() += gi.k * param(p + "cross.image_k").transpose() + gi.v * param(p + "cross.image_v").transpose();
            }
            G(p + "cross.q").noalias() += c.h1.transpose() * dqc;
            dh.noalias() += dqc * param(p + "cross.q").transpose();

            G(p + "self.o").noalias() += c.o.transpose() * dh;
            const MatX dO = dh * param(p + "self.o").transpose();
            const AttentionGrad gs = attention_backward(c.q, c.k, c.v, c.a, dO, scale);
            G(p + "self.q").noalias() += c.h0.transpose() * gs.q;
            G(p + "self.k").noalias() += c.h0.transpose() * gs.k;
            G(p + "self.v").noalias() += c.h0.transpose() * gs.v;
            dh.noalias() += gs.q * param(p + "self.q").transpose() + gs.k * param(p + "self.k").transpose() + gs.v * param(p + "self.v").transpose();
        }
        const RowVec dtime = dh.colwise().sum();
        G("in.w").noalias() += cache.x.transpose() * dh;
        G("in.b").row(0) += dtime;
        G("pos") += dh;
        G("time.w").noalias() += cache.time.transpose() * dtime;
        G("time.b").row(0) += dtime;
        grad.latent = dh * param("in.w").transpose();
        return loss;
    }

    void Denoiser::accumulate_condition_grad(const Condition & condition, const MatX & grad_text, const MatX & grad_image, VecX & grad_params) const
    {
        if (grad_params.size() != num_params())
        {
            grad_params = VecX::Zero(num_params());
        }
        auto table = grad_view(slot("text.table"), grad_params);
        for (int i = 0; i < grad_text.rows(); ++i)
        {
            const int id = i < int(condition.text_ids.size()) ? condition.text_ids[std::size_t(i)] : 0;
            table.row(id) += grad_text.row(i);
        }
        if (condition.has_image && grad_image.rows() > 0)
        {
            grad_view(slot("image.w"), grad_params).noalias() += condition.image_means.transpose() * grad_image;
            grad_view(slot("image.b"), grad_params).row(0) += grad_image.colwise().sum();
        }
    }

    TrainTrace train_denoiser(Denoiser & denoiser, const std::vector<TrainingSample> & data, const TrainOptions & options)
    {
        require(data.size() >= 256, "train_denoiser needs at least 256 samples");
        require(options.steps >= 1 && options.batch >= 1 && options.lr > 0.0 && options.final_lr_fraction > 0.0, "invalid training options");
        require(options.condition_dropout >= 0.0 && options.condition_dropout <= 1.0, "condition dropout must lie in [0, 1]");
        const DenoiserConfig & cfg = denoiser.config();
        std::mt19937_64 rng(options.seed);
        std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
        std::uniform_int_distribution<int> step_dist(1, cfg.steps);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::normal_distribution<double> normal;
        Adam adam;
        TrainTrace trace;
        Denoiser::Gradients g;
        for (int step = 0; step < options.steps; ++step)
        {
            VecX total = VecX::Zero(denoiser.num_params());
            double loss = 0.0;
            for (int b = 0; b < options.batch; ++b)
            {
                const TrainingSample & s = data[pick(rng)];
                const int t = step_dist(rng);
                Latent eps(s.z0.height, s.z0.width, s.z0.channels());
                for (Index i = 0; i < eps.data.size(); ++i)
                {
                    eps.data.data()[i] = normal(rng);
                }
                const bool dropped = unit(rng) < options.condition_dropout;
                const Condition cond = dropped ? Condition {} : s.condition;
                const PromptSet prompts = denoiser.prompts(cond);
                const Latent z_t = add_noise(s.z0, eps, t, denoiser.schedule());
                g.params = VecX::Zero(denoiser.num_params());
                loss += denoiser.loss_and_grad(z_t, t, prompts, cond.has_image, eps, g);
                denoiser.accumulate_condition_grad(cond, g.text, g.image, g.params);
                total += g.params;
            }
            loss /= options.batch;
            if (!std::isfinite(loss) || loss > options.divergence)
            {
                std::ostringstream msg;
                msg << "denoiser training diverged at step " << step << ": loss " << loss;
                throw NumericalError(msg.str());
            }
            trace.loss.push_back(loss);
            adam.lr = options.lr * std::pow(options.final_lr_fraction, double(step) / double(std::max(1, options.steps - 1)));
            adam.step(denoiser.params(), total / double(options.batch));
        }
        return trace;
    }

    void save_denoiser(const Denoiser & denoiser, const std::filesystem::path & path)
    {
        std::ofstream out(path, std::ios::binary);
        if (!out)
        {
            throw std::runtime_error("cannot write denoiser checkpoint: " + path.string());
        }
        out.write(kDenoiserMagic, sizeof(kDenoiserMagic));
        const auto & c = denoiser.config();
        for (int v : {c.latent_side, c.channels, c.width, c.hidden, c.blocks, c.steps, denoiser.vocab_size()})
        {
            detail::write_u32(out, std::uint32_t(v));
        }
        detail::write_u32(out, std::uint32_t(denoiser.num_params()));
        detail::write_f32_block(out, denoiser.params().data(), denoiser.num_params());
    }

    Denoiser load_denoiser(const std::filesystem::path & path)
    {
        std::ifstream in(path, std::ios::binary);
        require(bool(in), "cannot open denoiser checkpoint: " + path.string());
        char magic[8] = {};
        in.read(magic, sizeof(magic));
        require(bool(in) && std::equal(magic, magic + 8, kDenoiserMagic), "not a denoiser checkpoint: " + path.string());
        const std::string what = "denoiser checkpoint";
        DenoiserConfig c;
        c.latent_side = int(detail::read_u32(in, what));
        c.channels = int(detail::read_u32(in, what));
        c.width = int(detail::read_u32(in, what));
        c.hidden = int(detail::read_u32(in, what));
        c.blocks = int(detail::read_u32(in, what));
        c.steps = int(detail::read_u32(in, what));
        const int vocab = int(detail::read_u32(in, what));
        require(c.latent_side <= 256 && c.channels <= 64 && c.width <= 1024 && c.hidden <= 4096 && c.blocks <= 64 && c.steps <= 100000 && vocab <= 100000,
                "implausible denoiser architecture header");
        Denoiser d(c, vocab);
        const std::uint32_t count = detail::read_u32(in, what);
        require(Index(count) == d.num_params(), "denoiser checkpoint parameter count differs from its architecture");
        detail::read_f32_block(in, d.params().data(), d.num_params(), what);
        return d;
    }
}  // namespace tryon
