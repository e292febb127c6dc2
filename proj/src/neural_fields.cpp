#include "tryon/neural_fields.hpp"

#include "binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace tryon
{
    namespace
    {
        constexpr char kFieldMagic[8] = {'T', 'R', 'Y', 'F', 'I', 'E', 'L', 'D'};

        MatX logistic(const MatX & z)
        {
            return (1.0 + (-z.array()).exp()).inverse().matrix();
        }
    }  // namespace

    MLPField::MLPField(const FieldConfig & config, std::uint64_t seed) : config_(config)
    {
        require(config.bands >= 0 && config.base_frequency > 0.0 && config.hidden > 0 && config.depth > 0, "invalid field configuration");
        int in = input_dim();
        for (int l = 0; l < config.depth; ++l)
        {
            layers_.push_back({config.hidden, in});
            in = config.hidden;
        }
        layers_.push_back({output_dim(), in});
        Index total = 0;
        for (const auto & s : layers_)
        {
            offsets_.push_back(total);
            total += Index(s.out) * s.in + s.out;
        }
        params_ = VecX::Zero(total);
        std::mt19937_64 rng(seed);
        for (std::size_t l = 0; l < layers_.size(); ++l)
        {
            const double limit = std::sqrt(6.0 / (layers_[l].in + layers_[l].out));
            std::uniform_real_distribution<double> u(-limit, limit);
            auto w = weight(l);
            for (Index i = 0; i < w.size(); ++i)
            {
                w.data()[i] = u(rng);
            }
        }
    }

    Eigen::Map<const MatX> MLPField::weight(std::size_t layer) const
    {
        return {params_.data() + offset(layer), layers_[layer].out, layers_[layer].in};
    }

    Eigen::Map<const VecX> MLPField::bias(std::size_t layer) const
    {
        return {params_.data() + offset(layer) + Index(layers_[layer].out) * layers_[layer].in, layers_[layer].out};
    }

    Eigen::Map<MatX> MLPField::weight(std::size_t layer)
    {
        return {params_.data() + offset(layer), layers_[layer].out, layers_[layer].in};
    }

    Eigen::Map<VecX> MLPField::bias(std::size_t layer)
    {
        return {params_.data() + offset(layer) + Index(layers_[layer].out) * layers_[layer].in, layers_[layer].out};
    }

    MatX MLPField::encode(const MatX3 & points) const
    {
        MatX enc(points.rows(), input_dim());
        enc.leftCols(3) = points;
        for (int k = 0; k < config_.bands; ++k)
        {
            const double f = std::ldexp(config_.base_frequency, k);
            enc.middleCols(3 + 6 * k, 3) = (f * points.array()).sin().matrix();
            enc.middleCols(6 + 6 * k, 3) = (f * points.array()).cos().matrix();
        }
        return enc;
    }

    MatX MLPField::forward(const MatX3 & points, Cache * cache) const
    {
        require(!layers_.empty(), "field is not initialized");
        MatX x = encode(points);
        Cache local;
        Cache & c = cache ? *cache : local;
        c.pre.clear();
        c.gate.clear();
        c.post.clear();
        c.encoded = x;
        for (std::size_t l = 0; l < layers_.size(); ++l)
        {
            MatX z = x * weight(l).transpose();
            z.rowwise() += bias(l).transpose();
            if (l + 1 < layers_.size())
            {
                MatX sig = logistic(z);
                x = z.cwiseProduct(sig);
                if (cache)
                {
                    // keep the gate, the backward pass needs SiLU' = s (1 + z (1 - s))
                    c.pre.push_back(std::move(z));
                    c.gate.push_back(std::move(sig));
                    c.post.push_back(x);
                }
            }
            else
            {
                c.output = config_.head == FieldHead::Albedo ? logistic(z) : z;
                if (cache)
                {
                    c.pre.push_back(std::move(z));
                }
            }
        }
        return c.output;
    }

    void MLPField::backward(const MatX3 & points, const Cache & cache, const MatX & grad_output, VecX & grad_params, MatX3 * grad_points) const
    {
        require(grad_output.rows() == points.rows() && grad_output.cols() == output_dim(), "output gradient has the wrong shape");
        require(cache.pre.size() == layers_.size(), "backward needs a forward cache");
        if (grad_params.size() == 0)
        {
            grad_params = VecX::Zero(num_params());
        }
        require(grad_params.size() == num_params(), "parameter gradient has the wrong size");
        MatX g = grad_output;
        if (config_.head == FieldHead::Albedo)
        {
            g = g.cwiseProduct(cache.output.cwiseProduct((1.0 - cache.output.array()).matrix()));
        }
        for (std::size_t l = layers_.size(); l-- > 0;)
        {
            const MatX & input = l == 0 ? cache.encoded : cache.post[l - 1];
            const Index off = offset(l);
            const LayerShape s = layers_[l];
            Eigen::Map<MatX>(grad_params.data() + off, s.out, s.in).noalias() += g.transpose() * input;
            Eigen::Map<VecX>(grad_params.data() + off + Index(s.out) * s.in, s.out) += g.colwise().sum().transpose();
            if (l > 0 || grad_points)
            {
                MatX gin = g * weight(l);
                if (l > 0)
                {
                    const auto & z = cache.pre[l - 1].array();
                    const auto & sg = cache.gate[l - 1].array();
                    g.array() = gin.array() * sg * (1.0 + z * (1.0 - sg));
                }
                else
                {
                    g = std::move(gin);
                }
            }
        }
        if (grad_points)
        {
            // g is now dL/d(encoding)
            MatX3 gp = g.leftCols(3);
            for (int k = 0; k < config_.bands; ++k)
            {
                const double f = std::ldexp(config_.base_frequency, k);
                const auto arg = (f * points.array());
                gp.array() += g.middleCols(3 + 6 * k, 3).array() * f * arg.cos();
                gp.array() -= g.middleCols(6 + 6 * k, 3).array() * f * arg.sin();
            }
            *grad_points = gp;
        }
    }

    VecX eval_sdf(const MLPField & field, const MatX3 & points)
    {
        require(field.head() == FieldHead::Sdf, "eval_sdf needs an SDF-headed field");
        return field.forward(points).col(0);
    }

    MatX3 eval_albedo(const MLPField & field, const MatX3 & points)
    {
        require(field.head() == FieldHead::Albedo, "eval_albedo needs an albedo-headed field");
        return field.forward(points);
    }

    void Adam::step(VecX & params, const VecX & grad)
    {
        require(params.size() == grad.size(), "Adam: gradient size differs from parameters");
        if (m.size() != params.size())
        {
            m = VecX::Zero(params.size());
            v = VecX::Zero(params.size());
            step_count = 0;
        }
        ++step_count;
        m = beta1 * m + (1.0 - beta1) * grad;
        v = beta2 * v + (1.0 - beta2) * grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(beta1, double(step_count));
        const double c2 = 1.0 - std::pow(beta2, double(step_count));
        params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }

    FitTrace fit_sdf_init(MLPField & field, const MatX3 & points, const VecX & targets, const FitOptions & options)
    {
        require(field.head() == FieldHead::Sdf, "fit_sdf_init needs an SDF-headed field");
        require(points.rows() >= 1000, "fit_sdf_init needs at least 1000 points");
        require(targets.size() == points.rows(), "target count differs from point count");
        require(options.steps >= 0 && options.lr > 0.0 && options.batch >= 0 && options.final_lr_fraction > 0.0, "invalid fit options");
        const Index n = points.rows();
        const Index batch = options.batch == 0 ? n : std::min<Index>(options.batch, n);
        std::mt19937_64 rng(options.seed);
        std::uniform_int_distribution<Index> pick(0, n - 1);
        Adam adam;
        adam.lr = options.lr;
        FitTrace trace;
        double ema = 0.0, best = std::numeric_limits<double>::infinity();
        MatX3 xb(batch, 3);
        VecX tb(batch);
        MLPField::Cache cache;
        VecX grad;
        for (int step = 0; step <= options.steps; ++step)
        {
            if (batch == n)
            {
                xb = points;
                tb = targets;
            }
            else
            {
                for (Index i = 0; i < batch; ++i)
                {
                    const Index j = pick(rng);
                    xb.row(i) = points.row(j);
                    tb[i] = targets[j];
                }
            }
            const VecX residual = field.forward(xb, &cache).col(0) - tb;
            const double loss = residual.squaredNorm() / double(batch);
            if (!std::isfinite(loss) || loss > options.divergence)
            {
                std::ostringstream msg;
                msg << "SDF fit diverged at step " << step << ": loss " << loss;
                throw NumericalError(msg.str());
            }
            trace.loss.push_back(loss);
            ema = step == 0 ? loss : 0.9 * ema + 0.1 * loss;
            best = std::min(best, ema);
            trace.smoothed.push_back(best);
            if (step == options.steps)
            {
                break;
            }
            grad.setZero(field.num_params());
            field.backward(xb, cache, (2.0 / double(batch)) * residual, grad);
            // exponential decay from lr to lr * final_lr_fraction
            adam.lr = options.lr * std::pow(options.final_lr_fraction, double(step) / double(std::max(1, options.steps - 1)));
            adam.step(field.params(), grad);
        }
        return trace;
    }

    FitTrace fit_sdf_init(MLPField & field, const MatX3 & points, const std::function<double(const Vec3 &)> & oracle, const FitOptions & options)
    {
        VecX targets(points.rows());
        for (Index i = 0; i < points.rows(); ++i)
        {
            targets[i] = oracle(points.row(i).transpose());
        }
        return fit_sdf_init(field, points, targets, options);
    }

    void save_field(const MLPField & field, const std::filesystem::path & path)
    {
        std::ofstream out(path, std::ios::binary);
        if (!out)
        {
            throw std::runtime_error("cannot write field checkpoint: " + path.string());
        }
        out.write(kFieldMagic, sizeof(kFieldMagic));
        const auto & c = field.config();
        detail::write_u32(out, c.head == FieldHead::Sdf ? 0u : 1u);
        detail::write_u32(out, std::uint32_t(c.bands));
        detail::write_f32(out, float(c.base_frequency));
        detail::write_u32(out, std::uint32_t(field.layers().size()));
        for (const auto & s : field.layers())
        {
            detail::write_u32(out, std::uint32_t(s.out));
            detail::write_u32(out, std::uint32_t(s.in));
        }
        detail::write_f32_block(out, field.params().data(), field.num_params());
    }

    MLPField load_field(const std::filesystem::path & path)
    {
        std::ifstream in(path, std::ios::binary);
        require(bool(in), "cannot open field checkpoint: " + path.string());
        char magic[8] = {};
        in.read(magic, sizeof(magic));
        require(bool(in) && std::equal(magic, magic + 8, kFieldMagic), "not a field checkpoint: " + path.string());
        const std::string what = "field checkpoint";
        const std::uint32_t head = detail::read_u32(in, what);
        require(head <= 1, "unknown field head in checkpoint");
        const std::uint32_t bands = detail::read_u32(in, what);
        const float base = detail::read_f32(in, what);
        require(std::isfinite(base) && base > 0.0f, "field checkpoint has an invalid base frequency");
        const std::uint32_t count = detail::read_u32(in, what);
        require(count >= 2 && count < 64 && bands < 32, "implausible field layer table");
        std::vector<LayerShape> table;
        for (std::uint32_t i = 0; i < count; ++i)
        {
            const int out = int(detail::read_u32(in, what));
            const int inn = int(detail::read_u32(in, what));
            table.push_back({out, inn});
        }
        FieldConfig config;
        config.head = head == 0 ? FieldHead::Sdf : FieldHead::Albedo;
        config.bands = int(bands);
        config.base_frequency = double(base);
        config.hidden = table.front().out;
        config.depth = int(count) - 1;
        MLPField field(config);
        for (std::size_t i = 0; i < table.size(); ++i)
        {
            require(table[i].out == field.layers()[i].out && table[i].in == field.layers()[i].in, "field checkpoint layer table is inconsistent");
        }
        detail::read_f32_block(in, field.params().data(), field.num_params(), what);
        return field;
    }
}  // namespace tryon
