#include "tryon/losses.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace tryon
{
    namespace
    {
        void require_mask(const Image & m, const char * name)
        {
            require(m.channels() == 1 && m.pixels() > 0, std::string(name) + " must be a non-empty single-channel mask");
        }

        void require_same(const Image & a, const Image & b, const char * what)
        {
            require(a.same_shape(b), std::string(what) + ": image shapes differ");
        }

        void check_term(double value, const char * name)
        {
            if (std::isnan(value) || value < 0.0)
            {
                std::ostringstream msg;
                msg << "loss term " << name << " is " << value;
                throw NumericalError(msg.str());
            }
        }
    }  // namespace

    std::vector<Pixel> edge_pixels(const Image & mask, double threshold)
    {
        require_mask(mask, "edge_pixels");
        const int h = mask.height, w = mask.width;
        auto on = [&](int r, int c) { return mask.at(r, c) > threshold; };
        std::vector<Pixel> out;
        for (int r = 0; r < h; ++r)
        {
            for (int c = 0; c < w; ++c)
            {
                const bool v = on(r, c);
                const bool edge = (r > 0 && on(r - 1, c) != v) || (r + 1 < h && on(r + 1, c) != v) || (c > 0 && on(r, c - 1) != v) ||
                                  (c + 1 < w && on(r, c + 1) != v);
                if (edge)
                {
                    out.push_back({r, c});
                }
            }
        }
        return out;
    }

    Image l1_distance_transform(const std::vector<Pixel> & seeds, int height, int width)
    {
        require(height > 0 && width > 0, "distance transform needs a non-empty grid");
        const double inf = std::numeric_limits<double>::infinity();
        Image d(height, width, 1, inf);
        for (const Pixel & p : seeds)
        {
            require(p.row >= 0 && p.row < height && p.col >= 0 && p.col < width, "distance transform seed outside the grid");
            d.at(p.row, p.col) = 0.0;
        }
        for (int r = 0; r < height; ++r)
        {
            for (int c = 0; c < width; ++c)
            {
                double & v = d.at(r, c);
                if (r > 0)
                {
                    v = std::min(v, d.at(r - 1, c) + 1.0);
                }
                if (c > 0)
                {
                    v = std::min(v, d.at(r, c - 1) + 1.0);
                }
            }
        }
        for (int r = height; r-- > 0;)
        {
            for (int c = width; c-- > 0;)
            {
                double & v = d.at(r, c);
                if (r + 1 < height)
                {
                    v = std::min(v, d.at(r + 1, c) + 1.0);
                }
                if (c + 1 < width)
                {
                    v = std::min(v, d.at(r, c + 1) + 1.0);
                }
            }
        }
        return d;
    }

    SilhouetteLoss pseudo_silhouette_loss(const Image & rendered, const Image & pseudo)
    {
        require_mask(rendered, "rendered mask");
        require_mask(pseudo, "pseudo mask");
        require_same(rendered, pseudo, "pseudo_silhouette_loss");
        const double n = double(rendered.pixels());
        SilhouetteLoss out;
        const VecX diff = rendered.data.col(0) - pseudo.data.col(0);
        out.mse = diff.squaredNorm() / n;
        out.grad = Image(rendered.height, rendered.width, 1);
        out.grad.data.col(0) = (2.0 / n) * diff;

        const auto rendered_edges = edge_pixels(rendered);
        if (rendered_edges.empty())
        {
            return out;
        }
        const auto pseudo_edges = edge_pixels(pseudo);
        require(!pseudo_edges.empty(), "pseudo mask has no edges while the rendered mask does");
        const Image dist = l1_distance_transform(pseudo_edges, pseudo.height, pseudo.width);
        const double count = double(rendered_edges.size());
        double total = 0.0;
        for (const Pixel & k : rendered_edges)
        {
            const double dk = dist.at(k.row, k.col);
            total += dk;
            out.grad.at(k.row, k.col) += dk * (rendered.at(k.row, k.col) - pseudo.at(k.row, k.col)) / count;
        }
        out.chamfer = total / count;
        return out;
    }

    Image composite_pseudo_normal(const Image & pseudo_normal, const Image & source_normal, const Image & m, const Image & keep)
    {
        require_same(pseudo_normal, source_normal, "composite_pseudo_normal");
        require_mask(m, "try-on mask");
        require_mask(keep, "keep mask");
        require(m.height == pseudo_normal.height && m.width == pseudo_normal.width && keep.height == m.height && keep.width == m.width,
                "composite_pseudo_normal: mask resolution differs from the normal maps");
        Image out = pseudo_normal;
        out.data = pseudo_normal.data.array().colwise() * m.data.col(0).array() + source_normal.data.array().colwise() * keep.data.col(0).array();
        return out;
    }

    ImageLoss normal_loss(const Image & rendered, const Image & composite)
    {
        require_same(rendered, composite, "normal_loss");
        require(rendered.data.size() > 0, "normal_loss: empty image");
        const double n = double(rendered.data.size());
        ImageLoss out;
        out.grad = rendered;
        out.grad.data = rendered.data - composite.data;
        out.value = out.grad.data.squaredNorm() / n;
        out.grad.data *= 2.0 / n;
        return out;
    }

    ImageLoss recon_loss(const Image & rendered, const Image & source, const Image & keep)
    {
        require_same(rendered, source, "recon_loss");
        require_mask(keep, "keep mask");
        require(keep.height == rendered.height && keep.width == rendered.width, "recon_loss: mask resolution differs from the images");
        const VecX on = (keep.data.col(0).array() > 0.5).cast<double>().matrix();
        ImageLoss out;
        out.grad = Image(rendered.height, rendered.width, rendered.channels());
        const double count = on.sum() * rendered.channels();
        if (count == 0.0)
        {
            return out;
        }
        const MatX diff = (rendered.data - source.data).array().colwise() * on.array();
        out.value = diff.squaredNorm() / count;
        out.grad.data = (2.0 / count) * diff;
        return out;
    }

    MeshLoss laplacian_loss(const TriMesh & mesh)
    {
        validate_indices(mesh);
        const auto nbrs = vertex_neighbors(mesh);
        MeshLoss out;
        out.grad = MatX3::Zero(mesh.num_vertices(), 3);
        Index used = 0;
        for (const auto & list : nbrs)
        {
            used += list.empty() ? 0 : 1;
        }
        require(used > 0, "laplacian_loss needs a vertex with neighbors");
        const double inv = 1.0 / double(used);
        for (Index i = 0; i < mesh.num_vertices(); ++i)
        {
            const auto & list = nbrs[std::size_t(i)];
            if (list.empty())
            {
                continue;
            }
            Vec3 centroid = Vec3::Zero();
            for (int j : list)
            {
                centroid += mesh.vertices.row(j).transpose();
            }
            centroid /= double(list.size());
            const Vec3 r = mesh.vertices.row(i).transpose() - centroid;
            out.value += r.squaredNorm() * inv;
            out.grad.row(i) += 2.0 * inv * r.transpose();
            const Vec3 share = (2.0 * inv / double(list.size())) * r;
            for (int j : list)
            {
                out.grad.row(j) -= share.transpose();
            }
        }
        return out;
    }

    void LossWeights::validate() const
    {
        for (double w : {psl, norm, lap, sds_norm, recon, sds_tex})
        {
            require(std::isfinite(w) && w >= 0.0, "loss weights must be finite and non-negative");
        }
    }

    double total_geometry_loss(const GeometryParts & parts, const LossWeights & weights)
    {
        weights.validate();
        check_term(parts.psl, "psl");
        check_term(parts.norm, "norm");
        check_term(parts.sds, "sds_norm");
        check_term(parts.lap, "lap");
        return weights.psl * parts.psl + weights.norm * parts.norm + weights.sds_norm * parts.sds + weights.lap * parts.lap;
    }

    double total_texture_loss(const TextureParts & parts, const LossWeights & weights)
    {
        weights.validate();
        check_term(parts.sds, "sds_tex");
        check_term(parts.recon, "recon");
        return weights.sds_tex * parts.sds + weights.recon * parts.recon;
    }
}  // namespace tryon
