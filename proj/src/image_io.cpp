#include "tryon/image_io.hpp"

#include "binary_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace tryon
{
    namespace
    {
        constexpr char kPlaneMagic[4] = {'T', 'R', 'F', 'P'};

        struct FileCloser
        {
            void operator()(std::FILE * f) const { std::fclose(f); }
        };
        using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
    }  // namespace

    Image read_png(const std::filesystem::path & path)
    {
        FilePtr file(std::fopen(path.c_str(), "rb"));
        require(file != nullptr, "cannot open image: " + path.string());
        unsigned char sig[8];
        require(std::fread(sig, 1, 8, file.get()) == 8 && png_sig_cmp(sig, 0, 8) == 0, "not a PNG file: " + path.string());
        png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png ? png_create_info_struct(png) : nullptr;
        require(png && info, "libpng initialization failed");
        if (setjmp(png_jmpbuf(png)))
        {
            png_destroy_read_struct(&png, &info, nullptr);
            throw InvalidInput("corrupt PNG file: " + path.string());
        }
        png_init_io(png, file.get());
        png_set_sig_bytes(png, 8);
        png_read_info(png, info);
        const int color = png_get_color_type(png, info);
        const int depth = png_get_bit_depth(png, info);
        if (depth == 16)
        {
            png_set_strip_16(png);
        }
        if (color == PNG_COLOR_TYPE_PALETTE)
        {
            png_set_palette_to_rgb(png);
        }
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
        {
            png_set_expand_gray_1_2_4_to_8(png);
        }
        if (color & PNG_COLOR_MASK_ALPHA)
        {
            png_set_strip_alpha(png);
        }
        png_read_update_info(png, info);
        const int width = int(png_get_image_width(png, info));
        const int height = int(png_get_image_height(png, info));
        const int channels = int(png_get_channels(png, info));
        std::vector<png_byte> buffer(std::size_t(height) * std::size_t(width) * std::size_t(channels));
        std::vector<png_bytep> rows(static_cast<std::size_t>(height));
        for (int r = 0; r < height; ++r)
        {
            rows[std::size_t(r)] = buffer.data() + std::size_t(r) * std::size_t(width) * std::size_t(channels);
        }
        png_read_image(png, rows.data());
        png_read_end(png, nullptr);
        png_destroy_read_struct(&png, &info, nullptr);
        require(channels == 1 || channels == 3, "unsupported PNG channel layout: " + path.string());
        Image img(height, width, channels);
        for (std::size_t i = 0; i < buffer.size(); ++i)
        {
            img.data.data()[i] = buffer[i] / 255.0;
        }
        return img;
    }

    void write_png(const Image & image, const std::filesystem::path & path)
    {
        require(image.channels() == 1 || image.channels() == 3, "PNG export needs 1 or 3 channels");
        require(!image.empty(), "cannot export an empty image");
        FilePtr file(std::fopen(path.c_str(), "wb"));
        if (!file)
        {
            throw std::runtime_error("cannot write image: " + path.string());
        }
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info || setjmp(png_jmpbuf(png)))
        {
            png_destroy_write_struct(&png, &info);
            throw std::runtime_error("PNG encoding failed: " + path.string());
        }
        png_init_io(png, file.get());
        png_set_IHDR(png, info, png_uint_32(image.width), png_uint_32(image.height), 8, image.channels() == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        std::vector<png_byte> row(std::size_t(image.width) * std::size_t(image.channels()));
        for (int r = 0; r < image.height; ++r)
        {
            for (int c = 0; c < image.width; ++c)
            {
                for (int ch = 0; ch < image.channels(); ++ch)
                {
                    const double v = std::clamp(image.at(r, c, ch), 0.0, 1.0);
                    row[std::size_t(c * image.channels() + ch)] = png_byte(std::lround(v * 255.0));
                }
            }
            png_write_row(png, row.data());
        }
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    }

    void write_raw_plane(const Image & image, const std::filesystem::path & path)
    {
        std::ofstream out(path, std::ios::binary);
        if (!out)
        {
            throw std::runtime_error("cannot write float plane: " + path.string());
        }
        out.write(kPlaneMagic, 4);
        detail::write_u32(out, std::uint32_t(image.height));
        detail::write_u32(out, std::uint32_t(image.width));
        detail::write_u32(out, std::uint32_t(image.channels()));
        detail::write_f32_block(out, image.data.data(), image.data.size());
    }

    Image read_raw_plane(const std::filesystem::path & path)
    {
        std::ifstream in(path, std::ios::binary);
        require(bool(in), "cannot open float plane: " + path.string());
        char magic[4] = {};
        in.read(magic, 4);
        require(bool(in) && std::equal(magic, magic + 4, kPlaneMagic), "not a float plane: " + path.string());
        const std::string what = "float plane " + path.string();
        const auto h = detail::read_u32(in, what), w = detail::read_u32(in, what), c = detail::read_u32(in, what);
        require(h > 0 && w > 0 && c > 0 && h <= 16384 && w <= 16384 && c <= 16, "implausible float plane header: " + path.string());
        Image img(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
        detail::read_f32_block(in, img.data.data(), img.data.size(), what);
        return img;
    }

    Image read_image(const std::filesystem::path & path)
    {
        require(std::filesystem::exists(path), "missing image file: " + path.string());
        const auto ext = path.extension().string();
        if (ext == ".png" || ext == ".PNG")
        {
            return read_png(path);
        }
        if (ext == ".trfp")
        {
            return read_raw_plane(path);
        }
        throw InvalidInput("unsupported image extension: " + path.string());
    }

    Image resize_area(const Image & image, int height, int width)
    {
        require(height > 0 && width > 0 && !image.empty(), "resize needs non-empty source and target");
        if (height == image.height && width == image.width)
        {
            return image;
        }
        // separable box filter: weights[i] holds (source index, overlap) for output i
        auto weights = [](int src, int dst)
        {
            std::vector<std::vector<std::pair<int, double>>> w(static_cast<std::size_t>(dst));
            const double scale = double(src) / dst;
            for (int i = 0; i < dst; ++i)
            {
                const double lo = i * scale, hi = (i + 1) * scale;
                for (int s = int(std::floor(lo)); s < int(std::ceil(hi)) && s < src; ++s)
                {
                    const double overlap = std::min(hi, s + 1.0) - std::max(lo, double(s));
                    if (overlap > 0.0)
                    {
                        w[std::size_t(i)].emplace_back(s, overlap / scale);
                    }
                }
            }
            return w;
        };
        const auto wr = weights(image.height, height), wc = weights(image.width, width);
        Image out(height, width, image.channels());
        for (int r = 0; r < height; ++r)
        {
            for (int c = 0; c < width; ++c)
            {
                Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(image.channels());
                for (const auto & [sr, a] : wr[std::size_t(r)])
                {
                    for (const auto & [sc, b] : wc[std::size_t(c)])
                    {
                        acc += a * b * image.data.row(Index(sr) * image.width + sc);
                    }
                }
                out.data.row(Index(r) * width + c) = acc;
            }
        }
        return out;
    }
}  // namespace tryon
