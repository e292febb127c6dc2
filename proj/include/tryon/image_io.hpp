#pragma once

#include "tryon/types.hpp"

#include <filesystem>

namespace tryon
{
    /// 8-bit PNG to [0,1]. Gray (with or without alpha) gives 1 channel, color gives 3; alpha is dropped.
    Image read_png(const std::filesystem::path & path);

    /// Writes 1-channel images as grayscale and 3-channel images as RGB; values are clamped to [0,1].
    void write_png(const Image & image, const std::filesystem::path & path);

    /// Raw float plane: "TRFP", height, width, channels as u32 LE, then float32 LE samples in row-major HWC order.
    void write_raw_plane(const Image & image, const std::filesystem::path & path);
    Image read_raw_plane(const std::filesystem::path & path);

    /// Dispatches on extension: .png or .trfp.
    Image read_image(const std::filesystem::path & path);

    /// Area-weighted resampling (box filter with fractional pixel overlap).
    Image resize_area(const Image & image, int height, int width);
}  // namespace tryon
