#pragma once

#include "tryon/types.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace tryon::detail
{
    template <typename T>
    T to_little(T value)
    {
        if constexpr (std::endian::native == std::endian::big)
        {
            unsigned char bytes[sizeof(T)];
            std::memcpy(bytes, &value, sizeof(T));
            for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
            {
                std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
            }
            std::memcpy(&value, bytes, sizeof(T));
        }
        return value;
    }

    inline void write_u32(std::ostream & out, std::uint32_t v)
    {
        v = to_little(v);
        out.write(reinterpret_cast<const char *>(&v), sizeof(v));
    }

    inline void write_f32(std::ostream & out, float v)
    {
        std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
        write_u32(out, bits);
    }

    inline std::uint32_t read_u32(std::istream & in, const std::string & what)
    {
        std::uint32_t v = 0;
        in.read(reinterpret_cast<char *>(&v), sizeof(v));
        require(bool(in), "truncated " + what);
        return to_little(v);
    }

    inline float read_f32(std::istream & in, const std::string & what)
    {
        return std::bit_cast<float>(read_u32(in, what));
    }

    inline void write_f32_block(std::ostream & out, const double * data, Index count)
    {
        for (Index i = 0; i < count; ++i)
        {
            write_f32(out, float(data[i]));
        }
    }

    inline void read_f32_block(std::istream & in, double * data, Index count, const std::string & what)
    {
        for (Index i = 0; i < count; ++i)
        {
            data[i] = double(read_f32(in, what));
        }
    }
}  // namespace tryon::detail
