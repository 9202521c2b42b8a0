#pragma once

#include <cstdint>
#include <vector>

#include "biskip/tensor.hpp"

namespace biskip {

// 8-bit interleaved (HWC) image as decoded from / encoded to disk.
struct ByteImage {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;

    ByteImage() = default;
    ByteImage(int h, int w, int c, std::uint8_t fill = 0)
        : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

    std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    std::uint8_t at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    bool same_shape(const ByteImage& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
    friend bool operator==(const ByteImage&, const ByteImage&) = default;
};

// x / 127.5 - 1, giving a CHW tensor in [-1, 1].
Tensor to_model_range(const ByteImage& img);
// Clamp to [-1,1], map to [0,255] and round half up.
ByteImage to_bytes(const Tensor& chw);
std::uint8_t quantize(double model_value);

// BT.601 luma of a byte image, as an HxW tensor on the 0-255 scale.
Tensor luma(const ByteImage& img);

// Pads bottom/right by mirror reflection so both dims become multiples of
// `multiple`; crop() with the original size undoes it.
Tensor reflect_pad_to_multiple(const Tensor& chw, int multiple);
Tensor crop(const Tensor& chw, int y, int x, int height, int width);

}  // namespace biskip
