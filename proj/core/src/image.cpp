#include "biskip/image.hpp"

#include <algorithm>
#include <cmath>

#include "biskip/errors.hpp"

namespace biskip {

Tensor to_model_range(const ByteImage& img) {
    Tensor t({img.channels, img.height, img.width});
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) t.at(c, y, x) = img.at(y, x, c) / 127.5 - 1.0;
    return t;
}

std::uint8_t quantize(double v) {
    const double clamped = std::clamp(v, -1.0, 1.0);
    const double scaled = std::floor((clamped + 1.0) * 127.5 + 0.5);
    return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

ByteImage to_bytes(const Tensor& t) {
    if (t.rank() != 3) throw ShapeMismatch("to_bytes expects CHW, got " + shape_to_string(t.shape()));
    ByteImage img(t.height(), t.width(), t.channels());
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) img.at(y, x, c) = quantize(t.at(c, y, x));
    return img;
}

Tensor luma(const ByteImage& img) {
    Tensor out({img.height, img.width});
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double v;
            if (img.channels >= 3) {
                v = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
            } else {
                v = img.at(y, x, 0);
            }
            out[static_cast<std::size_t>(y) * img.width + x] = v;
        }
    return out;
}

namespace {
// Mirror index without repeating the edge sample, periodic for any offset.
int mirror(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}
}  // namespace

Tensor reflect_pad_to_multiple(const Tensor& t, int multiple) {
    const int h = t.height(), w = t.width();
    const int ph = (h + multiple - 1) / multiple * multiple;
    const int pw = (w + multiple - 1) / multiple * multiple;
    if (ph == h && pw == w) return t;
    Tensor out({t.channels(), ph, pw});
    for (int c = 0; c < t.channels(); ++c)
        for (int y = 0; y < ph; ++y)
            for (int x = 0; x < pw; ++x) out.at(c, y, x) = t.at(c, mirror(y, h), mirror(x, w));
    return out;
}

Tensor crop(const Tensor& t, int y0, int x0, int height, int width) {
    if (y0 < 0 || x0 < 0 || y0 + height > t.height() || x0 + width > t.width()) {
        throw DimensionError("crop window outside image " + shape_to_string(t.shape()));
    }
    Tensor out({t.channels(), height, width});
    for (int c = 0; c < t.channels(); ++c)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) out.at(c, y, x) = t.at(c, y0 + y, x0 + x);
    return out;
}

}  // namespace biskip
