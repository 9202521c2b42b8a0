#include "biskip/image_io.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "biskip/errors.hpp"

namespace biskip {

namespace {

ByteImage from_mat(const cv::Mat& m) {
    ByteImage img(m.rows, m.cols, m.channels());
    for (int y = 0; y < m.rows; ++y) {
        const std::uint8_t* row = m.ptr<std::uint8_t>(y);
        std::copy(row, row + static_cast<std::size_t>(m.cols) * m.channels(),
                  img.pixels.begin() + static_cast<std::ptrdiff_t>(y) * m.cols * m.channels());
    }
    return img;
}

cv::Mat to_mat(const ByteImage& img) {
    cv::Mat m(img.height, img.width, CV_8UC(img.channels));
    for (int y = 0; y < img.height; ++y) {
        std::copy(img.pixels.begin() + static_cast<std::ptrdiff_t>(y) * img.width * img.channels,
                  img.pixels.begin() + static_cast<std::ptrdiff_t>(y + 1) * img.width * img.channels,
                  m.ptr<std::uint8_t>(y));
    }
    return m;
}

}  // namespace

ByteImage read_image(const std::filesystem::path& path) {
    cv::Mat bgr;
    try {
        bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    } catch (const cv::Exception& e) {
        throw DataError("cannot decode image " + path.string() + ": " + e.what());
    }
    if (bgr.empty()) throw DataError("cannot decode image " + path.string());
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    return from_mat(rgb);
}

void write_png(const std::filesystem::path& path, const ByteImage& img) {
    if (img.channels != 1 && img.channels != 3) throw DataError("write_png supports 1 or 3 channels");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    cv::Mat m = to_mat(img);
    if (img.channels == 3) cv::cvtColor(m, m, cv::COLOR_RGB2BGR);
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), m);
    } catch (const cv::Exception& e) {
        throw DataError("cannot write " + path.string() + ": " + e.what());
    }
    if (!ok) throw DataError("cannot write " + path.string());
}

ByteImage map_to_gray(const Tensor& map) {
    const int h = map.dim(0), w = map.dim(1);
    ByteImage img(h, w, 1);
    for (std::size_t i = 0; i < map.size(); ++i) {
        img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::floor(map[i] * 255.0 + 0.5), 0.0, 255.0));
    }
    return img;
}

ByteImage heatmap_overlay(const ByteImage& base, const Tensor& map, double map_weight) {
    const ByteImage gray = map_to_gray(map);
    if (gray.height != base.height || gray.width != base.width) throw ShapeMismatch("heatmap_overlay size mismatch");
    cv::Mat colored;
    cv::applyColorMap(to_mat(gray), colored, cv::COLORMAP_JET);
    cv::cvtColor(colored, colored, cv::COLOR_BGR2RGB);
    cv::Mat under = to_mat(base);
    if (base.channels == 1) cv::cvtColor(under, under, cv::COLOR_GRAY2RGB);
    cv::Mat blended;
    cv::addWeighted(colored, map_weight, under, 1.0 - map_weight, 0.0, blended);
    return from_mat(blended);
}

}  // namespace biskip
