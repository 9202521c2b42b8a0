#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "biskip/data.hpp"
#include "biskip/image.hpp"
#include "biskip/model.hpp"

namespace biskip {

// 10 log10(255^2 / MSE) on 8-bit images; +infinity for identical images.
double psnr(const ByteImage& x, const ByteImage& y);

// Gaussian-window SSIM (11x11, sigma 1.5, K1 = 0.01, K2 = 0.03, L = 255),
// valid-region mean, averaged over channels. Needs both dims >= 11.
double ssim(const ByteImage& x, const ByteImage& y);

// Five-scale MS-SSIM with weights {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
// 2x2 average-pool between scales (odd extents padded by repeating the last
// row/column). Needs both dims >= 176.
double msssim(const ByteImage& x, const ByteImage& y);
constexpr int kMsssimMinSize = 11 << 4;

// Spectral-signature saliency: smooth(IDCT(sign(DCT(luma)))^2), min-max
// normalized to [0,1]; all zeros when the smoothed map is constant.
// Smoothing sigma is 0.045 * min(H, W).
Tensor saliency_map(const ByteImage& img);

// Orthonormal 2-D DCT-II of an HxW plane and its inverse.
Tensor dct2(const Tensor& plane);
Tensor idct2(const Tensor& coeffs);
// Separable Gaussian blur with mirrored borders.
Tensor gaussian_blur(const Tensor& plane, double sigma);

struct EvalRow {
    std::string id;
    double psnr_db = 0.0;  // +inf when output equals the sharp image
    double ssim = 0.0;
    std::optional<double> msssim;  // empty when the image is below kMsssimMinSize
    double runtime_s = 0.0;
    std::vector<std::filesystem::path> saliency_files;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_psnr_db = 0.0;  // over finite rows only
    int psnr_inf_count = 0;
    double mean_ssim = 0.0;
    std::optional<double> mean_msssim;
    double mean_runtime_s = 0.0;

    void write_csv(const std::filesystem::path& path) const;
    void write_json(const std::filesystem::path& path) const;
};

struct EvalConfig {
    // When set, writes <id>_{blurred,sharp,output}_saliency.png plus _heat.png overlays.
    std::optional<std::filesystem::path> saliency_dir;
};

// Aggregates the rows (means exclude infinite PSNR and missing MS-SSIM).
EvalReport summarize(std::vector<EvalRow> rows);

// Deblurs every pair (mirror-pad to a multiple of the generator's divisor,
// crop back), quantizes to 8 bits and scores against the sharp image.
// Runtime covers the generator forward pass only.
EvalReport evaluate(const Generator& model, const std::vector<ImagePair>& dataset, const EvalConfig& config = {});

// Pad/forward/crop for an arbitrary-size CHW image.
Tensor deblur(const Generator& model, const Tensor& blurred);

}  // namespace biskip
