#include "biskip/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "biskip/errors.hpp"
#include "biskip/image_io.hpp"

namespace biskip {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_same(const ByteImage& x, const ByteImage& y, const char* what) {
    if (!x.same_shape(y)) {
        throw ShapeMismatch(std::string(what) + ": " + std::to_string(x.height) + "x" + std::to_string(x.width) + "x" +
                            std::to_string(x.channels) + " vs " + std::to_string(y.height) + "x" +
                            std::to_string(y.width) + "x" + std::to_string(y.channels));
    }
}

// One channel as a double plane.
RowMatrix channel_plane(const ByteImage& img, int c) {
    RowMatrix m(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) m(y, x) = img.at(y, x, c);
    return m;
}

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> g(static_cast<std::size_t>(size));
    const double mid = (size - 1) / 2.0;
    double s = 0.0;
    for (int i = 0; i < size; ++i) {
        const double d = i - mid;
        g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        s += g[i];
    }
    for (double& v : g) v /= s;
    return g;
}

// Valid-mode separable filtering.
RowMatrix filter_valid(const RowMatrix& m, const std::vector<double>& g) {
    const int k = static_cast<int>(g.size());
    const int h = static_cast<int>(m.rows()), w = static_cast<int>(m.cols());
    RowMatrix tmp(h, w - k + 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w - k + 1; ++x) {
            double s = 0.0;
            for (int i = 0; i < k; ++i) s += g[i] * m(y, x + i);
            tmp(y, x) = s;
        }
    RowMatrix out(h - k + 1, w - k + 1);
    for (int y = 0; y < h - k + 1; ++y)
        for (int x = 0; x < w - k + 1; ++x) {
            double s = 0.0;
            for (int i = 0; i < k; ++i) s += g[i] * tmp(y + i, x);
            out(y, x) = s;
        }
    return out;
}

struct SsimParts {
    double ssim;
    double cs;
};

constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);

SsimParts ssim_plane(const RowMatrix& a, const RowMatrix& b) {
    static const std::vector<double> window = gaussian_window(11, 1.5);
    const RowMatrix mu_a = filter_valid(a, window);
    const RowMatrix mu_b = filter_valid(b, window);
    const RowMatrix e_ab = filter_valid(a.cwiseProduct(b), window);
    const RowMatrix e_sq = filter_valid(a.cwiseProduct(a) + b.cwiseProduct(b), window);
    double ssim_sum = 0.0, cs_sum = 0.0;
    const auto n = mu_a.size();
    for (Eigen::Index i = 0; i < n; ++i) {
        const double ma = mu_a.data()[i], mb = mu_b.data()[i];
        const double num0 = 2.0 * ma * mb;
        const double den0 = ma * ma + mb * mb;
        const double lum = (num0 + kC1) / (den0 + kC1);
        const double cs = (2.0 * e_ab.data()[i] - num0 + kC2) / (e_sq.data()[i] - den0 + kC2);
        ssim_sum += lum * cs;
        cs_sum += cs;
    }
    return {ssim_sum / static_cast<double>(n), cs_sum / static_cast<double>(n)};
}

RowMatrix downsample2(const RowMatrix& m) {
    const int h = static_cast<int>(m.rows()), w = static_cast<int>(m.cols());
    const int ph = h + (h % 2), pw = w + (w % 2);
    auto at = [&](int y, int x) { return m(std::min(y, h - 1), std::min(x, w - 1)); };
    RowMatrix out(ph / 2, pw / 2);
    for (int y = 0; y < ph / 2; ++y)
        for (int x = 0; x < pw / 2; ++x)
            out(y, x) = 0.25 * (at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1));
    return out;
}

int mirror(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

RowMatrix dct_basis(int n) {
    RowMatrix c(n, n);
    for (int k = 0; k < n; ++k) {
        const double alpha = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
        for (int i = 0; i < n; ++i) c(k, i) = alpha * std::cos(M_PI * (2.0 * i + 1.0) * k / (2.0 * n));
    }
    return c;
}

std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

double psnr(const ByteImage& x, const ByteImage& y) {
    require_same(x, y, "psnr");
    double se = 0.0;
    for (std::size_t i = 0; i < x.pixels.size(); ++i) {
        const double d = static_cast<double>(x.pixels[i]) - y.pixels[i];
        se += d * d;
    }
    if (se == 0.0) return std::numeric_limits<double>::infinity();
    const double mse = se / static_cast<double>(x.pixels.size());
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double ssim(const ByteImage& x, const ByteImage& y) {
    require_same(x, y, "ssim");
    if (x.height < 11 || x.width < 11) throw DimensionError("ssim needs images of at least 11x11");
    double total = 0.0;
    for (int c = 0; c < x.channels; ++c) total += ssim_plane(channel_plane(x, c), channel_plane(y, c)).ssim;
    return total / x.channels;
}

double msssim(const ByteImage& x, const ByteImage& y) {
    static constexpr double kWeights[] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    require_same(x, y, "msssim");
    if (x.height < kMsssimMinSize || x.width < kMsssimMinSize) {
        throw DimensionError("msssim needs images of at least " + std::to_string(kMsssimMinSize) + " pixels per side");
    }
    double total = 0.0;
    for (int c = 0; c < x.channels; ++c) {
        RowMatrix a = channel_plane(x, c), b = channel_plane(y, c);
        double product = 1.0;
        for (int s = 0; s < 5; ++s) {
            if (s > 0) {
                a = downsample2(a);
                b = downsample2(b);
            }
            const SsimParts parts = ssim_plane(a, b);
            const double term = s < 4 ? parts.cs : parts.ssim;
            product *= std::pow(std::max(term, 0.0), kWeights[s]);
        }
        total += product;
    }
    return total / x.channels;
}

Tensor dct2(const Tensor& plane) {
    const int h = plane.dim(0), w = plane.dim(1);
    const RowMatrix ch = dct_basis(h), cw = dct_basis(w);
    Eigen::Map<const RowMatrix> x(plane.data(), h, w);
    Tensor out({h, w});
    Eigen::Map<RowMatrix>(out.data(), h, w) = ch * x * cw.transpose();
    return out;
}

Tensor idct2(const Tensor& coeffs) {
    const int h = coeffs.dim(0), w = coeffs.dim(1);
    const RowMatrix ch = dct_basis(h), cw = dct_basis(w);
    Eigen::Map<const RowMatrix> x(coeffs.data(), h, w);
    Tensor out({h, w});
    Eigen::Map<RowMatrix>(out.data(), h, w) = ch.transpose() * x * cw;
    return out;
}

Tensor gaussian_blur(const Tensor& plane, double sigma) {
    const int h = plane.dim(0), w = plane.dim(1);
    if (sigma <= 0.0) return plane;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    const std::vector<double> g = gaussian_window(2 * radius + 1, sigma);
    Tensor tmp({h, w}), out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) s += g[i + radius] * plane[static_cast<std::size_t>(y) * w + mirror(x + i, w)];
            tmp[static_cast<std::size_t>(y) * w + x] = s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) s += g[i + radius] * tmp[static_cast<std::size_t>(mirror(y + i, h)) * w + x];
            out[static_cast<std::size_t>(y) * w + x] = s;
        }
    return out;
}

Tensor saliency_map(const ByteImage& img) {
    const Tensor gray = luma(img);
    Tensor coeffs = dct2(gray);
    // Coefficients at rounding-noise level count as zero so that flat
    // regions keep a zero AC signature.
    const double tol = 1e-9 * std::max(1.0, coeffs.max_abs());
    for (double& c : coeffs.values()) c = std::abs(c) <= tol ? 0.0 : (c > 0.0 ? 1.0 : -1.0);
    Tensor recon = idct2(coeffs);
    for (double& v : recon.values()) v *= v;
    Tensor smooth = gaussian_blur(recon, 0.045 * std::min(img.height, img.width));
    const auto [lo, hi] = std::minmax_element(smooth.values().begin(), smooth.values().end());
    const double mn = *lo, mx = *hi;
    if (mx - mn <= 1e-12 * std::max(1.0, std::abs(mx))) {
        smooth.fill(0.0);
        return smooth;
    }
    for (double& v : smooth.values()) v = (v - mn) / (mx - mn);
    return smooth;
}

// --- evaluation -------------------------------------------------------------

EvalReport summarize(std::vector<EvalRow> rows) {
    EvalReport r;
    r.rows = std::move(rows);
    if (r.rows.empty()) return r;
    double psnr_sum = 0.0, ssim_sum = 0.0, ms_sum = 0.0, rt_sum = 0.0;
    int finite = 0, ms_count = 0;
    for (const auto& row : r.rows) {
        if (std::isinf(row.psnr_db)) {
            ++r.psnr_inf_count;
        } else {
            psnr_sum += row.psnr_db;
            ++finite;
        }
        ssim_sum += row.ssim;
        rt_sum += row.runtime_s;
        if (row.msssim) {
            ms_sum += *row.msssim;
            ++ms_count;
        }
    }
    const double n = static_cast<double>(r.rows.size());
    r.mean_psnr_db = finite ? psnr_sum / finite : std::numeric_limits<double>::infinity();
    r.mean_ssim = ssim_sum / n;
    r.mean_runtime_s = rt_sum / n;
    if (ms_count) r.mean_msssim = ms_sum / ms_count;
    return r;
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "id,psnr_db,ssim,msssim,runtime_s\n";
    for (const auto& row : rows) {
        out << row.id << ',' << format_double(row.psnr_db) << ',' << format_double(row.ssim) << ','
            << (row.msssim ? format_double(*row.msssim) : "") << ',' << format_double(row.runtime_s) << '\n';
    }
}

void EvalReport::write_json(const std::filesystem::path& path) const {
    nlohmann::json j;
    j["count"] = rows.size();
    j["mean_psnr_db"] = std::isinf(mean_psnr_db) ? nlohmann::json("inf") : nlohmann::json(mean_psnr_db);
    j["psnr_inf_count"] = psnr_inf_count;
    j["psnr_note"] = "rows with identical output and sharp images report psnr 'inf' and are excluded from the mean";
    j["mean_ssim"] = mean_ssim;
    j["mean_msssim"] = mean_msssim ? nlohmann::json(*mean_msssim) : nlohmann::json(nullptr);
    j["mean_runtime_s"] = mean_runtime_s;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

Tensor deblur(const Generator& model, const Tensor& blurred) {
    const Tensor padded = reflect_pad_to_multiple(blurred, model.spec().size_divisor());
    const Tensor out = model.forward(padded);
    return crop(out, 0, 0, blurred.height(), blurred.width());
}

EvalReport evaluate(const Generator& model, const std::vector<ImagePair>& dataset, const EvalConfig& config) {
    if (dataset.empty()) throw DataError("evaluate: empty dataset");
    std::vector<EvalRow> rows;
    for (const ImagePair& pair : dataset) {
        if (pair.sharp.shape() != pair.blurred.shape()) throw DataError("evaluate: dimension mismatch in pair " + pair.id);
        const Tensor padded = reflect_pad_to_multiple(pair.blurred, model.spec().size_divisor());
        const auto t0 = std::chrono::steady_clock::now();
        const Tensor restored = model.forward(padded);
        const auto t1 = std::chrono::steady_clock::now();
        const ByteImage output = to_bytes(crop(restored, 0, 0, pair.blurred.height(), pair.blurred.width()));
        const ByteImage sharp = to_bytes(pair.sharp);

        EvalRow row;
        row.id = pair.id;
        row.runtime_s = std::chrono::duration<double>(t1 - t0).count();
        row.psnr_db = psnr(output, sharp);
        row.ssim = ssim(output, sharp);
        if (output.height >= kMsssimMinSize && output.width >= kMsssimMinSize) row.msssim = msssim(output, sharp);

        if (config.saliency_dir) {
            const std::string stem = std::filesystem::path(pair.id).stem().string();
            const ByteImage blurred = to_bytes(pair.blurred);
            const std::pair<const char*, const ByteImage*> views[] = {
                {"blurred", &blurred}, {"sharp", &sharp}, {"output", &output}};
            for (const auto& [tag, img] : views) {
                const Tensor map = saliency_map(*img);
                const auto gray_path = *config.saliency_dir / (stem + "_" + tag + "_saliency.png");
                const auto heat_path = *config.saliency_dir / (stem + "_" + tag + "_heat.png");
                write_png(gray_path, map_to_gray(map));
                write_png(heat_path, heatmap_overlay(*img, map));
                row.saliency_files.push_back(gray_path);
                row.saliency_files.push_back(heat_path);
            }
        }
        rows.push_back(std::move(row));
    }
    std::sort(rows.begin(), rows.end(), [](const EvalRow& a, const EvalRow& b) { return a.id < b.id; });
    return summarize(std::move(rows));
}

}  // namespace biskip
