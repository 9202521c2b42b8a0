#include "biskip/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "biskip/errors.hpp"
#include "biskip/image.hpp"
#include "biskip/image_io.hpp"
#include "biskip/random.hpp"

namespace biskip {

namespace fs = std::filesystem;

namespace {

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::map<std::string, fs::path> list_images(const fs::path& dir) {
    std::map<std::string, fs::path> files;
    if (!fs::is_directory(dir)) return files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && is_image_file(entry.path())) {
            files.emplace(entry.path().filename().string(), entry.path());
        }
    }
    return files;
}

int mirror(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

}  // namespace

std::vector<ImagePair> load_paired_dataset(const fs::path& root) {
    if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " does not exist");
    const auto blur = list_images(root / "blur");
    const auto sharp = list_images(root / "sharp");
    for (const auto& [name, path] : blur) {
        if (!sharp.count(name)) throw DataError("pairing error: " + name + " has no counterpart in sharp/");
    }
    for (const auto& [name, path] : sharp) {
        if (!blur.count(name)) throw DataError("pairing error: " + name + " has no counterpart in blur/");
    }
    std::vector<ImagePair> pairs;
    for (const auto& [name, blur_path] : blur) {
        ImagePair p;
        p.id = name;
        p.blurred = to_model_range(read_image(blur_path));
        p.sharp = to_model_range(read_image(sharp.at(name)));
        if (p.blurred.shape() != p.sharp.shape()) {
            throw DataError("dimension mismatch in pair " + name + ": blur " + shape_to_string(p.blurred.shape()) +
                            " vs sharp " + shape_to_string(p.sharp.shape()));
        }
        pairs.push_back(std::move(p));
    }
    return pairs;
}

// --- kernels ----------------------------------------------------------------

void MotionKernel::validate() const {
    if (size < 1 || size % 2 == 0) throw ArgumentError("motion kernel size must be odd, got " + std::to_string(size));
    if (taps.size() != static_cast<std::size_t>(size) * size) throw ArgumentError("motion kernel tap count mismatch");
    double s = 0.0;
    for (double t : taps) {
        if (!(t >= 0.0)) throw ArgumentError("motion kernel taps must be non-negative");
        s += t;
    }
    if (std::abs(s - 1.0) > 1e-6) throw ArgumentError("motion kernel taps must sum to 1");
}

MotionKernel delta_kernel(int size) {
    MotionKernel k;
    k.size = size;
    k.taps.assign(static_cast<std::size_t>(size) * size, 0.0);
    k.taps[static_cast<std::size_t>(size / 2) * size + size / 2] = 1.0;
    k.validate();
    return k;
}

MotionKernel generate_motion_kernel(std::uint64_t seed, int size, int steps) {
    if (size < 1 || size % 2 == 0) throw ArgumentError("motion kernel size must be odd, got " + std::to_string(size));
    if (steps < 1) throw ArgumentError("motion kernel needs at least one step");
    Rng rng(seed);
    std::vector<double> xs{0.0}, ys{0.0};
    double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (int s = 1; s < steps; ++s) {
        heading += rng.normal(0.0, 0.5);
        xs.push_back(xs.back() + std::cos(heading));
        ys.push_back(ys.back() + std::sin(heading));
    }
    double cx = 0.0, cy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        cx += xs[i];
        cy += ys[i];
    }
    cx /= static_cast<double>(xs.size());
    cy /= static_cast<double>(ys.size());

    MotionKernel k;
    k.size = size;
    k.taps.assign(static_cast<std::size_t>(size) * size, 0.0);
    const double centre = size / 2;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double px = std::clamp(xs[i] - cx + centre, 0.0, size - 1.0);
        const double py = std::clamp(ys[i] - cy + centre, 0.0, size - 1.0);
        const int x0 = static_cast<int>(std::floor(px));
        const int y0 = static_cast<int>(std::floor(py));
        const double fx = px - x0;
        const double fy = py - y0;
        const int x1 = std::min(x0 + 1, size - 1);
        const int y1 = std::min(y0 + 1, size - 1);
        auto tap = [&](int y, int x) -> double& { return k.taps[static_cast<std::size_t>(y) * size + x]; };
        tap(y0, x0) += (1 - fx) * (1 - fy);
        tap(y0, x1) += fx * (1 - fy);
        tap(y1, x0) += (1 - fx) * fy;
        tap(y1, x1) += fx * fy;
    }
    double total = 0.0;
    for (double t : k.taps) total += t;
    for (double& t : k.taps) t /= total;
    return k;
}

void write_kernel(const fs::path& path, const MotionKernel& k) {
    k.validate();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write kernel file " + path.string());
    char buf[32];
    for (int y = 0; y < k.size; ++y) {
        for (int x = 0; x < k.size; ++x) {
            std::snprintf(buf, sizeof buf, "%.17g", k.at(y, x));
            out << (x ? " " : "") << buf;
        }
        out << '\n';
    }
}

MotionKernel read_kernel(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read kernel file " + path.string());
    std::vector<double> taps;
    int rows = 0;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        double v;
        int cols = 0;
        while (ls >> v) {
            taps.push_back(v);
            ++cols;
        }
        if (cols) ++rows;
    }
    MotionKernel k;
    k.size = rows;
    k.taps = std::move(taps);
    try {
        k.validate();
    } catch (const ArgumentError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return k;
}

Tensor synth_blur(const Tensor& sharp, const MotionKernel& k) {
    k.validate();
    const int h = sharp.height(), w = sharp.width();
    if (k.size > h || k.size > w) {
        throw DimensionError("kernel of size " + std::to_string(k.size) + " larger than image " +
                             shape_to_string(sharp.shape()));
    }
    const int r = k.size / 2;
    Tensor out(sharp.shape());
    for (int c = 0; c < sharp.channels(); ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = 0; i < k.size; ++i)
                    for (int j = 0; j < k.size; ++j) {
                        const double tap = k.at(i, j);
                        if (tap == 0.0) continue;
                        // True convolution: tap (i, j) reads the sample at offset -(i-r, j-r).
                        acc += tap * sharp.at(c, mirror(y - (i - r), h), mirror(x - (j - r), w));
                    }
                out.at(c, y, x) = std::clamp(acc, -1.0, 1.0);
            }
    return out;
}

// --- cropping ---------------------------------------------------------------

CropWindow random_crop_window(int height, int width, int crop, std::uint64_t seed, const std::string& id) {
    if (crop <= 0) throw ArgumentError("crop size must be positive");
    if (height < crop || width < crop) {
        throw DimensionError("image " + std::to_string(height) + "x" + std::to_string(width) + " smaller than crop " +
                             std::to_string(crop));
    }
    Rng rng(mix_seed(seed, hash_string(id)));
    CropWindow win;
    win.y = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(height - crop + 1)));
    win.x = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(width - crop + 1)));
    return win;
}

ImagePair random_crop_pair(const ImagePair& pair, int crop_size, std::uint64_t seed) {
    require_same_shape(pair.sharp, pair.blurred, "random_crop_pair");
    const CropWindow win = random_crop_window(pair.sharp.height(), pair.sharp.width(), crop_size, seed, pair.id);
    return {crop(pair.sharp, win.y, win.x, crop_size, crop_size), crop(pair.blurred, win.y, win.x, crop_size, crop_size),
            pair.id};
}

// --- synthetic scenes -------------------------------------------------------

Tensor synthetic_scene(std::uint64_t seed, int height, int width, int channels) {
    Rng rng(seed);
    Tensor img({channels, height, width});
    std::vector<double> base(static_cast<std::size_t>(channels)), slope_x(base.size()), slope_y(base.size());
    for (int c = 0; c < channels; ++c) {
        base[c] = rng.uniform(-0.6, 0.6);
        slope_x[c] = rng.uniform(-0.6, 0.6);
        slope_y[c] = rng.uniform(-0.6, 0.6);
    }
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                img.at(c, y, x) = base[c] + slope_x[c] * (x / double(width) - 0.5) + slope_y[c] * (y / double(height) - 0.5);

    const int shapes = 6 + static_cast<int>(rng.uniform_index(6));
    for (int s = 0; s < shapes; ++s) {
        const int kind = static_cast<int>(rng.uniform_index(3));
        std::vector<double> color(static_cast<std::size_t>(channels));
        for (double& v : color) v = rng.uniform(-0.95, 0.95);
        const double cx = rng.uniform(0.0, width), cy = rng.uniform(0.0, height);
        const double sx = rng.uniform(0.08, 0.3) * width, sy = rng.uniform(0.08, 0.3) * height;
        const double period = rng.uniform(3.0, 8.0);
        const double angle = rng.uniform(0.0, std::numbers::pi);
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                const double dx = x - cx, dy = y - cy;
                bool inside = false;
                double amp = 1.0;
                if (kind == 0) {
                    inside = std::abs(dx) < sx / 2 && std::abs(dy) < sy / 2;
                } else if (kind == 1) {
                    inside = (dx * dx) / (sx * sx / 4) + (dy * dy) / (sy * sy / 4) < 1.0;
                } else {
                    inside = std::abs(dx) < sx / 2 && std::abs(dy) < sy / 2;
                    const double u = dx * std::cos(angle) + dy * std::sin(angle);
                    amp = std::sin(2.0 * std::numbers::pi * u / period) > 0 ? 1.0 : 0.0;
                }
                if (!inside || amp == 0.0) continue;
                for (int c = 0; c < channels; ++c) img.at(c, y, x) = color[c];
            }
    }
    for (double& v : img.values()) v = std::clamp(v, -1.0, 1.0);
    return img;
}

std::vector<ImagePair> make_synthetic_pairs(const SynthOptions& o) {
    if (o.count < 0) throw ArgumentError("synthetic pair count must be >= 0");
    std::vector<ImagePair> pairs;
    for (int i = 0; i < o.count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "synth_%04d.png", i);
        const Tensor sharp = synthetic_scene(mix_seed(o.seed, 0x5CE7E, static_cast<std::uint64_t>(i)), o.size, o.size);
        const MotionKernel k =
            generate_motion_kernel(mix_seed(o.seed, 0x6E27E1, static_cast<std::uint64_t>(i)), o.kernel_size, o.kernel_steps);
        // Quantize through 8 bits so the in-memory pairs equal what a reload from disk gives.
        ImagePair p;
        p.id = name;
        p.sharp = to_model_range(to_bytes(sharp));
        p.blurred = to_model_range(to_bytes(synth_blur(p.sharp, k)));
        pairs.push_back(std::move(p));
    }
    return pairs;
}

std::vector<std::string> write_synthetic_dataset(const fs::path& root, const SynthOptions& o) {
    std::vector<std::string> ids;
    const auto pairs = make_synthetic_pairs(o);
    for (int i = 0; i < o.count; ++i) {
        const ImagePair& p = pairs[static_cast<std::size_t>(i)];
        write_png(root / "sharp" / p.id, to_bytes(p.sharp));
        write_png(root / "blur" / p.id, to_bytes(p.blurred));
        const MotionKernel k =
            generate_motion_kernel(mix_seed(o.seed, 0x6E27E1, static_cast<std::uint64_t>(i)), o.kernel_size, o.kernel_steps);
        write_kernel(root / "kernels" / (fs::path(p.id).stem().string() + ".txt"), k);
        ids.push_back(p.id);
    }
    return ids;
}

}  // namespace biskip
