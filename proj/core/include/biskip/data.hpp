#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "biskip/tensor.hpp"

namespace biskip {

struct ImagePair {
    Tensor sharp;    // CHW, [-1, 1]
    Tensor blurred;  // CHW, [-1, 1]
    std::string id;
};

// Loads <root>/blur/* and <root>/sharp/* (png/jpg/jpeg), matched by exact
// file name, sorted by name. An existing root without files yields an empty
// list; a missing counterpart or a size mismatch is a DataError.
std::vector<ImagePair> load_paired_dataset(const std::filesystem::path& root);

struct MotionKernel {
    int size = 1;
    std::vector<double> taps;  // row-major size x size

    double at(int y, int x) const { return taps[static_cast<std::size_t>(y) * size + x]; }
    void validate() const;
};

// Random-walk camera-shake kernel: unit steps whose heading drifts by
// N(0, 0.5 rad) per step, centred on its centroid and splatted bilinearly.
MotionKernel generate_motion_kernel(std::uint64_t seed, int size, int steps);
MotionKernel delta_kernel(int size);

// Whitespace-separated tap grid, one kernel row per line.
void write_kernel(const std::filesystem::path& path, const MotionKernel& k);
MotionKernel read_kernel(const std::filesystem::path& path);

// Per-channel 2-D convolution with mirror padding, clamped to [-1, 1].
Tensor synth_blur(const Tensor& sharp, const MotionKernel& k);

struct CropWindow {
    int y = 0;
    int x = 0;
};

CropWindow random_crop_window(int height, int width, int crop, std::uint64_t seed, const std::string& id);
// Same window for both images, deterministic per (seed, id).
ImagePair random_crop_pair(const ImagePair& pair, int crop, std::uint64_t seed);

// Procedural sharp scene (gradients, rectangles, discs, stripes) in [-1, 1].
Tensor synthetic_scene(std::uint64_t seed, int height, int width, int channels = 3);

struct SynthOptions {
    int count = 8;
    int size = 256;
    std::uint64_t seed = 1;
    int kernel_size = 15;
    int kernel_steps = 20;
};

// Writes a GoPro-layout set (blur/, sharp/, kernels/<id>.txt); returns ids.
std::vector<std::string> write_synthetic_dataset(const std::filesystem::path& root, const SynthOptions& options);
// The same pairs, in memory.
std::vector<ImagePair> make_synthetic_pairs(const SynthOptions& options);

}  // namespace biskip
