#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "biskip/model.hpp"
#include "biskip/random.hpp"
#include "biskip/tensor.hpp"

namespace testing_support {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "biskip") {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline biskip::Tensor random_tensor(const biskip::Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    biskip::Tensor t(shape);
    biskip::Rng rng(seed);
    for (double& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Central difference of f with respect to one scalar slot.
inline double central_difference(double& slot, const std::function<double()>& f, double h = 1e-5) {
    const double saved = slot;
    slot = saved + h;
    const double up = f();
    slot = saved - h;
    const double down = f();
    slot = saved;
    return (up - down) / (2.0 * h);
}

// Small generator that keeps the full topology but few channels.
inline biskip::GeneratorSpec small_spec(biskip::ModelVariant v = biskip::ModelVariant::BS) {
    biskip::GeneratorSpec s;
    s.channels_path = {8, 8, 8, 8, 8};
    s.channels_skip = {4, 4, 4, 4, 4};
    s.resblocks_per_scale = 1;
    s.variant = v;
    return s;
}

}  // namespace testing_support
