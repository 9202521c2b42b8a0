#pragma once

#include <cstdint>
#include <vector>

#include "biskip/parameters.hpp"

namespace biskip {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. The learning rate is passed per step so the
// caller owns the schedule.
class Adam {
public:
    Adam(const ParameterSet& params, AdamConfig config = {});

    void step(ParameterSet& params, double lr);

    std::int64_t steps() const noexcept { return t_; }
    const AdamConfig& config() const noexcept { return config_; }
    const std::vector<Tensor>& first_moments() const noexcept { return m_; }
    const std::vector<Tensor>& second_moments() const noexcept { return v_; }
    void restore(std::int64_t steps, std::vector<Tensor> m, std::vector<Tensor> v);

private:
    AdamConfig config_;
    std::int64_t t_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

}  // namespace biskip
