#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "biskip/autograd.hpp"

namespace biskip {

struct Parameter {
    std::string name;
    ag::Var var;
};

// Ordered, named collection of trainable leaves. Order is construction order
// and is part of the determinism contract (init draws, hashing, checkpoints).
class ParameterSet {
public:
    ag::Var add(std::string name, Tensor init);

    std::size_t size() const noexcept { return params_.size(); }
    const Parameter& operator[](std::size_t i) const { return params_[i]; }
    Parameter& operator[](std::size_t i) { return params_[i]; }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }

    const Parameter* find(const std::string& name) const;
    Parameter* find(const std::string& name);

    std::size_t scalar_count() const;
    void zero_grad();
    // Marks every leaf as constant; later graphs skip their gradients.
    void freeze();
    // True when any parameter holds a non-zero gradient entry.
    bool has_nonzero_grad() const;
    bool grads_finite() const;
    std::uint64_t hash() const;

private:
    std::vector<Parameter> params_;
};

// Xavier/Glorot uniform bound for a conv weight [out][in][k][k] (or the
// transposed layout; the fan sum is symmetric).
double xavier_bound(const Shape& weight_shape);

}  // namespace biskip
