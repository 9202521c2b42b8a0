#include "biskip/parameters.hpp"

#include <cmath>

#include "biskip/errors.hpp"

namespace biskip {

ag::Var ParameterSet::add(std::string name, Tensor init) {
    if (find(name)) throw SpecError("duplicate parameter name '" + name + "'");
    ag::Var v = ag::parameter(std::move(init));
    params_.push_back({std::move(name), v});
    return v;
}

const Parameter* ParameterSet::find(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

Parameter* ParameterSet::find(const std::string& name) {
    for (auto& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var.value().size();
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
}

void ParameterSet::freeze() {
    for (auto& p : params_) p.var.node()->requires_grad = false;
}

bool ParameterSet::has_nonzero_grad() const {
    for (const auto& p : params_) {
        for (double g : p.var.grad().values()) {
            if (g != 0.0) return true;
        }
    }
    return false;
}

bool ParameterSet::grads_finite() const {
    for (const auto& p : params_) {
        if (!p.var.grad().all_finite()) return false;
    }
    return true;
}

std::uint64_t ParameterSet::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : params_) h = fnv1a(p.var.value().values(), h);
    return h;
}

double xavier_bound(const Shape& s) {
    if (s.size() != 4) throw SpecError("xavier_bound expects a 4-d weight");
    const double receptive = static_cast<double>(s[2]) * s[3];
    const double fan_in = s[1] * receptive;
    const double fan_out = s[0] * receptive;
    return std::sqrt(6.0 / (fan_in + fan_out));
}

}  // namespace biskip
