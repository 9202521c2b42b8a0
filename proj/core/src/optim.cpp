#include "biskip/optim.hpp"

#include <cmath>

#include "biskip/errors.hpp"

namespace biskip {

Adam::Adam(const ParameterSet& params, AdamConfig config) : config_(config) {
    for (const auto& p : params) {
        m_.emplace_back(p.var.value().shape());
        v_.emplace_back(p.var.value().shape());
    }
}

void Adam::step(ParameterSet& params, double lr) {
    if (params.size() != m_.size()) throw StateError("Adam: parameter set changed since construction");
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        ag::Var& var = params[i].var;
        const Tensor& g = var.grad();
        if (g.empty()) continue;
        Tensor& w = var.mutable_value();
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t k = 0; k < w.size(); ++k) {
            m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g[k];
            v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g[k] * g[k];
            const double mh = m[k] / c1;
            const double vh = v[k] / c2;
            w[k] -= lr * mh / (std::sqrt(vh) + config_.eps);
        }
    }
}

void Adam::restore(std::int64_t steps, std::vector<Tensor> m, std::vector<Tensor> v) {
    if (m.size() != m_.size() || v.size() != v_.size()) throw StateError("Adam::restore: moment count mismatch");
    for (std::size_t i = 0; i < m.size(); ++i) {
        require_same_shape(m[i], m_[i], "Adam first moment");
        require_same_shape(v[i], v_[i], "Adam second moment");
    }
    t_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
}

}  // namespace biskip
