#include "biskip/selfpaced.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "biskip/errors.hpp"
#include "biskip/tensor.hpp"

namespace biskip {

double dynamic_q(int t, int T) {
    if (T < 1 || t < 1 || t > T) {
        throw ArgumentError("dynamic_q: need 1 <= t <= T, got t=" + std::to_string(t) + ", T=" + std::to_string(T));
    }
    const double frac = static_cast<double>(t) / (2.0 * (static_cast<double>(T) + 1.0));
    return std::tan((1.0 - frac) * std::numbers::pi / 2.0);
}

double regularizer_value(std::span<const double> v, double lambda, double q) {
    if (!(q > 1.0)) throw ArgumentError("regularizer_value: q must exceed 1");
    if (!(lambda > 0.0)) throw ArgumentError("regularizer_value: lambda must be positive");
    double sq = 0.0, sum = 0.0;
    for (double x : v) {
        if (!(x >= 0.0 && x <= 1.0)) throw ArgumentError("regularizer_value: weight outside [0,1]");
        sq += x * x;
        sum += x;
    }
    // ||v||_2^q = (sum v^2)^(q/2)
    return lambda * (std::pow(sq, q / 2.0) / q - sum);
}

Threshold Threshold::finite(double value) {
    if (!(value > 0.0) || !std::isfinite(value)) {
        throw ArgumentError("self-paced threshold must be positive and finite, got " + std::to_string(value));
    }
    Threshold t;
    t.value_ = value;
    return t;
}

double Threshold::value() const {
    if (!value_) throw StateError("threshold is infinite");
    return *value_;
}

std::string Threshold::to_string() const {
    if (!value_) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", *value_);
    return buf;
}

double optimal_weight(double loss, const Threshold& lambda, double q) {
    if (!(q > 1.0)) throw ArgumentError("optimal_weight: q must exceed 1");
    if (!(loss >= 0.0)) throw ArgumentError("optimal_weight: loss must be >= 0");
    if (lambda.is_infinite()) return 1.0;
    const double lam = lambda.value();
    if (loss >= lam) return 0.0;
    const double base = 1.0 - loss / lam;
    if (base <= 0.0) return 0.0;
    return std::clamp(std::pow(base, 1.0 / (q - 1.0)), 0.0, 1.0);
}

double optimal_weight(double loss, double lambda, double q) {
    if (std::isinf(lambda) && lambda > 0) return optimal_weight(loss, Threshold::infinite(), q);
    return optimal_weight(loss, Threshold::finite(lambda), q);
}

SelfPacedState SelfPacedState::fresh(int total_epochs) {
    if (total_epochs < 1) throw ArgumentError("self-paced horizon T must be >= 1");
    SelfPacedState s;
    s.t = 1;
    s.T = total_epochs;
    return s;
}

SelfPacedState update_state(const SelfPacedState& state, const std::map<std::string, double>& losses) {
    if (losses.empty()) throw StateError("update_state: no losses recorded for epoch " + std::to_string(state.t));
    double max_loss = 0.0;
    for (const auto& [id, l] : losses) {
        if (!std::isfinite(l) || l < 0.0) throw StateError("update_state: invalid loss for sample '" + id + "'");
        max_loss = std::max(max_loss, l);
    }
    SelfPacedState next = state;
    next.t = state.t + 1;
    next.recorded_losses = losses;
    // A zero maximum (every sample reproduced exactly) leaves no finite
    // positive threshold; admit everything.
    next.lambda = max_loss > 0.0 ? Threshold::finite(max_loss) : Threshold::infinite();
    return next;
}

std::string losses_digest(const std::map<std::string, double>& losses) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [id, l] : losses) {
        for (unsigned char c : id) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        const double v = l;
        h = fnv1a(std::span<const double>(&v, 1), h);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace biskip
