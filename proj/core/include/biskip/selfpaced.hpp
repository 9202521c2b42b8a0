#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>

namespace biskip {

// q(t) = tan[(1 - t / (2(T+1))) * pi/2]. Always > 1, strictly decreasing in t.
double dynamic_q(int t, int T);

// lambda * ((1/q) ||v||_2^q - sum v_i)
double regularizer_value(std::span<const double> v, double lambda, double q);

// Age threshold lambda^t. An unset value means +infinity: every sample is
// admitted with weight exactly 1 and no infinity ever enters the arithmetic.
class Threshold {
public:
    static Threshold infinite() { return Threshold(); }
    static Threshold finite(double value);

    bool is_infinite() const noexcept { return !value_; }
    double value() const;  // throws StateError when infinite
    std::string to_string() const;

    friend bool operator==(const Threshold&, const Threshold&) = default;

private:
    Threshold() = default;
    std::optional<double> value_;
};

// Closed-form minimizer of v*l + f(v, lambda) over v in [0,1]:
// (1 - l/lambda)^(1/(q-1)) when l < lambda, else 0.
double optimal_weight(double loss, const Threshold& lambda, double q);
double optimal_weight(double loss, double lambda, double q);

struct SelfPacedState {
    int t = 1;
    int T = 1;
    Threshold lambda = Threshold::infinite();
    std::map<std::string, double> recorded_losses;

    static SelfPacedState fresh(int total_epochs);
    double q() const { return dynamic_q(t, T); }
    bool finished() const noexcept { return t > T; }
};

// Closes epoch `state.t`: stores its losses, sets lambda to their maximum and
// advances t. Throws StateError for an empty loss map.
SelfPacedState update_state(const SelfPacedState& state, const std::map<std::string, double>& losses);

// Order-independent digest of the recorded losses (hex), for checkpoint headers.
std::string losses_digest(const std::map<std::string, double>& losses);

}  // namespace biskip
