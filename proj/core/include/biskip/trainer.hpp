#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "biskip/data.hpp"
#include "biskip/losses.hpp"
#include "biskip/model.hpp"
#include "biskip/optim.hpp"
#include "biskip/selfpaced.hpp"

namespace biskip {

// Loss scheme shorthand: S = self-paced weights, A = adversarial term,
// 1 / 2 = L1 / L2 pixel term, P = perceptual term. Flags appear in that order,
// e.g. "SA1P", "A2", "1P".
struct Scheme {
    bool selfpaced = false;
    bool adversarial = false;
    PixelNorm pixel = PixelNorm::None;
    bool perceptual = false;

    static Scheme parse(std::string_view text);
    std::string to_string() const;
    ContentTerms content() const { return {pixel, perceptual}; }
    bool has_content() const { return pixel != PixelNorm::None || perceptual; }
    // Throws SpecError when no content term is present.
    void validate() const;

    friend bool operator==(const Scheme&, const Scheme&) = default;
};

struct SchemeWithVariant {
    Scheme scheme;
    std::optional<ModelVariant> variant;
};
// "SA1P-BS", "A2-S", "1P-BS-w/o-R" or a bare scheme.
SchemeWithVariant parse_scheme_string(std::string_view text);
std::string scheme_string(const Scheme& scheme, ModelVariant variant);

struct TrainSeeds {
    std::uint64_t init = 1;   // generator, critic and perceptual network weights
    std::uint64_t data = 2;   // sample order and crop windows
    std::uint64_t alpha = 3;  // gradient-penalty interpolation coefficients
};

struct TrainConfig {
    GeneratorSpec generator;  // generator.variant is the trained variant
    Scheme scheme = Scheme::parse("SA1P");
    LossWeights weights;
    double lr0 = 1e-4;
    int d_g_ratio = 2;
    int epochs = 300;
    int crop = 256;  // 0 trains on whole images
    int batch = 1;
    TrainSeeds seeds;
    AdamConfig adam;
    PerceptualBackend perceptual = PerceptualBackend::seeded_random_cnn;
    std::filesystem::path vgg_weights;  // required for pretrained_vgg19
    bool penalty_weighted = true;       // multiply the penalty by v_i
    // Threshold for epoch 1; unset means +infinity.
    std::optional<double> initial_lambda;
    int checkpoint_every = 10;
    std::optional<std::filesystem::path> checkpoint_dir;

    void validate() const;
    std::string scheme_string() const { return biskip::scheme_string(scheme, generator.variant); }
    nlohmann::json to_json() const;
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    Threshold lambda = Threshold::infinite();
    double q = 0.0;
    LossBreakdown mean;        // per-iteration breakdowns averaged over the epoch
    double mean_bilevel = 0.0;  // unweighted l_i averaged over samples
    double admitted_fraction = 0.0;
    int skipped_updates = 0;  // iterations where every v_i was 0
    std::optional<std::string> checkpoint;  // relative to the checkpoint dir's parent

    nlohmann::json to_json() const;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::vector<std::filesystem::path> checkpoints;

    std::string to_jsonl() const;
    void write_jsonl(const std::filesystem::path& path) const;
};

// lr0 through epochs/2, then linear to 0 at `epochs`.
double lr_at(int epoch, int epochs, double lr0);
inline double lr_at(int epoch, const TrainConfig& c) { return lr_at(epoch, c.epochs, c.lr0); }

// Recorded generator pass over a batch, reused for v_i and the generator step.
struct ForwardBatch {
    std::vector<ag::Var> restored;
    std::vector<BilevelTerms> terms;
    std::vector<double> losses;  // l_i
};
ForwardBatch forward_batch(const Generator& g, const PerceptualExtractor& f, std::span<const ImagePair> batch,
                           const LossWeights& w, ContentTerms terms);

// One update of D on -L_adv + penalty. No update when every v_i is 0.
LossBreakdown critic_step(Critic& d, std::span<const Tensor> reals, std::span<const Tensor> fakes,
                          std::span<const double> v, const LossWeights& w, std::uint64_t alpha_seed, Adam& opt,
                          double lr, bool penalty_weighted = true);

// One update of G on -mean_i v_i D(G(x_i)) + (1/n) sum_i v_i l_i (critic term
// only when `d` is given). No update when every v_i is 0.
LossBreakdown generator_step(Generator& g, const Critic* d, const ForwardBatch& fb, std::span<const double> v,
                             const LossWeights& w, ContentTerms terms, Adam& opt, double lr);

struct IterationEvent {
    int epoch = 0;
    std::size_t iteration = 0;
    std::vector<std::string> ids;
    std::vector<double> losses;
    std::vector<double> weights;
    int critic_steps = 0;
    bool generator_updated = false;
    // Filled only when TrainObserver::want_hashes is set.
    std::uint64_t generator_hash_before = 0, generator_hash_after = 0;
    std::uint64_t critic_hash_before = 0, critic_hash_after = 0;
};

struct TrainObserver {
    std::function<void(std::string_view step)> on_step;  // "critic" / "generator"
    std::function<void(const IterationEvent&)> on_iteration;
    std::function<void(const EpochRecord&)> on_epoch;
    bool want_hashes = false;
};

struct TrainResult {
    TrainReport report;
    Generator generator;
    std::optional<Critic> critic;
    SelfPacedState selfpaced;
};

// Self-paced adversarial training loop. Throws DataError for an empty or
// unusable dataset and NumericError (with the offending state) on divergence.
TrainResult train(const TrainConfig& config, const std::vector<ImagePair>& dataset, const TrainObserver& observer = {});

struct DeepPriorConfig {
    GeneratorSpec generator;
    int iters = 500;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    double noise_scale = 0.1;  // noise input ~ U[0, noise_scale]
    std::vector<int> snapshots;  // iterations at which to keep the output
};

struct DeepPriorResult {
    Tensor output;
    std::vector<double> mse;  // mse[k] after k updates, k = 0..iters
    std::vector<std::pair<int, Tensor>> snapshots;
};

// min_G ||G(z) - target||^2 from a fixed input z (noise when `input` is
// empty). Only generator weights are optimized.
DeepPriorResult fit_deep_prior(const Tensor& target, const std::optional<Tensor>& input, const DeepPriorConfig& config);

}  // namespace biskip
