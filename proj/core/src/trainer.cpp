#include "biskip/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "biskip/checkpoint.hpp"
#include "biskip/errors.hpp"
#include "biskip/random.hpp"

namespace biskip {

// --- scheme -------------------------------------------------------------------

Scheme Scheme::parse(std::string_view text) {
    static constexpr std::string_view kOrder = "SA12P";
    Scheme s;
    std::size_t last = 0;
    bool seen[5] = {};
    for (char c : text) {
        const std::size_t pos = kOrder.find(c);
        if (pos == std::string_view::npos) {
            throw SpecError("unknown scheme flag '" + std::string(1, c) + "' in \"" + std::string(text) + "\"");
        }
        if (seen[pos]) throw SpecError("repeated scheme flag '" + std::string(1, c) + "'");
        if (pos < last) throw SpecError("scheme flags out of order in \"" + std::string(text) + "\" (expected S, A, 1|2, P)");
        seen[pos] = true;
        last = pos;
    }
    if (seen[2] && seen[3]) throw SpecError("scheme cannot use both L1 and L2 pixel terms");
    s.selfpaced = seen[0];
    s.adversarial = seen[1];
    s.pixel = seen[2] ? PixelNorm::L1 : seen[3] ? PixelNorm::L2 : PixelNorm::None;
    s.perceptual = seen[4];
    s.validate();
    return s;
}

std::string Scheme::to_string() const {
    std::string out;
    if (selfpaced) out += 'S';
    if (adversarial) out += 'A';
    if (pixel == PixelNorm::L1) out += '1';
    if (pixel == PixelNorm::L2) out += '2';
    if (perceptual) out += 'P';
    return out;
}

void Scheme::validate() const {
    if (!has_content()) {
        throw SpecError("scheme \"" + to_string() + "\" names no content term (needs 1, 2 or P)");
    }
}

SchemeWithVariant parse_scheme_string(std::string_view text) {
    const std::size_t dash = text.find('-');
    SchemeWithVariant out;
    out.scheme = Scheme::parse(text.substr(0, dash));
    if (dash != std::string_view::npos) out.variant = parse_variant(text.substr(dash + 1));
    return out;
}

std::string scheme_string(const Scheme& scheme, ModelVariant variant) {
    return scheme.to_string() + "-" + std::string(to_string(variant));
}

// --- config -------------------------------------------------------------------

void TrainConfig::validate() const {
    generator.validate();
    scheme.validate();
    weights.validate();
    if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw SpecError("lr0 must be a positive finite number");
    if (d_g_ratio < 1) throw SpecError("d_g_ratio must be >= 1");
    if (epochs < 2) throw SpecError("epochs must be >= 2");
    if (batch < 1) throw SpecError("batch must be >= 1");
    if (crop < 0) throw SpecError("crop must be >= 0");
    if (crop > 0 && crop % generator.size_divisor() != 0) {
        throw SpecError("crop " + std::to_string(crop) + " is not a multiple of " +
                        std::to_string(generator.size_divisor()));
    }
    if (checkpoint_every < 1) throw SpecError("checkpoint_every must be >= 1");
    if (initial_lambda && !(*initial_lambda > 0.0)) throw SpecError("initial_lambda must be > 0");
    if (scheme.perceptual && perceptual == PerceptualBackend::pretrained_vgg19 && vgg_weights.empty()) {
        throw SpecError("pretrained_vgg19 perceptual backend needs a weights file");
    }
}

nlohmann::json TrainConfig::to_json() const {
    nlohmann::json j;
    j["scheme"] = scheme_string();
    j["generator"] = spec_to_json(generator);
    j["weights"] = {{"gamma1", weights.gamma1}, {"gamma2", weights.gamma2}, {"beta", weights.beta}};
    j["lr0"] = lr0;
    j["d_g_ratio"] = d_g_ratio;
    j["epochs"] = epochs;
    j["crop"] = crop;
    j["batch"] = batch;
    j["seeds"] = {{"init", seeds.init}, {"data", seeds.data}, {"alpha", seeds.alpha}};
    j["adam"] = {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}};
    j["perceptual"] = std::string(to_string(perceptual));
    if (!vgg_weights.empty()) j["vgg_weights"] = vgg_weights.string();
    j["penalty_weighted"] = penalty_weighted;
    j["initial_lambda"] = initial_lambda ? nlohmann::json(*initial_lambda) : nlohmann::json("inf");
    j["checkpoint_every"] = checkpoint_every;
    return j;
}

// --- report -------------------------------------------------------------------

nlohmann::json EpochRecord::to_json() const {
    nlohmann::json j;
    j["epoch"] = epoch;
    j["lr"] = lr;
    j["lambda"] = lambda.is_infinite() ? nlohmann::json("inf") : nlohmann::json(lambda.value());
    j["q"] = q;
    j["losses"] = {{"pixel", mean.pixel},         {"perceptual", mean.perceptual}, {"content", mean.content},
                   {"adversarial", mean.adversarial}, {"penalty", mean.penalty},       {"total", mean.total}};
    j["mean_bilevel"] = mean_bilevel;
    j["admitted_fraction"] = admitted_fraction;
    j["skipped_updates"] = skipped_updates;
    if (checkpoint) j["checkpoint"] = *checkpoint;
    return j;
}

std::string TrainReport::to_jsonl() const {
    std::string out;
    for (const auto& e : epochs) out += e.to_json().dump() + "\n";
    return out;
}

void TrainReport::write_jsonl(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << to_jsonl();
}

// --- schedule -------------------------------------------------------------------

double lr_at(int epoch, int epochs, double lr0) {
    if (epochs < 2) throw ArgumentError("lr_at: epochs must be >= 2");
    if (epoch < 1 || epoch > epochs) {
        throw ArgumentError("lr_at: epoch " + std::to_string(epoch) + " outside [1, " + std::to_string(epochs) + "]");
    }
    const double half = epochs / 2.0;
    if (epoch <= half) return lr0;
    return lr0 * (epochs - epoch) / (epochs - half);
}

// --- steps ------------------------------------------------------------------------

namespace {

bool any_positive(std::span<const double> v) {
    return std::any_of(v.begin(), v.end(), [](double x) { return x > 0.0; });
}

void add_into(LossBreakdown& acc, const LossBreakdown& b) {
    acc.pixel += b.pixel;
    acc.perceptual += b.perceptual;
    acc.content += b.content;
    acc.adversarial += b.adversarial;
    acc.penalty += b.penalty;
    acc.total += b.total;
}

void scale_by(LossBreakdown& b, double s) {
    b.pixel *= s;
    b.perceptual *= s;
    b.content *= s;
    b.adversarial *= s;
    b.penalty *= s;
    b.total *= s;
}

}  // namespace

ForwardBatch forward_batch(const Generator& g, const PerceptualExtractor& f, std::span<const ImagePair> batch,
                           const LossWeights& w, ContentTerms terms) {
    ForwardBatch fb;
    for (const ImagePair& p : batch) {
        ag::Var out = g.forward(ag::constant(p.blurred));
        BilevelTerms t = bilevel_terms(f, ag::constant(p.sharp), out, w, terms);
        fb.losses.push_back(t.total.item());
        fb.restored.push_back(std::move(out));
        fb.terms.push_back(std::move(t));
    }
    return fb;
}

LossBreakdown critic_step(Critic& d, std::span<const Tensor> reals, std::span<const Tensor> fakes,
                          std::span<const double> v, const LossWeights& w, std::uint64_t alpha_seed, Adam& opt,
                          double lr, bool penalty_weighted) {
    if (reals.size() != fakes.size() || reals.size() != v.size() || v.empty()) {
        throw ShapeMismatch("critic_step: batch length mismatch");
    }
    check_weights(v);
    const double n = static_cast<double>(v.size());
    const std::vector<double> alphas = penalty_alphas(alpha_seed, v.size());
    const bool update = any_positive(v);
    d.parameters().zero_grad();

    double real_sum = 0.0, fake_sum = 0.0, pen_sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] == 0.0) continue;
        // Minimizing -L_adv: d/dtheta of -(v/n) D(real) + (v/n) D(fake).
        const Critic::Pass real = d.forward(reals[i]);
        const Critic::Pass fake = d.forward(fakes[i]);
        d.backward(real, -v[i] / n);
        d.backward(fake, v[i] / n);
        real_sum += v[i] * real.score;
        fake_sum += v[i] * fake.score;
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double wi = penalty_weighted ? v[i] : 1.0;
        if (wi == 0.0 || w.beta == 0.0 || !update) continue;
        const Tensor xhat = interpolate(reals[i], fakes[i], alphas[i]);
        pen_sum += wi * d.penalty(xhat, w.beta * wi / n).value;
    }

    LossBreakdown b;
    b.adversarial = real_sum / n - fake_sum / n;
    b.penalty = w.beta * pen_sum / n;
    b.total = -b.adversarial + b.penalty;
    if (!std::isfinite(b.total) || !d.parameters().grads_finite()) {
        throw NumericError("critic step produced a non-finite loss or gradient (adv " + std::to_string(b.adversarial) +
                           ", penalty " + std::to_string(b.penalty) + ")");
    }
    if (update) opt.step(d.parameters(), lr);
    d.parameters().zero_grad();
    return b;
}

LossBreakdown generator_step(Generator& g, const Critic* d, const ForwardBatch& fb, std::span<const double> v,
                             const LossWeights& w, ContentTerms terms, Adam& opt, double lr) {
    const std::size_t n_samples = fb.restored.size();
    if (v.size() != n_samples || n_samples == 0) throw ShapeMismatch("generator_step: batch length mismatch");
    check_weights(v);
    const double n = static_cast<double>(n_samples);

    std::vector<ag::Var> parts;
    std::vector<double> coeffs;
    LossBreakdown b;
    double fake_sum = 0.0;
    for (std::size_t i = 0; i < n_samples; ++i) {
        b.pixel += v[i] * w.gamma1 * fb.terms[i].pixel.item() / n;
        b.perceptual += v[i] * w.gamma2 * fb.terms[i].perceptual.item() / n;
        b.per_sample_bilevel.push_back(fb.losses[i]);
        if (v[i] == 0.0) continue;
        parts.push_back(fb.terms[i].total);
        coeffs.push_back(v[i] / n);
        if (d) {
            ag::Var score = d->score(fb.restored[i]);
            fake_sum += v[i] * score.item();
            parts.push_back(score);
            coeffs.push_back(-v[i] / n);
        }
    }
    (void)terms;
    b.content = b.pixel + b.perceptual;
    b.adversarial = d ? -fake_sum / n : 0.0;
    b.total = b.content + b.adversarial;
    if (!std::isfinite(b.total)) {
        throw NumericError("generator step produced a non-finite loss (content " + std::to_string(b.content) +
                           ", adversarial " + std::to_string(b.adversarial) + ")");
    }
    if (parts.empty()) return b;

    g.parameters().zero_grad();
    ag::backward(ag::weighted_sum(parts, coeffs));
    if (!g.parameters().grads_finite()) throw NumericError("generator step produced a non-finite gradient");
    opt.step(g.parameters(), lr);
    g.parameters().zero_grad();
    return b;
}

// --- training loop ------------------------------------------------------------------

namespace {

PerceptualExtractor make_extractor(const TrainConfig& c) {
    if (c.scheme.perceptual && c.perceptual == PerceptualBackend::pretrained_vgg19) {
        return PerceptualExtractor::pretrained_vgg19(c.vgg_weights);
    }
    return PerceptualExtractor::seeded_random_cnn(mix_seed(c.seeds.init, 0xFEA7), c.generator.image_channels);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    return order;
}

std::string format_state(int epoch, std::size_t iteration, const std::vector<std::string>& ids,
                         const std::vector<double>& losses, const std::vector<double>& v, const Threshold& lambda,
                         double q) {
    std::ostringstream s;
    s.precision(17);
    s << "epoch " << epoch << ", iteration " << iteration << ", lambda " << lambda.to_string() << ", q " << q;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        s << "; " << ids[i];
        if (i < losses.size()) s << " l=" << losses[i];
        if (i < v.size()) s << " v=" << v[i];
    }
    return s.str();
}

void check_dataset(const std::vector<ImagePair>& dataset, const TrainConfig& c) {
    if (dataset.empty()) throw DataError("training dataset is empty");
    const int div = c.generator.size_divisor();
    for (const auto& p : dataset) {
        if (p.sharp.shape() != p.blurred.shape()) throw DataError("dimension mismatch in pair " + p.id);
        if (p.sharp.channels() != c.generator.image_channels) throw DataError("channel count mismatch in pair " + p.id);
        const int h = p.sharp.height(), w = p.sharp.width();
        if (c.crop > 0) {
            if (h < c.crop || w < c.crop) {
                throw DataError("pair " + p.id + " (" + std::to_string(h) + "x" + std::to_string(w) +
                                ") is smaller than the crop " + std::to_string(c.crop));
            }
        } else if (h % div != 0 || w % div != 0) {
            throw DataError("pair " + p.id + " is not divisible by " + std::to_string(div) + " and crop is off");
        }
    }
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::vector<ImagePair>& dataset, const TrainObserver& observer) {
    config.validate();
    check_dataset(dataset, config);

    TrainResult result{{}, Generator(config.generator, config.seeds.init), std::nullopt,
                       SelfPacedState::fresh(config.epochs)};
    Generator& g = result.generator;
    if (config.scheme.adversarial) result.critic.emplace(build_critic(mix_seed(config.seeds.init, 0xD15C), config.generator.image_channels));
    Critic* d = result.critic ? &*result.critic : nullptr;
    const PerceptualExtractor f = make_extractor(config);
    Adam opt_g(g.parameters(), config.adam);
    std::optional<Adam> opt_d;
    if (d) opt_d.emplace(d->parameters(), config.adam);

    SelfPacedState& sp = result.selfpaced;
    if (config.initial_lambda) sp.lambda = Threshold::finite(*config.initial_lambda);
    const ContentTerms terms = config.scheme.content();
    std::uint64_t critic_updates = 0;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr_at(epoch, config);
        rec.lambda = sp.lambda;
        rec.q = sp.q();

        std::map<std::string, double> epoch_losses;
        LossBreakdown acc;
        double bilevel_sum = 0.0;
        std::size_t admitted = 0, iterations = 0;
        const auto order = epoch_order(dataset.size(), mix_seed(config.seeds.data, 0x0DE7, epoch));
        const std::uint64_t crop_seed = mix_seed(config.seeds.data, 0xC209, epoch);

        for (std::size_t start = 0; start < order.size(); start += config.batch) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
            std::vector<ImagePair> batch;
            for (std::size_t k = start; k < end; ++k) {
                const ImagePair& p = dataset[order[k]];
                batch.push_back(config.crop > 0 ? random_crop_pair(p, config.crop, crop_seed) : p);
            }
            IterationEvent ev;
            ev.epoch = epoch;
            ev.iteration = iterations;
            for (const auto& p : batch) ev.ids.push_back(p.id);
            if (observer.want_hashes) {
                ev.generator_hash_before = g.parameters().hash();
                ev.critic_hash_before = d ? d->parameters().hash() : 0;
            }

            const ForwardBatch fb = forward_batch(g, f, batch, config.weights, terms);
            std::vector<double> v;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                const double l = fb.losses[i];
                if (!std::isfinite(l)) {
                    throw NumericError("non-finite bilevel loss: " +
                                       format_state(epoch, iterations, ev.ids, fb.losses, v, sp.lambda, rec.q));
                }
                v.push_back(config.scheme.selfpaced ? optimal_weight(l, sp.lambda, rec.q) : 1.0);
                epoch_losses[batch[i].id] = l;
                bilevel_sum += l;
                if (v.back() > 0.0) ++admitted;
            }
            ev.losses = fb.losses;
            ev.weights = v;

            try {
                LossBreakdown critic_b;
                if (d) {
                    std::vector<Tensor> reals, fakes;
                    for (std::size_t i = 0; i < batch.size(); ++i) {
                        reals.push_back(batch[i].sharp);
                        fakes.push_back(fb.restored[i].value());
                    }
                    for (int k = 0; k < config.d_g_ratio; ++k) {
                        critic_b = critic_step(*d, reals, fakes, v, config.weights,
                                               mix_seed(config.seeds.alpha, critic_updates++), *opt_d, rec.lr,
                                               config.penalty_weighted);
                        ++ev.critic_steps;
                        if (observer.on_step) observer.on_step("critic");
                    }
                }
                LossBreakdown gen_b = generator_step(g, d, fb, v, config.weights, terms, opt_g, rec.lr);
                if (observer.on_step) observer.on_step("generator");
                ev.generator_updated = any_positive(v);
                if (!ev.generator_updated) ++rec.skipped_updates;
                if (d) {
                    gen_b.adversarial = critic_b.adversarial;
                    gen_b.penalty = critic_b.penalty;
                    gen_b.total = gen_b.adversarial + gen_b.content;
                }
                add_into(acc, gen_b);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " at " +
                                   format_state(epoch, iterations, ev.ids, fb.losses, v, sp.lambda, rec.q));
            }

            if (observer.want_hashes) {
                ev.generator_hash_after = g.parameters().hash();
                ev.critic_hash_after = d ? d->parameters().hash() : 0;
            }
            if (observer.on_iteration) observer.on_iteration(ev);
            ++iterations;
        }

        scale_by(acc, 1.0 / static_cast<double>(iterations));
        rec.mean = acc;
        rec.mean_bilevel = bilevel_sum / static_cast<double>(dataset.size());
        rec.admitted_fraction = static_cast<double>(admitted) / static_cast<double>(dataset.size());
        sp = update_state(sp, epoch_losses);

        if (config.checkpoint_dir && (epoch % config.checkpoint_every == 0 || epoch == config.epochs)) {
            char name[32];
            std::snprintf(name, sizeof name, "epoch_%04d.ckpt", epoch);
            const auto path = *config.checkpoint_dir / name;
            CheckpointExtras extras;
            extras.epoch = epoch;
            extras.critic = d;
            extras.generator_optimizer = &opt_g;
            extras.critic_optimizer = opt_d ? &*opt_d : nullptr;
            extras.selfpaced = &sp;
            extras.config = config.to_json();
            save_checkpoint(path, g, extras);
            rec.checkpoint = (config.checkpoint_dir->filename() / name).generic_string();
            result.report.checkpoints.push_back(path);
        }
        if (observer.on_epoch) observer.on_epoch(rec);
        result.report.epochs.push_back(std::move(rec));
    }
    return result;
}

// --- deep prior ---------------------------------------------------------------------

DeepPriorResult fit_deep_prior(const Tensor& target, const std::optional<Tensor>& input, const DeepPriorConfig& config) {
    if (config.iters < 0) throw ArgumentError("fit_deep_prior: iters must be >= 0");
    if (!(config.lr > 0.0)) throw ArgumentError("fit_deep_prior: lr must be > 0");
    Generator g(config.generator, config.seed);
    g.check_input(target);

    Tensor z;
    if (input) {
        require_same_shape(*input, target, "fit_deep_prior input");
        z = *input;
    } else {
        z = Tensor(target.shape());
        Rng rng(mix_seed(config.seed, 0x2015E));
        for (double& x : z.values()) x = rng.uniform(0.0, config.noise_scale);
    }

    Adam opt(g.parameters());
    const ag::Var zin = ag::constant(z);
    const ag::Var tgt = ag::constant(target);
    DeepPriorResult r;
    for (int it = 0; it <= config.iters; ++it) {
        const bool last = it == config.iters;
        ag::Var out;
        ag::Var loss;
        if (last) {
            ag::NoGradGuard guard;
            out = g.forward(zin);
            loss = ag::mean_sq_diff(out, tgt);
        } else {
            out = g.forward(zin);
            loss = ag::mean_sq_diff(out, tgt);
        }
        const double mse = loss.item();
        if (!std::isfinite(mse)) throw NumericError("fit_deep_prior: non-finite loss at iteration " + std::to_string(it));
        r.mse.push_back(mse);
        if (std::find(config.snapshots.begin(), config.snapshots.end(), it) != config.snapshots.end()) {
            r.snapshots.emplace_back(it, out.value());
        }
        if (last) {
            r.output = out.value();
            break;
        }
        g.parameters().zero_grad();
        ag::backward(loss);
        opt.step(g.parameters(), config.lr);
    }
    g.parameters().zero_grad();
    return r;
}

}  // namespace biskip
