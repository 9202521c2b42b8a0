#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "biskip/checkpoint.hpp"
#include "biskip/errors.hpp"
#include "biskip/image.hpp"
#include "biskip/image_io.hpp"
#include "biskip/metrics.hpp"

#ifndef BISKIP_VERSION
#define BISKIP_VERSION "0.0.0"
#endif
#ifndef BISKIP_GIT_REVISION
#define BISKIP_GIT_REVISION "unknown"
#endif

namespace fs = std::filesystem;

namespace biskip::cli {

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const NumericError*>(&e)) return kNumericError;
    if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
        dynamic_cast<const ShapeMismatch*>(&e)) {
        return kDataError;
    }
    if (dynamic_cast<const Error*>(&e)) return kConfigError;
    return kInternalError;
}

std::string version_string() { return std::string(BISKIP_VERSION) + " (" + BISKIP_GIT_REVISION + ")"; }

// --- settings ---------------------------------------------------------------

namespace {

std::string fmt(double x) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

std::string fmt_list(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::map<std::string, std::string> default_values() {
    const TrainConfig t;
    const DeepPriorConfig p;
    const SynthOptions y;
    const GeneratorSpec& g = t.generator;
    return {
        {"data.root", ""},
        {"model.variant", std::string(to_string(g.variant))},
        {"model.channels_path", fmt_list(g.channels_path)},
        {"model.channels_skip", fmt_list(g.channels_skip)},
        {"model.resblocks_per_scale", std::to_string(g.resblocks_per_scale)},
        {"train.scheme", t.scheme.to_string()},
        {"train.lr0", fmt(t.lr0)},
        {"train.d_g_ratio", std::to_string(t.d_g_ratio)},
        {"train.epochs", std::to_string(t.epochs)},
        {"train.crop", std::to_string(t.crop)},
        {"train.batch", std::to_string(t.batch)},
        {"train.checkpoint_every", std::to_string(t.checkpoint_every)},
        {"train.perceptual", std::string(to_string(t.perceptual))},
        {"train.vgg_weights", ""},
        {"train.penalty_weighted", t.penalty_weighted ? "true" : "false"},
        {"loss.gamma1", fmt(t.weights.gamma1)},
        {"loss.gamma2", fmt(t.weights.gamma2)},
        {"loss.beta", fmt(t.weights.beta)},
        {"adam.beta1", fmt(t.adam.beta1)},
        {"adam.beta2", fmt(t.adam.beta2)},
        {"adam.eps", fmt(t.adam.eps)},
        {"seed.init", std::to_string(t.seeds.init)},
        {"seed.data", std::to_string(t.seeds.data)},
        {"seed.alpha", std::to_string(t.seeds.alpha)},
        {"prior.iters", std::to_string(p.iters)},
        {"prior.lr", fmt(p.lr)},
        {"prior.seed", std::to_string(p.seed)},
        {"prior.noise_scale", fmt(p.noise_scale)},
        {"prior.snapshots", fmt_list(p.snapshots)},
        {"synth.count", std::to_string(y.count)},
        {"synth.size", std::to_string(y.size)},
        {"synth.seed", std::to_string(y.seed)},
        {"synth.kernel_size", std::to_string(y.kernel_size)},
        {"synth.kernel_steps", std::to_string(y.kernel_steps)},
    };
}

const std::map<std::string, std::string>& defaults_cache() {
    static const auto d = default_values();
    return d;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* end = text.data() + text.size();
    const auto r = std::from_chars(text.data(), end, value);
    if (text.empty() || r.ec != std::errc() || r.ptr != end) {
        throw SpecError("config key " + key + ": cannot parse '" + text + "' as a number");
    }
    return value;
}

}  // namespace

Settings Settings::defaults() {
    Settings s;
    s.values_ = defaults_cache();
    return s;
}

bool Settings::known(std::string_view key) { return defaults_cache().count(std::string(key)) > 0; }

void Settings::set(const std::string& key, const std::string& value) {
    if (!known(key)) throw SpecError("unknown config key '" + key + "'");
    values_[key] = value;
}

void Settings::assign(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw SpecError("expected key=value, got '" + std::string(assignment) + "'");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Settings::merge_text(std::string_view text, const std::string& origin) {
    std::istringstream in{std::string(text)};
    int lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        try {
            assign(line);
        } catch (const SpecError& e) {
            throw SpecError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

void Settings::merge_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw SpecError("cannot read config file " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    merge_text(text.str(), path.string());
}

const std::string& Settings::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw SpecError("unknown config key '" + key + "'");
    return it->second;
}

double Settings::real(const std::string& key) const { return parse_number<double>(key, get(key)); }
int Settings::integer(const std::string& key) const { return parse_number<int>(key, get(key)); }
std::uint64_t Settings::seed(const std::string& key) const { return parse_number<std::uint64_t>(key, get(key)); }

bool Settings::flag(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw SpecError("config key " + key + ": expected true/false, got '" + v + "'");
}

std::vector<int> Settings::int_list(const std::string& key) const {
    std::vector<int> out;
    std::istringstream in(get(key));
    for (std::string item; std::getline(in, item, ',');) {
        const std::string t = trim(item);
        if (!t.empty()) out.push_back(parse_number<int>(key, t));
    }
    return out;
}

std::string Settings::to_text() const {
    std::string s;
    for (const auto& [k, v] : values_) s += k + "=" + v + "\n";
    return s;
}

nlohmann::json Settings::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
}

void normalize(Settings& s) {
    const SchemeWithVariant sv = parse_scheme_string(s.get("train.scheme"));
    const ModelVariant variant = sv.variant ? *sv.variant : parse_variant(s.get("model.variant"));
    s.set("model.variant", std::string(to_string(variant)));
    s.set("train.scheme", scheme_string(sv.scheme, variant));
}

GeneratorSpec generator_spec(const Settings& s) {
    GeneratorSpec g;
    g.variant = parse_variant(s.get("model.variant"));
    g.channels_path = s.int_list("model.channels_path");
    g.channels_skip = s.int_list("model.channels_skip");
    g.n_scales = static_cast<int>(g.channels_path.size());
    g.resblocks_per_scale = s.integer("model.resblocks_per_scale");
    g.validate();
    return g;
}

TrainConfig train_config(const Settings& s) {
    TrainConfig c;
    const SchemeWithVariant sv = parse_scheme_string(s.get("train.scheme"));
    c.generator = generator_spec(s);
    if (sv.variant) c.generator.variant = *sv.variant;
    c.scheme = sv.scheme;
    c.weights = {s.real("loss.gamma1"), s.real("loss.gamma2"), s.real("loss.beta")};
    c.lr0 = s.real("train.lr0");
    c.d_g_ratio = s.integer("train.d_g_ratio");
    c.epochs = s.integer("train.epochs");
    c.crop = s.integer("train.crop");
    c.batch = s.integer("train.batch");
    c.checkpoint_every = s.integer("train.checkpoint_every");
    c.perceptual = parse_perceptual_backend(s.get("train.perceptual"));
    c.vgg_weights = s.get("train.vgg_weights");
    c.penalty_weighted = s.flag("train.penalty_weighted");
    c.adam = {s.real("adam.beta1"), s.real("adam.beta2"), s.real("adam.eps")};
    c.seeds = {s.seed("seed.init"), s.seed("seed.data"), s.seed("seed.alpha")};
    c.validate();
    return c;
}

DeepPriorConfig prior_config(const Settings& s) {
    DeepPriorConfig c;
    c.generator = generator_spec(s);
    c.iters = s.integer("prior.iters");
    c.lr = s.real("prior.lr");
    c.seed = s.seed("prior.seed");
    c.noise_scale = s.real("prior.noise_scale");
    c.snapshots = s.int_list("prior.snapshots");
    if (c.iters < 0) throw SpecError("prior.iters must be >= 0");
    for (int k : c.snapshots) {
        if (k < 0 || k > c.iters) throw SpecError("prior.snapshots entry " + std::to_string(k) + " outside [0, iters]");
    }
    return c;
}

SynthOptions synth_options(const Settings& s) {
    SynthOptions o;
    o.count = s.integer("synth.count");
    o.size = s.integer("synth.size");
    o.seed = s.seed("synth.seed");
    o.kernel_size = s.integer("synth.kernel_size");
    o.kernel_steps = s.integer("synth.kernel_steps");
    if (o.count < 1) throw SpecError("synth.count must be >= 1");
    if (o.size < o.kernel_size) throw SpecError("synth.size must be at least synth.kernel_size");
    return o;
}

// --- run directories --------------------------------------------------------

fs::path run_root() {
    const char* env = std::getenv("BISKIP_RUN_DIR");
    return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path make_run_dir(const fs::path& root, std::string_view command, std::chrono::system_clock::time_point now) {
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream name;
    name << command << '-' << std::put_time(&tm, "%Y%m%d-%H%M%S");
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw DataError("cannot create run root " + root.string() + ": " + ec.message());
    for (int k = 1;; ++k) {
        const fs::path dir = root / (k == 1 ? name.str() : name.str() + "-" + std::to_string(k));
        if (fs::create_directory(dir, ec)) return dir;
        if (ec) throw DataError("cannot create run directory " + dir.string() + ": " + ec.message());
    }
}

// --- commands ---------------------------------------------------------------

namespace {

std::string utc_timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

struct Run {
    std::string command;
    std::vector<std::string> args;
    Settings settings = Settings::defaults();
    fs::path dir;
    nlohmann::json extra = nlohmann::json::object();

    void write_manifest(const std::string& status, int exit_code) const {
        nlohmann::json m;
        m["command"] = command;
        m["args"] = args;
        m["version"] = version_string();
        m["created"] = utc_timestamp();
        m["status"] = status;
        m["exit_code"] = exit_code;
        m["settings"] = settings.to_json();
        m["seeds"] = {{"init", settings.get("seed.init")},
                      {"data", settings.get("seed.data")},
                      {"alpha", settings.get("seed.alpha")},
                      {"prior", settings.get("prior.seed")},
                      {"synth", settings.get("synth.seed")}};
        m.update(extra);
        write_text(dir / "manifest.json", m.dump(2) + "\n");
    }
};

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

fs::path png_name(const fs::path& rel) {
    fs::path p = rel;
    p.replace_extension(".png");
    return p;
}

void deblur_file(const Generator& g, const fs::path& in, const fs::path& out) {
    const ByteImage img = read_image(in);
    const Tensor restored = deblur(g, to_model_range(img));
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_png(out, to_bytes(restored));
}

int cmd_train(Run& run, std::ostream& out) {
    normalize(run.settings);
    TrainConfig config = train_config(run.settings);
    const std::string root = run.settings.get("data.root");
    if (root.empty()) throw SpecError("data.root is required (use --data)");
    config.checkpoint_dir = run.dir / "checkpoints";
    write_text(run.dir / "config.txt", run.settings.to_text());
    run.extra["scheme"] = config.scheme_string();

    const auto dataset = load_paired_dataset(root);
    if (dataset.empty()) throw DataError("dataset " + root + " has no image pairs");
    out << "training " << config.scheme_string() << " on " << dataset.size() << " pairs for " << config.epochs
        << " epochs -> " << run.dir.string() << "\n";

    const fs::path report_path = run.dir / "train_report.jsonl";
    std::ofstream report(report_path, std::ios::binary);
    if (!report) throw DataError("cannot write " + report_path.string());
    TrainObserver obs;
    obs.on_epoch = [&](const EpochRecord& r) {
        report << r.to_json().dump() << "\n";
        report.flush();
        out << "epoch " << r.epoch << "/" << config.epochs << " lr=" << fmt(r.lr) << " lambda=" << r.lambda.to_string()
            << " admitted=" << r.admitted_fraction << " bilevel=" << r.mean_bilevel << " total=" << r.mean.total << "\n";
    };
    const TrainResult result = train(config, dataset, obs);
    if (!result.report.checkpoints.empty()) run.extra["final_checkpoint"] = result.report.checkpoints.back().string();
    return kOk;
}

int cmd_deblur(Run& run, const std::string& checkpoint, const std::string& input, const std::string& output,
               std::ostream& out) {
    const CheckpointContents ck = load_checkpoint(checkpoint);
    const fs::path in(input);
    if (!fs::exists(in)) throw DataError("input " + input + " does not exist");
    int count = 0;
    if (fs::is_directory(in)) {
        const fs::path dest = output.empty() ? run.dir / "deblurred" : fs::path(output);
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(in)) {
            if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            const fs::path target = dest / png_name(fs::relative(f, in));
            deblur_file(ck.generator, f, target);
            out << f.string() << " -> " << target.string() << "\n";
            ++count;
        }
    } else {
        fs::path target = output.empty() ? run.dir / "deblurred" / png_name(in.filename()) : fs::path(output);
        if (fs::is_directory(target)) target /= png_name(in.filename());
        deblur_file(ck.generator, in, target);
        out << in.string() << " -> " << target.string() << "\n";
        count = 1;
    }
    run.extra["checkpoint"] = checkpoint;
    run.extra["images"] = count;
    return kOk;
}

int cmd_evaluate(Run& run, const std::string& checkpoint, bool saliency, std::ostream& out) {
    const std::string root = run.settings.get("data.root");
    if (root.empty()) throw SpecError("data.root is required (use --data)");
    const CheckpointContents ck = load_checkpoint(checkpoint);
    const auto dataset = load_paired_dataset(root);
    EvalConfig cfg;
    if (saliency) cfg.saliency_dir = run.dir / "saliency";
    const EvalReport report = evaluate(ck.generator, dataset, cfg);
    report.write_csv(run.dir / "eval.csv");
    report.write_json(run.dir / "eval_summary.json");
    run.extra["checkpoint"] = checkpoint;
    out << "evaluated " << report.rows.size() << " pairs: psnr=" << report.mean_psnr_db << " dB ssim=" << report.mean_ssim;
    if (report.mean_msssim) out << " ms-ssim=" << *report.mean_msssim;
    out << " -> " << (run.dir / "eval.csv").string() << "\n";
    return kOk;
}

int cmd_fit_prior(Run& run, const std::string& target_path, const std::string& input_path, std::ostream& out) {
    const DeepPriorConfig config = prior_config(run.settings);
    const Tensor target = to_model_range(read_image(target_path));
    std::optional<Tensor> input;
    if (!input_path.empty()) input = to_model_range(read_image(input_path));
    const DeepPriorResult r = fit_deep_prior(target, input, config);

    std::string trace = "iter,mse\n";
    for (std::size_t k = 0; k < r.mse.size(); ++k) trace += std::to_string(k) + "," + fmt(r.mse[k]) + "\n";
    write_text(run.dir / "prior_trace.csv", trace);
    for (const auto& [iter, img] : r.snapshots) {
        char name[32];
        std::snprintf(name, sizeof name, "snapshot_%04d.png", iter);
        write_png(run.dir / name, to_bytes(img));
    }
    write_png(run.dir / "output.png", to_bytes(r.output));
    run.extra["target"] = target_path;
    run.extra["final_mse"] = r.mse.back();
    out << "fit-prior: mse " << r.mse.front() << " -> " << r.mse.back() << " after " << config.iters
        << " iterations -> " << run.dir.string() << "\n";
    return kOk;
}

int cmd_make_synth(Run& run, const std::string& output, std::ostream& out) {
    const SynthOptions o = synth_options(run.settings);
    const fs::path dest = output.empty() ? run.dir / "synth" : fs::path(output);
    const auto ids = write_synthetic_dataset(dest, o);
    run.extra["output"] = dest.string();
    out << "wrote " << ids.size() << " pairs to " << dest.string() << "\n";
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Bi-Skip motion deblurring toolkit", "biskip"};
    app.require_subcommand(1);
    app.set_version_flag("--version", version_string());

    std::string config_path;
    std::vector<std::string> sets;
    std::map<std::string, std::string> flag_values;
    auto common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config_path, "key=value config file");
        sub->add_option("--set", sets, "override a config key (key=value), repeatable")
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
            ->expected(1);
    };
    auto mapped = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
        sub->add_option_function<std::string>(flag, [&flag_values, key](const std::string& v) { flag_values[key] = v; },
                                              help + " (" + key + ")");
    };

    CLI::App* train = app.add_subcommand("train", "train a generator with the self-paced adversarial loop");
    common(train);
    mapped(train, "--data", "data.root", "dataset root with blur/ and sharp/");
    mapped(train, "--scheme", "train.scheme", "loss scheme, e.g. SA1P or SA1P-BS");
    mapped(train, "--variant", "model.variant", "generator variant: S, BS-cR, BS-w/o-R, BS");
    mapped(train, "--epochs", "train.epochs", "number of epochs");
    mapped(train, "--lr0", "train.lr0", "initial learning rate");
    mapped(train, "--crop", "train.crop", "training crop size (0 = whole image)");

    std::string checkpoint, input, output, target, prior_input;
    bool saliency = false;
    CLI::App* deblur_cmd = app.add_subcommand("deblur", "deblur an image or a directory of images");
    common(deblur_cmd);
    deblur_cmd->add_option("--checkpoint", checkpoint, "generator checkpoint")->required();
    deblur_cmd->add_option("-i,--input", input, "image file or directory")->required();
    deblur_cmd->add_option("-o,--output", output, "output file or directory");

    CLI::App* eval = app.add_subcommand("evaluate", "score a checkpoint on a paired dataset");
    common(eval);
    eval->add_option("--checkpoint", checkpoint, "generator checkpoint")->required();
    mapped(eval, "--data", "data.root", "dataset root with blur/ and sharp/");
    eval->add_flag("--saliency", saliency, "also write saliency maps and heatmaps");

    CLI::App* prior = app.add_subcommand("fit-prior", "fit a generator to one image from a fixed input");
    common(prior);
    prior->add_option("--target", target, "target image")->required();
    prior->add_option("--input", prior_input, "input image (default: seeded noise)");
    mapped(prior, "--iters", "prior.iters", "iterations");
    mapped(prior, "--snap", "prior.snapshots", "comma-separated snapshot iterations");
    mapped(prior, "--lr", "prior.lr", "learning rate");
    mapped(prior, "--seed", "prior.seed", "seed for weights and noise");
    mapped(prior, "--variant", "model.variant", "generator variant");

    CLI::App* synth = app.add_subcommand("make-synth", "write a synthetic blurred/sharp dataset");
    common(synth);
    mapped(synth, "--n", "synth.count", "number of pairs");
    mapped(synth, "--size", "synth.size", "image side length");
    mapped(synth, "--seed", "synth.seed", "seed");
    synth->add_option("-o,--output", output, "output root (default: inside the run directory)");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kConfigError;
    }

    Run run;
    run.args = args;
    CLI::App* chosen = app.get_subcommands().front();
    run.command = chosen->get_name();
    try {
        if (!config_path.empty()) run.settings.merge_file(config_path);
        for (const auto& [k, v] : flag_values) run.settings.set(k, v);
        for (const auto& s : sets) run.settings.assign(s);
    } catch (const std::exception& e) {
        err << "biskip " << run.command << ": " << e.what() << "\n";
        return exit_code_for(e);
    }

    try {
        run.dir = make_run_dir(run_root(), run.command);
    } catch (const std::exception& e) {
        err << "biskip " << run.command << ": " << e.what() << "\n";
        return exit_code_for(e);
    }

    int code = kOk;
    std::string status = "ok";
    try {
        run.write_manifest("running", -1);
        if (chosen == train) code = cmd_train(run, out);
        else if (chosen == deblur_cmd) code = cmd_deblur(run, checkpoint, input, output, out);
        else if (chosen == eval) code = cmd_evaluate(run, checkpoint, saliency, out);
        else if (chosen == prior) code = cmd_fit_prior(run, target, prior_input, out);
        else code = cmd_make_synth(run, output, out);
    } catch (const std::exception& e) {
        code = exit_code_for(e);
        status = "failed: " + std::string(e.what());
        err << "biskip " << run.command << ": " << e.what() << "\n";
    }
    try {
        run.write_manifest(status, code);
    } catch (const std::exception& e) {
        err << "biskip " << run.command << ": " << e.what() << "\n";
        if (code == kOk) code = exit_code_for(e);
    }
    return code;
}

}  // namespace biskip::cli
