#include "biskip/checkpoint.hpp"

#include <limits>

#include "biskip/archive.hpp"
#include "biskip/errors.hpp"

namespace biskip {

namespace {

constexpr const char* kFormat = "biskip-checkpoint/1";

void add_params(NamedArrays& arrays, const std::string& prefix, const ParameterSet& params) {
    for (const auto& p : params) arrays.emplace_back(prefix + p.name, p.var.value());
}

void add_moments(NamedArrays& arrays, const std::string& prefix, const ParameterSet& params, const Adam& opt) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        arrays.emplace_back(prefix + "m." + params[i].name, opt.first_moments()[i]);
        arrays.emplace_back(prefix + "v." + params[i].name, opt.second_moments()[i]);
    }
}

const Tensor& fetch(const Archive& a, const std::string& name, const Shape& expected) {
    const Tensor* t = a.find(name);
    if (!t) throw CheckpointError("checkpoint is missing array '" + name + "'");
    if (t->shape() != expected) {
        throw CheckpointError("checkpoint array '" + name + "' has shape " + shape_to_string(t->shape()) +
                              ", expected " + shape_to_string(expected));
    }
    return *t;
}

void load_params(const Archive& a, const std::string& prefix, ParameterSet& params) {
    for (auto& p : params) p.var.mutable_value() = fetch(a, prefix + p.name, p.var.value().shape());
}

OptimizerState load_moments(const Archive& a, const std::string& prefix, const ParameterSet& params,
                            std::int64_t steps) {
    OptimizerState s;
    s.steps = steps;
    for (const auto& p : params) {
        s.m.push_back(fetch(a, prefix + "m." + p.name, p.var.value().shape()));
        s.v.push_back(fetch(a, prefix + "v." + p.name, p.var.value().shape()));
    }
    return s;
}

nlohmann::json critic_layers_to_json(const Critic& d) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : d.layers()) {
        layers.push_back({{"in", l.in_channels},
                          {"out", l.out_channels},
                          {"kernel", l.kernel},
                          {"stride", l.stride},
                          {"pad", l.pad},
                          {"activation", l.activation}});
    }
    return layers;
}

}  // namespace

nlohmann::json spec_to_json(const GeneratorSpec& spec) {
    return {{"n_scales", spec.n_scales},
            {"channels_path", spec.channels_path},
            {"channels_skip", spec.channels_skip},
            {"resblocks_per_scale", spec.resblocks_per_scale},
            {"image_channels", spec.image_channels},
            {"variant", std::string(to_string(spec.variant))}};
}

GeneratorSpec spec_from_json(const nlohmann::json& j) {
    GeneratorSpec s;
    s.n_scales = j.at("n_scales").get<int>();
    s.channels_path = j.at("channels_path").get<std::vector<int>>();
    s.channels_skip = j.at("channels_skip").get<std::vector<int>>();
    s.resblocks_per_scale = j.at("resblocks_per_scale").get<int>();
    s.image_channels = j.at("image_channels").get<int>();
    s.variant = parse_variant(j.at("variant").get<std::string>());
    return s;
}

void save_checkpoint(const std::filesystem::path& path, const Generator& g, const CheckpointExtras& extras) {
    Archive a;
    a.header["format"] = kFormat;
    a.header["spec"] = spec_to_json(g.spec());
    a.header["variant"] = std::string(to_string(g.spec().variant));
    a.header["seed"] = g.seed();
    a.header["epoch"] = extras.epoch;
    add_params(a.arrays, "generator.", g.parameters());

    nlohmann::json optimizer = nlohmann::json::object();
    if (extras.critic) {
        a.header["critic"] = {{"seed", extras.critic->seed()},
                              {"slope", extras.critic->slope()},
                              {"layers", critic_layers_to_json(*extras.critic)}};
        add_params(a.arrays, "critic.", extras.critic->parameters());
    }
    if (extras.generator_optimizer) {
        const auto& c = extras.generator_optimizer->config();
        optimizer["generator"] = {{"steps", extras.generator_optimizer->steps()},
                                  {"beta1", c.beta1},
                                  {"beta2", c.beta2},
                                  {"eps", c.eps}};
        add_moments(a.arrays, "adam.generator.", g.parameters(), *extras.generator_optimizer);
    }
    if (extras.critic_optimizer) {
        if (!extras.critic) throw StateError("save_checkpoint: critic optimizer without critic");
        const auto& c = extras.critic_optimizer->config();
        optimizer["critic"] = {{"steps", extras.critic_optimizer->steps()},
                               {"beta1", c.beta1},
                               {"beta2", c.beta2},
                               {"eps", c.eps}};
        add_moments(a.arrays, "adam.critic.", extras.critic->parameters(), *extras.critic_optimizer);
    }
    a.header["optimizer"] = optimizer;
    if (extras.selfpaced) {
        const SelfPacedState& sp = *extras.selfpaced;
        nlohmann::json losses = nlohmann::json::object();
        for (const auto& [id, l] : sp.recorded_losses) losses[id] = l;
        a.header["selfpaced"] = {{"t", sp.t},
                                 {"T", sp.T},
                                 {"lambda", sp.lambda.is_infinite() ? nlohmann::json("inf") : nlohmann::json(sp.lambda.value())},
                                 {"losses", losses},
                                 {"losses_digest", losses_digest(sp.recorded_losses)}};
    }
    if (!extras.config.is_null()) a.header["config"] = extras.config;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    write_archive(path, a);
}

CheckpointContents load_checkpoint(const std::filesystem::path& path) {
    Archive a;
    try {
        a = read_archive(path);
    } catch (const Error& e) {
        throw CheckpointError(std::string("cannot read checkpoint: ") + e.what());
    }
    try {
        if (a.header.value("format", "") != kFormat) throw CheckpointError("not a biskip checkpoint: " + path.string());
        const GeneratorSpec spec = spec_from_json(a.header.at("spec"));
        CheckpointContents c{Generator(spec, a.header.at("seed").get<std::uint64_t>()), {}, {}, {}, 0, {}, a.header};
        load_params(a, "generator.", c.generator.parameters());
        c.epoch = a.header.at("epoch").get<int>();

        if (a.header.contains("critic")) {
            const auto& cj = a.header["critic"];
            std::vector<CriticLayerSpec> layers;
            for (const auto& l : cj.at("layers")) {
                layers.push_back({l.at("in").get<int>(), l.at("out").get<int>(), l.at("kernel").get<int>(),
                                  l.at("stride").get<int>(), l.at("pad").get<int>(), l.at("activation").get<bool>()});
            }
            c.critic.emplace(std::move(layers), cj.at("seed").get<std::uint64_t>(), cj.at("slope").get<double>());
            load_params(a, "critic.", c.critic->parameters());
        }
        const auto& opt = a.header.at("optimizer");
        if (opt.contains("generator")) {
            c.generator_optimizer =
                load_moments(a, "adam.generator.", c.generator.parameters(), opt["generator"].at("steps").get<std::int64_t>());
        }
        if (opt.contains("critic")) {
            if (!c.critic) throw CheckpointError("checkpoint has critic optimizer state but no critic");
            c.critic_optimizer =
                load_moments(a, "adam.critic.", c.critic->parameters(), opt["critic"].at("steps").get<std::int64_t>());
        }
        if (a.header.contains("selfpaced")) {
            const auto& sj = a.header["selfpaced"];
            SelfPacedState sp;
            sp.t = sj.at("t").get<int>();
            sp.T = sj.at("T").get<int>();
            const auto& lam = sj.at("lambda");
            sp.lambda = lam.is_string() ? Threshold::infinite() : Threshold::finite(lam.get<double>());
            for (const auto& [id, l] : sj.at("losses").items()) sp.recorded_losses[id] = l.get<double>();
            if (losses_digest(sp.recorded_losses) != sj.at("losses_digest").get<std::string>()) {
                throw CheckpointError("self-paced loss digest does not match the stored losses");
            }
            c.selfpaced = std::move(sp);
        }
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
    } catch (const SpecError& e) {
        throw CheckpointError(std::string("checkpoint describes an invalid model: ") + e.what());
    }
}

}  // namespace biskip
