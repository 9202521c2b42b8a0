#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "biskip/model.hpp"
#include "biskip/optim.hpp"
#include "biskip/selfpaced.hpp"

namespace biskip {

struct OptimizerState {
    std::int64_t steps = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

struct CheckpointContents {
    Generator generator;
    std::optional<Critic> critic;
    std::optional<OptimizerState> generator_optimizer;
    std::optional<OptimizerState> critic_optimizer;
    int epoch = 0;
    std::optional<SelfPacedState> selfpaced;
    nlohmann::json header;
};

struct CheckpointExtras {
    int epoch = 0;
    const Critic* critic = nullptr;
    const Adam* generator_optimizer = nullptr;
    const Adam* critic_optimizer = nullptr;
    const SelfPacedState* selfpaced = nullptr;
    nlohmann::json config;  // stored verbatim under "config"
};

nlohmann::json spec_to_json(const GeneratorSpec& spec);
GeneratorSpec spec_from_json(const nlohmann::json& j);

// Arrays: generator.<param>, critic.<param>, adam.{generator,critic}.{m,v}.<param>.
void save_checkpoint(const std::filesystem::path& path, const Generator& g, const CheckpointExtras& extras = {});
// Throws CheckpointError for unreadable files, missing arrays or shape drift.
CheckpointContents load_checkpoint(const std::filesystem::path& path);

}  // namespace biskip
