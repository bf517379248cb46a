#pragma once

#include "tamtrl/policy.hpp"
#include "tamtrl/rollout.hpp"
#include "tamtrl/synth.hpp"
#include "tamtrl/trainer.hpp"

#include <json.hpp>
#include <string>
#include <vector>

namespace tamtrl::config {

struct VocabConfig {
    int num_keys = 24;
    int num_values = 24;
    int num_filler = 79; // 24 + 24 + 1 + 79 = 128 content tokens
};

struct DataConfig {
    int train_size = 256;
    int eval_size = 64;
};

struct IoConfig {
    std::string data_dir = "data";
    std::string out_dir = "runs/default";
    bool trace = false;
};

// Fully resolved run configuration; round-trips through JSON unchanged and is
// echoed into every artifact set.
struct RunConfig {
    std::uint64_t seed = 0;
    VocabConfig vocab;
    DataConfig data;
    synth::SynthConfig synth;
    policy::ModelConfig model;
    rollout::ChunkingConfig chunking;
    std::string reward_mode = "tamtrl";
    trainer::TrainConfig train;
    IoConfig io;
    double stop_em = 0.0; // > 0: stop training once eval EM reaches it

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);

    // Loads the file (empty path = defaults), applies dotted-key overrides
    // like "train.beta=0.001", then environment overrides for io paths.
    static RunConfig load(const std::string& path, const std::vector<std::string>& overrides);

    void validate() const; // ConfigError names the offending field
};

// Applies one "dotted.path=value" override onto a JSON document.
void apply_override(nlohmann::json& j, const std::string& assignment);

RunConfig default_config();

} // namespace tamtrl::config
