#include "tamtrl/config.hpp"

#include "tamtrl/errors.hpp"

#include <cstdlib>
#include <fstream>

namespace tamtrl::config {

namespace {

template <typename T>
void get_if_present(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

} // namespace

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["vocab"] = {{"num_keys", vocab.num_keys},
                  {"num_values", vocab.num_values},
                  {"num_filler", vocab.num_filler}};
    j["data"] = {{"train_size", data.train_size}, {"eval_size", data.eval_size}};
    j["synth"] = {{"num_sentences", synth.num_sentences},
                  {"relevant_count", synth.relevant_count},
                  {"sentence_len", synth.sentence_len},
                  {"multi_hop", synth.multi_hop},
                  {"seed", synth.seed}};
    j["model"] = {{"d_model", model.d_model},
                  {"n_layers", model.n_layers},
                  {"n_heads", model.n_heads},
                  {"context_window", model.context_window},
                  {"seed", model.seed}};
    j["rollout"] = {{"chunk_len", chunking.chunk_len},
                    {"memory_budget", chunking.memory_budget},
                    {"query_budget", chunking.query_budget},
                    {"answer_budget", chunking.answer_budget},
                    {"temperature", train.rollout_temperature},
                    {"top_p", train.rollout_top_p}};
    j["reward"] = {{"mode", reward_mode}};
    j["train"] = {{"eps_low", train.eps_low},
                  {"eps_high", train.eps_high},
                  {"beta", train.beta},
                  {"learning_rate", train.learning_rate},
                  {"adam_b1", train.adam_b1},
                  {"adam_b2", train.adam_b2},
                  {"weight_decay", train.weight_decay},
                  {"group_size", train.group_size},
                  {"rollout_batch", train.rollout_batch},
                  {"buffer_target", train.buffer_target},
                  {"inner_epochs", train.inner_epochs},
                  {"warmup_steps", train.warmup_steps},
                  {"total_steps", train.total_steps},
                  {"std_floor", train.std_floor},
                  {"overlength_penalty", train.overlength_penalty},
                  {"overlength_decay", train.overlength_decay},
                  {"eval_temperature", train.eval_temperature},
                  {"eval_top_p", train.eval_top_p},
                  {"eval_k", train.eval_k},
                  {"eval_every", train.eval_every},
                  {"eval_instances", train.eval_instances},
                  {"checkpoint_every", train.checkpoint_every},
                  {"stop_em", stop_em}};
    j["io"] = {{"data_dir", io.data_dir}, {"out_dir", io.out_dir}, {"trace", io.trace}};
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig c;
    get_if_present(j, "seed", c.seed);
    if (j.contains("vocab")) {
        const auto& v = j.at("vocab");
        get_if_present(v, "num_keys", c.vocab.num_keys);
        get_if_present(v, "num_values", c.vocab.num_values);
        get_if_present(v, "num_filler", c.vocab.num_filler);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        get_if_present(d, "train_size", c.data.train_size);
        get_if_present(d, "eval_size", c.data.eval_size);
    }
    if (j.contains("synth")) {
        const auto& s = j.at("synth");
        get_if_present(s, "num_sentences", c.synth.num_sentences);
        get_if_present(s, "relevant_count", c.synth.relevant_count);
        get_if_present(s, "sentence_len", c.synth.sentence_len);
        get_if_present(s, "multi_hop", c.synth.multi_hop);
        get_if_present(s, "seed", c.synth.seed);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        get_if_present(m, "d_model", c.model.d_model);
        get_if_present(m, "n_layers", c.model.n_layers);
        get_if_present(m, "n_heads", c.model.n_heads);
        get_if_present(m, "context_window", c.model.context_window);
        get_if_present(m, "seed", c.model.seed);
    }
    if (j.contains("rollout")) {
        const auto& r = j.at("rollout");
        get_if_present(r, "chunk_len", c.chunking.chunk_len);
        get_if_present(r, "memory_budget", c.chunking.memory_budget);
        get_if_present(r, "query_budget", c.chunking.query_budget);
        get_if_present(r, "answer_budget", c.chunking.answer_budget);
        get_if_present(r, "temperature", c.train.rollout_temperature);
        get_if_present(r, "top_p", c.train.rollout_top_p);
    }
    if (j.contains("reward")) get_if_present(j.at("reward"), "mode", c.reward_mode);
    if (j.contains("train")) {
        const auto& t = j.at("train");
        get_if_present(t, "eps_low", c.train.eps_low);
        get_if_present(t, "eps_high", c.train.eps_high);
        get_if_present(t, "beta", c.train.beta);
        get_if_present(t, "learning_rate", c.train.learning_rate);
        get_if_present(t, "adam_b1", c.train.adam_b1);
        get_if_present(t, "adam_b2", c.train.adam_b2);
        get_if_present(t, "weight_decay", c.train.weight_decay);
        get_if_present(t, "group_size", c.train.group_size);
        get_if_present(t, "rollout_batch", c.train.rollout_batch);
        get_if_present(t, "buffer_target", c.train.buffer_target);
        get_if_present(t, "inner_epochs", c.train.inner_epochs);
        get_if_present(t, "warmup_steps", c.train.warmup_steps);
        get_if_present(t, "total_steps", c.train.total_steps);
        get_if_present(t, "std_floor", c.train.std_floor);
        get_if_present(t, "overlength_penalty", c.train.overlength_penalty);
        get_if_present(t, "overlength_decay", c.train.overlength_decay);
        get_if_present(t, "eval_temperature", c.train.eval_temperature);
        get_if_present(t, "eval_top_p", c.train.eval_top_p);
        get_if_present(t, "eval_k", c.train.eval_k);
        get_if_present(t, "eval_every", c.train.eval_every);
        get_if_present(t, "eval_instances", c.train.eval_instances);
        get_if_present(t, "checkpoint_every", c.train.checkpoint_every);
        get_if_present(t, "stop_em", c.stop_em);
    }
    if (j.contains("io")) {
        const auto& io = j.at("io");
        get_if_present(io, "data_dir", c.io.data_dir);
        get_if_present(io, "out_dir", c.io.out_dir);
        get_if_present(io, "trace", c.io.trace);
    }
    return c;
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override must look like section.key=value: " + assignment);
    }
    const std::string path = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);

    nlohmann::json* node = &j;
    std::size_t begin = 0;
    while (true) {
        const auto dot = path.find('.', begin);
        const std::string key = path.substr(begin, dot == std::string::npos ? dot : dot - begin);
        if (key.empty()) throw ConfigError("bad override path: " + path);
        if (dot == std::string::npos) {
            nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
            (*node)[key] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
            return;
        }
        node = &(*node)[key];
        begin = dot + 1;
    }
}

// Every key in `j` must exist in the schema (the serialized defaults);
// a silently ignored key means a typo'd override or config entry.
void reject_unknown_keys(const nlohmann::json& schema, const nlohmann::json& j,
                         const std::string& prefix) {
    for (const auto& [key, value] : j.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!schema.contains(key)) throw ConfigError("unknown config field: " + path);
        if (value.is_object()) reject_unknown_keys(schema.at(key), value, path);
    }
}

RunConfig default_config() { return RunConfig{}; }

RunConfig RunConfig::load(const std::string& path, const std::vector<std::string>& overrides) {
    nlohmann::json j = RunConfig{}.to_json();
    if (!path.empty()) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config file: " + path);
        nlohmann::json file_json = nlohmann::json::parse(f, nullptr, false);
        if (file_json.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
        j.merge_patch(file_json);
    }
    for (const auto& o : overrides) apply_override(j, o);
    reject_unknown_keys(RunConfig{}.to_json(), j, "");
    RunConfig c = from_json(j);
    if (const char* d = std::getenv("TAMTRL_DATA_DIR")) c.io.data_dir = d;
    if (const char* o = std::getenv("TAMTRL_OUT_DIR")) c.io.out_dir = o;
    c.validate();
    return c;
}

void RunConfig::validate() const {
    try {
        synth.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("synth: ") + e.what());
    }
    policy::ModelConfig m = model;
    m.vocab_size = vocab::Specials::count + vocab.num_keys + vocab.num_values + 1 + vocab.num_filler;
    m.validate();
    chunking.validate(m.context_window);
    train.validate();
    credit::parse_reward_mode(reward_mode);
    if (data.train_size < 1 || data.eval_size < 1) throw ConfigError("data: sizes must be >= 1");
}

} // namespace tamtrl::config
