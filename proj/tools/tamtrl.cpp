#include "tamtrl/config.hpp"
#include "tamtrl/credit.hpp"
#include "tamtrl/errors.hpp"
#include "tamtrl/kernels.hpp"
#include "tamtrl/policy.hpp"
#include "tamtrl/rollout.hpp"
#include "tamtrl/synth.hpp"
#include "tamtrl/theory.hpp"
#include "tamtrl/trainer.hpp"
#include "tamtrl/vocab.hpp"

#include <CLI11.hpp>
#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::atomic<bool> g_stop_requested{false};

void handle_signal(int) { g_stop_requested = true; }

tamtrl::policy::ModelConfig resolved_model_config(const tamtrl::config::RunConfig& cfg) {
    auto m = cfg.model;
    m.vocab_size = tamtrl::vocab::Specials::count + cfg.vocab.num_keys + cfg.vocab.num_values + 1 +
                   cfg.vocab.num_filler;
    if (m.seed == 0) m.seed = tamtrl::derive_seed(cfg.seed, {0x0d31u});
    return m;
}

void write_config_echo(const tamtrl::config::RunConfig& cfg, const fs::path& dir) {
    std::ofstream f(dir / "config.json");
    f << cfg.to_json().dump(2) << "\n";
}

int cmd_gen_data(const tamtrl::config::RunConfig& cfg) {
    const fs::path dir(cfg.io.data_dir);
    fs::create_directories(dir);
    const auto vocab = tamtrl::vocab::Vocabulary::build(cfg.vocab.num_keys, cfg.vocab.num_values,
                                                        cfg.vocab.num_filler);
    vocab.save((dir / "vocabulary.json").string());

    auto train_cfg = cfg.synth;
    train_cfg.seed = tamtrl::derive_seed(cfg.seed, {0xda7au, 0});
    auto eval_cfg = cfg.synth;
    eval_cfg.seed = tamtrl::derive_seed(cfg.seed, {0xda7au, 1});
    tamtrl::synth::write_jsonl((dir / "train.jsonl").string(),
                               tamtrl::synth::generate(vocab, train_cfg, cfg.data.train_size));
    tamtrl::synth::write_jsonl((dir / "eval.jsonl").string(),
                               tamtrl::synth::generate(vocab, eval_cfg, cfg.data.eval_size));
    write_config_echo(cfg, dir);
    std::cout << "wrote " << cfg.data.train_size << " train / " << cfg.data.eval_size
              << " eval instances to " << dir.string() << " (vocab size " << vocab.size() << ")\n";
    return 0;
}

void write_metrics_csv(const fs::path& jsonl_path, const fs::path& csv_path) {
    std::ifstream in(jsonl_path);
    std::ofstream out(csv_path);
    out << "step,updated,mean_reward,em,resp_len,surviving_fraction,buffer_size,"
           "raw_p_min,raw_p_max,raw_p_mean,objective,kl,ratio,lr\n";
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        if (!j.contains("step")) continue; // config echo / eval records
        out << j.value("step", 0) << ',' << (j.value("updated", false) ? 1 : 0) << ','
            << j.value("mean_reward", 0.0) << ',' << j.value("em", 0.0) << ','
            << j.value("resp_len", 0.0) << ',' << j.value("surviving_fraction", 0.0) << ','
            << j.value("buffer_size", 0L) << ',' << j.value("raw_p_min", 0.0) << ','
            << j.value("raw_p_max", 0.0) << ',' << j.value("raw_p_mean", 0.0) << ','
            << j.value("objective", 0.0) << ',' << j.value("kl", 0.0) << ','
            << j.value("ratio", 0.0) << ',' << j.value("lr", 0.0) << "\n";
    }
}

int cmd_train(const tamtrl::config::RunConfig& cfg, bool quiet) {
    const fs::path data_dir(cfg.io.data_dir);
    const fs::path out_dir(cfg.io.out_dir);
    fs::create_directories(out_dir);
    write_config_echo(cfg, out_dir);

    const auto vocab = tamtrl::vocab::Vocabulary::load((data_dir / "vocabulary.json").string());
    const auto train_set = tamtrl::synth::read_jsonl((data_dir / "train.jsonl").string());
    const auto eval_set = tamtrl::synth::read_jsonl((data_dir / "eval.jsonl").string());

    auto model_cfg = resolved_model_config(cfg);
    if (model_cfg.vocab_size != vocab.size()) {
        throw tamtrl::ConfigError("vocab: dataset vocabulary size " + std::to_string(vocab.size()) +
                                  " does not match config " + std::to_string(model_cfg.vocab_size));
    }
    auto params = tamtrl::policy::PolicyParams::init(model_cfg);
    const auto mode = tamtrl::credit::parse_reward_mode(cfg.reward_mode);

    tamtrl::trainer::Trainer trainer(vocab, train_set, std::move(params), cfg.chunking, cfg.train,
                                     mode, cfg.seed);

    std::ofstream metrics(out_dir / "metrics.jsonl");
    metrics << json{{"config", cfg.to_json()}}.dump() << "\n";

    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);

    double best_em = 0.0;
    for (int s = 0; s < cfg.train.total_steps && !g_stop_requested; ++s) {
        const auto m = trainer.step();
        metrics << m.to_json().dump() << "\n";
        if (!quiet && (m.updated || m.step % 50 == 0)) {
            std::cout << "step " << m.step << " em " << m.em << " reward " << m.mean_reward
                      << " buffer " << m.buffer_size << (m.updated ? " [update]" : "") << "\n";
        }
        if (cfg.train.checkpoint_every > 0 && m.step % cfg.train.checkpoint_every == 0) {
            trainer.params().save((out_dir / ("ckpt_" + std::to_string(m.step) + ".bin")).string());
        }
        if (cfg.train.eval_every > 0 && m.step % cfg.train.eval_every == 0) {
            const auto ev = tamtrl::trainer::evaluate(trainer.params(), eval_set, vocab, cfg.chunking,
                                                      cfg.train, tamtrl::derive_seed(cfg.seed, {0x77u}),
                                                      cfg.train.eval_instances);
            metrics << json{{"eval_step", m.step}, {"eval_em", ev.em}, {"eval_sub_em", ev.sub_em}}.dump()
                    << "\n";
            if (!quiet) std::cout << "  eval em " << ev.em << " sub_em " << ev.sub_em << "\n";
            best_em = std::max(best_em, ev.em);
            if (cfg.stop_em > 0.0 && ev.em >= cfg.stop_em) break;
        }
    }
    metrics.flush();
    trainer.params().save((out_dir / "final.bin").string());
    write_metrics_csv(out_dir / "metrics.jsonl", out_dir / "metrics.csv");
    if (!quiet) std::cout << "final checkpoint and metrics written to " << out_dir.string() << "\n";
    return 0;
}

int cmd_eval(const tamtrl::config::RunConfig& cfg, const std::string& checkpoint) {
    const fs::path data_dir(cfg.io.data_dir);
    const auto vocab = tamtrl::vocab::Vocabulary::load((data_dir / "vocabulary.json").string());
    const auto eval_set = tamtrl::synth::read_jsonl((data_dir / "eval.jsonl").string());
    const auto params = tamtrl::policy::PolicyParams::load(checkpoint);
    const auto ev = tamtrl::trainer::evaluate(params, eval_set, vocab, cfg.chunking, cfg.train,
                                              tamtrl::derive_seed(cfg.seed, {0x77u}),
                                              cfg.train.eval_instances);
    json report{{"em", ev.em}, {"sub_em", ev.sub_em}, {"k", cfg.train.eval_k},
                {"per_pass_em", ev.per_pass_em}};
    std::cout << report.dump(2) << "\n";
    const fs::path out_dir(cfg.io.out_dir);
    fs::create_directories(out_dir);
    std::ofstream f(out_dir / "eval_report.json");
    f << report.dump(2) << "\n";
    return 0;
}

int cmd_verify_theorem(int trials, std::uint64_t seed) {
    tamtrl::Rng rng(tamtrl::derive_seed(seed, {0x7e0u}));
    double max_identity = 0.0, max_chain = 0.0;
    for (int i = 0; i < trials; ++i) {
        const int K = 2 + static_cast<int>(rng.uniform_int(7)); // K in 2..8
        const auto inst = tamtrl::theory::random_instance(rng, K);
        const double lhs = tamtrl::theory::objective_lhs(inst);
        const double rhs = tamtrl::theory::objective_rhs(inst);
        max_identity = std::max(max_identity, std::abs(lhs - rhs));
        max_chain = std::max(max_chain, std::abs(tamtrl::theory::kl_chain_residual(inst)));
    }
    std::cout << "trials: " << trials << "\n"
              << "max |lhs - rhs|: " << max_identity << "\n"
              << "max KL-chain residual: " << max_chain << "\n";
    const bool ok = max_identity < 1e-9 && max_chain < 1e-9;
    std::cout << (ok ? "OK" : "FAIL") << "\n";
    return ok ? 0 : 1;
}

int cmd_trace(const tamtrl::config::RunConfig& cfg, const std::string& checkpoint, int index,
              double gamma) {
    const fs::path data_dir(cfg.io.data_dir);
    const auto vocab = tamtrl::vocab::Vocabulary::load((data_dir / "vocabulary.json").string());
    const auto eval_set = tamtrl::synth::read_jsonl((data_dir / "eval.jsonl").string());
    if (index < 0 || index >= static_cast<int>(eval_set.size())) {
        throw tamtrl::ConfigError("trace: index out of range");
    }
    const auto params = checkpoint.empty()
                            ? tamtrl::policy::PolicyParams::init(resolved_model_config(cfg))
                            : tamtrl::policy::PolicyParams::load(checkpoint);
    const auto& task = eval_set[static_cast<std::size_t>(index)];
    tamtrl::Rng rng(tamtrl::derive_seed(cfg.seed, {0x7cceu, static_cast<std::uint64_t>(index)}));
    const tamtrl::rollout::Sampling sampling{cfg.train.eval_temperature, cfg.train.eval_top_p};
    const auto ep = tamtrl::rollout::run_episode(params, task, vocab, cfg.chunking, sampling, rng, index);

    auto words = [&vocab](std::span<const int> ids) { return vocab.decode(ids); };
    for (const auto& turn : ep.turns) {
        json rec{{"turn", turn.turn_index},
                 {"chunk_span", {turn.chunk_span.first, turn.chunk_span.second}},
                 {"context", words(turn.student_context)},
                 {"memory_in", words(turn.memory_in)},
                 {"memory_out", words(turn.memory_out.tokens)},
                 {"truncated", turn.memory_out.truncated}};
        std::cout << rec.dump() << "\n";
    }
    tamtrl::Rng probe_rng(tamtrl::derive_seed(cfg.seed, {0x9e0beu, static_cast<std::uint64_t>(index)}));
    const auto probe = tamtrl::rollout::probe_stepwise(params, task, vocab, ep, cfg.chunking, sampling,
                                                       probe_rng, gamma);
    json rec{{"answer_context", words(ep.answer_context)},
             {"answer", words(ep.answer.tokens)},
             {"ground_truth", words(task.answers.front())},
             {"outcome_reward", ep.outcome_reward},
             {"probe_per_turn_reward", probe.per_turn_reward},
             {"probe_gamma", gamma},
             {"probe_discounted_return", probe.discounted_return}};
    std::cout << rec.dump() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"chunked long-document QA laboratory: synthetic data, multi-turn RL training "
                 "with teacher-aligned turn-level rewards, and objective-decomposition checks"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "JSON config file (defaults used when absent)");
    app.add_option("--set", overrides, "dotted-key overrides, e.g. train.beta=0.001");

    auto* gen = app.add_subcommand("gen-data", "generate dataset + vocabulary");
    auto* train = app.add_subcommand("train", "run RL training");
    std::string mode_flag;
    bool quiet = false;
    train->add_option("--mode", mode_flag, "reward mode (tamtrl, outcome_only, no_lnorm, "
                                           "no_mmnorm, global_reward, plus_reward)");
    train->add_flag("--quiet", quiet, "suppress progress output");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string checkpoint;
    eval->add_option("--checkpoint", checkpoint, "checkpoint path")->required();

    auto* verify = app.add_subcommand("verify-theorem", "randomized objective-decomposition check");
    int trials = 1000;
    std::uint64_t theorem_seed = 0;
    verify->add_option("--trials", trials, "number of random instances");
    verify->add_option("--seed", theorem_seed, "rng seed");

    auto* trace = app.add_subcommand("trace", "decoded dump of one episode");
    std::string trace_checkpoint;
    int trace_index = 0;
    double gamma = 1.0;
    trace->add_option("--checkpoint", trace_checkpoint, "checkpoint path (fresh init when absent)");
    trace->add_option("--index", trace_index, "eval-set instance index");
    trace->add_option("--gamma", gamma, "discount for the stepwise probe report");

    CLI11_PARSE(app, argc, argv);

    try {
        auto cfg = tamtrl::config::RunConfig::load(config_path, overrides);
        if (gen->parsed()) return cmd_gen_data(cfg);
        if (train->parsed()) {
            if (!mode_flag.empty()) {
                cfg.reward_mode = mode_flag;
                tamtrl::credit::parse_reward_mode(mode_flag);
            }
            return cmd_train(cfg, quiet);
        }
        if (eval->parsed()) return cmd_eval(cfg, checkpoint);
        if (verify->parsed()) return cmd_verify_theorem(trials, theorem_seed);
        if (trace->parsed()) return cmd_trace(cfg, trace_checkpoint, trace_index, gamma);
    } catch (const tamtrl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const tamtrl::ModeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const tamtrl::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
