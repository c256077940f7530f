#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "attnreg/config.hpp"
#include "attnreg/error.hpp"
#include "attnreg/pipeline.hpp"

namespace {

// Flag values that override the config file when given.
struct Overrides {
  std::string config;
  std::optional<std::string> reg, decode, dataset, output, checkpoint, lexicon, loto;
  std::optional<double> alpha, share, p, rep_penalty, penalty_alpha, lr;
  std::optional<std::size_t> k, beams, epochs, max_new_tokens, limit, toy_pairs;
  std::optional<std::uint64_t> seed;
  bool micro = false;
  bool save_traces = false;
  std::vector<std::string> inputs;
  std::string out;

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    auto put = [&j](const char* key, const auto& v) {
      if (v) j[key] = *v;
    };
    put("reg", reg);
    put("decode", decode);
    put("dataset", dataset);
    put("output", output);
    put("checkpoint", checkpoint);
    put("lexicon", lexicon);
    put("loto", loto);
    put("alpha", alpha);
    put("share", share);
    put("p", p);
    put("rep_penalty", rep_penalty);
    put("penalty_alpha", penalty_alpha);
    put("learning_rate", lr);
    put("k", k);
    put("beams", beams);
    put("epochs", epochs);
    put("max_new_tokens", max_new_tokens);
    put("limit", limit);
    put("toy_pairs", toy_pairs);
    put("seed", seed);
    if (micro) j["micro"] = true;
    if (save_traces) j["save_traces"] = true;
    if (inputs.size() == 1) j["input"] = inputs.front();
    return j;
  }
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Flat JSON run configuration");
  cmd->add_option("--reg", o.reg, "Regularizer: none, ear or klar");
  cmd->add_option("--alpha", o.alpha, "Regularizer weight");
  cmd->add_option("--share", o.share, "KLAR attention share on relevant tokens");
  cmd->add_option("--decode", o.decode, "Decoding: beam, con, greedy, topk, topp, topkp");
  cmd->add_option("--k", o.k, "Top-k cutoff");
  cmd->add_option("--p", o.p, "Nucleus mass");
  cmd->add_option("--beams", o.beams, "Beam width");
  cmd->add_option("--rep-penalty", o.rep_penalty, "Beam search repetition penalty");
  cmd->add_option("--penalty-alpha", o.penalty_alpha, "Contrastive search degeneration weight");
  cmd->add_option("--max-new-tokens", o.max_new_tokens, "Generation length limit");
  cmd->add_option("--seed", o.seed, "Run seed");
  cmd->add_option("--loto", o.loto, "Hold out this target (leave-one-target-out split)");
  cmd->add_option("--lr", o.lr, "Learning rate");
  cmd->add_option("--epochs", o.epochs, "Training epochs");
  cmd->add_option("--dataset", o.dataset, "JSONL dataset");
  cmd->add_option("--output", o.output, "Output directory");
  cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint path");
  cmd->add_option("--lexicon", o.lexicon, "Lexicon JSON (default: bundled)");
  cmd->add_option("--limit", o.limit, "Generate for at most N prompts");
}

attnreg::RunConfig resolve(const Overrides& o) {
  attnreg::RunConfig cfg;
  if (!o.config.empty()) cfg = attnreg::load_config(attnreg::resolve_input(o.config));
  attnreg::apply_json(cfg, o.to_json());
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-regularized counter-narrative generation toolkit"};
  app.require_subcommand(1);
  Overrides o;

  auto* train = app.add_subcommand("train", "Split the dataset and train a model");
  add_common(train, o);

  auto* generate = app.add_subcommand("generate", "Generate one counter narrative per test HS");
  add_common(generate, o);
  generate->add_option("--input", o.inputs, "HS records (default <output>/test.jsonl)");
  generate->add_flag("--save-traces", o.save_traces, "Write attention traces");

  auto* evaluate = app.add_subcommand("evaluate", "Score generation files");
  add_common(evaluate, o);
  evaluate->add_option("--input", o.inputs, "Generation files (repeatable)");

  auto* analyze = app.add_subcommand("analyze", "Attention statistics of generations");
  add_common(analyze, o);
  analyze->add_option("--input", o.inputs, "Generations (default <output>/generations.jsonl)");
  analyze->add_flag("--micro", o.micro, "Pool tokens across examples");

  auto* toy = app.add_subcommand("make-toy-corpus", "Write a synthetic HS/CN dataset");
  add_common(toy, o);
  toy->add_option("--n", o.toy_pairs, "Number of pairs");
  toy->add_option("--out", o.out, "Output JSONL (default <output>/toy_corpus.jsonl)");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = resolve(o);
    if (train->parsed()) {
      attnreg::pipeline::train(cfg, std::cout);
    } else if (generate->parsed()) {
      attnreg::pipeline::generate(cfg, std::cout);
    } else if (evaluate->parsed()) {
      attnreg::pipeline::evaluate(cfg, o.inputs, std::cout);
    } else if (analyze->parsed()) {
      attnreg::pipeline::analyze(cfg, std::cout);
    } else if (toy->parsed()) {
      attnreg::pipeline::make_toy_corpus(cfg, o.out, std::cout);
    }
  } catch (const attnreg::Error& e) {
    std::cerr << "attnreg: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "attnreg: unexpected error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
