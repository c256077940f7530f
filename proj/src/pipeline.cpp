#include "attnreg/pipeline.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

#include "attnreg/attnstats.hpp"
#include "attnreg/checkpoint.hpp"
#include "attnreg/data.hpp"
#include "attnreg/decoding.hpp"
#include "attnreg/error.hpp"
#include "attnreg/lexicon.hpp"
#include "attnreg/random.hpp"
#include "attnreg/text.hpp"
#include "attnreg/tokenizer.hpp"

namespace attnreg::pipeline {
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

// Files read and written by one command, for its manifest.
struct FileLog {
  std::vector<std::pair<std::string, fs::path>> inputs, outputs;
  void in(const std::string& role, const fs::path& p) { inputs.emplace_back(role, p); }
  void out(const std::string& role, const fs::path& p) { outputs.emplace_back(role, p); }
};

void write_manifest(const RunConfig& cfg, const std::string& command, const FileLog& files) {
  ojson j;
  j["command"] = command;
  j["config"] = to_json(cfg);
  j["seeds"] = {{"run", cfg.seed},
                {"model", cfg.model.seed},
                {"train", cfg.train.seed},
                {"decode", cfg.decode.seed}};
  auto list = [](const auto& entries) {
    ojson arr = ojson::array();
    for (const auto& [role, path] : entries) {
      arr.push_back({{"role", role}, {"path", path.generic_string()}, {"sha1", file_sha1(path)}});
    }
    return arr;
  };
  j["inputs"] = list(files.inputs);
  j["outputs"] = list(files.outputs);
  write_file(fs::path(cfg.paths.output) / ("manifest-" + command + ".json"), j.dump(2) + "\n");
}

lexicon::RelevantLexicon load_lexicon(const RunConfig& cfg, FileLog& files, std::ostream& log) {
  if (cfg.paths.lexicon.empty()) return lexicon::default_lexicon();
  const auto p = resolve_input(cfg.paths.lexicon);
  std::vector<std::string> warnings;
  auto lex = lexicon::load_lexicon(p, &warnings);
  for (const auto& w : warnings) log << "warning: " << w << '\n';
  files.in("lexicon", p);
  return lex;
}

struct LoadedModel {
  model::Parameters params;
  model::Vocabulary vocab;
};

LoadedModel load_model(const RunConfig& cfg, FileLog& files) {
  const auto ckpt = checkpoint_path(cfg);
  if (!fs::exists(ckpt)) throw IoError("missing checkpoint " + ckpt.string());
  LoadedModel m{model::load_checkpoint(ckpt), model::Vocabulary::load(vocab_path(ckpt))};
  const auto& c = m.params.config;
  const auto& want = cfg.model;
  if (c.n_layers != want.n_layers || c.n_heads != want.n_heads || c.d_model != want.d_model ||
      c.d_ff != want.d_ff || c.max_seq_len != want.max_seq_len) {
    throw InvalidArgument("checkpoint " + ckpt.string() +
                          " was trained with a different model configuration");
  }
  if (c.vocab_size != m.vocab.size()) {
    throw InvalidArgument("checkpoint and vocabulary sizes disagree");
  }
  files.in("checkpoint", ckpt);
  files.in("vocabulary", vocab_path(ckpt));
  return m;
}

fs::path default_input(const RunConfig& cfg, const char* name) {
  return cfg.paths.input.empty() ? fs::path(cfg.paths.output) / name
                                 : resolve_input(cfg.paths.input);
}

ojson decode_json(const decode::DecodeConfig& d) {
  ojson j;
  j["strategy"] = decode::to_string(d.strategy);
  j["beams"] = d.beams;
  j["rep_penalty"] = d.repetition_penalty;
  j["k"] = d.k;
  j["p"] = d.p;
  j["penalty_alpha"] = d.penalty_alpha;
  j["max_new_tokens"] = d.max_new_tokens;
  return j;
}

struct Generation {
  std::string id;
  std::vector<std::string> targets;
  std::string reference;
  std::string cn;
  std::string raw;
  std::vector<model::TokenId> tokens;
  std::optional<double> specificity;
};

std::vector<Generation> read_generations(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read generations " + path.string());
  std::vector<Generation> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Generation g;
      g.id = j.at("id").get<std::string>();
      g.reference = j.at("reference").get<std::string>();
      g.cn = j.at("cn").get<std::string>();
      g.raw = j.at("raw").get<std::string>();
      if (j.contains("tokens")) g.tokens = j["tokens"].get<std::vector<model::TokenId>>();
      g.targets = data::parse_targets(j.at("target").get<std::string>());
      if (j.contains("specificity")) g.specificity = j["specificity"].get<double>();
      out.push_back(std::move(g));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), n);
    } catch (const InvalidArgument& e) {
      throw ParseError(path.string() + ": " + e.what(), n);
    }
  }
  return out;
}

std::string safe_name(const std::string& id) {
  std::string s;
  for (char c : id) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return s.empty() ? "example" : s;
}

ojson stats_json(const std::optional<attnstats::CategoryStats>& s) {
  if (!s) return nullptr;
  ojson j;
  j["tokens"] = s->tokens;
  j["mean_attention"] = s->mean_attention;
  j["mean_received_entropy"] = s->mean_received_entropy;
  j["mean_std"] = s->mean_std;
  return j;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

std::string git_blob_sha1(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx, content.data(), content.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, md, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("sha1 digest failed");
  }
  EVP_MD_CTX_free(ctx);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[md[i] >> 4];
    hex += kHex[md[i] & 15];
  }
  return hex;
}

std::string file_sha1(const fs::path& path) { return git_blob_sha1(read_file(path)); }

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

fs::path checkpoint_path(const RunConfig& cfg) {
  return cfg.paths.checkpoint.empty() ? fs::path(cfg.paths.output) / "model.ckpt"
                                      : fs::path(cfg.paths.checkpoint);
}

fs::path vocab_path(const fs::path& checkpoint) {
  return fs::path(checkpoint.string() + ".vocab");
}

void train(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  if (cfg.paths.dataset.empty()) throw InvalidArgument("train: no dataset given");
  FileLog files;
  const fs::path out(cfg.paths.output);
  fs::create_directories(out);

  const auto dataset = resolve_input(cfg.paths.dataset);
  const auto records = data::ingest(dataset);
  files.in("dataset", dataset);
  log << "ingested " << records.size() << " records from " << dataset.string() << '\n';

  std::vector<std::string> warnings;
  const data::Split split = cfg.loto.empty()
                                ? data::split_in_target(records, cfg.seed, &warnings)
                                : data::split_loto(records, cfg.loto, cfg.loto_cap, cfg.seed);
  for (const auto& w : warnings) log << "warning: " << w << '\n';
  log << "split: train " << split.train.size() << ", dev " << split.dev.size() << ", test "
      << split.test.size() << '\n';
  for (const auto& [name, part] : {std::pair{"train.jsonl", &split.train},
                                   std::pair{"dev.jsonl", &split.dev},
                                   std::pair{"test.jsonl", &split.test}}) {
    data::write_jsonl(out / name, *part);
    files.out(name, out / name);
  }

  const auto lex = load_lexicon(cfg, files, log);
  const auto vocab = model::Vocabulary::build(data::corpus_texts(split.train), cfg.min_count);
  model::ModelConfig mc = cfg.model;
  mc.vocab_size = vocab.size();
  std::vector<model::TrainingExample> examples;
  examples.reserve(split.train.size());
  for (const auto& r : split.train) examples.push_back(data::make_example(r, vocab, lex, mc.max_seq_len));
  log << "vocabulary " << vocab.size() << " words; training " << mc.n_layers << "x" << mc.n_heads
      << " heads, d_model " << mc.d_model << ", reg " << reg::to_string(cfg.reg.kind) << '\n';

  const auto ckpt = checkpoint_path(cfg);
  model::TrainResult result;
  try {
    result = model::train(model::init_params(mc), examples, cfg.train, cfg.reg);
  } catch (const model::DivergenceError& e) {
    model::save_checkpoint(ckpt, e.last_good());
    vocab.save(vocab_path(ckpt));
    log << "diverged at step " << e.step() << "; last good parameters saved to " << ckpt.string()
        << '\n';
    throw;
  }
  model::save_checkpoint(ckpt, result.params);
  vocab.save(vocab_path(ckpt));
  files.out("checkpoint", ckpt);
  files.out("vocabulary", vocab_path(ckpt));

  std::string history;
  for (std::size_t e = 0; e < result.history.size(); ++e) {
    const auto& h = result.history[e];
    ojson j;
    j["epoch"] = e + 1;
    j["task_loss"] = h.task_loss;
    j["penalty"] = h.penalty;
    j["total_loss"] = h.total_loss;
    history += j.dump() + "\n";
    log << "epoch " << e + 1 << ": task " << fmt(h.task_loss) << ", penalty " << fmt(h.penalty)
        << ", total " << fmt(h.total_loss) << '\n';
  }
  write_file(out / "history.jsonl", history);
  files.out("history", out / "history.jsonl");
  write_manifest(cfg, "train", files);
}

void generate(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  FileLog files;
  const fs::path out(cfg.paths.output);
  fs::create_directories(out);
  const auto m = load_model(cfg, files);
  const auto input = default_input(cfg, "test.jsonl");
  auto records = data::ingest(input);
  files.in("prompts", input);
  if (cfg.limit && records.size() > cfg.limit) records.resize(cfg.limit);

  const decode::TransformerModel lm(m.params);
  const std::size_t max_prompt = m.params.config.max_seq_len - 1;
  std::string lines;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    auto prompt = m.vocab.encode(data::generation_prompt(r.hs));
    if (prompt.size() > max_prompt) {
      // Keep the tag that opens the counter narrative at the end.
      prompt.resize(max_prompt);
      prompt.back() = model::Vocabulary::kCounterNarrative;
    }
    decode::DecodeConfig dc = cfg.decode;
    dc.seed = derive_seed(cfg.decode.seed, i);
    dc.stop_token = model::Vocabulary::kEndOfText;
    const auto ids = decode::generate(lm, prompt, dc);
    const auto words = m.vocab.words(ids);

    ojson j;
    j["id"] = r.id;
    j["target"] = r.target();
    j["hs"] = r.hs;
    j["reference"] = r.cn;
    j["cn"] = data::extract_counter_narrative(words);
    j["raw"] = text::join(words);
    j["tokens"] = ids;
    j["decode"] = decode_json(cfg.decode);
    j["seed"] = dc.seed;
    if (cfg.save_traces) {
      const auto trace = model::forward(m.params, ids).trace;
      const fs::path tp = out / "traces" / (safe_name(r.id) + ".json");
      ojson t;
      t["layers"] = trace.layers;
      t["heads"] = trace.heads;
      t["seq_len"] = trace.seq_len;
      t["weights"] = trace.weights;
      write_file(tp, t.dump() + "\n");
      j["trace"] = tp.generic_string();
    }
    lines += j.dump() + "\n";
  }
  write_file(out / "generations.jsonl", lines);
  files.out("generations", out / "generations.jsonl");
  log << "generated " << records.size() << " counter narratives with "
      << decode::to_string(cfg.decode.strategy) << " decoding\n";
  write_manifest(cfg, "generate", files);
}

std::vector<metrics::MetricReport> evaluate(const RunConfig& cfg,
                                            const std::vector<std::string>& inputs,
                                            std::ostream& log) {
  cfg.validate();
  FileLog files;
  const fs::path out(cfg.paths.output);
  fs::create_directories(out);
  std::vector<fs::path> paths;
  for (const auto& p : inputs) paths.push_back(resolve_input(p));
  if (paths.empty()) paths.push_back(default_input(cfg, "generations.jsonl"));

  metrics::EvalOptions opts;
  opts.rr_window = cfg.rr_window;
  opts.bleu.smoothing = cfg.bleu_smoothing;
  opts.bleu.sentence_level = cfg.bleu_sentence;

  std::vector<metrics::MetricReport> reports;
  for (const auto& p : paths) {
    const auto gens = read_generations(p);
    files.in("generations", p);
    std::vector<metrics::Sentence> outputs, candidates;
    std::vector<std::vector<metrics::Sentence>> refs;
    for (const auto& g : gens) {
      outputs.push_back(text::split_words(g.raw));
      candidates.push_back(metrics::tokenize(g.cn));
      refs.push_back({metrics::tokenize(g.reference)});
    }
    reports.push_back(metrics::evaluate(outputs, candidates, refs, opts));
  }
  if (reports.size() > 1) {
    const auto scores = metrics::composite_score(reports);
    for (std::size_t i = 0; i < reports.size(); ++i) reports[i].composite = scores[i];
  } else {
    // Every metric has a zero range over one run.
    reports[0].composite = 0.5;
  }
  std::string lines;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    auto j = nlohmann::ordered_json::parse(metrics::to_json_line(reports[i]));
    ojson line;
    line["run"] = paths[i].generic_string();
    for (auto& [k, v] : j.items()) line[k] = v;
    lines += line.dump() + "\n";
    log << paths[i].string() << '\n' << metrics::to_table(reports[i]);
  }
  write_file(out / "metrics.jsonl", lines);
  files.out("metrics", out / "metrics.jsonl");
  write_manifest(cfg, "evaluate", files);
  return reports;
}

void analyze(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  FileLog files;
  const fs::path out(cfg.paths.output);
  fs::create_directories(out);
  const auto m = load_model(cfg, files);
  const auto lex = load_lexicon(cfg, files, log);
  const auto input = default_input(cfg, "generations.jsonl");
  const auto gens = read_generations(input);
  files.in("generations", input);

  std::vector<model::AttentionTrace> traces;
  std::vector<attnstats::ReceivedInput> received;
  std::vector<double> cn_entropy, specificity;
  std::vector<std::vector<std::string>> heat_tokens;
  std::vector<std::string> heat_ids;
  traces.reserve(gens.size());
  std::size_t skipped = 0;
  for (const auto& g : gens) {
    auto ids = g.tokens.empty() ? m.vocab.encode(g.raw) : g.tokens;
    if (ids.size() > m.params.config.max_seq_len) ids.resize(m.params.config.max_seq_len);
    const auto words = m.vocab.words(ids);
    const auto hs_tag = std::find(words.begin(), words.end(), text::kHateSpeechTag);
    const auto cn_tag = std::find(words.begin(), words.end(), text::kCounterNarrativeTag);
    if (hs_tag == words.end() || cn_tag == words.end() || cn_tag < hs_tag) {
      ++skipped;
      continue;
    }
    const auto cn_end = std::find(cn_tag + 1, words.end(), text::kEndOfText);
    const attnstats::Span hs{static_cast<std::size_t>(hs_tag - words.begin()) + 1,
                             static_cast<std::size_t>(cn_tag - words.begin())};
    const attnstats::Span cn{hs.end + 1, static_cast<std::size_t>(cn_end - words.begin())};
    if (hs.empty() || cn.empty()) {
      ++skipped;
      continue;
    }
    traces.push_back(model::forward(m.params, ids).trace);
    const auto mask = data::relevant_mask(words, g.targets, lex);
    attnstats::ReceivedInput in;
    in.trace = &traces.back();
    in.relevant.assign(mask.begin() + static_cast<std::ptrdiff_t>(hs.begin),
                       mask.begin() + static_cast<std::ptrdiff_t>(hs.end));
    in.hs = hs;
    in.steps = cn;
    received.push_back(std::move(in));
    cn_entropy.push_back(attnstats::expressed_entropy(traces.back(), cn).mean);
    specificity.push_back(g.specificity
                              ? *g.specificity
                              : metrics::rouge_l(metrics::tokenize(g.cn), metrics::tokenize(g.reference)));
    if (heat_ids.size() < cfg.heatmaps) {
      heat_ids.push_back(g.id);
      heat_tokens.push_back(words);
    }
  }
  if (received.empty()) throw InvalidArgument("analyze: no generation with both a prompt and a counter narrative");
  log << "analysing " << received.size() << " generations (" << skipped << " skipped)\n";

  const auto stats = attnstats::received_stats(received, cfg.micro);

  // Token-level samples per category for the t tests.
  std::map<bool, std::vector<double>> att, ent, sd;
  for (const auto& in : received) {
    for (std::size_t k = 0; k < in.hs.size(); ++k) {
      const auto prof = attnstats::received_profile(*in.trace, in.hs.begin + k, in.steps);
      double mean = 0.0;
      for (double v : prof) mean += v;
      mean /= static_cast<double>(prof.size());
      double var = 0.0, total = 0.0, h = 0.0;
      for (double v : prof) {
        var += (v - mean) * (v - mean);
        total += v;
      }
      for (double v : prof) {
        if (v > 0.0) h -= (v / total) * std::log(v / total);
      }
      const bool rel = in.relevant[k];
      att[rel].push_back(mean);
      ent[rel].push_back(h);
      sd[rel].push_back(std::sqrt(var / static_cast<double>(prof.size())));
    }
  }
  auto t_json = [](const std::vector<double>& a, const std::vector<double>& b) -> ojson {
    try {
      const auto t = attnstats::t_test_two_sided(a, b);
      return {{"t", t.t}, {"p", t.p}, {"dof", t.dof}};
    } catch (const InvalidArgument& e) {
      return {{"error", e.what()}};
    }
  };

  ojson j;
  j["generations"] = received.size();
  j["skipped"] = skipped;
  j["averaging"] = cfg.micro ? "micro" : "macro";
  j["relevant"] = stats_json(stats.relevant);
  j["normal"] = stats_json(stats.normal);
  j["t_test"] = {{"mean_attention", t_json(att[true], att[false])},
                 {"received_entropy", t_json(ent[true], ent[false])},
                 {"std", t_json(sd[true], sd[false])}};
  double mean_entropy = 0.0;
  for (double e : cn_entropy) mean_entropy += e;
  j["expressed_entropy_mean"] = mean_entropy / static_cast<double>(cn_entropy.size());
  try {
    const double rho = attnstats::spearman(cn_entropy, specificity);
    const double p = attnstats::permutation_pvalue(
        cn_entropy, specificity,
        [](std::span<const double> x, std::span<const double> y) { return attnstats::spearman(x, y); },
        cfg.n_perm, cfg.seed);
    j["correlation"] = {{"statistic", "spearman"}, {"with", "specificity"}, {"rho", rho},
                        {"p", p}, {"n_perm", cfg.n_perm}};
  } catch (const InvalidArgument& e) {
    j["correlation"] = {{"error", e.what()}};
  }
  write_file(out / "analysis.json", j.dump(2) + "\n");
  files.out("analysis", out / "analysis.json");

  std::string csv = "category,tokens,mean_attention,mean_received_entropy,mean_std\n";
  for (const auto& [name, s] : {std::pair{"relevant", &stats.relevant}, std::pair{"normal", &stats.normal}}) {
    if (!*s) continue;
    csv += std::string(name) + "," + std::to_string((*s)->tokens) + "," + fmt((*s)->mean_attention) +
           "," + fmt((*s)->mean_received_entropy) + "," + fmt((*s)->mean_std) + "\n";
  }
  write_file(out / "category_stats.csv", csv);
  files.out("category_stats", out / "category_stats.csv");

  for (std::size_t i = 0; i < heat_ids.size(); ++i) {
    const fs::path p = out / "heatmaps" / (safe_name(heat_ids[i]) + ".csv");
    std::ostringstream os;
    attnstats::write_heatmap_csv(os, traces[i], heat_tokens[i]);
    write_file(p, os.str());
    files.out("heatmap", p);
  }
  log << "relevant: "
      << (stats.relevant ? fmt(stats.relevant->mean_attention) : std::string("n/a"))
      << ", normal: " << (stats.normal ? fmt(stats.normal->mean_attention) : std::string("n/a"))
      << " mean received attention\n";
  write_manifest(cfg, "analyze", files);
}

fs::path make_toy_corpus(const RunConfig& cfg, const std::string& out, std::ostream& log) {
  FileLog files;
  const fs::path path = out.empty() ? fs::path(cfg.paths.output) / "toy_corpus.jsonl" : fs::path(out);
  const auto lex = load_lexicon(cfg, files, log);
  const auto records = data::make_toy_corpus(cfg.toy_pairs, cfg.seed, lex);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  data::write_jsonl(path, records);
  files.out("corpus", path);
  log << "wrote " << records.size() << " pairs to " << path.string() << '\n';
  fs::create_directories(cfg.paths.output);
  write_manifest(cfg, "make-toy-corpus", files);
  return path;
}

}  // namespace attnreg::pipeline
