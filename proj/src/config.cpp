#include "attnreg/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>

#include "attnreg/error.hpp"

namespace attnreg {
namespace {

using json = nlohmann::json;

template <typename T>
T as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ParseError("");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ParseError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
        throw ParseError("");
      }
    } else {
      if (!v.is_number()) throw ParseError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw ParseError("config key '" + key + "' has the wrong type");
  }
}

using Setter = std::function<void(RunConfig&, const json&, const std::string&)>;

template <typename T>
Setter field(T RunConfig::*member) {
  return [member](RunConfig& c, const json& v, const std::string& k) { c.*member = as<T>(v, k); };
}

template <typename Outer, typename T>
Setter nested(Outer RunConfig::*outer, T Outer::*member) {
  return [outer, member](RunConfig& c, const json& v, const std::string& k) {
    (c.*outer).*member = as<T>(v, k);
  };
}

const std::map<std::string, Setter>& setters() {
  using M = model::ModelConfig;
  using T = model::TrainConfig;
  using R = reg::RegConfig;
  using D = decode::DecodeConfig;
  static const std::map<std::string, Setter> table = {
      {"n_layers", nested(&RunConfig::model, &M::n_layers)},
      {"n_heads", nested(&RunConfig::model, &M::n_heads)},
      {"d_model", nested(&RunConfig::model, &M::d_model)},
      {"d_ff", nested(&RunConfig::model, &M::d_ff)},
      {"max_seq_len", nested(&RunConfig::model, &M::max_seq_len)},
      {"batch_size", nested(&RunConfig::train, &T::batch_size)},
      {"epochs", nested(&RunConfig::train, &T::epochs)},
      {"learning_rate", nested(&RunConfig::train, &T::learning_rate)},
      {"warmup_ratio", nested(&RunConfig::train, &T::warmup_ratio)},
      {"reg",
       [](RunConfig& c, const json& v, const std::string& k) {
         c.reg.kind = reg::parse_reg_kind(as<std::string>(v, k));
       }},
      {"alpha", nested(&RunConfig::reg, &R::alpha)},
      {"share", nested(&RunConfig::reg, &R::share)},
      {"include_special", nested(&RunConfig::reg, &R::include_special_tokens)},
      {"cn_only", nested(&RunConfig::reg, &R::cn_only)},
      {"per_head_entropy", nested(&RunConfig::reg, &R::per_head_entropy)},
      {"resoftmax", nested(&RunConfig::reg, &R::resoftmax)},
      {"decode",
       [](RunConfig& c, const json& v, const std::string& k) {
         c.decode.strategy = decode::parse_strategy(as<std::string>(v, k));
       }},
      {"beams", nested(&RunConfig::decode, &D::beams)},
      {"rep_penalty", nested(&RunConfig::decode, &D::repetition_penalty)},
      {"k", nested(&RunConfig::decode, &D::k)},
      {"p", nested(&RunConfig::decode, &D::p)},
      {"penalty_alpha", nested(&RunConfig::decode, &D::penalty_alpha)},
      {"max_new_tokens", nested(&RunConfig::decode, &D::max_new_tokens)},
      {"dataset", nested(&RunConfig::paths, &Paths::dataset)},
      {"lexicon", nested(&RunConfig::paths, &Paths::lexicon)},
      {"checkpoint", nested(&RunConfig::paths, &Paths::checkpoint)},
      {"output", nested(&RunConfig::paths, &Paths::output)},
      {"input", nested(&RunConfig::paths, &Paths::input)},
      {"seed",
       [](RunConfig& c, const json& v, const std::string& k) {
         c.apply_seed(as<std::uint64_t>(v, k));
       }},
      {"loto", field(&RunConfig::loto)},
      {"loto_cap", field(&RunConfig::loto_cap)},
      {"min_count", field(&RunConfig::min_count)},
      {"limit", field(&RunConfig::limit)},
      {"save_traces", field(&RunConfig::save_traces)},
      {"rr_window", field(&RunConfig::rr_window)},
      {"bleu_smoothing", field(&RunConfig::bleu_smoothing)},
      {"bleu_sentence", field(&RunConfig::bleu_sentence)},
      {"micro", field(&RunConfig::micro)},
      {"n_perm", field(&RunConfig::n_perm)},
      {"heatmaps", field(&RunConfig::heatmaps)},
      {"toy_pairs", field(&RunConfig::toy_pairs)},
  };
  return table;
}

}  // namespace

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  model.seed = s;
  train.seed = s;
  decode.seed = s;
}

void RunConfig::validate() const {
  model::ModelConfig m = model;
  if (m.vocab_size == 0) m.vocab_size = 1;  // filled in from the data later
  m.validate();
  train.validate();
  reg.validate();
  decode.validate();
  if (rr_window == 0) throw InvalidArgument("rr_window must be >= 1");
  if (n_perm < 100) throw InvalidArgument("n_perm must be >= 100");
  if (paths.output.empty()) throw InvalidArgument("output directory must be set");
}

void apply_json(RunConfig& cfg, const json& j) {
  if (!j.is_object()) throw ParseError("config must be a JSON object");
  const auto& table = setters();
  // "seed" first so that no later key is overwritten by it.
  if (j.contains("seed")) table.at("seed")(cfg, j["seed"], "seed");
  for (const auto& [key, value] : j.items()) {
    if (key == "seed") continue;
    auto it = table.find(key);
    if (it == table.end()) throw ParseError("unknown config key '" + key + "'");
    it->second(cfg, value, key);
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  RunConfig cfg;
  apply_json(cfg, j);
  return cfg;
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["n_layers"] = c.model.n_layers;
  j["n_heads"] = c.model.n_heads;
  j["d_model"] = c.model.d_model;
  j["d_ff"] = c.model.d_ff;
  j["max_seq_len"] = c.model.max_seq_len;
  j["batch_size"] = c.train.batch_size;
  j["epochs"] = c.train.epochs;
  j["learning_rate"] = c.train.learning_rate;
  j["warmup_ratio"] = c.train.warmup_ratio;
  j["reg"] = reg::to_string(c.reg.kind);
  j["alpha"] = c.reg.alpha;
  j["share"] = c.reg.share;
  j["include_special"] = c.reg.include_special_tokens;
  j["cn_only"] = c.reg.cn_only;
  j["per_head_entropy"] = c.reg.per_head_entropy;
  j["resoftmax"] = c.reg.resoftmax;
  j["decode"] = decode::to_string(c.decode.strategy);
  j["beams"] = c.decode.beams;
  j["rep_penalty"] = c.decode.repetition_penalty;
  j["k"] = c.decode.k;
  j["p"] = c.decode.p;
  j["penalty_alpha"] = c.decode.penalty_alpha;
  j["max_new_tokens"] = c.decode.max_new_tokens;
  j["dataset"] = c.paths.dataset;
  j["lexicon"] = c.paths.lexicon;
  j["checkpoint"] = c.paths.checkpoint;
  j["output"] = c.paths.output;
  j["input"] = c.paths.input;
  j["seed"] = c.seed;
  j["loto"] = c.loto;
  j["loto_cap"] = c.loto_cap;
  j["min_count"] = c.min_count;
  j["limit"] = c.limit;
  j["save_traces"] = c.save_traces;
  j["rr_window"] = c.rr_window;
  j["bleu_smoothing"] = c.bleu_smoothing;
  j["bleu_sentence"] = c.bleu_sentence;
  j["micro"] = c.micro;
  j["n_perm"] = c.n_perm;
  j["heatmaps"] = c.heatmaps;
  j["toy_pairs"] = c.toy_pairs;
  return j;
}

std::filesystem::path data_dir() {
  if (const char* env = std::getenv("ATTNREG_DATA_DIR"); env && *env) return env;
  return "data";
}

std::filesystem::path resolve_input(const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_absolute() || std::filesystem::exists(p)) return p;
  const auto alt = data_dir() / p;
  return std::filesystem::exists(alt) ? alt : p;
}

}  // namespace attnreg
