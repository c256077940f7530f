#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "attnreg/data.hpp"
#include "attnreg/decoding.hpp"
#include "attnreg/model.hpp"
#include "attnreg/regularizers.hpp"
#include "attnreg/trainer.hpp"

namespace attnreg {

struct Paths {
  std::string dataset;     // JSONL pairs; split into train/dev/test by `train`
  std::string lexicon;     // empty: bundled lexicon
  std::string checkpoint;  // empty: <output>/model.ckpt
  std::string output = "run";
  std::string input;       // generate: HS file (default <output>/test.jsonl);
                           // evaluate/analyze: generations (default <output>/generations.jsonl)
};

struct RunConfig {
  model::ModelConfig model{.n_layers = 2, .n_heads = 2, .d_model = 32, .d_ff = 64,
                           .vocab_size = 0, .max_seq_len = 64, .seed = 0};
  model::TrainConfig train;
  reg::RegConfig reg;
  decode::DecodeConfig decode;
  Paths paths;

  std::uint64_t seed = 0;
  std::string loto;  // held-out target; empty: in-target split
  std::size_t loto_cap = data::kDefaultLotoCap;
  std::size_t min_count = 1;
  std::size_t limit = 0;  // generate at most this many prompts, 0 = all
  bool save_traces = false;

  std::size_t rr_window = 1000;
  bool bleu_smoothing = false;
  bool bleu_sentence = false;

  bool micro = false;
  std::size_t n_perm = 10000;
  std::size_t heatmaps = 3;

  std::size_t toy_pairs = 1000;

  // Spreads `seed` into the model, training and decoding seeds.
  void apply_seed(std::uint64_t s);
  void validate() const;
};

// Flat JSON object whose keys mirror the fields above; unknown keys and
// type mismatches raise ParseError.
void apply_json(RunConfig& cfg, const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::ordered_json to_json(const RunConfig& cfg);

// Directory searched for relative inputs that do not exist as given:
// $ATTNREG_DATA_DIR when set, else "data".
std::filesystem::path data_dir();
std::filesystem::path resolve_input(const std::string& path);

}  // namespace attnreg
