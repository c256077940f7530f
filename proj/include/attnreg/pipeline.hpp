#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "attnreg/config.hpp"
#include "attnreg/metrics.hpp"

namespace attnreg::pipeline {

// SHA-1 of "blob <size>\0" + content, as git computes object ids.
std::string git_blob_sha1(std::string_view content);
std::string file_sha1(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

std::filesystem::path checkpoint_path(const RunConfig& cfg);
std::filesystem::path vocab_path(const std::filesystem::path& checkpoint);

// Every command logs progress to `log`, writes its files under
// cfg.paths.output and finishes with manifest-<command>.json listing the
// resolved config, seeds and content hashes of inputs and outputs.

// Splits the dataset, trains, writes train/dev/test.jsonl, history.jsonl,
// the checkpoint and its vocabulary.
void train(const RunConfig& cfg, std::ostream& log);

// One line per prompt in generations.jsonl.
void generate(const RunConfig& cfg, std::ostream& log);

// Metrics of one or more generation files (default <output>/generations.jsonl)
// into metrics.jsonl, one line per file. Composite scores compare the files;
// a single file scores 0.5.
std::vector<metrics::MetricReport> evaluate(const RunConfig& cfg,
                                            const std::vector<std::string>& inputs,
                                            std::ostream& log);

// Attention statistics of the generations: analysis.json, category_stats.csv
// and heatmaps/<id>.csv.
void analyze(const RunConfig& cfg, std::ostream& log);

// Writes cfg.toy_pairs templated pairs to `out` (default <output>/toy_corpus.jsonl).
std::filesystem::path make_toy_corpus(const RunConfig& cfg, const std::string& out,
                                      std::ostream& log);

}  // namespace attnreg::pipeline
