#pragma once

// On-disk layout shared by the CLI subcommands:
//   <dir>/graph/        graph.json, segments.csv, train.csv, validation.csv, test.csv, features.bin
//   <dir>/checkpoints/  trained models
//   <dir>/reports/      training logs and metrics

#include <filesystem>
#include <optional>
#include <string>

#include "transgrec/dataset.hpp"
#include "transgrec/features.hpp"
#include "transgrec/synth.hpp"

namespace transgrec {

struct DataLayout {
  std::filesystem::path root;

  std::filesystem::path graph_dir() const { return root / "graph"; }
  std::filesystem::path checkpoints_dir() const { return root / "checkpoints"; }
  std::filesystem::path reports_dir() const { return root / "reports"; }
  std::filesystem::path graph_json() const { return graph_dir() / "graph.json"; }
  std::filesystem::path features() const { return graph_dir() / "features.bin"; }
};

struct PreprocessOptions {
  double window = 5.0;
  double threshold = 0.5;
  SplitOptions split;
};

struct PreprocessSummary {
  std::size_t users = 0;
  std::size_t videos = 0;
  std::size_t segments = 0;
  std::size_t graph_segments = 0;  // segments in the training graph
  std::size_t records = 0;         // distinct user-segment edges
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test_records = 0;
  std::size_t test_edges = 0;

  std::string table() const;
};

/// Builds the corpus and split and writes the graph/ directory. When `features_path` is
/// given, the vectors of every corpus segment are copied to graph/features.bin; a missing
/// vector is an error.
PreprocessSummary preprocess(const std::string& annotations_path, const std::string& videos_path,
                             const std::optional<std::string>& features_path,
                             const PreprocessOptions& options, const DataLayout& out);

PreprocessSummary summarize_split(const Corpus& corpus, const Split& split);

/// Generates a synthetic corpus as raw files under <dir>/raw and preprocesses it into <dir>.
PreprocessSummary write_synth(const SynthOptions& synth, const PreprocessOptions& options,
                              const DataLayout& out);

struct Dataset {
  Corpus corpus;
  Split split;
  FeatureStore features;
};

Dataset load_dataset(const DataLayout& layout);

}  // namespace transgrec
