#include "transgrec/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <sstream>

#include "transgrec/error.hpp"
#include "transgrec/io.hpp"

namespace transgrec {

namespace fs = std::filesystem;

std::string PreprocessSummary::table() const {
  std::ostringstream os;
  os << "users           " << users << '\n'
     << "videos          " << videos << '\n'
     << "segments        " << segments << '\n'
     << "graph segments  " << graph_segments << '\n'
     << "records         " << records << '\n'
     << "train           " << train << '\n'
     << "validation      " << validation << '\n'
     << "test records    " << test_records << " (" << test_edges << " user-segment records)\n";
  return os.str();
}

PreprocessSummary summarize_split(const Corpus& corpus, const Split& split) {
  PreprocessSummary s;
  s.users = corpus.users.size();
  s.videos = corpus.videos.size();
  s.segments = corpus.segments.size();
  s.graph_segments = corpus.graph_from(split.train).num_items();
  s.records = corpus.edges.size();
  s.train = split.train.size();
  s.validation = split.validation.size();
  s.test_records = split.test.size();
  for (const auto& t : split.test) s.test_edges += t.positives.size();
  return s;
}

namespace {

void write_outputs(const Corpus& corpus, const Split& split, const FeatureStore* features,
                   const DataLayout& out) {
  fs::create_directories(out.graph_dir());
  write_graph_dump(corpus, split, out.graph_json().string());
  write_segment_table(corpus, (out.graph_dir() / "segments.csv").string());
  write_split_files(corpus, split, out.graph_dir().string());
  if (!features) return;
  FeatureStore kept(features->dim());
  std::vector<std::string> keys;
  keys.reserve(corpus.segments.size());
  for (std::uint32_t s = 0; s < corpus.segments.size(); ++s) keys.push_back(corpus.segment_key(s));
  const nk::Tensorf rows = features->gather<float>(keys);  // lists every missing key
  for (std::size_t r = 0; r < keys.size(); ++r) kept.insert(keys[r], rows.row(r));
  write_features_binary(kept, out.features().string());
}

PreprocessSummary run(const std::vector<Annotation>& annotations,
                      const std::unordered_map<std::string, double>& durations,
                      const FeatureStore* features, const PreprocessOptions& options,
                      const DataLayout& out) {
  const Corpus corpus = build_corpus(annotations, durations, options.window, options.threshold);
  const Split split = split_leave_last_video(corpus, options.split);
  write_outputs(corpus, split, features, out);
  return summarize_split(corpus, split);
}

}  // namespace

PreprocessSummary preprocess(const std::string& annotations_path, const std::string& videos_path,
                             const std::optional<std::string>& features_path,
                             const PreprocessOptions& options, const DataLayout& out) {
  const auto annotations = read_annotations(annotations_path);
  const auto durations = read_video_durations(videos_path);
  std::optional<FeatureStore> features;
  if (features_path) features = read_features(*features_path);
  return run(annotations, durations, features ? &*features : nullptr, options, out);
}

PreprocessSummary write_synth(const SynthOptions& synth, const PreprocessOptions& options,
                              const DataLayout& out) {
  const SynthData data = generate_synth(synth);
  const fs::path raw = out.root / "raw";
  fs::create_directories(raw);
  write_annotations(data.annotations, (raw / "annotations.csv").string());
  write_video_durations(data.videos, (raw / "videos.csv").string());
  write_features_binary(data.features, (raw / "features.bin").string());
  PreprocessOptions opts = options;
  opts.window = synth.window;
  return preprocess((raw / "annotations.csv").string(), (raw / "videos.csv").string(),
                    (raw / "features.bin").string(), opts, out);
}

Dataset load_dataset(const DataLayout& layout) {
  if (!fs::exists(layout.graph_json())) {
    throw DataError("no graph dump at '" + layout.graph_json().string() + "'; run preprocess first");
  }
  Dataset d;
  read_graph_dump(layout.graph_json().string(), d.corpus, d.split);
  if (!fs::exists(layout.features())) {
    throw MissingFeature("no feature file at '" + layout.features().string() + "'");
  }
  d.features = read_features(layout.features().string());
  return d;
}

}  // namespace transgrec
