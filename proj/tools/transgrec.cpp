#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>

#include "CLI11.hpp"
#include "json.hpp"
#include "transgrec/error.hpp"
#include "transgrec/eval.hpp"
#include "transgrec/io.hpp"
#include "transgrec/pipeline.hpp"
#include "transgrec/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace transgrec;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

void check_variant(const std::optional<std::string>& requested, Variant actual, const std::string& what) {
  if (!requested) return;
  const Variant want = parse_variant(*requested);
  if (want != actual) {
    throw InvalidInput(std::string("variant mismatch: requested ") + variant_tag(want) + " but " + what +
                       " is " + variant_tag(actual));
  }
}

struct PreprocessArgs {
  std::string annotations, videos, out;
  std::optional<std::string> features;
  PreprocessOptions opts;
};

void add_split_flags(CLI::App* cmd, PreprocessOptions& o) {
  cmd->add_option("--threshold", o.threshold, "overlap threshold theta in (0,1]")->capture_default_str();
  cmd->add_option("--min-records", o.split.min_records, "records needed to hold out a test video")
      ->capture_default_str();
  cmd->add_option("--validation-fraction", o.split.validation_fraction, "share of remaining edges")
      ->capture_default_str();
  cmd->add_option("--seed", o.split.seed, "split seed")->capture_default_str();
}

struct TrainArgs {
  std::string data;
  std::optional<std::string> variant, config, name;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::size_t threads = 1;
};

int run_train(const TrainArgs& a) {
  const DataLayout layout{a.data};
  json cj = json::object();
  if (a.config) cj = config_json(read_text(*a.config));
  if (a.variant && cj.contains("variant")) {
    const Variant want = parse_variant(*a.variant);
    const Variant have = parse_variant(cj.at("variant").get<std::string>());
    if (want != have) {
      throw InvalidInput(std::string("variant mismatch: --variant ") + variant_tag(want) + " but config says " +
                         variant_tag(have));
    }
  }
  if (a.variant) cj["variant"] = *a.variant;
  if (a.seed) cj["seed"] = *a.seed;
  if (a.epochs) cj["max_epochs"] = *a.epochs;
  cj["threads"] = a.threads;
  const TrainConfig cfg = TrainConfig::from_json(cj);

  const Dataset ds = load_dataset(layout);
  const TrainingSet set(ds.corpus, ds.split, ds.features);
  const std::string name = a.name.value_or(std::string("model_") + variant_tag(cfg.variant));
  const fs::path ckpt_path = layout.checkpoints_dir() / (name + ".tgck");
  try {
    const TrainResult r = train(set, cfg);
    save_checkpoint(r.checkpoint, ckpt_path.string());
    write_file(layout.reports_dir() / (name + ".train.jsonl"), r.report.to_jsonl());
    std::cout << "variant " << variant_tag(cfg.variant) << ", " << r.report.epochs.size() << " epochs in "
              << std::fixed << std::setprecision(1) << r.report.wall_seconds << " s\n"
              << "best epoch " << r.report.best_epoch << ", validation NDCG@5 " << std::setprecision(4)
              << r.report.best_val_ndcg5 << '\n'
              << "checkpoint " << ckpt_path.string() << '\n';
  } catch (const TrainingDiverged& e) {
    const fs::path last = layout.checkpoints_dir() / (name + ".last_good.tgck");
    save_checkpoint(e.last_good, last.string());
    std::cerr << "training diverged at epoch " << e.epoch << ", batch " << e.batch
              << "; last good checkpoint written to " << last.string() << '\n';
    throw;
  }
  return kOk;
}

struct EvalArgs {
  std::string data, checkpoint, split = "test";
  std::optional<std::string> variant, features, name;
  std::size_t threads = 1;
  std::size_t sample = 1000;
  std::uint64_t seed = 0;
  std::vector<std::size_t> buckets{8, 16};
};

int run_evaluate(const EvalArgs& a) {
  const DataLayout layout{a.data};
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  check_variant(a.variant, ckpt.variant, "checkpoint '" + a.checkpoint + "'");
  Dataset ds = load_dataset(layout);
  if (a.features) ds.features = read_features(*a.features);
  const auto records = a.split == "test" ? test_records(ds.corpus, ds.split)
                                         : validation_records(ds.corpus, ds.split);
  const InductiveScorer scorer(ckpt, ds.features);
  const auto runs = score_records(ds.corpus, records, scorer, a.threads);
  const MetricSummary overall = summarize(runs, 5);
  const RatingGraph train_graph = ds.corpus.graph_from(ds.split.train);
  const auto buckets = sparsity_buckets(runs, train_graph, a.buckets);
  const DistanceReport dist = embedding_distance_report(ckpt, ds.features, a.sample, a.seed);

  const std::string name = a.name.value_or(fs::path(a.checkpoint).stem().string() + "." + a.split);
  json report = metrics_report(overall, buckets, dist);
  report["checkpoint"] = {{"variant", variant_tag(ckpt.variant)}, {"epoch", ckpt.epoch}, {"seed", ckpt.seed}};
  report["split"] = a.split;
  write_file(layout.reports_dir() / (name + ".metrics.json"), report.dump(2) + "\n");
  write_file(layout.reports_dir() / (name + ".metrics.csv"), metrics_csv(overall, buckets, dist));

  std::cout << std::fixed << std::setprecision(4) << a.split << " records " << overall.records
            << " (excluded " << overall.excluded << ")\n"
            << "MAP " << overall.map << "  NMSD " << overall.nmsd << '\n';
  for (std::size_t n = 1; n <= overall.topn.size(); ++n) {
    const auto& t = overall.topn[n - 1];
    std::cout << "N=" << n << "  HR " << t.hr << "  Recall " << t.recall << "  NDCG " << t.ndcg << '\n';
  }
  return kOk;
}

struct PredictArgs {
  std::string data, checkpoint, user, video;
  std::optional<std::string> variant, features;
  std::size_t topn = 5;
  bool json_out = false;
};

int run_predict(const PredictArgs& a) {
  const DataLayout layout{a.data};
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  check_variant(a.variant, ckpt.variant, "checkpoint '" + a.checkpoint + "'");
  Dataset ds = load_dataset(layout);
  if (a.features) ds.features = read_features(*a.features);
  const auto user = ds.corpus.find_user(a.user);
  if (!user) throw InvalidInput("unknown user '" + a.user + "'");
  const auto video = ds.corpus.find_video(a.video);
  if (!video) throw InvalidInput("unknown video '" + a.video + "'");

  std::set<std::uint32_t> rated;
  for (const auto& e : ds.split.train) {
    if (e.user == *user) rated.insert(e.segment);
  }
  const Video& v = ds.corpus.videos[*video];
  std::vector<std::uint32_t> candidates;
  std::vector<std::string> keys;
  for (std::uint32_t k = 0; k < v.segment_count; ++k) {
    const std::uint32_t s = v.first_segment + k;
    if (rated.count(s)) continue;
    candidates.push_back(s);
    keys.push_back(ds.corpus.segment_key(s));
  }

  const InductiveScorer scorer(ckpt, ds.features);
  const std::size_t row = scorer.user_row(a.user);
  RankingRun run{*user, *video, candidates, scorer.score(row, keys), {}};
  // Segments of videos in the training graph use their graph embeddings.
  std::unordered_map<std::string, std::size_t> item_row;
  for (std::size_t i = 0; i < ckpt.items.size(); ++i) item_row.emplace(ckpt.items[i], i);
  std::vector<std::string> source(keys.size(), "transfer");
  for (std::size_t c = 0; c < keys.size(); ++c) {
    auto it = item_row.find(keys[c]);
    if (it == item_row.end()) continue;
    run.scores[c] = predict<float>(scorer.user_embedding(row), ckpt.item_final.row(it->second));
    source[c] = "graph";
  }
  const auto order = ranking_order(run);
  const std::size_t n = std::min(a.topn, order.size());
  if (a.json_out) {
    json out = json::array();
    for (std::size_t r = 0; r < n; ++r) {
      const auto c = order[r];
      out.push_back({{"rank", r + 1}, {"segment", keys[c]}, {"score", run.scores[c]}, {"source", source[c]}});
    }
    std::cout << out.dump(2) << '\n';
  } else {
    std::cout << "rank,segment,score,source\n" << std::setprecision(6);
    for (std::size_t r = 0; r < n; ++r) {
      const auto c = order[r];
      std::cout << r + 1 << ',' << keys[c] << ',' << run.scores[c] << ',' << source[c] << '\n';
    }
  }
  return kOk;
}

int run_report(const std::string& data) {
  const DataLayout layout{data};
  if (fs::exists(layout.graph_json())) {
    Corpus corpus;
    Split split;
    read_graph_dump(layout.graph_json().string(), corpus, split);
    std::cout << summarize_split(corpus, split).table();
  }
  if (!fs::exists(layout.reports_dir())) return kOk;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(layout.reports_dir())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::cout << std::fixed << std::setprecision(4);
  for (const auto& p : files) {
    const std::string fname = p.filename().string();
    if (fname.ends_with(".train.jsonl")) {
      std::ifstream in(p);
      std::string line, last;
      while (std::getline(in, line)) {
        if (!line.empty()) last = line;
      }
      const json s = json::parse(last);
      std::cout << '\n' << fname << ": " << s.at("epochs_run").get<std::size_t>() << " epochs, best epoch "
                << s.at("best_epoch").get<std::size_t>() << ", validation NDCG@5 "
                << s.at("best_val_ndcg5").get<double>() << '\n';
    } else if (fname.ends_with(".metrics.json")) {
      const json r = json::parse(read_text(p.string()));
      const auto& o = r.at("overall");
      std::cout << '\n' << fname << ": MAP " << o.at("map").get<double>() << ", NMSD "
                << o.at("nmsd").get<double>() << '\n';
      for (const auto& t : o.at("topn")) {
        std::cout << "  N=" << t.at("n").get<int>() << "  HR " << t.at("hr").get<double>() << "  Recall "
                  << t.at("recall").get<double>() << "  NDCG " << t.at("ndcg").get<double>() << '\n';
      }
      for (const auto& b : r.at("sparsity")) {
        std::cout << "  users " << b.at("bucket").get<std::string>() << ": ";
        if (b.at("metrics").is_null()) {
          std::cout << "absent\n";
        } else {
          std::cout << b.at("users").get<std::size_t>() << " users, MAP "
                    << b.at("metrics").at("map").get<double>() << ", NDCG@5 "
                    << b.at("metrics").at("topn").at(4).at("ndcg").get<double>() << '\n';
        }
      }
      if (!r.at("embedding_distance").is_null()) {
        const auto& d = r.at("embedding_distance");
        std::cout << "  d(v0,v) " << d.at("fused_to_graph").get<double>() << "  d(v0,v_hat) "
                  << d.at("fused_to_transfer").get<double>() << "  d(v_hat,v) "
                  << d.at("transfer_to_graph").get<double>() << '\n';
      }
    }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TransGRec: graph recommender with inductive cold-start segment ranking"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->capture_default_str();

  PreprocessArgs pre;
  auto* cmd_pre = app.add_subcommand("preprocess", "segment videos, label positives, split, write graph/");
  cmd_pre->add_option("--annotations", pre.annotations, "annotations CSV")->required();
  cmd_pre->add_option("--videos", pre.videos, "video_id,duration_seconds CSV")->required();
  cmd_pre->add_option("--features", pre.features, "segment features (CSV or CRFS binary)");
  cmd_pre->add_option("--window", pre.opts.window, "segment length in seconds")->capture_default_str();
  add_split_flags(cmd_pre, pre.opts);
  cmd_pre->add_option("--out", pre.out, "output directory")->required();

  SynthOptions syn;
  PreprocessOptions syn_pre;
  std::string syn_out;
  auto* cmd_syn = app.add_subcommand("synth", "generate a clustered synthetic corpus and preprocess it");
  cmd_syn->add_option("--users", syn.users)->capture_default_str();
  cmd_syn->add_option("--videos", syn.videos)->capture_default_str();
  cmd_syn->add_option("--segments-per-video", syn.segments_per_video)->capture_default_str();
  cmd_syn->add_option("--clusters", syn.clusters)->capture_default_str();
  cmd_syn->add_option("--feature-dim", syn.feature_dim)->capture_default_str();
  cmd_syn->add_option("--noise", syn.noise, "feature noise standard deviation")->capture_default_str();
  cmd_syn->add_option("--seed", syn.seed)->capture_default_str();
  cmd_syn->add_option("--out", syn_out, "output directory")->required();

  TrainArgs tr;
  auto* cmd_train = app.add_subcommand("train", "train a model on a preprocessed directory");
  cmd_train->add_option("--data", tr.data, "directory written by preprocess or synth")->required();
  cmd_train->add_option("--variant", tr.variant, "E or A");
  cmd_train->add_option("--config", tr.config, "JSON or key=value config file");
  cmd_train->add_option("--seed", tr.seed, "overrides the config seed");
  cmd_train->add_option("--epochs", tr.epochs, "overrides max_epochs");
  cmd_train->add_option("--name", tr.name, "output name (default model_<variant>)");
  cmd_train->add_option("--threads", tr.threads, "validation scoring threads")->capture_default_str();

  EvalArgs ev;
  auto* cmd_eval = app.add_subcommand("evaluate", "rank held-out candidates and write metrics");
  cmd_eval->add_option("--data", ev.data)->required();
  cmd_eval->add_option("--checkpoint", ev.checkpoint)->required();
  cmd_eval->add_option("--split", ev.split)->check(CLI::IsMember({"test", "validation"}))->capture_default_str();
  cmd_eval->add_option("--variant", ev.variant, "expected checkpoint variant");
  cmd_eval->add_option("--features", ev.features, "override the feature file");
  cmd_eval->add_option("--name", ev.name, "report name");
  cmd_eval->add_option("--threads", ev.threads)->capture_default_str();
  cmd_eval->add_option("--sample", ev.sample, "items for the embedding distance report")->capture_default_str();
  cmd_eval->add_option("--seed", ev.seed, "sampling seed for the distance report")->capture_default_str();
  cmd_eval->add_option("--buckets", ev.buckets, "user degree bucket edges")->capture_default_str();

  PredictArgs pr;
  auto* cmd_pred = app.add_subcommand("predict", "rank the segments of one video for one user");
  cmd_pred->add_option("--data", pr.data)->required();
  cmd_pred->add_option("--checkpoint", pr.checkpoint)->required();
  cmd_pred->add_option("--user", pr.user)->required();
  cmd_pred->add_option("--video", pr.video)->required();
  cmd_pred->add_option("--topn", pr.topn)->check(CLI::PositiveNumber)->capture_default_str();
  cmd_pred->add_option("--variant", pr.variant, "expected checkpoint variant");
  cmd_pred->add_option("--features", pr.features, "override the feature file");
  cmd_pred->add_flag("--json", pr.json_out, "JSON output");

  std::string rep_data;
  auto* cmd_rep = app.add_subcommand("report", "summarize the dataset and existing reports");
  cmd_rep->add_option("--data", rep_data)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  spdlog::set_level(spdlog::level::from_str(log_level));
  try {
    if (*cmd_pre) {
      std::cout << preprocess(pre.annotations, pre.videos, pre.features, pre.opts, DataLayout{pre.out}).table();
    } else if (*cmd_syn) {
      syn_pre.split.seed = syn.seed;
      std::cout << write_synth(syn, syn_pre, DataLayout{syn_out}).table();
    } else if (*cmd_train) {
      return run_train(tr);
    } else if (*cmd_eval) {
      return run_evaluate(ev);
    } else if (*cmd_pred) {
      return run_predict(pr);
    } else if (*cmd_rep) {
      return run_report(rep_data);
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
