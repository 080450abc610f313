#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "transgrec/dataset.hpp"
#include "transgrec/error.hpp"
#include "transgrec/eval.hpp"
#include "transgrec/features.hpp"
#include "transgrec/model.hpp"

namespace transgrec {

struct TrainConfig {
  Variant variant = Variant::E;
  ModelConfig model;
  double lambda_reg = 1.0;
  double lambda_t = 1.0;
  double learning_rate = 1e-3;
  std::size_t batch_size = 50;  // positive edges per batch
  std::size_t negatives_per_positive = 10;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  std::size_t threads = 1;  // validation scoring workers

  bool transfer_on_fused = false;  // feed y_i instead of g_i to T during training
  bool joint_target = false;       // let the Euclidean loss reach the graph output too
  bool non_saturating = false;     // generator minimizes -ln D(fake)
  bool bpr_only = false;           // variant E without the transfer term at all

  /// Defaults differ only in depth: K=2 for E, K=1 for A.
  static TrainConfig for_variant(Variant v);

  nlohmann::json to_json() const;
  /// Unknown keys are errors.
  static TrainConfig from_json(const nlohmann::json& j);
  void validate() const;
};

/// JSON object or key=value lines ('#' starts a comment), as a JSON object.
nlohmann::json config_json(const std::string& text);
TrainConfig parse_train_config(const std::string& text);
std::string read_text(const std::string& path);
TrainConfig load_train_config(const std::string& path);

struct EpochStats {
  std::size_t epoch = 0;
  std::size_t batches = 0;
  std::size_t triplets = 0;
  std::size_t skipped_positives = 0;
  double bpr_loss = 0.0;       // mean per triplet
  double transfer_loss = 0.0;  // mean per item (E) or generator loss per pair (A)
  double disc_loss = 0.0;      // A only, mean per pair
  double disc_accuracy = 0.0;  // A only, real-vs-fake accuracy before each D step
  double transfer_error = 0.0; // mean ||T(g_i) - v_i||^2 over graph items after the epoch
  double val_ndcg5 = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double initial_transfer_error = 0.0;
  double initial_val_ndcg5 = 0.0;
  std::size_t best_epoch = 0;  // 0 means the initialization
  double best_val_ndcg5 = 0.0;
  bool early_stopped = false;
  double wall_seconds = 0.0;  // not part of the JSON lines, which must be reproducible

  /// One JSON object per epoch, then a summary line.
  std::string to_jsonl() const;
};

struct TrainResult {
  Checkpoint checkpoint;  // best validation epoch
  TrainReport report;
};

/// Thrown when a loss or gradient turns non-finite; carries the best checkpoint so far.
class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, Checkpoint last_good, std::size_t epoch,
                   std::size_t batch)
      : NumericalError(what), last_good(std::move(last_good)), epoch(epoch), batch(batch) {}
  Checkpoint last_good;
  std::size_t epoch;
  std::size_t batch;
};

struct TrainHooks {
  /// Called after every epoch with the current parameters.
  std::function<void(std::size_t epoch, const ModelParams<float>&)> on_epoch;
};

/// Everything the trainer reads, built once from a corpus and its split.
struct TrainingSet {
  const Corpus* corpus = nullptr;
  const Split* split = nullptr;
  const FeatureStore* features = nullptr;
  RatingGraph graph;                   // train edges only
  nk::Tensorf item_features;           // graph items x F
  std::vector<std::string> item_keys;  // graph item -> segment key
  std::vector<EvalRecord> validation;

  TrainingSet(const Corpus& corpus, const Split& split, const FeatureStore& features);
};

TrainResult train(const TrainingSet& data, const TrainConfig& config, const TrainHooks& hooks = {});

/// Builds a checkpoint from parameters by running value-only propagation over the graph.
Checkpoint make_checkpoint(const TrainingSet& data, const TrainConfig& config,
                           const ModelParams<float>& params, std::size_t epoch);

/// NDCG@5 over validation records through the inductive path.
double validate(const Checkpoint& ckpt, const Corpus& corpus, std::span<const EvalRecord> records,
                const FeatureStore& features, std::size_t threads = 1);

/// Mean ||T(g_i) - v_i||^2 over the given checkpoint's items.
double mean_transfer_error(const Checkpoint& ckpt, const FeatureStore& features);

}  // namespace transgrec
