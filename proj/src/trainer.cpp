#include "transgrec/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "transgrec/adam.hpp"
#include "transgrec/objectives.hpp"

namespace transgrec {

using json = nlohmann::json;
using nk::Tape;
using nk::Tensorf;
using Var = nk::Var<float>;

json TrainConfig::to_json() const {
  return {{"variant", variant_tag(variant)},
          {"dim", model.dim},
          {"layers", model.layers},
          {"pooling", pooling_name(model.pooling)},
          {"activation", activation_name(model.activation)},
          {"transfer_layers", model.transfer_layers},
          {"transfer_hidden", model.transfer_hidden},
          {"disc_layers", model.disc_layers},
          {"disc_hidden", model.disc_hidden},
          {"init_std", model.init_std},
          {"lambda_reg", lambda_reg},
          {"lambda_t", lambda_t},
          {"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"negatives_per_positive", negatives_per_positive},
          {"max_epochs", max_epochs},
          {"patience", patience},
          {"seed", seed},
          {"threads", threads},
          {"transfer_on_fused", transfer_on_fused},
          {"joint_target", joint_target},
          {"non_saturating", non_saturating},
          {"bpr_only", bpr_only}};
}

TrainConfig TrainConfig::for_variant(Variant v) {
  TrainConfig c;
  c.variant = v;
  if (v == Variant::A) c.model.layers = 1;
  return c;
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw InvalidInput("train config must be a JSON object");
  Variant v = Variant::E;
  if (j.contains("variant")) {
    try {
      v = parse_variant(j.at("variant").get<std::string>());
    } catch (const json::exception& e) {
      throw InvalidInput(std::string("bad value for train config key 'variant': ") + e.what());
    }
  }
  TrainConfig c = for_variant(v);
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "variant") c.variant = parse_variant(value.get<std::string>());
      else if (key == "dim" || key == "D") c.model.dim = value.get<std::size_t>();
      else if (key == "layers" || key == "K") c.model.layers = value.get<std::size_t>();
      else if (key == "pooling") c.model.pooling = parse_pooling(value.get<std::string>());
      else if (key == "activation") c.model.activation = parse_activation(value.get<std::string>());
      else if (key == "transfer_layers") c.model.transfer_layers = value.get<std::size_t>();
      else if (key == "transfer_hidden") c.model.transfer_hidden = value.get<std::size_t>();
      else if (key == "disc_layers") c.model.disc_layers = value.get<std::size_t>();
      else if (key == "disc_hidden") c.model.disc_hidden = value.get<std::size_t>();
      else if (key == "init_std") c.model.init_std = value.get<double>();
      else if (key == "lambda_reg") c.lambda_reg = value.get<double>();
      else if (key == "lambda_t") c.lambda_t = value.get<double>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "negatives_per_positive") c.negatives_per_positive = value.get<std::size_t>();
      else if (key == "max_epochs") c.max_epochs = value.get<std::size_t>();
      else if (key == "patience") c.patience = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "threads") c.threads = value.get<std::size_t>();
      else if (key == "transfer_on_fused") c.transfer_on_fused = value.get<bool>();
      else if (key == "joint_target") c.joint_target = value.get<bool>();
      else if (key == "non_saturating") c.non_saturating = value.get<bool>();
      else if (key == "bpr_only") c.bpr_only = value.get<bool>();
      else throw InvalidInput("unknown train config key '" + key + "'");
    } catch (const json::exception& e) {
      throw InvalidInput("bad value for train config key '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw InvalidInput(std::string("train config: ") + msg);
  };
  require(model.dim > 0, "dim must be positive");
  require(model.transfer_layers > 0, "transfer_layers must be positive");
  require(model.disc_layers > 0, "disc_layers must be positive");
  require(model.init_std > 0.0, "init_std must be positive");
  require(lambda_reg >= 0.0 && std::isfinite(lambda_reg), "lambda_reg must be non-negative");
  require(lambda_t >= 0.0 && std::isfinite(lambda_t), "lambda_t must be non-negative");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be positive");
  require(batch_size > 0, "batch_size must be positive");
  require(negatives_per_positive > 0, "negatives_per_positive must be positive");
  require(patience > 0, "patience must be positive");
  require(threads > 0, "threads must be positive");
}

json config_json(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      throw InvalidInput(std::string("malformed JSON config: ") + e.what());
    }
  }
  json j = json::object();
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidInput("config line " + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    json parsed = json::parse(value, nullptr, false);
    j[key] = parsed.is_discarded() ? json(value) : parsed;
  }
  return j;
}

TrainConfig parse_train_config(const std::string& text) { return TrainConfig::from_json(config_json(text)); }

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TrainConfig load_train_config(const std::string& path) { return parse_train_config(read_text(path)); }

std::string TrainReport::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) {
    json j{{"epoch", e.epoch},
           {"batches", e.batches},
           {"triplets", e.triplets},
           {"skipped_positives", e.skipped_positives},
           {"bpr_loss", e.bpr_loss},
           {"transfer_loss", e.transfer_loss},
           {"disc_loss", e.disc_loss},
           {"disc_accuracy", e.disc_accuracy},
           {"transfer_error", e.transfer_error},
           {"val_ndcg5", e.val_ndcg5}};
    out += j.dump() + "\n";
  }
  json s{{"summary", true},
         {"epochs_run", epochs.size()},
         {"best_epoch", best_epoch},
         {"best_val_ndcg5", best_val_ndcg5},
         {"initial_val_ndcg5", initial_val_ndcg5},
         {"initial_transfer_error", initial_transfer_error},
         {"early_stopped", early_stopped}};
  out += s.dump() + "\n";
  return out;
}

TrainingSet::TrainingSet(const Corpus& c, const Split& s, const FeatureStore& f)
    : corpus(&c), split(&s), features(&f), graph(c.graph_from(s.train)) {
  item_keys.reserve(graph.num_items());
  for (std::uint32_t i = 0; i < graph.num_items(); ++i) {
    item_keys.push_back(c.segment_key(graph.segment_of(i)));
  }
  item_features = f.gather<float>(item_keys);
  validation = validation_records(c, s);
}

Checkpoint make_checkpoint(const TrainingSet& data, const TrainConfig& config,
                           const ModelParams<float>& params, std::size_t epoch) {
  const auto state = propagate(data.graph, params.gnn, data.item_features, config.model.gnn_options());
  Checkpoint c;
  c.variant = config.variant;
  c.seed = config.seed;
  c.epoch = epoch;
  c.hyperparameters = config.to_json();
  c.users = data.corpus->users;
  c.items = data.item_keys;
  c.params = params;
  c.user_final = state.user_final();
  c.item_final = state.item_final();
  return c;
}

double validate(const Checkpoint& ckpt, const Corpus& corpus, std::span<const EvalRecord> records,
                const FeatureStore& features, std::size_t threads) {
  const InductiveScorer scorer(ckpt, features);
  const auto runs = score_records(corpus, records, scorer, threads);
  return summarize(runs, 5).ndcg(5);
}

double mean_transfer_error(const Checkpoint& ckpt, const FeatureStore& features) {
  return embedding_distance_report(ckpt, features, ckpt.items.size()).transfer_sq_error;
}

namespace {

using Named = std::vector<std::pair<std::string, Tensorf*>>;

std::vector<Var> flatten(const GnnVars<float>& v) {
  std::vector<Var> out{v.user_emb, v.item_emb, v.reduce};
  for (std::size_t k = 0; k < v.user_weights.size(); ++k) {
    out.push_back(v.user_weights[k]);
    out.push_back(v.item_weights[k]);
  }
  return out;
}

class Optimizer {
 public:
  explicit Optimizer(double lr) { cfg_.learning_rate = lr; }

  void step(const Named& targets, const std::vector<Var>& vars) {
    for (std::size_t p = 0; p < targets.size(); ++p) {
      auto& [name, tensor] = targets[p];
      nk::adam_step(*tensor, vars[p].grad(), states_[name], cfg_, name);
    }
  }

 private:
  nk::AdamConfig cfg_;
  std::map<std::string, nk::AdamState<float>> states_;
};

struct Groups {
  Named gnn, transfer, disc;
};

Groups groups(ModelParams<float>& params) {
  Groups g;
  const std::size_t n_gnn = 3 + 2 * params.gnn.layers();
  const std::size_t n_t = params.transfer.weights.size();
  auto all = params.named();
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (i < n_gnn) g.gnn.push_back(all[i]);
    else if (i < n_gnn + n_t) g.transfer.push_back(all[i]);
    else g.disc.push_back(all[i]);
  }
  return g;
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericalError(std::string("non-finite ") + what);
}

struct BatchStats {
  double bpr = 0.0;
  double transfer = 0.0;
  std::size_t transfer_count = 0;
  double disc = 0.0;
  std::size_t pairs = 0;
  std::size_t correct = 0;
};

class Runner {
 public:
  Runner(const TrainingSet& data, const TrainConfig& cfg, ModelParams<float>& params)
      : data_(data), cfg_(cfg), params_(params), groups_(groups(params)),
        gnn_opt_(cfg.learning_rate), t_opt_(cfg.learning_rate), d_opt_(cfg.learning_rate) {}

  BatchStats step(std::span<const Triplet> triplets) {
    return cfg_.variant == Variant::E ? step_e(triplets) : step_a(triplets);
  }

 private:
  ObjectiveOptions objective() const {
    ObjectiveOptions o;
    o.activation = cfg_.model.activation;
    o.lambda_reg = cfg_.lambda_reg;
    o.lambda_t = cfg_.lambda_t;
    o.transfer_on_fused = cfg_.transfer_on_fused;
    o.joint_target = cfg_.joint_target;
    o.bpr_only = cfg_.bpr_only;
    o.non_saturating = cfg_.non_saturating;
    return o;
  }

  BatchStats step_e(std::span<const Triplet> triplets) {
    BatchStats s;
    Tape<float> tape;
    const auto gv = bind(tape, params_.gnn, true);
    const auto tv = bind_all(tape, params_.transfer.weights, true);
    const auto fwd = propagate(data_.graph, tape.constant(data_.item_features), gv, cfg_.model.gnn_options());
    const auto obj = variant_e_objective(fwd, gv, tv, triplets, objective());
    s.bpr = obj.bpr.value()[0];
    if (!obj.items.empty()) {
      s.transfer = obj.transfer.value()[0];
      s.transfer_count = obj.items.size();
    }
    require_finite(obj.total.value()[0], "training loss");
    tape.backward(obj.total);
    gnn_opt_.step(groups_.gnn, flatten(gv));
    t_opt_.step(groups_.transfer, tv);
    return s;
  }

  BatchStats step_a(std::span<const Triplet> triplets) {
    BatchStats s;
    const auto opts = cfg_.model.gnn_options();
    {  // preference step: BPR only
      Tape<float> tape;
      const auto gv = bind(tape, params_.gnn, true);
      const auto fwd = propagate(data_.graph, tape.constant(data_.item_features), gv, opts);
      const Var bpr = bpr_loss(fwd, triplets, gv, static_cast<float>(cfg_.lambda_reg));
      s.bpr = bpr.value()[0];
      require_finite(s.bpr, "BPR loss");
      tape.backward(bpr);
      gnn_opt_.step(groups_.gnn, flatten(gv));
    }
    const auto state = propagate(data_.graph, params_.gnn, data_.item_features, opts);
    const AdversarialPairs pairs = adversarial_pairs(triplets);
    const std::size_t n = pairs.size();
    const ObjectiveOptions o = objective();
    const Tensorf& input = cfg_.transfer_on_fused ? state.fused : state.content;

    {  // transfer step, graph and discriminator fixed
      Tape<float> tape;
      const auto tv = bind_all(tape, params_.transfer.weights, true);
      const auto dv = bind_all(tape, params_.disc.weights, false);
      const auto l = variant_a_losses(tape.constant(state.item_final()), tape.constant(state.user_final()),
                                      tape.constant(input), tv, dv, pairs, o);
      s.transfer = l.generator_loss.value()[0];
      s.transfer_count = n;
      require_finite(s.transfer, "generator loss");
      tape.backward(l.generator_loss);
      t_opt_.step(groups_.transfer, tv);
    }
    {  // discriminator step on detached fakes from the updated T
      Tape<float> tape;
      const auto tw = bind_all(tape, params_.transfer.weights, false);
      const auto dv = bind_all(tape, params_.disc.weights, true);
      const auto l = variant_a_losses(tape.constant(state.item_final()), tape.constant(state.user_final()),
                                      tape.constant(input), tw, dv, pairs, o, true);
      s.disc = l.discriminator_loss.value()[0];
      require_finite(s.disc, "discriminator loss");
      const auto& pr = l.real_prob.value();
      const auto& pf = l.fake_prob.value();
      for (std::size_t r = 0; r < n; ++r) {
        s.correct += (pr[r] >= 0.5f ? 1 : 0) + (pf[r] < 0.5f ? 1 : 0);
      }
      s.pairs = n;
      tape.backward(l.discriminator_loss);
      d_opt_.step(groups_.disc, dv);
    }
    return s;
  }

  const TrainingSet& data_;
  const TrainConfig& cfg_;
  ModelParams<float>& params_;
  Groups groups_;
  Optimizer gnn_opt_, t_opt_, d_opt_;
};

}  // namespace

TrainResult train(const TrainingSet& data, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const RatingGraph& graph = data.graph;
  if (graph.num_edges() == 0) throw InvalidInput("no training edges");

  Rng init_rng = make_stream(config.seed, "init");
  ModelParams<float> params = init_model<float>(graph.num_users(), graph.num_items(),
                                                data.item_features.cols(), config.model, init_rng);
  Rng rng = make_stream(config.seed, "sampling");
  const NegativeSampler sampler(graph);
  Runner runner(data, config, params);

  TrainResult result;
  TrainReport& report = result.report;
  result.checkpoint = make_checkpoint(data, config, params, 0);
  const bool have_validation = !data.validation.empty();
  if (!have_validation) spdlog::warn("no validation records; keeping the last epoch");
  auto evaluate = [&](const Checkpoint& c) {
    return have_validation ? validate(c, *data.corpus, data.validation, *data.features, config.threads)
                           : 0.0;
  };
  report.initial_val_ndcg5 = evaluate(result.checkpoint);
  report.initial_transfer_error = mean_transfer_error(result.checkpoint, *data.features);
  report.best_val_ndcg5 = report.initial_val_ndcg5;

  std::vector<RatingGraph::Edge> order = graph.edges();
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle(order.begin(), order.end(), rng);
    EpochStats st;
    st.epoch = epoch;
    double bpr = 0.0, transfer = 0.0, disc = 0.0;
    std::size_t transfer_n = 0, pairs = 0, correct = 0;
    for (std::size_t b = 0; b * config.batch_size < order.size(); ++b) {
      std::vector<Triplet> triplets;
      const std::size_t end = std::min(order.size(), (b + 1) * config.batch_size);
      for (std::size_t e = b * config.batch_size; e < end; ++e) {
        if (!sampler.sample(order[e].user, order[e].item, config.negatives_per_positive, rng, triplets)) {
          spdlog::warn("empty negative pool for user {} item {}; positive skipped", order[e].user,
                       order[e].item);
          ++st.skipped_positives;
        }
      }
      if (triplets.empty()) continue;
      BatchStats bs;
      try {
        bs = runner.step(triplets);
      } catch (const NumericalError& e) {
        throw TrainingDiverged(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(b) + ")",
                               result.checkpoint, epoch, b);
      }
      ++st.batches;
      st.triplets += triplets.size();
      bpr += bs.bpr;
      transfer += bs.transfer;
      transfer_n += bs.transfer_count;
      disc += bs.disc;
      pairs += bs.pairs;
      correct += bs.correct;
    }
    st.bpr_loss = st.triplets ? bpr / static_cast<double>(st.triplets) : 0.0;
    st.transfer_loss = transfer_n ? transfer / static_cast<double>(transfer_n) : 0.0;
    st.disc_loss = pairs ? disc / static_cast<double>(pairs) : 0.0;
    st.disc_accuracy = pairs ? static_cast<double>(correct) / (2.0 * static_cast<double>(pairs)) : 0.0;

    Checkpoint current = make_checkpoint(data, config, params, epoch);
    st.val_ndcg5 = evaluate(current);
    st.transfer_error = mean_transfer_error(current, *data.features);
    report.epochs.push_back(st);
    if (hooks.on_epoch) hooks.on_epoch(epoch, params);
    spdlog::debug("epoch {} bpr {:.5f} transfer {:.5f} disc {:.4f} acc {:.3f} val ndcg@5 {:.4f}", epoch,
                  st.bpr_loss, st.transfer_loss, st.disc_loss, st.disc_accuracy, st.val_ndcg5);

    if (!have_validation || st.val_ndcg5 > report.best_val_ndcg5) {
      report.best_val_ndcg5 = st.val_ndcg5;
      report.best_epoch = epoch;
      result.checkpoint = std::move(current);
      since_best = 0;
    } else if (++since_best >= config.patience) {
      report.early_stopped = true;
      break;
    }
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace transgrec
