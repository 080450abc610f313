#include "doctest.h"

#include <cmath>
#include <numeric>

#include "support/testbed.hpp"
#include "transgrec/eval.hpp"
#include "transgrec/trainer.hpp"

using namespace transgrec;

namespace {

struct Fixture {
  Dataset ds;
  TrainingSet data;
  explicit Fixture(const std::string& name, SynthOptions o = testbed::small(1))
      : ds(testbed::make(name, o)), data(ds.corpus, ds.split, ds.features) {}
};

TrainConfig quick(Variant v = Variant::E) {
  TrainConfig c;
  c.variant = v;
  c.model.dim = 8;
  c.max_epochs = 3;
  c.seed = 4;
  return c;
}

std::vector<nk::Tensorf> gnn_state(const ModelParams<float>& p) {
  std::vector<nk::Tensorf> out{p.gnn.user_emb, p.gnn.item_emb, p.gnn.reduce};
  out.insert(out.end(), p.gnn.user_weights.begin(), p.gnn.user_weights.end());
  out.insert(out.end(), p.gnn.item_weights.begin(), p.gnn.item_weights.end());
  return out;
}

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("key=value with comments") {
    const auto c = parse_train_config("# depth\nlayers = 1\nlambda_t=0.1\nvariant=A\n");
    CHECK(c.model.layers == 1);
    CHECK(c.lambda_t == 0.1);
    CHECK(c.variant == Variant::A);
  }
  SUBCASE("json") {
    const auto c = parse_train_config(R"({"dim": 16, "max_epochs": 7, "pooling": "max"})");
    CHECK(c.model.dim == 16);
    CHECK(c.max_epochs == 7);
    CHECK(c.model.pooling == nk::Pooling::max);
  }
  SUBCASE("variant A defaults to one layer") {
    CHECK(parse_train_config("variant=A").model.layers == 1);
    CHECK(parse_train_config("variant=A\nK=2").model.layers == 2);
    CHECK(parse_train_config("variant=E").model.layers == 2);
    CHECK(parse_train_config("").model.layers == 2);
  }
  SUBCASE("round trip") {
    auto c = quick(Variant::A);
    c.joint_target = true;
    CHECK(TrainConfig::from_json(c.to_json()).to_json() == c.to_json());
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(parse_train_config("lambda = 3"), InvalidInput);
    CHECK_THROWS_AS(parse_train_config("{\"dim\": "), InvalidInput);
    CHECK_THROWS_AS(parse_train_config("learning_rate=-1"), InvalidInput);
    CHECK_THROWS_AS(parse_train_config("dim=0"), InvalidInput);
  }
}

TEST_CASE("trainer behaviour on a small testbed") {
  spdlog::set_level(spdlog::level::warn);
  Fixture fx("trainer");

  SUBCASE("zero epochs returns the initialization") {
    auto c = quick();
    c.max_epochs = 0;
    const auto r = train(fx.data, c);
    CHECK(r.report.epochs.empty());
    CHECK(r.report.best_epoch == 0);
    CHECK(r.checkpoint.epoch == 0);
    Rng init = make_stream(c.seed, "init");
    const auto fresh = init_model<float>(fx.data.graph.num_users(), fx.data.graph.num_items(),
                                         fx.ds.features.dim(), c.model, init);
    CHECK(gnn_state(r.checkpoint.params) == gnn_state(fresh));
    CHECK(r.checkpoint.params.transfer.weights == fresh.transfer.weights);
  }

  SUBCASE("identical runs give identical bytes") {
    for (auto v : {Variant::E, Variant::A}) {
      const auto a = train(fx.data, quick(v));
      const auto b = train(fx.data, quick(v));
      CHECK(serialize_checkpoint(a.checkpoint) == serialize_checkpoint(b.checkpoint));
      CHECK(a.report.to_jsonl() == b.report.to_jsonl());
    }
  }

  SUBCASE("report invariants") {
    auto c = quick(Variant::A);
    c.max_epochs = 4;
    const auto r = train(fx.data, c);
    CHECK(r.report.epochs.size() <= 4);
    CHECK(r.report.best_epoch <= r.report.epochs.size());
    for (const auto& e : r.report.epochs) {
      CHECK(std::isfinite(e.bpr_loss));
      CHECK(std::isfinite(e.transfer_loss));
      CHECK(std::isfinite(e.disc_loss));
      CHECK(e.val_ndcg5 >= 0.0);
      CHECK(e.val_ndcg5 <= 1.0);
    }
    CHECK(r.report.to_jsonl().find("wall") == std::string::npos);
  }

  SUBCASE("zero lambda_t follows the bpr-only trajectory") {
    auto with_t = quick();
    with_t.lambda_t = 0.0;
    auto bpr = quick();
    bpr.bpr_only = true;
    std::vector<std::vector<nk::Tensorf>> a, b;
    TrainHooks ha, hb;
    ha.on_epoch = [&](std::size_t, const ModelParams<float>& p) { a.push_back(gnn_state(p)); };
    hb.on_epoch = [&](std::size_t, const ModelParams<float>& p) { b.push_back(gnn_state(p)); };
    train(fx.data, with_t, ha);
    train(fx.data, bpr, hb);
    REQUIRE(a.size() == 3);
    CHECK(a == b);
  }

  SUBCASE("checkpoint round trip reproduces validation") {
    const auto r = train(fx.data, quick());
    const auto path = testbed::scratch("trainer_ckpt") / "e.tgck";
    save_checkpoint(r.checkpoint, path.string());
    const auto back = load_checkpoint(path.string());
    CHECK(serialize_checkpoint(back) == serialize_checkpoint(r.checkpoint));
    CHECK(validate(back, fx.ds.corpus, fx.data.validation, fx.ds.features) ==
          validate(r.checkpoint, fx.ds.corpus, fx.data.validation, fx.ds.features));
    CHECK(validate(r.checkpoint, fx.ds.corpus, fx.data.validation, fx.ds.features) == r.report.best_val_ndcg5);
  }

  SUBCASE("divergence reports the last good checkpoint") {
    auto c = quick();
    c.learning_rate = 1e38;
    try {
      train(fx.data, c);
      FAIL("expected divergence");
    } catch (const TrainingDiverged& e) {
      CHECK(e.epoch >= 1);
      CHECK(e.last_good.epoch < e.epoch);
      for (float v : e.last_good.params.gnn.user_emb.data()) CHECK(std::isfinite(v));
    }
  }

  SUBCASE("early stopping") {
    auto c = quick();
    c.max_epochs = 40;
    c.patience = 2;
    c.learning_rate = 1e-6;  // validation barely moves
    const auto r = train(fx.data, c);
    if (r.report.early_stopped) CHECK(r.report.epochs.size() == r.report.best_epoch + c.patience);
    CHECK(r.report.epochs.size() < 40);
  }
}

TEST_CASE("validate examples") {
  spdlog::set_level(spdlog::level::warn);
  Fixture fx("trainer_validate");
  auto r = train(fx.data, [] { auto c = quick(); c.max_epochs = 0; return c; }());
  const auto& recs = fx.data.validation;
  REQUIRE(!recs.empty());
  // a scorer that knows the answer: scores by membership in positives
  std::vector<RankingRun> perfect, reversed;
  for (const auto& rec : recs) {
    RankingRun p{rec.user, rec.video, rec.candidates, {}, rec.positives};
    for (auto c : rec.candidates)
      p.scores.push_back(std::binary_search(rec.positives.begin(), rec.positives.end(), c) ? 1.0 : 0.0);
    RankingRun q = p;
    for (auto& s : q.scores) s = -s;
    perfect.push_back(p);
    reversed.push_back(q);
  }
  bool small = true;
  for (const auto& rec : recs) small = small && rec.positives.size() <= 5;
  if (small) CHECK(summarize(perfect).ndcg(5) == 1.0);
  CHECK(summarize(reversed).ndcg(5) <= summarize(perfect).ndcg(5));
  CHECK(validate(r.checkpoint, fx.ds.corpus, {}, fx.ds.features) == 0.0);
}

TEST_CASE("training loss falls over 50 epochs") {
  spdlog::set_level(spdlog::level::warn);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthOptions o;
    o.seed = seed;
    Fixture fx("trainer_loss_" + std::to_string(seed), o);
    TrainConfig c;
    c.max_epochs = 50;
    c.patience = 50;
    c.seed = seed;
    const auto r = train(fx.data, c);
    REQUIRE(r.report.epochs.size() == 50);
    auto window = [&](std::size_t end) {
      double s = 0.0;
      const std::size_t begin = end > 10 ? end - 10 : 0;
      for (std::size_t e = begin; e < end; ++e) {
        const auto& st = r.report.epochs[e];
        s += st.bpr_loss + c.lambda_t * st.transfer_loss;
      }
      return s / static_cast<double>(end - begin);
    };
    CAPTURE(seed);
    // the window at epoch 5 only has five epochs behind it
    CHECK(window(50) < window(5));
  }
}
