#include <cmath>
#include <memory>
#include <sstream>

#include "doctest.h"
#include "sbflow/data_metrics.hpp"
#include "sbflow/train.hpp"

using namespace sbflow;

namespace {

NetSpec tiny_spec(int d) {
  NetSpec s;
  s.input_dim = d;
  s.hidden_units = 16;
  s.depth = 2;
  s.time_embed_dim = 8;
  s.embed_hidden = 8;
  return s;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.eps = 0.5;
  c.batch_size = 16;
  c.n_pretrain = 20;
  c.n_finetune = 20;
  c.n_em_steps = 10;
  c.lr_pretrain = 1e-3;
  c.lr_finetune = 1e-3;
  c.seed = 3;
  return c;
}

BatchSampler gaussian(int d, double sigma = 1.0) {
  DatasetSpec s;
  s.dim = d;
  s.sigma = sigma;
  return [s](Eigen::Index n, RngState& rng) { return make_batch(s, n, rng); };
}

bool same_values(const VectorFieldParams& a, const VectorFieldParams& b) {
  return a.same_shape(b) && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("config validation") {
    TrainConfig c = quick_config();
    c.batch_size = 7;
    CHECK_THROWS(c.validate());
    c = quick_config();
    c.ema_decay = 1.0;
    CHECK_THROWS(c.validate());
    c = quick_config();
    c.eps = 0.0;
    CHECK_THROWS(c.validate());
    CHECK_NOTHROW(quick_config().validate());
  }

  TEST_CASE("zero-step phases leave the model untouched") {
    TrainConfig c = quick_config();
    c.n_pretrain = 0;
    c.n_finetune = 0;
    const BridgeModel m0 = init_model(tiny_spec(2), false, c);
    const BridgeModel m1 = pretrain(c, m0, independent_coupling(gaussian(2), gaussian(2)));
    CHECK(same_values(m0.forward.params, m1.forward.params));
    CHECK(m1.step == 0);
    const BridgeModel m2 = finetune_online(c, m1, gaussian(2), gaussian(2));
    CHECK(same_values(m0.forward.params, m2.forward.params));
    CHECK(same_values(m0.forward.ema_params, m2.forward.ema_params));
  }

  TEST_CASE("pretraining on the independent coupling learns the drift -x at t = 0") {
    TrainConfig c = quick_config();
    c.eps = 1.0;
    c.batch_size = 128;
    c.n_pretrain = 3000;
    c.lr_pretrain = 3e-3;
    c.ema_decay = 0.99;
    BridgeModel m = init_model(tiny_spec(1), false, c);
    std::vector<double> trace;
    TrainHooks hooks;
    hooks.on_step = [&](const StepRecord& r, const BridgeModel&) {
      trace.push_back(0.5 * (r.loss_fwd + r.loss_bwd));
      return true;
    };
    m = pretrain(c, std::move(m), independent_coupling(gaussian(1), gaussian(1)), hooks);
    CHECK(m.step == 3000);
    REQUIRE(trace.size() == 3000);
    for (double l : trace) CHECK(std::isfinite(l));

    Batch grid(9, 1);
    for (int i = 0; i < 9; ++i) grid(i, 0) = -2.0 + 0.5 * i;
    const Batch v = m.field(true)(Direction::Forward, 0.0, grid);
    for (int i = 0; i < 9; ++i) CHECK(std::abs(v(i, 0) + grid(i, 0)) < 0.1);
  }

  TEST_CASE("pretraining splits the batch between the two losses") {
    TrainConfig c = quick_config();
    const PairSource src = pretrain_pairs(c, independent_coupling(gaussian(2), gaussian(2)));
    BridgeModel m = init_model(tiny_spec(2), false, c);
    RngState rng{1, 0, 0};
    const StepPairs p = src(m, rng);
    RngState again{1, 0, 0};
    const CouplingBatch full = independent_coupling(gaussian(2), gaussian(2))(16, again);
    CHECK(p.fwd.x0 == full.x0.topRows(8));
    CHECK(p.fwd.x1 == full.x1.topRows(8));
    CHECK(p.bwd.x0 == full.x0.bottomRows(8));
    CHECK(p.bwd.x1 == full.x1.bottomRows(8));
  }

  TEST_CASE("finetuning targets always use true endpoint samples") {
    TrainConfig c = quick_config();
    BridgeModel m = init_model(tiny_spec(2), false, c);
    auto last0 = std::make_shared<Batch>();
    auto last1 = std::make_shared<Batch>();
    BatchSampler pi0 = [last0](Eigen::Index n, RngState& r) { return *last0 = sample_std_normal(r, n, 2); };
    BatchSampler pi1 = [last1](Eigen::Index n, RngState& r) { return *last1 = 2.0 * sample_std_normal(r, n, 2); };
    const PairSource src = online_pairs(c, pi0, pi1);
    RngState rng{5, 0, 0};
    const StepPairs p = src(m, rng);
    CHECK(p.fwd.x1 == *last1);
    CHECK(p.bwd.x0 == *last0);
    CHECK(p.fwd.x0 != *last0);
    CHECK(p.bwd.x1 != *last1);

    const StepPairs q = pair_with_true_targets(*last0, *last1, Batch::Zero(8, 2), Batch::Ones(8, 2));
    CHECK(q.fwd.x1 == *last1);
    CHECK(q.bwd.x0 == *last0);
  }

  TEST_CASE("sampled pairs do not depend on the gradient step") {
    TrainConfig c = quick_config();
    BridgeModel m = init_model(tiny_spec(2), false, c);
    const PairSource src = online_pairs(c, gaussian(2), gaussian(2));
    RngState r1{9, 0, 0};
    const StepPairs before = src(m, r1);
    const BridgeModel frozen = m;
    RngState noise{10, 0, 0};
    train_step(c, m, before, 1e-2, noise, Phase::Finetune);
    CHECK_FALSE(same_values(m.forward.params, frozen.forward.params));
    RngState r2{9, 0, 0};
    const StepPairs recomputed = src(frozen, r2);
    CHECK(recomputed.fwd.x0 == before.fwd.x0);
    CHECK(recomputed.bwd.x1 == before.bwd.x1);
  }

  TEST_CASE("finetuning with true-coupling pairs reduces to pretraining") {
    TrainConfig c = quick_config();
    c.lr_finetune = c.lr_pretrain;
    const CouplingSampler coupling = independent_coupling(gaussian(2), gaussian(2));
    const BridgeModel m0 = init_model(tiny_spec(2), false, c);
    std::vector<double> a, b;
    TrainHooks ha;
    ha.on_step = [&](const StepRecord& r, const BridgeModel&) {
      a.push_back(r.loss_fwd);
      a.push_back(r.loss_bwd);
      return true;
    };
    const BridgeModel pa = pretrain(c, m0, coupling, ha);
    TrainHooks hb;
    hb.on_step = [&](const StepRecord& r, const BridgeModel&) {
      b.push_back(r.loss_fwd);
      b.push_back(r.loss_bwd);
      return true;
    };
    hb.pair_override = pretrain_pairs(c, coupling);
    const BridgeModel pb = finetune_online(c, m0, gaussian(2), gaussian(2), hb);
    CHECK(a == b);
    CHECK(same_values(pa.forward.params, pb.forward.params));
  }

  TEST_CASE("iterative finetuning with one long phase trains only the forward network") {
    TrainConfig c = quick_config();
    const BridgeModel m0 = init_model(tiny_spec(2), true, c);
    const BridgeModel m1 = finetune_iterative(c, m0, c.n_finetune, gaussian(2), gaussian(2));
    CHECK_FALSE(same_values(m0.forward.params, m1.forward.params));
    CHECK(same_values(m0.backward->params, m1.backward->params));
    CHECK(same_values(m0.backward->ema_params, m1.backward->ema_params));
  }

  TEST_CASE("iterative finetuning alternates phases") {
    TrainConfig c = quick_config();
    c.n_finetune = 10;
    std::vector<Phase> phases;
    TrainHooks h;
    h.on_step = [&](const StepRecord& r, const BridgeModel&) {
      phases.push_back(r.phase);
      CHECK((r.phase == Phase::FinetuneForward ? r.loss_bwd : r.loss_fwd) == 0.0);
      return true;
    };
    finetune_iterative(c, init_model(tiny_spec(2), true, c), 3, gaussian(2), gaussian(2), h);
    REQUIRE(phases.size() == 10);
    for (int k = 0; k < 10; ++k)
      CHECK(phases[k] == ((k / 3) % 2 == 0 ? Phase::FinetuneForward : Phase::FinetuneBackward));
  }

  TEST_CASE("step hook can stop a phase") {
    TrainConfig c = quick_config();
    TrainHooks h;
    h.on_step = [](const StepRecord& r, const BridgeModel&) { return r.step < 4; };
    const BridgeModel m = pretrain(c, init_model(tiny_spec(2), false, c), independent_coupling(gaussian(2), gaussian(2)), h);
    CHECK(m.step == 5);
  }

  TEST_CASE("training is bit-reproducible") {
    TrainConfig c = quick_config();
    c.n_pretrain = 100;
    c.n_finetune = 100;
    auto run = [&] {
      BridgeModel m = init_model(tiny_spec(2), false, c);
      m = pretrain(c, std::move(m), independent_coupling(gaussian(2), gaussian(2)));
      return finetune_online(c, std::move(m), gaussian(2), gaussian(2, 2.0));
    };
    const BridgeModel a = run();
    const BridgeModel b = run();
    CHECK(a.step == 200);
    CHECK(same_values(a.forward.params, b.forward.params));
    CHECK(same_values(a.forward.ema_params, b.forward.ema_params));
  }

  TEST_CASE("finetuning resets the optimizer state") {
    TrainConfig c = quick_config();
    c.n_finetune = 1;
    BridgeModel m = init_model(tiny_spec(2), false, c);
    m = pretrain(c, std::move(m), independent_coupling(gaussian(2), gaussian(2)));
    CHECK(m.forward.opt.step == 20);
    m = finetune_online(c, std::move(m), gaussian(2), gaussian(2));
    CHECK(m.forward.opt.step == 1);
    CHECK(m.forward.step == 21);
  }

  TEST_CASE("non-finite losses abort with the step index") {
    TrainConfig c = quick_config();
    CouplingSampler bad = [](Eigen::Index n, RngState&) {
      CouplingBatch b{Batch::Zero(n, 2), Batch::Zero(n, 2)};
      b.x1(0, 0) = NAN;
      return b;
    };
    try {
      pretrain(c, init_model(tiny_spec(2), false, c), bad);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(e.index() == 0);
    }
  }

  TEST_CASE("replay buffer policies") {
    RngState rng{1, 0, 0};
    const CouplingBatch a{sample_std_normal(rng, 8, 2), sample_std_normal(rng, 8, 2)};
    const CouplingBatch b{sample_std_normal(rng, 8, 2), sample_std_normal(rng, 8, 2)};
    ReplayBuffer buf(8, 2);
    CHECK_THROWS(buffer_sample(buf, 1, rng));
    buf = buffer_add(buf, a, rng);
    CHECK(buf.size() == 8);
    const CouplingBatch s = buffer_sample(buf, 8, rng);
    // Same set of pairs, in some order.
    for (Eigen::Index i = 0; i < 8; ++i) {
      int hits = 0;
      for (Eigen::Index j = 0; j < 8; ++j)
        if (s.x0.row(i) == a.x0.row(j) && s.x1.row(i) == a.x1.row(j)) ++hits;
      CHECK(hits == 1);
    }
    CHECK_THROWS(buffer_sample(buf, 9, rng));

    buf = buffer_add(buf, b, rng);
    CHECK(buf.size() == 8);
    const CouplingBatch kept = buf.contents();
    CHECK(kept.x0 == b.x0);
    CHECK(kept.x1 == b.x1);

    ReplayBuffer partial(10, 2);
    partial.add(CouplingBatch{a.x0.topRows(3), a.x1.topRows(3)});
    CHECK(partial.size() == 3);
    CHECK(partial.contents().x0 == a.x0.topRows(3));
  }

  TEST_CASE("a buffer holding one batch reproduces the online loss distribution") {
    TrainConfig c = quick_config();
    c.replay_capacity = c.half_batch();
    c.n_finetune = 5;
    BridgeModel m = init_model(tiny_spec(2), false, c);
    std::vector<double> losses;
    TrainHooks h;
    h.on_step = [&](const StepRecord& r, const BridgeModel&) {
      losses.push_back(r.loss_fwd);
      return true;
    };
    const BridgeModel out = finetune_online(c, m, gaussian(2), gaussian(2), h);
    CHECK(losses.size() == 5);
    CHECK(out.step == 5);
    c.replay_capacity = 3;
    CHECK_THROWS(c.validate());
  }

  TEST_CASE("model checkpoints round-trip") {
    TrainConfig c = quick_config();
    for (bool two : {false, true}) {
      BridgeModel m = init_model(tiny_spec(2), two, c, PrecondSettings{true, 0.5, LossWeighting::Unit});
      m = pretrain(c, std::move(m), independent_coupling(gaussian(2), gaussian(2)));
      std::stringstream ss;
      save_model(ss, m);
      const BridgeModel r = load_model(ss);
      CHECK(r.step == m.step);
      CHECK(r.rng.seed == m.rng.seed);
      CHECK(r.rng.stream_id == m.rng.stream_id);
      CHECK(r.two_networks() == two);
      CHECK(r.precond.enabled);
      CHECK(same_values(r.forward.params, m.forward.params));
      CHECK(same_values(r.forward.ema_params, m.forward.ema_params));
      CHECK(same_values(r.forward.opt.v, m.forward.opt.v));
      if (two) CHECK(same_values(r.backward->params, m.backward->params));
    }
  }
}
