#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "gramode/errors.hpp"
#include "gramode/ops.hpp"
#include "gramode/synthetic.hpp"
#include "gramode/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/temp_dir.hpp"

using namespace gramode;
using namespace gramode::testing;

namespace {

Dataset ramp(std::size_t t, std::size_t n, std::size_t c) {
  Dataset d;
  d.steps = t;
  d.nodes = n;
  d.channels = c;
  for (std::size_t s = 0; s < t; ++s)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < c; ++k) d.data.push_back(static_cast<float>(1000 * k + 10 * s + i));
  return d;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.n_nodes = 3;
  cfg.history = 4;
  cfg.horizon = 2;
  cfg.latent_len = 2;
  cfg.channels = 2;
  cfg.heads = 1;
  cfg.parallel_channels = 1;
  cfg.layers = 1;
  cfg.integrator.steps_per_unit = 1;
  cfg.train.batch_size = 8;
  cfg.train.epochs = 3;
  cfg.train.learning_rate = 1e-2;
  return cfg;
}

Dataset tiny_data() {
  SyntheticSpec s;
  s.nodes = 3;
  s.steps = 120;
  s.period = 12;
  return make_synthetic(s);
}

// Epoch logs without the wall-clock column.
std::vector<std::string> log_signature(const FitResult& r) {
  std::vector<std::string> out;
  for (const auto& e : r.log) {
    out.push_back(std::to_string(e.epoch) + e.split + format_metric(e.loss) + format_metric(e.metrics.mae) +
                  format_metric(e.metrics.rmse) + format_metric(e.metrics.mape_percent));
  }
  return out;
}

}  // namespace

TEST_CASE("split_dataset") {
  Splits s = split_dataset(100, 8, 8);
  CHECK(s.train == Range{0, 60});
  CHECK(s.val == Range{60, 80});
  CHECK(s.test == Range{80, 100});
  Splits t = split_dataset(2000, 12, 12);
  CHECK(t.train == Range{0, 1200});
  CHECK(t.test == Range{1600, 2000});

  Splits x = split_dataset(100, 8, 8, "X_T");
  CHECK(x.test == Range{0, 20});
  CHECK(x.val == Range{20, 40});
  CHECK(x.train == Range{40, 100});
  for (const char* order : {"T_X", "TX_", "_TX", "_XT", "XT_", "X_T"}) {
    Splits p = split_dataset(101, 8, 8, order);
    CHECK(p.train.size() == 60);
    CHECK(p.val.size() == 20);
    CHECK(p.test.size() == 21);
    std::vector<Range> rs{p.train, p.val, p.test};
    std::sort(rs.begin(), rs.end(), [](const Range& a, const Range& b) { return a.begin < b.begin; });
    CHECK(rs[0].begin == 0);
    CHECK(rs[0].end == rs[1].begin);
    CHECK(rs[1].end == rs[2].begin);
    CHECK(rs[2].end == 101);
  }
  CHECK_THROWS_AS(split_dataset(100, 12, 12, "TTX"), ConfigError);
  CHECK_THROWS_AS(split_dataset(100, 12, 12, "TX"), ConfigError);
  // The validation split of 110 steps is 22, short of one 24-step window.
  CHECK_THROWS_AS(split_dataset(110, 12, 12), InputError);
  CHECK_NOTHROW(split_dataset(120, 12, 12));
}

TEST_CASE("z-score") {
  Dataset d;
  d.steps = 2;
  d.nodes = 1;
  d.channels = 1;
  d.data = {1.0f, 3.0f};
  NormStats s = fit_norm(d, {0, 2});
  CHECK(s.mean[0] == 2.0);
  CHECK(s.std[0] == 1.0);
  CHECK(normalize(1.0, s, 0) == -1.0);
  CHECK(normalize(3.0, s, 0) == 1.0);

  Dataset r = ramp(50, 3, 2);
  NormStats rs = fit_norm(r, {0, 30});
  for (std::size_t i = 0; i < r.data.size(); ++i) {
    const double v = r.data[i];
    CHECK(std::abs(denormalize(normalize(v, rs, i % 2), rs, i % 2) - v) <= 1e-12 * std::abs(v));
  }

  SUBCASE("constant channel gets unit std") {
    Dataset c = ramp(10, 2, 1);
    for (auto& v : c.data) v = 7.25f;
    NormStats cs = fit_norm(c, {0, 10});
    CHECK(cs.std[0] == 1.0);
    CHECK(normalize(7.25, cs, 0) == 0.0);
  }
  SUBCASE("statistics ignore everything outside the training range") {
    Dataset e = ramp(100, 2, 1);
    const Splits sp = split_dataset(100, 4, 2);
    NormStats before = fit_norm(e, sp.train);
    for (std::size_t t = sp.train.end; t < 100; ++t)
      for (std::size_t n = 0; n < 2; ++n) e.data[t * 2 + n] = 1e6f;
    NormStats after = fit_norm(e, sp.train);
    CHECK(before.mean == after.mean);
    CHECK(before.std == after.std);
  }
}

TEST_CASE("windows and batches") {
  CHECK(window_starts({0, 25}, 12, 12).size() == 2);
  CHECK(window_starts({0, 23}, 12, 12).empty());
  CHECK(window_starts({60, 80}, 4, 2) == std::vector<std::size_t>{60, 61, 62, 63, 64, 65, 66, 67, 68, 69, 70, 71, 72, 73, 74});

  auto starts = window_starts({0, 200}, 12, 12);
  const std::uint64_t s1 = 5, s2 = 6;
  auto a = make_batches(starts, 16, &s1), b = make_batches(starts, 16, &s1), c = make_batches(starts, 16, &s2);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(starts.size() == 177);
  CHECK(a.size() == 12);
  CHECK(a.back().size() == starts.size() % 16);
  std::multiset<std::size_t> seen;
  for (const auto& batch : a) seen.insert(batch.begin(), batch.end());
  CHECK(seen == std::multiset<std::size_t>(starts.begin(), starts.end()));
  auto ordered = make_batches(starts, 16);
  CHECK(ordered.front().front() == 0);
  CHECK(ordered[1].front() == 16);

  Dataset d = ramp(40, 3, 2);
  NormStats norm = fit_norm(d, {0, 24});
  WindowBatch wb = assemble_batch(d, {0, 7, 30}, 5, 3, norm);
  CHECK(wb.x.shape() == Shape{3, 3, 5, 2});
  CHECK(wb.y.shape() == Shape{3, 3, 3});
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t s = wb.starts[i];
    for (std::size_t n = 0; n < 3; ++n) {
      // History ends one step before the first target.
      CHECK(denormalize(wb.x.at({i, n, 4, 0}), norm, 0) == doctest::Approx(d.at(s + 4, n, 0)).epsilon(1e-12));
      CHECK(wb.y.at({i, n, 0}) == d.at(s + 5, n, 0));
      CHECK(wb.y.at({i, n, 2}) == d.at(s + 7, n, 0));
      CHECK(denormalize(wb.x.at({i, n, 0, 1}), norm, 1) == doctest::Approx(d.at(s, n, 1)).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(assemble_batch(d, {33}, 5, 3, norm), InputError);
}

TEST_CASE("huber loss") {
  auto value = [](double err, double delta) {
    Tape tape;
    return huber_loss(tape.constant(Tensor({1}, err)), Tensor({1}, 0.0), delta).value().item();
  };
  auto slope = [](double err, double delta) {
    ParamStore store;
    Parameter& p = store.add("p", Tensor({1}, err));
    Tape tape;
    tape.backward(huber_loss(tape.param(p), Tensor({1}, 0.0), delta));
    return p.grad[0];
  };
  CHECK(value(0.5, 1.0) == 0.125);
  CHECK(value(2.0, 1.0) == 1.5);
  CHECK(value(-2.0, 1.0) == 1.5);
  for (double delta : {0.5, 1.0, 3.0}) {
    CHECK(value(delta, delta) == doctest::Approx(delta * delta / 2).epsilon(1e-15));
    CHECK(std::abs(value(delta + 1e-9, delta) - value(delta - 1e-9, delta)) < 1e-8 * delta);
    CHECK(std::abs(slope(delta + 1e-9, delta) - slope(delta - 1e-9, delta)) < 1e-8);
    CHECK(std::abs(slope(-delta - 1e-9, delta) - slope(-delta + 1e-9, delta)) < 1e-8);
  }
  {
    Tape tape;
    Var l = huber_loss(tape.constant(Tensor({2, 2}, std::vector<double>{0.5, 2.0, 0.0, -1.0})), Tensor({2, 2}), 1.0);
    CHECK(l.value().item() == doctest::Approx((0.125 + 1.5 + 0.0 + 0.5) / 4).epsilon(1e-15));
  }
  std::mt19937_64 rng(51);
  ParamStore store;
  store.add("p", random_tensor({3, 4}, rng, -3, 3));
  const Tensor y = random_tensor({3, 4}, rng, -3, 3);
  auto entries = gradcheck(store, [&](Tape& tape) { return huber_loss(tape.param(store.at("p")), y, 1.0); });
  CHECK(worst(entries) <= 1e-4);
  Tape tape;
  CHECK_THROWS_AS(huber_loss(tape.constant(Tensor({2})), Tensor({3}), 1.0), DimensionError);
  CHECK_THROWS_AS(huber_loss(tape.constant(Tensor({2})), Tensor({2}), 0.0), DomainError);
}

TEST_CASE("AdamW") {
  SUBCASE("minimizes a convex scalar quadratic") {
    ParamStore store;
    Parameter& p = store.add("p", Tensor({1}, 1.0));
    AdamW opt(store, 0.1, 0.0);
    double prev = 1.0;
    bool monotone_until_crossing = true, crossed = false;
    for (int i = 0; i < 200; ++i) {
      p.grad[0] = 2.0 * p.value[0];
      opt.step();
      if (!crossed && p.value[0] > prev) monotone_until_crossing = false;
      if (p.value[0] <= 0.0) crossed = true;
      prev = p.value[0];
    }
    CHECK(monotone_until_crossing);
    CHECK(std::abs(p.value[0]) < 0.05);
  }
  SUBCASE("objective decreases monotonically after warm-up at a small rate") {
    ParamStore store;
    Parameter& p = store.add("p", Tensor({3}, std::vector<double>{1.0, -2.0, 0.5}));
    AdamW opt(store, 0.01, 0.0);
    double prev = 1e300;
    bool monotone = true;
    for (int i = 0; i < 40; ++i) {
      double f = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        f += (k + 1.0) * p.value[k] * p.value[k];
        p.grad[k] = 2.0 * (k + 1.0) * p.value[k];
      }
      if (f > prev) monotone = false;
      prev = f;
      opt.step();
    }
    CHECK(monotone);
  }
  SUBCASE("zero gradient with decay is a pure shrink") {
    ParamStore store;
    Parameter& p = store.add("p", Tensor({2}, std::vector<double>{3.0, -1.5}));
    AdamW opt(store, 0.1, 0.01);
    double expect0 = 3.0, expect1 = -1.5;
    for (int i = 0; i < 10; ++i) {
      opt.step();
      expect0 *= 1.0 - 0.1 * 0.01;
      expect1 *= 1.0 - 0.1 * 0.01;
      CHECK(p.value[0] == expect0);
      CHECK(p.value[1] == expect1);
    }
  }
  SUBCASE("first step is lr times the gradient sign, whatever its scale") {
    for (double g : {1e-3, 1.0, 1e4, -5.0}) {
      ParamStore store;
      Parameter& p = store.add("p", Tensor({1}, 0.0));
      AdamW opt(store, 0.1, 0.0);
      p.grad[0] = g;
      opt.step();
      CHECK(p.value[0] == doctest::Approx(g > 0 ? -0.1 : 0.1).epsilon(1e-4));
    }
  }
}

TEST_CASE("noise injection") {
  const auto starts = window_starts({0, 120}, 12, 12);
  Dataset d = make_synthetic({});
  NormStats norm = fit_norm(d, {0, 120});
  const WindowBatch clean = assemble_batch(d, starts, 12, 12, norm);

  SUBCASE("ratio zero leaves every window untouched") {
    NoiseInjector none(starts, 4.0, 0.0, 1);
    CHECK(none.n_selected() == 0);
    CHECK(identical(assemble_batch(d, starts, 12, 12, norm, &none).x, clean.x));
  }
  SUBCASE("zero variance leaves every window untouched") {
    NoiseInjector zero(starts, 0.0, 1.0, 1);
    CHECK(identical(assemble_batch(d, starts, 12, 12, norm, &zero).x, clean.x));
  }
  SUBCASE("seeded mask, history only") {
    NoiseInjector a(starts, 2.0, 0.3, 9), b(starts, 2.0, 0.3, 9), c(starts, 2.0, 0.3, 10);
    CHECK(a.n_selected() == static_cast<std::size_t>(std::llround(0.3 * starts.size())));
    std::size_t differ = 0;
    for (std::size_t s : starts) {
      CHECK(a.selected(s) == b.selected(s));
      differ += a.selected(s) != c.selected(s);
    }
    CHECK(differ > 0);
    const WindowBatch na = assemble_batch(d, starts, 12, 12, norm, &a);
    const WindowBatch nb = assemble_batch(d, starts, 12, 12, norm, &b);
    CHECK(identical(na.x, nb.x));
    CHECK(identical(na.y, clean.y));
    const std::size_t block = d.nodes * 12;
    double sq = 0.0;
    std::size_t count = 0;
    for (std::size_t w = 0; w < starts.size(); ++w) {
      bool changed = false;
      for (std::size_t k = 0; k < block; ++k) {
        const double diff = (na.x[w * block + k] - clean.x[w * block + k]) * norm.std[0];
        if (diff != 0.0) changed = true;
        if (a.selected(starts[w])) {
          sq += diff * diff;
          ++count;
        }
      }
      CHECK(changed == a.selected(starts[w]));
    }
    CHECK(sq / static_cast<double>(count) == doctest::Approx(2.0).epsilon(0.15));
  }
  SUBCASE("invalid settings") {
    CHECK_THROWS_AS(NoiseInjector(starts, 2.0, 1.5, 1), ConfigError);
    CHECK_THROWS_AS(NoiseInjector(starts, -1.0, 0.5, 1), ConfigError);
  }
}

TEST_CASE("persistence baseline") {
  Dataset d = ramp(30, 2, 1);
  Forecast f = persistence_forecast(d, {0, 30}, 4, 3);
  CHECK(f.windows() == 24);
  CHECK(f.prediction[f.index(5, 1, 2)] == d.at(5 + 3, 1, 0));
  CHECK(f.truth[f.index(5, 1, 2)] == d.at(5 + 6, 1, 0));
}

TEST_CASE("fit") {
  const Dataset d = tiny_data();
  ModelConfig cfg = tiny_config();
  cfg.graph.dtw_series = "raw";
  cfg.graph.dtw_mode = DtwMode::quantile;
  cfg.graph.epsilon = 0.5;
  const TrafficGraph g = build_graphs(d, ring_edges(3), cfg);

  SUBCASE("deterministic logs, checkpoint and best parameters") {
    TempDir dir;
    Model a(cfg, cfg.train.seed), b(cfg, cfg.train.seed);
    FitOptions opt;
    opt.log_path = dir.file("log.csv");
    opt.checkpoint_path = dir.file("best.grmd");
    FitResult ra = fit(a, d, g, opt);
    FitResult rb = fit(b, d, g);
    CHECK_FALSE(ra.diverged);
    CHECK(ra.epochs_run == 3);
    CHECK(log_signature(ra) == log_signature(rb));
    CHECK(ra.log.size() == 2 * 3 + 1);
    CHECK(ra.log.back().split == "test");
    CHECK(ra.log.back().epoch == ra.best_epoch);

    std::ifstream in(opt.log_path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,split,loss,mae,mape,rmse,seconds");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == ra.log.size());

    NormStats norm;
    auto loaded = load_checkpoint(opt.checkpoint_path, norm);
    auto pa = a.params().all();
    auto pl = loaded->params().all();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(identical(pa[i]->value, pl[i]->value));
    const Metrics again = predict_range(*loaded, d, g, ra.splits.val, norm, 8).metrics(0.1);
    CHECK(again.mae == doctest::Approx(ra.best_val.mae).epsilon(1e-12));
    const Metrics test = predict_range(*loaded, d, g, ra.splits.test, norm, 5).metrics(0.1);
    CHECK(test.mae == doctest::Approx(ra.test.mae).epsilon(1e-12));
  }
  SUBCASE("ratio zero reproduces the clean run") {
    ModelConfig noisy = cfg;
    noisy.train.noise_gamma_sq = 4.0;
    noisy.train.noise_ratio = 0.0;
    Model a(cfg, 1), b(noisy, 1);
    CHECK(log_signature(fit(a, d, g)) == log_signature(fit(b, d, g)));
    noisy.train.noise_ratio = 0.4;
    Model c(noisy, 1);
    CHECK(log_signature(fit(a, d, g)) != log_signature(fit(c, d, g)));
  }
  SUBCASE("training reduces validation error") {
    ModelConfig longer = cfg;
    longer.train.epochs = 8;
    Model m(longer, 2);
    FitResult r = fit(m, d, g);
    CHECK(r.best_val.mae < r.log[1].metrics.mae);
  }
  SUBCASE("early stopping honors patience") {
    ModelConfig p = cfg;
    p.train.epochs = 50;
    p.train.patience = 1;
    // Updates this small vanish in the float32 rounding.
    p.train.learning_rate = 1e-12;
    p.train.weight_decay = 0.0;
    Model m(p, 3);
    FitResult r = fit(m, d, g);
    CHECK(r.epochs_run == 2);
    CHECK(r.best_epoch == 1);
  }
  SUBCASE("divergence keeps the last good parameters") {
    ModelConfig bad = cfg;
    bad.integrator.t_end_global = 400.0;
    bad.integrator.steps_per_unit = 1;
    Model m(bad, 4);
    const auto before = m.params().snapshot();
    FitResult r = fit(m, d, g);
    CHECK(r.diverged);
    CHECK_FALSE(r.divergence.empty());
    CHECK(r.best_epoch == 0);
    const auto after = m.params().snapshot();
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(identical(before[i], after[i]));
  }
  SUBCASE("mismatched data is a config error") {
    Model m(cfg, 1);
    SyntheticSpec s;
    s.nodes = 4;
    s.steps = 120;
    CHECK_THROWS_AS(fit(m, make_synthetic(s), g), ConfigError);
  }
}

TEST_CASE("synthetic benchmark data") {
  const Dataset a = make_synthetic({}), b = make_synthetic({});
  CHECK(a.steps == 2000);
  CHECK(a.nodes == 10);
  CHECK(a.channels == 1);
  CHECK(a.data == b.data);
  SyntheticSpec other;
  other.seed = 7;
  CHECK(make_synthetic(other).data != a.data);
  CHECK(ring_edges(4) == EdgeList{{0, 1}, {1, 2}, {2, 3}, {3, 0}});
  double lo = 1e9, hi = -1e9;
  for (float v : a.data) {
    lo = std::min(lo, static_cast<double>(v));
    hi = std::max(hi, static_cast<double>(v));
  }
  CHECK(lo > 40.0);
  CHECK(hi > 160.0);
}
