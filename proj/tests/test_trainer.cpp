#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ptsfa/datagen.hpp"
#include "ptsfa/trainer.hpp"

using namespace ptsfa;

namespace {

Dataset tiny_dataset(int per_class, int m, std::uint64_t seed,
                     bool shifted = false) {
  Dataset ds;
  ds.num_classes = kNumShapeCategories;
  ds.points_per_sample = m;
  Rng rng(seed);
  for (int c = 0; c < ds.num_classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      PointCloudSample s = generate_shape(c, m, rng.next_u64());
      if (shifted) s = apply_shift(s, mild_shift(rng.next_u64()));
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

RunConfig smoke_config() {
  RunConfig cfg;
  cfg.total_epochs = 4;
  cfg.warmup_epochs = 2;
  cfg.epochs_per_stage = 1;
  cfg.seed = 11;
  return cfg;
}

bool params_identical(const ModelParams& a, const ModelParams& b) {
  return a.enc_w1.data == b.enc_w1.data && a.enc_b1 == b.enc_b1 &&
         a.enc_w2.data == b.enc_w2.data && a.enc_b2 == b.enc_b2 &&
         a.cls_w.data == b.cls_w.data && a.cls_b == b.cls_b;
}

}  // namespace

TEST_CASE("config parsing") {
  SECTION("round trip of known keys") {
    std::istringstream in(
        "total_epochs = 20\n"
        "warmup_epochs=4\n"
        "# comment line\n"
        "lr0 = 0.002   # trailing comment\n"
        "seed = 77\n"
        "full_covariance = true\n"
        "source_train = /tmp/s.pcds\n");
    RunConfig cfg = parse_config(in);
    CHECK(cfg.total_epochs == 20);
    CHECK(cfg.warmup_epochs == 4);
    CHECK(cfg.lr0 == 0.002);
    CHECK(cfg.seed == 77);
    CHECK(cfg.full_covariance);
    CHECK(cfg.source_train == "/tmp/s.pcds");
    CHECK(cfg.kappa == 2.0);  // untouched defaults survive
  }
  SECTION("unknown key is fatal and named") {
    std::istringstream in("learning_rate = 0.1\n");
    CHECK_THROWS_WITH(parse_config(in),
                      Catch::Matchers::ContainsSubstring("learning_rate"));
  }
  SECTION("bad value names the key") {
    std::istringstream in("total_epochs = banana\n");
    CHECK_THROWS_WITH(parse_config(in),
                      Catch::Matchers::ContainsSubstring("total_epochs"));
  }
  SECTION("non key=value line is fatal") {
    std::istringstream in("just some words\n");
    CHECK_THROWS_AS(parse_config(in), ConfigError);
  }
}

TEST_CASE("train smoke run") {
  Dataset src = tiny_dataset(2, 16, 1);
  Dataset tgt = tiny_dataset(2, 16, 2, true);
  Dataset tgt_test = tiny_dataset(1, 16, 3, true);
  RunConfig cfg = smoke_config();

  TrainResult res = train(cfg, src, tgt, tgt_test);
  SECTION("one report per epoch, stages laid out after warm-up") {
    REQUIRE(res.epochs.size() == 4);
    CHECK(res.epochs[0].stage == -1);
    CHECK(res.epochs[1].stage == -1);
    CHECK(res.epochs[2].stage == 0);
    CHECK(res.epochs[3].stage == 1);
    CHECK(res.stages.size() == 2);
    CHECK(res.stages[0].sigma_s == 1.0);
    CHECK(res.stages[0].sigma_t == 0.0);
  }
  SECTION("learning rate follows the cosine schedule exactly") {
    for (int t = 0; t < 4; ++t)
      CHECK(res.epochs[t].lr == cosine_lr(t, 4, cfg.lr0));
  }
  SECTION("lambda ramps over the whole run including warm-up") {
    for (int t = 0; t < 4; ++t)
      CHECK(res.epochs[t].lambda == lambda_schedule(t, 4, cfg.lambda0));
  }
  SECTION("loss breakdown keeps the exact weighted-sum identity") {
    for (const EpochReport& r : res.epochs) {
      const double expected = r.losses.alpha * r.losses.ptsfa +
                              r.losses.beta * r.losses.ida_source +
                              r.losses.gamma * r.losses.ida_target;
      CHECK(r.losses.total == expected);
    }
  }
}

TEST_CASE("train determinism") {
  Dataset src = tiny_dataset(2, 16, 1);
  Dataset tgt = tiny_dataset(2, 16, 2, true);
  Dataset tgt_test = tiny_dataset(1, 16, 3, true);
  RunConfig cfg = smoke_config();

  TrainResult a = train(cfg, src, tgt, tgt_test);
  TrainResult b = train(cfg, src, tgt, tgt_test);
  CHECK(params_identical(a.params, b.params));
  REQUIRE(a.epochs.size() == b.epochs.size());
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    CHECK(a.epochs[i].losses.total == b.epochs[i].losses.total);
    CHECK(a.epochs[i].target_test_acc == b.epochs[i].target_test_acc);
  }

  auto dir = std::filesystem::temp_directory_path();
  write_metrics_csv(a.epochs, (dir / "ptsfa_det_a.csv").string());
  write_metrics_csv(b.epochs, (dir / "ptsfa_det_b.csv").string());
  std::ifstream fa(dir / "ptsfa_det_a.csv"), fb(dir / "ptsfa_det_b.csv");
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  CHECK(sa.str() == sb.str());
  std::filesystem::remove(dir / "ptsfa_det_a.csv");
  std::filesystem::remove(dir / "ptsfa_det_b.csv");
}

TEST_CASE("warm-up ignores the target domain") {
  Dataset src = tiny_dataset(2, 16, 1);
  Dataset tgt_a = tiny_dataset(2, 16, 2, true);
  Dataset tgt_b = tiny_dataset(2, 16, 222, true);
  Dataset tgt_test = tiny_dataset(1, 16, 3, true);

  RunConfig cfg;
  cfg.total_epochs = 3;
  cfg.warmup_epochs = 3;  // warm-up-only run
  cfg.seed = 5;
  TrainResult a = train(cfg, src, tgt_a, tgt_test);
  TrainResult b = train(cfg, src, tgt_b, tgt_test);
  CHECK(params_identical(a.params, b.params));
}

TEST_CASE("null objective changes parameters only through weight decay") {
  Dataset src = tiny_dataset(2, 16, 1);
  Dataset tgt = tiny_dataset(2, 16, 2, true);
  Dataset tgt_test = tiny_dataset(1, 16, 3, true);

  RunConfig cfg;
  cfg.total_epochs = 1;
  cfg.warmup_epochs = 0;
  cfg.epochs_per_stage = 1;
  cfg.alpha = 0.0;
  cfg.beta = 0.0;
  cfg.gamma = 0.0;
  cfg.seed = 9;

  SECTION("with zero weight decay the parameters are untouched") {
    cfg.weight_decay = 0.0;
    TrainResult res = train(cfg, src, tgt, tgt_test);
    ModelParams init = ModelParams::init(
        src.num_classes, mix_seed(cfg.seed, detail::kStreamInit));
    CHECK(params_identical(res.params, init));
  }
  SECTION("with weight decay every parameter shrinks geometrically") {
    cfg.weight_decay = 0.01;
    TrainResult res = train(cfg, src, tgt, tgt_test);
    ModelParams init = ModelParams::init(
        src.num_classes, mix_seed(cfg.seed, detail::kStreamInit));
    const int batches = 2;  // 10 samples, batch 8, cycled
    const double lr = cosine_lr(0, 1, cfg.lr0);
    const double factor = std::pow(1.0 - lr * cfg.weight_decay, batches);
    for (std::size_t i = 0; i < init.enc_w1.data.size(); ++i)
      CHECK(res.params.enc_w1.data[i] ==
            Catch::Approx(init.enc_w1.data[i] * factor).margin(1e-15));
  }
}

TEST_CASE("dataset mismatch is a configuration error") {
  Dataset src = tiny_dataset(2, 16, 1);
  Dataset tgt = tiny_dataset(2, 16, 2);
  Dataset tgt_test = tiny_dataset(1, 16, 3);
  RunConfig cfg = smoke_config();

  SECTION("class count") {
    Dataset bad = tgt;
    bad.num_classes = 3;
    for (auto& s : bad.samples) s.label %= 3;
    CHECK_THROWS_AS(train(cfg, src, bad, tgt_test), ConfigError);
  }
  SECTION("points per sample") {
    Dataset bad = tiny_dataset(2, 24, 2);
    CHECK_THROWS_AS(train(cfg, src, bad, tgt_test), ConfigError);
  }
}

TEST_CASE("evaluate") {
  Dataset ds = tiny_dataset(2, 16, 4);
  SECTION("zero-weight model on a balanced set scores 1/C") {
    ModelParams params = ModelParams::init(ds.num_classes, 1);
    EvalResult res = evaluate(params, ds);
    CHECK(res.accuracy == Catch::Approx(0.2));
    for (int c = 0; c < ds.num_classes; ++c) {
      int row_sum = 0;
      for (int p = 0; p < ds.num_classes; ++p) row_sum += res.confusion[c][p];
      CHECK(row_sum == 2);  // per-class sample count
    }
  }
  SECTION("a saturated classifier nails its class") {
    ModelParams params = ModelParams::init(ds.num_classes, 1);
    params.cls_b[3] = 100.0;  // predicts class 3 always
    EvalResult res = evaluate(params, ds);
    CHECK(res.accuracy == Catch::Approx(0.2));
    for (int c = 0; c < ds.num_classes; ++c)
      CHECK(res.confusion[c][3] == 2);
  }
}

TEST_CASE("spl_finetune") {
  Dataset src = tiny_dataset(2, 16, 1);
  Dataset tgt = tiny_dataset(2, 16, 2, true);
  Dataset tgt_test = tiny_dataset(1, 16, 3, true);
  RunConfig cfg;
  cfg.seed = 21;
  cfg.spl_circles = 10;
  cfg.spl_epochs_per_circle = 1;

  ModelParams params = ModelParams::init(src.num_classes, 77);

  SECTION("threshold schedule is 0.80 through 0.89") {
    cfg.lr0 = 0.0;  // frozen parameters
    SplResult res = spl_finetune(params, cfg, src, tgt, tgt_test);
    REQUIRE(res.circles.size() == 10);
    for (int c = 0; c < 10; ++c) {
      CHECK(res.circles[c].threshold ==
            Catch::Approx(0.80 + 0.01 * c).margin(1e-12));
    }
    CHECK(res.circles[0].threshold == 0.80);
    CHECK(res.circles[9].threshold == Catch::Approx(0.89).margin(1e-12));
  }
  SECTION("frozen parameters: selected counts never increase") {
    cfg.lr0 = 0.0;
    cfg.spl_threshold0 = 0.15;  // low enough that some samples clear it
    SplResult res = spl_finetune(params, cfg, src, tgt, tgt_test);
    CHECK(params_identical(res.params, params));
    for (std::size_t c = 1; c < res.circles.size(); ++c)
      CHECK(res.circles[c].selected <= res.circles[c - 1].selected);
  }
  SECTION("threshold beyond 1 selects nothing and the circle still runs") {
    cfg.spl_threshold0 = 1.01;
    cfg.spl_circles = 1;
    SplResult res = spl_finetune(params, cfg, src, tgt, tgt_test);
    REQUIRE(res.circles.size() == 1);
    CHECK(res.circles[0].selected == 0);
  }
}
