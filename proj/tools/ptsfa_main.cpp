// Command-line front end: dataset generation, training, evaluation,
// bound verification and gradient checking.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "ptsfa/ptsfa.hpp"

namespace fs = std::filesystem;
using namespace ptsfa;

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Single-polyline SVG chart of accuracy against epoch; no plotting
// dependency needed for one curve pair.
void write_accuracy_svg(const std::vector<EpochReport>& reports,
                        const std::string& path) {
  const int width = 720, height = 440;
  const int left = 60, right = 20, top = 30, bottom = 50;
  const int plot_w = width - left - right;
  const int plot_h = height - top - bottom;
  const int n = static_cast<int>(reports.size());

  std::ofstream out(path);
  if (!out) throw IoError("write_accuracy_svg: cannot open " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  // axes
  out << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\""
      << left + plot_w << "\" y2=\"" << top + plot_h
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left
      << "\" y2=\"" << top + plot_h << "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 10; tick += 2) {
    const double frac = tick / 10.0;
    const int y = top + plot_h - static_cast<int>(frac * plot_h);
    out << "<line x1=\"" << left - 4 << "\" y1=\"" << y << "\" x2=\"" << left
        << "\" y2=\"" << y << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << left - 8 << "\" y=\"" << y + 4
        << "\" font-size=\"12\" text-anchor=\"end\">" << tick * 10
        << "%</text>\n";
  }
  auto polyline = [&](auto value_of, const char* color) {
    out << "<polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"1.5\" points=\"";
    for (int i = 0; i < n; ++i) {
      const double x =
          left + (n > 1 ? static_cast<double>(i) / (n - 1) : 0.5) * plot_w;
      const double y = top + plot_h - value_of(reports[i]) * plot_h;
      out << x << "," << y << " ";
    }
    out << "\"/>\n";
  };
  polyline([](const EpochReport& r) { return r.target_test_acc; }, "#c0392b");
  polyline([](const EpochReport& r) { return r.source_train_acc; }, "#2980b9");
  out << "<text x=\"" << left + 8 << "\" y=\"" << top + 14
      << "\" font-size=\"12\" fill=\"#c0392b\">target test accuracy</text>\n";
  out << "<text x=\"" << left + 8 << "\" y=\"" << top + 30
      << "\" font-size=\"12\" fill=\"#2980b9\">source train accuracy</text>\n";
  out << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 12
      << "\" font-size=\"12\" text-anchor=\"middle\">epoch</text>\n";
  out << "</svg>\n";
}

struct GenDataOptions {
  std::string out_dir;
  int classes = 5;
  int points = 256;
  int train_per_class = 200;
  int test_per_class = 50;
  std::string preset = "heavy";
  std::uint64_t seed = 42;
  // custom recipe fields
  double jitter = 0.0;
  double dropout = 0.0;
  std::vector<double> scale = {1.0, 1.0, 1.0};
  double occlusion = 0.0;
  double density_bias = 0.0;
};

ShiftRecipe preset_recipe(const GenDataOptions& opt, std::uint64_t seed) {
  if (opt.preset == "mild") return mild_shift(seed);
  if (opt.preset == "heavy") return heavy_shift(seed);
  ShiftRecipe r;
  r.jitter_sigma = opt.jitter;
  r.dropout_fraction = opt.dropout;
  r.anisotropic_scale = {opt.scale[0], opt.scale[1], opt.scale[2]};
  r.occlusion_fraction = opt.occlusion;
  r.density_bias = opt.density_bias;
  r.seed = seed;
  return r;
}

Dataset generate_split(int classes, int per_class, int points,
                       std::uint64_t seed) {
  Dataset ds;
  ds.num_classes = classes;
  ds.points_per_sample = points;
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      const std::uint64_t s =
          mix_seed(seed, static_cast<std::uint64_t>(c) * 1000003u + i);
      ds.samples.push_back(generate_shape(c, points, s));
    }
  }
  return ds;
}

Dataset shift_split(const Dataset& clean, const GenDataOptions& opt,
                    std::uint64_t seed) {
  Dataset ds;
  ds.num_classes = clean.num_classes;
  ds.points_per_sample = clean.points_per_sample;
  for (std::size_t i = 0; i < clean.samples.size(); ++i) {
    ShiftRecipe recipe =
        preset_recipe(opt, mix_seed(seed, static_cast<std::uint64_t>(i)));
    ds.samples.push_back(apply_shift(clean.samples[i], recipe));
  }
  return ds;
}

int run_gen_data(const GenDataOptions& opt) {
  if (opt.classes < 2 || opt.classes > kNumShapeCategories)
    throw RangeError("gen-data: --classes must be in [2, " +
                     std::to_string(kNumShapeCategories) + "]");
  if (opt.preset != "mild" && opt.preset != "heavy" && opt.preset != "custom")
    throw ConfigError("gen-data: unknown preset '" + opt.preset + "'");
  fs::create_directories(opt.out_dir);

  Dataset source_train =
      generate_split(opt.classes, opt.train_per_class, opt.points,
                     mix_seed(opt.seed, 101));
  Dataset source_test =
      generate_split(opt.classes, opt.test_per_class, opt.points,
                     mix_seed(opt.seed, 102));
  Dataset target_clean_train =
      generate_split(opt.classes, opt.train_per_class, opt.points,
                     mix_seed(opt.seed, 103));
  Dataset target_clean_test =
      generate_split(opt.classes, opt.test_per_class, opt.points,
                     mix_seed(opt.seed, 104));
  Dataset target_train =
      shift_split(target_clean_train, opt, mix_seed(opt.seed, 203));
  Dataset target_test =
      shift_split(target_clean_test, opt, mix_seed(opt.seed, 204));

  const fs::path dir(opt.out_dir);
  write_dataset(source_train, (dir / "source_train.pcds").string());
  write_dataset(source_test, (dir / "source_test.pcds").string());
  write_dataset(target_train, (dir / "target_train.pcds").string());
  write_dataset(target_test, (dir / "target_test.pcds").string());

  ShiftRecipe recipe = preset_recipe(opt, 0);
  std::ofstream manifest(dir / "manifest.txt");
  manifest << "classes=" << opt.classes << "\n"
           << "points=" << opt.points << "\n"
           << "train_per_class=" << opt.train_per_class << "\n"
           << "test_per_class=" << opt.test_per_class << "\n"
           << "seed=" << opt.seed << "\n"
           << "shift_preset=" << opt.preset << "\n"
           << "jitter_sigma=" << fmt_double(recipe.jitter_sigma) << "\n"
           << "dropout_fraction=" << fmt_double(recipe.dropout_fraction) << "\n"
           << "anisotropic_scale=" << fmt_double(recipe.anisotropic_scale[0])
           << "," << fmt_double(recipe.anisotropic_scale[1]) << ","
           << fmt_double(recipe.anisotropic_scale[2]) << "\n"
           << "occlusion_fraction=" << fmt_double(recipe.occlusion_fraction)
           << "\n"
           << "density_bias=" << fmt_double(recipe.density_bias) << "\n";

  std::cout << "wrote 4 splits + manifest to " << opt.out_dir << "\n";
  return 0;
}

int run_train(const std::string& config_path, const std::string& out_dir) {
  RunConfig cfg = load_config(config_path);
  fs::create_directories(out_dir);
  TrainResult res = train(cfg);

  const fs::path dir(out_dir);
  write_metrics_csv(res.epochs, (dir / "metrics.csv").string());
  Dataset probe = read_dataset(cfg.source_train);
  write_stages_csv(res.stages, probe.num_classes, (dir / "stages.csv").string());
  save_checkpoint(res.params, (dir / "checkpoint.ptck").string());
  write_accuracy_svg(res.epochs, (dir / "accuracy.svg").string());

  const EpochReport& last = res.epochs.back();
  std::cout << "finished " << res.epochs.size() << " epochs; final source acc "
            << last.source_train_acc << ", target acc " << last.target_test_acc
            << "\n";
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& dataset_path,
             const std::string& out_csv) {
  ModelParams params = load_checkpoint(ckpt);
  Dataset dataset = read_dataset(dataset_path);
  EvalResult res = evaluate(params, dataset);
  write_confusion_csv(res, out_csv);
  std::cout << "accuracy " << fmt_double(res.accuracy) << " on "
            << dataset.samples.size() << " samples; confusion written to "
            << out_csv << "\n";
  return 0;
}

int run_spl(const std::string& ckpt, const std::string& config_path,
            const std::string& out_dir) {
  RunConfig cfg = load_config(config_path);
  ModelParams params = load_checkpoint(ckpt);
  Dataset src = read_dataset(cfg.source_train);
  Dataset tgt_train = read_dataset(cfg.target_train);
  Dataset tgt_test = read_dataset(cfg.target_test);
  fs::create_directories(out_dir);
  SplResult res = spl_finetune(params, cfg, src, tgt_train, tgt_test);
  const fs::path dir(out_dir);
  save_checkpoint(res.params, (dir / "spl_checkpoint.ptck").string());
  write_spl_csv(res.circles, (dir / "spl_metrics.csv").string());
  for (const SplCircleReport& c : res.circles)
    std::cout << "circle " << c.circle << ": threshold "
              << fmt_double(c.threshold) << ", selected " << c.selected
              << ", target acc " << fmt_double(c.target_test_acc) << "\n";
  return 0;
}

int run_verify_bound(int instances, int draws, std::uint64_t seed,
                     const std::string& out_path) {
  std::vector<BoundRow> rows = verify_bound_suite(instances, draws, seed);
  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw IoError("verify-bound: cannot open " + out_path);
    out = &file;
  }
  *out << "instance,estimate,se,closed_form,pass\n";
  int passed = 0;
  for (const BoundRow& r : rows) {
    *out << r.instance << ',' << fmt_double(r.estimate) << ','
         << fmt_double(r.se) << ',' << fmt_double(r.closed_form) << ','
         << (r.pass ? 1 : 0) << "\n";
    if (r.pass) ++passed;
  }
  std::cout << passed << "/" << rows.size() << " bound instances pass\n";
  return passed == static_cast<int>(rows.size()) ? 0 : 1;
}

int run_grad_check(int trials, std::uint64_t seed) {
  std::vector<GradSuiteResult> suites = gradient_check_suites(trials, seed);
  bool ok = true;
  double worst = 0.0;
  for (const GradSuiteResult& s : suites) {
    const bool pass = s.max_rel_err < 1e-4;
    ok = ok && pass;
    worst = std::max(worst, s.max_rel_err);
    std::cout << s.name << ": max relative error " << fmt_double(s.max_rel_err)
              << " over " << s.trials << " trials "
              << (pass ? "[pass]" : "[FAIL]") << "\n";
  }
  std::cout << "max relative error " << fmt_double(worst) << " ("
            << (ok ? "pass" : "FAIL") << ", tolerance 1e-4)\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"progressive target-styled feature augmentation toolkit"};
  app.require_subcommand(1);

  GenDataOptions gen;
  CLI::App* cmd_gen = app.add_subcommand("gen-data",
                                         "generate a synthetic source/target "
                                         "benchmark in the PCDS format");
  cmd_gen->add_option("--out", gen.out_dir, "output directory")->required();
  cmd_gen->add_option("--classes", gen.classes, "number of shape categories");
  cmd_gen->add_option("--points", gen.points, "points per sample");
  cmd_gen->add_option("--train-per-class", gen.train_per_class,
                      "training samples per class");
  cmd_gen->add_option("--test-per-class", gen.test_per_class,
                      "test samples per class");
  cmd_gen->add_option("--shift-preset", gen.preset, "mild|heavy|custom");
  cmd_gen->add_option("--seed", gen.seed, "master seed");
  cmd_gen->add_option("--jitter", gen.jitter, "custom preset: jitter sigma");
  cmd_gen->add_option("--dropout", gen.dropout,
                      "custom preset: dropout fraction");
  cmd_gen->add_option("--scale", gen.scale, "custom preset: x y z scale")
      ->expected(3);
  cmd_gen->add_option("--occlusion", gen.occlusion,
                      "custom preset: occlusion fraction");
  cmd_gen->add_option("--density-bias", gen.density_bias,
                      "custom preset: density bias strength");

  std::string train_config, train_out;
  CLI::App* cmd_train =
      app.add_subcommand("train", "run the full adaptation training loop");
  cmd_train->add_option("--config", train_config, "key=value config file")
      ->required();
  cmd_train->add_option("--out", train_out, "output directory")->required();

  std::string eval_ckpt, eval_dataset, eval_out = "confusion.csv";
  CLI::App* cmd_eval =
      app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  cmd_eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  cmd_eval->add_option("--dataset", eval_dataset, "PCDS dataset")->required();
  cmd_eval->add_option("--out", eval_out, "confusion matrix csv path");

  std::string spl_ckpt, spl_config, spl_out;
  CLI::App* cmd_spl = app.add_subcommand(
      "spl", "self-paced fine-tuning of a trained checkpoint");
  cmd_spl->add_option("--ckpt", spl_ckpt, "checkpoint file")->required();
  cmd_spl->add_option("--config", spl_config, "key=value config file")
      ->required();
  cmd_spl->add_option("--out", spl_out, "output directory")->required();

  int vb_instances = 100;
  int vb_draws = 100000;
  std::uint64_t vb_seed = 7;
  std::string vb_out;
  CLI::App* cmd_vb = app.add_subcommand(
      "verify-bound",
      "Monte-Carlo check that the closed-form loss upper-bounds the "
      "finite-sample augmented loss");
  cmd_vb->add_option("--instances", vb_instances, "number of random instances")
      ->check(CLI::PositiveNumber);
  cmd_vb->add_option("--draws", vb_draws, "Monte-Carlo draws per instance")
      ->check(CLI::PositiveNumber);
  cmd_vb->add_option("--seed", vb_seed, "suite seed");
  cmd_vb->add_option("--out", vb_out, "write the CSV here instead of stdout");

  int gc_trials = 50;
  std::uint64_t gc_seed = 7;
  CLI::App* cmd_gc = app.add_subcommand(
      "grad-check", "finite-difference checks over all losses and the model");
  cmd_gc->add_option("--trials", gc_trials, "trials per suite")
      ->check(CLI::PositiveNumber);
  cmd_gc->add_option("--seed", gc_seed, "suite seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_gen->parsed()) return run_gen_data(gen);
    if (cmd_train->parsed()) return run_train(train_config, train_out);
    if (cmd_eval->parsed()) return run_eval(eval_ckpt, eval_dataset, eval_out);
    if (cmd_spl->parsed()) return run_spl(spl_ckpt, spl_config, spl_out);
    if (cmd_vb->parsed())
      return run_verify_bound(vb_instances, vb_draws, vb_seed, vb_out);
    if (cmd_gc->parsed()) return run_grad_check(gc_trials, gc_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
