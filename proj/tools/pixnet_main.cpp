// pixnet command line: synthetic-data generation, training, dense-map
// prediction, multi-resolution evaluation and the gradient self-check.
// Exit codes: 0 success, 2 argument error, 3 data error, 4 numeric failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "pixnet/checkpoint.hpp"
#include "pixnet/configfile.hpp"
#include "pixnet/data.hpp"
#include "pixnet/gradcheck_suite.hpp"
#include "pixnet/io/gexm.hpp"
#include "pixnet/io/heatmap.hpp"
#include "pixnet/model.hpp"
#include "pixnet/train.hpp"

namespace fs = std::filesystem;
using Scalar = float;  // checkpoint-native precision for the CLI paths

namespace {

struct SynthArgs {
  std::string out;
  int height = 64, width = 64, genes = 8, spots = 32;
  double radius = 4.0;
  std::uint64_t seed = 42;
  int heldout = 0;
  double heldout_radius = 0.0;
};

struct TrainArgs {
  std::string data, config, out = "model.pixc";
  std::optional<int> epochs;
  std::optional<double> lr, weight_decay, lambda;
  std::optional<std::uint64_t> seed;
};

struct PredictArgs {
  std::string ckpt, slide, out = "map.gexm";
  std::string heatmap_dir;
  int gene_index = -1;
};

struct EvalArgs {
  std::string ckpt, data, report;
  std::optional<double> radius_px;
};

std::string find_slide(const std::string& dir) {
  for (const char* name : {"slide.png", "slide.ppm"}) {
    const fs::path p = fs::path(dir) / name;
    if (fs::exists(p)) return p.string();
  }
  throw pixnet::DataError(dir + ": no slide.png or slide.ppm found");
}

int run_synth(const SynthArgs& args) {
  pixnet::SynthParams params;
  params.height = args.height;
  params.width = args.width;
  params.genes = args.genes;
  params.n_spots = args.spots;
  params.radius_px = args.radius;
  params.seed = args.seed;
  pixnet::SynthResult result = pixnet::synth_generate(params);

  fs::create_directories(args.out);
  const fs::path dir(args.out);
  pixnet::save_slide_ppm((dir / "slide.ppm").string(), result.image);
  pixnet::save_spot_table((dir / "spots.csv").string(), result.table);
  pixnet::io::write_gexm((dir / "truth.gexm").string(), pixnet::truth_to_gexm(result.truth));
  if (args.heldout > 0) {
    const double r = args.heldout_radius > 0 ? args.heldout_radius : args.radius;
    pixnet::SpotTable held =
        pixnet::synth_spots_from_truth(result.truth, args.heldout, r, args.seed + 1);
    pixnet::save_spot_table((dir / "spots_heldout.csv").string(), held);
  }
  std::cout << "wrote " << args.out << ": slide.ppm slide.meta spots.csv truth.gexm"
            << (args.heldout > 0 ? " spots_heldout.csv" : "") << "\n";
  return 0;
}

int run_train(const TrainArgs& args) {
  pixnet::KeyValues cfg;
  if (!args.config.empty()) cfg = pixnet::KeyValues::load(args.config);

  const std::string slide_path = find_slide(args.data);
  pixnet::SlideImage slide = pixnet::load_slide(slide_path);
  pixnet::SpotTable table =
      pixnet::load_spot_table((fs::path(args.data) / "spots.csv").string(), slide.meta);

  const std::string preprocess = cfg.get("preprocess", "none");
  if (preprocess == "lognorm") {
    const int top_k = static_cast<int>(cfg.get_int("top_k", std::min(250, table.genes())));
    table = pixnet::preprocess_genes(table, top_k, cfg.get_double("scale_s", 1e4),
                                     cfg.get_bool("sum_before_selection", false));
  } else if (preprocess != "none") {
    throw pixnet::ArgumentError("config: preprocess must be none or lognorm");
  }

  pixnet::ModelConfig mcfg = pixnet::ModelConfig::toy(slide.h, slide.w, table.genes());
  {
    // structural keys from the config file override the toy defaults
    pixnet::KeyValues base = pixnet::model_config_to_kv(mcfg);
    for (const auto& [k, v] : cfg.items()) base.set(k, v);
    base.set_int("genes", table.genes());
    base.set_int("input_h", slide.h);
    base.set_int("input_w", slide.w);
    mcfg = pixnet::model_config_from_kv(base);
  }

  pixnet::TrainConfig tcfg;
  tcfg.lr = args.lr.value_or(cfg.get_double("lr", tcfg.lr));
  tcfg.weight_decay = args.weight_decay.value_or(cfg.get_double("weight_decay", tcfg.weight_decay));
  tcfg.epochs = args.epochs.value_or(static_cast<int>(cfg.get_int("epochs", tcfg.epochs)));
  tcfg.lambda = args.lambda.value_or(cfg.get_double("lambda", tcfg.lambda));
  tcfg.use_mse = cfg.get_bool("use_mse", true);
  tcfg.use_pcc = cfg.get_bool("use_pcc", true);
  tcfg.batch_spots = static_cast<int>(cfg.get_int("batch_spots", 0));
  tcfg.seed = args.seed.value_or(static_cast<std::uint64_t>(cfg.get_int("seed", 42)));
  tcfg.validate();

  pixnet::PixNetModel<Scalar> model(mcfg, tcfg.seed);
  pixnet::Dataset<Scalar> data = pixnet::make_dataset<Scalar>(slide, table);

  const auto t0 = std::chrono::steady_clock::now();
  pixnet::train<Scalar>(model, data, tcfg, nullptr, &std::cout);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  pixnet::KeyValues extra;
  extra.set_int("train_seed", static_cast<long>(tcfg.seed));
  extra.set_double("train_lr", tcfg.lr);
  extra.set_double("train_lambda", tcfg.lambda);
  extra.set_int("train_epochs", tcfg.epochs);
  pixnet::save_checkpoint(args.out, model, extra);
  std::cout << "trained " << tcfg.epochs << " epoch(s) in " << secs << " s, checkpoint: "
            << args.out << "\n";
  return 0;
}

int run_predict(const PredictArgs& args) {
  auto bundle = pixnet::load_checkpoint<Scalar>(args.ckpt);
  pixnet::SlideImage slide = pixnet::load_slide(args.slide);
  pixnet::Tensor<Scalar> image = slide.to_tensor<Scalar>();
  pixnet::Tensor<Scalar> map = bundle.model->forward(image);

  pixnet::io::GexmRaster raster;
  raster.h = map.extent(1);
  raster.w = map.extent(2);
  raster.m = map.extent(0);
  raster.values.resize(map.size());
  for (int i = 0; i < raster.h; ++i)
    for (int j = 0; j < raster.w; ++j)
      for (int g = 0; g < raster.m; ++g)
        raster.at(i, j, g) = static_cast<float>(map.at(g, i, j));
  pixnet::io::write_gexm(args.out, raster);
  std::cout << "wrote " << args.out << " (" << raster.h << "x" << raster.w << "x" << raster.m
            << ")\n";

  if (!args.heatmap_dir.empty()) {
    fs::create_directories(args.heatmap_dir);
    if (args.gene_index >= 0) {
      const fs::path p = fs::path(args.heatmap_dir) / ("gene_" + std::to_string(args.gene_index) + ".png");
      pixnet::io::export_heatmap(raster, args.gene_index, p.string());
      std::cout << "wrote " << p.string() << "\n";
    } else {
      for (int g = 0; g < raster.m; ++g) {
        const fs::path p = fs::path(args.heatmap_dir) / ("gene_" + std::to_string(g) + ".png");
        pixnet::io::export_heatmap(raster, g, p.string());
      }
      std::cout << "wrote " << raster.m << " heatmaps to " << args.heatmap_dir << "\n";
    }
  }
  return 0;
}

int run_eval(const EvalArgs& args) {
  auto bundle = pixnet::load_checkpoint<Scalar>(args.ckpt);
  const std::string slide_path = find_slide(args.data);
  pixnet::SlideImage slide = pixnet::load_slide(slide_path);
  pixnet::SpotTable table =
      pixnet::load_spot_table((fs::path(args.data) / "spots.csv").string(), slide.meta);
  pixnet::Dataset<Scalar> data = pixnet::make_dataset<Scalar>(slide, table);

  std::optional<double> override_px;
  if (args.radius_px) override_px = *args.radius_px;
  pixnet::MetricsReport rep = pixnet::evaluate(*bundle.model, data, override_px);

  std::string csv = "metric,value\n";
  char buf[64];
  auto row = [&](const char* name, double v) {
    std::snprintf(buf, sizeof buf, "%s,%.17g\n", name, v);
    csv += buf;
  };
  row("mse", rep.mse);
  row("mae", rep.mae);
  row("pcc_f", rep.pcc_f);
  row("pcc_s", rep.pcc_s);
  row("pcc_m", rep.pcc_m);
  csv += "n_degenerate_genes," + std::to_string(rep.n_degenerate_genes) + "\n";
  if (!args.report.empty()) {
    std::ofstream out(args.report, std::ios::trunc);
    if (!out) throw pixnet::DataError("cannot write report: " + args.report);
    out << csv;
  }
  std::cout << csv;
  return 0;
}

int run_gradcheck(std::uint64_t seed) {
  const auto results = pixnet::run_gradcheck_suite(seed);
  bool all = true;
  for (const auto& r : results) {
    std::printf("%-24s max rel err %.3e  %s\n", r.name.c_str(), r.max_rel_err,
                r.pass ? "pass" : "FAIL");
    all = all && r.pass;
  }
  if (!all) throw pixnet::NumericError("gradient check failed");
  std::cout << "all " << results.size() << " gradient checks pass\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dense spatial gene-expression prediction from slide images"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate a synthetic slide dataset");
  synth->add_option("--out", synth_args.out, "output directory")->required();
  synth->add_option("--height", synth_args.height, "slide height in pixels");
  synth->add_option("--width", synth_args.width, "slide width in pixels");
  synth->add_option("--genes", synth_args.genes, "number of genes");
  synth->add_option("--spots", synth_args.spots, "number of spots");
  synth->add_option("--radius", synth_args.radius, "spot radius in pixels");
  synth->add_option("--seed", synth_args.seed, "random seed");
  synth->add_option("--heldout", synth_args.heldout, "also emit N held-out spots");
  synth->add_option("--heldout-radius", synth_args.heldout_radius,
                    "held-out spot radius (defaults to --radius)");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train on a dataset directory");
  train->add_option("--data", train_args.data, "dataset directory")->required();
  train->add_option("--config", train_args.config, "key = value config file");
  train->add_option("--out", train_args.out, "checkpoint output path");
  train->add_option("--epochs", train_args.epochs, "training epochs");
  train->add_option("--lr", train_args.lr, "learning rate");
  train->add_option("--weight-decay", train_args.weight_decay, "decoupled weight decay");
  train->add_option("--lambda", train_args.lambda, "PCC loss weight");
  train->add_option("--seed", train_args.seed, "random seed");

  PredictArgs predict_args;
  auto* predict = app.add_subcommand("predict", "decode a dense expression map");
  predict->add_option("--ckpt", predict_args.ckpt, "checkpoint path")->required();
  predict->add_option("--slide", predict_args.slide, "slide image (PNG or PPM)")->required();
  predict->add_option("--out", predict_args.out, "output GEXM raster path");
  predict->add_option("--heatmap-dir", predict_args.heatmap_dir, "export per-gene heatmaps here");
  predict->add_option("--gene-index", predict_args.gene_index, "export only this gene's heatmap");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint against a spot table");
  eval->add_option("--ckpt", eval_args.ckpt, "checkpoint path")->required();
  eval->add_option("--data", eval_args.data, "dataset directory")->required();
  eval->add_option("--radius-px", eval_args.radius_px, "override every spot radius (pixels)");
  eval->add_option("--report", eval_args.report, "write metric,value CSV here");

  std::uint64_t gradcheck_seed = 42;
  auto* gradcheck = app.add_subcommand("gradcheck", "run the gradient self-check suite");
  gradcheck->add_option("--seed", gradcheck_seed, "random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints usage, exit 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) return run_synth(synth_args);
    if (train->parsed()) return run_train(train_args);
    if (predict->parsed()) return run_predict(predict_args);
    if (eval->parsed()) return run_eval(eval_args);
    if (gradcheck->parsed()) return run_gradcheck(gradcheck_seed);
  } catch (const pixnet::ArgumentError& e) {
    std::cerr << "argument error: " << e.what() << "\n";
    return 2;
  } catch (const pixnet::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const pixnet::DimensionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const pixnet::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
