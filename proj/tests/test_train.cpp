#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "pixnet/checkpoint.hpp"
#include "pixnet/train.hpp"

using namespace pixnet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("pixnet_train_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
  static int counter;
};
int TempDir::counter = 0;

// small synthetic task shared by the training tests
template <typename S>
Dataset<S> small_dataset(ModelConfig* cfg_out = nullptr, std::uint64_t seed = 5) {
  SynthParams p;
  p.height = 32;
  p.width = 32;
  p.genes = 4;
  p.n_spots = 16;
  p.radius_px = 3;
  p.seed = seed;
  SynthResult r = synth_generate(p);
  if (cfg_out) {
    *cfg_out = ModelConfig::toy(32, 32, 4);
    cfg_out->encoder.embed_dim = 16;
  }
  return make_dataset<S>(r.image, r.table);
}

template <typename S>
bool params_equal(const ParamMap<S>& a, const ParamMap<S>& b) {
  if (a.items.size() != b.items.size()) return false;
  for (std::size_t i = 0; i < a.items.size(); ++i)
    if (a.items[i].second.value() != b.items[i].second.value()) return false;
  return true;
}

}  // namespace

TEST_CASE("adamw: zero gradient and zero decay is a fixed point") {
  ParamMap<double> params;
  auto w = Tensor<double>::from({3}, {1.0, -2.0, 0.5});
  w.set_requires_grad(true);
  w.ensure_grad();
  params.add("w", w);
  AdamWState<double> state;
  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.0;
  adamw_step(params, state, cfg);
  CHECK(w.value() == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("adamw: decoupled decay shrinks weights by lr*wd") {
  ParamMap<double> params;
  auto w = Tensor<double>::from({2}, {2.0, -4.0});
  w.set_requires_grad(true);
  w.ensure_grad();
  params.add("w", w);
  AdamWState<double> state;
  TrainConfig cfg;
  cfg.lr = 1.0;
  cfg.weight_decay = 0.1;
  adamw_step(params, state, cfg);
  CHECK(w.value()[0] == doctest::Approx(1.8).epsilon(1e-12));
  CHECK(w.value()[1] == doctest::Approx(-3.6).epsilon(1e-12));
}

TEST_CASE("adamw: one bias-corrected step moves by about lr") {
  ParamMap<double> params;
  auto w = Tensor<double>::from({1}, {0.7});
  w.set_requires_grad(true);
  w.ensure_grad();
  w.grad()[0] = 1.0;
  params.add("w", w);
  AdamWState<double> state;
  TrainConfig cfg;
  cfg.lr = 5e-4;
  cfg.weight_decay = 0.0;
  adamw_step(params, state, cfg);
  CHECK(w.value()[0] == doctest::Approx(0.7 - 5e-4).epsilon(1e-6));
}

TEST_CASE("adamw: non-finite gradient names the parameter") {
  ParamMap<double> params;
  auto w = Tensor<double>::from({1}, {0.0});
  w.set_requires_grad(true);
  w.ensure_grad();
  w.grad()[0] = std::numeric_limits<double>::quiet_NaN();
  params.add("encoder.pos", w);
  AdamWState<double> state;
  TrainConfig cfg;
  try {
    adamw_step(params, state, cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("encoder.pos") != std::string::npos);
  }
}

TEST_CASE("lr = 0 leaves the model bitwise unchanged after an epoch") {
  ModelConfig cfg;
  Dataset<float> data = small_dataset<float>(&cfg);
  PixNetModel<float> model(cfg, 42);
  std::vector<std::vector<float>> before;
  for (const auto& [n, t] : model.params().items) before.push_back(t.value());

  TrainConfig tcfg;
  tcfg.lr = 0.0;
  tcfg.weight_decay = 0.0;
  tcfg.epochs = 1;
  train(model, data, tcfg);

  ParamMap<float> params = model.params();
  for (std::size_t i = 0; i < params.items.size(); ++i)
    CHECK(params.items[i].second.value() == before[i]);
}

TEST_CASE("two runs with the same seed produce bitwise-identical loss logs") {
  ModelConfig cfg;
  Dataset<float> data = small_dataset<float>(&cfg);
  TrainConfig tcfg;
  tcfg.epochs = 5;
  tcfg.seed = 42;

  PixNetModel<float> m1(cfg, tcfg.seed);
  auto log1 = train(m1, data, tcfg);
  PixNetModel<float> m2(cfg, tcfg.seed);
  auto log2 = train(m2, data, tcfg);

  REQUIRE(log1.size() == log2.size());
  for (std::size_t i = 0; i < log1.size(); ++i) {
    CHECK(log1[i].loss == log2[i].loss);
    CHECK(log1[i].mse == log2[i].mse);
    CHECK(log1[i].pcc_m == log2[i].pcc_m);
  }
}

TEST_CASE("spot minibatching subsamples deterministically") {
  ModelConfig cfg;
  Dataset<float> data = small_dataset<float>(&cfg);
  TrainConfig tcfg;
  tcfg.epochs = 3;
  tcfg.batch_spots = 5;
  PixNetModel<float> m1(cfg, 1);
  auto log1 = train(m1, data, tcfg);
  PixNetModel<float> m2(cfg, 1);
  auto log2 = train(m2, data, tcfg);
  for (std::size_t i = 0; i < log1.size(); ++i) CHECK(log1[i].loss == log2[i].loss);
}

TEST_CASE("training reduces the loss on a small task") {
  ModelConfig cfg;
  Dataset<float> data = small_dataset<float>(&cfg);
  TrainConfig tcfg;
  tcfg.epochs = 40;
  PixNetModel<float> model(cfg, 42);
  auto log = train(model, data, tcfg);
  CHECK(log.back().loss < 0.5 * log.front().loss);
}

TEST_CASE("checkpoint round trip reproduces all tensors bitwise") {
  TempDir dir;
  ModelConfig cfg = ModelConfig::toy(32, 32, 4);
  cfg.encoder.embed_dim = 16;
  PixNetModel<float> model(cfg, 7);
  save_checkpoint(dir.file("m.pixc"), model);
  auto bundle = load_checkpoint<float>(dir.file("m.pixc"));
  CHECK(params_equal(model.params(), bundle.model->params()));
  CHECK_FALSE(bundle.optimizer.has_value());
}

TEST_CASE("checkpoint keeps optimizer moments when asked") {
  TempDir dir;
  ModelConfig cfg;
  Dataset<float> data = small_dataset<float>(&cfg);
  PixNetModel<float> model(cfg, 7);
  TrainConfig tcfg;
  tcfg.epochs = 2;
  AdamWState<float> state;
  train(model, data, tcfg, &state);
  save_checkpoint(dir.file("m.pixc"), model, {}, &state);
  auto bundle = load_checkpoint<float>(dir.file("m.pixc"));
  REQUIRE(bundle.optimizer.has_value());
  CHECK(bundle.optimizer->step == state.step);
  CHECK(bundle.optimizer->m == state.m);
  CHECK(bundle.optimizer->v == state.v);
}

TEST_CASE("checkpoint validation: magic, truncation, unknown tensors") {
  TempDir dir;
  ModelConfig cfg = ModelConfig::toy(32, 32, 4);
  cfg.encoder.embed_dim = 16;
  PixNetModel<float> model(cfg, 7);
  save_checkpoint(dir.file("m.pixc"), model);

  auto bytes = io::read_file(dir.file("m.pixc"));
  auto corrupt = bytes;
  corrupt[0] = 'X';
  io::write_file(dir.file("bad_magic.pixc"), corrupt);
  CHECK_THROWS_AS(load_checkpoint<float>(dir.file("bad_magic.pixc")), DataError);

  auto trunc = bytes;
  trunc.resize(trunc.size() / 2);
  io::write_file(dir.file("trunc.pixc"), trunc);
  CHECK_THROWS_AS(load_checkpoint<float>(dir.file("trunc.pixc")), DataError);

  CHECK_THROWS_AS(load_checkpoint<float>(dir.file("missing.pixc")), DataError);
}

TEST_CASE("prediction after checkpoint round trip is bitwise identical") {
  TempDir dir;
  SynthParams p;
  p.height = 32;
  p.width = 32;
  p.genes = 4;
  p.n_spots = 9;
  p.radius_px = 3;
  p.seed = 3;
  SynthResult r = synth_generate(p);
  ModelConfig cfg = ModelConfig::toy(32, 32, 4);
  cfg.encoder.embed_dim = 16;
  PixNetModel<float> model(cfg, 11);
  Tensor<float> image = r.image.to_tensor<float>();
  Tensor<float> before = model.forward(image);
  save_checkpoint(dir.file("m.pixc"), model);
  auto bundle = load_checkpoint<float>(dir.file("m.pixc"));
  Tensor<float> after = bundle.model->forward(image);
  CHECK(before.value() == after.value());
}

TEST_CASE("evaluate with a radius override equal to the original is bitwise identical") {
  ModelConfig cfg;
  Dataset<float> data = small_dataset<float>(&cfg);
  PixNetModel<float> model(cfg, 13);
  MetricsReport plain = evaluate(model, data);
  MetricsReport same = evaluate(model, data, 3.0);  // the dataset radius
  CHECK(plain.mse == same.mse);
  CHECK(plain.mae == same.mae);
  CHECK(plain.pcc_m == same.pcc_m);
  MetricsReport bigger = evaluate(model, data, 5.0);
  CHECK(bigger.mse != plain.mse);
}

TEST_CASE("zeroed head makes evaluation match the closed-form constant predictor") {
  ModelConfig cfg;
  Dataset<float> data = small_dataset<float>(&cfg);
  PixNetModel<float> model(cfg, 17);
  ParamMap<float> params = model.params();
  for (auto& v : params.find("decoder.head.weight")->value()) v = 0.0f;
  for (auto& v : params.find("decoder.head.bias")->value()) v = 0.0f;

  MetricsReport rep = evaluate(model, data);
  const auto& targets = data.slides[0].targets;
  double want = 0.0;
  for (float t : targets.value()) want += static_cast<double>(t) * static_cast<double>(t);
  want /= static_cast<double>(targets.size());
  CHECK(rep.mse == doctest::Approx(want).epsilon(1e-6));
  CHECK(rep.n_degenerate_genes == data.genes());  // constant predictions everywhere
}

TEST_CASE("loss gradient vanishes exactly outside the union of spot masks") {
  ModelConfig cfg;
  Dataset<float> data = small_dataset<float>(&cfg);
  PixNetModel<float> model(cfg, 19);
  const auto& slide = data.slides[0];

  Tensor<float> map = model.forward(slide.image);
  Tensor<float> pred = aggregate_spots(map, slide.masks);
  Tensor<float> loss = combined_loss(pred, slide.targets, 0.5f);
  loss.backward();

  std::vector<bool> covered(static_cast<std::size_t>(32 * 32), false);
  for (const auto& mask : slide.masks)
    for (int idx : mask) covered[static_cast<std::size_t>(idx)] = true;

  REQUIRE(map.has_grad());
  bool some_inside_nonzero = false;
  for (int g = 0; g < 4; ++g)
    for (int i = 0; i < 32; ++i)
      for (int j = 0; j < 32; ++j) {
        const float gv = map.grad()[(static_cast<std::size_t>(g) * 32 + i) * 32 + j];
        if (!covered[static_cast<std::size_t>(i * 32 + j)])
          CHECK(gv == 0.0f);
        else
          some_inside_nonzero = some_inside_nonzero || gv != 0.0f;
      }
  CHECK(some_inside_nonzero);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.lr = -1;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg = TrainConfig{};
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
}

TEST_CASE("model config conversion round trips through key-values") {
  ModelConfig cfg = ModelConfig::full(128, 96, 250);
  KeyValues kv = model_config_to_kv(cfg);
  ModelConfig back = model_config_from_kv(kv);
  CHECK(back.encoder.patch_size == cfg.encoder.patch_size);
  CHECK(back.encoder.embed_dim == cfg.encoder.embed_dim);
  CHECK(back.encoder.levels == cfg.encoder.levels);
  CHECK(back.decoder.filter_sizes == cfg.decoder.filter_sizes);
  CHECK(back.decoder.genes == cfg.decoder.genes);
  CHECK(back.decoder.shallow_threshold == cfg.decoder.shallow_threshold);
  CHECK(kv.get_int("bn_batch_stats", 0) == 1);
}
