// Acceptance suite: one pass/fail line per criterion, exit 0 only if all
// pass. Training-based criteria run at 32-bit (training precision); the
// gradient suite and oracle comparisons run at 64-bit.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "pixnet/checkpoint.hpp"
#include "pixnet/data.hpp"
#include "pixnet/gradcheck_suite.hpp"
#include "pixnet/io/gexm.hpp"
#include "pixnet/model.hpp"
#include "pixnet/objective.hpp"
#include "pixnet/spots.hpp"
#include "pixnet/train.hpp"

using namespace pixnet;

namespace {

struct Result {
  int id;
  std::string title;
  bool pass;
  std::string detail;
  double seconds;
};

std::vector<Result> g_results;

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

template <typename Fn>
void criterion(int id, const std::string& title, Fn&& fn) {
  Result r;
  r.id = id;
  r.title = title;
  const double t0 = now_seconds();
  try {
    r.pass = fn(r.detail);
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = now_seconds() - t0;
  std::printf("[%s] criterion %d: %-28s %s (%.1f s)\n", r.pass ? "PASS" : "FAIL", id,
              title.c_str(), r.detail.c_str(), r.seconds);
  std::fflush(stdout);
  g_results.push_back(std::move(r));
}

// the standard criterion-4 synthetic task
SynthParams overfit_task(double radius_px) {
  SynthParams p;
  p.height = 96;
  p.width = 96;
  p.genes = 16;
  p.n_spots = 64;
  p.radius_px = radius_px;
  p.seed = 42;
  return p;
}

ModelConfig overfit_model_config() { return ModelConfig::toy(96, 96, 16); }

// training PCC@M after a run with the given objective switches
double train_and_eval_pcc(const Dataset<float>& data, std::uint64_t seed, bool use_mse,
                          bool use_pcc, double lambda) {
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.seed = seed;
  cfg.lambda = lambda;
  cfg.use_mse = use_mse;
  cfg.use_pcc = use_pcc;
  PixNetModel<float> model(overfit_model_config(), seed);
  train(model, data, cfg);
  return evaluate(model, data).pcc_m;
}

char buf[256];

}  // namespace

// 1. every differentiable op passes 64-bit central-difference checks
static bool criterion1(std::string& detail) {
  const double t0 = now_seconds();
  const auto results = run_gradcheck_suite(42);
  double worst = 0;
  bool all = true;
  for (const auto& r : results) {
    worst = std::max(worst, r.max_rel_err);
    all = all && r.pass;
  }
  const double secs = now_seconds() - t0;
  std::snprintf(buf, sizeof buf, "%zu checks, max rel err %.2e, %.1f s", results.size(), worst,
                secs);
  detail = buf;
  return all && secs < 120.0;
}

// 2. aggregation equals brute force exactly; metrics match direct oracles
static bool criterion2(std::string& detail) {
  Rng rng(2024);
  int agg_fail = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int h = 6 + static_cast<int>(rng.below(8));
    const int w = 6 + static_cast<int>(rng.below(8));
    const int m = 1 + static_cast<int>(rng.below(4));
    std::vector<double> mv(static_cast<std::size_t>(m) * h * w);
    for (auto& v : mv) v = rng.uniform(-2, 2);
    Tensor<double> map = Tensor<double>::from({m, h, w}, std::move(mv));
    Spot spot{rng.uniform(-1.0, w + 1.0), rng.uniform(-1.0, h + 1.0), rng.uniform(0.3, 6.0), {}};
    Tensor<double> agg = aggregate_spot(map, spot);
    for (int g = 0; g < m; ++g) {
      double acc = 0.0;
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          const double dx = (j + 0.5) - spot.x, dy = (i + 0.5) - spot.y;
          if (dx * dx + dy * dy <= spot.r * spot.r) acc += map.at(g, i, j);
        }
      if (agg.at(g) != acc) ++agg_fail;
    }
  }

  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 3 + static_cast<int>(rng.below(30));
    const int m = 1 + static_cast<int>(rng.below(8));
    std::vector<double> p(static_cast<std::size_t>(n) * m), t(p.size());
    for (auto& v : p) v = rng.uniform(-3, 3);
    for (auto& v : t) v = rng.uniform(-3, 3);
    const MetricsReport rep = metrics_report(p, t, n, m);

    // independent oracle at extended precision
    long double se = 0, ae = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const long double d = static_cast<long double>(p[i]) - t[i];
      se += d * d;
      ae += fabsl(d);
    }
    const double mse_o = static_cast<double>(se / static_cast<long double>(p.size()));
    const double mae_o = static_cast<double>(ae / static_cast<long double>(p.size()));
    worst = std::max(worst, std::abs(rep.mse - mse_o) / std::max(1.0, std::abs(mse_o)));
    worst = std::max(worst, std::abs(rep.mae - mae_o) / std::max(1.0, std::abs(mae_o)));

    std::size_t vg = 0;
    for (int g = 0; g < m; ++g) {
      long double ma = 0, mb = 0;
      for (int i = 0; i < n; ++i) {
        ma += p[static_cast<std::size_t>(i) * m + g];
        mb += t[static_cast<std::size_t>(i) * m + g];
      }
      ma /= n;
      mb /= n;
      long double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < n; ++i) {
        const long double da = p[static_cast<std::size_t>(i) * m + g] - ma;
        const long double db = t[static_cast<std::size_t>(i) * m + g] - mb;
        va += da * da;
        vb += db * db;
        cov += da * db;
      }
      va /= n;
      vb /= n;
      cov /= n;
      if (va < 1e-8 || vb < 1e-8) continue;
      const double pcc_o = static_cast<double>(cov / (sqrtl(va) * sqrtl(vb) + 1e-8L));
      worst = std::max(worst, std::abs(rep.pcc_per_gene.at(vg) - pcc_o));
      ++vg;
    }
  }
  std::snprintf(buf, sizeof buf, "aggregation exact on 200 pairs (%d mismatches), metrics off by %.2e",
                agg_fail, worst);
  detail = buf;
  return agg_fail == 0 && worst < 1e-12;
}

// 3. toy shape contract and six-level routing
static bool criterion3(std::string& detail) {
  Rng rng(3);
  ModelConfig cfg = ModelConfig::toy(64, 64, 8);
  PixNetModel<double> model(cfg, 3);
  std::vector<double> iv(static_cast<std::size_t>(3) * 64 * 64);
  for (auto& v : iv) v = rng.uniform();
  DecodeTrace trace;
  Tensor<double> map = model.forward(Tensor<double>::from({3, 64, 64}, std::move(iv)), &trace);
  const bool shape_ok = map.shape() == Shape{8, 64, 64};

  DecoderConfig six = DecoderConfig::make({4, 4, 8, 8, 8, 8}, 2);
  Rng drng(33);
  Decoder<double> dec(six, drng);
  std::vector<Tensor<double>> pyr;
  int extent = 32;
  for (int l = 0; l < 6; ++l) {
    std::vector<double> v(static_cast<std::size_t>(six.filter_sizes[static_cast<std::size_t>(l)]) *
                          extent * extent);
    for (auto& x : v) x = drng.uniform(-1, 1);
    pyr.push_back(Tensor<double>::from({six.filter_sizes[static_cast<std::size_t>(l)], extent, extent},
                                       std::move(v)));
    extent /= 2;
  }
  DecodeTrace trace6;
  dec.decode(pyr, 64, 64, &trace6);
  const bool routing_ok = trace6.dsub_levels == std::vector<int>{6, 5, 4} &&
                          trace6.bilinear_levels == std::vector<int>{3, 2};
  std::snprintf(buf, sizeof buf, "map %dx%dx%d, dsub {6,5,4} %s, bilinear {3,2} %s", map.extent(1),
                map.extent(2), map.extent(0), routing_ok ? "yes" : "no", routing_ok ? "yes" : "no");
  detail = buf;
  return shape_ok && routing_ok;
}

// 4. overfit property on the synthetic task
static bool criterion4(std::string& detail) {
  const double t0 = now_seconds();
  SynthResult synth = synth_generate(overfit_task(4.0));
  Dataset<float> data = make_dataset<float>(synth.image, synth.table);
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.seed = 42;
  PixNetModel<float> model(overfit_model_config(), 42);
  auto log = train(model, data, cfg);
  const double pcc_m = evaluate(model, data).pcc_m;
  const double secs = now_seconds() - t0;
  const double ratio = log.back().loss / log.front().loss;
  std::snprintf(buf, sizeof buf, "loss %.1f -> %.1f (ratio %.3f), train PCC@M %.3f, %.0f s",
                log.front().loss, log.back().loss, ratio, pcc_m, secs);
  detail = buf;
  return ratio < 0.2 && pcc_m > 0.9 && secs < 600.0;
}

// 5. cross-scale generalization against exact truth sums
static bool criterion5(std::string& detail) {
  SynthResult synth = synth_generate(overfit_task(8.0));
  Dataset<float> data = make_dataset<float>(synth.image, synth.table);
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.seed = 42;
  PixNetModel<float> model(overfit_model_config(), 42);
  train(model, data, cfg);

  SpotTable held = synth_spots_from_truth(synth.truth, 64, 2.0, 43);
  Dataset<float> held_data = make_dataset<float>(synth.image, held);
  const double pcc_model = evaluate(model, held_data).pcc_m;

  // permutation baseline: same predictions, shuffled labels
  SpotTable shuffled = held;
  std::vector<std::vector<double>> labels;
  for (const auto& s : shuffled.spots) labels.push_back(s.expression);
  Rng perm_rng(777);
  perm_rng.shuffle(labels);
  for (std::size_t i = 0; i < shuffled.spots.size(); ++i) shuffled.spots[i].expression = labels[i];
  Dataset<float> perm_data = make_dataset<float>(synth.image, shuffled);
  const double pcc_perm = evaluate(model, perm_data).pcc_m;

  std::snprintf(buf, sizeof buf, "held-out r=2 PCC@M %.3f, permutation %.3f, margin %.3f",
                pcc_model, pcc_perm, pcc_model - pcc_perm);
  detail = buf;
  return pcc_model >= 0.5 && pcc_model - pcc_perm >= 0.4;
}

// 6. loss-ablation ordering across three seeds
static bool criterion6(std::string& detail) {
  SynthResult synth = synth_generate(overfit_task(4.0));
  Dataset<float> data = make_dataset<float>(synth.image, synth.table);
  std::string parts;
  bool ok = true;
  for (std::uint64_t seed : {42ull, 43ull, 44ull}) {
    const double combined = train_and_eval_pcc(data, seed, true, true, 0.5);
    const double mse_only = train_and_eval_pcc(data, seed, true, false, 0.0);
    const double pcc_only = train_and_eval_pcc(data, seed, false, true, 1.0);
    const bool seed_ok = combined >= mse_only - 0.02 && combined >= pcc_only - 0.02;
    ok = ok && seed_ok;
    std::snprintf(buf, sizeof buf, "[seed %llu: comb %.3f mse %.3f pcc %.3f]",
                  static_cast<unsigned long long>(seed), combined, mse_only, pcc_only);
    parts += buf;
  }
  detail = parts;
  return ok;
}

// 7. determinism and persistence
static bool criterion7(std::string& detail) {
  SynthParams p = overfit_task(4.0);
  p.height = 64;
  p.width = 64;
  p.genes = 8;
  p.n_spots = 25;
  SynthResult synth = synth_generate(p);
  Dataset<float> data = make_dataset<float>(synth.image, synth.table);
  ModelConfig mcfg = ModelConfig::toy(64, 64, 8);
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.seed = 42;

  PixNetModel<float> m1(mcfg, 42);
  auto log1 = train(m1, data, cfg);
  PixNetModel<float> m2(mcfg, 42);
  auto log2 = train(m2, data, cfg);
  bool logs_equal = log1.size() == log2.size();
  for (std::size_t i = 0; logs_equal && i < log1.size(); ++i)
    logs_equal = log1[i].loss == log2[i].loss && log1[i].mse == log2[i].mse &&
                 log1[i].pcc_m == log2[i].pcc_m;

  const std::string dir = "acceptance_tmp";
  std::filesystem::create_directories(dir);
  const std::string ckpt_path = dir + "/model.pixc";
  save_checkpoint(ckpt_path, m1);
  auto bundle = load_checkpoint<float>(ckpt_path);
  ParamMap<float> pa = m1.params();
  ParamMap<float> pb = bundle.model->params();
  bool tensors_equal = pa.count() == pb.count();
  for (std::size_t i = 0; tensors_equal && i < pa.count(); ++i)
    tensors_equal = pa.items[i].second.value() == pb.items[i].second.value();

  Tensor<float> before = m1.forward(data.slides[0].image);
  Tensor<float> after = bundle.model->forward(data.slides[0].image);
  const bool predict_equal = before.value() == after.value();

  io::GexmRaster raster;
  raster.h = before.extent(1);
  raster.w = before.extent(2);
  raster.m = before.extent(0);
  raster.values.resize(before.size());
  for (int i = 0; i < raster.h; ++i)
    for (int j = 0; j < raster.w; ++j)
      for (int g = 0; g < raster.m; ++g) raster.at(i, j, g) = before.at(g, i, j);
  const std::string gexm_path = dir + "/map.gexm";
  io::write_gexm(gexm_path, raster);
  const io::GexmRaster back = io::read_gexm(gexm_path);
  const bool gexm_equal = back.values == raster.values && back.h == raster.h &&
                          back.w == raster.w && back.m == raster.m;
  std::filesystem::remove_all(dir);

  std::snprintf(buf, sizeof buf, "logs %s, checkpoint %s, predict %s, gexm %s",
                logs_equal ? "bitwise" : "DIFFER", tensors_equal ? "bitwise" : "DIFFER",
                predict_equal ? "bitwise" : "DIFFER", gexm_equal ? "bitwise" : "DIFFER");
  detail = buf;
  return logs_equal && tensors_equal && predict_equal && gexm_equal;
}

// 8. sparse-supervision locality
static bool criterion8(std::string& detail) {
  SynthParams p = overfit_task(4.0);
  p.height = 64;
  p.width = 64;
  p.genes = 8;
  p.n_spots = 16;
  SynthResult synth = synth_generate(p);
  Dataset<float> data = make_dataset<float>(synth.image, synth.table);
  const auto& slide = data.slides[0];
  PixNetModel<float> model(ModelConfig::toy(64, 64, 8), 8);

  Tensor<float> map = model.forward(slide.image);
  Tensor<float> pred = aggregate_spots(map, slide.masks);
  combined_loss(pred, slide.targets, 0.5f).backward();

  std::vector<bool> covered(static_cast<std::size_t>(64 * 64), false);
  std::size_t inside_count = 0;
  for (const auto& mask : slide.masks)
    for (int idx : mask) {
      if (!covered[static_cast<std::size_t>(idx)]) ++inside_count;
      covered[static_cast<std::size_t>(idx)] = true;
    }

  if (!map.has_grad()) {
    detail = "map has no gradient";
    return false;
  }
  std::size_t outside_nonzero = 0;
  std::size_t inside_nonzero = 0;
  for (int g = 0; g < 8; ++g)
    for (int i = 0; i < 64; ++i)
      for (int j = 0; j < 64; ++j) {
        const float gv = map.grad()[(static_cast<std::size_t>(g) * 64 + i) * 64 + j];
        if (covered[static_cast<std::size_t>(i * 64 + j)]) {
          if (gv != 0.0f) ++inside_nonzero;
        } else if (gv != 0.0f) {
          ++outside_nonzero;
        }
      }
  std::snprintf(buf, sizeof buf,
                "outside-mask nonzero grads: %zu (want 0), inside nonzero: %zu of %zu px",
                outside_nonzero, inside_nonzero, inside_count * 8);
  detail = buf;
  return outside_nonzero == 0 && inside_nonzero > 0;
}

int main() {
  std::printf("acceptance suite\n");
  criterion(1, "gradient suite", criterion1);
  criterion(2, "oracle equivalence", criterion2);
  criterion(3, "shape contract & routing", criterion3);
  criterion(4, "overfit property", criterion4);
  criterion(5, "cross-scale generalization", criterion5);
  criterion(6, "loss-ablation ordering", criterion6);
  criterion(7, "determinism & persistence", criterion7);
  criterion(8, "sparse-supervision locality", criterion8);

  int passed = 0;
  for (const auto& r : g_results) passed += r.pass ? 1 : 0;
  std::printf("summary: %d/%zu criteria pass\n", passed, g_results.size());
  return passed == static_cast<int>(g_results.size()) ? 0 : 1;
}
