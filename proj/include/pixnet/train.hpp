#pragma once

// Deterministic training loop: one slide per optimization step, all (or a
// sampled subset of) its spots aggregated from the freshly decoded map,
// AdamW with decoupled weight decay. Everything is seeded; two runs with
// the same seed produce bit-identical logs.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pixnet/data.hpp"
#include "pixnet/model.hpp"
#include "pixnet/objective.hpp"
#include "pixnet/spots.hpp"

namespace pixnet {

struct TrainConfig {
  double lr = 5e-4;
  double weight_decay = 1e-4;
  int epochs = 200;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lambda = 0.5;
  bool use_mse = true;
  bool use_pcc = true;
  int batch_spots = 0;  // 0 = every spot of the slide each step
  std::uint64_t seed = 42;

  void validate() const {
    if (lr < 0) throw ArgumentError("train: lr must be >= 0");
    if (epochs < 1) throw ArgumentError("train: epochs must be >= 1");
    if (weight_decay < 0) throw ArgumentError("train: weight_decay must be >= 0");
    if (lambda < 0) throw ArgumentError("train: lambda must be >= 0");
  }
};

template <typename S>
struct AdamWState {
  long step = 0;
  std::vector<std::vector<S>> m, v;  // parallel to the ParamMap order
};

template <typename S>
void adamw_step(ParamMap<S>& params, AdamWState<S>& state, const TrainConfig& cfg) {
  if (state.m.empty()) {
    state.m.resize(params.count());
    state.v.resize(params.count());
    for (std::size_t i = 0; i < params.count(); ++i) {
      state.m[i].assign(params.items[i].second.size(), S(0));
      state.v[i].assign(params.items[i].second.size(), S(0));
    }
  }
  if (state.m.size() != params.count()) throw DimensionError("adamw: state/parameter mismatch");
  ++state.step;
  const S lr = static_cast<S>(cfg.lr), wd = static_cast<S>(cfg.weight_decay);
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S eps = static_cast<S>(cfg.eps);
  const S bc1 = static_cast<S>(1.0 - std::pow(cfg.beta1, static_cast<double>(state.step)));
  const S bc2 = static_cast<S>(1.0 - std::pow(cfg.beta2, static_cast<double>(state.step)));
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& [name, t] = params.items[i];
    if (state.m[i].size() != t.size()) throw DimensionError("adamw: moment shape mismatch for " + name);
    auto& w = t.value();
    const bool has_g = t.has_grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const S g = has_g ? t.grad()[j] : S(0);
      if (!std::isfinite(static_cast<double>(g)))
        throw NumericError("adamw: non-finite gradient for parameter " + name);
      w[j] -= lr * wd * w[j];  // decoupled decay
      state.m[i][j] = b1 * state.m[i][j] + (S(1) - b1) * g;
      state.v[i][j] = b2 * state.v[i][j] + (S(1) - b2) * g * g;
      const S mhat = state.m[i][j] / bc1;
      const S vhat = state.v[i][j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// ---- dataset ----

template <typename S>
struct DatasetSlide {
  Tensor<S> image;  // [3,H,W]
  SlideMeta meta;
  std::vector<Spot> spots;
  std::vector<std::vector<int>> masks;
  Tensor<S> targets;  // [N,M]
};

template <typename S>
struct Dataset {
  std::vector<DatasetSlide<S>> slides;
  std::vector<std::string> gene_names;

  int genes() const { return static_cast<int>(gene_names.size()); }
};

template <typename S>
DatasetSlide<S> make_dataset_slide(const SlideImage& img, const SpotTable& table) {
  if (table.spots.empty()) throw DataError("dataset: spot table is empty");
  DatasetSlide<S> slide;
  slide.image = img.to_tensor<S>();
  slide.meta = img.meta;
  slide.spots = table.spots;
  const int n = table.count(), m = table.genes();
  std::vector<S> tgt(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(table.spots[static_cast<std::size_t>(i)].expression.size()) != m)
      throw DataError("dataset: spot " + std::to_string(i) + " expression length mismatch");
    for (int g = 0; g < m; ++g)
      tgt[static_cast<std::size_t>(i) * m + g] =
          static_cast<S>(table.spots[static_cast<std::size_t>(i)].expression[static_cast<std::size_t>(g)]);
    slide.masks.push_back(circular_mask(table.spots[static_cast<std::size_t>(i)], img.h, img.w));
  }
  slide.targets = Tensor<S>::from({n, m}, std::move(tgt));
  return slide;
}

template <typename S>
Dataset<S> make_dataset(const SlideImage& img, const SpotTable& table) {
  Dataset<S> data;
  data.gene_names = table.gene_names;
  data.slides.push_back(make_dataset_slide<S>(img, table));
  return data;
}

// ---- training ----

struct StepLog {
  int step = 0;
  double loss = 0.0;
  double mse = 0.0;
  double pcc_loss = 0.0;  // 1 - mean per-gene correlation, 0 when disabled
  double pcc_m = 0.0;     // training PCC@M for the step's spots
};

struct EpochLog {
  std::vector<StepLog> steps;

  double mean_loss() const {
    double s = 0.0;
    for (const auto& st : steps) s += st.loss;
    return steps.empty() ? 0.0 : s / static_cast<double>(steps.size());
  }
  double last_pcc_m() const { return steps.empty() ? 0.0 : steps.back().pcc_m; }
};

template <typename S>
StepLog train_step(const PixNetModel<S>& model, const DatasetSlide<S>& slide, ParamMap<S>& params,
                   AdamWState<S>& state, const TrainConfig& cfg, Rng& batch_rng, int step_index) {
  const int n = static_cast<int>(slide.spots.size());
  const int m = slide.targets.extent(1);

  // spot subset for this step
  std::vector<int> pick(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pick[static_cast<std::size_t>(i)] = i;
  if (cfg.batch_spots > 0 && cfg.batch_spots < n) {
    batch_rng.shuffle(pick);
    pick.resize(static_cast<std::size_t>(cfg.batch_spots));
    std::sort(pick.begin(), pick.end());
  }

  std::vector<std::vector<int>> masks;
  masks.reserve(pick.size());
  std::vector<S> tgt(pick.size() * static_cast<std::size_t>(m));
  for (std::size_t i = 0; i < pick.size(); ++i) {
    masks.push_back(slide.masks[static_cast<std::size_t>(pick[i])]);
    for (int g = 0; g < m; ++g)
      tgt[i * static_cast<std::size_t>(m) + g] =
          slide.targets.value()[static_cast<std::size_t>(pick[i]) * m + g];
  }
  Tensor<S> target = Tensor<S>::from({static_cast<int>(pick.size()), m}, std::move(tgt));

  Tensor<S> map = model.forward(slide.image);
  Tensor<S> pred = aggregate_spots(map, masks);
  Tensor<S> loss = combined_loss(pred, target, static_cast<S>(cfg.lambda), cfg.use_mse, cfg.use_pcc);

  params.zero_grad();
  loss.backward();
  adamw_step(params, state, cfg);

  StepLog log;
  log.step = step_index;
  log.loss = static_cast<double>(loss.item());
  {
    // plain-value diagnostics on the step's predictions
    double se = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = static_cast<double>(pred.value()[i]) - static_cast<double>(target.value()[i]);
      se += d * d;
    }
    log.mse = se / static_cast<double>(pred.size());
    const MetricsReport rep = metrics_report(pred, target);
    log.pcc_m = rep.pcc_m;
    log.pcc_loss = cfg.use_pcc ? 1.0 - rep.pcc_m : 0.0;
  }
  return log;
}

template <typename S>
EpochLog train_epoch(const PixNetModel<S>& model, const Dataset<S>& data, ParamMap<S>& params,
                     AdamWState<S>& state, const TrainConfig& cfg, Rng& batch_rng,
                     int first_step_index = 0) {
  if (data.slides.empty()) throw DataError("train: dataset is empty");
  EpochLog log;
  int step = first_step_index;
  for (const auto& slide : data.slides) {
    try {
      log.steps.push_back(train_step(model, slide, params, state, cfg, batch_rng, step));
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(step) + ": " + e.what());
    }
    ++step;
  }
  return log;
}

// full run; returns one StepLog per optimization step
template <typename S>
std::vector<StepLog> train(const PixNetModel<S>& model, const Dataset<S>& data,
                           const TrainConfig& cfg, AdamWState<S>* state_out = nullptr,
                           std::ostream* progress = nullptr) {
  cfg.validate();
  ParamMap<S> params = model.params();
  AdamWState<S> state;
  Rng batch_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<StepLog> steps;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochLog el = train_epoch(model, data, params, state, cfg, batch_rng,
                              static_cast<int>(steps.size()));
    for (const auto& st : el.steps) steps.push_back(st);
    if (progress) {
      const auto& last = el.steps.back();
      (*progress) << "epoch " << epoch + 1 << "/" << cfg.epochs << " loss " << last.loss << " mse "
                  << last.mse << " pcc_loss " << last.pcc_loss << " pcc_m " << last.pcc_m << "\n";
    }
  }
  if (state_out) *state_out = std::move(state);
  return steps;
}

// ---- evaluation ----

// decodes each slide once and aggregates every spot, optionally with all
// radii replaced (the cross-scale mechanism); metrics are computed against
// the table expression
template <typename S>
MetricsReport evaluate(const PixNetModel<S>& model, const Dataset<S>& data,
                       std::optional<double> radius_override = std::nullopt,
                       std::vector<std::string>* warnings = nullptr) {
  if (data.slides.empty()) throw DataError("evaluate: dataset is empty");
  const int m = data.genes();
  std::vector<double> pred, target;
  int n_total = 0;
  for (const auto& slide : data.slides) {
    Tensor<S> map = model.forward(slide.image);
    const int h = map.extent(1), w = map.extent(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t si = 0; si < slide.spots.size(); ++si) {
      std::vector<int> mask;
      if (radius_override) {
        Spot s = slide.spots[si];
        s.r = *radius_override;
        mask = circular_mask(s, h, w);
      } else {
        mask = slide.masks[si];
      }
      if (mask.empty())
        detail::warn(warnings, "evaluate: spot " + std::to_string(si) + " has an empty mask");
      for (int g = 0; g < m; ++g) {
        const S* p = map.value().data() + static_cast<std::size_t>(g) * plane;
        S acc = S(0);
        for (int idx : mask) acc += p[static_cast<std::size_t>(idx)];
        pred.push_back(static_cast<double>(acc));
        target.push_back(static_cast<double>(slide.targets.value()[si * static_cast<std::size_t>(m) + g]));
      }
      ++n_total;
    }
  }
  return metrics_report(pred, target, n_total, m);
}

}  // namespace pixnet
