#pragma once

// Sparse training loss (MSE + lambda * PCC) and the evaluation metric
// suite. Correlation is per gene across spots; degenerate columns
// (variance below eps) yield 0 with a flag instead of poisoning means.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "pixnet/common.hpp"
#include "pixnet/tensor.hpp"

namespace pixnet {

constexpr double kPccEps = 1e-8;

struct PccValue {
  double value = 0.0;
  bool degenerate = false;
};

// population moments; ratio = cov / (std_a*std_b + eps)
inline PccValue pearson(const std::vector<double>& a, const std::vector<double>& b,
                        double eps = kPccEps) {
  if (a.size() != b.size()) throw DimensionError("pearson: length mismatch");
  if (a.size() < 2) throw ArgumentError("pearson: need at least two samples");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double va = 0.0, vb = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    va += da * da;
    vb += db * db;
    cov += da * db;
  }
  va /= n;
  vb /= n;
  cov /= n;
  if (va < eps || vb < eps) return {0.0, true};
  return {cov / (std::sqrt(va) * std::sqrt(vb) + eps), false};
}

template <typename S>
Tensor<S> mse_loss(const Tensor<S>& pred, const Tensor<S>& target) {
  detail::check_same_shape(pred, target, "mse_loss");
  if (pred.rank() != 2 || pred.extent(0) < 1) throw DimensionError("mse_loss: expected [N,M], N >= 1");
  Tensor<S> d = sub(pred, target);
  return mean(mul(d, d));
}

namespace detail {

// column statistics of a plain matrix
template <typename S>
void column_moments(const std::vector<S>& m, int rows, int cols, int col, double& mean_out,
                    double& var_out) {
  double mu = 0.0;
  for (int i = 0; i < rows; ++i) mu += static_cast<double>(m[static_cast<std::size_t>(i) * cols + col]);
  mu /= rows;
  double var = 0.0;
  for (int i = 0; i < rows; ++i) {
    const double d = static_cast<double>(m[static_cast<std::size_t>(i) * cols + col]) - mu;
    var += d * d;
  }
  var /= rows;
  mean_out = mu;
  var_out = var;
}

}  // namespace detail

// L_pcc = 1 - mean over genes of per-gene correlation. Genes degenerate in
// the target are excluded from the mean; genes degenerate only in the
// prediction contribute a detached 0.
template <typename S>
Tensor<S> pcc_loss(const Tensor<S>& pred, const Tensor<S>& target, S eps = S(kPccEps),
                   int* n_degenerate = nullptr) {
  detail::check_same_shape(pred, target, "pcc_loss");
  if (pred.rank() != 2) throw DimensionError("pcc_loss: expected [N,M]");
  const int n = pred.extent(0), m = pred.extent(1);
  if (n < 2) throw ArgumentError("pcc_loss: need at least two spots");

  Tensor<S> acc;
  int included = 0, degenerate = 0;
  for (int g = 0; g < m; ++g) {
    double t_mean, t_var;
    detail::column_moments(target.value(), n, m, g, t_mean, t_var);
    if (t_var < static_cast<double>(eps)) {
      ++degenerate;
      continue;  // excluded from the mean entirely
    }
    double p_mean, p_var;
    detail::column_moments(pred.value(), n, m, g, p_mean, p_var);
    if (p_var < static_cast<double>(eps)) {
      ++degenerate;
      ++included;  // contributes a constant 0
      continue;
    }
    // centered target column as a constant
    std::vector<S> tcen(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      tcen[static_cast<std::size_t>(i)] =
          target.value()[static_cast<std::size_t>(i) * m + g] - static_cast<S>(t_mean);
    const S t_std = static_cast<S>(std::sqrt(t_var));

    Tensor<S> col = narrow(pred, 1, g, 1);
    Tensor<S> cen = sub_scalar(col, mean(col));
    Tensor<S> var = mean(mul(cen, cen));
    Tensor<S> cov = mean(mul(cen, Tensor<S>::from({n, 1}, std::move(tcen))));
    Tensor<S> den = add_const(scale(sqrt_elem(var), t_std), eps);
    Tensor<S> r = div(cov, den);
    acc = acc.defined() ? add(acc, r) : r;
    ++included;
  }
  if (n_degenerate) *n_degenerate = degenerate;
  if (included == 0)
    throw NumericError("pcc_loss: every gene is degenerate (constant target columns)");
  if (!acc.defined()) return Tensor<S>::scalar(S(1));  // all included genes were constant in pred
  return add_const(scale(acc, -S(1) / static_cast<S>(included)), S(1));
}

// L = L_mse + lambda * L_pcc, with ablation switches; disabled terms are
// not computed so single-term configurations are bit-identical to the
// plain losses
template <typename S>
Tensor<S> combined_loss(const Tensor<S>& pred, const Tensor<S>& target, S lambda,
                        bool use_mse = true, bool use_pcc = true) {
  if (lambda < S(0)) throw ArgumentError("combined_loss: lambda must be >= 0");
  if (!use_mse && !use_pcc) throw ArgumentError("combined_loss: at least one term required");
  if (!use_pcc || lambda == S(0)) {
    if (!use_mse) throw ArgumentError("combined_loss: pcc term disabled and mse off");
    return mse_loss(pred, target);
  }
  if (!use_mse) return scale(pcc_loss(pred, target), lambda);
  return add(mse_loss(pred, target), scale(pcc_loss(pred, target), lambda));
}

struct MetricsReport {
  double mse = 0.0;
  double mae = 0.0;
  std::vector<double> pcc_per_gene;  // valid genes only
  double pcc_f = 0.0;  // first quartile
  double pcc_s = 0.0;  // median
  double pcc_m = 0.0;  // mean
  int n_degenerate_genes = 0;
};

// type-7 quantile (linear interpolation of order statistics)
inline double quantile_type7(std::vector<double> v, double q) {
  if (v.empty()) throw ArgumentError("quantile of empty vector");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

inline MetricsReport metrics_report(const std::vector<double>& pred,
                                    const std::vector<double>& target, int n, int m,
                                    double eps = kPccEps) {
  if (n < 2) throw ArgumentError("metrics_report: need at least two spots");
  if (pred.size() != static_cast<std::size_t>(n) * m || target.size() != pred.size())
    throw DimensionError("metrics_report: matrix extents mismatch");
  MetricsReport rep;
  double se = 0.0, ae = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    se += d * d;
    ae += std::abs(d);
  }
  rep.mse = se / static_cast<double>(pred.size());
  rep.mae = ae / static_cast<double>(pred.size());

  std::vector<double> pa(static_cast<std::size_t>(n)), ta(static_cast<std::size_t>(n));
  for (int g = 0; g < m; ++g) {
    for (int i = 0; i < n; ++i) {
      pa[static_cast<std::size_t>(i)] = pred[static_cast<std::size_t>(i) * m + g];
      ta[static_cast<std::size_t>(i)] = target[static_cast<std::size_t>(i) * m + g];
    }
    const PccValue r = pearson(pa, ta, eps);
    if (r.degenerate)
      ++rep.n_degenerate_genes;
    else
      rep.pcc_per_gene.push_back(r.value);
  }
  if (!rep.pcc_per_gene.empty()) {
    rep.pcc_f = quantile_type7(rep.pcc_per_gene, 0.25);
    rep.pcc_s = quantile_type7(rep.pcc_per_gene, 0.5);
    double s = 0.0;
    for (double v : rep.pcc_per_gene) s += v;
    rep.pcc_m = s / static_cast<double>(rep.pcc_per_gene.size());
  }
  return rep;
}

template <typename S>
MetricsReport metrics_report(const Tensor<S>& pred, const Tensor<S>& target,
                             double eps = kPccEps) {
  detail::check_same_shape(pred, target, "metrics_report");
  if (pred.rank() != 2) throw DimensionError("metrics_report: expected [N,M]");
  std::vector<double> p(pred.value().begin(), pred.value().end());
  std::vector<double> t(target.value().begin(), target.value().end());
  return metrics_report(p, t, pred.extent(0), pred.extent(1), eps);
}

}  // namespace pixnet
