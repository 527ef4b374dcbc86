#pragma once

// Straight-line re-statement of the training objective with the top-K sets
// given explicitly. Shares no code with src/ beyond the ModelParams layout, so
// central differences over it check backward() independently.

#include <cmath>
#include <cstddef>
#include <vector>

#include "ddsi/model.hpp"

namespace ddsi::oracle {

struct RefExample {
  std::vector<int> tokens;
  int gold = 0;
  std::vector<int> topk;
};

inline double ref_loss(const ParamTensors& p, const std::vector<RefExample>& batch, double alpha) {
  const int d = static_cast<int>(p.dims.dim);
  const int n = static_cast<int>(p.dims.docs);
  double ce = 0.0;
  double div = 0.0;
  for (const auto& ex : batch) {
    std::vector<double> mean(d, 0.0);
    for (int t : ex.tokens)
      for (int k = 0; k < d; ++k) mean[k] += p.embed[t * d + k] / static_cast<double>(ex.tokens.size());
    std::vector<double> q(d);
    for (int i = 0; i < d; ++i) {
      double s = p.hidden_b[i];
      for (int k = 0; k < d; ++k) s += p.hidden_w[i * d + k] * mean[k];
      q[i] = std::tanh(s);
    }
    std::vector<double> z(n);
    double zmax = -1e300;
    for (int j = 0; j < n; ++j) {
      double s = p.cls_b[j];
      for (int k = 0; k < d; ++k) s += p.cls_w[j * d + k] * q[k];
      z[j] = s;
      if (s > zmax) zmax = s;
    }
    double lse = 0.0;
    for (int j = 0; j < n; ++j) lse += std::exp(z[j] - zmax);
    ce += -(z[ex.gold] - zmax - std::log(lse));

    if (alpha != 1.0) {
      double sum = 0.0;
      int pairs = 0;
      for (std::size_t a = 0; a < ex.topk.size(); ++a) {
        for (std::size_t b = a + 1; b < ex.topk.size(); ++b) {
          double uv = 0.0, uu = 0.0, vv = 0.0;
          for (int k = 0; k < d; ++k) {
            double u = p.cls_w[ex.topk[a] * d + k];
            double v = p.cls_w[ex.topk[b] * d + k];
            uv += u * v;
            uu += u * u;
            vv += v * v;
          }
          sum += uv / std::sqrt(uu * vv);
          ++pairs;
        }
      }
      div += sum / pairs;
    }
  }
  const double bsz = static_cast<double>(batch.size());
  return alpha * (ce / bsz) + (1.0 - alpha) * (div / bsz);
}

struct GradCheck {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double worst_rel = 0.0;
  double worst_abs = 0.0;
};

/// Central differences of ref_loss over every parameter, compared to
/// `analytic`. An entry passes if its relative error is below `rel_tol` or
/// its absolute error is below `abs_floor`.
inline GradCheck finite_difference_check(const ParamTensors& p, const ParamTensors& analytic,
                                         const std::vector<RefExample>& batch, double alpha,
                                         double h = 1e-4, double rel_tol = 1e-4,
                                         double abs_floor = 1e-7) {
  GradCheck out;
  ParamTensors work = p;
  auto wt = work.tensors();
  auto at = analytic.tensors();
  for (std::size_t t = 0; t < wt.size(); ++t) {
    for (std::size_t i = 0; i < wt[t].size(); ++i) {
      const double orig = wt[t][i];
      wt[t][i] = orig + h;
      const double up = ref_loss(work, batch, alpha);
      wt[t][i] = orig - h;
      const double down = ref_loss(work, batch, alpha);
      wt[t][i] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double an = at[t][i];
      const double abs_err = std::fabs(fd - an);
      const double scale = std::max(std::fabs(fd), std::fabs(an));
      const double rel = scale > 0.0 ? abs_err / scale : 0.0;
      ++out.checked;
      out.worst_abs = std::max(out.worst_abs, abs_err);
      if (abs_err >= abs_floor) {
        out.worst_rel = std::max(out.worst_rel, rel);
        if (rel >= rel_tol) ++out.failures;
      }
    }
  }
  return out;
}

}  // namespace ddsi::oracle
