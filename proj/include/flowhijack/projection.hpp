// Vector-field stealth analytics: PCA projection of flattened field
// outputs onto the top two principal components of the pooled point set,
// per-class Gaussian fits, and their Bhattacharyya overlap coefficient.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "flowhijack/eval.hpp"
#include "flowhijack/flow.hpp"

namespace flowhijack {

// Cyclic Jacobi eigen-decomposition for symmetric matrices. Returns
// eigenvalues in descending order with matching eigenvectors (columns).
struct EigenResult {
  std::vector<double> values;
  std::vector<std::vector<double>> vectors;  // vectors[k] is the k-th column
};

inline EigenResult symmetric_eigen(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::fabs(a[p][q]) < 1e-300) continue;
        double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return a[x][x] > a[y][y]; });
  EigenResult r;
  r.values.resize(n);
  r.vectors.assign(n, std::vector<double>(n));
  for (std::size_t k = 0; k < n; ++k) {
    r.values[k] = a[order[k]][order[k]];
    for (std::size_t i = 0; i < n; ++i) r.vectors[k][i] = v[i][order[k]];
  }
  return r;
}

struct Gaussian2 {
  std::array<double, 2> mean{};
  std::array<double, 4> cov{};  // row-major 2x2
};

inline Gaussian2 fit_gaussian2(const std::vector<std::array<double, 2>>& pts) {
  if (pts.size() < 2)
    throw std::invalid_argument("fit_gaussian2: need at least 2 points");
  Gaussian2 g;
  for (const auto& p : pts) {
    g.mean[0] += p[0];
    g.mean[1] += p[1];
  }
  double n = static_cast<double>(pts.size());
  g.mean[0] /= n;
  g.mean[1] /= n;
  for (const auto& p : pts) {
    double dx = p[0] - g.mean[0], dy = p[1] - g.mean[1];
    g.cov[0] += dx * dx;
    g.cov[1] += dx * dy;
    g.cov[3] += dy * dy;
  }
  g.cov[0] /= n - 1.0;
  g.cov[1] /= n - 1.0;
  g.cov[3] /= n - 1.0;
  g.cov[2] = g.cov[1];
  return g;
}

// BC = exp(-D_B) with the closed-form Gaussian Bhattacharyya distance.
inline double bhattacharyya_coefficient(const Gaussian2& a,
                                        const Gaussian2& b) {
  std::array<double, 4> s = {0.5 * (a.cov[0] + b.cov[0]),
                             0.5 * (a.cov[1] + b.cov[1]),
                             0.5 * (a.cov[2] + b.cov[2]),
                             0.5 * (a.cov[3] + b.cov[3])};
  double det_s = s[0] * s[3] - s[1] * s[2];
  double det_a = a.cov[0] * a.cov[3] - a.cov[1] * a.cov[2];
  double det_b = b.cov[0] * b.cov[3] - b.cov[1] * b.cov[2];
  if (det_s <= 0.0 || det_a <= 0.0 || det_b <= 0.0)
    throw std::runtime_error("bhattacharyya: degenerate covariance");
  double dx = a.mean[0] - b.mean[0], dy = a.mean[1] - b.mean[1];
  // (dx,dy) Sinv (dx,dy)^T via the 2x2 inverse
  double quad =
      (dx * (s[3] * dx - s[1] * dy) + dy * (-s[2] * dx + s[0] * dy)) / det_s;
  double d_b = 0.125 * quad + 0.5 * std::log(det_s / std::sqrt(det_a * det_b));
  return std::exp(-d_b);
}

struct FieldProbe {
  Tensor obs;       // clean observation
  Tensor obs_trig;  // triggered counterpart
  Tensor chunk;     // clean action chunk (d x H or flattened)
};

struct ProjectionReport {
  std::vector<std::array<double, 2>> benign_points, attack_points;
  Gaussian2 benign, attack;
  double bc = 0.0;
  double pooled_variance_share = 0.0;  // top-2 eigenvalue share
  std::array<double, 2> top_eigenvalues{};
};

// Benign class: the clean policy's field at (A^tau, o). Attack class: the
// attacked policy's field at the same A^tau with the triggered observation.
// tau and eps are shared within a probe pair.
inline ProjectionReport field_projection(const PolicyParams& params_attack,
                                         const PolicyParams& params_clean,
                                         const std::vector<FieldProbe>& probes,
                                         const FlowConfig& cfg, Rng& rng) {
  if (probes.size() < 50)
    throw std::invalid_argument("field_projection: need at least 50 probes");
  const std::size_t d = cfg.chunk_numel();
  std::vector<std::vector<double>> rows;
  rows.reserve(2 * probes.size());
  for (const FieldProbe& p : probes) {
    double tau = sample_tau(cfg.tau_beta, rng);
    Tensor eps = normal_like(d, rng);
    Tensor a_tau = reshape_chunk(interpolate(flatten(p.chunk), eps, tau), cfg);
    rows.push_back(vector_field(params_clean, a_tau, p.obs, tau, cfg).v);
    rows.push_back(vector_field(params_attack, a_tau, p.obs_trig, tau, cfg).v);
  }

  std::vector<double> mean(d, 0.0);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < d; ++i) mean[i] += r[i];
  for (double& m : mean) m /= static_cast<double>(rows.size());

  std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
  for (const auto& r : rows)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j)
        cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
  double denom = static_cast<double>(rows.size()) - 1.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      cov[i][j] /= denom;
      cov[j][i] = cov[i][j];
    }

  EigenResult eig = symmetric_eigen(cov);
  if (eig.values.size() < 2 || eig.values[1] <= 1e-12)
    throw std::runtime_error("field_projection: pooled covariance rank < 2");

  ProjectionReport rep;
  rep.top_eigenvalues = {eig.values[0], eig.values[1]};
  double total_var = 0.0;
  for (double l : eig.values) total_var += std::max(l, 0.0);
  rep.pooled_variance_share = (eig.values[0] + eig.values[1]) / total_var;

  auto project = [&](const std::vector<double>& r) {
    std::array<double, 2> p{};
    for (std::size_t i = 0; i < d; ++i) {
      double centered = r[i] - mean[i];
      p[0] += centered * eig.vectors[0][i];
      p[1] += centered * eig.vectors[1][i];
    }
    return p;
  };
  for (std::size_t k = 0; k < rows.size(); k += 2) {
    rep.benign_points.push_back(project(rows[k]));
    rep.attack_points.push_back(project(rows[k + 1]));
  }
  rep.benign = fit_gaussian2(rep.benign_points);
  rep.attack = fit_gaussian2(rep.attack_points);
  rep.bc = bhattacharyya_coefficient(rep.benign, rep.attack);
  return rep;
}

}  // namespace flowhijack
