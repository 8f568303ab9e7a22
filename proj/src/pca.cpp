#include "trojanlab/pca.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace trojanlab {

void symmetric_eigen(const Tensor& sym, std::vector<double>& values, Tensor& vectors) {
  const std::size_t n = sym.rows();
  if (sym.cols() != n) throw DimensionError("symmetric_eigen expects a square matrix");
  Tensor a = sym;
  Tensor v({n, n});
  for (std::size_t i = 0; i < n; ++i) v.at(i, i) = 1.0;

  const int max_sweeps = 64;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v.at(k, p), vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = a.at(i, i);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return diag[x] > diag[y]; });

  values.resize(n);
  vectors = Tensor({n, n});
  for (std::size_t r = 0; r < n; ++r) {
    values[r] = diag[order[r]];
    for (std::size_t k = 0; k < n; ++k) vectors.at(r, k) = v.at(k, order[r]);
  }
}

PcaResult pca_fit(const Tensor& points, std::size_t out_dim) {
  const std::size_t n = points.rows(), d = points.cols();
  if (n < 2) throw DimensionError("pca needs at least 2 points, got " + std::to_string(n));
  if (d < out_dim)
    throw DimensionError("pca out_dim " + std::to_string(out_dim) +
                         " exceeds input dimension " + std::to_string(d));

  Tensor mean({1, d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) mean[c] += points.at(r, c);
  for (std::size_t c = 0; c < d; ++c) mean[c] /= static_cast<double>(n);

  Tensor centered({n, d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) centered.at(r, c) = points.at(r, c) - mean[c];

  Tensor cov({d, d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < d; ++i) {
      const double ci = centered.at(r, i);
      if (ci == 0.0) continue;
      for (std::size_t j = i; j < d; ++j) cov.at(i, j) += ci * centered.at(r, j);
    }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      cov.at(i, j) /= static_cast<double>(n - 1);
      cov.at(j, i) = cov.at(i, j);
    }

  std::vector<double> values;
  Tensor vectors;
  symmetric_eigen(cov, values, vectors);

  const double rank_tol = std::max(1e-12, 1e-12 * std::abs(values.empty() ? 0.0 : values[0]));
  std::size_t rank = 0;
  for (double v : values)
    if (v > rank_tol) ++rank;
  if (rank < out_dim)
    throw DimensionError("pca covariance rank " + std::to_string(rank) +
                         " is below requested dimension " + std::to_string(out_dim));

  PcaResult res;
  res.mean = mean;
  res.eigenvalues = values;
  res.components = Tensor({out_dim, d});
  for (std::size_t k = 0; k < out_dim; ++k) {
    // Fix sign: largest-magnitude coordinate positive.
    std::size_t arg = 0;
    for (std::size_t c = 1; c < d; ++c)
      if (std::abs(vectors.at(k, c)) > std::abs(vectors.at(k, arg))) arg = c;
    const double flip = vectors.at(k, arg) < 0.0 ? -1.0 : 1.0;
    for (std::size_t c = 0; c < d; ++c) res.components.at(k, c) = flip * vectors.at(k, c);
  }
  res.projected = matmul(centered, transpose(res.components));
  return res;
}

Tensor pca_fit_transform(const Tensor& points, std::size_t out_dim) {
  return pca_fit(points, out_dim).projected;
}

}  // namespace trojanlab
