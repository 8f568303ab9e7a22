#pragma once

#include "trojanlab/tensor.hpp"

namespace trojanlab {

struct PcaResult {
  Tensor projected;   // [n x out_dim]
  Tensor components;  // [out_dim x d], rows ordered by descending eigenvalue
  Tensor mean;        // [1 x d]
  std::vector<double> eigenvalues;  // all d, descending
};

// Projects rows onto the top-`out_dim` principal components of the
// mean-centered input (covariance eigendecomposition, Jacobi rotations).
// Sign convention: the largest-magnitude coordinate of each component is
// positive. Throws DimensionError when the covariance rank is below out_dim.
PcaResult pca_fit(const Tensor& points, std::size_t out_dim);

Tensor pca_fit_transform(const Tensor& points, std::size_t out_dim);

// Symmetric eigendecomposition by cyclic Jacobi; returns eigenvalues
// (descending) and matching eigenvectors as rows of `vectors`.
void symmetric_eigen(const Tensor& sym, std::vector<double>& values, Tensor& vectors);

}  // namespace trojanlab
