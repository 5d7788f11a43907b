#pragma once

#include "heatclt/model.hpp"
#include "heatclt/solver.hpp"

#include <cmath>
#include <initializer_list>

namespace testing_support {

using heatclt::Matrix;
using heatclt::Vector;

inline Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : rows) {
    Eigen::Index j = 0;
    for (double v : row) out(i, j++) = v;
    ++i;
  }
  return out;
}

inline heatclt::DiffusionField constant_field(const Matrix& S) {
  return heatclt::DiffusionField::from_family(heatclt::ConstantSigma{S});
}

/// σ(u) = 1 + 0.5 sin(u), d = m = 1.
inline heatclt::DiffusionField smooth_field_1d() {
  heatclt::Tensor3 w(1, 1, 1, 1.0);
  return heatclt::DiffusionField::from_family(heatclt::BoundedSmoothSigma{mat({{1.0}}), mat({{0.5}}), w});
}

/// A full-rank, genuinely coupled 2×2 bounded-smooth model.
inline heatclt::DiffusionField smooth_field_2d() {
  heatclt::Tensor3 w(2, 2, 2);
  w(0, 0, 0) = 1.0;
  w(0, 1, 1) = 1.0;
  w(1, 0, 0) = 0.5;
  w(1, 0, 1) = 0.5;
  w(1, 1, 0) = 1.0;
  w(1, 1, 1) = -1.0;
  return heatclt::DiffusionField::from_family(
      heatclt::BoundedSmoothSigma{mat({{1.0, 0.3}, {0.2, 1.0}}), mat({{0.3, 0.2}, {0.1, 0.3}}), w});
}

/// σ(u) = λu (parabolic Anderson model), d = m = 1.
inline heatclt::DiffusionField pam_field(double lambda) {
  return heatclt::DiffusionField::from_family(
      heatclt::AffineSigma{mat({{0.0}}), heatclt::Tensor3(1, 1, 1, lambda)});
}

/// Default-resolution grid wide enough for radii up to R_max.
inline heatclt::Grid default_grid(double T, double R_max, std::vector<double> output_times = {}) {
  heatclt::GridSpec spec;
  spec.T = T;
  spec.R_max = R_max;
  spec.output_times = std::move(output_times);
  return heatclt::Grid::create(spec);
}

/// Explicit nx / L grid without padding (for tiny oracle grids).
inline heatclt::Grid tiny_grid(int nt, int nx, double T, double L) {
  heatclt::GridSpec spec;
  spec.T = T;
  spec.dt = T / nt;
  spec.dx.reset();
  spec.nx = nx;
  spec.L = L;
  spec.padding = 0.0;
  return heatclt::Grid::create(spec);
}

}  // namespace testing_support
