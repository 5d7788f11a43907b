#include "heatclt/model.hpp"

#include "heatclt/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace heatclt {

namespace {

void require_shape(const Matrix& mat, int rows, int cols, const char* name) {
  if (mat.rows() != rows || mat.cols() != cols) {
    throw ConfigError(std::string("sigma family: ") + name + " must be " + std::to_string(rows) +
                      "x" + std::to_string(cols));
  }
}

void require_shape(const Tensor3& t, int d, int m, const char* name) {
  if (t.dim0() != d || t.dim1() != m || t.dim2() != d) {
    throw ConfigError(std::string("sigma family: ") + name + " must be " + std::to_string(d) + "x" +
                      std::to_string(m) + "x" + std::to_string(d));
  }
}

bool all_finite(const Matrix& mat) { return mat.allFinite(); }

bool all_finite(const Tensor3& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

struct Dims {
  int d;
  int m;
};

Dims validate(const ConstantSigma& f) {
  if (f.S.rows() < 1 || f.S.cols() < 1) throw ConfigError("sigma family: S must be non-empty");
  if (!all_finite(f.S)) throw ConfigError("sigma family: S has non-finite entries");
  return {static_cast<int>(f.S.rows()), static_cast<int>(f.S.cols())};
}

Dims validate(const AffineSigma& f) {
  const int d = static_cast<int>(f.a.rows());
  const int m = static_cast<int>(f.a.cols());
  if (d < 1 || m < 1) throw ConfigError("sigma family: a must be non-empty");
  require_shape(f.b, d, m, "b");
  if (!all_finite(f.a) || !all_finite(f.b)) throw ConfigError("sigma family: non-finite entries");
  return {d, m};
}

Dims validate(const BoundedSmoothSigma& f) {
  const int d = static_cast<int>(f.a.rows());
  const int m = static_cast<int>(f.a.cols());
  if (d < 1 || m < 1) throw ConfigError("sigma family: a must be non-empty");
  require_shape(f.c, d, m, "c");
  require_shape(f.w, d, m, "w");
  if (!all_finite(f.a) || !all_finite(f.c) || !all_finite(f.w)) {
    throw ConfigError("sigma family: non-finite entries");
  }
  return {d, m};
}

// Frobenius-norm Lipschitz bounds: |σ(u) − σ(v)|_F ≤ L |u − v|.
double lipschitz_of(const ConstantSigma&) { return 0.0; }

double lipschitz_of(const AffineSigma& f) {
  double s = 0.0;
  for (double v : f.b.data()) s += v * v;
  return std::sqrt(s);
}

double lipschitz_of(const BoundedSmoothSigma& f) {
  double s = 0.0;
  for (int i = 0; i < f.a.rows(); ++i) {
    for (int j = 0; j < f.a.cols(); ++j) {
      double wn = 0.0;
      for (int k = 0; k < f.w.dim2(); ++k) wn += f.w(i, j, k) * f.w(i, j, k);
      s += f.c(i, j) * f.c(i, j) * wn;
    }
  }
  return std::sqrt(s);
}

}  // namespace

std::string family_tag(const SigmaFamily& family) {
  struct Tag {
    std::string operator()(const ConstantSigma&) const { return "constant"; }
    std::string operator()(const AffineSigma&) const { return "affine"; }
    std::string operator()(const BoundedSmoothSigma&) const { return "bounded-smooth"; }
  };
  return std::visit(Tag{}, family);
}

DiffusionField DiffusionField::from_family(SigmaFamily family) {
  DiffusionField field;
  const Dims dims = std::visit([](const auto& f) { return validate(f); }, family);
  field.d_ = dims.d;
  field.m_ = dims.m;
  field.lipschitz_ = std::visit([](const auto& f) { return lipschitz_of(f); }, family);
  field.family_ = std::move(family);
  return field;
}

DiffusionField DiffusionField::custom(int d, int m, SigmaFn sigma,
                                      std::optional<JacobianFn> jacobian, double lipschitz_hint) {
  if (d < 1 || m < 1) throw ConfigError("custom sigma: d and m must be positive");
  if (!sigma) throw ConfigError("custom sigma: missing sigma function");
  if (lipschitz_hint < 0.0) throw ConfigError("custom sigma: negative Lipschitz hint");
  DiffusionField field;
  field.d_ = d;
  field.m_ = m;
  field.lipschitz_ = lipschitz_hint;
  field.sigma_fn_ = std::move(sigma);
  if (jacobian) field.jacobian_fn_ = std::move(*jacobian);
  return field;
}

bool DiffusionField::is_constant() const {
  return family_ && std::holds_alternative<ConstantSigma>(*family_);
}

Matrix DiffusionField::sigma(const Vector& u) const {
  if (u.size() != d_) throw ConfigError("sigma: state has wrong dimension");
  if (!family_) {
    Matrix out = sigma_fn_(u);
    if (out.rows() != d_ || out.cols() != m_) throw ConfigError("custom sigma: wrong output shape");
    return out;
  }
  struct Eval {
    const Vector& u;
    Matrix operator()(const ConstantSigma& f) const { return f.S; }
    Matrix operator()(const AffineSigma& f) const {
      Matrix out = f.a;
      for (int i = 0; i < out.rows(); ++i)
        for (int j = 0; j < out.cols(); ++j)
          for (int k = 0; k < u.size(); ++k) out(i, j) += f.b(i, j, k) * u[k];
      return out;
    }
    Matrix operator()(const BoundedSmoothSigma& f) const {
      Matrix out = f.a;
      for (int i = 0; i < out.rows(); ++i)
        for (int j = 0; j < out.cols(); ++j) {
          double arg = 0.0;
          for (int k = 0; k < u.size(); ++k) arg += f.w(i, j, k) * u[k];
          out(i, j) += f.c(i, j) * std::sin(arg);
        }
      return out;
    }
  };
  return std::visit(Eval{u}, *family_);
}

Tensor3 DiffusionField::jacobian(const Vector& u) const {
  if (u.size() != d_) throw ConfigError("jacobian: state has wrong dimension");
  if (!has_jacobian()) throw ConfigError("sigma has no Jacobian; a differentiable family is required");
  if (!family_) {
    Tensor3 out = jacobian_fn_(u);
    if (out.dim0() != d_ || out.dim1() != m_ || out.dim2() != d_) {
      throw ConfigError("custom jacobian: wrong output shape");
    }
    return out;
  }
  struct Eval {
    const Vector& u;
    int d, m;
    Tensor3 operator()(const ConstantSigma&) const { return Tensor3(d, m, d); }
    Tensor3 operator()(const AffineSigma& f) const { return f.b; }
    Tensor3 operator()(const BoundedSmoothSigma& f) const {
      Tensor3 out(d, m, d);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < m; ++j) {
          double arg = 0.0;
          for (int k = 0; k < d; ++k) arg += f.w(i, j, k) * u[k];
          const double slope = f.c(i, j) * std::cos(arg);
          for (int k = 0; k < d; ++k) out(i, j, k) = slope * f.w(i, j, k);
        }
      return out;
    }
  };
  return std::visit(Eval{u, d_, m_}, *family_);
}

void DiffusionField::sigma_nodes(const FieldView& u, std::span<double> out) const {
  const std::size_t n = u.n;
  if (u.d != d_ || out.size() < static_cast<std::size_t>(d_) * m_ * n) {
    throw ConfigError("sigma_nodes: buffer shape mismatch");
  }
  if (!family_) {
    Vector state(d_);
    for (std::size_t node = 0; node < n; ++node) {
      for (int k = 0; k < d_; ++k) state[k] = u.row(k)[node];
      const Matrix s = sigma(state);
      for (int i = 0; i < d_; ++i)
        for (int j = 0; j < m_; ++j) out[(static_cast<std::size_t>(i) * m_ + j) * n + node] = s(i, j);
    }
    return;
  }
  if (const auto* f = std::get_if<ConstantSigma>(&*family_)) {
    for (int i = 0; i < d_; ++i)
      for (int j = 0; j < m_; ++j) {
        double* dst = out.data() + (static_cast<std::size_t>(i) * m_ + j) * n;
        const double s = f->S(i, j);
        for (std::size_t node = 0; node < n; ++node) dst[node] = s;
      }
  } else if (const auto* f = std::get_if<AffineSigma>(&*family_)) {
    for (int i = 0; i < d_; ++i)
      for (int j = 0; j < m_; ++j) {
        double* dst = out.data() + (static_cast<std::size_t>(i) * m_ + j) * n;
        const double a = f->a(i, j);
        for (std::size_t node = 0; node < n; ++node) dst[node] = a;
        for (int k = 0; k < d_; ++k) {
          const double b = f->b(i, j, k);
          if (b == 0.0) continue;
          const double* src = u.row(k);
          for (std::size_t node = 0; node < n; ++node) dst[node] += b * src[node];
        }
      }
  } else {
    const auto& g = std::get<BoundedSmoothSigma>(*family_);
    for (int i = 0; i < d_; ++i)
      for (int j = 0; j < m_; ++j) {
        double* dst = out.data() + (static_cast<std::size_t>(i) * m_ + j) * n;
        for (std::size_t node = 0; node < n; ++node) dst[node] = 0.0;
        for (int k = 0; k < d_; ++k) {
          const double w = g.w(i, j, k);
          if (w == 0.0) continue;
          const double* src = u.row(k);
          for (std::size_t node = 0; node < n; ++node) dst[node] += w * src[node];
        }
        const double a = g.a(i, j);
        const double c = g.c(i, j);
        for (std::size_t node = 0; node < n; ++node) dst[node] = a + c * std::sin(dst[node]);
      }
  }
}

void DiffusionField::jacobian_nodes(const FieldView& u, std::span<double> out) const {
  const std::size_t n = u.n;
  if (u.d != d_ || out.size() < static_cast<std::size_t>(d_) * m_ * d_ * n) {
    throw ConfigError("jacobian_nodes: buffer shape mismatch");
  }
  if (!has_jacobian()) throw ConfigError("sigma has no Jacobian; a differentiable family is required");
  auto slot = [&](int i, int j, int k) {
    return out.data() + ((static_cast<std::size_t>(i) * m_ + j) * d_ + k) * n;
  };
  if (!family_) {
    Vector state(d_);
    for (std::size_t node = 0; node < n; ++node) {
      for (int k = 0; k < d_; ++k) state[k] = u.row(k)[node];
      const Tensor3 jac = jacobian(state);
      for (int i = 0; i < d_; ++i)
        for (int j = 0; j < m_; ++j)
          for (int k = 0; k < d_; ++k) slot(i, j, k)[node] = jac(i, j, k);
    }
    return;
  }
  if (std::holds_alternative<ConstantSigma>(*family_)) {
    std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(d_ * m_ * d_ * n), 0.0);
  } else if (const auto* f = std::get_if<AffineSigma>(&*family_)) {
    for (int i = 0; i < d_; ++i)
      for (int j = 0; j < m_; ++j)
        for (int k = 0; k < d_; ++k) {
          double* dst = slot(i, j, k);
          const double b = f->b(i, j, k);
          for (std::size_t node = 0; node < n; ++node) dst[node] = b;
        }
  } else {
    const auto& g = std::get<BoundedSmoothSigma>(*family_);
    std::vector<double> slope(n);
    for (int i = 0; i < d_; ++i)
      for (int j = 0; j < m_; ++j) {
        std::fill(slope.begin(), slope.end(), 0.0);
        for (int k = 0; k < d_; ++k) {
          const double w = g.w(i, j, k);
          if (w == 0.0) continue;
          const double* src = u.row(k);
          for (std::size_t node = 0; node < n; ++node) slope[node] += w * src[node];
        }
        const double c = g.c(i, j);
        for (std::size_t node = 0; node < n; ++node) slope[node] = c * std::cos(slope[node]);
        for (int k = 0; k < d_; ++k) {
          double* dst = slot(i, j, k);
          const double w = g.w(i, j, k);
          for (std::size_t node = 0; node < n; ++node) dst[node] = slope[node] * w;
        }
      }
  }
}

H1Result check_h1(const DiffusionField& field) {
  const Matrix s = field.sigma(Vector::Ones(field.d()));
  if (!s.allFinite()) throw NumericalError("check_h1: sigma(1) has non-finite entries");
  Eigen::JacobiSVD<Matrix> svd(s);
  H1Result result;
  result.singular_values = svd.singularValues();
  const double largest = result.singular_values.size() > 0 ? result.singular_values[0] : 0.0;
  for (Eigen::Index k = 0; k < result.singular_values.size(); ++k) {
    if (largest > 0.0 && result.singular_values[k] > 1e-10 * largest) ++result.rank;
  }
  result.holds = result.rank == field.d();
  return result;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double heat_kernel(double t, double x) {
  if (!(t > 0.0)) throw std::domain_error("heat_kernel: t must be positive");
  return std::exp(-x * x / (2.0 * t)) / std::sqrt(2.0 * std::numbers::pi * t);
}

double kernel_window(double tau, double y, double R) {
  if (!(tau > 0.0)) throw std::domain_error("kernel_window: tau must be positive");
  if (!(R > 0.0)) throw std::domain_error("kernel_window: R must be positive");
  const double scale = std::sqrt(2.0 * tau);
  const double ay = std::abs(y);
  const double near = (R - ay) / scale;  // distance to the nearer edge
  const double far = (R + ay) / scale;
  if (near >= 0.0) return 0.5 * (std::erf(near) + std::erf(far));
  // Point outside the window: both edges on the same side, use tails.
  return 0.5 * (std::erfc(-near) - std::erfc(far));
}

}  // namespace heatclt
