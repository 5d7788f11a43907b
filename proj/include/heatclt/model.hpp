#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace heatclt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Dense rank-3 array indexed (i, j, k) with shape (n0, n1, n2), row-major.
/// Used for Jacobians ∂σ_ij/∂u_k and for the per-entry weight vectors of the
/// bounded-smooth family.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(int n0, int n1, int n2, double fill = 0.0)
      : n0_(n0), n1_(n1), n2_(n2), data_(static_cast<std::size_t>(n0) * n1 * n2, fill) {}

  double& operator()(int i, int j, int k) { return data_[index(i, j, k)]; }
  double operator()(int i, int j, int k) const { return data_[index(i, j, k)]; }

  int dim0() const { return n0_; }
  int dim1() const { return n1_; }
  int dim2() const { return n2_; }
  std::span<const double> data() const { return data_; }

 private:
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * n1_ + j) * n2_ + k;
  }

  int n0_ = 0, n1_ = 0, n2_ = 0;
  std::vector<double> data_;
};

/// σ(u) = S.
struct ConstantSigma {
  Matrix S;  // d×m
};

/// σ_ij(u) = a_ij + Σ_k b_ijk u_k.
struct AffineSigma {
  Matrix a;   // d×m
  Tensor3 b;  // d×m×d
};

/// σ_ij(u) = a_ij + c_ij · sin(Σ_k w_ijk u_k).
struct BoundedSmoothSigma {
  Matrix a;   // d×m
  Matrix c;   // d×m
  Tensor3 w;  // d×m×d
};

using SigmaFamily = std::variant<ConstantSigma, AffineSigma, BoundedSmoothSigma>;

std::string family_tag(const SigmaFamily& family);

/// Read-only view of a d-component field on n nodes; row i starts at
/// `data + i * stride`.
struct FieldView {
  const double* data = nullptr;
  int d = 0;
  std::size_t stride = 0;
  std::size_t n = 0;

  const double* row(int i) const { return data + static_cast<std::size_t>(i) * stride; }
};

/// The coefficient map σ: R^d → R^(d×m), with its Jacobian when differentiable.
class DiffusionField {
 public:
  using SigmaFn = std::function<Matrix(const Vector&)>;
  using JacobianFn = std::function<Tensor3(const Vector&)>;

  /// Validates shapes; throws ConfigError on mismatch.
  static DiffusionField from_family(SigmaFamily family);

  /// A user-supplied coefficient. Without a Jacobian the field can drive the
  /// solver but not the Malliavin computations.
  static DiffusionField custom(int d, int m, SigmaFn sigma, std::optional<JacobianFn> jacobian,
                               double lipschitz_hint);

  int d() const { return d_; }
  int m() const { return m_; }
  double lipschitz_hint() const { return lipschitz_; }
  bool has_jacobian() const { return family_.has_value() || static_cast<bool>(jacobian_fn_); }
  const SigmaFamily* family() const { return family_ ? &*family_ : nullptr; }

  Matrix sigma(const Vector& u) const;
  /// d×m×d array ∂σ_ij/∂u_k. Throws ConfigError when the field has no Jacobian.
  Tensor3 jacobian(const Vector& u) const;

  /// σ at every node of `u`; out[(i*m + j) * u.n + node].
  void sigma_nodes(const FieldView& u, std::span<double> out) const;
  /// Jacobian at every node; out[((i*m + j) * d + k) * u.n + node].
  void jacobian_nodes(const FieldView& u, std::span<double> out) const;

  /// True when σ does not depend on u (constant family).
  bool is_constant() const;

 private:
  DiffusionField() = default;

  int d_ = 0;
  int m_ = 0;
  double lipschitz_ = 0.0;
  std::optional<SigmaFamily> family_;
  SigmaFn sigma_fn_;
  JacobianFn jacobian_fn_;
};

struct H1Result {
  bool holds = false;
  int rank = 0;
  Vector singular_values;
};

/// Non-degeneracy at the all-ones state: rank of σ(1̄) with singular values
/// counted above 1e-10 of the largest.
H1Result check_h1(const DiffusionField& field);

/// Standard normal CDF.
double normal_cdf(double z);

/// Gaussian density with variance t. Throws std::domain_error for t ≤ 0.
double heat_kernel(double t, double x);

/// Mass of p_tau(· − y) on [−R, R]. Throws std::domain_error for tau ≤ 0 or R ≤ 0.
double kernel_window(double tau, double y, double R);

}  // namespace heatclt
