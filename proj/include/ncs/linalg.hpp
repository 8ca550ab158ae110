#pragma once

// Dense real linear algebra used throughout the toolkit: symmetric storage,
// block-structured matrices, and the spectral primitives (eigenvalues,
// singular values, PSD projection) consumed by the LMI layer.

#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace ncs {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Raised when an argument violates a documented precondition
/// (non-finite entries, inconsistent shapes, out-of-range options).
class InvalidInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Real symmetric matrix. Storage is kept exactly symmetric: every mutation
/// writes both (i,j) and (j,i).
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(int order);

  /// Symmetrizes `m` as (m + m^T)/2, which yields bitwise-equal mirror
  /// entries. Throws InvalidInputError if `m` is not square.
  static SymMatrix symmetrized(const MatrixXd& m);
  /// Accepts `m` only if it is symmetric within `tol` relative to
  /// max(1, ||m||_F); the stored copy is exactly symmetric.
  static SymMatrix from_symmetric(const MatrixXd& m, double tol = 1e-12);
  static SymMatrix identity(int order);
  static SymMatrix diagonal(const VectorXd& d);
  static SymMatrix block_diagonal(const std::vector<SymMatrix>& blocks);

  int order() const { return static_cast<int>(m_.rows()); }
  double operator()(int i, int j) const { return m_(i, j); }
  void set(int i, int j, double v);
  const MatrixXd& matrix() const { return m_; }

  /// Diagonal block starting at `offset` of size `size`.
  SymMatrix block(int offset, int size) const;

  SymMatrix operator+(const SymMatrix& o) const;
  SymMatrix operator-(const SymMatrix& o) const;
  SymMatrix operator*(double s) const;

  bool is_finite() const { return m_.allFinite(); }

 private:
  MatrixXd m_;
};

struct SymmetricEigen {
  VectorXd values;   // ascending
  MatrixXd vectors;  // column k pairs with values(k)
};

/// Householder tridiagonalization followed by implicit QL iterations with
/// Wilkinson shifts. Eigenvalues come back in ascending order.
SymmetricEigen symmetric_eigen(const SymMatrix& m);
VectorXd symmetric_eigenvalues(const SymMatrix& m);

double min_eig(const SymMatrix& m);
double max_eig(const SymMatrix& m);

/// Largest singular value (spectral norm). Empty matrices have norm 0.
double max_singular_value(const MatrixXd& m);

/// Nearest positive semidefinite matrix in Frobenius norm.
SymMatrix psd_project(const SymMatrix& m);

/// Throws InvalidInputError naming `what` if `m` has NaN/Inf entries.
void require_finite(const MatrixXd& m, const std::string& what);

/// Block-partitioned real matrix. Blocks that are absent are zero and are
/// never stored.
class BlockMatrix {
 public:
  BlockMatrix() = default;
  BlockMatrix(std::vector<int> row_dims, std::vector<int> col_dims);

  /// Splits a dense matrix along the given partition, keeping only the
  /// blocks that contain a nonzero entry.
  static BlockMatrix from_dense(const MatrixXd& dense, std::vector<int> row_dims,
                                std::vector<int> col_dims);
  static BlockMatrix block_diagonal(const std::vector<MatrixXd>& blocks);

  const std::vector<int>& row_dims() const { return row_dims_; }
  const std::vector<int>& col_dims() const { return col_dims_; }
  int block_rows() const { return static_cast<int>(row_dims_.size()); }
  int block_cols() const { return static_cast<int>(col_dims_.size()); }
  int rows() const { return total_rows_; }
  int cols() const { return total_cols_; }
  int row_offset(int i) const { return row_offsets_[i]; }
  int col_offset(int j) const { return col_offsets_[j]; }

  void set_block(int i, int j, const MatrixXd& b);
  void erase_block(int i, int j);
  bool has_block(int i, int j) const;
  /// The stored block, or a zero matrix of the right shape when absent.
  MatrixXd block(int i, int j) const;
  const std::map<std::pair<int, int>, MatrixXd>& blocks() const { return blocks_; }

  MatrixXd to_dense() const;

  /// Blockwise equality with absent blocks treated as zero.
  bool operator==(const BlockMatrix& o) const;

 private:
  void check_index(int i, int j) const;

  std::vector<int> row_dims_, col_dims_;
  std::vector<int> row_offsets_, col_offsets_;
  int total_rows_ = 0, total_cols_ = 0;
  std::map<std::pair<int, int>, MatrixXd> blocks_;
};

}  // namespace ncs
