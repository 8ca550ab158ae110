#include "ncs/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ncs {

namespace {

// Householder reduction of a symmetric matrix to tridiagonal form. On exit
// `v` holds the accumulated orthogonal transform, `d` the diagonal and
// `e` the subdiagonal in e[1..n-1] (e[0] = 0).
void tridiagonalize(MatrixXd& v, VectorXd& d, VectorXd& e) {
  const int n = static_cast<int>(v.rows());
  for (int j = 0; j < n; ++j) d[j] = v(n - 1, j);

  for (int i = n - 1; i > 0; --i) {
    double scale = 0.0;
    double h = 0.0;
    for (int k = 0; k < i; ++k) scale += std::abs(d[k]);
    if (scale == 0.0) {
      e[i] = d[i - 1];
      for (int j = 0; j < i; ++j) {
        d[j] = v(i - 1, j);
        v(i, j) = 0.0;
        v(j, i) = 0.0;
      }
    } else {
      for (int k = 0; k < i; ++k) {
        d[k] /= scale;
        h += d[k] * d[k];
      }
      double f = d[i - 1];
      double g = std::sqrt(h);
      if (f > 0) g = -g;
      e[i] = scale * g;
      h -= f * g;
      d[i - 1] = f - g;
      for (int j = 0; j < i; ++j) e[j] = 0.0;

      for (int j = 0; j < i; ++j) {
        f = d[j];
        v(j, i) = f;
        g = e[j] + v(j, j) * f;
        for (int k = j + 1; k <= i - 1; ++k) {
          g += v(k, j) * d[k];
          e[k] += v(k, j) * f;
        }
        e[j] = g;
      }
      f = 0.0;
      for (int j = 0; j < i; ++j) {
        e[j] /= h;
        f += e[j] * d[j];
      }
      const double hh = f / (h + h);
      for (int j = 0; j < i; ++j) e[j] -= hh * d[j];
      for (int j = 0; j < i; ++j) {
        f = d[j];
        g = e[j];
        for (int k = j; k <= i - 1; ++k) v(k, j) -= (f * e[k] + g * d[k]);
        d[j] = v(i - 1, j);
        v(i, j) = 0.0;
      }
    }
    d[i] = h;
  }

  // Accumulate the transformations.
  for (int i = 0; i < n - 1; ++i) {
    v(n - 1, i) = v(i, i);
    v(i, i) = 1.0;
    const double h = d[i + 1];
    if (h != 0.0) {
      for (int k = 0; k <= i; ++k) d[k] = v(k, i + 1) / h;
      for (int j = 0; j <= i; ++j) {
        double g = 0.0;
        for (int k = 0; k <= i; ++k) g += v(k, i + 1) * v(k, j);
        for (int k = 0; k <= i; ++k) v(k, j) -= g * d[k];
      }
    }
    for (int k = 0; k <= i; ++k) v(k, i + 1) = 0.0;
  }
  for (int j = 0; j < n; ++j) {
    d[j] = v(n - 1, j);
    v(n - 1, j) = 0.0;
  }
  v(n - 1, n - 1) = 1.0;
  e[0] = 0.0;
}

// Implicit QL on the tridiagonal (d, e), shifting each sweep by the
// eigenvalue of the leading 2x2 block nearest d[l] (Wilkinson shift).
void tridiagonal_ql(MatrixXd& v, VectorXd& d, VectorXd& e) {
  const int n = static_cast<int>(v.rows());
  for (int i = 1; i < n; ++i) e[i - 1] = e[i];
  e[n - 1] = 0.0;

  double f = 0.0;
  double tst1 = 0.0;
  const double eps = std::ldexp(1.0, -52);
  for (int l = 0; l < n; ++l) {
    tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
    int m = l;
    while (m < n) {
      if (std::abs(e[m]) <= eps * tst1) break;
      ++m;
    }
    if (m > l) {
      int iter = 0;
      do {
        if (++iter > 200) throw std::runtime_error("symmetric_eigen: QL iteration did not converge");
        double g = d[l];
        double p = (d[l + 1] - g) / (2.0 * e[l]);
        double r = std::hypot(p, 1.0);
        if (p < 0) r = -r;
        d[l] = e[l] / (p + r);
        d[l + 1] = e[l] * (p + r);
        const double dl1 = d[l + 1];
        double h = g - d[l];
        for (int i = l + 2; i < n; ++i) d[i] -= h;
        f += h;

        p = d[m];
        double c = 1.0, c2 = 1.0, c3 = 1.0;
        const double el1 = e[l + 1];
        double s = 0.0, s2 = 0.0;
        for (int i = m - 1; i >= l; --i) {
          c3 = c2;
          c2 = c;
          s2 = s;
          g = c * e[i];
          h = c * p;
          r = std::hypot(p, e[i]);
          e[i + 1] = s * r;
          s = e[i] / r;
          c = p / r;
          p = c * d[i] - s * g;
          d[i + 1] = h + s * (c * g + s * d[i]);
          for (int k = 0; k < n; ++k) {
            h = v(k, i + 1);
            v(k, i + 1) = s * v(k, i) + c * h;
            v(k, i) = c * v(k, i) - s * h;
          }
        }
        p = -s * s2 * c3 * el1 * e[l] / dl1;
        e[l] = s * p;
        d[l] = c * p;
      } while (std::abs(e[l]) > eps * tst1);
    }
    d[l] += f;
    e[l] = 0.0;
  }
}

}  // namespace

void require_finite(const MatrixXd& m, const std::string& what) {
  if (!m.allFinite()) throw InvalidInputError(what + ": non-finite entry");
}

SymMatrix::SymMatrix(int order) {
  if (order < 0) throw InvalidInputError("SymMatrix: negative order");
  m_ = MatrixXd::Zero(order, order);
}

SymMatrix SymMatrix::symmetrized(const MatrixXd& m) {
  if (m.rows() != m.cols()) throw InvalidInputError("SymMatrix: matrix is not square");
  SymMatrix s;
  s.m_ = m;
  const int n = static_cast<int>(m.rows());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double v = 0.5 * (m(i, j) + m(j, i));
      s.m_(i, j) = v;
      s.m_(j, i) = v;
    }
  }
  return s;
}

SymMatrix SymMatrix::from_symmetric(const MatrixXd& m, double tol) {
  if (m.rows() != m.cols()) throw InvalidInputError("SymMatrix: matrix is not square");
  const double scale = std::max(1.0, m.norm());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > tol * scale) {
    throw InvalidInputError("SymMatrix: matrix is not symmetric");
  }
  return symmetrized(m);
}

SymMatrix SymMatrix::identity(int order) {
  SymMatrix s(order);
  s.m_.setIdentity();
  return s;
}

SymMatrix SymMatrix::diagonal(const VectorXd& d) {
  SymMatrix s(static_cast<int>(d.size()));
  s.m_.diagonal() = d;
  return s;
}

SymMatrix SymMatrix::block_diagonal(const std::vector<SymMatrix>& blocks) {
  int n = 0;
  for (const auto& b : blocks) n += b.order();
  SymMatrix s(n);
  int off = 0;
  for (const auto& b : blocks) {
    s.m_.block(off, off, b.order(), b.order()) = b.m_;
    off += b.order();
  }
  return s;
}

void SymMatrix::set(int i, int j, double v) {
  m_(i, j) = v;
  m_(j, i) = v;
}

SymMatrix SymMatrix::block(int offset, int size) const {
  SymMatrix s;
  s.m_ = m_.block(offset, offset, size, size);
  return s;
}

SymMatrix SymMatrix::operator+(const SymMatrix& o) const {
  SymMatrix s;
  s.m_ = m_ + o.m_;
  return s;
}

SymMatrix SymMatrix::operator-(const SymMatrix& o) const {
  SymMatrix s;
  s.m_ = m_ - o.m_;
  return s;
}

SymMatrix SymMatrix::operator*(double k) const {
  SymMatrix s;
  s.m_ = m_ * k;
  return s;
}

SymmetricEigen symmetric_eigen(const SymMatrix& m) {
  require_finite(m.matrix(), "symmetric_eigen");
  const int n = m.order();
  SymmetricEigen out;
  if (n == 0) {
    out.values = VectorXd(0);
    out.vectors = MatrixXd(0, 0);
    return out;
  }
  MatrixXd v = m.matrix();
  VectorXd d(n), e(n);
  tridiagonalize(v, d, e);
  tridiagonal_ql(v, d, e);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return d[a] < d[b]; });
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (int k = 0; k < n; ++k) {
    out.values[k] = d[order[k]];
    out.vectors.col(k) = v.col(order[k]);
  }
  return out;
}

VectorXd symmetric_eigenvalues(const SymMatrix& m) { return symmetric_eigen(m).values; }

double min_eig(const SymMatrix& m) {
  if (m.order() == 0) throw InvalidInputError("min_eig: empty matrix");
  return symmetric_eigen(m).values[0];
}

double max_eig(const SymMatrix& m) {
  if (m.order() == 0) throw InvalidInputError("max_eig: empty matrix");
  const auto vals = symmetric_eigen(m).values;
  return vals[vals.size() - 1];
}

double max_singular_value(const MatrixXd& m) {
  require_finite(m, "max_singular_value");
  if (m.size() == 0) return 0.0;
  const MatrixXd gram = m.rows() < m.cols() ? MatrixXd(m * m.transpose()) : MatrixXd(m.transpose() * m);
  const double top = max_eig(SymMatrix::symmetrized(gram));
  return std::sqrt(std::max(0.0, top));
}

SymMatrix psd_project(const SymMatrix& m) {
  const auto eig = symmetric_eigen(m);
  const VectorXd clipped = eig.values.cwiseMax(0.0);
  return SymMatrix::symmetrized(eig.vectors * clipped.asDiagonal() * eig.vectors.transpose());
}

BlockMatrix::BlockMatrix(std::vector<int> row_dims, std::vector<int> col_dims)
    : row_dims_(std::move(row_dims)), col_dims_(std::move(col_dims)) {
  for (int d : row_dims_) {
    if (d < 0) throw InvalidInputError("BlockMatrix: negative row dimension");
  }
  for (int d : col_dims_) {
    if (d < 0) throw InvalidInputError("BlockMatrix: negative column dimension");
  }
  row_offsets_.resize(row_dims_.size());
  col_offsets_.resize(col_dims_.size());
  for (size_t i = 0; i < row_dims_.size(); ++i) {
    row_offsets_[i] = total_rows_;
    total_rows_ += row_dims_[i];
  }
  for (size_t j = 0; j < col_dims_.size(); ++j) {
    col_offsets_[j] = total_cols_;
    total_cols_ += col_dims_[j];
  }
}

BlockMatrix BlockMatrix::from_dense(const MatrixXd& dense, std::vector<int> row_dims,
                                    std::vector<int> col_dims) {
  BlockMatrix out(std::move(row_dims), std::move(col_dims));
  if (dense.rows() != out.rows() || dense.cols() != out.cols()) {
    throw InvalidInputError("BlockMatrix::from_dense: shape does not match partition");
  }
  for (int i = 0; i < out.block_rows(); ++i) {
    for (int j = 0; j < out.block_cols(); ++j) {
      MatrixXd b = dense.block(out.row_offsets_[i], out.col_offsets_[j], out.row_dims_[i], out.col_dims_[j]);
      if (b.size() > 0 && (b.array() != 0.0).any()) out.blocks_.emplace(std::make_pair(i, j), std::move(b));
    }
  }
  return out;
}

BlockMatrix BlockMatrix::block_diagonal(const std::vector<MatrixXd>& blocks) {
  std::vector<int> rd, cd;
  for (const auto& b : blocks) {
    rd.push_back(static_cast<int>(b.rows()));
    cd.push_back(static_cast<int>(b.cols()));
  }
  BlockMatrix out(rd, cd);
  for (size_t i = 0; i < blocks.size(); ++i) out.set_block(static_cast<int>(i), static_cast<int>(i), blocks[i]);
  return out;
}

void BlockMatrix::check_index(int i, int j) const {
  if (i < 0 || j < 0 || i >= block_rows() || j >= block_cols()) {
    throw InvalidInputError("BlockMatrix: block index out of range");
  }
}

void BlockMatrix::set_block(int i, int j, const MatrixXd& b) {
  check_index(i, j);
  if (b.rows() != row_dims_[i] || b.cols() != col_dims_[j]) {
    std::ostringstream os;
    os << "BlockMatrix: block (" << i << "," << j << ") must be " << row_dims_[i] << "x" << col_dims_[j]
       << ", got " << b.rows() << "x" << b.cols();
    throw InvalidInputError(os.str());
  }
  blocks_[{i, j}] = b;
}

void BlockMatrix::erase_block(int i, int j) {
  check_index(i, j);
  blocks_.erase({i, j});
}

bool BlockMatrix::has_block(int i, int j) const { return blocks_.count({i, j}) > 0; }

MatrixXd BlockMatrix::block(int i, int j) const {
  check_index(i, j);
  auto it = blocks_.find({i, j});
  if (it == blocks_.end()) return MatrixXd::Zero(row_dims_[i], col_dims_[j]);
  return it->second;
}

MatrixXd BlockMatrix::to_dense() const {
  MatrixXd out = MatrixXd::Zero(total_rows_, total_cols_);
  for (const auto& [ij, b] : blocks_) {
    out.block(row_offsets_[ij.first], col_offsets_[ij.second], b.rows(), b.cols()) = b;
  }
  return out;
}

bool BlockMatrix::operator==(const BlockMatrix& o) const {
  if (row_dims_ != o.row_dims_ || col_dims_ != o.col_dims_) return false;
  for (int i = 0; i < block_rows(); ++i) {
    for (int j = 0; j < block_cols(); ++j) {
      if (block(i, j) != o.block(i, j)) return false;
    }
  }
  return true;
}

}  // namespace ncs
