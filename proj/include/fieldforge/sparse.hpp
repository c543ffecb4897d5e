#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/OrderingMethods>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include "fieldforge/diagnostics.hpp"

namespace fieldforge {

using Complex = std::complex<double>;

template <typename T>
struct is_complex : std::false_type {};
template <typename T>
struct is_complex<std::complex<T>> : std::true_type {};

template <typename T>
double abs2(const T& v) {
    return std::norm(v);
}

template <typename T>
T conj_if(const T& v) {
    if constexpr (is_complex<T>::value) {
        return std::conj(v);
    } else {
        return v;
    }
}

template <typename T>
using Vector = std::vector<T>;

template <typename T>
double norm2(std::span<const T> v) {
    double s = 0.0;
    for (const auto& x : v) s += abs2(x);
    return std::sqrt(s);
}
template <typename T>
double norm2(const std::vector<T>& v) {
    return norm2(std::span<const T>(v));
}

template <typename T>
struct Triplet {
    std::size_t row;
    std::size_t col;
    T value;
};

template <typename T>
class CsrMatrix;

/// Triplet accumulator; duplicates are summed when converted.
template <typename T>
class CooBuilder {
public:
    CooBuilder(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {}

    void add(std::size_t r, std::size_t c, T v) {
        if (r >= rows_ || c >= cols_) {
            throw Error("triplet (" + std::to_string(r) + "," + std::to_string(c) + ") outside shape " +
                        std::to_string(rows_) + "x" + std::to_string(cols_));
        }
        triplets_.push_back({r, c, v});
    }

    void reserve(std::size_t n) { triplets_.reserve(n); }
    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    const std::vector<Triplet<T>>& triplets() const { return triplets_; }

private:
    std::size_t rows_, cols_;
    std::vector<Triplet<T>> triplets_;
};

/// Compressed sparse row matrix. Column indices strictly increase per row and no
/// stored value is exactly zero.
template <typename T>
class CsrMatrix {
public:
    using value_type = T;

    CsrMatrix() = default;
    CsrMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), row_ptr_(rows + 1, 0) {}

    static CsrMatrix identity(std::size_t n) {
        CsrMatrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            m.col_idx_.push_back(i);
            m.values_.push_back(T(1));
            m.row_ptr_[i + 1] = i + 1;
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t nnz() const { return values_.size(); }
    const std::vector<std::size_t>& row_ptr() const { return row_ptr_; }
    const std::vector<std::size_t>& col_idx() const { return col_idx_; }
    const std::vector<T>& values() const { return values_; }

    T operator()(std::size_t r, std::size_t c) const {
        auto b = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_.at(r));
        auto e = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_.at(r + 1));
        auto it = std::lower_bound(b, e, c);
        if (it == e || *it != c) return T(0);
        return values_[static_cast<std::size_t>(it - col_idx_.begin())];
    }

    template <typename U>
    auto multiply(std::span<const U> x) const {
        using R = decltype(T() * U());
        if (x.size() != cols_) throw Error("matvec size mismatch");
        std::vector<R> y(rows_, R(0));
        for (std::size_t r = 0; r < rows_; ++r) {
            R s(0);
            for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) s += values_[k] * x[col_idx_[k]];
            y[r] = s;
        }
        return y;
    }
    template <typename U>
    auto multiply(const std::vector<U>& x) const {
        return multiply(std::span<const U>(x));
    }

    CsrMatrix transpose() const {
        CooBuilder<T> b(cols_, rows_);
        b.reserve(nnz());
        for_each([&](std::size_t r, std::size_t c, const T& v) { b.add(c, r, v); });
        return CsrMatrix::from(b);
    }

    CsrMatrix scaled(T s) const {
        CsrMatrix m = *this;
        for (auto& v : m.values_) v *= s;
        if (s == T(0)) return CsrMatrix(rows_, cols_);
        return m;
    }

    template <typename U>
    CsrMatrix<U> cast() const {
        CooBuilder<U> b(rows_, cols_);
        for_each([&](std::size_t r, std::size_t c, const T& v) { b.add(r, c, U(v)); });
        return CsrMatrix<U>::from(b);
    }

    double frobenius_norm() const {
        double s = 0.0;
        for (const auto& v : values_) s += abs2(v);
        return std::sqrt(s);
    }

    /// True when |A_ij - conj(A_ji)| ≤ rel_tol·max|A| everywhere.
    bool is_hermitian(double rel_tol = 1e-13) const {
        if (rows_ != cols_) return false;
        double amax = 0.0;
        for (const auto& v : values_) amax = std::max(amax, std::abs(v));
        bool ok = true;
        for_each([&](std::size_t r, std::size_t c, const T& v) {
            if (std::abs(v - conj_if((*this)(c, r))) > rel_tol * amax) ok = false;
        });
        return ok;
    }

    std::vector<T> diagonal() const {
        std::vector<T> d(std::min(rows_, cols_), T(0));
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = (*this)(i, i);
        return d;
    }

    template <typename F>
    void for_each(F&& f) const {
        for (std::size_t r = 0; r < rows_; ++r)
            for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) f(r, col_idx_[k], values_[k]);
    }

    /// Row-major dense copy, for small systems and tests.
    std::vector<T> to_dense() const {
        std::vector<T> d(rows_ * cols_, T(0));
        for_each([&](std::size_t r, std::size_t c, const T& v) { d[r * cols_ + c] = v; });
        return d;
    }

    /// Sums duplicates in triplet order, prunes exact zeros.
    static CsrMatrix from(const CooBuilder<T>& b) {
        const auto& trip = b.triplets();
        CsrMatrix m(b.rows(), b.cols());
        std::vector<std::size_t> order(trip.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
            return std::tie(trip[a].row, trip[a].col) < std::tie(trip[c].row, trip[c].col);
        });
        std::size_t i = 0;
        for (std::size_t r = 0; r < m.rows_; ++r) {
            while (i < order.size() && trip[order[i]].row == r) {
                const std::size_t c = trip[order[i]].col;
                T s(0);
                while (i < order.size() && trip[order[i]].row == r && trip[order[i]].col == c) s += trip[order[i++]].value;
                if (s != T(0)) {
                    m.col_idx_.push_back(c);
                    m.values_.push_back(s);
                }
            }
            m.row_ptr_[r + 1] = m.values_.size();
        }
        return m;
    }

    friend CsrMatrix operator+(const CsrMatrix& a, const CsrMatrix& b) {
        if (a.rows_ != b.rows_ || a.cols_ != b.cols_) throw Error("matrix sum shape mismatch");
        CooBuilder<T> c(a.rows_, a.cols_);
        c.reserve(a.nnz() + b.nnz());
        a.for_each([&](std::size_t r, std::size_t col, const T& v) { c.add(r, col, v); });
        b.for_each([&](std::size_t r, std::size_t col, const T& v) { c.add(r, col, v); });
        return from(c);
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<std::size_t> row_ptr_{0};
    std::vector<std::size_t> col_idx_;
    std::vector<T> values_;
};

using RealMatrix = CsrMatrix<double>;
using ComplexMatrix = CsrMatrix<Complex>;

template <typename T>
CsrMatrix<T> to_csr(const CooBuilder<T>& b) {
    return CsrMatrix<T>::from(b);
}

/// Block matrix from a grid of optional blocks; absent blocks are zero. Every
/// block row and column needs at least one present block to fix its size.
template <typename T>
CsrMatrix<T> block_compose(const std::vector<std::vector<std::optional<CsrMatrix<T>>>>& blocks) {
    const std::size_t br = blocks.size();
    const std::size_t bc = br ? blocks[0].size() : 0;
    std::vector<std::optional<std::size_t>> heights(br), widths(bc);
    for (std::size_t i = 0; i < br; ++i) {
        if (blocks[i].size() != bc) throw Error("nonconformal shapes: ragged block grid");
        for (std::size_t j = 0; j < bc; ++j) {
            const auto& b = blocks[i][j];
            if (!b) continue;
            if (heights[i] && *heights[i] != b->rows())
                throw Error("nonconformal shapes: block row " + std::to_string(i) + " has blocks of different heights");
            if (widths[j] && *widths[j] != b->cols())
                throw Error("nonconformal shapes: block column " + std::to_string(j) + " has blocks of different widths");
            heights[i] = b->rows();
            widths[j] = b->cols();
        }
    }
    std::vector<std::size_t> row_off(br + 1, 0), col_off(bc + 1, 0);
    for (std::size_t i = 0; i < br; ++i) {
        if (!heights[i]) throw Error("nonconformal shapes: block row " + std::to_string(i) + " is empty");
        row_off[i + 1] = row_off[i] + *heights[i];
    }
    for (std::size_t j = 0; j < bc; ++j) {
        if (!widths[j]) throw Error("nonconformal shapes: block column " + std::to_string(j) + " is empty");
        col_off[j + 1] = col_off[j] + *widths[j];
    }
    CooBuilder<T> out(row_off[br], col_off[bc]);
    for (std::size_t i = 0; i < br; ++i)
        for (std::size_t j = 0; j < bc; ++j)
            if (const auto& b = blocks[i][j])
                b->for_each([&](std::size_t r, std::size_t c, const T& v) { out.add(row_off[i] + r, col_off[j] + c, v); });
    return to_csr(out);
}

template <typename T>
std::vector<T> stack_vectors(const std::vector<std::vector<T>>& parts) {
    std::vector<T> out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
}

/// Column vector as an n×1 matrix, and a row vector as 1×n.
template <typename T>
CsrMatrix<T> column_matrix(const std::vector<T>& v) {
    CooBuilder<T> b(v.size(), 1);
    for (std::size_t i = 0; i < v.size(); ++i) b.add(i, 0, v[i]);
    return to_csr(b);
}
template <typename T>
CsrMatrix<T> row_matrix(const std::vector<T>& v) {
    CooBuilder<T> b(1, v.size());
    for (std::size_t i = 0; i < v.size(); ++i) b.add(0, i, v[i]);
    return to_csr(b);
}

template <typename T>
double residual_norm(const CsrMatrix<T>& a, std::span<const T> x, std::span<const T> b) {
    auto ax = a.multiply(x);
    double s = 0.0;
    for (std::size_t i = 0; i < ax.size(); ++i) s += abs2(ax[i] - b[i]);
    return std::sqrt(s);
}
template <typename T>
double residual_norm(const CsrMatrix<T>& a, const std::vector<T>& x, const std::vector<T>& b) {
    return residual_norm(a, std::span<const T>(x), std::span<const T>(b));
}

/// Contract bound used by the direct solver: ‖Ax − b‖ ≤ 1e-10 (‖A‖_F ‖x‖ + ‖b‖).
template <typename T>
bool residual_within_contract(const CsrMatrix<T>& a, const std::vector<T>& x, const std::vector<T>& b, double factor = 1e-10) {
    return residual_norm(a, x, b) <= factor * (a.frobenius_norm() * norm2(x) + norm2(b));
}

/// Sparse LU with column approximate-minimum-degree (COLAMD) ordering and partial pivoting.
template <typename T>
std::vector<T> solve_direct(const CsrMatrix<T>& a, const std::vector<T>& b) {
    if (a.rows() != a.cols()) throw Error("solve_direct needs a square matrix");
    if (b.size() != a.rows()) throw Error("solve_direct rhs size mismatch");
    const std::size_t n = a.rows();
    if (n == 0) return {};

    using SpMat = Eigen::SparseMatrix<T, Eigen::ColMajor, int>;
    std::vector<Eigen::Triplet<T, int>> trips;
    trips.reserve(a.nnz());
    a.for_each([&](std::size_t r, std::size_t c, const T& v) { trips.emplace_back(static_cast<int>(r), static_cast<int>(c), v); });
    SpMat m(static_cast<int>(n), static_cast<int>(n));
    m.setFromTriplets(trips.begin(), trips.end());
    m.makeCompressed();

    Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu;
    lu.analyzePattern(m);
    lu.factorize(m);
    if (lu.info() != Eigen::Success) throw SolverError("singular matrix: " + lu.lastErrorMessage());

    Eigen::Matrix<T, Eigen::Dynamic, 1> rhs(static_cast<int>(n));
    for (std::size_t i = 0; i < n; ++i) rhs[static_cast<int>(i)] = b[i];
    Eigen::Matrix<T, Eigen::Dynamic, 1> sol = lu.solve(rhs);
    if (lu.info() != Eigen::Success) throw SolverError("singular matrix: back substitution failed");

    std::vector<T> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = sol[static_cast<int>(i)];
    for (const auto& v : x)
        if (!std::isfinite(std::abs(v))) throw SolverError("singular matrix: non-finite solution (pivot failure)");
    if (!residual_within_contract(a, x, b)) throw SolverError("singular matrix: residual above contract after LU solve");
    return x;
}

enum class IterativeMethod { cg, bicgstab };
enum class IterativeStatus { converged, max_iterations, breakdown };

template <typename T>
struct IterativeResult {
    std::vector<T> x;
    std::size_t iterations = 0;
    double relative_residual = 0.0;
    IterativeStatus status = IterativeStatus::converged;

    bool converged() const { return status == IterativeStatus::converged; }
};

namespace detail {
template <typename T>
T dot(const std::vector<T>& a, const std::vector<T>& b) {
    // conjugate-linear in the first argument
    T s(0);
    for (std::size_t i = 0; i < a.size(); ++i) s += conj_if(a[i]) * b[i];
    return s;
}
}  // namespace detail

/// Jacobi-preconditioned CG (Hermitian positive definite) or BiCGSTAB.
/// Non-convergence is reported through the status flag with the best iterate.
template <typename T>
IterativeResult<T> solve_iterative(const CsrMatrix<T>& a, const std::vector<T>& b, double tol, std::size_t maxit,
                                   IterativeMethod method = IterativeMethod::cg) {
    if (a.rows() != a.cols() || b.size() != a.rows()) throw Error("solve_iterative shape mismatch");
    if (method == IterativeMethod::cg && !a.is_hermitian(1e-12))
        throw Error("precondition violated: cg requires a symmetric (Hermitian) matrix");
    const std::size_t n = b.size();
    std::vector<T> dinv = a.diagonal();
    for (auto& d : dinv) {
        if (d == T(0)) throw Error("precondition violated: zero diagonal entry, Jacobi preconditioner undefined");
        d = T(1) / d;
    }
    auto precond = [&](const std::vector<T>& r) {
        std::vector<T> z(n);
        for (std::size_t i = 0; i < n; ++i) z[i] = dinv[i] * r[i];
        return z;
    };

    IterativeResult<T> res;
    res.x.assign(n, T(0));
    const double bnorm = norm2(b);
    if (bnorm == 0.0) return res;
    std::vector<T> r = b;
    std::vector<T> best = res.x;
    double best_rel = 1.0;
    auto track = [&](double rel) {
        if (rel < best_rel) {
            best_rel = rel;
            best = res.x;
        }
    };

    if (method == IterativeMethod::cg) {
        std::vector<T> z = precond(r);
        std::vector<T> p = z;
        T rz = detail::dot(r, z);
        for (std::size_t it = 1; it <= maxit; ++it) {
            auto ap = a.multiply(p);
            const T pap = detail::dot(p, ap);
            if (pap == T(0)) {
                res.status = IterativeStatus::breakdown;
                break;
            }
            const T alpha = rz / pap;
            for (std::size_t i = 0; i < n; ++i) {
                res.x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            res.iterations = it;
            const double rel = norm2(r) / bnorm;
            track(rel);
            if (rel <= tol) {
                res.relative_residual = rel;
                return res;
            }
            z = precond(r);
            const T rz_new = detail::dot(r, z);
            const T beta = rz_new / rz;
            rz = rz_new;
            for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
        }
    } else {
        const std::vector<T> rhat = r;
        std::vector<T> p(n, T(0)), v(n, T(0));
        T rho(1), alpha(1), omega(1);
        for (std::size_t it = 1; it <= maxit; ++it) {
            const T rho_new = detail::dot(rhat, r);
            if (rho_new == T(0) || omega == T(0)) {
                res.status = IterativeStatus::breakdown;
                break;
            }
            const T beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * (p[i] - omega * v[i]);
            const auto phat = precond(p);
            v = a.multiply(phat);
            const T rv = detail::dot(rhat, v);
            if (rv == T(0)) {
                res.status = IterativeStatus::breakdown;
                break;
            }
            alpha = rho / rv;
            std::vector<T> s(n);
            for (std::size_t i = 0; i < n; ++i) s[i] = r[i] - alpha * v[i];
            res.iterations = it;
            if (norm2(s) / bnorm <= tol) {
                for (std::size_t i = 0; i < n; ++i) res.x[i] += alpha * phat[i];
                r = s;
                res.relative_residual = norm2(r) / bnorm;
                return res;
            }
            const auto shat = precond(s);
            const auto t = a.multiply(shat);
            const double tt = std::real(detail::dot(t, t));
            omega = tt == 0.0 ? T(0) : detail::dot(t, s) / T(tt);
            for (std::size_t i = 0; i < n; ++i) {
                res.x[i] += alpha * phat[i] + omega * shat[i];
                r[i] = s[i] - omega * t[i];
            }
            const double rel = norm2(r) / bnorm;
            track(rel);
            if (rel <= tol) {
                res.relative_residual = rel;
                return res;
            }
        }
    }
    if (res.status == IterativeStatus::converged) res.status = IterativeStatus::max_iterations;
    res.x = best;
    res.relative_residual = best_rel;
    return res;
}

}  // namespace fieldforge
