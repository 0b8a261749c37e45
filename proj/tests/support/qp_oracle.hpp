#pragma once

// Exhaustive active-set solver for the one-class dual on tiny inputs. Every
// index is tried as at-zero, at-the-cap or free (3^n patterns); free
// coordinates solve the equality-constrained stationarity system and the
// best box-feasible candidate wins. Exact for a convex QP.

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "mechxfer/tensor.hpp"

namespace mechxfer::testing {

struct QpOracleResult {
    Vector alpha;
    double objective = std::numeric_limits<double>::infinity();
};

inline Matrix rbf_gram(const Matrix& x, double gamma) {
    Matrix q(x.rows(), x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.rows(); ++j) q(i, j) = std::exp(-(x.row(i) - x.row(j)).squaredNorm() / gamma);
    return q;
}

inline QpOracleResult one_class_qp_oracle(const Matrix& q, double upper) {
    const Eigen::Index n = q.rows();
    QpOracleResult best;
    long patterns = 1;
    for (Eigen::Index i = 0; i < n; ++i) patterns *= 3;
    for (long code = 0; code < patterns; ++code) {
        std::vector<int> state(static_cast<std::size_t>(n));
        long c = code;
        for (auto& s : state) {
            s = int(c % 3);  // 0: zero, 1: cap, 2: free
            c /= 3;
        }
        Vector alpha = Vector::Zero(n);
        std::vector<Eigen::Index> free;
        double fixed_mass = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (state[std::size_t(i)] == 1) {
                alpha(i) = upper;
                fixed_mass += upper;
            } else if (state[std::size_t(i)] == 2) {
                free.push_back(i);
            }
        }
        const auto f = Eigen::Index(free.size());
        if (f == 0) {
            if (std::abs(fixed_mass - 1.0) > 1e-12) continue;
        } else {
            // [Q_FF  -1][a_F]   [-Q_FC a_C]
            // [1'     0][lam] = [1 - mass  ]
            Matrix sys = Matrix::Zero(f + 1, f + 1);
            Vector rhs = Vector::Zero(f + 1);
            for (Eigen::Index a = 0; a < f; ++a) {
                for (Eigen::Index b = 0; b < f; ++b) sys(a, b) = q(free[std::size_t(a)], free[std::size_t(b)]);
                sys(a, f) = -1.0;
                sys(f, a) = 1.0;
                rhs(a) = -(q.row(free[std::size_t(a)]) * alpha)(0);
            }
            rhs(f) = 1.0 - fixed_mass;
            Eigen::FullPivLU<Matrix> lu(sys);
            if (!lu.isInvertible()) continue;
            const Vector sol = lu.solve(rhs);
            bool ok = true;
            for (Eigen::Index a = 0; a < f; ++a) {
                if (sol(a) < -1e-12 || sol(a) > upper + 1e-12) ok = false;
                alpha(free[std::size_t(a)]) = sol(a);
            }
            if (!ok) continue;
        }
        const double obj = 0.5 * alpha.dot(q * alpha);
        if (obj < best.objective) {
            best.objective = obj;
            best.alpha = alpha;
        }
    }
    return best;
}

}  // namespace mechxfer::testing
