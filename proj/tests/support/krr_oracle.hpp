#pragma once

// Brute-force kernel ridge references: refit without each held-out row and
// predict it. Independent of the library's kernel and solver code.

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mechxfer/tensor.hpp"

namespace mechxfer::testing {

inline double rbf(const Eigen::Ref<const RowVector>& a, const Eigen::Ref<const RowVector>& b, double gamma) {
    double d = 0.0;
    for (Eigen::Index k = 0; k < a.size(); ++k) d += (a(k) - b(k)) * (a(k) - b(k));
    return std::exp(-d / gamma);
}

inline double refit_predict(const Matrix& x, const Vector& y, const std::vector<bool>& use, double lambda, double gamma,
                            const Eigen::Ref<const RowVector>& at) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        if (use[std::size_t(i)]) rows.push_back(i);
    const auto m = Eigen::Index(rows.size());
    Eigen::MatrixXd a(m, m);
    Eigen::VectorXd b(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) a(i, j) = rbf(x.row(rows[std::size_t(i)]), x.row(rows[std::size_t(j)]), gamma);
        a(i, i) += lambda;
        b(i) = y(rows[std::size_t(i)]);
    }
    const Eigen::VectorXd alpha = a.ldlt().solve(b);
    double p = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) p += alpha(i) * rbf(x.row(rows[std::size_t(i)]), at, gamma);
    return p;
}

inline double brute_force_cv(const Matrix& x, const Vector& y, double lambda, double gamma,
                             std::span<const std::size_t> held_out,
                             const std::vector<std::vector<std::size_t>>& drop = {}) {
    double total = 0.0;
    for (std::size_t t = 0; t < held_out.size(); ++t) {
        std::vector<bool> use(std::size_t(x.rows()), true);
        use[held_out[t]] = false;
        if (!drop.empty())
            for (auto d : drop[t]) use[d] = false;
        const auto i = Eigen::Index(held_out[t]);
        const double r = y(i) - refit_predict(x, y, use, lambda, gamma, x.row(i));
        total += r * r;
    }
    return total / double(held_out.size());
}

}  // namespace mechxfer::testing
