#include "mechxfer/ridge.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

namespace mechxfer {

namespace {

constexpr double kLeverageFloor = 1e-12;

void check_inputs(const Matrix& x, const Vector& y, double gamma) {
    if (x.rows() < 1) throw std::invalid_argument("kernel ridge needs at least one row");
    if (x.rows() != y.size()) throw ShapeError("kernel ridge: inputs and targets differ in length");
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("bandwidth must be positive");
    if (!x.allFinite() || !y.allFinite()) throw std::invalid_argument("kernel ridge input contains non-finite values");
}

void check_held_out(std::span<const std::size_t> held_out, Eigen::Index m) {
    if (held_out.empty()) throw std::invalid_argument("held-out index set is empty");
    if (m < 2) throw std::invalid_argument("leave-one-out needs at least 2 training rows");
    for (auto i : held_out)
        if (Eigen::Index(i) >= m) throw std::out_of_range("held-out index out of range");
}

struct Spectrum {
    Eigen::MatrixXd vectors;
    Eigen::VectorXd values;
    Eigen::VectorXd vty;
};

Spectrum spectrum(const Matrix& x, const Vector& y, double gamma) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(rbf_kernel(x, x, gamma)));
    if (es.info() != Eigen::Success) throw std::runtime_error("kernel eigendecomposition failed");
    Spectrum s{es.eigenvectors(), es.eigenvalues(), {}};
    s.vty = s.vectors.transpose() * y;
    return s;
}

// LOO residual at row i is alpha_i / (A^-1)_ii with A = K + lambda I, and
// 1 - H_ii = lambda (A^-1)_ii.
double spectral_loocv(const Spectrum& s, double lambda, std::span<const std::size_t> held_out) {
    const Eigen::VectorXd inv = (s.values.array() + lambda).inverse();
    double total = 0.0;
    for (auto i : held_out) {
        const auto row = s.vectors.row(Eigen::Index(i));
        const double a_ii = (row.array().square() * inv.transpose().array()).sum();
        const double alpha_i = (row.array() * (inv.array() * s.vty.array()).transpose()).sum();
        if (!(lambda * a_ii > kLeverageFloor)) return std::numeric_limits<double>::infinity();
        const double r = alpha_i / a_ii;
        total += r * r;
    }
    return total / double(held_out.size());
}

LambdaSelection pick(std::vector<double> scores) {
    const auto grid = lambda_grid();
    LambdaSelection sel;
    sel.score = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < grid.size(); ++k)
        if (scores[k] < sel.score) {
            sel.score = scores[k];
            sel.lambda = grid[k];
        }
    if (!std::isfinite(sel.score)) throw DegenerateLeverageError("every ridge value on the grid has degenerate leverage");
    sel.scores = std::move(scores);
    return sel;
}

std::vector<std::size_t> kept_rows(Eigen::Index m, const std::vector<std::size_t>& drop) {
    std::vector<bool> gone(std::size_t(m), false);
    for (auto d : drop) {
        if (Eigen::Index(d) >= m) throw std::out_of_range("dropped row index out of range");
        gone[d] = true;
    }
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < gone.size(); ++i)
        if (!gone[i]) keep.push_back(i);
    if (keep.empty()) throw std::invalid_argument("a held-out group leaves no training rows");
    return keep;
}

void check_groups(std::span<const std::size_t> held_out, const std::vector<std::vector<std::size_t>>& drop) {
    if (drop.size() != held_out.size()) throw std::invalid_argument("need one drop group per held-out row");
    for (std::size_t t = 0; t < drop.size(); ++t)
        if (std::find(drop[t].begin(), drop[t].end(), held_out[t]) == drop[t].end())
            throw std::invalid_argument("a drop group must contain its held-out row");
}

Matrix select_rows(const Matrix& x, const std::vector<std::size_t>& rows) {
    Matrix out(Eigen::Index(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(Eigen::Index(i)) = x.row(Eigen::Index(rows[i]));
    return out;
}

Vector select_rows(const Vector& y, const std::vector<std::size_t>& rows) {
    Vector out(Eigen::Index(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out(Eigen::Index(i)) = y(Eigen::Index(rows[i]));
    return out;
}

}  // namespace

Matrix rbf_kernel(const Matrix& a, const Matrix& b, double gamma) {
    if (a.cols() != b.cols()) throw ShapeError("rbf_kernel: inputs differ in width");
    Matrix k(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.rows(); ++j) k(i, j) = std::exp(-(a.row(i) - b.row(j)).squaredNorm() / gamma);
    return k;
}

double median_bandwidth(const Matrix& inputs) {
    const Eigen::Index m = inputs.rows();
    if (m < 2) throw std::invalid_argument("median heuristic needs at least 2 rows");
    std::vector<double> d;
    d.reserve(std::size_t(m) * std::size_t(m - 1) / 2);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = i + 1; j < m; ++j) d.push_back((inputs.row(i) - inputs.row(j)).squaredNorm());
    const std::size_t half = d.size() / 2;
    std::nth_element(d.begin(), d.begin() + std::ptrdiff_t(half), d.end());
    double med = d[half];
    if (d.size() % 2 == 0) med = 0.5 * (med + *std::max_element(d.begin(), d.begin() + std::ptrdiff_t(half)));
    return med > 0.0 ? med : 1.0;
}

KrrModel fit_krr(const Matrix& x, const Vector& y, double lambda, double gamma) {
    check_inputs(x, y, gamma);
    if (!(lambda > 0.0)) throw std::invalid_argument("ridge must be positive");
    Matrix a = rbf_kernel(x, x, gamma);
    a.diagonal().array() += lambda;
    KrrModel m{x, a.partialPivLu().solve(y), gamma, lambda};
    if (!m.alpha.allFinite()) throw std::runtime_error("kernel ridge solve produced non-finite coefficients");
    return m;
}

double predict(const KrrModel& model, const Eigen::Ref<const RowVector>& x) {
    if (x.size() != model.inputs.cols()) throw ShapeError("predict: point width differs from the model");
    double s = 0.0;
    for (Eigen::Index i = 0; i < model.inputs.rows(); ++i)
        s += model.alpha(i) * std::exp(-(model.inputs.row(i) - x).squaredNorm() / model.gamma);
    return s;
}

Vector predict_rows(const KrrModel& model, const Matrix& x) {
    Vector out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = predict(model, x.row(i));
    return out;
}

Vector loocv_residuals(const Matrix& x, const Vector& y, double lambda, double gamma,
                       std::span<const std::size_t> held_out) {
    check_inputs(x, y, gamma);
    if (!(lambda > 0.0)) throw std::invalid_argument("ridge must be positive");
    check_held_out(held_out, x.rows());
    Matrix a = rbf_kernel(x, x, gamma);
    a.diagonal().array() += lambda;
    const Eigen::PartialPivLU<Matrix> lu(a);
    const Vector alpha = lu.solve(y);
    Matrix e = Matrix::Zero(x.rows(), Eigen::Index(held_out.size()));
    for (std::size_t t = 0; t < held_out.size(); ++t) e(Eigen::Index(held_out[t]), Eigen::Index(t)) = 1.0;
    const Matrix inv_cols = lu.solve(e);
    Vector r(Eigen::Index(held_out.size()));
    for (std::size_t t = 0; t < held_out.size(); ++t) {
        const double a_ii = inv_cols(Eigen::Index(held_out[t]), Eigen::Index(t));
        if (!(lambda * a_ii > kLeverageFloor))
            throw DegenerateLeverageError("leverage of row " + std::to_string(held_out[t]) + " is 1 within 1e-12");
        r(Eigen::Index(t)) = alpha(Eigen::Index(held_out[t])) / a_ii;
    }
    return r;
}

double loocv_mse(const Matrix& x, const Vector& y, double lambda, double gamma, std::span<const std::size_t> held_out) {
    return loocv_residuals(x, y, lambda, gamma, held_out).squaredNorm() / double(held_out.size());
}

std::vector<double> lambda_grid() {
    std::vector<double> g;
    for (int k = -10; k <= 10; ++k) g.push_back(std::ldexp(1.0, k));
    return g;
}

LambdaSelection select_lambda(const Matrix& x, const Vector& y, double gamma, std::span<const std::size_t> held_out) {
    check_inputs(x, y, gamma);
    check_held_out(held_out, x.rows());
    const Spectrum s = spectrum(x, y, gamma);
    std::vector<double> scores;
    for (double lambda : lambda_grid()) scores.push_back(spectral_loocv(s, lambda, held_out));
    return pick(std::move(scores));
}

double grouped_cv_mse(const Matrix& x, const Vector& y, double lambda, double gamma,
                      std::span<const std::size_t> held_out, const std::vector<std::vector<std::size_t>>& drop) {
    check_inputs(x, y, gamma);
    check_held_out(held_out, x.rows());
    check_groups(held_out, drop);
    double total = 0.0;
    for (std::size_t t = 0; t < held_out.size(); ++t) {
        const auto keep = kept_rows(x.rows(), drop[t]);
        const KrrModel m = fit_krr(select_rows(x, keep), select_rows(y, keep), lambda, gamma);
        const double r = y(Eigen::Index(held_out[t])) - predict(m, x.row(Eigen::Index(held_out[t])));
        total += r * r;
    }
    return total / double(held_out.size());
}

LambdaSelection select_lambda_grouped(const Matrix& x, const Vector& y, double gamma,
                                      std::span<const std::size_t> held_out,
                                      const std::vector<std::vector<std::size_t>>& drop) {
    check_inputs(x, y, gamma);
    check_held_out(held_out, x.rows());
    check_groups(held_out, drop);
    const auto grid = lambda_grid();
    std::vector<double> scores(grid.size(), 0.0);
    for (std::size_t t = 0; t < held_out.size(); ++t) {
        const auto keep = kept_rows(x.rows(), drop[t]);
        const Matrix xk = select_rows(x, keep);
        const Spectrum s = spectrum(xk, select_rows(y, keep), gamma);
        const Eigen::VectorXd kx = rbf_kernel(xk, x.row(Eigen::Index(held_out[t])), gamma).col(0);
        const Eigen::VectorXd proj = s.vectors.transpose() * kx;
        for (std::size_t g = 0; g < grid.size(); ++g) {
            const double pred = (proj.array() * s.vty.array() / (s.values.array() + grid[g])).sum();
            const double r = y(Eigen::Index(held_out[t])) - pred;
            scores[g] += r * r / double(held_out.size());
        }
    }
    return pick(std::move(scores));
}

}  // namespace mechxfer
