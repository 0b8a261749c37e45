#pragma once

// Kernel ridge regression with k(x, y) = exp(-|x - y|^2 / gamma).

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "mechxfer/tensor.hpp"

namespace mechxfer {

struct KrrModel {
    Matrix inputs;  // m x p
    Vector alpha;
    double gamma = 1.0;
    double lambda = 1.0;
};

class DegenerateLeverageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

Matrix rbf_kernel(const Matrix& a, const Matrix& b, double gamma);

// Median of |x_i - x_j|^2 over i < j (mean of the two middle values for an
// even count); 1 when that median is 0.
double median_bandwidth(const Matrix& inputs);

KrrModel fit_krr(const Matrix& x, const Vector& y, double lambda, double gamma);
double predict(const KrrModel& model, const Eigen::Ref<const RowVector>& x);
Vector predict_rows(const KrrModel& model, const Matrix& x);

// Mean over i in held_out of ((y_i - yhat_i) / (1 - H_ii))^2 with
// H = K (K + lambda I)^-1.
double loocv_mse(const Matrix& x, const Vector& y, double lambda, double gamma,
                 std::span<const std::size_t> held_out);

// y_i - (prediction at x_i of the fit without row i), for i in held_out.
Vector loocv_residuals(const Matrix& x, const Vector& y, double lambda, double gamma,
                       std::span<const std::size_t> held_out);

// 2^-10, ..., 2^10.
std::vector<double> lambda_grid();

struct LambdaSelection {
    double lambda = 0.0;
    double score = 0.0;
    std::vector<double> scores;  // one per grid value, +inf where degenerate
};

// Minimizes the analytic LOOCV over the grid (ties go to the smaller
// lambda). One eigendecomposition of K serves every grid value.
LambdaSelection select_lambda(const Matrix& x, const Vector& y, double gamma, std::span<const std::size_t> held_out);

// Leave-group-out variant: for held_out[t], the rows in drop[t] (which must
// contain held_out[t]) are removed before refitting, and the refit predicts
// row held_out[t].
double grouped_cv_mse(const Matrix& x, const Vector& y, double lambda, double gamma,
                      std::span<const std::size_t> held_out, const std::vector<std::vector<std::size_t>>& drop);
LambdaSelection select_lambda_grouped(const Matrix& x, const Vector& y, double gamma,
                                      std::span<const std::size_t> held_out,
                                      const std::vector<std::vector<std::size_t>>& drop);

}  // namespace mechxfer
