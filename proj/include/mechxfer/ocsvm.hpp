#pragma once

// One-class SVM with the kernel k(x, y) = exp(-|x - y|^2 / gamma). Fitted by
// pairwise (SMO) updates on the dual
//
//   min 1/2 a'Qa   s.t. 0 <= a_i <= 1/(nu n), sum a = 1.

#include <cstddef>
#include <stdexcept>

#include "mechxfer/tensor.hpp"

namespace mechxfer {

struct OcsvmOptions {
    double nu = 0.1;
    double gamma = 0.0;  // <= 0 selects gamma = D
    double tolerance = 1e-6;
    std::size_t max_iterations = 100000;
};

struct OcsvmModel {
    Matrix support;       // rows with a_i > 0
    Vector alpha;         // their dual coefficients
    double rho = 0.0;
    double gamma = 1.0;
    double upper = 1.0;   // 1 / (nu n)
    double objective = 0.0;
    std::size_t iterations = 0;
    std::size_t margin_support = 0;  // count with 0 < a_i < upper
};

class OcsvmConvergenceError : public std::runtime_error {
public:
    OcsvmConvergenceError(std::size_t iterations, double gap)
        : std::runtime_error("one-class SVM did not converge after " + std::to_string(iterations) +
                             " iterations (KKT gap " + std::to_string(gap) + ")"),
          gap_(gap) {}
    double gap() const noexcept { return gap_; }

private:
    double gap_;
};

OcsvmModel fit_ocsvm(const Matrix& points, const OcsvmOptions& options = {});

// Full dual solution for the training rows, in input order (for tests and
// diagnostics).
struct OcsvmDual {
    Vector alpha;
    double rho = 0.0;
    double objective = 0.0;
};
OcsvmDual fit_ocsvm_dual(const Matrix& points, const OcsvmOptions& options = {});

struct InlierResult {
    bool inlier = false;
    double value = 0.0;  // sum_i a_i k(x_i, x) - rho
};

double decision_value(const OcsvmModel& model, const Eigen::Ref<const RowVector>& x);
InlierResult is_inlier(const OcsvmModel& model, const Eigen::Ref<const RowVector>& x);
Vector decision_values(const OcsvmModel& model, const Matrix& x);

}  // namespace mechxfer
