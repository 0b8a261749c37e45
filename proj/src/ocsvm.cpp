#include "mechxfer/ocsvm.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <unordered_map>

namespace mechxfer {

namespace {

constexpr double kFreeMargin = 1e-8;

class KernelColumns {
public:
    KernelColumns(const Matrix& x, double gamma) : x_(x), gamma_(gamma) {
        const std::size_t bytes = std::size_t(256) << 20;
        capacity_ = std::max<std::size_t>(2, bytes / (sizeof(double) * std::size_t(std::max<Eigen::Index>(1, x.rows()))));
    }

    const Vector& operator()(Eigen::Index i) {
        auto it = cache_.find(i);
        if (it != cache_.end()) return it->second;
        if (order_.size() >= capacity_) {
            cache_.erase(order_.front());
            order_.pop_front();
        }
        Vector col = ((x_.rowwise() - x_.row(i)).rowwise().squaredNorm() / -gamma_).array().exp();
        order_.push_back(i);
        return cache_.emplace(i, std::move(col)).first->second;
    }

private:
    const Matrix& x_;
    double gamma_;
    std::size_t capacity_;
    std::unordered_map<Eigen::Index, Vector> cache_;
    std::deque<Eigen::Index> order_;
};

double kernel_sum(const Matrix& support, const Vector& alpha, double gamma, const Eigen::Ref<const RowVector>& x) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < support.rows(); ++i)
        s += alpha(i) * std::exp(-(support.row(i) - x).squaredNorm() / gamma);
    return s;
}

struct Solution {
    Vector alpha;
    OcsvmModel model;
};

Solution solve(const Matrix& x, const OcsvmOptions& opt) {
    const Eigen::Index n = x.rows();
    if (n < 2) throw std::invalid_argument("one-class SVM needs at least 2 points");
    if (x.cols() < 1) throw std::invalid_argument("one-class SVM needs at least one column");
    if (!x.allFinite()) throw std::invalid_argument("one-class SVM input contains non-finite values");
    if (!(opt.nu > 0.0 && opt.nu < 1.0)) throw std::invalid_argument("nu must lie in (0, 1)");
    const double gamma = opt.gamma > 0.0 ? opt.gamma : double(x.cols());
    if (!std::isfinite(gamma)) throw std::invalid_argument("gamma must be finite");
    if (!(opt.tolerance > 0.0)) throw std::invalid_argument("tolerance must be positive");

    // With n * upper = 1/nu >= 1 the box and simplex always intersect, even
    // when upper > 1.
    const double upper = 1.0 / (opt.nu * double(n));
    Vector alpha = Vector::Zero(n);
    double remaining = 1.0;
    for (Eigen::Index i = 0; i < n && remaining > 0.0; ++i) {
        alpha(i) = std::min(upper, remaining);
        remaining -= alpha(i);
    }

    KernelColumns Q(x, gamma);
    Vector G = Vector::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i)
        if (alpha(i) > 0.0) G += alpha(i) * Q(i);

    std::size_t iter = 0;
    double gap = std::numeric_limits<double>::infinity();
    for (;; ++iter) {
        Eigen::Index i = -1;
        double gmin = std::numeric_limits<double>::infinity();
        double gmax = -std::numeric_limits<double>::infinity();
        for (Eigen::Index t = 0; t < n; ++t) {
            if (alpha(t) < upper && G(t) < gmin) {
                gmin = G(t);
                i = t;
            }
            if (alpha(t) > 0.0) gmax = std::max(gmax, G(t));
        }
        gap = gmax - gmin;
        if (i < 0 || gap < opt.tolerance) break;
        if (iter >= opt.max_iterations) throw OcsvmConvergenceError(iter, gap);

        const Vector& qi = Q(i);
        Eigen::Index j = -1;
        double best = -1.0;
        for (Eigen::Index t = 0; t < n; ++t) {
            if (!(alpha(t) > 0.0)) continue;
            const double b = G(t) - gmin;
            if (b <= 0.0) continue;
            double a = 2.0 - 2.0 * qi(t);  // Q_ii = Q_tt = 1
            if (a <= 0.0) a = 1e-12;
            const double gain = b * b / a;
            if (gain > best) {
                best = gain;
                j = t;
            }
        }
        if (j < 0) break;
        double a = 2.0 - 2.0 * qi(j);
        if (a <= 0.0) a = 1e-12;
        double delta = (G(j) - G(i)) / a;
        delta = std::min({delta, upper - alpha(i), alpha(j)});
        alpha(i) = delta >= upper - alpha(i) ? upper : alpha(i) + delta;
        alpha(j) = delta >= alpha(j) ? 0.0 : alpha(j) - delta;
        const Vector col_i = qi;  // the next lookup may evict it
        G += delta * (col_i - Q(j));
    }

    Solution sol;
    sol.alpha = alpha;
    OcsvmModel& m = sol.model;
    m.gamma = gamma;
    m.upper = upper;
    m.iterations = iter;
    Eigen::Index count = 0;
    for (Eigen::Index t = 0; t < n; ++t) count += alpha(t) > 0.0;
    m.support.resize(count, x.cols());
    m.alpha.resize(count);
    std::vector<bool> free(std::size_t(count), false);
    for (Eigen::Index t = 0, k = 0; t < n; ++t) {
        if (!(alpha(t) > 0.0)) continue;
        m.support.row(k) = x.row(t);
        m.alpha(k) = alpha(t);
        free[std::size_t(k)] = alpha(t) > kFreeMargin && alpha(t) < upper - kFreeMargin;
        ++k;
    }

    // rho from the same sums prediction uses, so margin points score 0.
    double mean = 0.0, lowest = std::numeric_limits<double>::infinity(), objective = 0.0;
    std::size_t seen = 0;
    for (Eigen::Index k = 0; k < count; ++k) {
        const double s = kernel_sum(m.support, m.alpha, gamma, m.support.row(k));
        objective += 0.5 * m.alpha(k) * s;
        lowest = std::min(lowest, s);
        if (free[std::size_t(k)]) {
            ++seen;
            mean += (s - mean) / double(seen);
        }
    }
    m.margin_support = seen;
    m.rho = seen > 0 ? mean : lowest;
    m.objective = objective;
    return sol;
}

}  // namespace

OcsvmModel fit_ocsvm(const Matrix& points, const OcsvmOptions& options) {
    return solve(points, options).model;
}

OcsvmDual fit_ocsvm_dual(const Matrix& points, const OcsvmOptions& options) {
    Solution s = solve(points, options);
    return {std::move(s.alpha), s.model.rho, s.model.objective};
}

double decision_value(const OcsvmModel& model, const Eigen::Ref<const RowVector>& x) {
    if (x.size() != model.support.cols()) throw ShapeError("one-class SVM: point dimension differs from the model");
    return kernel_sum(model.support, model.alpha, model.gamma, x) - model.rho;
}

InlierResult is_inlier(const OcsvmModel& model, const Eigen::Ref<const RowVector>& x) {
    const double v = decision_value(model, x);
    return {v >= 0.0, v};
}

Vector decision_values(const OcsvmModel& model, const Matrix& x) {
    Vector out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = decision_value(model, x.row(i));
    return out;
}

}  // namespace mechxfer
