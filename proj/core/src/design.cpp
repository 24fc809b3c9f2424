#include "csir/design.hpp"

#include <cmath>
#include <vector>

namespace csir {

StandardizedDesign standardize_design(const Eigen::MatrixXd& X,
                                      bool center_without_intercept) {
    const auto n = X.rows();
    const auto p = X.cols();
    StandardizedDesign s;
    s.X = X;
    s.center = Eigen::VectorXd::Zero(p);
    s.scale = Eigen::VectorXd::Ones(p);

    std::vector<bool> constant(static_cast<std::size_t>(p), false);
    for (Eigen::Index j = 0; j < p; ++j) {
        const double mu = X.col(j).mean();
        const double ss = (X.col(j).array() - mu).square().sum();
        const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
        if (sd <= 1e-12 * std::max(1.0, std::abs(mu))) {
            constant[static_cast<std::size_t>(j)] = true;
            if (s.intercept_col < 0) {
                s.intercept_col = static_cast<int>(j);
                s.intercept_value = n > 0 ? X(0, j) : 1.0;
            }
        } else {
            s.center(j) = mu;
            s.scale(j) = sd;
        }
    }
    const bool may_center = s.intercept_col >= 0 || center_without_intercept;
    for (Eigen::Index j = 0; j < p; ++j) {
        if (constant[static_cast<std::size_t>(j)]) continue;
        if (may_center) {
            s.X.col(j) = (X.col(j).array() - s.center(j)) / s.scale(j);
        } else {
            s.center(j) = 0.0;
            s.X.col(j) = X.col(j) / s.scale(j);
        }
    }
    return s;
}

Eigen::MatrixXd StandardizedDesign::raw_from_std() const {
    const auto p = scale.size();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index j = 0; j < p; ++j) a(j, j) = 1.0 / scale(j);
    if (intercept_col >= 0) {
        for (Eigen::Index j = 0; j < p; ++j) {
            if (j == intercept_col) continue;
            a(intercept_col, j) -= center(j) / (scale(j) * intercept_value);
        }
    }
    return a;
}

}  // namespace csir
