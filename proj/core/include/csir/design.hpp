#pragma once

#include <Eigen/Dense>

namespace csir {

/// A design matrix with centered/scaled columns plus the bookkeeping needed
/// to map coefficients back to the raw predictor scale.  Constant columns
/// are left untouched; the first one found is treated as the intercept.
/// Centering is applied only when an intercept exists to absorb the shift,
/// unless the caller declares the model shift-invariant.
struct StandardizedDesign {
    Eigen::MatrixXd X;
    Eigen::VectorXd center;
    Eigen::VectorXd scale;
    int intercept_col = -1;
    double intercept_value = 1.0;

    /// Matrix A with beta_raw = A * beta_std.  When there is no intercept
    /// the map is a pure rescaling (any centering then only shifts the
    /// linear predictor by a constant, which the caller has declared
    /// immaterial).
    Eigen::MatrixXd raw_from_std() const;
};

StandardizedDesign standardize_design(const Eigen::MatrixXd& X,
                                      bool center_without_intercept = false);

}  // namespace csir
