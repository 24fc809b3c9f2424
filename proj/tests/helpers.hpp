#pragma once

// Fixture builders shared by the unit-test suites.

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "csir/data_model.hpp"

namespace testutil {

inline bool exact_equal(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    for (Eigen::Index j = 0; j < a.cols(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            if (a(i, j) != b(i, j)) return false;
    return true;
}

struct UnitSpec {
    std::string id;
    std::string county;
    long long pop = 100;
    std::optional<int> exposure;
    std::vector<double> x;
    std::optional<long long> y;
    std::vector<double> z;
    std::optional<csir::Coordinate> at;
};

inline csir::Dataset make_dataset(const std::vector<UnitSpec>& specs, std::size_t p,
                                  std::size_t q = 0) {
    csir::Dataset ds;
    ds.n_confounders = p;
    ds.n_extras = q;
    for (std::size_t k = 1; k <= p; ++k) ds.confounder_names.push_back("x" + std::to_string(k));
    for (std::size_t k = 1; k <= q; ++k) ds.extra_names.push_back("z" + std::to_string(k));
    for (const auto& s : specs) {
        csir::UnitRecord u;
        u.unit_id = s.id;
        u.county_id = s.county;
        u.population = s.pop;
        u.exposure = s.exposure;
        u.confounders = s.x;
        u.covariate_extras = s.z;
        u.observed_count = s.y;
        u.centroid = s.at;
        ds.units.push_back(std::move(u));
    }
    return ds;
}

}  // namespace testutil
