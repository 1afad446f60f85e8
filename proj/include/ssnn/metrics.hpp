#pragma once

#include <vector>

#include "ssnn/types.hpp"

namespace ssnn {

// Minimum-cost perfect assignment on an n x n matrix (O(n^3), deterministic).
// Returns for each row the assigned column.
std::vector<int> min_cost_assignment(const std::vector<std::vector<double>>& cost);

// Frame-level label error after the optimal one-to-one relabeling between the
// two state alphabets (unmatched states count as errors). Durations are
// ignored; only z labels enter.
double segmentation_error(const LatentPath& pred, const LatentPath& truth);

struct ProbeResult {
    std::vector<double> r2;             // per target column
    std::vector<bool> constant_target;  // columns where R^2 was defined as 0
};

// OLS with intercept per target column; R^2 = 1 - SS_res / SS_tot. Falls back
// to ridge (lambda = 1e-8) on rank-deficient designs. Requires T > p + 1.
ProbeResult r2_probe(const Tensor& features, const Tensor& targets);

// Scores of the top `components` principal components of the (centered) rows.
Tensor pca_projection(const Tensor& rows, int components);

}  // namespace ssnn
