#include "ssnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace ssnn {

std::vector<int> min_cost_assignment(const std::vector<std::vector<double>>& cost) {
    int n = static_cast<int>(cost.size());
    for (const auto& row : cost)
        if (static_cast<int>(row.size()) != n) throw contract_error("min_cost_assignment: matrix must be square");
    const double inf = std::numeric_limits<double>::infinity();

    // potentials method over a (n+1)-indexed frame
    std::vector<double> u(static_cast<size_t>(n) + 1, 0.0), v(static_cast<size_t>(n) + 1, 0.0);
    std::vector<int> p(static_cast<size_t>(n) + 1, 0), way(static_cast<size_t>(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(n) + 1, inf);
        std::vector<char> used(static_cast<size_t>(n) + 1, 0);
        do {
            used[static_cast<size_t>(j0)] = 1;
            int i0 = p[static_cast<size_t>(j0)], j1 = -1;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                double cur = cost[static_cast<size_t>(i0) - 1][static_cast<size_t>(j) - 1] - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<size_t>(j0)] != 0);
        do {
            int j1 = way[static_cast<size_t>(j0)];
            p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_to_col(static_cast<size_t>(n), -1);
    for (int j = 1; j <= n; ++j)
        if (p[static_cast<size_t>(j)] >= 1) row_to_col[static_cast<size_t>(p[static_cast<size_t>(j)]) - 1] = j - 1;
    return row_to_col;
}

double segmentation_error(const LatentPath& pred, const LatentPath& truth) {
    if (pred.length() != truth.length() || pred.length() == 0)
        throw contract_error("segmentation_error: path lengths " + std::to_string(pred.length()) + " vs " +
                             std::to_string(truth.length()));
    int T = pred.length();
    int kp = 0, kt = 0;
    for (int t = 0; t < T; ++t) {
        if (pred.z[static_cast<size_t>(t)] < 1 || truth.z[static_cast<size_t>(t)] < 1)
            throw contract_error("segmentation_error: labels must be >= 1");
        kp = std::max(kp, pred.z[static_cast<size_t>(t)]);
        kt = std::max(kt, truth.z[static_cast<size_t>(t)]);
    }
    int n = std::max(kp, kt);
    std::vector<std::vector<double>> counts(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(n), 0.0));
    for (int t = 0; t < T; ++t)
        counts[static_cast<size_t>(pred.z[static_cast<size_t>(t)]) - 1][static_cast<size_t>(truth.z[static_cast<size_t>(t)]) - 1] += 1.0;

    // maximize matched frames == minimize negated counts
    std::vector<std::vector<double>> cost(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(n)));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) cost[static_cast<size_t>(i)][static_cast<size_t>(j)] = -counts[static_cast<size_t>(i)][static_cast<size_t>(j)];
    std::vector<int> match = min_cost_assignment(cost);

    double matched = 0.0;
    for (int i = 0; i < n; ++i)
        if (match[static_cast<size_t>(i)] >= 0) matched += counts[static_cast<size_t>(i)][static_cast<size_t>(match[static_cast<size_t>(i)])];
    return 1.0 - matched / T;
}

namespace {

// In-place Cholesky solve of A x = b for symmetric positive definite A;
// returns false if a pivot fails.
bool cholesky_solve(std::vector<std::vector<double>> A, std::vector<std::vector<double>>& B) {
    int n = static_cast<int>(A.size());
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = A[static_cast<size_t>(i)][static_cast<size_t>(j)];
            for (int k = 0; k < j; ++k) s -= A[static_cast<size_t>(i)][static_cast<size_t>(k)] * A[static_cast<size_t>(j)][static_cast<size_t>(k)];
            if (i == j) {
                if (s <= 0.0 || !std::isfinite(s)) return false;
                A[static_cast<size_t>(i)][static_cast<size_t>(i)] = std::sqrt(s);
            } else {
                A[static_cast<size_t>(i)][static_cast<size_t>(j)] = s / A[static_cast<size_t>(j)][static_cast<size_t>(j)];
            }
        }
    }
    // forward/back substitution per right-hand side
    int r = static_cast<int>(B.size());
    for (int c = 0; c < r; ++c) {
        std::vector<double>& b = B[static_cast<size_t>(c)];
        for (int i = 0; i < n; ++i) {
            double s = b[static_cast<size_t>(i)];
            for (int k = 0; k < i; ++k) s -= A[static_cast<size_t>(i)][static_cast<size_t>(k)] * b[static_cast<size_t>(k)];
            b[static_cast<size_t>(i)] = s / A[static_cast<size_t>(i)][static_cast<size_t>(i)];
        }
        for (int i = n - 1; i >= 0; --i) {
            double s = b[static_cast<size_t>(i)];
            for (int k = i + 1; k < n; ++k) s -= A[static_cast<size_t>(k)][static_cast<size_t>(i)] * b[static_cast<size_t>(k)];
            b[static_cast<size_t>(i)] = s / A[static_cast<size_t>(i)][static_cast<size_t>(i)];
        }
    }
    return true;
}

}  // namespace

ProbeResult r2_probe(const Tensor& features, const Tensor& targets) {
    if (features.rank() != 2 || targets.rank() != 2)
        throw contract_error("r2_probe: features and targets must be matrices");
    int T = features.dim(0), p = features.dim(1), r = targets.dim(1);
    if (targets.dim(0) != T)
        throw contract_error("r2_probe: row mismatch " + std::to_string(T) + " vs " + std::to_string(targets.dim(0)));
    if (T <= p + 1)
        throw contract_error("r2_probe: need T > p + 1 (got T=" + std::to_string(T) + ", p=" + std::to_string(p) + ")");

    int n = p + 1;  // intercept column first
    std::vector<std::vector<double>> gram(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(n), 0.0));
    std::vector<std::vector<double>> rhs(static_cast<size_t>(r), std::vector<double>(static_cast<size_t>(n), 0.0));
    std::vector<double> row(static_cast<size_t>(n));
    for (int t = 0; t < T; ++t) {
        row[0] = 1.0;
        for (int j = 0; j < p; ++j) row[static_cast<size_t>(j) + 1] = features.at(t, j);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j <= i; ++j) gram[static_cast<size_t>(i)][static_cast<size_t>(j)] += row[static_cast<size_t>(i)] * row[static_cast<size_t>(j)];
            for (int c = 0; c < r; ++c) rhs[static_cast<size_t>(c)][static_cast<size_t>(i)] += row[static_cast<size_t>(i)] * targets.at(t, c);
        }
    }
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) gram[static_cast<size_t>(i)][static_cast<size_t>(j)] = gram[static_cast<size_t>(j)][static_cast<size_t>(i)];

    std::vector<std::vector<double>> beta = rhs;
    if (!cholesky_solve(gram, beta)) {
        double lambda = 1e-8;
        bool ok = false;
        for (int attempt = 0; attempt < 4 && !ok; ++attempt, lambda *= 100.0) {
            std::vector<std::vector<double>> ridge = gram;
            for (int i = 0; i < n; ++i) ridge[static_cast<size_t>(i)][static_cast<size_t>(i)] += lambda;
            beta = rhs;
            ok = cholesky_solve(ridge, beta);
        }
        if (!ok) throw std::runtime_error("r2_probe: normal equations unsolvable even with ridge");
    }

    ProbeResult result;
    result.r2.resize(static_cast<size_t>(r));
    result.constant_target.assign(static_cast<size_t>(r), false);
    for (int c = 0; c < r; ++c) {
        double mean = 0.0;
        for (int t = 0; t < T; ++t) mean += targets.at(t, c);
        mean /= T;
        double ss_tot = 0.0, ss_res = 0.0;
        for (int t = 0; t < T; ++t) {
            double pred = beta[static_cast<size_t>(c)][0];
            for (int j = 0; j < p; ++j) pred += beta[static_cast<size_t>(c)][static_cast<size_t>(j) + 1] * features.at(t, j);
            double y = targets.at(t, c);
            ss_tot += (y - mean) * (y - mean);
            ss_res += (y - pred) * (y - pred);
        }
        if (ss_tot <= 1e-12 * T * (1.0 + mean * mean)) {
            std::fprintf(stderr, "warning: r2_probe target column %d is constant; R^2 defined as 0\n", c);
            result.r2[static_cast<size_t>(c)] = 0.0;
            result.constant_target[static_cast<size_t>(c)] = true;
        } else {
            result.r2[static_cast<size_t>(c)] = 1.0 - ss_res / ss_tot;
        }
    }
    return result;
}

Tensor pca_projection(const Tensor& rows, int components) {
    if (rows.rank() != 2) throw contract_error("pca_projection: expected a matrix");
    int T = rows.dim(0), m = rows.dim(1);
    if (components < 1 || components > m)
        throw contract_error("pca_projection: components must be in [1, m]");

    std::vector<double> mean(static_cast<size_t>(m), 0.0);
    for (int t = 0; t < T; ++t)
        for (int j = 0; j < m; ++j) mean[static_cast<size_t>(j)] += rows.at(t, j);
    for (double& v : mean) v /= T;

    std::vector<std::vector<double>> cov(static_cast<size_t>(m), std::vector<double>(static_cast<size_t>(m), 0.0));
    for (int t = 0; t < T; ++t)
        for (int i = 0; i < m; ++i)
            for (int j = 0; j <= i; ++j)
                cov[static_cast<size_t>(i)][static_cast<size_t>(j)] +=
                    (rows.at(t, i) - mean[static_cast<size_t>(i)]) * (rows.at(t, j) - mean[static_cast<size_t>(j)]);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j <= i; ++j) {
            cov[static_cast<size_t>(i)][static_cast<size_t>(j)] /= T;
            cov[static_cast<size_t>(j)][static_cast<size_t>(i)] = cov[static_cast<size_t>(i)][static_cast<size_t>(j)];
        }

    // cyclic Jacobi eigendecomposition
    std::vector<std::vector<double>> V(static_cast<size_t>(m), std::vector<double>(static_cast<size_t>(m), 0.0));
    for (int i = 0; i < m; ++i) V[static_cast<size_t>(i)][static_cast<size_t>(i)] = 1.0;
    for (int sweep = 0; sweep < 60; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < m; ++i)
            for (int j = i + 1; j < m; ++j) off += cov[static_cast<size_t>(i)][static_cast<size_t>(j)] * cov[static_cast<size_t>(i)][static_cast<size_t>(j)];
        if (off < 1e-24) break;
        for (int i = 0; i < m; ++i)
            for (int j = i + 1; j < m; ++j) {
                double apq = cov[static_cast<size_t>(i)][static_cast<size_t>(j)];
                if (std::abs(apq) < 1e-300) continue;
                double app = cov[static_cast<size_t>(i)][static_cast<size_t>(i)];
                double aqq = cov[static_cast<size_t>(j)][static_cast<size_t>(j)];
                double theta = 0.5 * (aqq - app) / apq;
                double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int k = 0; k < m; ++k) {
                    double aik = cov[static_cast<size_t>(i)][static_cast<size_t>(k)];
                    double ajk = cov[static_cast<size_t>(j)][static_cast<size_t>(k)];
                    cov[static_cast<size_t>(i)][static_cast<size_t>(k)] = c * aik - s * ajk;
                    cov[static_cast<size_t>(j)][static_cast<size_t>(k)] = s * aik + c * ajk;
                }
                for (int k = 0; k < m; ++k) {
                    double aki = cov[static_cast<size_t>(k)][static_cast<size_t>(i)];
                    double akj = cov[static_cast<size_t>(k)][static_cast<size_t>(j)];
                    cov[static_cast<size_t>(k)][static_cast<size_t>(i)] = c * aki - s * akj;
                    cov[static_cast<size_t>(k)][static_cast<size_t>(j)] = s * aki + c * akj;
                }
                for (int k = 0; k < m; ++k) {
                    double vki = V[static_cast<size_t>(k)][static_cast<size_t>(i)];
                    double vkj = V[static_cast<size_t>(k)][static_cast<size_t>(j)];
                    V[static_cast<size_t>(k)][static_cast<size_t>(i)] = c * vki - s * vkj;
                    V[static_cast<size_t>(k)][static_cast<size_t>(j)] = s * vki + c * vkj;
                }
            }
    }
    std::vector<int> order(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) order[static_cast<size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return cov[static_cast<size_t>(a)][static_cast<size_t>(a)] > cov[static_cast<size_t>(b)][static_cast<size_t>(b)];
    });

    Tensor scores(Shape{T, components});
    for (int t = 0; t < T; ++t)
        for (int cidx = 0; cidx < components; ++cidx) {
            int col = order[static_cast<size_t>(cidx)];
            double s = 0.0;
            for (int j = 0; j < m; ++j) s += (rows.at(t, j) - mean[static_cast<size_t>(j)]) * V[static_cast<size_t>(j)][static_cast<size_t>(col)];
            scores.at(t, cidx) = s;
        }
    return scores;
}

}  // namespace ssnn
