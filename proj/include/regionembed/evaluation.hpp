#pragma once

#include <vector>

#include "regionembed/common.hpp"
#include "regionembed/rng.hpp"

namespace regionembed {

struct KmeansResult {
    std::vector<int> assignment;
    double objective = 0.0;  // sum of squared distances to assigned centroid
    // Objective after each Lloyd iteration of the winning restart
    // (non-increasing by construction).
    std::vector<double> objective_trace;
};

// Lloyd's algorithm with k-means++ seeding. Empty clusters are re-seeded at
// the point farthest from its assigned centroid. Runs `restarts` independent
// seedings and keeps the best objective. Deterministic per rng state.
KmeansResult kmeans(const Dense& x, int k, Rng& rng, int restarts = 10, int max_iters = 100);

// Normalized mutual information I(a;b)/sqrt(H(a)H(b)); 0/0 (either labeling
// constant) is defined as 0.
double nmi(const std::vector<int>& a, const std::vector<int>& b);

// Adjusted-for-chance Rand index (pair counting with hypergeometric
// expectation).
double ari(const std::vector<int>& a, const std::vector<int>& b);

struct LassoFit {
    std::vector<double> beta;
    double intercept = 0.0;
    int sweeps = 0;
    // Objective value after each coordinate sweep (non-increasing).
    std::vector<double> objective_trace;
};

// Cyclic coordinate descent for (1/2n)||y - X beta - b0||^2 + lambda*||beta||_1.
// Columns are centered and variance-scaled internally; constant columns get a
// zero coefficient. Converges when no coefficient moves more than tol.
LassoFit lasso_fit(const Dense& x, const std::vector<double>& y, double lambda,
                   int max_sweeps = 10000, double tol = 1e-7);

double lasso_objective(const Dense& x, const std::vector<double>& y,
                       const std::vector<double>& beta, double intercept, double lambda);

std::vector<double> lasso_predict(const Dense& x, const LassoFit& fit);

struct FoldMetrics {
    double mae = 0.0;
    double rmse = 0.0;
    double r2 = 0.0;
};

struct RegressionResult {
    double mae = 0.0;
    double rmse = 0.0;
    double r2 = 0.0;
    double lambda = 0.0;  // chosen by grid search on mean CV RMSE
    std::vector<FoldMetrics> folds;
};

// 13-point log grid from 1e-4 to 1e1.
std::vector<double> default_lambda_grid();

// K-fold cross-validated Lasso over a lambda grid. Folds are seeded-shuffled
// once and shared across the grid; metrics are fold means at the best lambda.
RegressionResult evaluate_popularity(const Dense& embeddings, const std::vector<double>& volumes,
                                     const std::vector<double>& lambdas, Rng& fold_rng,
                                     int folds = 5, bool log1p_target = false);

struct ClusteringResult {
    std::vector<int> assignment;
    double objective = 0.0;
    double nmi = 0.0;
    double ari = 0.0;
};

ClusteringResult evaluate_clustering(const Dense& embeddings, const std::vector<int>& labels,
                                     int k, Rng& rng, int restarts = 10);

}  // namespace regionembed
