#include "regionembed/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace regionembed {

namespace {

double dist2(const double* a, const double* b, int d) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
        const double diff = a[j] - b[j];
        s += diff * diff;
    }
    return s;
}

struct SingleKmeans {
    std::vector<int> assignment;
    double objective = std::numeric_limits<double>::infinity();
    std::vector<double> trace;
};

SingleKmeans kmeans_once(const Dense& x, int k, Rng& rng, int max_iters) {
    const int n = x.rows, d = x.cols;
    Dense centroids(k, d, 0.0);

    // k-means++ seeding.
    std::vector<double> min_d2(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
    int first = rng.uniform_int(n);
    std::copy_n(x.row(first), d, centroids.row(0));
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            min_d2[static_cast<size_t>(i)] =
                std::min(min_d2[static_cast<size_t>(i)], dist2(x.row(i), centroids.row(c - 1), d));
            total += min_d2[static_cast<size_t>(i)];
        }
        int chosen = -1;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
                acc += min_d2[static_cast<size_t>(i)];
                if (acc >= target) {
                    chosen = i;
                    break;
                }
            }
            if (chosen < 0) chosen = n - 1;
        } else {
            // Every point coincides with a chosen centroid; any pick works.
            chosen = rng.uniform_int(n);
        }
        std::copy_n(x.row(chosen), d, centroids.row(c));
    }

    SingleKmeans result;
    result.assignment.assign(static_cast<size_t>(n), 0);
    std::vector<int> counts(static_cast<size_t>(k), 0);
    for (int iter = 0; iter < max_iters; ++iter) {
        // Assignment step (ties go to the lower centroid index).
        bool changed = iter == 0;
        double objective = 0.0;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d2 = dist2(x.row(i), centroids.row(0), d);
            for (int c = 1; c < k; ++c) {
                const double d2 = dist2(x.row(i), centroids.row(c), d);
                if (d2 < best_d2) {
                    best_d2 = d2;
                    best = c;
                }
            }
            if (result.assignment[static_cast<size_t>(i)] != best) {
                result.assignment[static_cast<size_t>(i)] = best;
                changed = true;
            }
            objective += best_d2;
        }
        result.trace.push_back(objective);
        result.objective = objective;
        if (!changed) break;

        // Update step.
        std::fill(counts.begin(), counts.end(), 0);
        Dense sums(k, d, 0.0);
        for (int i = 0; i < n; ++i) {
            const int c = result.assignment[static_cast<size_t>(i)];
            ++counts[static_cast<size_t>(c)];
            for (int j = 0; j < d; ++j) sums.at(c, j) += x.at(i, j);
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<size_t>(c)] > 0) {
                for (int j = 0; j < d; ++j) {
                    centroids.at(c, j) = sums.at(c, j) / counts[static_cast<size_t>(c)];
                }
            } else {
                // Re-seed an empty cluster at the point farthest from its
                // assigned centroid.
                int farthest = 0;
                double far_d2 = -1.0;
                for (int i = 0; i < n; ++i) {
                    const int a = result.assignment[static_cast<size_t>(i)];
                    const double d2 = dist2(x.row(i), centroids.row(a), d);
                    if (d2 > far_d2) {
                        far_d2 = d2;
                        farthest = i;
                    }
                }
                std::copy_n(x.row(farthest), d, centroids.row(c));
            }
        }
    }
    return result;
}

}  // namespace

KmeansResult kmeans(const Dense& x, int k, Rng& rng, int restarts, int max_iters) {
    const int n = x.rows;
    if (k < 1 || k > n) {
        throw ContractError("kmeans: k=" + std::to_string(k) + " must be in [1, N=" +
                            std::to_string(n) + "]");
    }
    if (restarts < 1) throw ContractError("kmeans: restarts must be positive");
    KmeansResult best;
    best.objective = std::numeric_limits<double>::infinity();
    for (int r = 0; r < restarts; ++r) {
        Rng restart_rng = rng.substream("restart" + std::to_string(r));
        SingleKmeans run = kmeans_once(x, k, restart_rng, max_iters);
        if (run.objective < best.objective) {
            best.objective = run.objective;
            best.assignment = std::move(run.assignment);
            best.objective_trace = std::move(run.trace);
        }
    }
    return best;
}

// ---- clustering agreement -------------------------------------------------

namespace {

// Contingency table and marginals of two labelings over compacted class ids.
struct Contingency {
    Dense counts;
    std::vector<double> row_sums;
    std::vector<double> col_sums;
    int n = 0;
};

Contingency contingency(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw ContractError("label vectors differ in length");
    std::map<int, int> amap, bmap;
    for (int v : a) amap.emplace(v, 0);
    for (int v : b) bmap.emplace(v, 0);
    int next = 0;
    for (auto& [_, idx] : amap) idx = next++;
    next = 0;
    for (auto& [_, idx] : bmap) idx = next++;
    Contingency c;
    c.n = static_cast<int>(a.size());
    c.counts = Dense(static_cast<int>(amap.size()), static_cast<int>(bmap.size()), 0.0);
    for (size_t i = 0; i < a.size(); ++i) {
        c.counts.at(amap.at(a[i]), bmap.at(b[i])) += 1.0;
    }
    c.row_sums.assign(static_cast<size_t>(c.counts.rows), 0.0);
    c.col_sums.assign(static_cast<size_t>(c.counts.cols), 0.0);
    for (int i = 0; i < c.counts.rows; ++i) {
        for (int j = 0; j < c.counts.cols; ++j) {
            c.row_sums[static_cast<size_t>(i)] += c.counts.at(i, j);
            c.col_sums[static_cast<size_t>(j)] += c.counts.at(i, j);
        }
    }
    return c;
}

double choose2(double x) { return x * (x - 1.0) / 2.0; }

}  // namespace

double nmi(const std::vector<int>& a, const std::vector<int>& b) {
    const Contingency c = contingency(a, b);
    const double n = static_cast<double>(c.n);
    double h_a = 0.0, h_b = 0.0, mi = 0.0;
    for (double s : c.row_sums) {
        if (s > 0) h_a -= (s / n) * std::log(s / n);
    }
    for (double s : c.col_sums) {
        if (s > 0) h_b -= (s / n) * std::log(s / n);
    }
    for (int i = 0; i < c.counts.rows; ++i) {
        for (int j = 0; j < c.counts.cols; ++j) {
            const double nij = c.counts.at(i, j);
            if (nij > 0) {
                mi += (nij / n) * std::log(n * nij / (c.row_sums[static_cast<size_t>(i)] *
                                                      c.col_sums[static_cast<size_t>(j)]));
            }
        }
    }
    if (h_a <= 0.0 || h_b <= 0.0) return 0.0;  // constant labeling convention
    const double value = mi / std::sqrt(h_a * h_b);
    return std::clamp(value, 0.0, 1.0);
}

double ari(const std::vector<int>& a, const std::vector<int>& b) {
    const Contingency c = contingency(a, b);
    double sum_ij = 0.0;
    for (double v : c.counts.v) sum_ij += choose2(v);
    double sum_a = 0.0, sum_b = 0.0;
    for (double s : c.row_sums) sum_a += choose2(s);
    for (double s : c.col_sums) sum_b += choose2(s);
    const double total_pairs = choose2(static_cast<double>(c.n));
    if (total_pairs == 0.0) return 1.0;
    const double expected = sum_a * sum_b / total_pairs;
    const double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) return max_index == sum_ij ? 1.0 : 0.0;
    return (sum_ij - expected) / (max_index - expected);
}

// ---- lasso ------------------------------------------------------------------

double lasso_objective(const Dense& x, const std::vector<double>& y,
                       const std::vector<double>& beta, double intercept, double lambda) {
    const int n = x.rows, p = x.cols;
    double rss = 0.0;
    for (int i = 0; i < n; ++i) {
        double pred = intercept;
        for (int j = 0; j < p; ++j) pred += x.at(i, j) * beta[static_cast<size_t>(j)];
        const double r = y[static_cast<size_t>(i)] - pred;
        rss += r * r;
    }
    double l1 = 0.0;
    for (double bj : beta) l1 += std::fabs(bj);
    return rss / (2.0 * n) + lambda * l1;
}

LassoFit lasso_fit(const Dense& x, const std::vector<double>& y, double lambda, int max_sweeps,
                   double tol) {
    const int n = x.rows, p = x.cols;
    if (n < 2) throw ContractError("lasso_fit: need at least 2 rows");
    if (static_cast<int>(y.size()) != n) throw ContractError("lasso_fit: y length mismatch");

    // Center columns and the target; solve in centered coordinates, which
    // leaves the L1 penalty on the original-scale coefficients.
    std::vector<double> col_mean(static_cast<size_t>(p), 0.0);
    std::vector<double> col_var(static_cast<size_t>(p), 0.0);
    for (int j = 0; j < p; ++j) {
        double m = 0.0;
        for (int i = 0; i < n; ++i) m += x.at(i, j);
        m /= n;
        col_mean[static_cast<size_t>(j)] = m;
        double v = 0.0;
        for (int i = 0; i < n; ++i) {
            const double d = x.at(i, j) - m;
            v += d * d;
        }
        col_var[static_cast<size_t>(j)] = v / n;
    }
    const double y_mean = std::accumulate(y.begin(), y.end(), 0.0) / n;

    LassoFit fit;
    fit.beta.assign(static_cast<size_t>(p), 0.0);
    // Residual of the centered problem with beta = 0.
    std::vector<double> residual(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) residual[static_cast<size_t>(i)] = y[static_cast<size_t>(i)] - y_mean;

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double max_change = 0.0;
        for (int j = 0; j < p; ++j) {
            if (col_var[static_cast<size_t>(j)] == 0.0) continue;  // constant column
            const double old = fit.beta[static_cast<size_t>(j)];
            // rho = (1/n) x_j . (residual + x_j * old), with x_j centered.
            double rho = 0.0;
            for (int i = 0; i < n; ++i) {
                const double xij = x.at(i, j) - col_mean[static_cast<size_t>(j)];
                rho += xij * (residual[static_cast<size_t>(i)] + xij * old);
            }
            rho /= n;
            const double thresholded =
                std::copysign(std::max(std::fabs(rho) - lambda, 0.0), rho);
            const double updated = thresholded / col_var[static_cast<size_t>(j)];
            const double delta = updated - old;
            if (delta != 0.0) {
                for (int i = 0; i < n; ++i) {
                    residual[static_cast<size_t>(i)] -=
                        delta * (x.at(i, j) - col_mean[static_cast<size_t>(j)]);
                }
                fit.beta[static_cast<size_t>(j)] = updated;
            }
            max_change = std::max(max_change, std::fabs(delta));
        }
        fit.sweeps = sweep + 1;
        double intercept = y_mean;
        for (int j = 0; j < p; ++j) {
            intercept -= fit.beta[static_cast<size_t>(j)] * col_mean[static_cast<size_t>(j)];
        }
        fit.intercept = intercept;
        fit.objective_trace.push_back(lasso_objective(x, y, fit.beta, fit.intercept, lambda));
        if (max_change < tol) break;
    }
    return fit;
}

std::vector<double> lasso_predict(const Dense& x, const LassoFit& fit) {
    std::vector<double> out(static_cast<size_t>(x.rows), fit.intercept);
    for (int i = 0; i < x.rows; ++i) {
        for (int j = 0; j < x.cols; ++j) {
            out[static_cast<size_t>(i)] += x.at(i, j) * fit.beta[static_cast<size_t>(j)];
        }
    }
    return out;
}

// ---- cross-validated popularity prediction ----------------------------------

std::vector<double> default_lambda_grid() {
    std::vector<double> grid;
    for (int i = 0; i < 13; ++i) {
        grid.push_back(std::pow(10.0, -4.0 + 5.0 * i / 12.0));
    }
    return grid;
}

RegressionResult evaluate_popularity(const Dense& embeddings, const std::vector<double>& volumes,
                                     const std::vector<double>& lambdas, Rng& fold_rng, int folds,
                                     bool log1p_target) {
    const int n = embeddings.rows;
    if (static_cast<int>(volumes.size()) != n) {
        throw ContractError("evaluate_popularity: volume count does not match embedding rows");
    }
    if (n < folds) {
        throw ContractError("evaluate_popularity: need at least " + std::to_string(folds) +
                            " regions for " + std::to_string(folds) + "-fold CV");
    }
    if (lambdas.empty()) throw ContractError("evaluate_popularity: empty lambda grid");

    std::vector<double> target(volumes);
    if (log1p_target) {
        for (double& v : target) v = std::log1p(v);
    }

    // One shuffle shared by the whole grid, so every lambda sees the same folds.
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    fold_rng.shuffle(order);
    std::vector<int> fold_of(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        fold_of[static_cast<size_t>(order[static_cast<size_t>(i)])] = i % folds;
    }

    auto run_fold = [&](double lambda, int fold) {
        std::vector<int> train_rows, test_rows;
        for (int i = 0; i < n; ++i) {
            (fold_of[static_cast<size_t>(i)] == fold ? test_rows : train_rows).push_back(i);
        }
        Dense xtr(static_cast<int>(train_rows.size()), embeddings.cols);
        std::vector<double> ytr(train_rows.size());
        for (size_t r = 0; r < train_rows.size(); ++r) {
            std::copy_n(embeddings.row(train_rows[r]), embeddings.cols, xtr.row(static_cast<int>(r)));
            ytr[r] = target[static_cast<size_t>(train_rows[r])];
        }
        Dense xte(static_cast<int>(test_rows.size()), embeddings.cols);
        std::vector<double> yte(test_rows.size());
        for (size_t r = 0; r < test_rows.size(); ++r) {
            std::copy_n(embeddings.row(test_rows[r]), embeddings.cols, xte.row(static_cast<int>(r)));
            yte[r] = target[static_cast<size_t>(test_rows[r])];
        }
        const LassoFit fit = lasso_fit(xtr, ytr, lambda);
        const std::vector<double> pred = lasso_predict(xte, fit);
        FoldMetrics m;
        double se = 0.0, ae = 0.0;
        double test_mean = std::accumulate(yte.begin(), yte.end(), 0.0) /
                           static_cast<double>(yte.size());
        double ss_tot = 0.0;
        for (size_t i = 0; i < yte.size(); ++i) {
            const double e = yte[i] - pred[i];
            se += e * e;
            ae += std::fabs(e);
            ss_tot += (yte[i] - test_mean) * (yte[i] - test_mean);
        }
        m.mae = ae / static_cast<double>(yte.size());
        m.rmse = std::sqrt(se / static_cast<double>(yte.size()));
        m.r2 = ss_tot > 0.0 ? 1.0 - se / ss_tot : (se == 0.0 ? 1.0 : 0.0);
        return m;
    };

    double best_lambda = lambdas[0];
    double best_rmse = std::numeric_limits<double>::infinity();
    for (double lambda : lambdas) {
        double mean_rmse = 0.0;
        for (int f = 0; f < folds; ++f) mean_rmse += run_fold(lambda, f).rmse;
        mean_rmse /= folds;
        if (mean_rmse < best_rmse) {
            best_rmse = mean_rmse;
            best_lambda = lambda;
        }
    }

    RegressionResult result;
    result.lambda = best_lambda;
    for (int f = 0; f < folds; ++f) {
        result.folds.push_back(run_fold(best_lambda, f));
        result.mae += result.folds.back().mae;
        result.rmse += result.folds.back().rmse;
        result.r2 += result.folds.back().r2;
    }
    result.mae /= folds;
    result.rmse /= folds;
    result.r2 /= folds;
    return result;
}

ClusteringResult evaluate_clustering(const Dense& embeddings, const std::vector<int>& labels,
                                     int k, Rng& rng, int restarts) {
    if (static_cast<int>(labels.size()) != embeddings.rows) {
        throw ContractError("evaluate_clustering: label count does not match embedding rows");
    }
    const KmeansResult km = kmeans(embeddings, k, rng, restarts);
    ClusteringResult out;
    out.assignment = km.assignment;
    out.objective = km.objective;
    out.nmi = nmi(km.assignment, labels);
    out.ari = ari(km.assignment, labels);
    return out;
}

}  // namespace regionembed
