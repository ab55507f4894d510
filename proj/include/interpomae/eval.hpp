// Fidelity and diversity measurement: 2-D projections (PCA by power
// iteration with deflation, exact O(n^2) t-SNE), per-channel marginal
// statistics with a two-sample Kolmogorov-Smirnov column, and mean pairwise
// distances within groups of synthetic copies. All metrics here are declared
// stand-ins; the output headers name them explicitly.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "interpomae/data.hpp"
#include "interpomae/tensor.hpp"

namespace interpomae {

// Row-major flattening of each series to a length L*C feature vector.
// All series must share (L, C).
Tensor flatten_series(const std::vector<Series>& dataset);

struct LabeledMatrix {
    Tensor rows;              // [n_real + n_synth, L*C]
    std::vector<int> labels;  // 0 = real, 1 = synth
};

LabeledMatrix stack_real_synth(const std::vector<Series>& real, const std::vector<Series>& synth);

struct PcaResult {
    Tensor coords;                                  // [n, k]
    std::vector<double> explained_variance;         // non-increasing, sums to <= 1
    std::vector<std::vector<double>> components;    // k orthonormal rows of length D
};

// Centers the columns and extracts the top-k eigenvectors of the sample
// covariance by power iteration with deflation (tolerance 1e-10, at most
// 10000 iterations per component).
PcaResult pca_project(const Tensor& x, std::size_t k = 2);

struct TsneResult {
    Tensor coords;            // [n, 2]
    std::vector<double> kl;   // KL(P||Q) before each update plus the final value,
                              // always against the un-exaggerated P
};

// Exact t-SNE: per-point bandwidths found by binary search to match the
// target perplexity (entropy tolerance 1e-5, at most 50 bisection steps),
// symmetrized P, gradient descent with momentum 0.5 switching to 0.8 at
// iteration 250 and 4x early exaggeration for the first 100 iterations.
// Deterministic given the seed; n is capped at 2000 points.
TsneResult tsne_project(const Tensor& x, double perplexity, std::size_t iters,
                        std::uint64_t seed);

struct ProjectionResult {
    Tensor coords;                            // [n, 2]
    std::vector<int> labels;                  // 0 = real, 1 = synth
    std::string method;                       // "pca" or "tsne"
    std::vector<double> explained_variance;   // PCA only
};

// Two-sample KS statistic: max over thresholds of the gap between the two
// empirical CDFs. Always in [0, 1]; zero iff the pooled empirical
// distributions coincide.
double ks_statistic(std::vector<double> a, std::vector<double> b);

struct MarginalRow {
    std::size_t channel = 0;
    double real_mean = 0.0;
    double synth_mean = 0.0;
    double real_std = 0.0;
    double synth_std = 0.0;
    double ks = 0.0;
};

// Per channel: mean and population standard deviation of the pooled real and
// synthetic values, plus the KS statistic between the pools.
std::vector<MarginalRow> marginal_report(const std::vector<Series>& real,
                                         const std::vector<Series>& synth);

struct DiversityReport {
    std::vector<double> group_mean;  // mean pairwise Euclidean distance per group
    double grand_mean = 0.0;         // mean of the group means
};

// Each group holds the synthetic copies of one source series; every group
// needs at least two members.
DiversityReport diversity_report(const std::vector<std::vector<Series>>& groups);

// Groups synthetic series by the id prefix before '#', preserving first
// appearance order (matches the ids augment assigns).
std::vector<std::vector<Series>> group_by_source(const std::vector<Series>& synth);

void write_projection_csv(const std::string& path, const ProjectionResult& projection);
void write_marginal_csv(const std::string& path, const std::vector<MarginalRow>& rows);
void write_diversity_csv(const std::string& path, const std::vector<std::string>& group_labels,
                         const DiversityReport& report);

}  // namespace interpomae
