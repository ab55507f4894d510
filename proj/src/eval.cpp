#include "interpomae/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "interpomae/rng.hpp"

namespace interpomae {

namespace {

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

void check_uniform_geometry(const std::vector<Series>& dataset, const char* who) {
    if (dataset.empty()) throw std::invalid_argument(std::string(who) + ": empty dataset");
    const std::size_t length = dataset.front().length();
    const std::size_t channels = dataset.front().channels();
    for (const Series& s : dataset) {
        if (s.length() != length || s.channels() != channels) {
            throw std::invalid_argument(std::string(who) + ": heterogeneous series shapes ([" +
                                        std::to_string(length) + "," + std::to_string(channels) +
                                        "] vs [" + std::to_string(s.length()) + "," +
                                        std::to_string(s.channels()) + "])");
        }
    }
}

}  // namespace

Tensor flatten_series(const std::vector<Series>& dataset) {
    check_uniform_geometry(dataset, "flatten_series");
    const std::size_t width = dataset.front().values.numel();
    Tensor out({dataset.size(), width});
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const Tensor& v = dataset[i].values;
        for (std::size_t j = 0; j < width; ++j) out.at(i, j) = v[j];
    }
    return out;
}

LabeledMatrix stack_real_synth(const std::vector<Series>& real,
                               const std::vector<Series>& synth) {
    std::vector<Series> all;
    all.reserve(real.size() + synth.size());
    all.insert(all.end(), real.begin(), real.end());
    all.insert(all.end(), synth.begin(), synth.end());
    LabeledMatrix out;
    out.rows = flatten_series(all);
    out.labels.assign(real.size(), 0);
    out.labels.insert(out.labels.end(), synth.size(), 1);
    return out;
}

// ---------------------------------------------------------------------------
// PCA

PcaResult pca_project(const Tensor& x, std::size_t k) {
    if (x.rank() != 2) throw std::invalid_argument("pca: expects a [n,D] matrix");
    const std::size_t n = x.dim(0), dim = x.dim(1);
    if (n < 2) throw std::invalid_argument("pca: need at least 2 rows");
    if (k > std::min(n - 1, dim)) {
        throw std::invalid_argument("pca: k=" + std::to_string(k) + " exceeds min(n-1, D)=" +
                                    std::to_string(std::min(n - 1, dim)));
    }

    std::vector<double> mean(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dim; ++j) mean[j] += x.at(i, j);
    for (double& m : mean) m /= static_cast<double>(n);

    Tensor centered({n, dim});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dim; ++j) centered.at(i, j) = x.at(i, j) - mean[j];

    std::vector<double> cov(dim * dim, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < dim; ++a) {
            const double va = centered.at(i, a);
            if (va == 0.0) continue;
            for (std::size_t b = 0; b < dim; ++b) cov[a * dim + b] += va * centered.at(i, b);
        }
    const double denom = static_cast<double>(n - 1);
    for (double& c : cov) c /= denom;
    double total_variance = 0.0;
    for (std::size_t j = 0; j < dim; ++j) total_variance += cov[j * dim + j];

    constexpr double kTol = 1e-10;
    constexpr std::size_t kMaxIters = 10000;

    PcaResult result;
    result.components.reserve(k);
    result.explained_variance.reserve(k);

    Rng rng(0x9E3779B97F4A7C15ULL);
    std::vector<double> v(dim), w(dim);
    for (std::size_t comp = 0; comp < k; ++comp) {
        auto orthogonalize = [&](std::vector<double>& vec) {
            for (const auto& u : result.components) {
                double dot = 0.0;
                for (std::size_t j = 0; j < dim; ++j) dot += vec[j] * u[j];
                for (std::size_t j = 0; j < dim; ++j) vec[j] -= dot * u[j];
            }
        };
        auto norm_of = [&](const std::vector<double>& vec) {
            double s = 0.0;
            for (double e : vec) s += e * e;
            return std::sqrt(s);
        };
        // fallback: a canonical basis vector orthogonalized against found
        // components, for when the deflated matrix has (numerically) no mass
        auto fallback_direction = [&]() {
            for (std::size_t basis = 0; basis < dim; ++basis) {
                std::vector<double> e(dim, 0.0);
                e[basis] = 1.0;
                orthogonalize(e);
                const double norm = norm_of(e);
                if (norm > 1e-8) {
                    for (double& el : e) el /= norm;
                    return e;
                }
            }
            throw std::logic_error("pca: could not construct an orthogonal direction");
        };

        for (std::size_t j = 0; j < dim; ++j) v[j] = rng.uniform(-1.0, 1.0);
        orthogonalize(v);
        double norm = norm_of(v);
        if (norm < 1e-12) {
            v = fallback_direction();
        } else {
            for (double& e : v) e /= norm;
        }

        bool degenerate = false;
        for (std::size_t iter = 0; iter < kMaxIters; ++iter) {
            for (std::size_t a = 0; a < dim; ++a) {
                double s = 0.0;
                for (std::size_t b = 0; b < dim; ++b) s += cov[a * dim + b] * v[b];
                w[a] = s;
            }
            orthogonalize(w);
            norm = norm_of(w);
            if (norm < 1e-14) {
                degenerate = true;
                break;
            }
            for (double& e : w) e /= norm;
            double diff_minus = 0.0, diff_plus = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                diff_minus += (w[j] - v[j]) * (w[j] - v[j]);
                diff_plus += (w[j] + v[j]) * (w[j] + v[j]);
            }
            v = w;
            if (std::sqrt(std::min(diff_minus, diff_plus)) < kTol) break;
        }
        if (degenerate) v = fallback_direction();

        // Rayleigh quotient on the (deflated) covariance
        double lambda = 0.0;
        for (std::size_t a = 0; a < dim; ++a) {
            double s = 0.0;
            for (std::size_t b = 0; b < dim; ++b) s += cov[a * dim + b] * v[b];
            lambda += v[a] * s;
        }
        if (lambda < 0.0) lambda = 0.0;

        // deterministic sign: largest-magnitude entry positive
        std::size_t arg = 0;
        for (std::size_t j = 1; j < dim; ++j)
            if (std::abs(v[j]) > std::abs(v[arg])) arg = j;
        if (v[arg] < 0.0)
            for (double& e : v) e = -e;

        for (std::size_t a = 0; a < dim; ++a)
            for (std::size_t b = 0; b < dim; ++b) cov[a * dim + b] -= lambda * v[a] * v[b];

        result.components.push_back(v);
        result.explained_variance.push_back(total_variance > 0.0 ? lambda / total_variance : 0.0);
    }

    result.coords = Tensor({n, k});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t comp = 0; comp < k; ++comp) {
            double s = 0.0;
            for (std::size_t j = 0; j < dim; ++j) s += centered.at(i, j) * result.components[comp][j];
            result.coords.at(i, comp) = s;
        }
    return result;
}

// ---------------------------------------------------------------------------
// t-SNE

namespace {

// Conditional distribution P_i for one precision; returns its entropy in nats.
double entropy_for_beta(const std::vector<double>& sq_dist, std::size_t i, double beta,
                        std::vector<double>& p_row, std::size_t n) {
    double sum_p = 0.0;
    double sum_dp = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        if (j == i) {
            p_row[j] = 0.0;
            continue;
        }
        const double pj = std::exp(-beta * sq_dist[i * n + j]);
        p_row[j] = pj;
        sum_p += pj;
        sum_dp += sq_dist[i * n + j] * pj;
    }
    if (sum_p < 1e-300) {
        for (std::size_t j = 0; j < n; ++j) p_row[j] = (j == i) ? 0.0 : 1.0 / static_cast<double>(n - 1);
        return 0.0;
    }
    for (std::size_t j = 0; j < n; ++j) p_row[j] /= sum_p;
    return std::log(sum_p) + beta * sum_dp / sum_p;
}

}  // namespace

TsneResult tsne_project(const Tensor& x, double perplexity, std::size_t iters,
                        std::uint64_t seed) {
    if (x.rank() != 2) throw std::invalid_argument("tsne: expects a [n,D] matrix");
    const std::size_t n = x.dim(0), dim = x.dim(1);
    if (n < 4) throw std::invalid_argument("tsne: too few points for t-SNE (need at least 4)");
    if (n > 2000) {
        throw std::invalid_argument("tsne: exact variant capped at 2000 points, got " +
                                    std::to_string(n));
    }
    if (iters < 1) throw std::invalid_argument("tsne: need at least one iteration");
    if (!(perplexity > 0.0)) throw std::invalid_argument("tsne: perplexity must be positive");

    const double perp_eff = std::min(perplexity, static_cast<double>(n - 1) / 3.0);
    const double target_entropy = std::log(perp_eff);

    std::vector<double> sq_dist(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = x.at(i, d) - x.at(j, d);
                s += diff * diff;
            }
            sq_dist[i * n + j] = s;
            sq_dist[j * n + i] = s;
        }

    // per-point precision search (beta = 1 / (2 sigma^2))
    std::vector<double> cond(n * n, 0.0);
    std::vector<double> p_row(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double beta = 1.0;
        double beta_min = -std::numeric_limits<double>::infinity();
        double beta_max = std::numeric_limits<double>::infinity();
        double entropy = entropy_for_beta(sq_dist, i, beta, p_row, n);
        for (int step = 0; step < 50 && std::abs(entropy - target_entropy) > 1e-5; ++step) {
            if (entropy > target_entropy) {
                beta_min = beta;
                beta = std::isinf(beta_max) ? beta * 2.0 : (beta + beta_max) / 2.0;
            } else {
                beta_max = beta;
                beta = std::isinf(beta_min) ? beta / 2.0 : (beta + beta_min) / 2.0;
            }
            entropy = entropy_for_beta(sq_dist, i, beta, p_row, n);
        }
        for (std::size_t j = 0; j < n; ++j) cond[i * n + j] = p_row[j];
    }

    // symmetrize; floor keeps the KL logs finite
    std::vector<double> p(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            p[i * n + j] =
                std::max((cond[i * n + j] + cond[j * n + i]) / (2.0 * static_cast<double>(n)),
                         1e-12);
        }

    Rng rng(seed);
    Tensor y({n, 2});
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = rng.normal(0.0, 1e-4);
    std::vector<double> velocity(n * 2, 0.0);
    std::vector<double> qt(n * n, 0.0);  // unnormalized student-t affinities
    std::vector<double> grad(n * 2, 0.0);

    constexpr double kEta = 50.0;
    constexpr std::size_t kExaggerationIters = 100;
    constexpr double kExaggeration = 4.0;
    constexpr std::size_t kMomentumSwitch = 250;

    TsneResult result;
    result.kl.reserve(iters + 1);

    auto compute_q = [&]() {
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                const double dy0 = y.at(i, 0) - y.at(j, 0);
                const double dy1 = y.at(i, 1) - y.at(j, 1);
                const double q = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                qt[i * n + j] = q;
                qt[j * n + i] = q;
                z += 2.0 * q;
            }
        return z;
    };
    auto kl_against_plain_p = [&](double z) {
        double kl = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double pij = p[i * n + j];
                const double qij = std::max(qt[i * n + j] / z, 1e-12);
                kl += pij * std::log(pij / qij);
            }
        return kl;
    };

    for (std::size_t it = 0; it < iters; ++it) {
        const double z = compute_q();
        result.kl.push_back(kl_against_plain_p(z));

        const double exaggeration = (it < kExaggerationIters) ? kExaggeration : 1.0;
        const double momentum = (it < kMomentumSwitch) ? 0.5 : 0.8;

        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double qij = std::max(qt[i * n + j] / z, 1e-12);
                const double mult = 4.0 * (exaggeration * p[i * n + j] - qij) * qt[i * n + j];
                grad[i * 2 + 0] += mult * (y.at(i, 0) - y.at(j, 0));
                grad[i * 2 + 1] += mult * (y.at(i, 1) - y.at(j, 1));
            }
        }
        double mean0 = 0.0, mean1 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            velocity[i * 2 + 0] = momentum * velocity[i * 2 + 0] - kEta * grad[i * 2 + 0];
            velocity[i * 2 + 1] = momentum * velocity[i * 2 + 1] - kEta * grad[i * 2 + 1];
            y.at(i, 0) += velocity[i * 2 + 0];
            y.at(i, 1) += velocity[i * 2 + 1];
            mean0 += y.at(i, 0);
            mean1 += y.at(i, 1);
        }
        mean0 /= static_cast<double>(n);
        mean1 /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            y.at(i, 0) -= mean0;
            y.at(i, 1) -= mean1;
        }
    }
    result.kl.push_back(kl_against_plain_p(compute_q()));
    result.coords = std::move(y);
    return result;
}

// ---------------------------------------------------------------------------
// reports

double ks_statistic(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("ks_statistic: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double v = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= v) ++i;
        while (j < b.size() && b[j] <= v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

namespace {

std::vector<double> pooled_channel(const std::vector<Series>& dataset, std::size_t channel) {
    std::vector<double> out;
    for (const Series& s : dataset)
        for (std::size_t t = 0; t < s.length(); ++t) out.push_back(s.values.at(t, channel));
    return out;
}

std::pair<double, double> mean_and_std(const std::vector<double>& values) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    return {mean, std::sqrt(var)};
}

}  // namespace

std::vector<MarginalRow> marginal_report(const std::vector<Series>& real,
                                         const std::vector<Series>& synth) {
    check_uniform_geometry(real, "marginal_report(real)");
    check_uniform_geometry(synth, "marginal_report(synth)");
    if (real.front().channels() != synth.front().channels() ||
        real.front().length() != synth.front().length()) {
        throw std::invalid_argument("marginal_report: real and synthetic geometries differ");
    }
    std::vector<MarginalRow> rows;
    const std::size_t channels = real.front().channels();
    rows.reserve(channels);
    for (std::size_t c = 0; c < channels; ++c) {
        const std::vector<double> rv = pooled_channel(real, c);
        const std::vector<double> sv = pooled_channel(synth, c);
        MarginalRow row;
        row.channel = c;
        std::tie(row.real_mean, row.real_std) = mean_and_std(rv);
        std::tie(row.synth_mean, row.synth_std) = mean_and_std(sv);
        row.ks = ks_statistic(rv, sv);
        rows.push_back(row);
    }
    return rows;
}

DiversityReport diversity_report(const std::vector<std::vector<Series>>& groups) {
    if (groups.empty()) throw std::invalid_argument("diversity_report: no groups");
    DiversityReport report;
    report.group_mean.reserve(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& group = groups[g];
        if (group.size() < 2) {
            throw std::invalid_argument("diversity_report: group " + std::to_string(g) +
                                        " has fewer than 2 members");
        }
        check_uniform_geometry(group, "diversity_report");
        double total = 0.0;
        std::size_t pairs = 0;
        for (std::size_t i = 0; i < group.size(); ++i)
            for (std::size_t j = i + 1; j < group.size(); ++j) {
                double sq = 0.0;
                for (std::size_t e = 0; e < group[i].values.numel(); ++e) {
                    const double diff = group[i].values[e] - group[j].values[e];
                    sq += diff * diff;
                }
                total += std::sqrt(sq);
                ++pairs;
            }
        report.group_mean.push_back(total / static_cast<double>(pairs));
    }
    double grand = 0.0;
    for (double m : report.group_mean) grand += m;
    report.grand_mean = grand / static_cast<double>(report.group_mean.size());
    return report;
}

std::vector<std::vector<Series>> group_by_source(const std::vector<Series>& synth) {
    std::vector<std::string> order;
    std::vector<std::vector<Series>> groups;
    for (const Series& s : synth) {
        const auto cut = s.id.rfind('#');
        const std::string source = (cut == std::string::npos) ? s.id : s.id.substr(0, cut);
        std::size_t idx = order.size();
        for (std::size_t i = 0; i < order.size(); ++i) {
            if (order[i] == source) {
                idx = i;
                break;
            }
        }
        if (idx == order.size()) {
            order.push_back(source);
            groups.emplace_back();
        }
        groups[idx].push_back(s);
    }
    return groups;
}

void write_projection_csv(const std::string& path, const ProjectionResult& projection) {
    if (projection.coords.rank() != 2 || projection.coords.dim(1) != 2 ||
        projection.coords.dim(0) != projection.labels.size()) {
        throw std::invalid_argument("write_projection_csv: coords/labels disagree");
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_projection_csv: cannot open '" + path + "'");
    out << "x,y,label\n";
    for (std::size_t i = 0; i < projection.labels.size(); ++i) {
        out << format_double(projection.coords.at(i, 0)) << ','
            << format_double(projection.coords.at(i, 1)) << ','
            << (projection.labels[i] == 0 ? "real" : "synth") << "\n";
    }
    if (!out) throw std::runtime_error("write_projection_csv: write failed for '" + path + "'");
}

void write_marginal_csv(const std::string& path, const std::vector<MarginalRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_marginal_csv: cannot open '" + path + "'");
    out << "channel,real_mean,synth_mean,real_std,synth_std,ks_stat\n";
    for (const MarginalRow& row : rows) {
        out << row.channel << ',' << format_double(row.real_mean) << ','
            << format_double(row.synth_mean) << ',' << format_double(row.real_std) << ','
            << format_double(row.synth_std) << ',' << format_double(row.ks) << "\n";
    }
    if (!out) throw std::runtime_error("write_marginal_csv: write failed for '" + path + "'");
}

void write_diversity_csv(const std::string& path, const std::vector<std::string>& group_labels,
                         const DiversityReport& report) {
    if (group_labels.size() != report.group_mean.size()) {
        throw std::invalid_argument("write_diversity_csv: labels/report disagree");
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_diversity_csv: cannot open '" + path + "'");
    out << "group,mean_pairwise_distance\n";
    for (std::size_t g = 0; g < group_labels.size(); ++g) {
        out << group_labels[g] << ',' << format_double(report.group_mean[g]) << "\n";
    }
    out << "ALL," << format_double(report.grand_mean) << "\n";
    if (!out) throw std::runtime_error("write_diversity_csv: write failed for '" + path + "'");
}

}  // namespace interpomae
