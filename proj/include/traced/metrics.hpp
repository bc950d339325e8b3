#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace traced {

struct DegenerateLabels : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptyInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct RankDeficient : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// AUC by rank statistics (Mann-Whitney U); ties contribute 0.5 via
/// midranks. Exact, O(n log n).
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw EmptyInput("auc: size mismatch");
    std::size_t n = scores.size();
    std::size_t pos = 0;
    for (int l : labels) pos += static_cast<std::size_t>(l);
    std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) throw DegenerateLabels("auc: need both classes");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        double midrank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
        for (std::size_t t = i; t < j; ++t)
            if (labels[order[t]]) rank_sum_pos += midrank;
        i = j;
    }
    double u = rank_sum_pos - 0.5 * static_cast<double>(pos) * static_cast<double>(pos + 1);
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

struct ThresholdMetrics {
    double acc = 0, pre = 0, rec = 0, rmse = 0, mae = 0;
    bool pre_defined = true;  // false when nothing was predicted positive
};

inline ThresholdMetrics threshold_metrics(const std::vector<double>& scores,
                                          const std::vector<int>& labels,
                                          double threshold = 0.5) {
    if (scores.empty() || scores.size() != labels.size())
        throw EmptyInput("threshold_metrics: empty or mismatched input");
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    double se = 0, ae = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        bool pred = scores[i] >= threshold;
        if (pred && labels[i]) ++tp;
        else if (pred) ++fp;
        else if (labels[i]) ++fn;
        else ++tn;
        double d = scores[i] - labels[i];
        se += d * d;
        ae += std::abs(d);
    }
    ThresholdMetrics m;
    double n = static_cast<double>(scores.size());
    m.acc = static_cast<double>(tp + tn) / n;
    if (tp + fp == 0) {
        m.pre = 0.0;
        m.pre_defined = false;
    } else {
        m.pre = static_cast<double>(tp) / static_cast<double>(tp + fp);
    }
    m.rec = (tp + fn == 0) ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    m.rmse = std::sqrt(se / n);
    m.mae = ae / n;
    return m;
}

/// Top-2 PCA by power iteration with deflation. Components ordered by
/// eigenvalue; sign fixed so each component's largest-magnitude coordinate
/// is positive. Rank-deficient data gets a zero second component.
struct PcaResult {
    std::vector<std::array<double, 2>> points;
    std::array<double, 2> explained;  // eigenvalues of the two components
    bool rank_deficient = false;
};

inline PcaResult pca_project(const std::vector<std::vector<double>>& vectors,
                             double tol = 1e-10, int max_iter = 1000) {
    if (vectors.size() < 2) throw EmptyInput("pca_project: need >= 2 vectors");
    std::size_t d = vectors[0].size();
    if (d < 2) throw EmptyInput("pca_project: need dimension >= 2");
    std::size_t n = vectors.size();

    std::vector<double> mean(d, 0.0);
    for (const auto& v : vectors)
        for (std::size_t i = 0; i < d; ++i) mean[i] += v[i];
    for (auto& m : mean) m /= static_cast<double>(n);
    std::vector<std::vector<double>> centered(n, std::vector<double>(d));
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < d; ++i) centered[r][i] = vectors[r][i] - mean[i];

    // covariance (d x d), fine for embedding-sized d
    std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
    for (const auto& v : centered)
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) cov[i][j] += v[i] * v[j];
    for (auto& row : cov)
        for (auto& x : row) x /= static_cast<double>(n);

    auto power_iterate = [&](std::vector<double>& vec) -> double {
        double lambda = 0.0;
        for (int it = 0; it < max_iter; ++it) {
            std::vector<double> next(d, 0.0);
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) next[i] += cov[i][j] * vec[j];
            double norm = std::sqrt(std::inner_product(next.begin(), next.end(), next.begin(), 0.0));
            if (norm < 1e-300) return 0.0;
            for (auto& x : next) x /= norm;
            double delta = 0.0;
            for (std::size_t i = 0; i < d; ++i) delta = std::max(delta, std::abs(next[i] - vec[i]));
            vec = next;
            lambda = norm;
            if (delta < tol) break;
        }
        return lambda;
    };
    auto fix_sign = [&](std::vector<double>& vec) {
        std::size_t arg = 0;
        for (std::size_t i = 1; i < d; ++i)
            if (std::abs(vec[i]) > std::abs(vec[arg])) arg = i;
        if (vec[arg] < 0)
            for (auto& x : vec) x = -x;
    };

    std::vector<double> c1(d, 0.0);
    c1[0] = 1.0;
    // deterministic non-degenerate start
    for (std::size_t i = 0; i < d; ++i) c1[i] += 1e-3 * static_cast<double>(i + 1);
    double l1 = power_iterate(c1);
    fix_sign(c1);
    // deflate
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) cov[i][j] -= l1 * c1[i] * c1[j];
    std::vector<double> c2(d, 0.0);
    c2[d - 1] = 1.0;
    for (std::size_t i = 0; i < d; ++i) c2[i] += 1e-3 * static_cast<double>(d - i);
    double l2 = power_iterate(c2);

    PcaResult res;
    res.explained = {l1, l2};
    if (l2 <= tol * std::max(1.0, l1)) {
        res.rank_deficient = true;
        std::fill(c2.begin(), c2.end(), 0.0);
    } else {
        fix_sign(c2);
    }
    res.points.reserve(n);
    for (const auto& v : centered) {
        double x = std::inner_product(v.begin(), v.end(), c1.begin(), 0.0);
        double y = std::inner_product(v.begin(), v.end(), c2.begin(), 0.0);
        res.points.push_back({x, y});
    }
    return res;
}

}  // namespace traced
