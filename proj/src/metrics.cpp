#include "mmpath/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mmpath {

std::vector<double> average_ranks(const std::vector<double>& v) {
    size_t n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw DimensionError("kendall_tau: length mismatch");
    size_t n = a.size();
    if (n < 2) return 0;
    int64_t concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            double da = a[i] - a[j];
            double db = b[i] - b[j];
            if (da == 0 && db == 0) continue;
            if (da == 0) {
                ++ties_a;
            } else if (db == 0) {
                ++ties_b;
            } else if ((da > 0) == (db > 0)) {
                ++concordant;
            } else {
                ++discordant;
            }
        }
    }
    // tau_b: pairs tied in both lists drop out of each factor.
    double n0 = 0.5 * static_cast<double>(n) * (static_cast<double>(n) - 1);
    int64_t tied_both = static_cast<int64_t>(n0) - concordant - discordant - ties_a - ties_b;
    double denom_a = n0 - static_cast<double>(ties_a + tied_both);
    double denom_b = n0 - static_cast<double>(ties_b + tied_both);
    double denom = std::sqrt(denom_a * denom_b);
    if (denom == 0) return 0;
    return static_cast<double>(concordant - discordant) / denom;
}

double spearman_rho(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw DimensionError("spearman_rho: length mismatch");
    size_t n = a.size();
    if (n < 2) return 0;
    auto ra = average_ranks(a);
    auto rb = average_ranks(b);
    double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / static_cast<double>(n);
    double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / static_cast<double>(n);
    double cov = 0, va = 0, vb = 0;
    for (size_t i = 0; i < n; ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0 || vb == 0) return 0;
    return cov / std::sqrt(va * vb);
}

Metrics compute_metrics(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size()) throw DimensionError("compute_metrics: length mismatch");
    if (pred.empty()) throw InputError("compute_metrics: empty test set");
    Metrics m;
    m.n = static_cast<int>(pred.size());
    double abs_err_sum = 0, abs_label_sum = 0, pct_sum = 0;
    int pct_n = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        double err = std::abs(pred[i] - truth[i]);
        abs_err_sum += err;
        abs_label_sum += std::abs(truth[i]);
        if (truth[i] != 0) {
            pct_sum += err / std::abs(truth[i]);
            ++pct_n;
        } else {
            ++m.mape_excluded;
        }
    }
    m.mae = abs_err_sum / static_cast<double>(m.n);
    m.mare = abs_label_sum > 0 ? abs_err_sum / abs_label_sum : 0;
    m.mape = pct_n > 0 ? 100.0 * pct_sum / static_cast<double>(pct_n) : 0;
    m.tau = kendall_tau(truth, pred);
    m.rho = spearman_rho(truth, pred);
    return m;
}

} // namespace mmpath
