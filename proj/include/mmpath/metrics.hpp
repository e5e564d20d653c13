#pragma once

#include <vector>

#include "mmpath/common.hpp"

namespace mmpath {

struct Metrics {
    double mae = 0;  // label units
    double mare = 0; // sum |err| / sum |label|
    double mape = 0; // percent
    double tau = 0;  // Kendall rank correlation, tie-adjusted
    double rho = 0;  // Spearman rank correlation (Pearson on average ranks)
    int n = 0;
    int mape_excluded = 0; // zero labels skipped by MAPE
};

// Average ranks (1-based); tied values share the mean of their rank block.
std::vector<double> average_ranks(const std::vector<double>& v);

double kendall_tau(const std::vector<double>& a, const std::vector<double>& b);
double spearman_rho(const std::vector<double>& a, const std::vector<double>& b);

Metrics compute_metrics(const std::vector<double>& pred, const std::vector<double>& truth);

} // namespace mmpath
