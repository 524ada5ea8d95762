#pragma once

#include "enercast/data.hpp"
#include "enercast/svi.hpp"

#include <map>
#include <span>
#include <utility>
#include <vector>

namespace enercast::eval {

/// Contiguous index ranges partitioning [0, n); sizes differ by at most one.
struct FoldPlan {
    std::size_t k = 0;
    std::vector<std::pair<std::size_t, std::size_t>> ranges;  // [begin, end)

    static FoldPlan contiguous(std::size_t n, std::size_t k);
};

/// 100 * mean(|predicted - actual| / actual); any non-positive actual is an
/// error.
double mape(std::span<const double> predicted, std::span<const double> actual);

struct SeriesPoint {
    Instant timestamp = 0;
    double actual = 0.0;
    double predicted = 0.0;
};

struct EvalReport {
    std::vector<double> fold_mapes;
    double mean_mape = 0.0;
    double train_mape = 0.0;
    double test_mape = 0.0;
    std::map<int, double> monthly_mape;  // held-out records by calendar month
    std::vector<SeriesPoint> series;     // held-out predicted vs actual
};

/// Train on records before `split`, score plug-in predictions on both sides.
EvalReport train_test_eval(const Dataset& ds, Instant split, const svi::PriorSpec& priors,
                           const svi::FixedParams& fixed, const svi::TrainConfig& config);

/// Contiguous-block k-fold: each fold is scored by a model trained on the
/// remaining blocks, with a fold seed derived from the master seed.
EvalReport cross_validate(const Dataset& ds, std::size_t k, const svi::PriorSpec& priors,
                          const svi::FixedParams& fixed, const svi::TrainConfig& config);

}  // namespace enercast::eval
