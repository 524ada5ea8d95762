#include "enercast/evaluation.hpp"

#include "enercast/errors.hpp"

#include <algorithm>
#include <cmath>

namespace enercast::eval {

FoldPlan FoldPlan::contiguous(std::size_t n, std::size_t k) {
    if (k < 2) {
        throw ValidationError("cross-validation needs k >= 2");
    }
    if (n < 5 * k) {
        throw ValidationError("dataset too short for " + std::to_string(k) + " folds: " +
                              std::to_string(n) + " records");
    }
    FoldPlan plan;
    plan.k = k;
    plan.ranges.reserve(k);
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t begin = f * n / k;
        const std::size_t end = (f + 1) * n / k;
        plan.ranges.emplace_back(begin, end);
    }
    return plan;
}

double mape(std::span<const double> predicted, std::span<const double> actual) {
    if (predicted.size() != actual.size() || actual.empty()) {
        throw ValidationError("mape needs equal-length non-empty vectors");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < actual.size(); ++i) {
        if (!(actual[i] > 0.0)) {
            throw ValidationError("mape undefined for non-positive actual at index " +
                                  std::to_string(i));
        }
        acc += std::abs(predicted[i] - actual[i]) / actual[i];
    }
    return 100.0 * acc / static_cast<double>(actual.size());
}

namespace {

struct Scored {
    std::vector<double> predicted, actual;
    std::vector<SeriesPoint> series;
    std::map<int, std::pair<double, std::size_t>> monthly_acc;  // sum of |err|/y, count
};

void score_records(const Dataset& ds, const svi::GuideState& guide,
                   const svi::PriorSpec& priors, const svi::FixedParams& fixed, Scored& out) {
    const auto naturals = svi::naturals_from_unconstrained(guide.mean, priors);
    const scm::ScmParams params = svi::params_from_naturals(naturals, fixed);
    for (const auto& rec : ds.records) {
        const double pred = scm::predict_demand(rec.calendar, rec.weather, params);
        out.predicted.push_back(pred);
        out.actual.push_back(rec.demand);
        out.series.push_back(SeriesPoint{rec.timestamp, rec.demand, pred});
        if (rec.demand > 0.0) {
            auto& [sum, count] = out.monthly_acc[rec.calendar.month];
            sum += std::abs(pred - rec.demand) / rec.demand;
            ++count;
        }
    }
}

std::map<int, double> finalize_monthly(const Scored& s) {
    std::map<int, double> out;
    for (const auto& [month, acc] : s.monthly_acc) {
        out[month] = 100.0 * acc.first / static_cast<double>(acc.second);
    }
    return out;
}

}  // namespace

EvalReport train_test_eval(const Dataset& ds, Instant split, const svi::PriorSpec& priors,
                           const svi::FixedParams& fixed, const svi::TrainConfig& config) {
    Dataset train_ds, test_ds;
    for (const auto& rec : ds.records) {
        (rec.timestamp < split ? train_ds : test_ds).records.push_back(rec);
    }
    if (train_ds.empty() || test_ds.empty()) {
        throw ValidationError("train/test split leaves an empty side");
    }

    const svi::TrainReport trained = svi::train(train_ds, priors, fixed, config);

    Scored train_scored, test_scored;
    score_records(train_ds, trained.guide, priors, fixed, train_scored);
    score_records(test_ds, trained.guide, priors, fixed, test_scored);

    EvalReport report;
    report.train_mape = mape(train_scored.predicted, train_scored.actual);
    report.test_mape = mape(test_scored.predicted, test_scored.actual);
    report.fold_mapes = {report.train_mape, report.test_mape};
    report.mean_mape = 0.5 * (report.train_mape + report.test_mape);
    report.monthly_mape = finalize_monthly(test_scored);
    report.series = std::move(test_scored.series);
    return report;
}

EvalReport cross_validate(const Dataset& ds, std::size_t k, const svi::PriorSpec& priors,
                          const svi::FixedParams& fixed, const svi::TrainConfig& config) {
    const FoldPlan plan = FoldPlan::contiguous(ds.size(), k);

    EvalReport report;
    Scored all_scored;
    for (std::size_t f = 0; f < k; ++f) {
        const auto [begin, end] = plan.ranges[f];
        Dataset train_ds, test_ds;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            (i >= begin && i < end ? test_ds : train_ds).records.push_back(ds.records[i]);
        }
        svi::TrainConfig fold_config = config;
        fold_config.seed = Rng::mix(config.seed, f);
        const svi::TrainReport trained = svi::train(train_ds, priors, fixed, fold_config);

        Scored fold_scored;
        score_records(test_ds, trained.guide, priors, fixed, fold_scored);
        report.fold_mapes.push_back(mape(fold_scored.predicted, fold_scored.actual));

        all_scored.predicted.insert(all_scored.predicted.end(), fold_scored.predicted.begin(),
                                    fold_scored.predicted.end());
        all_scored.actual.insert(all_scored.actual.end(), fold_scored.actual.begin(),
                                 fold_scored.actual.end());
        all_scored.series.insert(all_scored.series.end(), fold_scored.series.begin(),
                                 fold_scored.series.end());
        for (const auto& [month, acc] : fold_scored.monthly_acc) {
            auto& [sum, count] = all_scored.monthly_acc[month];
            sum += acc.first;
            count += acc.second;
        }
    }
    double total = 0.0;
    for (double m : report.fold_mapes) total += m;
    report.mean_mape = total / static_cast<double>(k);
    report.monthly_mape = finalize_monthly(all_scored);
    report.series = std::move(all_scored.series);
    return report;
}

}  // namespace enercast::eval
