#pragma once

#include "enercast/data.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace enercast::analysis {

/// Dense row-major matrix, just enough for regression designs.
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

struct RegressionFit {
    std::vector<std::string> names;
    std::vector<double> coefficients;
    std::vector<double> std_errors;
    std::vector<double> residuals;
    double r_squared = 0.0;
    std::size_t n = 0;

    double coef(const std::string& name) const;
    double stderr_of(const std::string& name) const;
};

/// Least squares through Householder QR. Rank deficiency is an error naming
/// the collinear column.
RegressionFit solve_ols(const Matrix& design, std::span<const std::string> names,
                        std::span<const double> target);

/// target minus its least-squares projection onto the design.
std::vector<double> residualize(std::span<const double> target, const Matrix& design,
                                std::span<const std::string> names);

double pearson_correlation(std::span<const double> x, std::span<const double> y);

/// Approximate confidence density for a correlation coefficient via the
/// Fisher transform: z(rho) ~ Normal(z(r), 1/(n-3)) mapped back to rho.
struct CorrelationDensity {
    double r = 0.0;
    std::size_t n = 0;

    double operator()(double rho) const;
    double cdf(double rho) const;
    /// Peak of the Gaussian on the z scale mapped back to the rho scale.
    double mode() const { return r; }
    /// Adaptive-Simpson mass of the density over [lo, hi] in rho.
    double integrate(double lo, double hi) const;
};

std::pair<double, CorrelationDensity> correlation_with_density(std::span<const double> x,
                                                               std::span<const double> y);

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol);

struct StratumFit {
    RegressionFit fit;      // demand ~ intercept + humidity within the stratum
    double demand_sd = 0.0; // sample sd of demand in the stratum
    std::size_t count = 0;
};

/// Humidity effect adjusted by stratification: records with temperature above
/// `temp_threshold', optionally windowed by local hour and month (inclusive).
StratumFit conditional_humidity_effect(const Dataset& ds, double temp_threshold,
                                       std::optional<std::pair<int, int>> hour_window = {},
                                       std::optional<std::pair<int, int>> month_window = {});

struct TwoStageFit {
    RegressionFit stage1;  // demand ~ intercept + |T - 56|
    RegressionFit stage2;  // stage-1 residuals ~ intercept + hour harmonics
};

inline constexpr double kTempMidpoint = 56.0;

/// Sequential regressions that ignore the hour confounder.
TwoStageFit fit_approach1(const Dataset& ds, int month);

/// Joint regression of demand on the V-transformed temperature and order-2
/// hour harmonics; the backdoor-adjusted estimate.
RegressionFit fit_approach2(const Dataset& ds, int month);

/// Frisch-Waugh-Lovell two-stage estimate; its temperature coefficient must
/// reproduce fit_approach2's.
RegressionFit fwl_fit(const Dataset& ds, int month);

double predict_approach1(const TwoStageFit& fit, const HourlyRecord& rec);
double predict_approach2(const RegressionFit& fit, const HourlyRecord& rec);

/// Linear SCM with a discrete confounder: x = x_from_z * z + N(0, x_noise_sd),
/// y = y_from_x * x + y_from_z * z + N(0, y_noise_sd).
struct LinearScmInstance {
    std::vector<double> z_values = {0.0, 1.0};
    std::vector<double> z_probs = {0.5, 0.5};
    double x_from_z = 1.0;
    double x_noise_sd = 1.0;
    double y_from_x = 2.0;
    double y_from_z = 3.0;
    double y_noise_sd = 1.0;

    void validate() const;
    double z_mean() const;
};

struct BackdoorResult {
    double regression_coef = 0.0;  // x coefficient in y ~ 1 + x + z
    double regression_se = 0.0;
    double naive_coef = 0.0;       // x coefficient in y ~ 1 + x
    double naive_se = 0.0;
    double do_coef = 0.0;          // analytic interventional slope
    double abs_diff = 0.0;         // |regression_coef - do_coef|
};

BackdoorResult backdoor_check(const LinearScmInstance& instance, std::size_t n_samples,
                              std::uint64_t seed);

/// Grid point maximizing corr(R.H. * 1[T > tau], demand); ties and degenerate
/// strata resolve toward the lower threshold.
double grid_search_threshold(const Dataset& ds, std::span<const double> candidate_grid);

/// Sample variance of demand per calendar month present in the data; a month
/// with fewer than 30 records is an error.
std::map<int, double> seasonal_variance(const Dataset& ds);

struct BinnedStat {
    double lo = 0.0, hi = 0.0, center = 0.0;
    std::size_t count = 0;
    double mean_y = 0.0;
};

/// Equal-width bins of x with the mean of y per bin; empty bins are omitted.
std::vector<BinnedStat> binned_means(std::span<const double> x, std::span<const double> y,
                                     int bins);

}  // namespace enercast::analysis
