#include "enercast/analysis.hpp"

#include "enercast/errors.hpp"
#include "enercast/rng.hpp"
#include "synthetic.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

using namespace enercast;
using analysis::Matrix;
using analysis::RegressionFit;

namespace {

// Independent normal-equations solver (Gaussian elimination on X^T X).
std::vector<double> normal_equations(const Matrix& x, std::span<const double> y) {
    const std::size_t p = x.cols();
    std::vector<std::vector<double>> a(p, std::vector<double>(p + 1, 0.0));
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            double acc = 0.0;
            for (std::size_t r = 0; r < x.rows(); ++r) acc += x.at(r, i) * x.at(r, j);
            a[i][j] = acc;
        }
        double acc = 0.0;
        for (std::size_t r = 0; r < x.rows(); ++r) acc += x.at(r, i) * y[r];
        a[i][p] = acc;
    }
    for (std::size_t col = 0; col < p; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < p; ++r) {
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        }
        std::swap(a[col], a[pivot]);
        for (std::size_t r = 0; r < p; ++r) {
            if (r == col) continue;
            const double f = a[r][col] / a[col][col];
            for (std::size_t c = col; c <= p; ++c) a[r][c] -= f * a[col][c];
        }
    }
    std::vector<double> beta(p);
    for (std::size_t i = 0; i < p; ++i) beta[i] = a[i][p] / a[i][i];
    return beta;
}

}  // namespace

TEST_CASE("solve_ols recovers an exact line") {
    Matrix design(2, 2);
    design.at(0, 0) = 1.0;
    design.at(0, 1) = 0.0;
    design.at(1, 0) = 1.0;
    design.at(1, 1) = 1.0;
    const std::vector<std::string> names = {"intercept", "x"};
    const std::vector<double> y = {1.0, 3.0};  // y = 2x + 1
    const RegressionFit fit = analysis::solve_ols(design, names, y);
    CHECK(fit.coef("x") == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(fit.coef("intercept") == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("solve_ols gives zero slopes for a target orthogonal to the regressors") {
    // Centered regressors, constant target: only the intercept loads.
    Rng rng(31);
    const std::size_t n = 64;
    Matrix design(n, 3);
    std::vector<double> col1(n), col2(n);
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        col1[i] = rng.normal();
        col2[i] = rng.normal();
        m1 += col1[i];
        m2 += col2[i];
    }
    m1 /= n;
    m2 /= n;
    std::vector<double> y(n, 7.5);
    for (std::size_t i = 0; i < n; ++i) {
        design.at(i, 0) = 1.0;
        design.at(i, 1) = col1[i] - m1;
        design.at(i, 2) = col2[i] - m2;
    }
    const std::vector<std::string> names = {"intercept", "a", "b"};
    const RegressionFit fit = analysis::solve_ols(design, names, y);
    CHECK(fit.coef("a") == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(fit.coef("b") == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(fit.coef("intercept") == doctest::Approx(7.5));
}

TEST_CASE("solve_ols matches the normal equations on random systems") {
    Rng rng(57);
    for (int trial = 0; trial < 10; ++trial) {
        Matrix design(50, 4);
        std::vector<double> y(50);
        for (std::size_t i = 0; i < 50; ++i) {
            design.at(i, 0) = 1.0;
            for (std::size_t j = 1; j < 4; ++j) design.at(i, j) = rng.normal();
            y[i] = rng.normal() * 3.0 + 2.0;
        }
        const std::vector<std::string> names = {"c0", "c1", "c2", "c3"};
        const RegressionFit fit = analysis::solve_ols(design, names, y);
        const std::vector<double> oracle = normal_equations(design, y);
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(fit.coefficients[j] == doctest::Approx(oracle[j]).epsilon(1e-8));
        }
        // Residual mean vanishes when an intercept is present.
        double rsum = 0.0;
        for (double r : fit.residuals) rsum += r;
        CHECK(std::abs(rsum / 50.0) < 1e-9);
    }
}

TEST_CASE("solve_ols names the collinear column") {
    Matrix design(10, 3);
    for (std::size_t i = 0; i < 10; ++i) {
        design.at(i, 0) = 1.0;
        design.at(i, 1) = static_cast<double>(i);
        design.at(i, 2) = 2.0 * static_cast<double>(i);  // exact multiple
    }
    const std::vector<std::string> names = {"intercept", "x", "x_doubled"};
    const std::vector<double> y(10, 1.0);
    CHECK_THROWS_WITH_AS(analysis::solve_ols(design, names, y),
                         doctest::Contains("x_doubled"), ValidationError);
}

TEST_CASE("correlation_with_density rejects degenerate inputs") {
    std::vector<double> x = {1.0, 2.0, 3.0, 4.0, 5.0};
    CHECK_THROWS_AS(analysis::correlation_with_density(x, x), EvaluationError);
    const std::vector<double> constant(5, 2.0);
    CHECK_THROWS_AS(analysis::correlation_with_density(x, constant), ValidationError);
    const std::vector<double> three = {1.0, 2.0, 3.0};
    CHECK_THROWS_AS(analysis::correlation_with_density(three, three), ValidationError);
}

TEST_CASE("Fisher density: mode, mass, and the interval transform") {
    const analysis::CorrelationDensity d{0.5, 103};
    CHECK(d.mode() == doctest::Approx(0.5));

    // Central 95% mass matches the atanh-interval transform.
    const double kappa = std::sqrt(100.0);
    const double lo = std::tanh(std::atanh(0.5) - 1.959963984540054 / kappa);
    const double hi = std::tanh(std::atanh(0.5) + 1.959963984540054 / kappa);
    CHECK(d.integrate(lo, hi) == doctest::Approx(0.95).epsilon(1e-3));
    CHECK(d.cdf(hi) - d.cdf(lo) == doctest::Approx(0.95).epsilon(1e-4));
}

TEST_CASE("Fisher density integrates to one across r and n") {
    for (double r : {-0.98, -0.5, -0.07, 0.0, 0.3, 0.98}) {
        for (std::size_t n : {std::size_t{10}, std::size_t{100}, std::size_t{10000}}) {
            const analysis::CorrelationDensity d{r, n};
            CHECK(d.integrate(-1.0, 1.0) == doctest::Approx(1.0).epsilon(1e-3));
        }
    }
}

TEST_CASE("Fisher density argmax in rho sits slightly off r in small samples") {
    // The change-of-variables Jacobian shifts the rho-space argmax by about
    // 2 r (1 - r^2) / (n - 3); the reported mode() is the z-space peak.
    const analysis::CorrelationDensity d{0.5, 100};
    double best_rho = 0.0, best_val = -1.0;
    for (double rho = 0.40; rho <= 0.60; rho += 1e-5) {
        const double v = d(rho);
        if (v > best_val) {
            best_val = v;
            best_rho = rho;
        }
    }
    const double predicted_shift = 2.0 * 0.5 * (1.0 - 0.25) / 97.0;
    CHECK(best_rho == doctest::Approx(0.5 + predicted_shift).epsilon(2e-3));
}

TEST_CASE("conditional humidity effect on synthetic strata") {
    SUBCASE("zero humidity coefficient yields a null effect") {
        scm::ScmParams p = testgen::unconfounded_params(0.0);
        p.humid_coeff = 0.0;
        p.daily_harmonics = {0.0, 0.0, 0.0, 0.0};  // no hour path into demand
        p.temp_base = 80.0;                        // keep the stratum populated
        const Dataset ds = testgen::sample_fixed_month(p, 7, 2000, 11);
        const auto stratum = analysis::conditional_humidity_effect(ds, 75.0);
        const double coef = stratum.fit.coef("humidity");
        const double se = stratum.fit.stderr_of("humidity");
        CHECK(std::abs(coef) <= 2.0 * se);
    }

    SUBCASE("a 500 MW effect is recovered above the threshold") {
        scm::ScmParams p = testgen::unconfounded_params(0.0);
        p.hvac_slope = 0.0;
        p.humid_coeff = 500.0;
        p.humid_temp_threshold = 70.0;
        p.daily_harmonics = {0.0, 0.0, 0.0, 0.0};
        p.temp_base = 80.0;
        p.temp_noise_sd = 5.0;
        const Dataset ds = testgen::sample_fixed_month(p, 7, 4000, 12);
        // Stratify strictly above the generating threshold.
        const auto stratum = analysis::conditional_humidity_effect(ds, 70.0);
        CHECK(stratum.fit.coef("humidity") == doctest::Approx(500.0).epsilon(0.10));
        CHECK(stratum.count >= 30);
        CHECK(stratum.demand_sd > 0.0);
    }

    SUBCASE("hour windowing removes the hour-confounded part of the effect") {
        // Humidity follows the hour of day, and so does activity demand, so
        // the whole-day regression drifts away from the structural 500; a
        // narrow afternoon window restores it.
        scm::ScmParams p = testgen::unconfounded_params(0.0);
        p.hvac_slope = 0.0;
        p.humid_coeff = 500.0;
        p.humid_temp_threshold = 70.0;
        p.daily_harmonics = {0.0, -200.0, 0.0, 0.0};
        p.temp_base = 80.0;
        const Dataset ds = testgen::sample_fixed_month(p, 7, 8000, 14);
        const auto windowed =
            analysis::conditional_humidity_effect(ds, 70.0, std::make_pair(14, 14));
        const double se = windowed.fit.stderr_of("humidity");
        CHECK(std::abs(windowed.fit.coef("humidity") - 500.0) <= 3.0 * se);
    }

    SUBCASE("thin strata are rejected with their count") {
        const scm::ScmParams p = testgen::unconfounded_params();
        const Dataset ds = testgen::sample_fixed_month(p, 7, 100, 13);
        CHECK_THROWS_WITH_AS(analysis::conditional_humidity_effect(ds, 500.0),
                             doctest::Contains("stratum too thin"), ValidationError);
    }
}

TEST_CASE("approach 1 is biased under hour confounding, approach 2 is not") {
    const double lambda = 25.0;
    const Dataset confounded =
        testgen::sample_fixed_month(testgen::confounded_params(lambda), 7, 3720, 21);

    const analysis::TwoStageFit a1 = analysis::fit_approach1(confounded, 7);
    const double coef1 = a1.stage1.coef("temp_v");
    CHECK(std::abs(coef1 - lambda) / lambda >= 0.20);

    const RegressionFit a2 = analysis::fit_approach2(confounded, 7);
    const double coef2 = a2.coef("temp_v");
    CHECK(std::abs(coef2 - lambda) / lambda <= 0.05);

    SUBCASE("no confounding, no bias") {
        const Dataset clean =
            testgen::sample_fixed_month(testgen::unconfounded_params(lambda), 7, 3720, 22);
        const analysis::TwoStageFit b1 = analysis::fit_approach1(clean, 7);
        const double se = b1.stage1.stderr_of("temp_v");
        CHECK(std::abs(b1.stage1.coef("temp_v") - lambda) <= 2.0 * se);
    }
}

TEST_CASE("FWL reproduces the joint regression coefficient") {
    Rng seeds(101);
    for (int trial = 0; trial < 5; ++trial) {
        const Dataset ds = testgen::sample_fixed_month(testgen::confounded_params(25.0), 7, 744,
                                                       1000 + trial);
        const double joint = analysis::fit_approach2(ds, 7).coef("temp_v");
        const double fwl = analysis::fwl_fit(ds, 7).coef("temp_v");
        CHECK(fwl == doctest::Approx(joint).epsilon(1e-8));
    }
}

TEST_CASE("FWL minimal case: residualizing on the intercept equals plain OLS") {
    Rng rng(63);
    const std::size_t n = 200;
    Matrix intercept_only(n, 1);
    Matrix full(n, 2);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = rng.normal();
        y[i] = 3.0 * x[i] + 1.0 + rng.normal();
        intercept_only.at(i, 0) = 1.0;
        full.at(i, 0) = 1.0;
        full.at(i, 1) = x[i];
    }
    const std::vector<std::string> inames = {"intercept"};
    const std::vector<std::string> fnames = {"intercept", "x"};
    const auto y_res = analysis::residualize(y, intercept_only, inames);
    const auto x_res = analysis::residualize(x, intercept_only, inames);
    Matrix res_design(n, 1);
    for (std::size_t i = 0; i < n; ++i) res_design.at(i, 0) = x_res[i];
    const std::vector<std::string> rnames = {"x"};
    const double via_fwl = analysis::solve_ols(res_design, rnames, y_res).coef("x");
    const double via_ols = analysis::solve_ols(full, fnames, y).coef("x");
    CHECK(via_fwl == doctest::Approx(via_ols).epsilon(1e-10));
}

TEST_CASE("approach 2 coefficient is invariant to shifting the harmonic regressors") {
    const Dataset ds = testgen::sample_fixed_month(testgen::confounded_params(25.0), 7, 744, 7);
    std::vector<double> demand;
    Matrix design(ds.size(), 6), shifted(ds.size(), 6);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& rec = ds.records[i];
        demand.push_back(rec.demand);
        const double a = 2.0 * 3.14159265358979323846 * rec.calendar.hour / 24.0;
        const double h4[4] = {std::sin(a), std::cos(a), std::sin(2 * a), std::cos(2 * a)};
        design.at(i, 0) = 1.0;
        design.at(i, 1) = std::abs(rec.weather.temperature - analysis::kTempMidpoint);
        shifted.at(i, 0) = 1.0;
        shifted.at(i, 1) = design.at(i, 1);
        for (int k = 0; k < 4; ++k) {
            design.at(i, k + 2) = h4[k];
            shifted.at(i, k + 2) = h4[k] + 5.0;
        }
    }
    const std::vector<std::string> names = {"intercept", "temp_v", "h1", "h2", "h3", "h4"};
    const double base = analysis::solve_ols(design, names, demand).coef("temp_v");
    const double moved = analysis::solve_ols(shifted, names, demand).coef("temp_v");
    CHECK(moved == doctest::Approx(base).epsilon(1e-8));
}

TEST_CASE("backdoor adjustment recovers the interventional slope") {
    analysis::LinearScmInstance instance;  // y = 2x + 3z, x = z + noise, z uniform {0,1}
    const auto res = analysis::backdoor_check(instance, 100000, 424242);

    CHECK(res.do_coef == 2.0);
    CHECK(res.abs_diff <= 2.0 * res.regression_se);
    // Omitted-variable bias approx 3 cov(x,z)/var(x) = 3 * 0.25 / 1.25 = 0.6.
    CHECK(std::abs(res.naive_coef - res.do_coef) >= 0.5);

    SUBCASE("no confounding: naive and adjusted agree") {
        analysis::LinearScmInstance clean = instance;
        clean.x_from_z = 0.0;
        const auto r2 = analysis::backdoor_check(clean, 100000, 7);
        CHECK(std::abs(r2.naive_coef - r2.regression_coef) <=
              2.0 * (r2.naive_se + r2.regression_se));
    }
}

TEST_CASE("backdoor gap shrinks with sample size") {
    analysis::LinearScmInstance instance;
    std::vector<double> medians;
    for (std::size_t n : {std::size_t{1000}, std::size_t{10000}, std::size_t{100000}}) {
        std::vector<double> diffs;
        for (std::uint64_t s = 1; s <= 3; ++s) {
            diffs.push_back(analysis::backdoor_check(instance, n, 900 + s).abs_diff);
        }
        std::sort(diffs.begin(), diffs.end());
        medians.push_back(diffs[1]);
    }
    CHECK(medians[1] < medians[0]);
    CHECK(medians[2] < medians[1]);
}

TEST_CASE("grid search finds the generating humidity threshold") {
    Rng rng(33);
    Dataset ds;
    const Instant start = *parse_timestamp("2024-06-01T00:00:00Z");
    for (int i = 0; i < 5000; ++i) {
        HourlyRecord rec;
        rec.timestamp = start + i * kSecondsPerHour;
        rec.calendar = CalendarPoint{i % 24, 7};
        rec.weather.temperature = 50.0 + 40.0 * rng.uniform();
        rec.weather.humidity = rng.beta(5.0, 2.5);
        rec.demand = 3485.0 +
                     (rec.weather.temperature > 70.0 ? 300.0 * rec.weather.humidity : 0.0) +
                     rng.normal(0.0, 50.0);
        ds.records.push_back(rec);
    }
    const std::vector<double> grid = {60.0, 65.0, 70.0, 75.0, 80.0, 85.0};
    const double tau = analysis::grid_search_threshold(ds, grid);
    CHECK(tau == doctest::Approx(70.0));
    CHECK(std::find(grid.begin(), grid.end(), tau) != grid.end());

    const std::vector<double> single = {72.5};
    CHECK(analysis::grid_search_threshold(ds, single) == doctest::Approx(72.5));
}

TEST_CASE("seasonal variance table") {
    SUBCASE("constant demand has zero variance") {
        Dataset ds;
        const Instant start = *parse_timestamp("2024-01-01T00:00:00Z");
        for (int i = 0; i < 24 * 366; ++i) {
            HourlyRecord rec;
            rec.timestamp = start + i * kSecondsPerHour;
            rec.calendar = calendar_from_timestamp(rec.timestamp, TimezoneRule::utc());
            rec.demand = 3000.0;
            ds.records.push_back(rec);
        }
        const auto table = analysis::seasonal_variance(ds);
        REQUIRE(table.size() == 12);
        for (const auto& [month, var] : table) CHECK(var == 0.0);
    }

    SUBCASE("default world: summer variance exceeds winter variance") {
        const Dataset ds = testgen::sample_default_year(5);
        const auto table = analysis::seasonal_variance(ds);
        const double summer = (table.at(6) + table.at(7) + table.at(8)) / 3.0;
        const double winter = (table.at(12) + table.at(1) + table.at(2)) / 3.0;
        CHECK(summer > winter);
    }

    SUBCASE("thin months are rejected") {
        const scm::ScmParams p = scm::ScmParams::defaults();
        Rng rng(3);
        const Instant start = *parse_timestamp("2024-01-01T00:00:00Z");
        const Dataset ds = scm::simulate_dataset(start, 20, p, TimezoneRule::utc(), rng);
        CHECK_THROWS_AS(analysis::seasonal_variance(ds), ValidationError);
    }
}

TEST_CASE("binned means partition the x range") {
    Rng rng(8);
    std::vector<double> x, y;
    for (int i = 0; i < 500; ++i) {
        x.push_back(10.0 * rng.uniform());
        y.push_back(2.0 * x.back() + rng.normal());
    }
    const auto bins = analysis::binned_means(x, y, 10);
    std::size_t total = 0;
    for (const auto& b : bins) {
        total += b.count;
        CHECK(b.lo <= b.center);
        CHECK(b.center <= b.hi);
    }
    CHECK(total == x.size());
    CHECK(bins.front().mean_y < bins.back().mean_y);
}
