#include "enercast/analysis.hpp"

#include "enercast/errors.hpp"
#include "enercast/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace enercast::analysis {

namespace {

constexpr double kPi = 3.14159265358979323846;

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi); }
double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

void hour_harmonics(int hour, double* out4) {
    const double a = 2.0 * kPi * hour / 24.0;
    out4[0] = std::sin(a);
    out4[1] = std::cos(a);
    out4[2] = std::sin(2.0 * a);
    out4[3] = std::cos(2.0 * a);
}

Dataset month_subset(const Dataset& ds, int month) {
    if (month < 1 || month > 12) {
        throw ValidationError("month out of range: " + std::to_string(month));
    }
    Dataset out;
    for (const auto& r : ds.records) {
        if (r.calendar.month == month) out.records.push_back(r);
    }
    if (out.empty()) {
        throw ValidationError("no records for month " + std::to_string(month));
    }
    return out;
}

double sample_sd(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

double simpson_rule(double a, double fa, double b, double fb, double fm) {
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

double adaptive_simpson_rec(const std::function<double(double)>& f, double a, double fa, double b,
                            double fb, double m, double fm, double whole, double tol, int depth) {
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const double flm = f(lm);
    const double frm = f(rm);
    const double left = simpson_rule(a, fa, m, fm, flm);
    const double right = simpson_rule(m, fm, b, fb, frm);
    if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol) {
        return left + right + (left + right - whole) / 15.0;
    }
    return adaptive_simpson_rec(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1) +
           adaptive_simpson_rec(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1);
}

}  // namespace

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol) {
    const double m = 0.5 * (a + b);
    const double fa = f(a), fb = f(b), fm = f(m);
    const double whole = simpson_rule(a, fa, b, fb, fm);
    return adaptive_simpson_rec(f, a, fa, b, fb, m, fm, whole, tol, 48);
}

double RegressionFit::coef(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return coefficients[i];
    }
    throw ValidationError("no coefficient named " + name);
}

double RegressionFit::stderr_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return std_errors[i];
    }
    throw ValidationError("no coefficient named " + name);
}

RegressionFit solve_ols(const Matrix& design, std::span<const std::string> names,
                        std::span<const double> target) {
    const std::size_t n = design.rows();
    const std::size_t p = design.cols();
    if (n < p) {
        throw ValidationError("OLS needs at least as many rows as columns");
    }
    if (names.size() != p) {
        throw ValidationError("column name count does not match design");
    }
    if (target.size() != n) {
        throw ValidationError("target length does not match design rows");
    }

    // Householder QR, factors stored in place.
    Matrix a = design;
    std::vector<double> qtb(target.begin(), target.end());
    std::vector<double> tau(p, 0.0);
    double max_diag = 0.0;

    for (std::size_t j = 0; j < p; ++j) {
        double norm2 = 0.0;
        for (std::size_t i = j; i < n; ++i) norm2 += a.at(i, j) * a.at(i, j);
        const double norm = std::sqrt(norm2);
        if (norm > max_diag) max_diag = norm;
        const double tol = 1e-10 * (max_diag > 0 ? max_diag : 1.0);
        if (norm <= tol) {
            throw ValidationError("design is rank deficient: column '" + names[j] +
                                  "' is collinear with earlier columns");
        }
        const double alpha = a.at(j, j) >= 0.0 ? -norm : norm;
        const double u0 = a.at(j, j) - alpha;
        // v = (u0, a(j+1..n, j)), reflector H = I - tau v v^T with v scaled by u0.
        std::vector<double> v(n - j, 0.0);
        v[0] = 1.0;
        for (std::size_t i = j + 1; i < n; ++i) v[i - j] = a.at(i, j) / u0;
        tau[j] = -u0 / alpha;
        a.at(j, j) = alpha;
        for (std::size_t i = j + 1; i < n; ++i) a.at(i, j) = v[i - j];

        for (std::size_t k = j + 1; k < p; ++k) {
            double dot = 0.0;
            for (std::size_t i = j; i < n; ++i) dot += v[i - j] * a.at(i, k);
            const double s = tau[j] * dot;
            for (std::size_t i = j; i < n; ++i) a.at(i, k) -= s * v[i - j];
        }
        double dot = 0.0;
        for (std::size_t i = j; i < n; ++i) dot += v[i - j] * qtb[i];
        const double s = tau[j] * dot;
        for (std::size_t i = j; i < n; ++i) qtb[i] -= s * v[i - j];
    }

    for (std::size_t j = 0; j < p; ++j) {
        if (std::abs(a.at(j, j)) <= 1e-10 * (max_diag > 0 ? max_diag : 1.0)) {
            throw ValidationError("design is rank deficient: column '" + names[j] +
                                  "' is collinear with earlier columns");
        }
    }

    RegressionFit fit;
    fit.names.assign(names.begin(), names.end());
    fit.n = n;
    fit.coefficients.assign(p, 0.0);
    for (std::size_t jj = p; jj-- > 0;) {
        double acc = qtb[jj];
        for (std::size_t k = jj + 1; k < p; ++k) acc -= a.at(jj, k) * fit.coefficients[k];
        fit.coefficients[jj] = acc / a.at(jj, jj);
    }

    fit.residuals.assign(n, 0.0);
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double pred = 0.0;
        for (std::size_t j = 0; j < p; ++j) pred += design.at(i, j) * fit.coefficients[j];
        fit.residuals[i] = target[i] - pred;
        rss += fit.residuals[i] * fit.residuals[i];
    }
    const double mean_y =
        std::accumulate(target.begin(), target.end(), 0.0) / static_cast<double>(n);
    double tss = 0.0;
    for (double y : target) tss += (y - mean_y) * (y - mean_y);
    fit.r_squared = tss > 0.0 ? 1.0 - rss / tss : 0.0;

    // Standard errors from sigma^2 * diag((R^T R)^-1).
    const double sigma2 = n > p ? rss / static_cast<double>(n - p) : 0.0;
    fit.std_errors.assign(p, 0.0);
    for (std::size_t j = 0; j < p; ++j) {
        // Forward-solve R^T w = e_j; diag_j = ||w||^2.
        std::vector<double> w(p, 0.0);
        for (std::size_t i = j; i < p; ++i) {
            double acc = (i == j) ? 1.0 : 0.0;
            for (std::size_t k = j; k < i; ++k) acc -= a.at(k, i) * w[k];
            w[i] = acc / a.at(i, i);
        }
        double diag = 0.0;
        for (std::size_t i = j; i < p; ++i) diag += w[i] * w[i];
        fit.std_errors[j] = std::sqrt(sigma2 * diag);
    }
    return fit;
}

std::vector<double> residualize(std::span<const double> target, const Matrix& design,
                                std::span<const std::string> names) {
    return solve_ols(design, names, target).residuals;
}

double pearson_correlation(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw ValidationError("correlation needs two equal-length vectors of size >= 2");
    }
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) {
        throw ValidationError("correlation undefined for constant input");
    }
    return sxy / std::sqrt(sxx * syy);
}

double CorrelationDensity::operator()(double rho) const {
    if (!(rho > -1.0 && rho < 1.0)) return 0.0;
    const double kappa = std::sqrt(static_cast<double>(n) - 3.0);
    const double dz = std::atanh(rho) - std::atanh(r);
    return kappa * normal_pdf(kappa * dz) / (1.0 - rho * rho);
}

double CorrelationDensity::cdf(double rho) const {
    if (rho <= -1.0) return 0.0;
    if (rho >= 1.0) return 1.0;
    const double kappa = std::sqrt(static_cast<double>(n) - 3.0);
    return normal_cdf(kappa * (std::atanh(rho) - std::atanh(r)));
}

double CorrelationDensity::integrate(double lo, double hi) const {
    lo = std::max(lo, -1.0 + 1e-12);
    hi = std::min(hi, 1.0 - 1e-12);
    if (lo >= hi) return 0.0;
    // Seed the panels around the peak so a narrow spike (large n) cannot slip
    // between quadrature nodes.
    const double kappa = std::sqrt(static_cast<double>(n) - 3.0);
    const double sd_rho = (1.0 - r * r) / kappa;
    std::vector<double> pts = {lo, hi};
    for (double k : {-30.0, -10.0, -3.0, -1.0, 0.0, 1.0, 3.0, 10.0, 30.0}) {
        const double p = r + k * sd_rho;
        if (p > lo && p < hi) pts.push_back(p);
    }
    std::sort(pts.begin(), pts.end());
    double mass = 0.0;
    const auto f = [this](double rho) { return (*this)(rho); };
    for (std::size_t i = 1; i < pts.size(); ++i) {
        if (pts[i] > pts[i - 1]) mass += adaptive_simpson(f, pts[i - 1], pts[i], 1e-9);
    }
    return mass;
}

std::pair<double, CorrelationDensity> correlation_with_density(std::span<const double> x,
                                                               std::span<const double> y) {
    if (x.size() < 4) {
        throw ValidationError("Fisher density needs n >= 4");
    }
    const double r = pearson_correlation(x, y);
    if (std::abs(r) >= 1.0 - 1e-12) {
        throw EvaluationError("correlation at the boundary, confidence density degenerate");
    }
    return {r, CorrelationDensity{r, x.size()}};
}

StratumFit conditional_humidity_effect(const Dataset& ds, double temp_threshold,
                                       std::optional<std::pair<int, int>> hour_window,
                                       std::optional<std::pair<int, int>> month_window) {
    std::vector<double> humidity, demand;
    for (const auto& rec : ds.records) {
        if (rec.weather.temperature <= temp_threshold) continue;
        if (hour_window && (rec.calendar.hour < hour_window->first ||
                            rec.calendar.hour > hour_window->second)) {
            continue;
        }
        if (month_window && (rec.calendar.month < month_window->first ||
                             rec.calendar.month > month_window->second)) {
            continue;
        }
        humidity.push_back(rec.weather.humidity);
        demand.push_back(rec.demand);
    }
    if (humidity.size() < 30) {
        throw ValidationError("stratum too thin: " + std::to_string(humidity.size()) +
                              " records (need 30)");
    }
    Matrix design(humidity.size(), 2);
    for (std::size_t i = 0; i < humidity.size(); ++i) {
        design.at(i, 0) = 1.0;
        design.at(i, 1) = humidity[i];
    }
    const std::vector<std::string> names = {"intercept", "humidity"};
    StratumFit out;
    out.fit = solve_ols(design, names, demand);
    out.demand_sd = sample_sd(demand);
    out.count = humidity.size();
    return out;
}

namespace {

Matrix harmonic_design(const Dataset& ds, bool with_vshape) {
    const std::size_t p = with_vshape ? 6 : 5;
    Matrix design(ds.size(), p);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& rec = ds.records[i];
        double h4[4];
        hour_harmonics(rec.calendar.hour, h4);
        std::size_t c = 0;
        design.at(i, c++) = 1.0;
        if (with_vshape) {
            design.at(i, c++) = std::abs(rec.weather.temperature - kTempMidpoint);
        }
        for (int k = 0; k < 4; ++k) design.at(i, c++) = h4[k];
    }
    return design;
}

const std::vector<std::string> kHarmNames = {"intercept", "hour_sin1", "hour_cos1", "hour_sin2",
                                             "hour_cos2"};
const std::vector<std::string> kJointNames = {"intercept", "temp_v",    "hour_sin1",
                                              "hour_cos1", "hour_sin2", "hour_cos2"};

}  // namespace

TwoStageFit fit_approach1(const Dataset& ds, int month) {
    const Dataset sub = month_subset(ds, month);
    std::vector<double> demand;
    demand.reserve(sub.size());
    for (const auto& rec : sub.records) demand.push_back(rec.demand);

    Matrix stage1(sub.size(), 2);
    for (std::size_t i = 0; i < sub.size(); ++i) {
        stage1.at(i, 0) = 1.0;
        stage1.at(i, 1) = std::abs(sub.records[i].weather.temperature - kTempMidpoint);
    }
    const std::vector<std::string> names1 = {"intercept", "temp_v"};
    TwoStageFit out;
    out.stage1 = solve_ols(stage1, names1, demand);

    const Matrix stage2 = harmonic_design(sub, false);
    out.stage2 = solve_ols(stage2, kHarmNames, out.stage1.residuals);
    return out;
}

RegressionFit fit_approach2(const Dataset& ds, int month) {
    const Dataset sub = month_subset(ds, month);
    std::vector<double> demand;
    demand.reserve(sub.size());
    for (const auto& rec : sub.records) demand.push_back(rec.demand);
    return solve_ols(harmonic_design(sub, true), kJointNames, demand);
}

RegressionFit fwl_fit(const Dataset& ds, int month) {
    const Dataset sub = month_subset(ds, month);
    std::vector<double> demand, vshape;
    demand.reserve(sub.size());
    vshape.reserve(sub.size());
    for (const auto& rec : sub.records) {
        demand.push_back(rec.demand);
        vshape.push_back(std::abs(rec.weather.temperature - kTempMidpoint));
    }
    const Matrix controls = harmonic_design(sub, false);
    const std::vector<double> demand_res = residualize(demand, controls, kHarmNames);
    const std::vector<double> vshape_res = residualize(vshape, controls, kHarmNames);

    Matrix design(sub.size(), 1);
    for (std::size_t i = 0; i < sub.size(); ++i) design.at(i, 0) = vshape_res[i];
    const std::vector<std::string> names = {"temp_v"};
    return solve_ols(design, names, demand_res);
}

double predict_approach1(const TwoStageFit& fit, const HourlyRecord& rec) {
    double h4[4];
    hour_harmonics(rec.calendar.hour, h4);
    double pred = fit.stage1.coefficients[0] +
                  fit.stage1.coefficients[1] * std::abs(rec.weather.temperature - kTempMidpoint);
    pred += fit.stage2.coefficients[0];
    for (int k = 0; k < 4; ++k) pred += fit.stage2.coefficients[k + 1] * h4[k];
    return pred;
}

double predict_approach2(const RegressionFit& fit, const HourlyRecord& rec) {
    double h4[4];
    hour_harmonics(rec.calendar.hour, h4);
    double pred = fit.coefficients[0] +
                  fit.coefficients[1] * std::abs(rec.weather.temperature - kTempMidpoint);
    for (int k = 0; k < 4; ++k) pred += fit.coefficients[k + 2] * h4[k];
    return pred;
}

void LinearScmInstance::validate() const {
    if (z_values.empty() || z_values.size() != z_probs.size()) {
        throw ValidationError("confounder support and probabilities must match");
    }
    double sum = 0.0;
    for (double p : z_probs) {
        if (p < 0.0) throw ValidationError("negative confounder probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ValidationError("confounder probabilities must sum to 1");
    }
}

double LinearScmInstance::z_mean() const {
    double m = 0.0;
    for (std::size_t i = 0; i < z_values.size(); ++i) m += z_values[i] * z_probs[i];
    return m;
}

BackdoorResult backdoor_check(const LinearScmInstance& instance, std::size_t n_samples,
                              std::uint64_t seed) {
    instance.validate();
    Rng rng(seed);
    std::vector<double> xs(n_samples), ys(n_samples), zs(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double u = rng.uniform();
        double acc = 0.0;
        double z = instance.z_values.back();
        for (std::size_t k = 0; k < instance.z_values.size(); ++k) {
            acc += instance.z_probs[k];
            if (u < acc) {
                z = instance.z_values[k];
                break;
            }
        }
        const double x = instance.x_from_z * z + rng.normal(0.0, instance.x_noise_sd);
        const double y =
            instance.y_from_x * x + instance.y_from_z * z + rng.normal(0.0, instance.y_noise_sd);
        xs[i] = x;
        ys[i] = y;
        zs[i] = z;
    }

    Matrix adjusted(n_samples, 3);
    Matrix naive(n_samples, 2);
    for (std::size_t i = 0; i < n_samples; ++i) {
        adjusted.at(i, 0) = 1.0;
        adjusted.at(i, 1) = xs[i];
        adjusted.at(i, 2) = zs[i];
        naive.at(i, 0) = 1.0;
        naive.at(i, 1) = xs[i];
    }
    const std::vector<std::string> adj_names = {"intercept", "x", "z"};
    const std::vector<std::string> naive_names = {"intercept", "x"};
    const RegressionFit adj_fit = solve_ols(adjusted, adj_names, ys);
    const RegressionFit naive_fit = solve_ols(naive, naive_names, ys);

    BackdoorResult out;
    out.regression_coef = adj_fit.coef("x");
    out.regression_se = adj_fit.stderr_of("x");
    out.naive_coef = naive_fit.coef("x");
    out.naive_se = naive_fit.stderr_of("x");
    // E[y | do(x)] = y_from_x * x + y_from_z * E[z]: slope is structural.
    out.do_coef = instance.y_from_x;
    out.abs_diff = std::abs(out.regression_coef - out.do_coef);
    return out;
}

double grid_search_threshold(const Dataset& ds, std::span<const double> candidate_grid) {
    if (candidate_grid.empty()) {
        throw ValidationError("grid search needs a non-empty grid");
    }
    std::vector<double> demand;
    demand.reserve(ds.size());
    for (const auto& rec : ds.records) demand.push_back(rec.demand);

    double best_tau = *std::min_element(candidate_grid.begin(), candidate_grid.end());
    double best_score = -2.0;  // correlations live in [-1, 1]
    for (double tau : candidate_grid) {
        std::vector<double> regressor;
        regressor.reserve(ds.size());
        for (const auto& rec : ds.records) {
            regressor.push_back(rec.weather.temperature > tau ? rec.weather.humidity : 0.0);
        }
        double score;
        try {
            score = pearson_correlation(regressor, demand);
        } catch (const ValidationError&) {
            continue;  // degenerate stratum, cannot beat a valid candidate
        }
        const bool better = score > best_score + 1e-12;
        const bool tie_lower = std::abs(score - best_score) <= 1e-12 && tau < best_tau;
        if (better || tie_lower) {
            best_score = score;
            best_tau = tau;
        }
    }
    return best_tau;
}

std::map<int, double> seasonal_variance(const Dataset& ds) {
    std::map<int, std::vector<double>> by_month;
    for (const auto& rec : ds.records) by_month[rec.calendar.month].push_back(rec.demand);
    std::map<int, double> out;
    for (const auto& [month, values] : by_month) {
        if (values.size() < 30) {
            throw ValidationError("month " + std::to_string(month) + " has only " +
                                  std::to_string(values.size()) + " records (need 30)");
        }
        const double sd = sample_sd(values);
        out[month] = sd * sd;
    }
    return out;
}

std::vector<BinnedStat> binned_means(std::span<const double> x, std::span<const double> y,
                                     int bins) {
    if (x.size() != y.size() || x.empty() || bins < 1) {
        throw ValidationError("binned_means needs matching non-empty inputs and bins >= 1");
    }
    const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
    const double lo = *lo_it, hi = *hi_it;
    const double width = (hi > lo) ? (hi - lo) / bins : 1.0;
    std::vector<double> sums(static_cast<std::size_t>(bins), 0.0);
    std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        auto b = static_cast<std::size_t>((x[i] - lo) / width);
        if (b >= static_cast<std::size_t>(bins)) b = static_cast<std::size_t>(bins) - 1;
        sums[b] += y[i];
        ++counts[b];
    }
    std::vector<BinnedStat> out;
    for (int b = 0; b < bins; ++b) {
        const auto bi = static_cast<std::size_t>(b);
        if (counts[bi] == 0) continue;
        BinnedStat s;
        s.lo = lo + b * width;
        s.hi = s.lo + width;
        s.center = 0.5 * (s.lo + s.hi);
        s.count = counts[bi];
        s.mean_y = sums[bi] / static_cast<double>(counts[bi]);
        out.push_back(s);
    }
    return out;
}

}  // namespace enercast::analysis
