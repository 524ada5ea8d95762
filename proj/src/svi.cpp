#include "enercast/svi.hpp"

#include "enercast/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

namespace enercast::svi {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kHalfLog2Pi = 0.91893853320467274178;
constexpr double kRhClamp = 1e-6;

struct LatentInfo {
    const char* name;
    PriorFamily family;
    double loc;
    double scale;
};

const std::array<LatentInfo, kNumLatents>& registry() {
    static const std::array<LatentInfo, kNumLatents> table = {{
        {"temp_month_sin1", PriorFamily::normal, -4.6, PriorSpec::kScale1},
        {"temp_month_cos1", PriorFamily::normal, 6.4, PriorSpec::kScale1},
        {"temp_month_sin2", PriorFamily::normal, -1.6, PriorSpec::kScale1},
        {"temp_month_cos2", PriorFamily::normal, -0.86, PriorSpec::kScale1},
        {"temp_hour_sin1", PriorFamily::normal, -17.0, PriorSpec::kScale3},
        {"temp_hour_cos1", PriorFamily::normal, -22.0, PriorSpec::kScale3},
        {"temp_hour_sin2", PriorFamily::normal, -2.3, PriorSpec::kScale3},
        {"temp_hour_cos2", PriorFamily::normal, -2.6, PriorSpec::kScale3},
        {"rad_to_temp", PriorFamily::normal, 0.01, PriorSpec::kScale1},
        {"temp_base", PriorFamily::normal, 47.0, PriorSpec::kScale1},
        {"temp_noise_sd", PriorFamily::log_normal, 1.6094379124341003, 0.5},  // median 5 degF
        {"humid_hour_sin", PriorFamily::normal, 0.5, PriorSpec::kScale1},
        {"humid_hour_cos", PriorFamily::normal, -0.7, PriorSpec::kScale1},
        {"humid_month_sin", PriorFamily::normal, 0.3, PriorSpec::kScale1},
        {"humid_month_cos", PriorFamily::normal, -0.3, PriorSpec::kScale1},
        {"humid_alpha0", PriorFamily::normal, 5.1, PriorSpec::kScale1},
        {"humid_beta0", PriorFamily::normal, 7.6, PriorSpec::kScale1},
        {"rad_amp_p", PriorFamily::normal, 500.0, PriorSpec::kScale2},
        {"rad_amp_q", PriorFamily::normal, 300.0, PriorSpec::kScale2},
        {"rad_noise_sd", PriorFamily::log_normal, 5.1179938124167550, 0.5},  // median 167 W/m^2
        {"wind_mean", PriorFamily::normal, 16.0, PriorSpec::kScale2},
        {"wind_sd", PriorFamily::log_normal, 2.0794415416798357, 0.5},  // median 8 mph
        {"hvac_slope", PriorFamily::normal, 20.0, PriorSpec::kScale2},
        {"demand_base", PriorFamily::normal, 3485.0, PriorSpec::kScale2},
        {"humid_coeff", PriorFamily::normal, 300.0, PriorSpec::kScale2},
        {"wind_coeff", PriorFamily::normal, 10.0, PriorSpec::kScale2},
        {"wind_asymmetry", PriorFamily::log_normal, 0.0, 0.5},  // median 1
        {"daily_sin1", PriorFamily::normal, -150.0, PriorSpec::kScale2},
        {"daily_cos1", PriorFamily::normal, 136.0, PriorSpec::kScale2},
        {"daily_sin2", PriorFamily::normal, 84.0, PriorSpec::kScale2},
        {"daily_cos2", PriorFamily::normal, 7.0, PriorSpec::kScale2},
        {"yearly_sin1", PriorFamily::normal, -15.0, PriorSpec::kScale2},
        {"yearly_cos1", PriorFamily::normal, 110.0, PriorSpec::kScale2},
        {"yearly_sin2", PriorFamily::normal, 55.0, PriorSpec::kScale2},
        {"yearly_cos2", PriorFamily::normal, 45.0, PriorSpec::kScale2},
        {"light_coeff", PriorFamily::normal, 100.0, PriorSpec::kScale2},
        {"light_decay", PriorFamily::log_normal, -5.2983173665480363, 0.5},  // median 0.005
        {"demand_noise_sd", PriorFamily::log_normal, 5.0106352940962555, 0.5},  // median 150 MW
    }};
    return table;
}

double normal_logpdf(double x, double loc, double scale) {
    const double z = (x - loc) / scale;
    return -std::log(scale) - kHalfLog2Pi - 0.5 * z * z;
}

}  // namespace

int PriorSpec::find(const std::string& name) const {
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].name == name) return static_cast<int>(i);
    }
    return -1;
}

PriorSpec PriorSpec::defaults() {
    PriorSpec spec;
    spec.entries.reserve(kNumLatents);
    for (const auto& info : registry()) {
        spec.entries.push_back(PriorEntry{info.name, info.family, info.loc, info.scale});
    }
    return spec;
}

void PriorSpec::validate_canonical() const {
    std::vector<std::string> issues;
    if (entries.size() != kNumLatents) {
        issues.push_back("prior spec must declare all " + std::to_string(kNumLatents) +
                         " latents, got " + std::to_string(entries.size()));
    } else {
        for (std::size_t i = 0; i < kNumLatents; ++i) {
            if (entries[i].name != registry()[i].name) {
                issues.push_back("latent #" + std::to_string(i) + " must be named " +
                                 registry()[i].name);
            }
        }
    }
    for (const auto& e : entries) {
        if (!(e.scale > 0.0)) issues.push_back("prior scale must be > 0 for " + e.name);
    }
    if (!issues.empty()) throw ConfigError(std::move(issues));
}

std::string PriorSpec::to_json() const {
    nlohmann::json j;
    for (const auto& e : entries) {
        j[e.name] = {{"family", e.family == PriorFamily::normal ? "normal" : "log_normal"},
                     {"loc", e.loc},
                     {"scale", e.scale}};
    }
    return j.dump(2);
}

PriorSpec PriorSpec::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open prior file: " + path);
    const nlohmann::json j = nlohmann::json::parse(in);
    PriorSpec spec = defaults();
    for (auto it = j.begin(); it != j.end(); ++it) {
        const int idx = spec.find(it.key());
        if (idx < 0) throw ValidationError("unknown latent in prior file: " + it.key());
        PriorEntry& e = spec.entries[static_cast<std::size_t>(idx)];
        const auto& o = it.value();
        if (o.contains("family")) {
            const std::string fam = o.at("family").get<std::string>();
            if (fam == "normal") {
                e.family = PriorFamily::normal;
            } else if (fam == "log_normal") {
                e.family = PriorFamily::log_normal;
            } else {
                throw ValidationError("unknown prior family: " + fam);
            }
        }
        if (o.contains("loc")) e.loc = o.at("loc").get<double>();
        if (o.contains("scale")) e.scale = o.at("scale").get<double>();
    }
    spec.validate_canonical();
    return spec;
}

double constrain_value(PriorFamily family, double u) {
    return family == PriorFamily::log_normal ? std::exp(u) : u;
}

double unconstrain_value(PriorFamily family, double x) {
    if (family == PriorFamily::log_normal) {
        if (!(x > 0.0)) throw EvaluationError("log-normal latent must be positive");
        return std::log(x);
    }
    return x;
}

double log_prior(std::span<const double> naturals, const PriorSpec& priors) {
    if (naturals.size() != priors.dim()) {
        throw ValidationError("latent vector covers " + std::to_string(naturals.size()) +
                              " values, prior spec declares " + std::to_string(priors.dim()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < priors.dim(); ++i) {
        const PriorEntry& e = priors.entries[i];
        if (e.family == PriorFamily::normal) {
            acc += normal_logpdf(naturals[i], e.loc, e.scale);
        } else {
            if (!(naturals[i] > 0.0)) {
                throw EvaluationError("log-normal latent " + e.name + " must be positive");
            }
            const double lx = std::log(naturals[i]);
            acc += -lx + normal_logpdf(lx, e.loc, e.scale);
        }
    }
    return acc;
}

double log_prior(const std::map<std::string, double>& latents, const PriorSpec& priors) {
    std::vector<double> values;
    values.reserve(priors.dim());
    for (const auto& e : priors.entries) {
        const auto it = latents.find(e.name);
        if (it == latents.end()) {
            throw ValidationError("latent value missing for " + e.name);
        }
        values.push_back(it->second);
    }
    return log_prior(values, priors);
}

GuideState GuideState::init_from(const PriorSpec& priors) {
    GuideState g;
    g.mean.reserve(priors.dim());
    g.log_sd.reserve(priors.dim());
    for (const auto& e : priors.entries) {
        g.mean.push_back(e.loc);
        g.log_sd.push_back(std::log(0.1 * e.scale));
    }
    return g;
}

FixedParams FixedParams::defaults() {
    FixedParams f;
    f.solar_table = scm::SolarTable::for_location(44.6321, -100.2753, TimezoneRule::us_central());
    return f;
}

scm::ScmParams params_from_naturals(std::span<const double> n, const FixedParams& fixed) {
    if (n.size() != kNumLatents) {
        throw ValidationError("expected " + std::to_string(kNumLatents) + " latent values");
    }
    auto v = [&](Latent l) { return n[index_of(l)]; };
    scm::ScmParams p;
    p.harmonic_order = 2;
    p.temp_month_harmonics = {v(Latent::temp_month_sin1), v(Latent::temp_month_cos1),
                              v(Latent::temp_month_sin2), v(Latent::temp_month_cos2)};
    p.temp_hour_harmonics = {v(Latent::temp_hour_sin1), v(Latent::temp_hour_cos1),
                             v(Latent::temp_hour_sin2), v(Latent::temp_hour_cos2)};
    p.rad_to_temp = v(Latent::rad_to_temp);
    p.temp_base = v(Latent::temp_base);
    p.temp_noise_sd = v(Latent::temp_noise_sd);
    p.humid_hour_sin = v(Latent::humid_hour_sin);
    p.humid_hour_cos = v(Latent::humid_hour_cos);
    p.humid_month_sin = v(Latent::humid_month_sin);
    p.humid_month_cos = v(Latent::humid_month_cos);
    p.humid_alpha0 = v(Latent::humid_alpha0);
    p.humid_beta0 = v(Latent::humid_beta0);
    p.rad_amp_p = v(Latent::rad_amp_p);
    p.rad_amp_q = v(Latent::rad_amp_q);
    p.rad_noise_sd = v(Latent::rad_noise_sd);
    p.solar_table = fixed.solar_table;
    p.wind_mean = v(Latent::wind_mean);
    p.wind_sd = v(Latent::wind_sd);
    p.hvac_slope = v(Latent::hvac_slope);
    p.demand_base = v(Latent::demand_base);
    p.temp_mid = fixed.temp_mid;
    p.humid_coeff = v(Latent::humid_coeff);
    p.humid_temp_threshold = fixed.humid_temp_threshold;
    p.wind_coeff = v(Latent::wind_coeff);
    p.wind_asymmetry = v(Latent::wind_asymmetry);
    p.wind_cold_threshold = fixed.wind_cold_threshold;
    p.wind_hot_threshold = fixed.wind_hot_threshold;
    p.daily_harmonics = {v(Latent::daily_sin1), v(Latent::daily_cos1), v(Latent::daily_sin2),
                         v(Latent::daily_cos2)};
    p.yearly_harmonics = {v(Latent::yearly_sin1), v(Latent::yearly_cos1), v(Latent::yearly_sin2),
                          v(Latent::yearly_cos2)};
    p.light_coeff = v(Latent::light_coeff);
    p.light_decay = v(Latent::light_decay);
    p.active_hours = fixed.active_hours;
    p.demand_noise_sd = v(Latent::demand_noise_sd);
    return p;
}

std::array<double, kNumLatents> naturals_from_params(const scm::ScmParams& p) {
    if (p.harmonic_order != 2) {
        throw ValidationError("inference latents require harmonic_order == 2");
    }
    std::array<double, kNumLatents> n{};
    auto set = [&](Latent l, double value) { n[index_of(l)] = value; };
    set(Latent::temp_month_sin1, p.temp_month_harmonics[0]);
    set(Latent::temp_month_cos1, p.temp_month_harmonics[1]);
    set(Latent::temp_month_sin2, p.temp_month_harmonics[2]);
    set(Latent::temp_month_cos2, p.temp_month_harmonics[3]);
    set(Latent::temp_hour_sin1, p.temp_hour_harmonics[0]);
    set(Latent::temp_hour_cos1, p.temp_hour_harmonics[1]);
    set(Latent::temp_hour_sin2, p.temp_hour_harmonics[2]);
    set(Latent::temp_hour_cos2, p.temp_hour_harmonics[3]);
    set(Latent::rad_to_temp, p.rad_to_temp);
    set(Latent::temp_base, p.temp_base);
    set(Latent::temp_noise_sd, p.temp_noise_sd);
    set(Latent::humid_hour_sin, p.humid_hour_sin);
    set(Latent::humid_hour_cos, p.humid_hour_cos);
    set(Latent::humid_month_sin, p.humid_month_sin);
    set(Latent::humid_month_cos, p.humid_month_cos);
    set(Latent::humid_alpha0, p.humid_alpha0);
    set(Latent::humid_beta0, p.humid_beta0);
    set(Latent::rad_amp_p, p.rad_amp_p);
    set(Latent::rad_amp_q, p.rad_amp_q);
    set(Latent::rad_noise_sd, p.rad_noise_sd);
    set(Latent::wind_mean, p.wind_mean);
    set(Latent::wind_sd, p.wind_sd);
    set(Latent::hvac_slope, p.hvac_slope);
    set(Latent::demand_base, p.demand_base);
    set(Latent::humid_coeff, p.humid_coeff);
    set(Latent::wind_coeff, p.wind_coeff);
    set(Latent::wind_asymmetry, p.wind_asymmetry);
    set(Latent::daily_sin1, p.daily_harmonics[0]);
    set(Latent::daily_cos1, p.daily_harmonics[1]);
    set(Latent::daily_sin2, p.daily_harmonics[2]);
    set(Latent::daily_cos2, p.daily_harmonics[3]);
    set(Latent::yearly_sin1, p.yearly_harmonics[0]);
    set(Latent::yearly_cos1, p.yearly_harmonics[1]);
    set(Latent::yearly_sin2, p.yearly_harmonics[2]);
    set(Latent::yearly_cos2, p.yearly_harmonics[3]);
    set(Latent::light_coeff, p.light_coeff);
    set(Latent::light_decay, p.light_decay);
    set(Latent::demand_noise_sd, p.demand_noise_sd);
    return n;
}

scm::ScmParams params_from_prior_means(const PriorSpec& priors, const FixedParams& fixed) {
    priors.validate_canonical();
    std::array<double, kNumLatents> n{};
    for (std::size_t i = 0; i < kNumLatents; ++i) {
        n[i] = constrain_value(priors.entries[i].family, priors.entries[i].loc);
    }
    return params_from_naturals(n, fixed);
}

std::array<double, kNumLatents> naturals_from_unconstrained(std::span<const double> u,
                                                            const PriorSpec& priors) {
    if (u.size() != kNumLatents || priors.dim() != kNumLatents) {
        throw ValidationError("unconstrained vector must cover all latents");
    }
    std::array<double, kNumLatents> n{};
    for (std::size_t i = 0; i < kNumLatents; ++i) {
        n[i] = constrain_value(priors.entries[i].family, u[i]);
    }
    return n;
}

BatchFeatures build_features(const Dataset& ds, const FixedParams& fixed) {
    BatchFeatures f;
    const std::size_t n = ds.size();
    f.hour.reserve(n);
    f.month.reserve(n);
    f.vshape.reserve(n);
    f.humid_on_rh.reserve(n);
    f.wind_cold_w.reserve(n);
    f.wind_hot_w.reserve(n);
    f.rad.reserve(n);
    f.temp.reserve(n);
    f.demand.reserve(n);
    f.log_rh.reserve(n);
    f.log_1m_rh.reserve(n);
    f.light_on.reserve(n);
    f.day_factor.reserve(n);
    for (const auto& rec : ds.records) {
        const double t = rec.weather.temperature;
        f.hour.push_back(rec.calendar.hour);
        f.month.push_back(rec.calendar.month);
        f.vshape.push_back(std::abs(t - fixed.temp_mid));
        f.humid_on_rh.push_back(t > fixed.humid_temp_threshold ? rec.weather.humidity : 0.0);
        f.wind_cold_w.push_back(t < fixed.wind_cold_threshold ? rec.weather.wind_speed : 0.0);
        f.wind_hot_w.push_back(t > fixed.wind_hot_threshold ? rec.weather.wind_speed : 0.0);
        f.rad.push_back(rec.weather.radiation);
        f.temp.push_back(t);
        f.demand.push_back(rec.demand);
        const double rh =
            std::min(1.0 - kRhClamp, std::max(kRhClamp, rec.weather.humidity));
        f.log_rh.push_back(std::log(rh));
        f.log_1m_rh.push_back(std::log1p(-rh));
        f.light_on.push_back((fixed.active_hours >> rec.calendar.hour) & 1u ? 1 : 0);
        const double rise = fixed.solar_table.sunrise_for(rec.calendar.month);
        const double set = fixed.solar_table.sunset_for(rec.calendar.month);
        const double h = rec.calendar.hour;
        f.day_factor.push_back(h < rise || h > set ? 0.0
                                                   : std::sin(kPi * (h - rise) / (set - rise)));
    }
    return f;
}

namespace {

struct CellStats {
    std::size_t count = 0;
    double sum_log_rh = 0.0;
    double sum_log_1m_rh = 0.0;
};

}  // namespace

ad::DiffScalar scm_log_likelihood(ad::Tape& tape, const BatchFeatures& f,
                                  std::span<const std::size_t> indices,
                                  std::span<const ad::DiffScalar> lat, const FixedParams& fixed) {
    (void)fixed;  // thresholds already folded into the features
    if (indices.empty()) {
        throw ValidationError("likelihood needs a non-empty batch");
    }
    auto L = [&](Latent l) -> const ad::DiffScalar& { return lat[index_of(l)]; };
    const double count = static_cast<double>(indices.size());

    // Hour/month trig tables (first harmonic doubles as the humidity angle).
    double hs1[24], hc1[24], hs2[24], hc2[24];
    for (int h = 0; h < 24; ++h) {
        const double a = 2.0 * kPi * h / 24.0;
        hs1[h] = std::sin(a);
        hc1[h] = std::cos(a);
        hs2[h] = std::sin(2.0 * a);
        hc2[h] = std::cos(2.0 * a);
    }
    double ms1[13], mc1[13], ms2[13], mc2[13], ms_half[13];
    for (int m = 1; m <= 12; ++m) {
        const double a = 2.0 * kPi * m / 12.0;
        ms1[m] = std::sin(a);
        mc1[m] = std::cos(a);
        ms2[m] = std::sin(2.0 * a);
        mc2[m] = std::cos(2.0 * a);
        ms_half[m] = std::sin(kPi * m / 12.0);
    }

    // Latent-dependent caches shared across records.
    ad::DiffScalar daily_cache[24], hour_harm_cache[24];
    bool daily_built[24] = {};
    ad::DiffScalar yearly_cache[13], month_harm_cache[13], rad_amp_cache[13];
    bool monthly_built[13] = {};
    auto build_hour = [&](int h) {
        if (daily_built[h]) return;
        daily_cache[h] = L(Latent::daily_sin1) * hs1[h] + L(Latent::daily_cos1) * hc1[h] +
                         L(Latent::daily_sin2) * hs2[h] + L(Latent::daily_cos2) * hc2[h];
        hour_harm_cache[h] = L(Latent::temp_hour_sin1) * hs1[h] +
                             L(Latent::temp_hour_cos1) * hc1[h] +
                             L(Latent::temp_hour_sin2) * hs2[h] +
                             L(Latent::temp_hour_cos2) * hc2[h];
        daily_built[h] = true;
    };
    auto build_month = [&](int m) {
        if (monthly_built[m]) return;
        yearly_cache[m] = L(Latent::yearly_sin1) * ms1[m] + L(Latent::yearly_cos1) * mc1[m] +
                          L(Latent::yearly_sin2) * ms2[m] + L(Latent::yearly_cos2) * mc2[m];
        month_harm_cache[m] = L(Latent::temp_month_sin1) * ms1[m] +
                              L(Latent::temp_month_cos1) * mc1[m] +
                              L(Latent::temp_month_sin2) * ms2[m] +
                              L(Latent::temp_month_cos2) * mc2[m] + L(Latent::temp_base);
        rad_amp_cache[m] = L(Latent::rad_amp_p) * ms_half[m] + L(Latent::rad_amp_q);
        monthly_built[m] = true;
    };

    // (hour, month) cells: temperature harmonic mean, radiation mean, and the
    // humidity Beta sufficient statistics.
    constexpr int kCells = 24 * 12;
    std::vector<int> cell_slot(kCells, -1);
    std::vector<CellStats> cell_stats;
    std::vector<int> cell_hour, cell_month;
    std::vector<double> cell_day_factor;
    std::vector<std::size_t> record_cell(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const std::size_t i = indices[k];
        const int h = f.hour[i];
        const int m = f.month[i];
        const int id = (m - 1) * 24 + h;
        int slot = cell_slot[id];
        if (slot < 0) {
            slot = static_cast<int>(cell_stats.size());
            cell_slot[id] = slot;
            cell_stats.push_back({});
            cell_hour.push_back(h);
            cell_month.push_back(m);
            cell_day_factor.push_back(f.day_factor[i]);
            build_hour(h);
            build_month(m);
        }
        CellStats& st = cell_stats[static_cast<std::size_t>(slot)];
        ++st.count;
        st.sum_log_rh += f.log_rh[i];
        st.sum_log_1m_rh += f.log_1m_rh[i];
        record_cell[k] = static_cast<std::size_t>(slot);
    }

    const std::size_t n_cells = cell_stats.size();
    std::vector<ad::DiffScalar> cell_temp_mean(n_cells), cell_rad_mean(n_cells);
    for (std::size_t c = 0; c < n_cells; ++c) {
        const int h = cell_hour[c];
        const int m = cell_month[c];
        cell_temp_mean[c] = month_harm_cache[m] + hour_harm_cache[h];
        if (cell_day_factor[c] > 0.0) {
            cell_rad_mean[c] = rad_amp_cache[m] * cell_day_factor[c];
        }
    }

    // Shared per-batch nodes.
    const ad::DiffScalar lam_kw = L(Latent::wind_asymmetry) * L(Latent::wind_coeff);
    const ad::DiffScalar neg_beta_l = -L(Latent::light_decay);

    std::vector<ad::DiffScalar> demand_sq, temp_sq, rad_sq;
    demand_sq.reserve(indices.size());
    temp_sq.reserve(indices.size());
    rad_sq.reserve(indices.size());
    double rad_night_sq = 0.0;

    for (std::size_t k = 0; k < indices.size(); ++k) {
        const std::size_t i = indices[k];
        const std::size_t c = record_cell[k];
        const int h = f.hour[i];
        const int m = f.month[i];

        ad::DiffScalar mean = L(Latent::demand_base) + L(Latent::hvac_slope) * f.vshape[i];
        if (f.humid_on_rh[i] != 0.0) mean = mean + L(Latent::humid_coeff) * f.humid_on_rh[i];
        if (f.wind_cold_w[i] != 0.0) mean = mean + L(Latent::wind_coeff) * f.wind_cold_w[i];
        if (f.wind_hot_w[i] != 0.0) mean = mean - lam_kw * f.wind_hot_w[i];
        mean = mean + daily_cache[h] + yearly_cache[m];
        if (f.light_on[i]) {
            if (f.rad[i] == 0.0) {
                mean = mean + L(Latent::light_coeff);
            } else {
                mean = mean + L(Latent::light_coeff) * ad::exp(neg_beta_l * f.rad[i]);
            }
        }
        demand_sq.push_back(ad::square(mean - f.demand[i]));

        ad::DiffScalar tmean = cell_temp_mean[c];
        if (f.rad[i] != 0.0) tmean = tmean + L(Latent::rad_to_temp) * f.rad[i];
        temp_sq.push_back(ad::square(tmean - f.temp[i]));

        if (cell_day_factor[c] > 0.0) {
            rad_sq.push_back(ad::square(cell_rad_mean[c] - f.rad[i]));
        } else {
            rad_night_sq += f.rad[i] * f.rad[i];
        }
    }

    // Gaussian blocks: n * (-log sd - log sqrt(2 pi)) - sum(sq) / (2 sd^2).
    auto gaussian_block = [&](Latent sd_latent, std::vector<ad::DiffScalar>&& sq_terms,
                              double const_sq) {
        ad::DiffScalar sum_sq;
        if (sq_terms.empty()) {
            sum_sq = tape.constant(const_sq);
        } else {
            sum_sq = ad::pairwise_sum(std::move(sq_terms));
            if (const_sq != 0.0) sum_sq = sum_sq + const_sq;
        }
        const ad::DiffScalar sd = L(sd_latent);
        return (ad::log(sd) + kHalfLog2Pi) * (-count) - (0.5 / ad::square(sd)) * sum_sq;
    };

    ad::DiffScalar loglik = gaussian_block(Latent::demand_noise_sd, std::move(demand_sq), 0.0);
    loglik = loglik + gaussian_block(Latent::temp_noise_sd, std::move(temp_sq), 0.0);
    loglik = loglik + gaussian_block(Latent::rad_noise_sd, std::move(rad_sq), rad_night_sq);

    // Humidity Beta terms grouped by (hour, month):
    // (a-1) S1 + (b-1) S2 - n0 (lgamma a + lgamma b - lgamma(a+b)).
    std::vector<ad::DiffScalar> beta_terms;
    beta_terms.reserve(n_cells);
    for (std::size_t c = 0; c < n_cells; ++c) {
        const int h = cell_hour[c];
        const int m = cell_month[c];
        const CellStats& st = cell_stats[c];
        const ad::DiffScalar a_raw = L(Latent::humid_hour_sin) * hs1[h] +
                                     L(Latent::humid_hour_cos) * hc1[h] +
                                     L(Latent::humid_alpha0);
        const ad::DiffScalar b_raw = L(Latent::humid_month_sin) * ms1[m] +
                                     L(Latent::humid_month_cos) * mc1[m] +
                                     L(Latent::humid_beta0) - a_raw;
        const ad::DiffScalar a = ad::softplus_floor(a_raw, scm::kShapeFloor, scm::kShapeSoftness);
        const ad::DiffScalar b = ad::softplus_floor(b_raw, scm::kShapeFloor, scm::kShapeSoftness);
        const ad::DiffScalar log_beta_fn = ad::lgamma(a) + ad::lgamma(b) - ad::lgamma(a + b);
        beta_terms.push_back((a - 1.0) * st.sum_log_rh + (b - 1.0) * st.sum_log_1m_rh -
                             log_beta_fn * static_cast<double>(st.count));
    }
    loglik = loglik + ad::pairwise_sum(std::move(beta_terms));
    return loglik;
}

double log_likelihood(const Dataset& batch, std::span<const double> naturals,
                      const FixedParams& fixed) {
    if (batch.empty()) {
        throw ValidationError("likelihood needs a non-empty batch");
    }
    if (!(naturals[index_of(Latent::demand_noise_sd)] > 0.0)) {
        throw ValidationError("demand_noise_sd must be positive");
    }
    const BatchFeatures f = build_features(batch, fixed);
    std::vector<std::size_t> indices(batch.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    ad::Tape tape;
    const std::vector<ad::DiffScalar> lat = tape.leaves(naturals);
    return scm_log_likelihood(tape, f, indices, lat, fixed).value();
}

ElboBuild build_elbo(ad::Tape& tape, const PriorSpec& priors, const GuideState& guide,
                     std::span<const double> noise, const LogLikBuilder& loglik) {
    const std::size_t dim = priors.dim();
    if (guide.dim() != dim) {
        throw ValidationError("guide and prior dimensions differ");
    }
    if (noise.size() % dim != 0 || noise.empty()) {
        throw ValidationError("noise must hold n_particles * dim draws");
    }
    const std::size_t particles = noise.size() / dim;

    ElboBuild out;
    out.mean_leaves = tape.leaves(guide.mean);
    out.log_sd_leaves = tape.leaves(guide.log_sd);

    ad::DiffScalar total;
    for (std::size_t p = 0; p < particles; ++p) {
        std::span<const double> eps = noise.subspan(p * dim, dim);

        std::vector<ad::DiffScalar> naturals(dim);
        std::vector<ad::DiffScalar> prior_sq;
        prior_sq.reserve(dim);
        double prior_const = 0.0;
        double entropy_const = 0.0;
        std::vector<ad::DiffScalar> entropy_terms;
        entropy_terms.reserve(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            const PriorEntry& e = priors.entries[i];
            const ad::DiffScalar u =
                out.mean_leaves[i] + ad::exp(out.log_sd_leaves[i]) * eps[i];
            naturals[i] =
                e.family == PriorFamily::log_normal ? ad::exp(u) : u;
            prior_sq.push_back(ad::square((u - e.loc) * (1.0 / e.scale)));
            prior_const += -std::log(e.scale) - kHalfLog2Pi;
            entropy_terms.push_back(out.log_sd_leaves[i]);
            entropy_const += kHalfLog2Pi + 0.5 * eps[i] * eps[i];
        }
        const ad::DiffScalar log_prior_u =
            ad::pairwise_sum(std::move(prior_sq)) * (-0.5) + prior_const;
        const ad::DiffScalar neg_log_q =
            ad::pairwise_sum(std::move(entropy_terms)) + entropy_const;
        const ad::DiffScalar lik = loglik(tape, naturals);
        const ad::DiffScalar particle_elbo = log_prior_u + lik + neg_log_q;
        total = (p == 0) ? particle_elbo : total + particle_elbo;
    }
    out.elbo = (particles > 1) ? total * (1.0 / static_cast<double>(particles)) : total;
    return out;
}

ad::DiffScalar elbo_estimate(ad::Tape& tape, const Dataset& batch, const PriorSpec& priors,
                             const GuideState& guide, Rng& rng, int n_particles,
                             const FixedParams& fixed) {
    if (n_particles < 1) {
        throw ValidationError("n_particles must be >= 1");
    }
    const BatchFeatures features = build_features(batch, fixed);
    std::vector<std::size_t> indices(batch.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    std::vector<double> noise(static_cast<std::size_t>(n_particles) * priors.dim());
    for (double& x : noise) x = rng.normal();

    LogLikBuilder lik;
    if (batch.empty()) {
        lik = [](ad::Tape& t, std::span<const ad::DiffScalar>) { return t.constant(0.0); };
    } else {
        lik = [&](ad::Tape& t, std::span<const ad::DiffScalar> naturals) {
            return scm_log_likelihood(t, features, indices, naturals, fixed);
        };
    }
    const ElboBuild build = build_elbo(tape, priors, guide, noise, lik);
    if (!std::isfinite(build.elbo.value())) {
        std::string dump = "non-finite ELBO at naturals:";
        const auto naturals = naturals_from_unconstrained(guide.mean, priors);
        for (std::size_t i = 0; i < priors.dim(); ++i) {
            dump += " " + priors.entries[i].name + "=" + std::to_string(naturals[i]);
        }
        throw EvaluationError(dump);
    }
    return build.elbo;
}

AdamState AdamState::init(std::size_t dim, double lr) {
    AdamState s;
    s.m.assign(dim, 0.0);
    s.v.assign(dim, 0.0);
    s.lr = lr;
    return s;
}

void adam_step(AdamState& state, std::span<const double> grads, std::span<double> params) {
    if (grads.size() != state.m.size() || params.size() != state.m.size()) {
        throw ValidationError("adam dimensions disagree");
    }
    for (double g : grads) {
        if (!std::isfinite(g)) throw EvaluationError("non-finite gradient in adam_step");
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
}

std::vector<PosteriorSummary> summarize_posterior(const GuideState& guide,
                                                  const PriorSpec& priors) {
    std::vector<PosteriorSummary> out;
    out.reserve(priors.dim());
    for (std::size_t i = 0; i < priors.dim(); ++i) {
        PosteriorSummary s;
        s.name = priors.entries[i].name;
        s.u_mean = guide.mean[i];
        s.u_log_sd = guide.log_sd[i];
        const double sd = std::exp(guide.log_sd[i]);
        if (priors.entries[i].family == PriorFamily::normal) {
            s.mean = guide.mean[i];
            s.sd = sd;
        } else {
            s.mean = std::exp(guide.mean[i] + 0.5 * sd * sd);
            s.sd = s.mean * std::sqrt(std::expm1(sd * sd));
        }
        out.push_back(s);
    }
    return out;
}

TrainReport train(const Dataset& ds, const PriorSpec& priors, const FixedParams& fixed,
                  const TrainConfig& config) {
    if (ds.empty()) {
        throw ValidationError("training needs a non-empty dataset");
    }
    priors.validate_canonical();
    const auto t0 = std::chrono::steady_clock::now();

    const BatchFeatures features = build_features(ds, fixed);
    const std::size_t n = ds.size();
    const std::size_t batch =
        (config.batch_size == 0 || config.batch_size >= n) ? n : config.batch_size;
    const double lik_scale = static_cast<double>(n) / static_cast<double>(batch);
    const std::size_t dim = priors.dim();
    const auto particles = static_cast<std::size_t>(std::max(1, config.n_particles));

    TrainReport report;
    report.seed = config.seed;
    report.config = config;
    report.guide = GuideState::init_from(priors);
    report.elbo_trace.reserve(config.steps);

    std::vector<double> coords(2 * dim);
    std::copy(report.guide.mean.begin(), report.guide.mean.end(), coords.begin());
    std::copy(report.guide.log_sd.begin(), report.guide.log_sd.end(), coords.begin() + dim);
    AdamState adam = AdamState::init(2 * dim, config.lr);

    Rng rng(config.seed);
    std::vector<std::size_t> full(n);
    std::iota(full.begin(), full.end(), std::size_t{0});
    std::vector<std::size_t> scratch;
    std::vector<double> noise(particles * dim);
    std::vector<double> grads(2 * dim);
    ad::Tape tape;
    int consecutive_bad = 0;

    for (std::size_t step = 0; step < config.steps; ++step) {
        std::span<const std::size_t> indices(full);
        if (batch < n) {
            scratch = full;
            for (std::size_t j = 0; j < batch; ++j) {
                const std::size_t k = j + rng.below(n - j);
                std::swap(scratch[j], scratch[k]);
            }
            indices = std::span<const std::size_t>(scratch.data(), batch);
        }
        for (double& x : noise) x = rng.normal();

        std::copy(coords.begin(), coords.begin() + static_cast<std::ptrdiff_t>(dim),
                  report.guide.mean.begin());
        std::copy(coords.begin() + static_cast<std::ptrdiff_t>(dim), coords.end(),
                  report.guide.log_sd.begin());

        tape.clear();
        const ElboBuild build = build_elbo(
            tape, priors, report.guide, noise,
            [&](ad::Tape& t, std::span<const ad::DiffScalar> naturals) {
                ad::DiffScalar lik = scm_log_likelihood(t, features, indices, naturals, fixed);
                return lik_scale != 1.0 ? lik * lik_scale : lik;
            });
        const double elbo = build.elbo.value();
        report.elbo_trace.push_back(elbo);
        report.steps_completed = step + 1;

        if (!std::isfinite(elbo)) {
            if (++consecutive_bad >= 2) {
                report.aborted = true;
                break;
            }
            continue;  // skip the update, keep the last finite parameters
        }
        consecutive_bad = 0;

        const std::vector<double> adj = tape.backward(build.elbo);
        for (std::size_t i = 0; i < dim; ++i) {
            grads[i] = -adj[static_cast<std::size_t>(build.mean_leaves[i].id())];
            grads[dim + i] = -adj[static_cast<std::size_t>(build.log_sd_leaves[i].id())];
        }
        adam_step(adam, grads, coords);
    }

    std::copy(coords.begin(), coords.begin() + static_cast<std::ptrdiff_t>(dim),
              report.guide.mean.begin());
    std::copy(coords.begin() + static_cast<std::ptrdiff_t>(dim), coords.end(),
              report.guide.log_sd.begin());
    report.posterior = summarize_posterior(report.guide, priors);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

Prediction posterior_predict(const GuideState& guide, const PriorSpec& priors,
                             const FixedParams& fixed, const CalendarPoint& cal,
                             const WeatherObservation& weather, int mc_draws,
                             std::uint64_t seed) {
    const auto sigma_idx = index_of(Latent::demand_noise_sd);
    const double s = std::exp(guide.log_sd[sigma_idx]);
    const double sigma_e_mean = std::exp(guide.mean[sigma_idx] + 0.5 * s * s);

    Prediction out;
    if (mc_draws <= 0) {
        const auto naturals = naturals_from_unconstrained(guide.mean, priors);
        out.mean = scm::predict_demand(cal, weather, params_from_naturals(naturals, fixed));
        out.sd = sigma_e_mean;
        return out;
    }

    Rng rng(seed);
    double sum = 0.0, sum_sq = 0.0;
    std::vector<double> u(guide.dim());
    for (int d = 0; d < mc_draws; ++d) {
        for (std::size_t i = 0; i < guide.dim(); ++i) {
            u[i] = guide.mean[i] + std::exp(guide.log_sd[i]) * rng.normal();
        }
        const auto naturals = naturals_from_unconstrained(u, priors);
        const double pred =
            scm::predict_demand(cal, weather, params_from_naturals(naturals, fixed));
        sum += pred;
        sum_sq += pred * pred;
    }
    const double mc_mean = sum / mc_draws;
    const double var_param = std::max(0.0, sum_sq / mc_draws - mc_mean * mc_mean);
    out.mean = mc_mean;
    out.sd = std::sqrt(sigma_e_mean * sigma_e_mean + var_param);
    return out;
}

std::string posterior_to_json(const TrainReport& report, const PriorSpec& priors) {
    nlohmann::json latents;
    const auto summary = summarize_posterior(report.guide, priors);
    for (const auto& s : summary) {
        latents[s.name] = {{"mean", s.mean},
                           {"sd", s.sd},
                           {"u_mean", s.u_mean},
                           {"u_log_sd", s.u_log_sd}};
    }
    nlohmann::json j;
    j["seed"] = report.seed;
    j["steps_completed"] = report.steps_completed;
    j["aborted"] = report.aborted;
    j["config"] = {{"steps", report.config.steps},
                   {"batch_size", report.config.batch_size},
                   {"seed", report.config.seed},
                   {"n_particles", report.config.n_particles},
                   {"lr", report.config.lr}};
    j["latents"] = latents;
    return j.dump(2);
}

GuideState guide_from_posterior_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    const auto& latents = j.at("latents");
    GuideState g;
    g.mean.resize(kNumLatents);
    g.log_sd.resize(kNumLatents);
    for (std::size_t i = 0; i < kNumLatents; ++i) {
        const auto& o = latents.at(registry()[i].name);
        g.mean[i] = o.at("u_mean").get<double>();
        g.log_sd[i] = o.at("u_log_sd").get<double>();
    }
    return g;
}

}  // namespace enercast::svi
