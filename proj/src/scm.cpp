#include "enercast/scm.hpp"

#include "enercast/autodiff.hpp"
#include "enercast/errors.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

namespace enercast::scm {

namespace {

constexpr double kPi = 3.14159265358979323846;

double harmonic_series(const std::vector<double>& coefs, double angle_unit) {
    // coefs interleaved [sin_1, cos_1, sin_2, cos_2, ...]; angle_unit is the
    // first-harmonic angle (2*pi*H/24 or 2*pi*M/12).
    double acc = 0.0;
    const std::size_t n = coefs.size() / 2;
    for (std::size_t j = 1; j <= n; ++j) {
        const double a = angle_unit * static_cast<double>(j);
        acc += coefs[2 * (j - 1)] * std::sin(a) + coefs[2 * (j - 1) + 1] * std::cos(a);
    }
    return acc;
}

int days_in_month(int month) {
    static const int d[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    return d[month - 1];
}

}  // namespace

std::uint32_t hour_mask(int first, int last) {
    std::uint32_t mask = 0;
    for (int h = first; h <= last; ++h) mask |= (1u << h);
    return mask;
}

void ScmParams::set_active_hours(int first, int last) { active_hours = hour_mask(first, last); }

SolarTable SolarTable::for_location(double lat_deg, double lon_deg, const TimezoneRule& tz) {
    SolarTable table;
    const double lat = lat_deg * kPi / 180.0;
    int day_of_year = 0;
    for (int m = 1; m <= 12; ++m) {
        const int ndays = days_in_month(m);
        // Clock offset for this month from a mid-month noon instant.
        const Instant mid = (days_from_civil(2024, m, 15)) * kSecondsPerDay + 18 * 3600;
        const double clock_shift = tz.offset_minutes_at(mid) / 60.0 - tz.standard_offset_minutes / 60.0;
        const double tz_meridian = 15.0 * (tz.standard_offset_minutes / 60.0);
        const double solar_noon = 12.0 - (lon_deg - tz_meridian) / 15.0 + clock_shift;

        double rise_sum = 0.0, set_sum = 0.0;
        for (int d = 1; d <= ndays; ++d) {
            const int n = day_of_year + d;
            const double decl = -23.44 * kPi / 180.0 * std::cos(2.0 * kPi * (n + 10) / 365.0);
            double c = -std::tan(lat) * std::tan(decl);
            c = std::min(1.0, std::max(-1.0, c));
            const double half_width_hours = std::acos(c) * 180.0 / kPi / 15.0;
            rise_sum += solar_noon - half_width_hours;
            set_sum += solar_noon + half_width_hours;
        }
        day_of_year += ndays;
        table.sunrise[static_cast<std::size_t>(m - 1)] = rise_sum / ndays;
        table.sunset[static_cast<std::size_t>(m - 1)] = set_sum / ndays;
    }
    return table;
}

void SolarTable::validate() const {
    for (int m = 1; m <= 12; ++m) {
        const double r = sunrise_for(m);
        const double s = sunset_for(m);
        if (!(0.0 <= r && r < s && s <= 24.0)) {
            throw ValidationError("solar table invalid for month " + std::to_string(m));
        }
    }
}

void ScmParams::validate() const {
    std::vector<std::string> issues;
    if (!(temp_noise_sd > 0.0)) issues.push_back("temp_noise_sd must be > 0");
    if (!(rad_noise_sd > 0.0)) issues.push_back("rad_noise_sd must be > 0");
    if (!(wind_sd > 0.0)) issues.push_back("wind_sd must be > 0");
    if (!(demand_noise_sd > 0.0)) issues.push_back("demand_noise_sd must be > 0");
    if (!(wind_asymmetry > 0.0)) issues.push_back("wind_asymmetry must be > 0");
    if (!(wind_cold_threshold < wind_hot_threshold)) {
        issues.push_back("wind_cold_threshold must be below wind_hot_threshold");
    }
    if (harmonic_order < 1) issues.push_back("harmonic_order must be >= 1");
    const auto expect_len = static_cast<std::size_t>(2 * harmonic_order);
    if (temp_month_harmonics.size() != expect_len) issues.push_back("temp_month_harmonics length");
    if (temp_hour_harmonics.size() != expect_len) issues.push_back("temp_hour_harmonics length");
    if (daily_harmonics.size() != expect_len) issues.push_back("daily_harmonics length");
    if (yearly_harmonics.size() != expect_len) issues.push_back("yearly_harmonics length");
    if (!issues.empty()) throw ConfigError(std::move(issues));
    solar_table.validate();
}

ScmParams ScmParams::defaults() {
    ScmParams p;
    p.harmonic_order = 2;
    // Yearly temperature cycle peaking in July, daily cycle peaking at 15h.
    p.temp_month_harmonics = {-12.0, -20.8, 0.0, -2.0};
    p.temp_hour_harmonics = {-7.78, -7.78, 0.8, 0.5};
    p.rad_to_temp = 0.012;
    p.temp_base = 48.0;
    p.temp_noise_sd = 4.0;

    p.humid_hour_sin = 0.5;
    p.humid_hour_cos = -0.7;
    p.humid_month_sin = 0.3;
    p.humid_month_cos = -0.3;
    p.humid_alpha0 = 5.1;
    p.humid_beta0 = 7.6;

    p.rad_amp_p = 500.0;
    p.rad_amp_q = 300.0;
    p.rad_noise_sd = 167.0;
    p.solar_table = SolarTable::for_location(44.6321, -100.2753, TimezoneRule::us_central());

    p.wind_mean = 16.0;
    p.wind_sd = 8.0;

    p.hvac_slope = 20.0;
    p.demand_base = 3485.0;
    p.temp_mid = 56.0;
    p.humid_coeff = 300.0;
    p.humid_temp_threshold = 70.0;
    p.wind_coeff = 5.0;
    p.wind_asymmetry = 1.0;
    p.wind_cold_threshold = 30.0;
    p.wind_hot_threshold = 75.0;
    // Activity cycle peaking at 14h local.
    p.daily_harmonics = {-125.0, -216.5, 30.0, 10.0};
    p.yearly_harmonics = {-15.0, 110.0, 55.0, 45.0};
    p.light_coeff = 100.0;
    p.light_decay = 0.005;
    p.set_active_hours(5, 23);
    p.demand_noise_sd = 100.0;
    return p;
}

double transform_temperature(double temp_f, double temp_mid) {
    return std::abs(temp_f - temp_mid);
}

double temp_mean(const CalendarPoint& cal, double radiation, const ScmParams& params) {
    const double month_angle = 2.0 * kPi * cal.month / 12.0;
    const double hour_angle = 2.0 * kPi * cal.hour / 24.0;
    return harmonic_series(params.temp_month_harmonics, month_angle) +
           harmonic_series(params.temp_hour_harmonics, hour_angle) +
           params.rad_to_temp * radiation + params.temp_base;
}

BetaShapes humidity_shapes(const CalendarPoint& cal, const ScmParams& params) {
    const double ha = kPi * cal.hour / 12.0;
    const double ma = kPi * cal.month / 6.0;
    const double a_raw = params.humid_hour_sin * std::sin(ha) +
                         params.humid_hour_cos * std::cos(ha) + params.humid_alpha0;
    const double b_raw = params.humid_month_sin * std::sin(ma) +
                         params.humid_month_cos * std::cos(ma) + params.humid_beta0 - a_raw;
    return BetaShapes{ad::softplus_floor_value(a_raw, kShapeFloor, kShapeSoftness),
                      ad::softplus_floor_value(b_raw, kShapeFloor, kShapeSoftness)};
}

double radiation_mean(const CalendarPoint& cal, const ScmParams& params) {
    const double rise = params.solar_table.sunrise_for(cal.month);
    const double set = params.solar_table.sunset_for(cal.month);
    const double h = cal.hour;
    if (h < rise || h > set) return 0.0;
    const double amplitude = params.rad_amp_p * std::sin(kPi * cal.month / 12.0) + params.rad_amp_q;
    return amplitude * std::sin(kPi * (h - rise) / (set - rise));
}

DemandBreakdown demand_components(const CalendarPoint& cal, const WeatherObservation& weather,
                                  const ScmParams& params) {
    DemandBreakdown b;
    const double t = weather.temperature;
    b.base = params.hvac_slope * transform_temperature(t, params.temp_mid) + params.demand_base;
    b.humid = (t > params.humid_temp_threshold) ? params.humid_coeff * weather.humidity : 0.0;
    b.wind = 0.0;
    if (t < params.wind_cold_threshold) b.wind += params.wind_coeff * weather.wind_speed;
    if (t > params.wind_hot_threshold) {
        b.wind -= params.wind_asymmetry * params.wind_coeff * weather.wind_speed;
    }
    b.daily = harmonic_series(params.daily_harmonics, 2.0 * kPi * cal.hour / 24.0);
    b.yearly = harmonic_series(params.yearly_harmonics, 2.0 * kPi * cal.month / 12.0);
    b.light = params.hour_active(cal.hour)
                  ? params.light_coeff * std::exp(-params.light_decay * weather.radiation)
                  : 0.0;
    b.total = b.base + b.humid + b.wind + b.light + b.daily + b.yearly;
    return b;
}

double predict_demand(const CalendarPoint& cal, const WeatherObservation& weather,
                      const ScmParams& params) {
    return demand_components(cal, weather, params).total;
}

HourlyRecord sample_record(const CalendarPoint& cal, const ScmParams& params, Rng& rng) {
    HourlyRecord rec;
    rec.calendar = cal;
    const double rad = rng.normal(radiation_mean(cal, params), params.rad_noise_sd);
    rec.weather.radiation = std::max(0.0, rad);
    rec.weather.temperature =
        rng.normal(temp_mean(cal, rec.weather.radiation, params), params.temp_noise_sd);
    const BetaShapes shapes = humidity_shapes(cal, params);
    rec.weather.humidity = rng.beta(shapes.alpha, shapes.beta);
    rec.weather.wind_speed = std::max(0.0, rng.normal(params.wind_mean, params.wind_sd));
    rec.demand = rng.normal(demand_components(cal, rec.weather, params).total,
                            params.demand_noise_sd);
    return rec;
}

Dataset simulate_dataset(Instant start, std::size_t hours, const ScmParams& params,
                         const TimezoneRule& tz, Rng& rng) {
    Dataset ds;
    ds.records.reserve(hours);
    for (std::size_t i = 0; i < hours; ++i) {
        const Instant ts = start + static_cast<Instant>(i) * kSecondsPerHour;
        HourlyRecord rec = sample_record(calendar_from_timestamp(ts, tz), params, rng);
        rec.timestamp = ts;
        ds.records.push_back(rec);
    }
    return ds;
}

std::string params_to_json(const ScmParams& p) {
    nlohmann::json j;
    j["harmonic_order"] = p.harmonic_order;
    j["temp_month_harmonics"] = p.temp_month_harmonics;
    j["temp_hour_harmonics"] = p.temp_hour_harmonics;
    j["rad_to_temp"] = p.rad_to_temp;
    j["temp_base"] = p.temp_base;
    j["temp_noise_sd"] = p.temp_noise_sd;
    j["humid_hour"] = {p.humid_hour_sin, p.humid_hour_cos};
    j["humid_month"] = {p.humid_month_sin, p.humid_month_cos};
    j["humid_offsets"] = {p.humid_alpha0, p.humid_beta0};
    j["rad_amp"] = {p.rad_amp_p, p.rad_amp_q};
    j["rad_noise_sd"] = p.rad_noise_sd;
    j["solar_table"] = {{"sunrise", p.solar_table.sunrise}, {"sunset", p.solar_table.sunset}};
    j["wind_mean"] = p.wind_mean;
    j["wind_sd"] = p.wind_sd;
    j["hvac_slope"] = p.hvac_slope;
    j["demand_base"] = p.demand_base;
    j["temp_mid"] = p.temp_mid;
    j["humid_coeff"] = p.humid_coeff;
    j["humid_temp_threshold"] = p.humid_temp_threshold;
    j["wind_coeff"] = p.wind_coeff;
    j["wind_asymmetry"] = p.wind_asymmetry;
    j["wind_cold_threshold"] = p.wind_cold_threshold;
    j["wind_hot_threshold"] = p.wind_hot_threshold;
    j["daily_harmonics"] = p.daily_harmonics;
    j["yearly_harmonics"] = p.yearly_harmonics;
    j["light_coeff"] = p.light_coeff;
    j["light_decay"] = p.light_decay;
    std::vector<int> hours;
    for (int h = 0; h < 24; ++h) {
        if (p.hour_active(h)) hours.push_back(h);
    }
    j["active_hours"] = hours;
    j["demand_noise_sd"] = p.demand_noise_sd;
    return j.dump(2);
}

ScmParams params_from_json(const std::string& json_text) {
    const nlohmann::json j = nlohmann::json::parse(json_text);
    ScmParams p;
    p.harmonic_order = j.at("harmonic_order").get<int>();
    p.temp_month_harmonics = j.at("temp_month_harmonics").get<std::vector<double>>();
    p.temp_hour_harmonics = j.at("temp_hour_harmonics").get<std::vector<double>>();
    p.rad_to_temp = j.at("rad_to_temp").get<double>();
    p.temp_base = j.at("temp_base").get<double>();
    p.temp_noise_sd = j.at("temp_noise_sd").get<double>();
    p.humid_hour_sin = j.at("humid_hour").at(0).get<double>();
    p.humid_hour_cos = j.at("humid_hour").at(1).get<double>();
    p.humid_month_sin = j.at("humid_month").at(0).get<double>();
    p.humid_month_cos = j.at("humid_month").at(1).get<double>();
    p.humid_alpha0 = j.at("humid_offsets").at(0).get<double>();
    p.humid_beta0 = j.at("humid_offsets").at(1).get<double>();
    p.rad_amp_p = j.at("rad_amp").at(0).get<double>();
    p.rad_amp_q = j.at("rad_amp").at(1).get<double>();
    p.rad_noise_sd = j.at("rad_noise_sd").get<double>();
    p.solar_table.sunrise = j.at("solar_table").at("sunrise").get<std::array<double, 12>>();
    p.solar_table.sunset = j.at("solar_table").at("sunset").get<std::array<double, 12>>();
    p.wind_mean = j.at("wind_mean").get<double>();
    p.wind_sd = j.at("wind_sd").get<double>();
    p.hvac_slope = j.at("hvac_slope").get<double>();
    p.demand_base = j.at("demand_base").get<double>();
    p.temp_mid = j.at("temp_mid").get<double>();
    p.humid_coeff = j.at("humid_coeff").get<double>();
    p.humid_temp_threshold = j.at("humid_temp_threshold").get<double>();
    p.wind_coeff = j.at("wind_coeff").get<double>();
    p.wind_asymmetry = j.at("wind_asymmetry").get<double>();
    p.wind_cold_threshold = j.at("wind_cold_threshold").get<double>();
    p.wind_hot_threshold = j.at("wind_hot_threshold").get<double>();
    p.daily_harmonics = j.at("daily_harmonics").get<std::vector<double>>();
    p.yearly_harmonics = j.at("yearly_harmonics").get<std::vector<double>>();
    p.light_coeff = j.at("light_coeff").get<double>();
    p.light_decay = j.at("light_decay").get<double>();
    p.active_hours = 0;
    for (int h : j.at("active_hours").get<std::vector<int>>()) {
        p.active_hours |= (1u << h);
    }
    p.demand_noise_sd = j.at("demand_noise_sd").get<double>();
    p.validate();
    return p;
}

void save_params(const ScmParams& params, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    out << params_to_json(params) << '\n';
}

ScmParams load_params(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open params file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return params_from_json(text);
}

}  // namespace enercast::scm
