#pragma once

#include "enercast/data.hpp"
#include "enercast/rng.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace enercast::scm {

/// Positivity mapping for the humidity Beta shapes (raw harmonics can dip
/// negative): floor + softness * softplus((x - floor)/softness).
inline constexpr double kShapeFloor = 0.01;
inline constexpr double kShapeSoftness = 0.1;

/// Monthly mean sunrise/sunset in fractional local hours (index 0 = January).
struct SolarTable {
    std::array<double, 12> sunrise{};
    std::array<double, 12> sunset{};

    /// Monthly averages from the standard solar-declination sunrise equation,
    /// expressed on the local civil clock of `tz`.
    static SolarTable for_location(double lat_deg, double lon_deg, const TimezoneRule& tz);

    void validate() const;
    double sunrise_for(int month) const { return sunrise[static_cast<std::size_t>(month - 1)]; }
    double sunset_for(int month) const { return sunset[static_cast<std::size_t>(month - 1)]; }
};

/// Full parameter vector of the generative model. Harmonic coefficient
/// vectors are interleaved [sin_1, cos_1, ..., sin_n, cos_n].
struct ScmParams {
    int harmonic_order = 2;

    // Temperature equation
    std::vector<double> temp_month_harmonics;  // degF per unit harmonic
    std::vector<double> temp_hour_harmonics;
    double rad_to_temp = 0.0;   // degF per W/m^2
    double temp_base = 0.0;     // degF
    double temp_noise_sd = 1.0; // degF

    // Humidity beta-shape equation
    double humid_hour_sin = 0.0;
    double humid_hour_cos = 0.0;
    double humid_month_sin = 0.0;
    double humid_month_cos = 0.0;
    double humid_alpha0 = 1.0;
    double humid_beta0 = 2.0;

    // Radiation equation
    double rad_amp_p = 0.0;  // W/m^2
    double rad_amp_q = 0.0;
    double rad_noise_sd = 1.0;
    SolarTable solar_table;

    // Wind
    double wind_mean = 0.0;  // mph
    double wind_sd = 1.0;

    // Demand equation
    double hvac_slope = 0.0;    // MW per degF
    double demand_base = 0.0;   // MW
    double temp_mid = 56.0;     // degF
    double humid_coeff = 0.0;   // MW per unit R.H.
    double humid_temp_threshold = 70.0;
    double wind_coeff = 0.0;    // MW per mph
    double wind_asymmetry = 1.0;
    double wind_cold_threshold = 30.0;
    double wind_hot_threshold = 75.0;
    std::vector<double> daily_harmonics;   // MW
    std::vector<double> yearly_harmonics;  // MW
    double light_coeff = 0.0;   // MW
    double light_decay = 0.0;   // per W/m^2
    std::uint32_t active_hours = 0;  // bitmask over local hours 0..23
    double demand_noise_sd = 1.0;

    bool hour_active(int hour) const { return (active_hours >> hour) & 1u; }
    void set_active_hours(int first, int last);

    void validate() const;

    /// Simulator world: WAUE-like seasonal/diurnal structure with summer
    /// cooling aligned to the midday activity peak and winter heating
    /// decoupled from it.
    static ScmParams defaults();
};

std::uint32_t hour_mask(int first, int last);

struct DemandBreakdown {
    double base = 0.0;
    double humid = 0.0;
    double wind = 0.0;
    double light = 0.0;
    double daily = 0.0;
    double yearly = 0.0;
    double total = 0.0;
};

struct BetaShapes {
    double alpha = 0.0;
    double beta = 0.0;
};

/// V-shaped comfort transform |t - t_mid|.
double transform_temperature(double temp_f, double temp_mid);

/// Harmonic temperature mean given calendar and radiation.
double temp_mean(const CalendarPoint& cal, double radiation, const ScmParams& params);

/// Beta shapes for humidity; both mapped through a softplus floor so they
/// stay >= 0.01 wherever the raw harmonics dip negative.
BetaShapes humidity_shapes(const CalendarPoint& cal, const ScmParams& params);

/// Daylight-window sinusoidal radiation mean; zero outside the window.
double radiation_mean(const CalendarPoint& cal, const ScmParams& params);

DemandBreakdown demand_components(const CalendarPoint& cal, const WeatherObservation& weather,
                                  const ScmParams& params);

/// Conditional-mean demand given observed covariates.
double predict_demand(const CalendarPoint& cal, const WeatherObservation& weather,
                      const ScmParams& params);

/// Ancestral sample along the DAG: radiation, temperature, humidity, wind,
/// demand. Wind and radiation are truncated at zero after sampling.
HourlyRecord sample_record(const CalendarPoint& cal, const ScmParams& params, Rng& rng);

/// Hourly synthetic dataset starting at `start` (UTC), calendar derived
/// through `tz`.
Dataset simulate_dataset(Instant start, std::size_t hours, const ScmParams& params,
                         const TimezoneRule& tz, Rng& rng);

std::string params_to_json(const ScmParams& params);
ScmParams params_from_json(const std::string& json_text);
void save_params(const ScmParams& params, const std::string& path);
ScmParams load_params(const std::string& path);

}  // namespace enercast::scm
