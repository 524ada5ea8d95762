#pragma once

// Synthetic-world generators shared by the analysis, evaluation and
// acceptance suites.

#include "enercast/calendar.hpp"
#include "enercast/data.hpp"
#include "enercast/rng.hpp"
#include "enercast/scm.hpp"

namespace enercast::testgen {

/// Hour-confounded world: temperature follows the daily cycle that also
/// drives activity demand, so a regression of demand on |T - 56| alone
/// inherits omitted-variable bias. True temperature coefficient = `lambda`.
inline scm::ScmParams confounded_params(double lambda = 25.0) {
    scm::ScmParams p = scm::ScmParams::defaults();
    p.temp_month_harmonics = {0.0, 0.0, 0.0, 0.0};
    p.temp_hour_harmonics = {0.0, -10.0, 0.0, 0.0};  // T = 70 - 10 cos(2 pi H/24) + noise
    p.rad_to_temp = 0.0;
    p.temp_base = 70.0;
    p.temp_noise_sd = 4.0;
    p.hvac_slope = lambda;
    p.demand_base = 1200.0;
    p.daily_harmonics = {0.0, -200.0, 0.0, 0.0};  // activity peaks with temperature
    p.yearly_harmonics = {0.0, 0.0, 0.0, 0.0};
    p.humid_coeff = 0.0;
    p.wind_coeff = 0.0;
    p.light_coeff = 0.0;
    p.demand_noise_sd = 40.0;
    return p;
}

/// Same world with the hour -> temperature edge removed.
inline scm::ScmParams unconfounded_params(double lambda = 25.0) {
    scm::ScmParams p = confounded_params(lambda);
    p.temp_hour_harmonics = {0.0, 0.0, 0.0, 0.0};
    return p;
}

/// Records pinned to one calendar month, hours cycling 0..23.
inline Dataset sample_fixed_month(const scm::ScmParams& params, int month, std::size_t n,
                                  std::uint64_t seed) {
    Rng rng(seed);
    Dataset ds;
    ds.records.reserve(n);
    const Instant start = *parse_timestamp("2024-07-01T00:00:00Z");
    for (std::size_t i = 0; i < n; ++i) {
        HourlyRecord rec =
            scm::sample_record(CalendarPoint{static_cast<int>(i % 24), month}, params, rng);
        rec.timestamp = start + static_cast<Instant>(i) * kSecondsPerHour;
        ds.records.push_back(rec);
    }
    return ds;
}

/// A year of the default simulator world.
inline Dataset sample_default_year(std::uint64_t seed,
                                   const scm::ScmParams& params = scm::ScmParams::defaults(),
                                   std::size_t hours = 8760) {
    Rng rng(seed);
    const Instant start = *parse_timestamp("2024-01-01T00:00:00Z");
    return scm::simulate_dataset(start, hours, params, TimezoneRule::us_central(), rng);
}

}  // namespace enercast::testgen
