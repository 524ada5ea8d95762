#pragma once

#include "enercast/calendar.hpp"

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace enercast {

struct CalendarPoint {
    int hour = 0;   // 0..23, local civil time
    int month = 1;  // 1..12
};

struct WeatherObservation {
    double temperature = 0.0;  // degrees Fahrenheit
    double humidity = 0.0;     // relative humidity, fraction in [0, 1]
    double wind_speed = 0.0;   // mph, >= 0
    double radiation = 0.0;    // shortwave solar radiation, W/m^2, >= 0
};

struct HourlyRecord {
    Instant timestamp = 0;  // UTC, hour-aligned
    CalendarPoint calendar;
    WeatherObservation weather;
    double demand = 0.0;  // MW, > 0
};

/// Ordered hourly records; timestamps strictly increasing, no duplicates.
struct Dataset {
    std::vector<HourlyRecord> records;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }

    /// Throws ValidationError if the ordering invariant is broken.
    void validate() const;
};

/// Time-indexed weather table keyed by UTC hour.
using WeatherTable = std::map<Instant, WeatherObservation>;

struct ConvertedUnits {
    double temp_f = 0.0;
    double wind_mph = 0.0;
    double rh_frac = 0.0;
};

/// Source-unit conversion: degC -> degF, km/h -> mph, percent -> fraction.
/// Humidity outside [0, 100] is a ValidationError.
ConvertedUnits convert_units(double raw_temp_c, double raw_wind_kmh, double raw_rh_pct);

/// Source CSV column names; overridable via a JSON mapping file.
struct ColumnMap {
    std::string load_time = "timestamp";
    std::string load_mw = "MW";
    std::string weather_time = "time";
    std::string weather_temp_c = "temperature_2m";
    std::string weather_rh_pct = "relative_humidity_2m";
    std::string weather_wind_kmh = "wind_speed_10m";
    std::string weather_rad_wm2 = "shortwave_radiation";

    static ColumnMap from_json_file(const std::string& path);
};

struct IngestMeta {
    std::size_t rows = 0;
    std::size_t sort_warnings = 0;   // out-of-order rows repaired by sorting
    std::size_t dropped_load = 0;    // load hours without weather
    std::size_t dropped_weather = 0; // weather hours without load
};

/// Load CSV -> demand-only Dataset (weather zeroed). Timestamps are truncated
/// to the UTC hour; calendar fields derive from `tz`.
Dataset ingest_load_csv(const std::string& path, const TimezoneRule& tz, IngestMeta& meta,
                        const ColumnMap& cols = {});

/// Weather CSV in source units -> converted, hour-keyed table.
WeatherTable ingest_weather_csv(const std::string& path, IngestMeta& meta,
                                const ColumnMap& cols = {});

/// Inner join on UTC hour; non-matching hours on either side are dropped and
/// counted. Empty intersection is an error.
Dataset join_hourly(const Dataset& load, const WeatherTable& weather, IngestMeta& meta);

/// Records with start <= timestamp < end, order preserved.
Dataset split_by_range(const Dataset& ds, Instant start, Instant end);

/// Canonical interchange schema:
///   timestamp_utc,hour,month,temp_f,rh_frac,wind_mph,rad_wm2,demand_mw
void write_canonical_csv(const Dataset& ds, const std::string& path);
Dataset read_canonical_csv(const std::string& path);

CalendarPoint calendar_from_timestamp(Instant t, const TimezoneRule& tz);

}  // namespace enercast
