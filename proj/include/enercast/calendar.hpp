#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace enercast {

/// UTC instant as seconds since the Unix epoch, always truncated to the hour
/// by the ingestion layer.
using Instant = std::int64_t;

inline constexpr Instant kSecondsPerHour = 3600;
inline constexpr Instant kSecondsPerDay = 86400;

struct CivilDate {
    int year = 1970;
    int month = 1;  // 1..12
    int day = 1;    // 1..31
};

struct CivilTime {
    CivilDate date;
    int hour = 0;
    int minute = 0;
    int second = 0;
};

/// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(int year, int month, int day);
CivilDate civil_from_days(std::int64_t days);

Instant instant_from_civil(const CivilTime& ct);
CivilTime civil_from_instant(Instant t);

/// Maps UTC instants to the local civil clock used for hour-of-day and
/// month-of-year. A fixed standard offset plus an optional US/Canada
/// daylight-saving rule (second Sunday of March 02:00 to first Sunday of
/// November 02:00, +1h). Default is US Central, the WAUE region clock.
struct TimezoneRule {
    int standard_offset_minutes = -360;
    bool us_dst = true;

    static TimezoneRule utc() { return TimezoneRule{0, false}; }
    static TimezoneRule us_central() { return TimezoneRule{-360, true}; }

    /// Total offset (minutes to add to UTC) in effect at UTC instant `t`.
    int offset_minutes_at(Instant t) const;
    Instant to_local(Instant t) const { return t + 60 * static_cast<Instant>(offset_minutes_at(t)); }
    bool in_dst(Instant t) const;
};

/// Parses "YYYY-MM-DD[T HH:MM[:SS]][Z|+HH:MM|-HH:MM]"; a missing zone means UTC.
std::optional<Instant> parse_timestamp(const std::string& text);

/// RFC-3339 with Z suffix, second resolution.
std::string format_timestamp(Instant t);

}  // namespace enercast
