#include "enercast/calendar.hpp"

#include <cstdio>
#include <cstdlib>

namespace enercast {

namespace {

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

std::int64_t floor_mod(std::int64_t a, std::int64_t b) { return a - floor_div(a, b) * b; }

// 0 = Sunday.
int weekday_of_days(std::int64_t days) { return static_cast<int>(floor_mod(days + 4, 7)); }

// Day-of-month of the n-th (1-based) given weekday in a month.
int nth_weekday_of_month(int year, int month, int weekday, int n) {
    const std::int64_t first = days_from_civil(year, month, 1);
    const int w = weekday_of_days(first);
    int day = 1 + floor_mod(weekday - w, 7);
    return day + 7 * (n - 1);
}

}  // namespace

std::int64_t days_from_civil(int y, int m, int d) {
    // Howard Hinnant's civil-days algorithm.
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

CivilDate civil_from_days(std::int64_t z) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp + (mp < 10 ? 3 : -9);
    return CivilDate{static_cast<int>(y + (m <= 2)), static_cast<int>(m), static_cast<int>(d)};
}

Instant instant_from_civil(const CivilTime& ct) {
    return days_from_civil(ct.date.year, ct.date.month, ct.date.day) * kSecondsPerDay +
           ct.hour * 3600 + ct.minute * 60 + ct.second;
}

CivilTime civil_from_instant(Instant t) {
    const std::int64_t days = floor_div(t, kSecondsPerDay);
    const std::int64_t sod = floor_mod(t, kSecondsPerDay);
    CivilTime ct;
    ct.date = civil_from_days(days);
    ct.hour = static_cast<int>(sod / 3600);
    ct.minute = static_cast<int>((sod % 3600) / 60);
    ct.second = static_cast<int>(sod % 60);
    return ct;
}

bool TimezoneRule::in_dst(Instant t) const {
    if (!us_dst) return false;
    // Work in local standard time so the 02:00 boundaries are the statutory ones.
    const Instant std_local = t + 60 * static_cast<Instant>(standard_offset_minutes);
    const int year = civil_from_instant(std_local).date.year;
    const int mar_day = nth_weekday_of_month(year, 3, 0, 2);
    const int nov_day = nth_weekday_of_month(year, 11, 0, 1);
    const Instant dst_start = days_from_civil(year, 3, mar_day) * kSecondsPerDay + 2 * 3600;
    // DST ends 02:00 daylight = 01:00 standard.
    const Instant dst_end = days_from_civil(year, 11, nov_day) * kSecondsPerDay + 1 * 3600;
    return std_local >= dst_start && std_local < dst_end;
}

int TimezoneRule::offset_minutes_at(Instant t) const {
    return standard_offset_minutes + (in_dst(t) ? 60 : 0);
}

std::optional<Instant> parse_timestamp(const std::string& text) {
    // Accepted: 2023-09-01, 2023-09-01T05:00, 2023-09-01 05:00:00Z, ...+06:00
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    const char* p = text.c_str();
    char* end = nullptr;

    auto read_int = [&](int width, int& out) -> bool {
        out = static_cast<int>(std::strtol(p, &end, 10));
        if (end - p != width) return false;
        p = end;
        return true;
    };
    auto expect = [&](char c) -> bool {
        if (*p != c) return false;
        ++p;
        return true;
    };

    if (!read_int(4, y) || !expect('-') || !read_int(2, mo) || !expect('-') || !read_int(2, d)) {
        return std::nullopt;
    }
    if (mo < 1 || mo > 12 || d < 1 || d > 31) return std::nullopt;
    if (*p == 'T' || *p == ' ') {
        ++p;
        if (!read_int(2, h) || !expect(':') || !read_int(2, mi)) return std::nullopt;
        if (*p == ':') {
            ++p;
            if (!read_int(2, s)) return std::nullopt;
        }
        if (h > 23 || mi > 59 || s > 60) return std::nullopt;
    }
    Instant t = days_from_civil(y, mo, d) * kSecondsPerDay + h * 3600 + mi * 60 + s;
    if (*p == 'Z') {
        ++p;
    } else if (*p == '+' || *p == '-') {
        const int sign = (*p == '+') ? 1 : -1;
        ++p;
        int oh = 0, om = 0;
        if (!read_int(2, oh) || !expect(':') || !read_int(2, om)) return std::nullopt;
        t -= sign * (oh * 3600 + om * 60);
    }
    if (*p != '\0') return std::nullopt;
    return t;
}

std::string format_timestamp(Instant t) {
    const CivilTime ct = civil_from_instant(t);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", ct.date.year, ct.date.month,
                  ct.date.day, ct.hour, ct.minute, ct.second);
    return buf;
}

}  // namespace enercast
