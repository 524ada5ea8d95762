#include "enercast/data.hpp"

#include "enercast/csv.hpp"
#include "enercast/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

namespace enercast {

namespace {

double parse_double(const std::string& s, std::size_t line_no, const std::string& what) {
    const std::string t = csv::trim(s);
    double v = 0.0;
    const char* begin = t.c_str();
    const char* end = begin + t.size();
    auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc{} || res.ptr != end) {
        throw ValidationError("line " + std::to_string(line_no) + ": cannot parse " + what +
                              " value '" + s + "'");
    }
    return v;
}

Instant parse_hour_timestamp(const std::string& s, std::size_t line_no) {
    auto t = parse_timestamp(csv::trim(s));
    if (!t) {
        throw ValidationError("line " + std::to_string(line_no) + ": cannot parse timestamp '" +
                              s + "'");
    }
    // Normalize to the enclosing hour boundary.
    Instant v = *t;
    return v - ((v % kSecondsPerHour) + kSecondsPerHour) % kSecondsPerHour;
}

int require_column(const csv::Table& t, const std::string& name, const std::string& path) {
    const int idx = t.find(name);
    if (idx < 0) {
        throw ValidationError("missing column '" + name + "' in " + path);
    }
    return idx;
}

}  // namespace

void Dataset::validate() const {
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].timestamp == records[i - 1].timestamp) {
            throw ValidationError("duplicate timestamp " + format_timestamp(records[i].timestamp));
        }
        if (records[i].timestamp < records[i - 1].timestamp) {
            throw ValidationError("timestamps not increasing at " +
                                  format_timestamp(records[i].timestamp));
        }
    }
}

ConvertedUnits convert_units(double raw_temp_c, double raw_wind_kmh, double raw_rh_pct) {
    if (raw_rh_pct < 0.0 || raw_rh_pct > 100.0) {
        throw ValidationError("relative humidity out of [0, 100]: " + std::to_string(raw_rh_pct));
    }
    ConvertedUnits u;
    u.temp_f = raw_temp_c * 9.0 / 5.0 + 32.0;
    u.wind_mph = raw_wind_kmh / 1.609344;
    u.rh_frac = raw_rh_pct / 100.0;
    return u;
}

CalendarPoint calendar_from_timestamp(Instant t, const TimezoneRule& tz) {
    const Instant local = tz.to_local(t);
    const CivilTime ct = civil_from_instant(local);
    return CalendarPoint{ct.hour, ct.date.month};
}

ColumnMap ColumnMap::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open column mapping file: " + path);
    }
    nlohmann::json j = nlohmann::json::parse(in);
    ColumnMap m;
    auto pick = [&](const char* key, std::string& out) {
        if (j.contains(key)) out = j.at(key).get<std::string>();
    };
    pick("load_time", m.load_time);
    pick("load_mw", m.load_mw);
    pick("weather_time", m.weather_time);
    pick("weather_temp_c", m.weather_temp_c);
    pick("weather_rh_pct", m.weather_rh_pct);
    pick("weather_wind_kmh", m.weather_wind_kmh);
    pick("weather_rad_wm2", m.weather_rad_wm2);
    return m;
}

Dataset ingest_load_csv(const std::string& path, const TimezoneRule& tz, IngestMeta& meta,
                        const ColumnMap& cols) {
    const csv::Table t = csv::read_file(path);
    const int c_time = require_column(t, cols.load_time, path);
    const int c_mw = require_column(t, cols.load_mw, path);

    Dataset ds;
    ds.records.reserve(t.rows.size());
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const std::size_t line_no = i + 2;  // header is line 1
        const auto& row = t.rows[i];
        if (static_cast<int>(row.size()) <= std::max(c_time, c_mw)) {
            throw ValidationError("line " + std::to_string(line_no) + ": too few columns");
        }
        HourlyRecord r;
        r.timestamp = parse_hour_timestamp(row[c_time], line_no);
        r.demand = parse_double(row[c_mw], line_no, "load");
        if (!(r.demand > 0.0)) {
            throw ValidationError("line " + std::to_string(line_no) +
                                  ": demand must be positive, got " + row[c_mw]);
        }
        r.calendar = calendar_from_timestamp(r.timestamp, tz);
        ds.records.push_back(r);
    }

    for (std::size_t i = 1; i < ds.records.size(); ++i) {
        if (ds.records[i].timestamp < ds.records[i - 1].timestamp) ++meta.sort_warnings;
    }
    if (meta.sort_warnings > 0) {
        std::stable_sort(ds.records.begin(), ds.records.end(),
                         [](const HourlyRecord& a, const HourlyRecord& b) {
                             return a.timestamp < b.timestamp;
                         });
    }
    ds.validate();  // rejects duplicates
    meta.rows += ds.records.size();
    return ds;
}

WeatherTable ingest_weather_csv(const std::string& path, IngestMeta& meta, const ColumnMap& cols) {
    const csv::Table t = csv::read_file(path);
    const int c_time = require_column(t, cols.weather_time, path);
    const int c_temp = require_column(t, cols.weather_temp_c, path);
    const int c_rh = require_column(t, cols.weather_rh_pct, path);
    const int c_wind = require_column(t, cols.weather_wind_kmh, path);
    const int c_rad = require_column(t, cols.weather_rad_wm2, path);

    WeatherTable table;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const std::size_t line_no = i + 2;
        const auto& row = t.rows[i];
        const int needed = std::max({c_time, c_temp, c_rh, c_wind, c_rad});
        if (static_cast<int>(row.size()) <= needed) {
            throw ValidationError("line " + std::to_string(line_no) + ": too few columns");
        }
        const Instant ts = parse_hour_timestamp(row[c_time], line_no);
        const double temp_c = parse_double(row[c_temp], line_no, "temperature");
        const double rh_pct = parse_double(row[c_rh], line_no, "humidity");
        const double wind_kmh = parse_double(row[c_wind], line_no, "wind speed");
        const double rad = parse_double(row[c_rad], line_no, "radiation");
        ConvertedUnits u;
        try {
            u = convert_units(temp_c, wind_kmh, rh_pct);
        } catch (const ValidationError& e) {
            throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (wind_kmh < 0.0) {
            throw ValidationError("line " + std::to_string(line_no) + ": negative wind speed");
        }
        if (rad < 0.0) {
            throw ValidationError("line " + std::to_string(line_no) + ": negative radiation");
        }
        if (table.count(ts)) {
            throw ValidationError("duplicate weather timestamp " + format_timestamp(ts));
        }
        table[ts] = WeatherObservation{u.temp_f, u.rh_frac, u.wind_mph, rad};
    }
    meta.rows += table.size();
    return table;
}

Dataset join_hourly(const Dataset& load, const WeatherTable& weather, IngestMeta& meta) {
    Dataset out;
    out.records.reserve(load.size());
    for (const auto& r : load.records) {
        auto it = weather.find(r.timestamp);
        if (it == weather.end()) {
            ++meta.dropped_load;
            continue;
        }
        HourlyRecord j = r;
        j.weather = it->second;
        out.records.push_back(j);
    }
    meta.dropped_weather += weather.size() - out.size();
    if (out.empty()) {
        throw ValidationError("load and weather share no timestamps");
    }
    return out;
}

Dataset split_by_range(const Dataset& ds, Instant start, Instant end) {
    if (!(start < end)) {
        throw ValidationError("split range start must precede end");
    }
    Dataset out;
    for (const auto& r : ds.records) {
        if (r.timestamp >= start && r.timestamp < end) out.records.push_back(r);
    }
    return out;
}

void write_canonical_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw ValidationError("cannot open for writing: " + path);
    }
    out << "timestamp_utc,hour,month,temp_f,rh_frac,wind_mph,rad_wm2,demand_mw\n";
    for (const auto& r : ds.records) {
        out << format_timestamp(r.timestamp) << ',' << r.calendar.hour << ',' << r.calendar.month
            << ',' << csv::format_double(r.weather.temperature) << ','
            << csv::format_double(r.weather.humidity) << ','
            << csv::format_double(r.weather.wind_speed) << ','
            << csv::format_double(r.weather.radiation) << ','
            << csv::format_double(r.demand) << '\n';
    }
}

Dataset read_canonical_csv(const std::string& path) {
    const csv::Table t = csv::read_file(path);
    const char* names[] = {"timestamp_utc", "hour",     "month",   "temp_f",
                           "rh_frac",       "wind_mph", "rad_wm2", "demand_mw"};
    int idx[8];
    for (int i = 0; i < 8; ++i) idx[i] = require_column(t, names[i], path);

    Dataset ds;
    ds.records.reserve(t.rows.size());
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const std::size_t line_no = i + 2;
        const auto& row = t.rows[i];
        HourlyRecord r;
        r.timestamp = parse_hour_timestamp(row[idx[0]], line_no);
        r.calendar.hour = static_cast<int>(parse_double(row[idx[1]], line_no, "hour"));
        r.calendar.month = static_cast<int>(parse_double(row[idx[2]], line_no, "month"));
        r.weather.temperature = parse_double(row[idx[3]], line_no, "temp_f");
        r.weather.humidity = parse_double(row[idx[4]], line_no, "rh_frac");
        r.weather.wind_speed = parse_double(row[idx[5]], line_no, "wind_mph");
        r.weather.radiation = parse_double(row[idx[6]], line_no, "rad_wm2");
        r.demand = parse_double(row[idx[7]], line_no, "demand_mw");
        if (r.calendar.hour < 0 || r.calendar.hour > 23 || r.calendar.month < 1 ||
            r.calendar.month > 12) {
            throw ValidationError("line " + std::to_string(line_no) + ": calendar out of range");
        }
        ds.records.push_back(r);
    }
    ds.validate();
    return ds;
}

}  // namespace enercast
