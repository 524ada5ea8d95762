// enercast: causal Bayesian load forecasting toolkit.
//
// Commands: ingest, simulate, train, predict, evaluate, crossval,
// analyze <humidity|temperature|radiation|wind|backdoor|variance>, report.
// Every command writes its artifacts plus a manifest under --out; runs are
// reproducible from the manifest alone (no environment variables, no wall
// clock in any output file).

#include "enercast/analysis.hpp"
#include "enercast/calendar.hpp"
#include "enercast/csv.hpp"
#include "enercast/data.hpp"
#include "enercast/errors.hpp"
#include "enercast/evaluation.hpp"
#include "enercast/rng.hpp"
#include "enercast/scm.hpp"
#include "enercast/svi.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace enercast;

namespace {

constexpr const char* kVersion = "0.1.0";

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open file: " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open for writing: " + path.string());
    out << content;
}

/// Resolved run settings: defaults, then config file, then flags.
struct RunConfig {
    std::string load_csv, weather_csv, mapping_file;
    std::string data_csv, posterior_file, params_file, prior_file, solar_file;
    std::string out_dir = "out";
    std::string start = "2023-09-01T00:00:00Z";
    std::string split;
    std::uint64_t seed = 0;
    std::size_t steps = 5000;
    std::size_t batch = 0;
    int particles = 1;
    double lr = 0.01;
    std::size_t hours = 8760;
    std::size_t k = 5;
    std::size_t n = 100000;
    double temp_mid = 56.0;
    double t_rh = 70.0;
    double t_w1 = 30.0;
    double t_w2 = 75.0;
    int tz_offset = -360;  // minutes from UTC, standard time
    bool tz_dst = true;    // apply the US/Canada daylight rule
    std::vector<int> active_hours;  // empty = default 5..23

    json to_json() const {
        json j;
        j["load_csv"] = load_csv;
        j["weather_csv"] = weather_csv;
        j["mapping_file"] = mapping_file;
        j["data_csv"] = data_csv;
        j["posterior_file"] = posterior_file;
        j["params_file"] = params_file;
        j["prior_file"] = prior_file;
        j["solar_file"] = solar_file;
        j["out_dir"] = out_dir;
        j["start"] = start;
        j["split"] = split;
        j["seed"] = seed;
        j["steps"] = steps;
        j["batch"] = batch;
        j["particles"] = particles;
        j["lr"] = lr;
        j["hours"] = hours;
        j["k"] = k;
        j["n"] = n;
        j["temp_mid"] = temp_mid;
        j["t_rh"] = t_rh;
        j["t_w1"] = t_w1;
        j["t_w2"] = t_w2;
        j["tz_offset"] = tz_offset;
        j["tz_dst"] = tz_dst;
        j["active_hours"] = active_hours;
        return j;
    }
};

void apply_config_file(RunConfig& cfg, const std::string& path) {
    const json j = json::parse(read_file(path));
    auto pick_str = [&](const char* key, std::string& out) {
        if (j.contains(key)) out = j.at(key).get<std::string>();
    };
    auto pick_num = [&](const char* key, auto& out) {
        if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
    };
    pick_str("load_csv", cfg.load_csv);
    pick_str("weather_csv", cfg.weather_csv);
    pick_str("mapping_file", cfg.mapping_file);
    pick_str("data_csv", cfg.data_csv);
    pick_str("posterior_file", cfg.posterior_file);
    pick_str("params_file", cfg.params_file);
    pick_str("prior_file", cfg.prior_file);
    pick_str("solar_file", cfg.solar_file);
    pick_str("out_dir", cfg.out_dir);
    pick_str("start", cfg.start);
    pick_str("split", cfg.split);
    pick_num("seed", cfg.seed);
    pick_num("steps", cfg.steps);
    pick_num("batch", cfg.batch);
    pick_num("particles", cfg.particles);
    pick_num("lr", cfg.lr);
    pick_num("hours", cfg.hours);
    pick_num("k", cfg.k);
    pick_num("n", cfg.n);
    pick_num("temp_mid", cfg.temp_mid);
    pick_num("t_rh", cfg.t_rh);
    pick_num("t_w1", cfg.t_w1);
    pick_num("t_w2", cfg.t_w2);
    pick_num("tz_offset", cfg.tz_offset);
    if (j.contains("tz_dst")) cfg.tz_dst = j.at("tz_dst").get<bool>();
    if (j.contains("active_hours")) cfg.active_hours = j.at("active_hours").get<std::vector<int>>();
}

void validate_config(const RunConfig& cfg, const std::vector<std::string>& required_paths) {
    std::vector<std::string> issues;
    for (const std::string& p : required_paths) {
        if (p.empty()) {
            issues.push_back("a required input path is missing");
        } else if (!fs::exists(p)) {
            issues.push_back("path does not exist: " + p);
        }
    }
    if (!(cfg.lr > 0.0)) issues.push_back("lr must be > 0");
    if (cfg.particles < 1) issues.push_back("particles must be >= 1");
    if (!(cfg.temp_mid > -100.0 && cfg.temp_mid < 150.0)) issues.push_back("temp_mid out of range");
    if (!(cfg.t_w1 < cfg.t_w2)) issues.push_back("t_w1 must be below t_w2");
    for (int h : cfg.active_hours) {
        if (h < 0 || h > 23) issues.push_back("active hour out of range: " + std::to_string(h));
    }
    if (!issues.empty()) throw ConfigError(std::move(issues));
}

svi::FixedParams fixed_from_config(const RunConfig& cfg) {
    svi::FixedParams fixed = svi::FixedParams::defaults();
    fixed.temp_mid = cfg.temp_mid;
    fixed.humid_temp_threshold = cfg.t_rh;
    fixed.wind_cold_threshold = cfg.t_w1;
    fixed.wind_hot_threshold = cfg.t_w2;
    if (!cfg.active_hours.empty()) {
        fixed.active_hours = 0;
        for (int h : cfg.active_hours) fixed.active_hours |= (1u << h);
    }
    if (!cfg.solar_file.empty()) {
        const json j = json::parse(read_file(cfg.solar_file));
        fixed.solar_table.sunrise = j.at("sunrise").get<std::array<double, 12>>();
        fixed.solar_table.sunset = j.at("sunset").get<std::array<double, 12>>();
        fixed.solar_table.validate();
    }
    return fixed;
}

svi::TrainConfig train_config_from(const RunConfig& cfg) {
    svi::TrainConfig t;
    t.steps = cfg.steps;
    t.batch_size = cfg.batch;
    t.seed = cfg.seed;
    t.n_particles = cfg.particles;
    t.lr = cfg.lr;
    return t;
}

svi::PriorSpec priors_from_config(const RunConfig& cfg) {
    return cfg.prior_file.empty() ? svi::PriorSpec::defaults()
                                  : svi::PriorSpec::from_json_file(cfg.prior_file);
}

TimezoneRule tz_from_config(const RunConfig& cfg) {
    return TimezoneRule{cfg.tz_offset, cfg.tz_dst};
}

void write_manifest(const RunConfig& cfg, const std::string& command,
                    const std::vector<std::string>& input_paths) {
    json inputs;
    for (const std::string& p : input_paths) {
        if (!p.empty()) inputs[p] = hex64(fnv1a(read_file(p)));
    }
    json m;
    m["command"] = command;
    m["config"] = cfg.to_json();
    m["config_hash"] = hex64(fnv1a(cfg.to_json().dump()));
    m["inputs"] = inputs;
    m["seed"] = cfg.seed;
    m["versions"] = {{"enercast", kVersion}};
    write_file(fs::path(cfg.out_dir) / "manifest.json", m.dump(2) + "\n");
}

fs::path ensure_out(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    return fs::path(cfg.out_dir);
}

Instant parse_instant_arg(const std::string& text, const char* what) {
    const auto t = parse_timestamp(text);
    if (!t) throw ValidationError(std::string("cannot parse ") + what + ": " + text);
    return *t;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_ingest(const RunConfig& cfg) {
    validate_config(cfg, {cfg.load_csv, cfg.weather_csv});
    const auto out = ensure_out(cfg);
    const ColumnMap cols = cfg.mapping_file.empty() ? ColumnMap{}
                                                    : ColumnMap::from_json_file(cfg.mapping_file);
    IngestMeta meta;
    const Dataset load = ingest_load_csv(cfg.load_csv, tz_from_config(cfg), meta, cols);
    const WeatherTable weather = ingest_weather_csv(cfg.weather_csv, meta, cols);
    const Dataset joined = join_hourly(load, weather, meta);
    write_canonical_csv(joined, (out / "data.csv").string());

    json j;
    j["load_rows"] = load.size();
    j["weather_rows"] = weather.size();
    j["joined_rows"] = joined.size();
    j["dropped_load_hours"] = meta.dropped_load;
    j["dropped_weather_hours"] = meta.dropped_weather;
    j["sort_warnings"] = meta.sort_warnings;
    write_file(out / "ingest.json", j.dump(2) + "\n");
    write_manifest(cfg, "ingest", {cfg.load_csv, cfg.weather_csv, cfg.mapping_file});
    std::cout << "ingested " << joined.size() << " joined hourly records\n";
    return 0;
}

int cmd_simulate(const RunConfig& cfg) {
    std::vector<std::string> required;
    if (!cfg.params_file.empty()) required.push_back(cfg.params_file);
    validate_config(cfg, required);
    const auto out = ensure_out(cfg);

    scm::ScmParams params =
        cfg.params_file.empty() ? scm::ScmParams::defaults() : scm::load_params(cfg.params_file);
    if (cfg.params_file.empty()) {
        // Threshold configuration flows into the default world.
        params.temp_mid = cfg.temp_mid;
        params.humid_temp_threshold = cfg.t_rh;
        params.wind_cold_threshold = cfg.t_w1;
        params.wind_hot_threshold = cfg.t_w2;
        if (!cfg.active_hours.empty()) {
            params.active_hours = 0;
            for (int h : cfg.active_hours) params.active_hours |= (1u << h);
        }
    }
    params.validate();

    Rng rng(cfg.seed);
    const Instant start = parse_instant_arg(cfg.start, "start");
    const Dataset ds =
        scm::simulate_dataset(start, cfg.hours, params, tz_from_config(cfg), rng);
    write_canonical_csv(ds, (out / "data.csv").string());
    save_params(params, (out / "params.json").string());
    write_manifest(cfg, "simulate", {cfg.params_file});
    std::cout << "simulated " << ds.size() << " hourly records\n";
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    std::vector<std::string> required = {cfg.data_csv};
    if (!cfg.prior_file.empty()) required.push_back(cfg.prior_file);
    validate_config(cfg, required);
    const auto out = ensure_out(cfg);

    const Dataset ds = read_canonical_csv(cfg.data_csv);
    const svi::PriorSpec priors = priors_from_config(cfg);
    const svi::FixedParams fixed = fixed_from_config(cfg);
    const svi::TrainReport report = svi::train(ds, priors, fixed, train_config_from(cfg));

    write_file(out / "posterior.json", svi::posterior_to_json(report, priors) + "\n");
    std::string trace = "step,elbo\n";
    for (std::size_t i = 0; i < report.elbo_trace.size(); ++i) {
        trace += std::to_string(i) + "," + csv::format_double(report.elbo_trace[i]) + "\n";
    }
    write_file(out / "elbo_trace.csv", trace);
    write_manifest(cfg, "train", {cfg.data_csv, cfg.prior_file});

    std::cout << "trained " << report.steps_completed << " steps on " << ds.size()
              << " records in " << report.wall_seconds << " s"
              << (report.aborted ? " (aborted: non-finite ELBO)" : "") << "\n";
    return report.aborted ? 1 : 0;
}

int cmd_predict(const RunConfig& cfg) {
    validate_config(cfg, {cfg.data_csv, cfg.posterior_file});
    const auto out = ensure_out(cfg);

    const Dataset ds = read_canonical_csv(cfg.data_csv);
    const svi::GuideState guide = svi::guide_from_posterior_json(read_file(cfg.posterior_file));
    const svi::PriorSpec priors = priors_from_config(cfg);
    const svi::FixedParams fixed = fixed_from_config(cfg);

    std::string series = "timestamp_utc,actual_mw,predicted_mw,predicted_sd\n";
    std::vector<double> predicted, actual;
    for (const auto& rec : ds.records) {
        const auto pred = svi::posterior_predict(guide, priors, fixed, rec.calendar, rec.weather);
        predicted.push_back(pred.mean);
        actual.push_back(rec.demand);
        series += format_timestamp(rec.timestamp) + "," + csv::format_double(rec.demand) + "," +
                  csv::format_double(pred.mean) + "," + csv::format_double(pred.sd) + "\n";
    }
    write_file(out / "predictions.csv", series);

    const double score = eval::mape(predicted, actual);
    json j;
    j["mape_percent"] = score;
    j["records"] = ds.size();
    write_file(out / "metrics.json", j.dump(2) + "\n");
    write_manifest(cfg, "predict", {cfg.data_csv, cfg.posterior_file});
    std::cout << "MAPE " << score << "% over " << ds.size() << " records\n";
    return 0;
}

int cmd_evaluate(const RunConfig& cfg) {
    validate_config(cfg, {cfg.data_csv});
    if (cfg.split.empty()) throw ConfigError({"evaluate requires --split"});
    const auto out = ensure_out(cfg);

    const Dataset ds = read_canonical_csv(cfg.data_csv);
    const Instant split = parse_instant_arg(cfg.split, "split");
    const auto report = eval::train_test_eval(ds, split, priors_from_config(cfg),
                                              fixed_from_config(cfg), train_config_from(cfg));

    json j;
    j["train_mape_percent"] = report.train_mape;
    j["test_mape_percent"] = report.test_mape;
    json monthly;
    for (const auto& [month, m] : report.monthly_mape) monthly[std::to_string(month)] = m;
    j["test_monthly_mape_percent"] = monthly;
    write_file(out / "eval.json", j.dump(2) + "\n");

    std::string series = "timestamp_utc,actual_mw,predicted_mw\n";
    for (const auto& p : report.series) {
        series += format_timestamp(p.timestamp) + "," + csv::format_double(p.actual) + "," +
                  csv::format_double(p.predicted) + "\n";
    }
    write_file(out / "predictions_test.csv", series);
    write_manifest(cfg, "evaluate", {cfg.data_csv, cfg.prior_file});
    std::cout << "train MAPE " << report.train_mape << "%, test MAPE " << report.test_mape
              << "%\n";
    return 0;
}

int cmd_crossval(const RunConfig& cfg) {
    validate_config(cfg, {cfg.data_csv});
    const auto out = ensure_out(cfg);

    const Dataset ds = read_canonical_csv(cfg.data_csv);
    const auto report = eval::cross_validate(ds, cfg.k, priors_from_config(cfg),
                                             fixed_from_config(cfg), train_config_from(cfg));

    json j;
    j["fold_mape_percent"] = report.fold_mapes;
    j["mean_mape_percent"] = report.mean_mape;
    json monthly;
    for (const auto& [month, m] : report.monthly_mape) monthly[std::to_string(month)] = m;
    j["monthly_mape_percent"] = monthly;
    write_file(out / "crossval.json", j.dump(2) + "\n");

    std::string series = "timestamp_utc,actual_mw,predicted_mw\n";
    for (const auto& p : report.series) {
        series += format_timestamp(p.timestamp) + "," + csv::format_double(p.actual) + "," +
                  csv::format_double(p.predicted) + "\n";
    }
    write_file(out / "predictions_cv.csv", series);
    write_manifest(cfg, "crossval", {cfg.data_csv, cfg.prior_file});
    std::cout << "cross-validation mean MAPE " << report.mean_mape << "% over " << cfg.k
              << " folds\n";
    return 0;
}

int cmd_analyze_humidity(const RunConfig& cfg) {
    validate_config(cfg, {cfg.data_csv});
    const auto out = ensure_out(cfg);
    const Dataset ds = read_canonical_csv(cfg.data_csv);

    std::vector<double> humidity, demand;
    for (const auto& rec : ds.records) {
        humidity.push_back(rec.weather.humidity);
        demand.push_back(rec.demand);
    }
    const auto [r, density] = analysis::correlation_with_density(humidity, demand);

    json j;
    j["raw_correlation"] = r;
    j["n"] = ds.size();
    j["density_mode"] = density.mode();
    j["density_mass"] = density.integrate(-1.0, 1.0);

    // Plot-ready confidence density around the estimate.
    const double sd_rho =
        (1.0 - r * r) / std::sqrt(static_cast<double>(ds.size()) - 3.0);
    const double lo = std::max(-0.999, r - 10.0 * sd_rho);
    const double hi = std::min(0.999, r + 10.0 * sd_rho);
    std::string dens_csv = "rho,density\n";
    for (int i = 0; i <= 400; ++i) {
        const double rho = lo + (hi - lo) * i / 400.0;
        dens_csv += csv::format_double(rho) + "," + csv::format_double(density(rho)) + "\n";
    }
    write_file(out / "fisher_density.csv", dens_csv);

    // Hour/temperature-adjusted humidity effect, hot stratum plus a narrow
    // afternoon window.
    json strata;
    try {
        const auto hot = analysis::conditional_humidity_effect(ds, cfg.t_w2);
        strata["hot"] = {{"threshold_f", cfg.t_w2},
                         {"coefficient_mw_per_rh", hot.fit.coef("humidity")},
                         {"std_error", hot.fit.stderr_of("humidity")},
                         {"demand_sd_mw", hot.demand_sd},
                         {"count", hot.count}};
    } catch (const ValidationError& e) {
        strata["hot"] = {{"skipped", e.what()}};
    }
    try {
        const auto windowed =
            analysis::conditional_humidity_effect(ds, cfg.t_rh, std::make_pair(12, 16));
        strata["hot_afternoon"] = {{"threshold_f", cfg.t_rh},
                                   {"hour_window", {12, 16}},
                                   {"coefficient_mw_per_rh", windowed.fit.coef("humidity")},
                                   {"std_error", windowed.fit.stderr_of("humidity")},
                                   {"demand_sd_mw", windowed.demand_sd},
                                   {"count", windowed.count}};
    } catch (const ValidationError& e) {
        strata["hot_afternoon"] = {{"skipped", e.what()}};
    }
    j["adjusted_effect"] = strata;

    // Re-fit the humidity temperature threshold by correlation grid search.
    const std::vector<double> grid = {60.0, 65.0, 70.0, 75.0, 80.0, 85.0};
    j["threshold_grid_search"] = {{"grid_f", grid},
                                  {"best_threshold_f", analysis::grid_search_threshold(ds, grid)},
                                  {"configured_threshold_f", cfg.t_rh}};
    write_file(out / "humidity.json", j.dump(2) + "\n");

    // Binned conditional histograms of humidity by month and hour.
    std::string hist = "month,hour,bin_lo,bin_hi,count\n";
    constexpr int kBins = 10;
    for (int m = 1; m <= 12; ++m) {
        for (int h = 0; h < 24; ++h) {
            std::array<std::size_t, kBins> counts{};
            std::size_t total = 0;
            for (const auto& rec : ds.records) {
                if (rec.calendar.month != m || rec.calendar.hour != h) continue;
                auto b = static_cast<std::size_t>(rec.weather.humidity * kBins);
                if (b >= kBins) b = kBins - 1;
                ++counts[b];
                ++total;
            }
            if (total == 0) continue;
            for (int b = 0; b < kBins; ++b) {
                hist += std::to_string(m) + "," + std::to_string(h) + "," +
                        csv::format_double(static_cast<double>(b) / kBins) + "," +
                        csv::format_double(static_cast<double>(b + 1) / kBins) + "," +
                        std::to_string(counts[static_cast<std::size_t>(b)]) + "\n";
            }
        }
    }
    write_file(out / "humidity_hist.csv", hist);
    write_manifest(cfg, "analyze humidity", {cfg.data_csv});
    std::cout << "humidity: raw correlation " << r << " over " << ds.size() << " records\n";
    return 0;
}

int cmd_analyze_temperature(const RunConfig& cfg) {
    validate_config(cfg, {cfg.data_csv});
    const auto out = ensure_out(cfg);
    const Dataset ds = read_canonical_csv(cfg.data_csv);

    std::string fits_csv =
        "month,approach1_coef,approach2_coef,fwl_coef,relative_deviation,"
        "approach1_mape,approach2_mape\n";
    double dev_sum = 0.0, gap_sum = 0.0, fwl_worst = 0.0;
    int dev_n = 0, gap_n = 0;
    for (int m = 1; m <= 12; ++m) {
        Dataset month_ds;
        for (const auto& rec : ds.records) {
            if (rec.calendar.month == m) month_ds.records.push_back(rec);
        }
        if (month_ds.size() < 60) continue;

        // With two occurrences of the month, fit on the first year and score
        // both approaches out of sample on the second.
        const Instant boundary =
            month_ds.records.front().timestamp + 200 * 24 * kSecondsPerHour;
        Dataset fit_ds, hold_ds;
        for (const auto& rec : month_ds.records) {
            (rec.timestamp < boundary ? fit_ds : hold_ds).records.push_back(rec);
        }
        const bool holdout = fit_ds.size() >= 60 && hold_ds.size() >= 60;
        const Dataset& train_ds = holdout ? fit_ds : month_ds;

        const auto a1 = analysis::fit_approach1(train_ds, m);
        const auto a2 = analysis::fit_approach2(train_ds, m);
        const auto fwl = analysis::fwl_fit(train_ds, m);
        const double c1 = a1.stage1.coef("temp_v");
        const double c2 = a2.coef("temp_v");
        const double dev = std::abs(c1 - c2) / std::abs(c2);
        fwl_worst = std::max(fwl_worst, std::abs(fwl.coef("temp_v") - c2));
        dev_sum += dev;
        ++dev_n;

        double mape1 = 0.0, mape2 = 0.0;
        if (holdout) {
            std::vector<double> p1, p2, actual;
            for (const auto& rec : hold_ds.records) {
                p1.push_back(analysis::predict_approach1(a1, rec));
                p2.push_back(analysis::predict_approach2(a2, rec));
                actual.push_back(rec.demand);
            }
            mape1 = eval::mape(p1, actual);
            mape2 = eval::mape(p2, actual);
            gap_sum += (mape1 - mape2) / mape2;
            ++gap_n;
        }

        fits_csv += std::to_string(m) + "," + csv::format_double(c1) + "," +
                    csv::format_double(c2) + "," + csv::format_double(fwl.coef("temp_v")) + "," +
                    csv::format_double(dev) + "," + csv::format_double(mape1) + "," +
                    csv::format_double(mape2) + "\n";
    }
    if (dev_n == 0) throw ValidationError("no month has enough records for the regressions");

    write_file(out / "temperature_fits.csv", fits_csv);
    json j;
    j["months_fitted"] = dev_n;
    j["mean_relative_coefficient_deviation"] = dev_sum / dev_n;
    j["fwl_max_gap"] = fwl_worst;
    if (gap_n > 0) j["mean_relative_mape_gap"] = gap_sum / gap_n;
    write_file(out / "temperature.json", j.dump(2) + "\n");
    write_manifest(cfg, "analyze temperature", {cfg.data_csv});
    std::cout << "temperature: mean coefficient deviation " << 100.0 * dev_sum / dev_n
              << "% across " << dev_n << " months\n";
    return 0;
}

int cmd_analyze_radiation(const RunConfig& cfg) {
    validate_config(cfg, {cfg.data_csv});
    const auto out = ensure_out(cfg);
    const Dataset ds = read_canonical_csv(cfg.data_csv);

    const std::vector<std::pair<int, int>> windows = {{12, 16}, {17, 20}};
    std::string regimes = "month,hour_lo,hour_hi,bin_center_wm2,mean_demand_mw,count\n";
    json slopes = json::array();
    for (int m = 1; m <= 12; ++m) {
        for (const auto& [h_lo, h_hi] : windows) {
            std::vector<double> rad, demand;
            for (const auto& rec : ds.records) {
                if (rec.calendar.month != m) continue;
                if (rec.calendar.hour < h_lo || rec.calendar.hour > h_hi) continue;
                rad.push_back(rec.weather.radiation);
                demand.push_back(rec.demand);
            }
            if (rad.size() < 30) continue;
            for (const auto& b : analysis::binned_means(rad, demand, 8)) {
                regimes += std::to_string(m) + "," + std::to_string(h_lo) + "," +
                           std::to_string(h_hi) + "," + csv::format_double(b.center) + "," +
                           csv::format_double(b.mean_y) + "," + std::to_string(b.count) + "\n";
            }
            // After-sunset strata can have identically zero radiation.
            const auto [rad_min, rad_max] = std::minmax_element(rad.begin(), rad.end());
            if (*rad_max - *rad_min < 1e-9) continue;
            analysis::Matrix design(rad.size(), 2);
            for (std::size_t i = 0; i < rad.size(); ++i) {
                design.at(i, 0) = 1.0;
                design.at(i, 1) = rad[i];
            }
            const std::vector<std::string> names = {"intercept", "radiation"};
            const auto fit = analysis::solve_ols(design, names, demand);
            slopes.push_back({{"month", m},
                              {"hour_window", {h_lo, h_hi}},
                              {"slope_mw_per_wm2", fit.coef("radiation")},
                              {"std_error", fit.stderr_of("radiation")},
                              {"count", rad.size()}});
        }
    }
    write_file(out / "radiation_regimes.csv", regimes);
    json j;
    j["regime_slopes"] = slopes;
    write_file(out / "radiation.json", j.dump(2) + "\n");
    write_manifest(cfg, "analyze radiation", {cfg.data_csv});
    std::cout << "radiation: " << slopes.size() << " regime slopes\n";
    return 0;
}

int cmd_analyze_wind(const RunConfig& cfg) {
    validate_config(cfg, {cfg.data_csv});
    const auto out = ensure_out(cfg);
    const Dataset ds = read_canonical_csv(cfg.data_csv);

    const std::vector<std::pair<std::string, std::pair<double, double>>> bands = {
        {"hot", {80.0, 85.0}}, {"cold", {-10.0, -5.0}}};
    std::string regimes = "band,bin_center_mph,mean_demand_mw,count\n";
    json j;
    for (const auto& [name, band] : bands) {
        std::vector<double> wind, demand;
        for (const auto& rec : ds.records) {
            if (rec.weather.temperature < band.first || rec.weather.temperature > band.second) {
                continue;
            }
            wind.push_back(rec.weather.wind_speed);
            demand.push_back(rec.demand);
        }
        if (wind.size() < 30) {
            j[name] = {{"skipped", "fewer than 30 records in band"}, {"count", wind.size()}};
            continue;
        }
        for (const auto& b : analysis::binned_means(wind, demand, 8)) {
            regimes += name + "," + csv::format_double(b.center) + "," +
                       csv::format_double(b.mean_y) + "," + std::to_string(b.count) + "\n";
        }
        analysis::Matrix design(wind.size(), 2);
        for (std::size_t i = 0; i < wind.size(); ++i) {
            design.at(i, 0) = 1.0;
            design.at(i, 1) = wind[i];
        }
        const std::vector<std::string> names = {"intercept", "wind"};
        const auto fit = analysis::solve_ols(design, names, demand);
        j[name] = {{"temp_band_f", {band.first, band.second}},
                   {"slope_mw_per_mph", fit.coef("wind")},
                   {"std_error", fit.stderr_of("wind")},
                   {"count", wind.size()}};
    }
    write_file(out / "wind_regimes.csv", regimes);
    write_file(out / "wind.json", j.dump(2) + "\n");
    write_manifest(cfg, "analyze wind", {cfg.data_csv});
    std::cout << "wind: regime slopes written\n";
    return 0;
}

int cmd_analyze_backdoor(const RunConfig& cfg) {
    validate_config(cfg, {});
    const auto out = ensure_out(cfg);

    analysis::LinearScmInstance instance;  // y = 2x + 3z, x = z + noise, z in {0,1}
    const auto res = analysis::backdoor_check(instance, cfg.n, cfg.seed);

    json j;
    j["n_samples"] = cfg.n;
    j["regression_coef"] = res.regression_coef;
    j["regression_se"] = res.regression_se;
    j["naive_coef"] = res.naive_coef;
    j["naive_se"] = res.naive_se;
    j["do_coef"] = res.do_coef;
    j["abs_diff"] = res.abs_diff;
    write_file(out / "backdoor.json", j.dump(2) + "\n");
    write_manifest(cfg, "analyze backdoor", {});
    std::cout << "backdoor: regression " << res.regression_coef << " vs do " << res.do_coef
              << " (naive " << res.naive_coef << ")\n";
    return 0;
}

int cmd_analyze_variance(const RunConfig& cfg) {
    validate_config(cfg, {cfg.data_csv});
    const auto out = ensure_out(cfg);
    const Dataset ds = read_canonical_csv(cfg.data_csv);

    const auto table = analysis::seasonal_variance(ds);
    std::string csv_text = "month,variance_mw2,sd_mw\n";
    for (const auto& [month, var] : table) {
        csv_text += std::to_string(month) + "," + csv::format_double(var) + "," +
                    csv::format_double(std::sqrt(var)) + "\n";
    }
    write_file(out / "monthly_variance.csv", csv_text);

    json j;
    for (const auto& [month, var] : table) j["monthly"][std::to_string(month)] = var;
    const bool has_summer = table.count(6) && table.count(7) && table.count(8);
    const bool has_winter = table.count(12) && table.count(1) && table.count(2);
    if (has_summer && has_winter) {
        const double summer = (table.at(6) + table.at(7) + table.at(8)) / 3.0;
        const double winter = (table.at(12) + table.at(1) + table.at(2)) / 3.0;
        j["summer_mean_variance"] = summer;
        j["winter_mean_variance"] = winter;
        j["summer_over_winter_ratio"] = summer / winter;
    }
    write_file(out / "variance.json", j.dump(2) + "\n");
    write_manifest(cfg, "analyze variance", {cfg.data_csv});
    std::cout << "variance: " << table.size() << " months\n";
    return 0;
}

int cmd_report(const RunConfig& cfg) {
    validate_config(cfg, {});
    const fs::path base(cfg.out_dir);
    const fs::path report_dir = base / "report";
    fs::create_directories(report_dir);

    // Collate every known analysis artifact present under the output dir.
    const std::vector<std::string> json_artifacts = {
        "ingest.json",   "humidity.json", "temperature.json", "radiation.json",
        "wind.json",     "backdoor.json", "variance.json",    "eval.json",
        "crossval.json", "metrics.json"};
    const std::vector<std::string> csv_artifacts = {
        "fisher_density.csv",    "humidity_hist.csv",    "temperature_fits.csv",
        "radiation_regimes.csv", "wind_regimes.csv",     "monthly_variance.csv",
        "predictions.csv",       "predictions_test.csv", "predictions_cv.csv",
        "elbo_trace.csv"};

    json summary;
    int found = 0;
    for (const auto& name : json_artifacts) {
        const fs::path p = base / name;
        if (!fs::exists(p)) continue;
        summary[name.substr(0, name.size() - 5)] = json::parse(read_file(p.string()));
        ++found;
    }
    for (const auto& name : csv_artifacts) {
        const fs::path p = base / name;
        if (!fs::exists(p)) continue;
        fs::copy_file(p, report_dir / name, fs::copy_options::overwrite_existing);
        ++found;
    }
    write_file(report_dir / "summary.json", summary.dump(2) + "\n");
    write_manifest(cfg, "report", {});
    std::cout << "report: collated " << found << " artifacts into " << report_dir.string()
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"causal Bayesian energy-demand forecasting toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "JSON run configuration; flags override it");

    RunConfig cfg;
    RunConfig flag_values;
    // Flag presence is tracked so the precedence flags > file > defaults holds.
    struct FlagSpec {
        CLI::Option* opt;
        std::function<void(RunConfig&)> apply;
    };
    std::vector<FlagSpec> flags;

    auto add_all = [&](CLI::App* sub) {
        auto track = [&](const char* name, auto RunConfig::*field, const char* help) {
            CLI::Option* o = sub->add_option(name, flag_values.*field, help);
            flags.push_back(
                {o, [field, &flag_values](RunConfig& c) { c.*field = flag_values.*field; }});
        };
        track("--load", &RunConfig::load_csv, "load CSV (timestamp, MW)");
        track("--weather", &RunConfig::weather_csv, "weather CSV in source units");
        track("--mapping", &RunConfig::mapping_file, "column mapping JSON");
        track("--data", &RunConfig::data_csv, "canonical data CSV");
        track("--posterior", &RunConfig::posterior_file, "posterior snapshot JSON");
        track("--params", &RunConfig::params_file, "generative parameter JSON");
        track("--priors", &RunConfig::prior_file, "prior override JSON");
        track("--solar", &RunConfig::solar_file, "solar table override JSON");
        track("--out", &RunConfig::out_dir, "output directory");
        track("--start", &RunConfig::start, "simulation start (UTC)");
        track("--split", &RunConfig::split, "train/test split instant (UTC)");
        track("--seed", &RunConfig::seed, "random seed");
        track("--steps", &RunConfig::steps, "SVI steps");
        track("--batch", &RunConfig::batch, "minibatch size (0 = full batch)");
        track("--particles", &RunConfig::particles, "ELBO particles per step");
        track("--lr", &RunConfig::lr, "Adam learning rate");
        track("--hours", &RunConfig::hours, "hours to simulate");
        track("--k", &RunConfig::k, "cross-validation folds");
        track("--n", &RunConfig::n, "sample count for the backdoor study");
        track("--temp-mid", &RunConfig::temp_mid, "comfort midpoint (degF)");
        track("--t-rh", &RunConfig::t_rh, "humidity temperature threshold (degF)");
        track("--t-w1", &RunConfig::t_w1, "wind cold threshold (degF)");
        track("--t-w2", &RunConfig::t_w2, "wind hot threshold (degF)");
        track("--tz-offset", &RunConfig::tz_offset, "local clock offset from UTC in minutes");
        track("--tz-dst", &RunConfig::tz_dst, "apply the US/Canada daylight rule (0/1)");
    };

    CLI::App* ingest = app.add_subcommand("ingest", "join load and weather CSVs");
    CLI::App* simulate = app.add_subcommand("simulate", "sample synthetic hourly data");
    CLI::App* train = app.add_subcommand("train", "fit the posterior by SVI");
    CLI::App* predict = app.add_subcommand("predict", "score a posterior on data");
    CLI::App* evaluate = app.add_subcommand("evaluate", "chronological train/test protocol");
    CLI::App* crossval = app.add_subcommand("crossval", "k-fold cross-validation");
    CLI::App* analyze = app.add_subcommand("analyze", "causal analysis studies");
    analyze->require_subcommand(1);
    CLI::App* a_humidity = analyze->add_subcommand("humidity", "correlation + adjusted effect");
    CLI::App* a_temperature = analyze->add_subcommand("temperature", "approach 1 vs approach 2");
    CLI::App* a_radiation = analyze->add_subcommand("radiation", "radiation regimes");
    CLI::App* a_wind = analyze->add_subcommand("wind", "wind regimes");
    CLI::App* a_backdoor = analyze->add_subcommand("backdoor", "adjustment vs intervention");
    CLI::App* a_variance = analyze->add_subcommand("variance", "seasonal demand variance");
    CLI::App* report = app.add_subcommand("report", "collate analysis artifacts");

    for (CLI::App* sub : {ingest, simulate, train, predict, evaluate, crossval, a_humidity,
                          a_temperature, a_radiation, a_wind, a_backdoor, a_variance, report}) {
        add_all(sub);
    }

    CLI11_PARSE(app, argc, argv);

    try {
        if (!config_path.empty()) apply_config_file(cfg, config_path);
        for (const auto& f : flags) {
            if (f.opt->count() > 0) f.apply(cfg);
        }

        if (ingest->parsed()) return cmd_ingest(cfg);
        if (simulate->parsed()) return cmd_simulate(cfg);
        if (train->parsed()) return cmd_train(cfg);
        if (predict->parsed()) return cmd_predict(cfg);
        if (evaluate->parsed()) return cmd_evaluate(cfg);
        if (crossval->parsed()) return cmd_crossval(cfg);
        if (analyze->parsed()) {
            if (a_humidity->parsed()) return cmd_analyze_humidity(cfg);
            if (a_temperature->parsed()) return cmd_analyze_temperature(cfg);
            if (a_radiation->parsed()) return cmd_analyze_radiation(cfg);
            if (a_wind->parsed()) return cmd_analyze_wind(cfg);
            if (a_backdoor->parsed()) return cmd_analyze_backdoor(cfg);
            if (a_variance->parsed()) return cmd_analyze_variance(cfg);
        }
        if (report->parsed()) return cmd_report(cfg);
        std::cerr << "no command given\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
