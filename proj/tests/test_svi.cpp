#include "enercast/svi.hpp"

#include "enercast/errors.hpp"
#include "synthetic.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

using namespace enercast;
using svi::GuideState;
using svi::PriorSpec;

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

// Independent density routines for the oracle comparisons.
double oracle_normal(double x, double mu, double sd) {
    return -std::log(sd) - kHalfLog2Pi - 0.5 * (x - mu) * (x - mu) / (sd * sd);
}
double oracle_lognormal(double x, double loc, double scale) {
    return -std::log(x) + oracle_normal(std::log(x), loc, scale);
}
double oracle_beta(double x, double a, double b) {
    return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) + std::lgamma(a + b) -
           std::lgamma(a) - std::lgamma(b);
}

svi::TrainConfig quick_config(std::uint64_t seed, std::size_t steps) {
    svi::TrainConfig c;
    c.steps = steps;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("log_prior closed forms") {
    PriorSpec one;
    one.entries.push_back({"mu", svi::PriorFamily::normal, 0.0, 1.0});
    const std::vector<double> at_zero = {0.0};
    CHECK(svi::log_prior(at_zero, one) == doctest::Approx(-0.9189385332046727).epsilon(1e-12));

    PriorSpec c1;
    c1.entries.push_back({"temp_month_sin1", svi::PriorFamily::normal, -4.6, 4.0});
    const std::vector<double> at_mean = {-4.6};
    CHECK(svi::log_prior(at_mean, c1) ==
          doctest::Approx(-std::log(4.0) - 0.5 * std::log(2.0 * 3.14159265358979323846))
              .epsilon(1e-12));
}

TEST_CASE("log_prior matches a per-term oracle on random vectors") {
    const PriorSpec priors = PriorSpec::defaults();
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> naturals(priors.dim());
        double expected = 0.0;
        for (std::size_t i = 0; i < priors.dim(); ++i) {
            const auto& e = priors.entries[i];
            if (e.family == svi::PriorFamily::normal) {
                naturals[i] = e.loc + e.scale * rng.normal();
                expected += oracle_normal(naturals[i], e.loc, e.scale);
            } else {
                naturals[i] = std::exp(e.loc + e.scale * rng.normal());
                expected += oracle_lognormal(naturals[i], e.loc, e.scale);
            }
        }
        CHECK(svi::log_prior(naturals, priors) == doctest::Approx(expected).epsilon(1e-10));
    }
}

TEST_CASE("log_prior over a value map names missing latents") {
    const PriorSpec priors = PriorSpec::defaults();
    std::map<std::string, double> values;
    for (const auto& e : priors.entries) {
        values[e.name] = svi::constrain_value(e.family, e.loc);
    }
    const double full = svi::log_prior(values, priors);
    CHECK(std::isfinite(full));
    values.erase("hvac_slope");
    CHECK_THROWS_WITH_AS(svi::log_prior(values, priors), doctest::Contains("hvac_slope"),
                         ValidationError);
}

TEST_CASE("prior means reproduce the documented generative centers") {
    const PriorSpec priors = PriorSpec::defaults();
    const scm::ScmParams p = svi::params_from_prior_means(priors, svi::FixedParams::defaults());
    CHECK(p.hvac_slope == doctest::Approx(20.0));
    CHECK(p.demand_base == doctest::Approx(3485.0));
    CHECK(p.temp_month_harmonics[0] == doctest::Approx(-4.6));
    CHECK(p.temp_month_harmonics[1] == doctest::Approx(6.4));
    CHECK(p.temp_hour_harmonics[0] == doctest::Approx(-17.0));
    CHECK(p.daily_harmonics[0] == doctest::Approx(-150.0));
    CHECK(p.yearly_harmonics[1] == doctest::Approx(110.0));
    CHECK(p.rad_amp_p == doctest::Approx(500.0));
    CHECK(p.rad_noise_sd == doctest::Approx(167.0));
    CHECK(p.wind_mean == doctest::Approx(16.0));
    CHECK(p.wind_sd == doctest::Approx(8.0));
    CHECK(p.wind_asymmetry == doctest::Approx(1.0));
    CHECK(p.temp_mid == 56.0);
    CHECK(p.humid_temp_threshold == 70.0);

    // The latent mapping inverts.
    const auto naturals = svi::naturals_from_params(p);
    for (std::size_t i = 0; i < svi::kNumLatents; ++i) {
        CHECK(naturals[i] ==
              doctest::Approx(svi::constrain_value(priors.entries[i].family,
                                                   priors.entries[i].loc)));
    }
}

TEST_CASE("log_likelihood matches the independent per-record oracle") {
    const PriorSpec priors = PriorSpec::defaults();
    const svi::FixedParams fixed = svi::FixedParams::defaults();
    const scm::ScmParams gen = scm::ScmParams::defaults();
    const Dataset ds = testgen::sample_default_year(71, gen, 50);

    Rng rng(8);
    std::array<double, svi::kNumLatents> naturals{};
    for (std::size_t i = 0; i < svi::kNumLatents; ++i) {
        const auto& e = priors.entries[i];
        naturals[i] = svi::constrain_value(e.family, e.loc + 0.05 * e.scale * rng.normal());
    }
    const scm::ScmParams params = svi::params_from_naturals(naturals, fixed);

    double expected = 0.0;
    for (const auto& rec : ds.records) {
        expected += oracle_normal(rec.demand, scm::predict_demand(rec.calendar, rec.weather, params),
                                  params.demand_noise_sd);
        expected += oracle_normal(rec.weather.temperature,
                                  scm::temp_mean(rec.calendar, rec.weather.radiation, params),
                                  params.temp_noise_sd);
        expected += oracle_normal(rec.weather.radiation, scm::radiation_mean(rec.calendar, params),
                                  params.rad_noise_sd);
        const auto shapes = scm::humidity_shapes(rec.calendar, params);
        const double rh = std::min(1.0 - 1e-6, std::max(1e-6, rec.weather.humidity));
        expected += oracle_beta(rh, shapes.alpha, shapes.beta);
    }
    const double got = svi::log_likelihood(ds, naturals, fixed);
    CHECK(got == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("log_likelihood demand term and additivity") {
    const svi::FixedParams fixed = svi::FixedParams::defaults();
    const PriorSpec priors = PriorSpec::defaults();
    const scm::ScmParams params = svi::params_from_prior_means(priors, fixed);
    const auto naturals = svi::naturals_from_params(params);

    // One record whose demand sits exactly at the conditional mean.
    HourlyRecord rec;
    rec.timestamp = *parse_timestamp("2024-07-01T18:00:00Z");
    rec.calendar = CalendarPoint{13, 7};
    rec.weather = WeatherObservation{72.0, 0.6, 10.0, 450.0};
    rec.demand = scm::predict_demand(rec.calendar, rec.weather, params);
    Dataset one;
    one.records.push_back(rec);

    const double base = svi::log_likelihood(one, naturals, fixed);
    // Same record with the demand displaced by delta: the difference is the
    // pure Gaussian demand term, so at the mean that term is -log s - log
    // sqrt(2 pi).
    const double weather_only =
        base - (-std::log(params.demand_noise_sd) - kHalfLog2Pi);
    Dataset shifted = one;
    shifted.records[0].demand += 123.0;
    const double moved = svi::log_likelihood(shifted, naturals, fixed);
    CHECK(moved - weather_only ==
          doctest::Approx(oracle_normal(rec.demand + 123.0, rec.demand,
                                        params.demand_noise_sd))
              .epsilon(1e-9));

    // Two identical records double the log-density exactly.
    Dataset two = one;
    HourlyRecord rec2 = rec;
    rec2.timestamp += kSecondsPerHour;
    two.records.push_back(rec2);
    CHECK(svi::log_likelihood(two, naturals, fixed) == doctest::Approx(2.0 * base).epsilon(1e-12));
}

TEST_CASE("ELBO at the prior with no data is centered on zero") {
    const PriorSpec priors = PriorSpec::defaults();
    const svi::FixedParams fixed = svi::FixedParams::defaults();
    GuideState guide;
    for (const auto& e : priors.entries) {
        guide.mean.push_back(e.loc);
        guide.log_sd.push_back(std::log(e.scale));
    }
    Dataset empty;
    Rng rng(99);
    ad::Tape tape;
    const int particles = 10000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < particles; ++i) {
        tape.clear();
        const double v = svi::elbo_estimate(tape, empty, priors, guide, rng, 1, fixed).value();
        sum += v;
        sum_sq += v * v;
    }
    const double mean = sum / particles;
    const double sd = std::sqrt(std::max(0.0, sum_sq / particles - mean * mean));
    // With guide == prior the pathwise estimate is zero pointwise, so the
    // empirical sd itself collapses; the absolute guard covers rounding.
    CHECK(std::abs(mean) <= 3.0 * sd / std::sqrt(static_cast<double>(particles)) + 1e-9);
    CHECK(sd <= 1e-9);
}

TEST_CASE("a non-finite ELBO reports the offending latents") {
    const PriorSpec priors = PriorSpec::defaults();
    const svi::FixedParams fixed = svi::FixedParams::defaults();
    const Dataset ds = testgen::sample_default_year(2, scm::ScmParams::defaults(), 50);
    GuideState guide = GuideState::init_from(priors);
    guide.mean[svi::index_of(svi::Latent::demand_noise_sd)] = 5000.0;  // exp overflows
    Rng rng(1);
    ad::Tape tape;
    CHECK_THROWS_WITH_AS(svi::elbo_estimate(tape, ds, priors, guide, rng, 1, fixed),
                         doctest::Contains("demand_noise_sd"), EvaluationError);
}

TEST_CASE("conjugate Normal-Normal toy reaches the closed-form posterior") {
    // Single latent mu ~ N(2, 3); data y_i ~ N(mu, 2) with known sd.
    PriorSpec priors;
    priors.entries.push_back({"mu", svi::PriorFamily::normal, 2.0, 3.0});
    const double like_sd = 2.0;
    Rng data_rng(12);
    std::vector<double> data;
    for (int i = 0; i < 40; ++i) data.push_back(5.0 + like_sd * data_rng.normal());

    const double sum_y = std::accumulate(data.begin(), data.end(), 0.0);
    const double prec = 1.0 / 9.0 + data.size() / (like_sd * like_sd);
    const double post_mean = (2.0 / 9.0 + sum_y / (like_sd * like_sd)) / prec;
    const double post_sd = std::sqrt(1.0 / prec);

    const svi::LogLikBuilder loglik = [&](ad::Tape& t,
                                          std::span<const ad::DiffScalar> naturals) {
        std::vector<ad::DiffScalar> terms;
        terms.reserve(data.size());
        for (double y : data) {
            terms.push_back(ad::square((naturals[0] - y) * (1.0 / like_sd)) * -0.5 -
                            (std::log(like_sd) + kHalfLog2Pi));
        }
        return ad::pairwise_sum(std::move(terms));
    };

    GuideState guide = GuideState::init_from(priors);
    std::vector<double> coords = {guide.mean[0], guide.log_sd[0]};
    svi::AdamState adam = svi::AdamState::init(2, 0.01);
    Rng rng(3);
    std::vector<double> noise(10);
    ad::Tape tape;
    for (int step = 0; step < 4000; ++step) {
        guide.mean[0] = coords[0];
        guide.log_sd[0] = coords[1];
        for (double& x : noise) x = rng.normal();
        tape.clear();
        const auto build = svi::build_elbo(tape, priors, guide, noise, loglik);
        const auto adj = tape.backward(build.elbo);
        const std::vector<double> grads = {-adj[build.mean_leaves[0].id()],
                                           -adj[build.log_sd_leaves[0].id()]};
        svi::adam_step(adam, grads, coords);
    }
    CHECK(coords[0] == doctest::Approx(post_mean).epsilon(1e-2));
    CHECK(std::exp(coords[1]) == doctest::Approx(post_sd).epsilon(0.10));
}

TEST_CASE("ELBO gradient matches finite differences under common random numbers") {
    const PriorSpec priors = PriorSpec::defaults();
    const svi::FixedParams fixed = svi::FixedParams::defaults();
    const Dataset ds = testgen::sample_default_year(17, scm::ScmParams::defaults(), 50);
    const svi::BatchFeatures features = svi::build_features(ds, fixed);
    std::vector<std::size_t> indices(ds.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});

    Rng rng(31);
    GuideState guide = GuideState::init_from(priors);
    for (std::size_t i = 0; i < guide.dim(); ++i) {
        guide.mean[i] += 0.2 * priors.entries[i].scale * rng.normal() * 0.1;
        guide.log_sd[i] += 0.1 * rng.normal();
    }
    std::vector<double> noise(svi::kNumLatents);
    for (double& x : noise) x = rng.normal();

    const svi::LogLikBuilder loglik = [&](ad::Tape& t, std::span<const ad::DiffScalar> nat) {
        return svi::scm_log_likelihood(t, features, indices, nat, fixed);
    };

    ad::Tape tape;
    const auto build = svi::build_elbo(tape, priors, guide, noise, loglik);
    const auto adj = tape.backward(build.elbo);

    auto eval_at = [&](const GuideState& g) {
        ad::Tape t2;
        return svi::build_elbo(t2, priors, g, noise, loglik).elbo.value();
    };

    // The central difference carries a floor of about ulp(|ELBO|)/(2h); the
    // absolute term keeps coordinates whose total partial happens to cancel
    // near zero from failing on quantization noise alone.
    const double h = 1e-5;
    const double atol =
        8.0 * 2.220446049250313e-16 * std::abs(build.elbo.value()) / (2.0 * h);
    double worst = 0.0;
    for (std::size_t i = 0; i < guide.dim(); ++i) {
        for (int which = 0; which < 2; ++which) {
            GuideState gp = guide, gm = guide;
            auto& vp = which == 0 ? gp.mean[i] : gp.log_sd[i];
            auto& vm = which == 0 ? gm.mean[i] : gm.log_sd[i];
            vp += h;
            vm -= h;
            const double fd = (eval_at(gp) - eval_at(gm)) / (2.0 * h);
            const double analytic =
                adj[which == 0 ? build.mean_leaves[i].id() : build.log_sd_leaves[i].id()];
            const double margin = std::abs(analytic - fd) / (1e-4 * std::abs(fd) + atol);
            worst = std::max(worst, margin);
        }
    }
    CHECK(worst <= 1.0);
}

TEST_CASE("adam_step behavior") {
    SUBCASE("first step moves every coordinate by about the learning rate") {
        svi::AdamState s = svi::AdamState::init(3, 0.01);
        std::vector<double> params = {1.0, -2.0, 0.5};
        const std::vector<double> grads = {10.0, -0.003, 200.0};
        const std::vector<double> before = params;
        svi::adam_step(s, grads, params);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(std::abs(params[i] - before[i]) == doctest::Approx(0.01).epsilon(1e-4));
            CHECK((params[i] < before[i]) == (grads[i] > 0.0));
        }
    }

    SUBCASE("zero gradient leaves parameters unchanged") {
        svi::AdamState s = svi::AdamState::init(2, 0.01);
        std::vector<double> params = {1.0, 2.0};
        const std::vector<double> zeros = {0.0, 0.0};
        svi::adam_step(s, zeros, params);
        CHECK(params[0] == 1.0);
        CHECK(params[1] == 2.0);
    }

    SUBCASE("three steps match a hand-rolled reference recurrence") {
        svi::AdamState s = svi::AdamState::init(1, 0.01);
        std::vector<double> params = {3.0};
        double rm = 0.0, rv = 0.0, rp = 3.0;
        for (int t = 1; t <= 3; ++t) {
            const double g = 2.0 * rp;  // gradient of x^2
            std::vector<double> grads = {2.0 * params[0]};
            svi::adam_step(s, grads, params);
            rm = 0.9 * rm + 0.1 * g;
            rv = 0.999 * rv + 0.001 * g * g;
            const double mh = rm / (1.0 - std::pow(0.9, t));
            const double vh = rv / (1.0 - std::pow(0.999, t));
            rp -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
            CHECK(params[0] == doctest::Approx(rp).epsilon(1e-12));
        }
    }

    SUBCASE("non-finite gradients are rejected") {
        svi::AdamState s = svi::AdamState::init(1, 0.01);
        std::vector<double> params = {1.0};
        const std::vector<double> bad = {std::numeric_limits<double>::quiet_NaN()};
        CHECK_THROWS_AS(svi::adam_step(s, bad, params), EvaluationError);
    }
}

TEST_CASE("train contract basics") {
    const PriorSpec priors = PriorSpec::defaults();
    const svi::FixedParams fixed = svi::FixedParams::defaults();
    const Dataset ds = testgen::sample_default_year(3, scm::ScmParams::defaults(), 300);

    SUBCASE("zero steps returns the initialization") {
        const auto report = svi::train(ds, priors, fixed, quick_config(1, 0));
        CHECK(report.elbo_trace.empty());
        const GuideState init = GuideState::init_from(priors);
        CHECK(report.guide.mean == init.mean);
        CHECK(report.guide.log_sd == init.log_sd);
    }

    SUBCASE("the same seed reproduces the trace bit for bit") {
        const auto a = svi::train(ds, priors, fixed, quick_config(42, 50));
        const auto b = svi::train(ds, priors, fixed, quick_config(42, 50));
        CHECK(a.elbo_trace == b.elbo_trace);
        CHECK(a.guide.mean == b.guide.mean);
        CHECK(a.guide.log_sd == b.guide.log_sd);
        CHECK(a.elbo_trace.size() == 50);

        const auto c = svi::train(ds, priors, fixed, quick_config(43, 50));
        CHECK(c.elbo_trace != a.elbo_trace);
    }

    SUBCASE("minibatch training is deterministic too") {
        svi::TrainConfig cfg = quick_config(7, 30);
        cfg.batch_size = 64;
        const auto a = svi::train(ds, priors, fixed, cfg);
        const auto b = svi::train(ds, priors, fixed, cfg);
        CHECK(a.elbo_trace == b.elbo_trace);
    }

    SUBCASE("divergent priors abort with the report so far") {
        PriorSpec bad = priors;
        bad.entries[svi::index_of(svi::Latent::demand_noise_sd)].loc = 5000.0;  // exp overflows
        const auto report = svi::train(ds, bad, fixed, quick_config(1, 10));
        CHECK(report.aborted);
        CHECK(report.steps_completed <= 2);
    }
}

TEST_CASE("short synthetic run recovers the generating scale parameters loosely") {
    const PriorSpec priors = PriorSpec::defaults();
    const svi::FixedParams fixed = svi::FixedParams::defaults();
    scm::ScmParams gen = svi::params_from_prior_means(priors, fixed);
    gen.demand_noise_sd = 100.0;
    const Dataset ds = testgen::sample_default_year(1234, gen, 2000);

    const auto report = svi::train(ds, priors, fixed, quick_config(10, 600));
    CHECK_FALSE(report.aborted);

    const auto posterior = report.posterior;
    auto find = [&](const char* name) {
        for (const auto& s : posterior) {
            if (s.name == name) return s;
        }
        throw std::runtime_error("missing summary");
    };
    CHECK(find("demand_base").mean == doctest::Approx(3485.0).epsilon(0.05));
    CHECK(find("hvac_slope").mean == doctest::Approx(20.0).epsilon(0.30));
    CHECK(report.elbo_trace.size() == 600);
    // The trace-monotonicity invariant runs at full scale in the acceptance
    // suite; here just confirm training moved the objective the right way.
    const auto& trace = report.elbo_trace;
    double head = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < 50; ++i) {
        head += trace[i];
        tail += trace[trace.size() - 1 - i];
    }
    CHECK(tail > head);
}

TEST_CASE("posterior_predict plug-in consistency and dispersion floor") {
    const PriorSpec priors = PriorSpec::defaults();
    const svi::FixedParams fixed = svi::FixedParams::defaults();
    const scm::ScmParams params = svi::params_from_prior_means(priors, fixed);
    const auto naturals = svi::naturals_from_params(params);

    GuideState concentrated;
    for (std::size_t i = 0; i < svi::kNumLatents; ++i) {
        concentrated.mean.push_back(
            svi::unconstrain_value(priors.entries[i].family, naturals[i]));
        concentrated.log_sd.push_back(-30.0);
    }
    const CalendarPoint cal{10, 4};
    const WeatherObservation w{60.0, 0.5, 10.0, 0.0};

    const auto plug = svi::posterior_predict(concentrated, priors, fixed, cal, w);
    CHECK(plug.mean == doctest::Approx(scm::predict_demand(cal, w, params)).epsilon(1e-12));
    CHECK(plug.sd == doctest::Approx(params.demand_noise_sd).epsilon(1e-6));

    // A dispersed guide: Monte Carlo mean agrees with plug-in for this
    // linear-in-latents configuration, and the predictive sd cannot fall
    // below the sigma_E posterior mean.
    GuideState dispersed = concentrated;
    for (std::size_t i = 0; i < svi::kNumLatents; ++i) {
        dispersed.log_sd[i] = std::log(0.05 * priors.entries[i].scale);
    }
    const int draws = 10000;
    const auto mc = svi::posterior_predict(dispersed, priors, fixed, cal, w, draws, 5);
    const double sigma_e_mean = svi::posterior_predict(dispersed, priors, fixed, cal, w).sd;
    CHECK(mc.sd >= sigma_e_mean);
    const double param_sd = std::sqrt(std::max(0.0, mc.sd * mc.sd - sigma_e_mean * sigma_e_mean));
    CHECK(std::abs(mc.mean - plug.mean) <= 3.0 * param_sd / std::sqrt(double(draws)) + 1e-9);
}

TEST_CASE("posterior snapshot JSON round trip") {
    const PriorSpec priors = PriorSpec::defaults();
    const svi::FixedParams fixed = svi::FixedParams::defaults();
    const Dataset ds = testgen::sample_default_year(3, scm::ScmParams::defaults(), 200);
    const auto report = svi::train(ds, priors, fixed, quick_config(9, 20));
    const std::string text = svi::posterior_to_json(report, priors);
    const GuideState back = svi::guide_from_posterior_json(text);
    CHECK(back.mean == report.guide.mean);
    CHECK(back.log_sd == report.guide.log_sd);
}
