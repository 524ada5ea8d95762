#pragma once

#include "enercast/autodiff.hpp"
#include "enercast/data.hpp"
#include "enercast/rng.hpp"
#include "enercast/scm.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace enercast::svi {

/// Trainable latents of the generative model, in canonical order. Thresholds,
/// the comfort midpoint, active hours and the solar table stay fixed during
/// inference (they are set by inspection or grid search, not gradients).
enum class Latent : std::size_t {
    temp_month_sin1,
    temp_month_cos1,
    temp_month_sin2,
    temp_month_cos2,
    temp_hour_sin1,
    temp_hour_cos1,
    temp_hour_sin2,
    temp_hour_cos2,
    rad_to_temp,
    temp_base,
    temp_noise_sd,
    humid_hour_sin,
    humid_hour_cos,
    humid_month_sin,
    humid_month_cos,
    humid_alpha0,
    humid_beta0,
    rad_amp_p,
    rad_amp_q,
    rad_noise_sd,
    wind_mean,
    wind_sd,
    hvac_slope,
    demand_base,
    humid_coeff,
    wind_coeff,
    wind_asymmetry,
    daily_sin1,
    daily_cos1,
    daily_sin2,
    daily_cos2,
    yearly_sin1,
    yearly_cos1,
    yearly_sin2,
    yearly_cos2,
    light_coeff,
    light_decay,
    demand_noise_sd,
    count_
};

inline constexpr std::size_t kNumLatents = static_cast<std::size_t>(Latent::count_);

constexpr std::size_t index_of(Latent l) { return static_cast<std::size_t>(l); }

enum class PriorFamily { normal, log_normal };

struct PriorEntry {
    std::string name;
    PriorFamily family = PriorFamily::normal;
    double loc = 0.0;    // log-space location for log_normal
    double scale = 1.0;  // log-space scale for log_normal
};

/// Per-latent prior declarations. Scale constants follow the three global
/// tiers used throughout the model spec.
struct PriorSpec {
    static constexpr double kScale1 = 4.0;
    static constexpr double kScale2 = 40.0;
    static constexpr double kScale3 = 10.0;

    std::vector<PriorEntry> entries;

    std::size_t dim() const { return entries.size(); }
    const PriorEntry& at(Latent l) const { return entries[index_of(l)]; }
    int find(const std::string& name) const;

    /// The full canonical prior set over every trainable latent.
    static PriorSpec defaults();

    /// Requires: canonical size, canonical names, positive scales.
    void validate_canonical() const;

    std::string to_json() const;
    /// Partial override {name: {family, loc, scale}} on top of defaults().
    static PriorSpec from_json_file(const std::string& path);
};

/// Natural value from the unconstrained coordinate.
double constrain_value(PriorFamily family, double u);
/// Unconstrained coordinate from the natural value.
double unconstrain_value(PriorFamily family, double x);

/// Sum of natural-space log prior densities; `naturals` in canonical order.
double log_prior(std::span<const double> naturals, const PriorSpec& priors);

/// Same over a name-keyed value map; a latent missing from the map is an
/// error naming it.
double log_prior(const std::map<std::string, double>& latents, const PriorSpec& priors);

/// Diagonal-Gaussian guide over the unconstrained coordinates (log-normal
/// latents are trained in log space).
struct GuideState {
    std::vector<double> mean;
    std::vector<double> log_sd;

    std::size_t dim() const { return mean.size(); }

    /// Means at the prior locations, sd at a tenth of the prior scale.
    static GuideState init_from(const PriorSpec& priors);
};

/// Fixed (non-latent) model quantities.
struct FixedParams {
    double temp_mid = 56.0;
    double humid_temp_threshold = 70.0;
    double wind_cold_threshold = 30.0;
    double wind_hot_threshold = 75.0;
    std::uint32_t active_hours = scm::hour_mask(5, 23);
    scm::SolarTable solar_table;

    static FixedParams defaults();
};

/// Full ScmParams from natural latent values plus the fixed quantities.
scm::ScmParams params_from_naturals(std::span<const double> naturals, const FixedParams& fixed);
/// Natural latent values out of an ScmParams (inverse of the above).
std::array<double, kNumLatents> naturals_from_params(const scm::ScmParams& params);
/// Generative parameters at the prior centers.
scm::ScmParams params_from_prior_means(const PriorSpec& priors, const FixedParams& fixed);

std::array<double, kNumLatents> naturals_from_unconstrained(std::span<const double> u,
                                                            const PriorSpec& priors);

/// Precomputed per-record constants for likelihood evaluation. Thresholding
/// and trig features are data once the fixed quantities are chosen.
struct BatchFeatures {
    std::vector<int> hour, month;
    std::vector<double> vshape;        // |T - temp_mid|
    std::vector<double> humid_on_rh;   // R.H. if T > threshold else 0
    std::vector<double> wind_cold_w;   // W if T < cold threshold else 0
    std::vector<double> wind_hot_w;    // W if T > hot threshold else 0
    std::vector<double> rad, temp, demand;
    std::vector<double> log_rh, log_1m_rh;  // clamped to the open unit interval
    std::vector<std::uint8_t> light_on;
    std::vector<double> day_factor;    // daylight sine from the solar table

    std::size_t size() const { return hour.size(); }
};

BatchFeatures build_features(const Dataset& ds, const FixedParams& fixed);

/// Observation log-likelihood of a record subset on the tape: Gaussian terms
/// for demand, temperature and radiation, Beta terms for humidity. Weather
/// generative densities are included so the link parameters are informed.
ad::DiffScalar scm_log_likelihood(ad::Tape& tape, const BatchFeatures& features,
                                  std::span<const std::size_t> indices,
                                  std::span<const ad::DiffScalar> naturals,
                                  const FixedParams& fixed);

/// Plain-double likelihood of a whole dataset.
double log_likelihood(const Dataset& batch, std::span<const double> naturals,
                      const FixedParams& fixed);

/// Likelihood builder over natural-valued latents, canonical order.
using LogLikBuilder =
    std::function<ad::DiffScalar(ad::Tape&, std::span<const ad::DiffScalar>)>;

struct ElboBuild {
    ad::DiffScalar elbo;
    std::vector<ad::DiffScalar> mean_leaves;
    std::vector<ad::DiffScalar> log_sd_leaves;
};

/// Reparameterized single-sample ELBO: z = mu + exp(log_sd) * eps with eps
/// drawn outside, so the same noise replays under perturbed guides (common
/// random numbers). `noise` holds n_particles * dim standard normals.
/// Priors and entropy are evaluated on the unconstrained coordinates, which
/// keeps the z-space identity ELBO = E[log p(z) + log lik - log q(z)] exact
/// for both families.
ElboBuild build_elbo(ad::Tape& tape, const PriorSpec& priors, const GuideState& guide,
                     std::span<const double> noise, const LogLikBuilder& loglik);

/// ELBO of the energy model on `batch` with freshly drawn particles.
ad::DiffScalar elbo_estimate(ad::Tape& tape, const Dataset& batch, const PriorSpec& priors,
                             const GuideState& guide, Rng& rng, int n_particles,
                             const FixedParams& fixed);

struct AdamState {
    std::size_t t = 0;
    std::vector<double> m, v;
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState init(std::size_t dim, double lr = 0.01);
};

/// Standard bias-corrected Adam minimization update, in place.
void adam_step(AdamState& state, std::span<const double> grads, std::span<double> params);

struct TrainConfig {
    std::size_t steps = 5000;
    std::size_t batch_size = 0;  // 0 = full batch
    std::uint64_t seed = 0;
    int n_particles = 1;
    double lr = 0.01;
};

struct PosteriorSummary {
    std::string name;
    double mean = 0.0;  // natural space
    double sd = 0.0;
    double u_mean = 0.0;  // unconstrained guide coordinates
    double u_log_sd = 0.0;
};

struct TrainReport {
    std::vector<double> elbo_trace;
    GuideState guide;
    std::vector<PosteriorSummary> posterior;
    TrainConfig config;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
    bool aborted = false;
    std::size_t steps_completed = 0;
};

/// SVI loop: minibatch (or full batch), one-particle ELBO, Adam on -ELBO.
/// Deterministic for a fixed seed. Two consecutive non-finite ELBOs abort
/// with the report so far.
TrainReport train(const Dataset& ds, const PriorSpec& priors, const FixedParams& fixed,
                  const TrainConfig& config);

std::vector<PosteriorSummary> summarize_posterior(const GuideState& guide,
                                                  const PriorSpec& priors);

struct Prediction {
    double mean = 0.0;
    double sd = 0.0;
};

/// Plug-in forecast at the guide means; with mc_draws > 0 the mean and the
/// parameter-uncertainty part of the sd come from guide samples instead.
Prediction posterior_predict(const GuideState& guide, const PriorSpec& priors,
                             const FixedParams& fixed, const CalendarPoint& cal,
                             const WeatherObservation& weather, int mc_draws = 0,
                             std::uint64_t seed = 0);

/// Posterior snapshot round-trip (guide, priors echo, seed).
std::string posterior_to_json(const TrainReport& report, const PriorSpec& priors);
GuideState guide_from_posterior_json(const std::string& text);

}  // namespace enercast::svi
