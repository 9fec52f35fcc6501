//! Synthetic multi-location weather and power generation.
//!
//! Each location is a [`LocationProfile`]: a clear-sky irradiance model
//! (diurnal sine shaped by a seasonal day-length swing) modulated by an AR(1)
//! cloud-cover process, plus autoregressive temperature, humidity, pressure,
//! wind, and albedo series. Power is produced at 5-minute resolution by a
//! single plant model shared by every location: an effective-irradiance blend
//! of DNI/DHI/GHI with a temperature derating. Power therefore depends on
//! exactly four of the ten weather features, which is what makes the
//! generator useful for validating feature selection, and differing cloud,
//! temperature, and humidity climates produce covariate shift between
//! locations while the feature-to-power physics stays fixed.
//!
//! Everything is driven by per-process seeded streams, so one `(profile,
//! seed)` pair always yields bit-identical series.

use super::timeseries::TimeSeries;
use super::{Dataset, FEATURE_COLUMNS, POWER_COLUMN};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use chrono::{Datelike, NaiveDateTime, Timelike};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Climate and plant parameters for one synthetic location.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationProfile {
    pub name: String,
    /// Plant nameplate capacity in kW.
    pub capacity_kw: f64,
    /// Seasonal swing of day length around 12 h, in hours.
    pub daylight_swing_hours: f64,
    /// Clear-sky global horizontal irradiance at peak, W/m^2.
    pub ghi_peak: f64,
    /// Stationary mean of the cloud-cover process, in [0, 1].
    pub cloud_mean: f64,
    /// Stationary standard deviation of cloud cover.
    pub cloud_sigma: f64,
    /// AR(1) coefficient of cloud cover at 5-minute steps, in [0, 1).
    pub cloud_persistence: f64,
    pub temp_mean_c: f64,
    pub temp_season_amp: f64,
    pub temp_diurnal_amp: f64,
    pub temp_sigma: f64,
    pub humidity_mean: f64,
    pub humidity_sigma: f64,
    pub pressure_mean_hpa: f64,
    pub pressure_sigma: f64,
    pub wind_speed_mean: f64,
    pub wind_speed_sigma: f64,
    pub wind_dir_mean_deg: f64,
    pub wind_dir_spread_deg: f64,
    pub albedo_base: f64,
    /// Extra wintertime albedo (snow) at full strength.
    pub albedo_winter_boost: f64,
    pub albedo_sigma: f64,
    /// Relative noise on per-unit power, gated by irradiance.
    pub power_noise: f64,
}

impl LocationProfile {
    pub fn validate(&self) -> Result<()> {
        let checks: [(&str, bool); 8] = [
            ("capacity_kw must be positive", self.capacity_kw > 0.0),
            ("ghi_peak must be positive", self.ghi_peak > 0.0),
            (
                "cloud_mean must lie in [0, 1]",
                (0.0..=1.0).contains(&self.cloud_mean),
            ),
            (
                "cloud_persistence must lie in [0, 1)",
                (0.0..1.0).contains(&self.cloud_persistence),
            ),
            (
                "humidity_mean must lie in [0, 100]",
                (0.0..=100.0).contains(&self.humidity_mean),
            ),
            (
                "daylight_swing_hours must lie in [0, 10]",
                (0.0..=10.0).contains(&self.daylight_swing_hours),
            ),
            (
                "sigmas must be non-negative",
                self.cloud_sigma >= 0.0
                    && self.temp_sigma >= 0.0
                    && self.humidity_sigma >= 0.0
                    && self.pressure_sigma >= 0.0
                    && self.wind_speed_sigma >= 0.0
                    && self.wind_dir_spread_deg >= 0.0
                    && self.albedo_sigma >= 0.0
                    && self.power_noise >= 0.0,
            ),
            (
                "all parameters must be finite",
                [
                    self.capacity_kw,
                    self.ghi_peak,
                    self.cloud_mean,
                    self.cloud_sigma,
                    self.cloud_persistence,
                    self.temp_mean_c,
                    self.temp_season_amp,
                    self.temp_diurnal_amp,
                    self.temp_sigma,
                    self.humidity_mean,
                    self.humidity_sigma,
                    self.pressure_mean_hpa,
                    self.pressure_sigma,
                    self.wind_speed_mean,
                    self.wind_speed_sigma,
                    self.wind_dir_mean_deg,
                    self.wind_dir_spread_deg,
                    self.albedo_base,
                    self.albedo_winter_boost,
                    self.albedo_sigma,
                    self.power_noise,
                ]
                .iter()
                .all(|v| v.is_finite()),
            ),
        ];
        for (msg, ok) in checks {
            if !ok {
                return Err(Error::InvalidConfig(format!(
                    "profile '{}': {msg}",
                    self.name
                )));
            }
        }
        let sigmas = [
            self.cloud_sigma,
            self.temp_sigma,
            self.humidity_sigma,
            self.pressure_sigma,
            self.wind_speed_sigma,
            self.wind_dir_spread_deg,
            self.albedo_sigma,
            self.power_noise,
        ];
        if sigmas.iter().all(|&s| s == 0.0) {
            return Err(Error::InvalidConfig(format!(
                "profile '{}' has zero variance everywhere; nothing stochastic to generate",
                self.name
            )));
        }
        Ok(())
    }
}

/// The profiles shipped with the crate, keyed by name.
///
/// Three distinct climates plus one deliberately overcast one, used as the
/// stress-test target for adaptation: a model trained on `sunny-dry` loses
/// substantial accuracy there before adapting.
pub fn bundled_profiles() -> Vec<LocationProfile> {
    vec![
        LocationProfile {
            name: "sunny-dry".into(),
            capacity_kw: 100.0,
            daylight_swing_hours: 2.6,
            ghi_peak: 980.0,
            cloud_mean: 0.12,
            cloud_sigma: 0.18,
            cloud_persistence: 0.995,
            temp_mean_c: 24.0,
            temp_season_amp: 8.0,
            temp_diurnal_amp: 7.0,
            temp_sigma: 1.2,
            humidity_mean: 28.0,
            humidity_sigma: 7.0,
            pressure_mean_hpa: 1013.0,
            pressure_sigma: 2.5,
            wind_speed_mean: 3.2,
            wind_speed_sigma: 1.2,
            wind_dir_mean_deg: 270.0,
            wind_dir_spread_deg: 25.0,
            albedo_base: 0.22,
            albedo_winter_boost: 0.0,
            albedo_sigma: 0.04,
            power_noise: 0.025,
        },
        LocationProfile {
            name: "humid-subtropical".into(),
            capacity_kw: 100.0,
            daylight_swing_hours: 1.8,
            ghi_peak: 930.0,
            cloud_mean: 0.45,
            cloud_sigma: 0.26,
            cloud_persistence: 0.993,
            temp_mean_c: 24.5,
            temp_season_amp: 6.0,
            temp_diurnal_amp: 5.5,
            temp_sigma: 1.0,
            humidity_mean: 74.0,
            humidity_sigma: 8.0,
            pressure_mean_hpa: 1015.0,
            pressure_sigma: 3.0,
            wind_speed_mean: 3.6,
            wind_speed_sigma: 1.5,
            wind_dir_mean_deg: 140.0,
            wind_dir_spread_deg: 30.0,
            albedo_base: 0.20,
            albedo_winter_boost: 0.0,
            albedo_sigma: 0.03,
            power_noise: 0.03,
        },
        LocationProfile {
            name: "humid-continental".into(),
            capacity_kw: 100.0,
            daylight_swing_hours: 3.4,
            ghi_peak: 890.0,
            cloud_mean: 0.50,
            cloud_sigma: 0.26,
            cloud_persistence: 0.994,
            temp_mean_c: 10.0,
            temp_season_amp: 13.0,
            temp_diurnal_amp: 6.0,
            temp_sigma: 1.4,
            humidity_mean: 64.0,
            humidity_sigma: 10.0,
            pressure_mean_hpa: 1014.0,
            pressure_sigma: 4.0,
            wind_speed_mean: 4.2,
            wind_speed_sigma: 1.8,
            wind_dir_mean_deg: 230.0,
            wind_dir_spread_deg: 35.0,
            albedo_base: 0.20,
            albedo_winter_boost: 0.35,
            albedo_sigma: 0.03,
            power_noise: 0.03,
        },
        LocationProfile {
            name: "humid-cloudy".into(),
            capacity_kw: 100.0,
            daylight_swing_hours: 2.2,
            ghi_peak: 860.0,
            cloud_mean: 0.62,
            cloud_sigma: 0.24,
            cloud_persistence: 0.994,
            temp_mean_c: 16.0,
            temp_season_amp: 7.0,
            temp_diurnal_amp: 4.5,
            temp_sigma: 1.1,
            humidity_mean: 82.0,
            humidity_sigma: 7.0,
            pressure_mean_hpa: 1011.0,
            pressure_sigma: 3.5,
            wind_speed_mean: 5.0,
            wind_speed_sigma: 1.8,
            wind_dir_mean_deg: 100.0,
            wind_dir_spread_deg: 30.0,
            albedo_base: 0.20,
            albedo_winter_boost: 0.0,
            albedo_sigma: 0.03,
            power_noise: 0.03,
        },
    ]
}

/// Looks up a bundled profile by name.
pub fn bundled_profile(name: &str) -> Result<LocationProfile> {
    bundled_profiles()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| {
            let known: Vec<String> = bundled_profiles().into_iter().map(|p| p.name).collect();
            Error::InvalidConfig(format!(
                "unknown profile '{name}' (bundled: {})",
                known.join(", ")
            ))
        })
}

/// Generator output: weather on the half-hour grid, power on the raw
/// 5-minute grid (the resolution mismatch the preparation step resolves).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub weather: TimeSeries,
    pub power: TimeSeries,
}

/// Mean-reverting AR(1) process with a stationary-variance noise scale.
struct Ar1 {
    mean: f64,
    phi: f64,
    noise_scale: f64,
    state: f64,
}

impl Ar1 {
    fn new(mean: f64, sigma: f64, phi: f64, rng: &mut ChaCha8Rng) -> Self {
        let noise_scale = sigma * (1.0 - phi * phi).sqrt();
        // Start from a stationary draw so early samples are not special.
        let z: f64 = rng.sample(StandardNormal);
        Self {
            mean,
            phi,
            noise_scale,
            state: mean + sigma * z,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.state = self.mean + self.phi * (self.state - self.mean) + self.noise_scale * z;
        self.state
    }
}

/// Sine-shaped solar elevation proxy in [0, 1]; exactly 0 outside daylight.
fn solar_elevation(hour: f64, day_length: f64) -> f64 {
    let sunrise = 12.0 - day_length / 2.0;
    if hour <= sunrise || hour >= sunrise + day_length {
        0.0
    } else {
        (std::f64::consts::PI * (hour - sunrise) / day_length).sin()
    }
}

/// Per-unit power from the four causal features, before noise.
///
/// Shared by every location: adaptation problems in this crate are pure
/// covariate shift, never a change of plant physics.
fn plant_output(dni: f64, dhi: f64, ghi: f64, temperature: f64) -> f64 {
    let effective = 0.78 * ghi + 0.14 * dni + 0.08 * dhi;
    let cell = temperature + 0.028 * effective;
    let derate = 1.0 - 0.0045 * (cell - 25.0).max(0.0);
    (effective / 1000.0) * derate
}

/// Generates `n_half_hours` of aligned weather (30-minute) and power
/// (5-minute) data for one location.
pub fn gen_synthetic(
    profile: &LocationProfile,
    n_half_hours: usize,
    seed: u64,
) -> Result<SyntheticData> {
    profile.validate()?;
    if n_half_hours == 0 {
        return Err(Error::InvalidConfig(
            "synthetic generation needs at least one half-hour".into(),
        ));
    }
    let start: NaiveDateTime = "2018-01-01T00:00:00".parse().expect("constant timestamp");
    let steps = n_half_hours * 6;

    let base = Stream::Synth as u64;
    let mut cloud_rng = stream_rng(seed, base);
    let mut temp_rng = stream_rng(seed, base + 1);
    let mut humid_rng = stream_rng(seed, base + 2);
    let mut press_rng = stream_rng(seed, base + 3);
    let mut wind_rng = stream_rng(seed, base + 4);
    let mut dir_rng = stream_rng(seed, base + 5);
    let mut albedo_rng = stream_rng(seed, base + 6);
    let mut power_rng = stream_rng(seed, base + 7);

    let mut cloud = Ar1::new(
        profile.cloud_mean,
        profile.cloud_sigma,
        profile.cloud_persistence,
        &mut cloud_rng,
    );
    let mut temp_noise = Ar1::new(0.0, profile.temp_sigma, 0.999, &mut temp_rng);
    let mut humid_noise = Ar1::new(0.0, profile.humidity_sigma, 0.998, &mut humid_rng);
    let mut pressure = Ar1::new(
        profile.pressure_mean_hpa,
        profile.pressure_sigma,
        0.9995,
        &mut press_rng,
    );
    let mut wind = Ar1::new(
        profile.wind_speed_mean,
        profile.wind_speed_sigma,
        0.995,
        &mut wind_rng,
    );
    let mut wind_dir = Ar1::new(
        profile.wind_dir_mean_deg,
        profile.wind_dir_spread_deg,
        0.995,
        &mut dir_rng,
    );
    let mut albedo_noise = Ar1::new(0.0, profile.albedo_sigma, 0.998, &mut albedo_rng);

    let mut weather5: Vec<Vec<f64>> = vec![Vec::with_capacity(steps); FEATURE_COLUMNS.len()];
    let mut power5: Vec<f64> = Vec::with_capacity(steps);

    for i in 0..steps {
        let t = start + chrono::Duration::minutes(5 * i as i64);
        let doy = t.ordinal() as f64;
        let hour = t.hour() as f64 + t.minute() as f64 / 60.0;
        // +1 at the June solstice, -1 at the December one.
        let season = (2.0 * std::f64::consts::PI * (doy - 172.0) / 365.25).cos();
        let day_length = 12.0 + profile.daylight_swing_hours * season;
        let elevation = solar_elevation(hour, day_length);

        let c = cloud.next(&mut cloud_rng).clamp(0.0, 1.0);
        let ghi_clear = profile.ghi_peak * (1.0 + 0.08 * season) * elevation.powf(1.15);
        let ghi = ghi_clear * (1.0 - 0.75 * c.powf(1.4));
        let diffuse_fraction = (0.16 + 0.74 * c).min(0.95);
        let dhi = ghi * diffuse_fraction;
        let dni = ((ghi - dhi) / elevation.max(0.12)).min(1050.0);

        let diurnal = (2.0 * std::f64::consts::PI * (hour - 9.0) / 24.0).sin();
        let temperature = profile.temp_mean_c
            + profile.temp_season_amp * season
            + profile.temp_diurnal_amp * diurnal * (0.6 + 0.4 * (1.0 - c))
            + temp_noise.next(&mut temp_rng);

        let humidity = (profile.humidity_mean
            + 30.0 * (c - profile.cloud_mean)
            + humid_noise.next(&mut humid_rng))
        .clamp(3.0, 100.0);
        let dew_point = temperature - (100.0 - humidity) / 5.0;
        let press = pressure.next(&mut press_rng);
        let wind_speed = wind.next(&mut wind_rng).max(0.0);
        let direction = wind_dir.next(&mut dir_rng).rem_euclid(360.0);
        let winter = (-season).max(0.0);
        let snow = profile.albedo_winter_boost * winter / (1.0 + (temperature / 2.0).exp());
        let albedo =
            (profile.albedo_base + snow + albedo_noise.next(&mut albedo_rng)).clamp(0.05, 0.95);

        let z: f64 = power_rng.sample(StandardNormal);
        let effective = 0.78 * ghi + 0.14 * dni + 0.08 * dhi;
        let noise_gate = (effective / 150.0).min(1.0);
        let per_unit = (plant_output(dni, dhi, ghi, temperature)
            + profile.power_noise * z * noise_gate)
            .clamp(0.0, 1.0);
        power5.push(profile.capacity_kw * per_unit);

        let row = [
            dni,
            dhi,
            ghi,
            temperature,
            humidity,
            dew_point,
            press,
            wind_speed,
            direction,
            albedo,
        ];
        for (col, v) in weather5.iter_mut().zip(row) {
            col.push(v);
        }
    }

    let weather_columns: Vec<(String, Vec<f64>)> = FEATURE_COLUMNS
        .iter()
        .map(|&n| n.to_string())
        .zip(weather5)
        .collect();
    let weather = TimeSeries::from_columns(start, 5, weather_columns)?.resample_mean(30)?;
    let power = TimeSeries::from_columns(start, 5, vec![(POWER_COLUMN.into(), power5)])?;
    Ok(SyntheticData { weather, power })
}

/// Convenience: generates, resamples power to the half-hour grid, and merges
/// into an unlabeled, unsplit [`Dataset`] with per-unit power.
pub fn synthetic_dataset(
    profile: &LocationProfile,
    n_half_hours: usize,
    seed: u64,
) -> Result<Dataset> {
    let data = gen_synthetic(profile, n_half_hours, seed)?;
    let power30 = data.power.resample_mean(30)?;
    Dataset::from_series(&data.weather, &power30, profile.capacity_kw, &profile.name)
}
