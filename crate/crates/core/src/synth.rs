//! Seeded synthetic markets and vessel tracks.
//!
//! Every generator draws from `ChaCha8Rng::seed_from_u64(seed)`, whose
//! output stream is fixed by its algorithm and independent of platform, so a
//! seed reproduces the same frame bit for bit. Ground-truth parameters are
//! written into the frame metadata for recovery tests.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spatial::{bearing_deg, imo_with_check_digit, CargoStatus, GeoPoint, PortRegion, VesselRecord, EARTH_RADIUS_KM};
use crate::timeseries::TimeSeriesFrame;

pub const TARGET: &str = "freight_index";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("{needed} weeks needed, {available} requested")]
    InsufficientData { needed: usize, available: usize },
    #[error("invalid generator configuration: {0}")]
    InvalidConfig(String),
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2015, 1, 5).expect("valid date")
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn weekly_index(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    (0..n).map(|i| start + Duration::weeks(i as i64)).collect()
}

fn build_frame(
    start: NaiveDate,
    variables: Vec<String>,
    columns: Vec<Vec<f64>>,
    metadata: BTreeMap<String, f64>,
) -> Result<TimeSeriesFrame, SynthError> {
    let n = columns[0].len();
    let rows = (0..n).map(|t| columns.iter().map(|c| Some(c[t])).collect()).collect();
    TimeSeriesFrame::new(weekly_index(start, n), variables, rows)
        .map(|f| f.with_metadata(metadata))
        .map_err(|e| SynthError::InvalidConfig(e.to_string()))
}

/// One exogenous driver: a stationary AR(1) around `mean` with marginal
/// standard deviation `scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExogProcess {
    pub name: String,
    pub coefficient: f64,
    pub mean: f64,
    pub scale: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMarketConfig {
    pub seed: u64,
    pub n_weeks: usize,
    pub start: NaiveDate,
    pub intercept: f64,
    pub noise_sigma: f64,
    pub exogenous: Vec<ExogProcess>,
}

impl Default for LinearMarketConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_weeks: 260,
            start: default_start(),
            intercept: 10.0,
            noise_sigma: 0.5,
            exogenous: vec![
                ExogProcess {
                    name: "brazil_loadings".into(),
                    coefficient: 0.001,
                    mean: 6000.0,
                    scale: 800.0,
                    phi: 0.7,
                },
                ExogProcess {
                    name: "iron_ore_price".into(),
                    coefficient: 0.05,
                    mean: 110.0,
                    scale: 12.0,
                    phi: 0.9,
                },
            ],
        }
    }
}

impl LinearMarketConfig {
    /// `k` generic drivers `x1..xk` with coefficients 1, -2, 3, ...
    pub fn with_exog_count(mut self, k: usize) -> Self {
        self.exogenous = (1..=k)
            .map(|i| ExogProcess {
                name: format!("x{i}"),
                coefficient: if i % 2 == 0 { -(i as f64) } else { i as f64 },
                mean: 0.0,
                scale: 1.0,
                phi: 0.5,
            })
            .collect();
        self
    }
}

fn ar1_path(rng: &mut ChaCha8Rng, n: usize, mean: f64, scale: f64, phi: f64) -> Vec<f64> {
    let innovation = scale * (1.0 - phi * phi).sqrt();
    let mut x = mean + scale * normal(rng);
    (0..n)
        .map(|_| {
            let out = x;
            x = mean + phi * (x - mean) + innovation * normal(rng);
            out
        })
        .collect()
}

/// `freight_index = intercept + Σ coefficient·driver + N(0, noise_sigma²)`.
///
/// Metadata keys: `intercept`, `noise_sigma`, `coef:<driver>`.
pub fn gen_linear_market(cfg: &LinearMarketConfig) -> Result<TimeSeriesFrame, SynthError> {
    let needed = cfg.exogenous.len() + 2;
    if cfg.n_weeks < needed {
        return Err(SynthError::InsufficientData {
            needed,
            available: cfg.n_weeks,
        });
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite()) {
        return Err(SynthError::InvalidConfig("noise_sigma must be non-negative".into()));
    }
    for p in &cfg.exogenous {
        if p.phi.is_nan() || p.phi.abs() >= 1.0 || p.scale < 0.0 || p.name == TARGET {
            return Err(SynthError::InvalidConfig(format!("driver `{}` needs |phi| < 1, scale >= 0", p.name)));
        }
    }
    let mut rng = rng(cfg.seed);
    let drivers: Vec<Vec<f64>> = cfg
        .exogenous
        .iter()
        .map(|p| ar1_path(&mut rng, cfg.n_weeks, p.mean, p.scale, p.phi))
        .collect();
    let target: Vec<f64> = (0..cfg.n_weeks)
        .map(|t| {
            let signal: f64 = cfg
                .exogenous
                .iter()
                .zip(&drivers)
                .map(|(p, x)| p.coefficient * x[t])
                .sum();
            cfg.intercept + signal + cfg.noise_sigma * normal(&mut rng)
        })
        .collect();

    let mut metadata = BTreeMap::from([
        ("intercept".to_string(), cfg.intercept),
        ("noise_sigma".to_string(), cfg.noise_sigma),
    ]);
    for p in &cfg.exogenous {
        metadata.insert(format!("coef:{}", p.name), p.coefficient);
    }
    let variables = std::iter::once(TARGET.to_string())
        .chain(cfg.exogenous.iter().map(|p| p.name.clone()))
        .collect();
    let columns = std::iter::once(target).chain(drivers).collect();
    build_frame(cfg.start, variables, columns, metadata)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CointegratedConfig {
    pub seed: u64,
    pub n_weeks: usize,
    pub start: NaiveDate,
    pub variables: Vec<String>,
    /// Cointegrating vector; the first entry must be 1.
    pub beta: Vec<f64>,
    /// Adjustment speeds, one per variable.
    pub alpha: Vec<f64>,
    pub sigma: f64,
    /// Long-run mean of the spread `β'y`.
    pub spread_mean: f64,
    pub initial_level: f64,
}

impl Default for CointegratedConfig {
    fn default() -> Self {
        Self {
            seed: 3,
            n_weeks: 2000,
            start: default_start(),
            variables: vec![TARGET.to_string(), "bunker_price".to_string()],
            beta: vec![1.0, -1.0],
            alpha: vec![-0.2, 0.1],
            sigma: 1.0,
            spread_mean: 2.0,
            initial_level: 100.0,
        }
    }
}

/// Simulates `Δy_t = α (β'y_{t-1} − spread_mean) + ε_t`, `ε ~ N(0, σ² I)`.
///
/// With `α = 0` the spread is a pure random walk. Metadata keys:
/// `beta:<var>`, `alpha:<var>`, `sigma`, `spread_mean`.
pub fn gen_cointegrated(cfg: &CointegratedConfig) -> Result<TimeSeriesFrame, SynthError> {
    let m = cfg.variables.len();
    if m < 2 || cfg.beta.len() != m || cfg.alpha.len() != m {
        return Err(SynthError::InvalidConfig(
            "variables, beta and alpha need equal length of at least 2".into(),
        ));
    }
    if cfg.beta[0] != 1.0 {
        return Err(SynthError::InvalidConfig("beta must be normalized with a leading 1".into()));
    }
    let contraction: f64 = cfg.alpha.iter().zip(&cfg.beta).map(|(a, b)| a * b).sum();
    if !(-2.0 < contraction && contraction <= 0.0) {
        return Err(SynthError::InvalidConfig(format!(
            "beta'alpha = {contraction} gives an explosive spread"
        )));
    }
    if !(cfg.sigma >= 0.0 && cfg.sigma.is_finite()) {
        return Err(SynthError::InvalidConfig("sigma must be non-negative".into()));
    }
    if cfg.n_weeks < 2 {
        return Err(SynthError::InsufficientData {
            needed: 2,
            available: cfg.n_weeks,
        });
    }

    let mut rng = rng(cfg.seed);
    let mut level = vec![cfg.initial_level; m];
    let rest: f64 = cfg.beta[1..].iter().map(|b| b * cfg.initial_level).sum();
    level[0] = cfg.spread_mean - rest;
    let mut columns = vec![Vec::with_capacity(cfg.n_weeks); m];
    for _ in 0..cfg.n_weeks {
        for (c, v) in columns.iter_mut().zip(&level) {
            c.push(*v);
        }
        let spread: f64 = cfg.beta.iter().zip(&level).map(|(b, y)| b * y).sum::<f64>() - cfg.spread_mean;
        for (y, a) in level.iter_mut().zip(&cfg.alpha) {
            *y += a * spread + cfg.sigma * normal(&mut rng);
        }
    }

    let mut metadata = BTreeMap::from([
        ("sigma".to_string(), cfg.sigma),
        ("spread_mean".to_string(), cfg.spread_mean),
    ]);
    for ((v, b), a) in cfg.variables.iter().zip(&cfg.beta).zip(&cfg.alpha) {
        metadata.insert(format!("beta:{v}"), *b);
        metadata.insert(format!("alpha:{v}"), *a);
    }
    build_frame(cfg.start, cfg.variables.clone(), columns, metadata)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ar1Config {
    pub seed: u64,
    pub n_weeks: usize,
    pub start: NaiveDate,
    pub phi: f64,
    pub sigma: f64,
    pub mean: f64,
}

impl Default for Ar1Config {
    fn default() -> Self {
        Self {
            seed: 11,
            n_weeks: 2000,
            start: default_start(),
            phi: 0.6,
            sigma: 1.0,
            mean: 0.0,
        }
    }
}

/// Univariate `y_t − μ = φ (y_{t-1} − μ) + ε_t` started at its mean.
///
/// Metadata keys: `phi`, `sigma`, `mean`.
pub fn gen_ar1(cfg: &Ar1Config) -> Result<TimeSeriesFrame, SynthError> {
    if cfg.phi.is_nan() || cfg.phi.abs() >= 1.0 {
        return Err(SynthError::InvalidConfig("|phi| must be below 1".into()));
    }
    if cfg.n_weeks < 2 {
        return Err(SynthError::InsufficientData {
            needed: 2,
            available: cfg.n_weeks,
        });
    }
    let mut rng = rng(cfg.seed);
    let mut y = cfg.mean;
    let series: Vec<f64> = (0..cfg.n_weeks)
        .map(|_| {
            y = cfg.mean + cfg.phi * (y - cfg.mean) + cfg.sigma * normal(&mut rng);
            y
        })
        .collect();
    let metadata = BTreeMap::from([
        ("phi".to_string(), cfg.phi),
        ("sigma".to_string(), cfg.sigma),
        ("mean".to_string(), cfg.mean),
    ]);
    build_frame(cfg.start, vec![TARGET.to_string()], vec![series], metadata)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselConfig {
    pub seed: u64,
    pub n_weeks: usize,
    pub start: NaiveDate,
    pub approaching_ballast: usize,
    pub approaching_laden: usize,
    pub departing_ballast: usize,
    pub reports_per_week: usize,
}

impl Default for VesselConfig {
    fn default() -> Self {
        Self {
            seed: 5,
            n_weeks: 12,
            start: default_start(),
            approaching_ballast: 6,
            approaching_laden: 4,
            departing_ballast: 3,
            reports_per_week: 3,
        }
    }
}

/// Point reached from `origin` after `distance_km` along initial bearing
/// `bearing` (degrees), longitude folded into (−180, 180].
fn destination(origin: GeoPoint, bearing: f64, distance_km: f64) -> GeoPoint {
    let delta = distance_km / EARTH_RADIUS_KM;
    let theta = bearing.to_radians();
    let (phi1, lambda1) = (origin.lat.to_radians(), origin.lon.to_radians());
    let phi2 = (phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * theta.cos()).asin();
    let lambda2 = lambda1 + (theta.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * phi2.sin());
    let mut lon = lambda2.to_degrees();
    while lon <= -180.0 {
        lon += 360.0;
    }
    while lon > 180.0 {
        lon -= 360.0;
    }
    GeoPoint::new(phi2.to_degrees().clamp(-90.0, 90.0), lon)
}

/// Straight radial tracks around `port`, every track reporting
/// `reports_per_week` times in each of `n_weeks` weeks and never entering the
/// port radius.
///
/// Approaching tracks steer exactly at the port centre, departing tracks
/// exactly away from it, so `aggregate_supply` with any tolerance below 180
/// counts `approaching_ballast` vessels in every week. IMOs are unique and
/// carry valid check digits.
pub fn gen_vessels(cfg: &VesselConfig, port: &PortRegion) -> Result<Vec<VesselRecord>, SynthError> {
    port.validate().map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    if cfg.n_weeks == 0 || cfg.reports_per_week == 0 {
        return Err(SynthError::InsufficientData {
            needed: 1,
            available: cfg.n_weeks.min(cfg.reports_per_week),
        });
    }
    let mut rng = rng(cfg.seed);
    let tracks = cfg.approaching_ballast + cfg.approaching_laden + cfg.departing_ballast;
    let mut imos = BTreeSet::new();
    let mut ordered = Vec::with_capacity(tracks);
    while ordered.len() < tracks {
        let imo = imo_with_check_digit(rng.random_range(100_000..=999_999)).expect("six-digit prefix");
        if imos.insert(imo) {
            ordered.push(imo);
        }
    }

    let reports = cfg.n_weeks * cfg.reports_per_week;
    let slot = Duration::minutes(7 * 24 * 60 / cfg.reports_per_week as i64);
    let origin: DateTime<Utc> = cfg.start.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
    let mut out = Vec::with_capacity(tracks * reports);
    for (track, imo) in ordered.into_iter().enumerate() {
        let (status, inbound) = if track < cfg.approaching_ballast {
            (CargoStatus::Ballast, true)
        } else if track < cfg.approaching_ballast + cfg.approaching_laden {
            (CargoStatus::Laden, true)
        } else {
            (CargoStatus::Ballast, false)
        };
        let radial = rng.random_range(0.0..360.0);
        let near = port.radius_km + rng.random_range(50.0..150.0);
        let far = near + rng.random_range(300.0..900.0);
        let step_km = (far - near) / reports as f64;
        let hours_per_slot = slot.num_minutes() as f64 / 60.0;
        let speed_knots = step_km / hours_per_slot / 1.852;
        for r in 0..reports {
            let travelled = step_km * r as f64;
            let distance = if inbound { far - travelled } else { near + travelled };
            let position = destination(port.center, radial, distance);
            let to_port = bearing_deg(position, port.center).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
            let heading = if inbound { to_port } else { (to_port + 180.0) % 360.0 };
            let jitter = Duration::minutes(rng.random_range(0..slot.num_minutes().max(1)));
            out.push(VesselRecord {
                imo,
                timestamp: origin + slot * r as i32 + jitter,
                lat: position.lat,
                lon: position.lon,
                heading,
                speed_knots,
                cargo_status: status,
            });
        }
    }
    out.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then(a.imo.cmp(&b.imo)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fit, Hyperparams, ModelSpec, Parameters};
    use crate::spatial::{aggregate_supply, imo_is_valid};

    #[test]
    fn noiseless_market_is_exactly_linear() {
        let cfg = LinearMarketConfig {
            noise_sigma: 0.0,
            n_weeks: 80,
            ..Default::default()
        };
        let f = gen_linear_market(&cfg).unwrap();
        assert_eq!(f.variables(), [TARGET, "brazil_loadings", "iron_ore_price"]);
        assert_eq!(f.metadata()["coef:brazil_loadings"], 0.001);
        let spec = ModelSpec::new(TARGET, &["brazil_loadings", "iron_ore_price"], Hyperparams::Mlr);
        let Parameters::Mlr(p) = fit(&f, &spec).unwrap().parameters else {
            unreachable!()
        };
        assert!((p.intercept - 10.0).abs() < 1e-9);
        assert!((p.coefficients["brazil_loadings"] - 0.001).abs() < 1e-9);
        assert!((p.coefficients["iron_ore_price"] - 0.05).abs() < 1e-9);
    }

    #[test]
    fn replay_is_identical() {
        let cfg = LinearMarketConfig::default();
        assert_eq!(gen_linear_market(&cfg).unwrap(), gen_linear_market(&cfg).unwrap());
        let other = LinearMarketConfig { seed: 8, ..cfg.clone() };
        assert_ne!(gen_linear_market(&cfg).unwrap(), gen_linear_market(&other).unwrap());
        let c = CointegratedConfig::default();
        assert_eq!(gen_cointegrated(&c).unwrap(), gen_cointegrated(&c).unwrap());
    }

    #[test]
    fn too_few_weeks_for_drivers() {
        let cfg = LinearMarketConfig {
            n_weeks: 3,
            ..Default::default()
        }
        .with_exog_count(5);
        assert_eq!(
            gen_linear_market(&cfg).unwrap_err(),
            SynthError::InsufficientData { needed: 7, available: 3 }
        );
    }

    /// Engle-Granger first step by hand: regress the target on the other
    /// series with an intercept via the 2x2 normal equations.
    fn eg_slope(f: &TimeSeriesFrame) -> f64 {
        let y: Vec<f64> = f.column(TARGET).unwrap().into_iter().flatten().collect();
        let x: Vec<f64> = f.column("bunker_price").unwrap().into_iter().flatten().collect();
        let n = y.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        sxy / sxx
    }

    #[test]
    fn cointegrating_vector_recovered() {
        let f = gen_cointegrated(&CointegratedConfig::default()).unwrap();
        // y0 = c + b*y1 implies beta = (1, -b).
        let beta2 = -eg_slope(&f);
        assert!((beta2 + 1.0).abs() < 0.05, "beta2 = {beta2}");
    }

    #[test]
    fn zero_alpha_spread_wanders() {
        let cfg = CointegratedConfig {
            alpha: vec![0.0, 0.0],
            ..Default::default()
        };
        let f = gen_cointegrated(&cfg).unwrap();
        let y = f.column(TARGET).unwrap();
        let x = f.column("bunker_price").unwrap();
        let spread: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a.unwrap() - b.unwrap()).collect();
        // Lag-one autocorrelation of a random walk stays near 1.
        let n = spread.len() as f64;
        let m = spread.iter().sum::<f64>() / n;
        let num: f64 = spread.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        let den: f64 = spread.iter().map(|v| (v - m).powi(2)).sum();
        assert!(num / den > 0.95);
    }

    #[test]
    fn explosive_alpha_rejected() {
        let cfg = CointegratedConfig {
            alpha: vec![0.5, 0.0],
            ..Default::default()
        };
        assert!(matches!(gen_cointegrated(&cfg), Err(SynthError::InvalidConfig(_))));
    }

    #[test]
    fn ar1_sample_autocorrelation() {
        let f = gen_ar1(&Ar1Config::default()).unwrap();
        let y: Vec<f64> = f.column(TARGET).unwrap().into_iter().flatten().collect();
        let num: f64 = y.windows(2).map(|w| w[0] * w[1]).sum();
        let den: f64 = y.iter().map(|v| v * v).sum();
        assert!((num / den - 0.6).abs() < 0.05);
    }

    fn port() -> PortRegion {
        PortRegion::new("Tubarao", GeoPoint::new(-20.29, -40.24), 40.0).unwrap()
    }

    #[test]
    fn vessel_supply_counts_configured_tracks() {
        let cfg = VesselConfig::default();
        let records = gen_vessels(&cfg, &port()).unwrap();
        assert_eq!(records.len(), 13 * 12 * 3);
        assert!(records.iter().all(|r| imo_is_valid(r.imo) && r.validate().is_ok()));
        let imos: BTreeSet<u32> = records.iter().map(|r| r.imo).collect();
        assert_eq!(imos.len(), 13);

        let frame = aggregate_supply(&records, &port(), 45.0).unwrap();
        assert_eq!(frame.len(), 12);
        assert!(frame.rows().iter().all(|r| r[0] == Some(6.0)));
    }

    #[test]
    fn all_laden_counts_zero() {
        let cfg = VesselConfig {
            approaching_ballast: 0,
            departing_ballast: 0,
            approaching_laden: 5,
            ..Default::default()
        };
        let frame = aggregate_supply(&gen_vessels(&cfg, &port()).unwrap(), &port(), 45.0).unwrap();
        assert!(frame.rows().iter().all(|r| r[0] == Some(0.0)));
    }
}
