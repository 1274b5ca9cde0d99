use std::collections::BTreeMap;
use std::f64::consts::TAU;

use chrono::{DateTime, TimeDelta, Utc};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SeriesFrame;
use crate::error::{Error, Result};

/// Parameters of the synthetic price generator.
///
/// ```text
/// y_t = mean
///     + daily_amplitude  * sin(2 pi t / daily_period)
///     + weekly_amplitude * sin(2 pi t / weekly_period)
///     + a_t                              (AR(p) on the deviation)
///     + exog_coef * wind_t               (wind_t: unit-variance AR(1), phi = 0.9)
///     + spike_t                          (Bernoulli(spike_prob) * spike_scale * Exp(1))
/// a_t = sum_i ar[i] a_{t-1-i} + sigma_t e_t,   e_t ~ N(0, 1)
/// sigma_t = noise_scale * (1 + noise_drift * t / n)
/// ```
///
/// Noise, spikes and the exogenous driver use independent random streams, so
/// switching one component off leaves the draws of the others unchanged.
/// The `wind_fc` column is always emitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub n: usize,
    pub mean: f64,
    pub ar: Vec<f64>,
    pub daily_period: usize,
    pub weekly_period: usize,
    pub daily_amplitude: f64,
    pub weekly_amplitude: f64,
    pub noise_scale: f64,
    pub noise_drift: f64,
    pub spike_prob: f64,
    pub spike_scale: f64,
    pub exog_coef: f64,
    pub period_minutes: i64,
    pub start: DateTime<Utc>,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n: 24 * 7 * 8,
            mean: 55.0,
            ar: vec![0.6, 0.2],
            daily_period: 24,
            weekly_period: 168,
            daily_amplitude: 15.0,
            weekly_amplitude: 5.0,
            noise_scale: 8.0,
            noise_drift: 0.0,
            spike_prob: 0.0,
            spike_scale: 0.0,
            exog_coef: 0.0,
            period_minutes: 60,
            start: DateTime::parse_from_rfc3339("2021-01-01T00:00:00Z")
                .expect("valid literal")
                .with_timezone(&Utc),
        }
    }
}

const BURN_IN: usize = 200;

/// Largest modulus among the AR companion-matrix eigenvalues.
pub fn ar_spectral_radius(ar: &[f64]) -> f64 {
    let p = ar.len();
    if p == 0 {
        return 0.0;
    }
    let m = DMatrix::from_fn(p, p, |r, c| if r == 0 { ar[c] } else if r == c + 1 { 1.0 } else { 0.0 });
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("synthetic series needs n >= 1".into()));
        }
        if self.ar.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("AR coefficients must be finite".into()));
        }
        let rho = ar_spectral_radius(&self.ar);
        if !(rho < 1.0) {
            return Err(Error::Config(format!("AR coefficients are not stationary (spectral radius {rho:.4})")));
        }
        if self.daily_period == 0 || self.weekly_period == 0 {
            return Err(Error::Config("seasonal periods must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.spike_prob) {
            return Err(Error::Config("spike probability must lie in [0, 1]".into()));
        }
        if self.noise_scale < 0.0 || self.spike_scale < 0.0 {
            return Err(Error::Config("noise and spike scales must be non-negative".into()));
        }
        if self.period_minutes <= 0 {
            return Err(Error::Config("period_minutes must be positive".into()));
        }
        Ok(())
    }
}

pub fn synth_series(params: &SynthParams, seed: u64) -> Result<SeriesFrame> {
    params.validate()?;
    let n = params.n;
    let p = params.ar.len();

    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(0);
    let mut spike_rng = ChaCha8Rng::seed_from_u64(seed);
    spike_rng.set_stream(1);
    let mut exog_rng = ChaCha8Rng::seed_from_u64(seed);
    exog_rng.set_stream(2);

    let mut dev = vec![0.0; BURN_IN + n];
    for t in 0..BURN_IN + n {
        let e: f64 = noise_rng.sample(StandardNormal);
        let sigma = if t < BURN_IN {
            params.noise_scale
        } else {
            params.noise_scale * (1.0 + params.noise_drift * (t - BURN_IN) as f64 / n as f64)
        };
        let ar: f64 = (0..p).filter(|&i| t > i).map(|i| params.ar[i] * dev[t - 1 - i]).sum();
        dev[t] = ar + sigma * e;
    }

    let phi = 0.9f64;
    let innov = (1.0 - phi * phi).sqrt();
    let mut wind = vec![0.0; n];
    let mut w: f64 = exog_rng.sample(StandardNormal);
    for slot in wind.iter_mut() {
        *slot = w;
        let e: f64 = exog_rng.sample(StandardNormal);
        w = phi * w + innov * e;
    }

    let mut target = Vec::with_capacity(n);
    for t in 0..n {
        let tf = t as f64;
        let season = params.daily_amplitude * (TAU * tf / params.daily_period as f64).sin()
            + params.weekly_amplitude * (TAU * tf / params.weekly_period as f64).sin();
        let u: f64 = spike_rng.random();
        let m: f64 = spike_rng.sample(Exp1);
        let spike = if u < params.spike_prob { params.spike_scale * m } else { 0.0 };
        target.push(params.mean + season + dev[BURN_IN + t] + params.exog_coef * wind[t] + spike);
    }

    let period = TimeDelta::minutes(params.period_minutes);
    let timestamps = (0..n).map(|i| params.start + period * i as i32).collect();
    let mut covariates = BTreeMap::new();
    covariates.insert("wind_fc".to_string(), wind);
    SeriesFrame::new(timestamps, Some(period), "price", target, covariates)
}
