//! Phase-scanned homodyne noise-power traces as recorded by a spectrum
//! analyzer in zero-span mode.
//!
//! Each displayed point of a zero-span measurement is the band power within
//! the resolution bandwidth, smoothed by the video filter. Its fluctuation is
//! modelled as the mean of `N = RBW / VBW` independent noise periodograms.
//! Each periodogram bin of Gaussian noise is exponentially distributed, so
//! the displayed point is the quadrature variance times a `Gamma(N, 1/N)`
//! factor (`chi^2(2N) / 2N`): unit mean, relative variance `1/N`.

use std::f64::consts::{LN_10, PI, TAU};
use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::Serialize;

use crate::chain::PumpSqueezeModel;
use crate::error::{invalid, Error, Result};
use crate::gaussian::{from_db, to_db};

/// Half-width of the phase window averaged around each extremum.
pub const DEFAULT_EXTREMA_WINDOW_RAD: f64 = 0.05;

/// Local-oscillator ramp and spectrum-analyzer settings.
///
/// The ramp period, duration and sample rate are free choices; only the
/// RBW/VBW pair controls the per-sample statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanConfig {
    /// Seconds per 2 pi of LO phase.
    pub ramp_period_s: f64,
    pub duration_s: f64,
    pub rbw_hz: f64,
    pub vbw_hz: f64,
    /// Analysis frequency; recorded only.
    pub analysis_freq_hz: f64,
    pub sample_rate_hz: f64,
    pub phase_offset_rad: f64,
    pub seed: u64,
    /// Optional additive electronic noise floor, in dB relative to shot noise
    /// (e.g. `-15.6`). `None` leaves electronic noise folded into `eta`.
    pub electronic_floor_db: Option<f64>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            ramp_period_s: 0.5,
            duration_s: 5.0,
            rbw_hz: 300e3,
            vbw_hz: 30.0,
            analysis_freq_hz: 2e6,
            sample_rate_hz: 1000.0,
            phase_offset_rad: 0.0,
            seed: 1,
            electronic_floor_db: None,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ramp_period_s", self.ramp_period_s),
            ("duration_s", self.duration_s),
            ("rbw_hz", self.rbw_hz),
            ("vbw_hz", self.vbw_hz),
            ("sample_rate_hz", self.sample_rate_hz),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !self.phase_offset_rad.is_finite() || !self.analysis_freq_hz.is_finite() {
            return Err(invalid("phase offset and analysis frequency must be finite"));
        }
        if self.vbw_hz > self.rbw_hz {
            return Err(invalid(format!(
                "vbw_hz ({}) must not exceed rbw_hz ({})",
                self.vbw_hz, self.rbw_hz
            )));
        }
        if self.sample_rate_hz < 2.0 * self.vbw_hz {
            return Err(invalid(format!(
                "sample_rate_hz ({}) must be at least 2 * vbw_hz ({})",
                self.sample_rate_hz,
                2.0 * self.vbw_hz
            )));
        }
        if let Some(floor) = self.electronic_floor_db {
            if !floor.is_finite() {
                return Err(invalid("electronic floor must be finite"));
            }
        }
        Ok(())
    }

    /// Effective number of averaged periodograms per displayed point.
    pub fn averages(&self) -> u64 {
        ((self.rbw_hz / self.vbw_hz).round() as u64).max(1)
    }

    pub fn n_samples(&self) -> usize {
        ((self.duration_s * self.sample_rate_hz).floor() as usize).max(1)
    }

    pub fn phase_at(&self, t: f64) -> f64 {
        self.phase_offset_rad + TAU * t / self.ramp_period_s
    }
}

/// A synthesized noise-power record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub times_s: Vec<f64>,
    pub phases_rad: Vec<f64>,
    /// Noise power in dB relative to shot noise.
    pub power_db: Vec<f64>,
    pub shot_ref_db: f64,
    pub config: ScanConfig,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.power_db.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power_db.is_empty()
    }

    pub fn linear_power(&self) -> Vec<f64> {
        self.power_db.iter().map(|&db| from_db(db)).collect()
    }

    /// Mean taken over linear power, reported in dB.
    pub fn mean_power_db(&self) -> f64 {
        let lin = self.linear_power();
        10.0 * (lin.iter().sum::<f64>() / lin.len() as f64).log10()
    }

    /// Sample standard deviation of the dB samples.
    pub fn std_power_db(&self) -> f64 {
        let n = self.len() as f64;
        let mean = self.power_db.iter().sum::<f64>() / n;
        let ss: f64 = self.power_db.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1.0)).sqrt()
    }

    /// `time_s,phase_rad,power_db` with a header line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time_s,phase_rad,power_db")?;
        for ((t, ph), p) in self.times_s.iter().zip(&self.phases_rad).zip(&self.power_db) {
            writeln!(w, "{t:?},{ph:?},{p:?}")?;
        }
        Ok(())
    }
}

/// Draws a zero-span trace for `model` pumped at `power_mw`.
pub fn synthesize_trace(model: &PumpSqueezeModel, power_mw: f64, config: &ScanConfig) -> Result<Trace> {
    config.validate()?;
    let averages = config.averages() as f64;
    // Mean of N unit-mean exponential periodogram bins.
    let gain_dist = Gamma::new(averages, 1.0 / averages).map_err(|e| invalid(e.to_string()))?;
    let floor = config.electronic_floor_db.map(from_db).unwrap_or(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let n = config.n_samples();
    let mut times_s = Vec::with_capacity(n);
    let mut phases_rad = Vec::with_capacity(n);
    let mut power_db = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / config.sample_rate_hz;
        let theta = config.phase_at(t);
        let mean = model.measured_variance(power_mw, theta)? + floor;
        let gain = gain_dist.sample(&mut rng);
        times_s.push(t);
        phases_rad.push(theta);
        power_db.push(to_db(mean * gain)?);
    }
    Ok(Trace {
        times_s,
        phases_rad,
        power_db,
        shot_ref_db: 0.0,
        config: *config,
    })
}

/// Single-pole low-pass on linear power with its -3 dB point at `vbw_hz`.
pub fn video_filter(trace: &Trace, vbw_hz: f64) -> Result<Trace> {
    let fs = trace.config.sample_rate_hz;
    if !(vbw_hz > 0.0 && vbw_hz <= fs / 2.0) {
        return Err(invalid(format!(
            "video bandwidth {vbw_hz} Hz must lie in (0, {}] Hz",
            fs / 2.0
        )));
    }
    if vbw_hz > trace.config.rbw_hz {
        return Err(invalid(format!(
            "video bandwidth {vbw_hz} Hz exceeds the resolution bandwidth {} Hz",
            trace.config.rbw_hz
        )));
    }
    let alpha = 1.0 - (-TAU * vbw_hz / fs).exp();
    let mut state = None;
    let power_db = trace
        .linear_power()
        .into_iter()
        .map(|x| {
            let y = match state {
                None => x,
                Some(prev) => prev + alpha * (x - prev),
            };
            state = Some(y);
            to_db(y)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut config = trace.config;
    config.vbw_hz = vbw_hz;
    Ok(Trace {
        power_db,
        config,
        ..trace.clone()
    })
}

/// Squeezing and anti-squeezing levels read off a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Extrema {
    pub squeezing_db: f64,
    pub squeezing_se_db: f64,
    pub antisqueezing_db: f64,
    pub antisqueezing_se_db: f64,
    /// LO phase (mod pi) of the squeezed quadrature.
    pub squeezing_phase_rad: f64,
    pub antisqueezing_phase_rad: f64,
    pub samples_per_extremum: (usize, usize),
}

pub fn estimate_extrema(trace: &Trace) -> Result<Extrema> {
    estimate_extrema_with_window(trace, DEFAULT_EXTREMA_WINDOW_RAD)
}

/// Locates the extremal LO phases from a least-squares fit of
/// `a + b cos 2theta + c sin 2theta` to linear power, then averages the
/// samples within `window_rad` of each. The fitted curvature across the
/// window is subtracted before averaging.
pub fn estimate_extrema_with_window(trace: &Trace, window_rad: f64) -> Result<Extrema> {
    if !(window_rad > 0.0 && window_rad < PI / 2.0) {
        return Err(invalid(format!("window must lie in (0, pi/2), got {window_rad}")));
    }
    let covered = trace.len() as f64 / trace.config.sample_rate_hz;
    if trace.len() < 3 || covered + 1e-12 < trace.config.ramp_period_s {
        return Err(Error::InsufficientData(format!(
            "trace spans {covered} s, less than one {} s phase period",
            trace.config.ramp_period_s
        )));
    }
    let lin = trace.linear_power();
    let coef = fit_sinusoid(&trace.phases_rad, &lin)?;
    let model = |theta: f64| coef[0] + coef[1] * (2.0 * theta).cos() + coef[2] * (2.0 * theta).sin();

    let phase_max = 0.5 * coef[2].atan2(coef[1]);
    let phase_min = phase_max + PI / 2.0;

    let window_mean = |target: f64| -> Result<(f64, f64, usize)> {
        let reference = model(target);
        let picked: Vec<f64> = trace
            .phases_rad
            .iter()
            .zip(&lin)
            .filter(|(theta, _)| wrap_half_period(**theta - target).abs() <= window_rad)
            .map(|(theta, x)| x - (model(*theta) - reference))
            .collect();
        let n = picked.len();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "only {n} sample(s) fall within +-{window_rad} rad of an extremum"
            )));
        }
        let mean = picked.iter().sum::<f64>() / n as f64;
        let var = picked.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se_db = 10.0 / LN_10 * (var / n as f64).sqrt() / mean;
        Ok((to_db(mean)?, se_db, n))
    };

    let (squeezing_db, squeezing_se_db, n_min) = window_mean(phase_min)?;
    let (antisqueezing_db, antisqueezing_se_db, n_max) = window_mean(phase_max)?;
    Ok(Extrema {
        squeezing_db,
        squeezing_se_db,
        antisqueezing_db,
        antisqueezing_se_db,
        squeezing_phase_rad: phase_min.rem_euclid(PI),
        antisqueezing_phase_rad: phase_max.rem_euclid(PI),
        samples_per_extremum: (n_min, n_max),
    })
}

/// Wraps an angle into `[-pi/2, pi/2)`, the period of a quadrature variance.
fn wrap_half_period(d: f64) -> f64 {
    (d + PI / 2.0).rem_euclid(PI) - PI / 2.0
}

fn fit_sinusoid(phases: &[f64], values: &[f64]) -> Result<Vector3<f64>> {
    let mut normal = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for (&theta, &y) in phases.iter().zip(values) {
        let basis = Vector3::new(1.0, (2.0 * theta).cos(), (2.0 * theta).sin());
        normal += basis * basis.transpose();
        rhs += basis * y;
    }
    normal
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InsufficientData("trace phases do not span a quadrature period".into()))
}
