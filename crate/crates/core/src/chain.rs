//! The source-to-detector chain: pump budget, pump-dependent squeezing, the
//! composite detection efficiency and the lossy homodyne variance, together
//! with the inverse bookkeeping (source squeezing, waveguide loss).

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};
use crate::gaussian::{from_db, to_db, GaussianState};

/// Transmission equivalent of electronic noise sitting `snr_db` below the
/// shot-noise clearance: `(S - 1) / S` with `S = 10^(snr_db / 10)`.
pub fn eta_electronic(snr_db: f64) -> Result<f64> {
    if snr_db.is_nan() || snr_db <= 0.0 {
        return Err(invalid(format!("SNR must be > 0 dB, got {snr_db}")));
    }
    if snr_db == f64::INFINITY {
        return Ok(1.0);
    }
    let s = from_db(snr_db);
    Ok((s - 1.0) / s)
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(invalid(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

/// Named efficiencies of the detection chain plus the waveguide loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBudget {
    /// Ridge-to-fibre coupling.
    pub eta_c: f64,
    /// Signal path from the fibre output to the homodyne outputs.
    pub eta_t: f64,
    /// Photodiode quantum efficiency.
    pub eta_d: f64,
    /// Electronic-noise equivalent transmission.
    pub eta_el: f64,
    /// Propagation loss in dB/cm.
    pub alpha_wg: f64,
    pub length_cm: f64,
    /// Fraction of the waveguide length the squeezed light travels on
    /// average. Squeezing is generated all along the crystal, hence 0.5.
    pub effective_length_fraction: f64,
}

impl LossBudget {
    pub const DEFAULT_EFFECTIVE_FRACTION: f64 = 0.5;

    /// Budget without waveguide loss.
    pub fn new(eta_c: f64, eta_t: f64, eta_d: f64, eta_el: f64) -> Result<Self> {
        Self {
            eta_c,
            eta_t,
            eta_d,
            eta_el,
            alpha_wg: 0.0,
            length_cm: 1.0,
            effective_length_fraction: Self::DEFAULT_EFFECTIVE_FRACTION,
        }
        .validated()
    }

    pub fn with_waveguide(mut self, alpha_wg: f64, length_cm: f64, fraction: f64) -> Result<Self> {
        self.alpha_wg = alpha_wg;
        self.length_cm = length_cm;
        self.effective_length_fraction = fraction;
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        check_unit("eta_c", self.eta_c)?;
        check_unit("eta_t", self.eta_t)?;
        check_unit("eta_d", self.eta_d)?;
        check_unit("eta_el", self.eta_el)?;
        if !(self.alpha_wg.is_finite() && self.alpha_wg >= 0.0) {
            return Err(invalid(format!("alpha_wg must be >= 0 dB/cm, got {}", self.alpha_wg)));
        }
        if !(self.length_cm.is_finite() && self.length_cm > 0.0) {
            return Err(invalid(format!("length_cm must be > 0, got {}", self.length_cm)));
        }
        check_fraction(self.effective_length_fraction)?;
        Ok(self)
    }

    /// Linear transmission of the waveguide section.
    pub fn eta_waveguide(&self) -> f64 {
        from_db(-self.alpha_wg * self.length_cm * self.effective_length_fraction)
    }

    /// `eta_c * eta_t * eta_d * eta_el`, excluding the waveguide.
    pub fn eta_estimated(&self) -> f64 {
        self.eta_c * self.eta_t * self.eta_d * self.eta_el
    }

    /// Complete chain including the waveguide factor.
    pub fn eta_total(&self) -> f64 {
        self.eta_waveguide() * self.eta_estimated()
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid(format!(
            "effective length fraction must lie in (0, 1], got {fraction}"
        )));
    }
    Ok(())
}

/// Convenience wrapper over [`LossBudget::eta_total`].
pub fn eta_total(budget: &LossBudget) -> f64 {
    budget.eta_total()
}

/// `(mu, eta)` of the lossy squeezing model with `r = mu * sqrt(P)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpSqueezeModel {
    /// Squeezing rate, mW^-1/2.
    pub mu: f64,
    /// Overall detection efficiency.
    pub eta: f64,
}

impl PumpSqueezeModel {
    /// `mu = 0` is accepted and describes an unpumped (vacuum) source.
    pub fn new(mu: f64, eta: f64) -> Result<Self> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(invalid(format!("mu must be finite and >= 0, got {mu}")));
        }
        check_unit("eta", eta)?;
        Ok(Self { mu, eta })
    }

    pub fn squeezing_parameter(&self, power_mw: f64) -> Result<f64> {
        check_power(power_mw)?;
        Ok(self.mu * power_mw.sqrt())
    }

    /// `eta (e^{2r} cos^2 theta + e^{-2r} sin^2 theta) + 1 - eta`, evaluated
    /// as an excess over shot noise so that `r = 0` gives exactly 1.
    pub fn measured_variance(&self, power_mw: f64, theta: f64) -> Result<f64> {
        let r = self.squeezing_parameter(power_mw)?;
        let (s, c) = theta.sin_cos();
        let excess = (2.0 * r).exp_m1() * c * c + (-2.0 * r).exp_m1() * s * s;
        Ok(1.0 + self.eta * excess)
    }

    /// The same quantity through the explicit state pipeline:
    /// squeeze, lose, rotate, read out x.
    pub fn measured_state(&self, power_mw: f64) -> Result<GaussianState> {
        GaussianState::squeezed_vacuum(self.squeezing_parameter(power_mw)?)?
            .apply_uniform_loss(self.eta)
    }

    pub fn squeezing_db(&self, power_mw: f64) -> Result<f64> {
        to_db(self.measured_variance(power_mw, std::f64::consts::FRAC_PI_2)?)
    }

    pub fn antisqueezing_db(&self, power_mw: f64) -> Result<f64> {
        to_db(self.measured_variance(power_mw, 0.0)?)
    }
}

fn check_power(power_mw: f64) -> Result<()> {
    if !(power_mw.is_finite() && power_mw >= 0.0) {
        return Err(invalid(format!("pump power must be finite and >= 0 mW, got {power_mw}")));
    }
    Ok(())
}

pub fn measured_variance(model: &PumpSqueezeModel, power_mw: f64, theta: f64) -> Result<f64> {
    model.measured_variance(power_mw, theta)
}

/// Undoes a detection efficiency `eta` on a measured level, returning the
/// level at the source in dB.
pub fn infer_source_variance(measured_db: f64, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(invalid(format!("eta must lie in (0, 1], got {eta}")));
    }
    let measured = from_db(measured_db);
    let floor = 1.0 - eta;
    if !(measured > floor) {
        return Err(domain(format!(
            "measured variance {measured:.6} is not above the loss floor 1 - eta = {floor:.6}"
        )));
    }
    to_db((measured - floor) / eta)
}

/// Propagation loss in dB/cm that accounts for `eta_fit` falling short of
/// `eta_est` over `length_cm * fraction` of waveguide.
pub fn solve_waveguide_loss(eta_fit: f64, eta_est: f64, length_cm: f64, fraction: f64) -> Result<f64> {
    if !(eta_est > 0.0 && eta_est <= 1.0) {
        return Err(invalid(format!("eta_est must lie in (0, 1], got {eta_est}")));
    }
    if !(eta_fit > 0.0) {
        return Err(invalid(format!("eta_fit must be > 0, got {eta_fit}")));
    }
    if eta_fit > eta_est {
        return Err(domain(format!(
            "fitted efficiency {eta_fit} exceeds the estimated budget {eta_est}"
        )));
    }
    if !(length_cm.is_finite() && length_cm > 0.0) {
        return Err(invalid(format!("length_cm must be > 0, got {length_cm}")));
    }
    check_fraction(fraction)?;
    Ok(-10.0 * (eta_fit / eta_est).log10() / (length_cm * fraction))
}

/// Pump generation and SPDC source figures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceSpecs {
    /// SHG normalised efficiency in 1/W (20/W is 2000 %/W).
    pub shg_efficiency: f64,
    /// Fibre-to-waveguide transmission of the pump.
    pub pump_coupling: f64,
    /// Pairs per mW of pump, per GHz of bandwidth, per second.
    pub spdc_rate: f64,
    pub bandwidth_ghz: f64,
}

impl SourceSpecs {
    pub fn validated(self) -> Result<Self> {
        for (name, v) in [
            ("shg_efficiency", self.shg_efficiency),
            ("pump_coupling", self.pump_coupling),
            ("spdc_rate", self.spdc_rate),
            ("bandwidth_ghz", self.bandwidth_ghz),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.pump_coupling > 1.0 {
            return Err(invalid(format!(
                "pump_coupling must be <= 1, got {}",
                self.pump_coupling
            )));
        }
        Ok(self)
    }
}

/// Pump power in mW coupled into the SPDC waveguide from `p_fundamental_w`
/// of fundamental light, in the undepleted SHG regime. Results above the
/// fundamental power are rejected.
pub fn pump_budget(p_fundamental_w: f64, specs: &SourceSpecs) -> Result<f64> {
    let specs = specs.validated()?;
    if !(p_fundamental_w.is_finite() && p_fundamental_w >= 0.0) {
        return Err(invalid(format!(
            "fundamental power must be >= 0 W, got {p_fundamental_w}"
        )));
    }
    let coupled_w = specs.pump_coupling * specs.shg_efficiency * p_fundamental_w * p_fundamental_w;
    if coupled_w > p_fundamental_w {
        return Err(Error::ModelValidity(format!(
            "coupled pump {coupled_w} W exceeds the {p_fundamental_w} W fundamental; \
             the undepleted quadratic model does not apply"
        )));
    }
    Ok(coupled_w * 1e3)
}

/// Mean SPDC pair flux in pairs/s over the full emission bandwidth.
pub fn pair_flux(power_mw: f64, specs: &SourceSpecs) -> Result<f64> {
    check_power(power_mw)?;
    Ok(specs.spdc_rate * power_mw * specs.bandwidth_ghz)
}
