//! Line-oriented `key = value` run configuration.
//!
//! Every key is optional. Defaults reproduce the measured and fitted values
//! of the reference experiment. Unknown keys are rejected by name.

use std::fmt::Write as _;
use std::path::Path;

use crate::chain::{eta_electronic, LossBudget, PumpSqueezeModel, SourceSpecs};
use crate::error::{Error, Result};
use crate::trace::ScanConfig;

macro_rules! run_config {
    ($( $(#[$doc:meta])* $key:ident : $ty:ty = $default:expr ),* $(,)?) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $( $(#[$doc])* pub $key: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $( $key: $default, )* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$( stringify!($key) ),*];

            /// Sets one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( stringify!($key) => {
                        self.$key = <$ty as ConfigValue>::parse(value).map_err(|e| {
                            Error::Config(format!("key `{key}`: {e}"))
                        })?;
                    } )*
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            /// Renders every key, one `key = value` line each.
            pub fn dump(&self) -> String {
                let mut out = String::new();
                $( let _ = writeln!(out, "{} = {}", stringify!($key), self.$key.render()); )*
                out
            }
        }
    };
}

trait ConfigValue: Sized {
    fn parse(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

impl ConfigValue for f64 {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse::<f64>()
            .map_err(|_| format!("expected a number, got `{s}`"))
            .and_then(|v| if v.is_nan() { Err("NaN is not allowed".into()) } else { Ok(v) })
    }
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl ConfigValue for u64 {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("expected an unsigned integer, got `{s}`"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for Option<f64> {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("none") {
            Ok(None)
        } else {
            <f64 as ConfigValue>::parse(s).map(Some)
        }
    }
    fn render(&self) -> String {
        match self {
            Some(v) => v.render(),
            None => "none".into(),
        }
    }
}

run_config! {
    /// Ridge-to-fibre coupling.
    eta_c: f64 = 0.80,
    eta_t: f64 = 0.95,
    eta_d: f64 = 0.88,
    /// Shot-noise clearance of the detector electronics, dB.
    snr_db: f64 = 15.6,
    alpha_wg_db_per_cm: f64 = 0.4,
    length_cm: f64 = 4.0,
    effective_length_fraction: f64 = LossBudget::DEFAULT_EFFECTIVE_FRACTION,
    /// Squeezing rate, mW^-1/2.
    mu: f64 = 0.101,
    /// Overall detection efficiency used by the model and trace commands.
    eta: f64 = 0.54,
    /// Fitted efficiency to attribute to waveguide loss in `budget`.
    eta_fit: Option<f64> = None,
    shg_efficiency_per_w: f64 = 20.0,
    pump_coupling: f64 = 0.43,
    spdc_rate: f64 = 1.2e6,
    bandwidth_ghz: f64 = 1.0e4,
    fundamental_power_w: f64 = 0.057,
    /// Pump power coupled into the SPDC waveguide, mW.
    power_mw: f64 = 28.0,
    measured_squeezing_db: f64 = -1.83,
    measured_antisqueezing_db: f64 = 2.79,
    bs_loss_db: f64 = 0.05,
    sigma_db: f64 = 0.05,
    // Scan settings. Ramp period, duration and sample rate are
    // free choices; RBW/VBW follow the reference analyzer settings.
    ramp_period_s: f64 = 0.5,
    duration_s: f64 = 5.0,
    rbw_hz: f64 = 300e3,
    vbw_hz: f64 = 30.0,
    analysis_freq_hz: f64 = 2e6,
    sample_rate_hz: f64 = 1000.0,
    phase_offset_rad: f64 = 0.0,
    electronic_floor_db: Option<f64> = None,
    seed: u64 = 1,
}

impl RunConfig {
    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", idx + 1))
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", idx + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not `key=value`")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn eta_electronic(&self) -> Result<f64> {
        eta_electronic(self.snr_db)
    }

    /// Budget including the waveguide factor.
    pub fn loss_budget(&self) -> Result<LossBudget> {
        LossBudget::new(self.eta_c, self.eta_t, self.eta_d, self.eta_electronic()?)?.with_waveguide(
            self.alpha_wg_db_per_cm,
            self.length_cm,
            self.effective_length_fraction,
        )
    }

    pub fn model(&self) -> Result<PumpSqueezeModel> {
        PumpSqueezeModel::new(self.mu, self.eta)
    }

    pub fn source_specs(&self) -> Result<SourceSpecs> {
        SourceSpecs {
            shg_efficiency: self.shg_efficiency_per_w,
            pump_coupling: self.pump_coupling,
            spdc_rate: self.spdc_rate,
            bandwidth_ghz: self.bandwidth_ghz,
        }
        .validated()
    }

    pub fn scan_config(&self) -> Result<ScanConfig> {
        let cfg = ScanConfig {
            ramp_period_s: self.ramp_period_s,
            duration_s: self.duration_s,
            rbw_hz: self.rbw_hz,
            vbw_hz: self.vbw_hz,
            analysis_freq_hz: self.analysis_freq_hz,
            sample_rate_hz: self.sample_rate_hz,
            phase_offset_rad: self.phase_offset_rad,
            seed: self.seed,
            electronic_floor_db: self.electronic_floor_db,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every derived type invariant.
    pub fn validate(&self) -> Result<()> {
        self.loss_budget()?;
        self.model()?;
        self.source_specs()?;
        self.scan_config()?;
        if !(self.sigma_db > 0.0) {
            return Err(Error::Config(format!("sigma_db must be > 0, got {}", self.sigma_db)));
        }
        Ok(())
    }
}
