//! Two-mode squeezing from two single-mode squeezers and a balanced
//! splitter, scored with the Duan correlation variance.
//!
//! The first input is squeezed in p and the second in x, so that after the
//! splitter `(x1 - x2)/sqrt2 = x_b` and `(p1 + p2)/sqrt2 = p_a` both carry the
//! reduced noise. The correlation variance is the mean of those two
//! variances; separable states satisfy `>= 1` in shot-noise units.

use std::f64::consts::FRAC_PI_2;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::gaussian::{beam_splitter_50_50, from_db, GaussianState};

/// Anti-squeezing measured alongside -1.83 dB of squeezing at 28 mW.
pub const DEFAULT_ANTISQUEEZING_DB: f64 = 2.79;

/// A single-mode squeezed source described by its measured levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Squeezer {
    pub squeezing_db: f64,
    pub antisqueezing_db: f64,
}

impl Squeezer {
    pub fn new(squeezing_db: f64, antisqueezing_db: f64) -> Self {
        Self { squeezing_db, antisqueezing_db }
    }

    /// Minimum-uncertainty completion: anti-squeezing is `-squeezing_db`.
    pub fn pure(squeezing_db: f64) -> Self {
        Self { squeezing_db, antisqueezing_db: -squeezing_db }
    }

    /// State squeezed in p: `cov = diag(anti, squeezed)`.
    pub fn state(&self) -> Result<GaussianState> {
        if !(self.squeezing_db.is_finite() && self.antisqueezing_db.is_finite()) {
            return Err(invalid("squeezer levels must be finite"));
        }
        if self.squeezing_db > 0.0 {
            return Err(invalid(format!(
                "squeezing level must be <= 0 dB, got {}",
                self.squeezing_db
            )));
        }
        GaussianState::from_quadrature_variances(
            from_db(self.antisqueezing_db),
            from_db(self.squeezing_db),
        )
    }
}

/// How the anti-squeezed quadrature of each input is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AntiSqueezing {
    Measured(f64),
    Pure,
}

impl Default for AntiSqueezing {
    fn default() -> Self {
        AntiSqueezing::Measured(DEFAULT_ANTISQUEEZING_DB)
    }
}

/// Mixes two squeezers with orthogonal orientation and attenuates both output
/// arms by `bs_loss_db`.
pub fn epr_from_squeezers(first: &Squeezer, second: &Squeezer, bs_loss_db: f64) -> Result<GaussianState> {
    if !(bs_loss_db >= 0.0) {
        return Err(invalid(format!("splitter loss must be >= 0 dB, got {bs_loss_db}")));
    }
    let a = first.state()?;
    let b = second.state()?.phase_rotation(FRAC_PI_2, 0)?;
    beam_splitter_50_50(&a, &b)?.apply_uniform_loss(from_db(-bs_loss_db))
}

/// Two identical squeezers at `squeezing_db_each` (< 0) through a lossy
/// balanced splitter.
pub fn epr_from_two_squeezers(
    squeezing_db_each: f64,
    anti: AntiSqueezing,
    bs_loss_db: f64,
) -> Result<GaussianState> {
    if !(squeezing_db_each < 0.0) {
        return Err(invalid(format!(
            "input must be squeezed (< 0 dB), got {squeezing_db_each}"
        )));
    }
    let sq = match anti {
        AntiSqueezing::Measured(db) => Squeezer::new(squeezing_db_each, db),
        AntiSqueezing::Pure => Squeezer::pure(squeezing_db_each),
    };
    epr_from_squeezers(&sq, &sq, bs_loss_db)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DuanReport {
    /// `Var((x1 - x2)/sqrt2)`.
    pub var_x_minus: f64,
    /// `Var((p1 + p2)/sqrt2)`.
    pub var_p_plus: f64,
    pub correlation_variance: f64,
    pub entangled: bool,
    pub margin: f64,
}

impl DuanReport {
    pub fn to_text(&self) -> String {
        format!(
            "var_x_minus = {:?}\nvar_p_plus = {:?}\ncorrelation_variance = {:?}\n\
             classical_bound = 1\nentangled = {}\nmargin = {:?}\n",
            self.var_x_minus, self.var_p_plus, self.correlation_variance, self.entangled, self.margin
        )
    }
}

pub fn duan_variance(state: &GaussianState) -> Result<DuanReport> {
    if state.n_modes() != 2 {
        return Err(invalid(format!(
            "Duan criterion needs a 2-mode state, got {} mode(s)",
            state.n_modes()
        )));
    }
    let c = state.cov();
    let var_x_minus = (c[(0, 0)] + c[(2, 2)] - 2.0 * c[(0, 2)]) / 2.0;
    let var_p_plus = (c[(1, 1)] + c[(3, 3)] + 2.0 * c[(1, 3)]) / 2.0;
    let correlation_variance = (var_x_minus + var_p_plus) / 2.0;
    Ok(DuanReport {
        var_x_minus,
        var_p_plus,
        correlation_variance,
        entangled: correlation_variance < 1.0,
        margin: 1.0 - correlation_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    #[test]
    fn vacuum_inputs() {
        let vac = Squeezer::new(0.0, 0.0);
        let st = epr_from_squeezers(&vac, &vac, 0.0).unwrap();
        assert_abs_diff_eq!(st.cov().clone(), DMatrix::identity(4, 4), epsilon = 1e-15);
        let rep = duan_variance(&st).unwrap();
        assert_abs_diff_eq!(rep.correlation_variance, 1.0, epsilon = 1e-15);
        assert!(!rep.entangled);
    }

    #[test]
    fn pure_inputs() {
        let v = from_db(-1.83);
        let st = epr_from_two_squeezers(-1.83, AntiSqueezing::Pure, 0.0).unwrap();
        let rep = duan_variance(&st).unwrap();
        assert_abs_diff_eq!(rep.var_x_minus, v, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.var_x_minus, 0.6561, epsilon = 5e-5);

        let r = 0.101 * 28f64.sqrt();
        let db = 10.0 * (-2.0 * r).exp().log10();
        let rep = duan_variance(&epr_from_two_squeezers(db, AntiSqueezing::Pure, 0.0).unwrap()).unwrap();
        assert_abs_diff_eq!(rep.correlation_variance, (-2.0 * r).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(rep.correlation_variance, 0.343, epsilon = 5e-4);
    }

    #[test]
    fn operating_regime() {
        let st = epr_from_two_squeezers(-1.83, AntiSqueezing::default(), 0.05).unwrap();
        let rep = duan_variance(&st).unwrap();
        // eta = 10^-0.005 on 0.65615: 0.98855 * 0.65615 + 0.01145
        assert_abs_diff_eq!(rep.correlation_variance, 0.6601, epsilon = 1e-4);
        assert!(rep.entangled);
        assert_abs_diff_eq!(rep.margin, 1.0 - rep.correlation_variance, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(epr_from_two_squeezers(0.0, AntiSqueezing::Pure, 0.05).is_err());
        assert!(epr_from_two_squeezers(1.0, AntiSqueezing::Pure, 0.05).is_err());
        assert!(epr_from_two_squeezers(-1.0, AntiSqueezing::Pure, -0.1).is_err());
        // Anti-squeezing too small for the uncertainty relation.
        assert!(epr_from_two_squeezers(-3.0, AntiSqueezing::Measured(1.0), 0.0).is_err());
        assert!(duan_variance(&GaussianState::vacuum(1).unwrap()).is_err());
    }

    #[test]
    fn heavy_loss_approaches_bound() {
        // Loss never removes the correlations entirely: at 60 dB the margin
        // is ~3.4e-7 and the state is still (barely) entangled.
        let rep = duan_variance(&epr_from_two_squeezers(-1.83, AntiSqueezing::default(), 60.0).unwrap()).unwrap();
        assert_abs_diff_eq!(rep.correlation_variance, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(rep.margin, 1e-6 * (1.0 - from_db(-1.83)), epsilon = 1e-12);
        // Once the margin is below double resolution the bound is reached.
        let rep = duan_variance(&epr_from_two_squeezers(-1.83, AntiSqueezing::default(), 200.0).unwrap()).unwrap();
        assert_eq!(rep.correlation_variance, 1.0);
        assert!(!rep.entangled);
        let rep = duan_variance(&epr_from_two_squeezers(-1.83, AntiSqueezing::default(), f64::INFINITY).unwrap()).unwrap();
        assert_eq!(rep.correlation_variance, 1.0);
    }

    #[test]
    fn identical_orientation_is_separable() {
        let r: f64 = 0.4;
        let a = GaussianState::squeezed_vacuum(r).unwrap();
        let st = beam_splitter_50_50(&a, &a).unwrap();
        let cross = st.cov().view((0, 2), (2, 2)).amax();
        assert!(cross < 1e-15);
        let rep = duan_variance(&st).unwrap();
        let expected = ((-2.0 * r).exp() + (2.0 * r).exp()) / 2.0;
        assert_abs_diff_eq!(rep.correlation_variance, expected, epsilon = 1e-12);
        assert!(rep.correlation_variance >= 1.0);
    }

    #[test]
    fn two_mode_squeezed_closed_form() {
        // Standard two-mode squeezed vacuum: cosh/sinh blocks.
        for r in [0.1, 0.534, 1.2f64] {
            let (c, s) = ((2.0 * r).cosh(), (2.0 * r).sinh());
            #[rustfmt::skip]
            let cov = DMatrix::from_row_slice(4, 4, &[
                c, 0.0, s, 0.0,
                0.0, c, 0.0, -s,
                s, 0.0, c, 0.0,
                0.0, -s, 0.0, c,
            ]);
            let rep = duan_variance(&GaussianState::new(cov).unwrap()).unwrap();
            assert_abs_diff_eq!(rep.correlation_variance, (-2.0 * r).exp(), epsilon = 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn loss_monotone(sq in -6.0..-0.1f64, extra in 0.0..3.0f64, l1 in 0.0..20.0f64, dl in 0.0..5.0f64) {
            let anti = AntiSqueezing::Measured(-sq + extra);
            let a = duan_variance(&epr_from_two_squeezers(sq, anti, l1).unwrap()).unwrap();
            let b = duan_variance(&epr_from_two_squeezers(sq, anti, l1 + dl).unwrap()).unwrap();
            prop_assert!(b.correlation_variance >= a.correlation_variance - 1e-12);
        }

        #[test]
        fn swap_symmetry(s1 in -6.0..0.0f64, s2 in -6.0..0.0f64, x1 in 0.0..3.0f64, x2 in 0.0..3.0f64, loss in 0.0..1.0f64) {
            let a = Squeezer::new(s1, -s1 + x1);
            let b = Squeezer::new(s2, -s2 + x2);
            let fwd = duan_variance(&epr_from_squeezers(&a, &b, loss).unwrap()).unwrap();
            let rev = duan_variance(&epr_from_squeezers(&b, &a, loss).unwrap()).unwrap();
            prop_assert!((fwd.correlation_variance - rev.correlation_variance).abs() <= 1e-12);
            prop_assert!((fwd.var_x_minus - rev.var_p_plus).abs() <= 1e-12);
            prop_assert!((fwd.var_p_plus - rev.var_x_minus).abs() <= 1e-12);
            prop_assert_eq!(fwd.entangled, rev.entangled);
            let same = duan_variance(&epr_from_squeezers(&a, &a, loss).unwrap()).unwrap();
            prop_assert!((same.var_x_minus - same.var_p_plus).abs() <= 1e-12);
        }
    }
}
