//! Zero-mean Gaussian states of one or two bosonic modes.
//!
//! Covariance matrices use the quadrature ordering `(x1, p1, x2, p2)` and are
//! normalised so that the vacuum has `cov = I`. Every map in this module keeps
//! the state physical: symmetric, positive definite, with all symplectic
//! eigenvalues at or above one.

use nalgebra::{DMatrix, Matrix2};
use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{invalid, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const UNCERTAINTY_TOL: f64 = 1e-9;

/// Linear variance to decibels relative to shot noise.
pub fn to_db(v: f64) -> Result<f64> {
    if !(v.is_finite() && v > 0.0) {
        return Err(invalid(format!("variance must be finite and > 0, got {v}")));
    }
    Ok(10.0 * v.log10())
}

/// Decibels relative to shot noise to linear variance.
pub fn from_db(s: f64) -> f64 {
    10f64.powf(s / 10.0)
}

/// The standard symplectic form `diag(J, .., J)` with `J = [[0, 1], [-1, 0]]`.
pub fn symplectic_form(n_modes: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * n_modes, 2 * n_modes);
    for k in 0..n_modes {
        omega[(2 * k, 2 * k + 1)] = 1.0;
        omega[(2 * k + 1, 2 * k)] = -1.0;
    }
    omega
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Rotation,
    Squeeze,
    BeamSplitter,
}

/// A linear symplectic map acting on quadrature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticOp {
    matrix: DMatrix<f64>,
    kind: OpKind,
}

impl SymplecticOp {
    /// Phase-space rotation of one mode by `theta`.
    ///
    /// The first row of the 2x2 block is `(cos theta, sin theta)`, so the
    /// x-quadrature after the rotation is the quadrature at angle `theta`
    /// before it.
    pub fn rotation(n_modes: usize, mode: usize, theta: f64) -> Result<Self> {
        check_mode(n_modes, mode)?;
        if !theta.is_finite() {
            return Err(invalid("rotation angle must be finite"));
        }
        let (s, c) = theta.sin_cos();
        let block = Matrix2::new(c, s, -s, c);
        Ok(Self {
            matrix: embed(n_modes, mode, &block),
            kind: OpKind::Rotation,
        })
    }

    /// Single-mode squeezer `diag(e^r, e^-r)`: anti-squeezes x, squeezes p.
    pub fn squeeze(n_modes: usize, mode: usize, r: f64) -> Result<Self> {
        check_mode(n_modes, mode)?;
        if !r.is_finite() {
            return Err(invalid("squeezing parameter must be finite"));
        }
        let block = Matrix2::new(r.exp(), 0.0, 0.0, (-r).exp());
        Ok(Self {
            matrix: embed(n_modes, mode, &block),
            kind: OpKind::Squeeze,
        })
    }

    /// Balanced two-mode splitter: `x1 = (xa + xb)/sqrt2`, `x2 = (xa - xb)/sqrt2`,
    /// and likewise for p.
    pub fn balanced_beam_splitter() -> Self {
        let h = FRAC_1_SQRT_2;
        #[rustfmt::skip]
        let matrix = DMatrix::from_row_slice(4, 4, &[
            h, 0.0,  h,  0.0,
            0.0, h,  0.0, h,
            h, 0.0, -h,  0.0,
            0.0, h,  0.0, -h,
        ]);
        Self {
            matrix,
            kind: OpKind::BeamSplitter,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn kind(&self) -> OpKind {
        self.kind
    }

    pub fn n_modes(&self) -> usize {
        self.matrix.nrows() / 2
    }

    /// Largest entry of `|S Omega S^T - Omega|`.
    pub fn symplectic_defect(&self) -> f64 {
        let omega = symplectic_form(self.n_modes());
        let lhs = &self.matrix * &omega * self.matrix.transpose();
        (lhs - omega).amax()
    }
}

fn check_mode(n_modes: usize, mode: usize) -> Result<()> {
    if !(1..=2).contains(&n_modes) {
        return Err(invalid(format!("only 1 or 2 modes are supported, got {n_modes}")));
    }
    if mode >= n_modes {
        return Err(invalid(format!("mode index {mode} out of range for {n_modes} mode(s)")));
    }
    Ok(())
}

fn embed(n_modes: usize, mode: usize, block: &Matrix2<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::identity(2 * n_modes, 2 * n_modes);
    m.view_mut((2 * mode, 2 * mode), (2, 2)).copy_from(block);
    m
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Zero-mean Gaussian state described by its quadrature covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    cov: DMatrix<f64>,
}

impl GaussianState {
    /// Validates `cov` against symmetry, positive definiteness and the
    /// uncertainty relation.
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() || !(cov.nrows() == 2 || cov.nrows() == 4) {
            return Err(invalid(format!(
                "covariance must be 2x2 or 4x4, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(invalid("covariance has non-finite entries"));
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > SYMMETRY_TOL {
            return Err(invalid(format!("covariance not symmetric (defect {asym:e})")));
        }
        if cov.clone().cholesky().is_none() {
            return Err(invalid("covariance is not positive definite"));
        }
        let state = Self { cov };
        let nu_min = state
            .symplectic_eigenvalues()
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if nu_min < 1.0 - UNCERTAINTY_TOL {
            return Err(invalid(format!(
                "covariance violates the uncertainty relation (symplectic eigenvalue {nu_min})"
            )));
        }
        Ok(state)
    }

    fn from_cov_unchecked(cov: DMatrix<f64>) -> Self {
        Self { cov: symmetrize(cov) }
    }

    pub fn vacuum(n_modes: usize) -> Result<Self> {
        check_mode(n_modes, 0)?;
        Ok(Self::from_cov_unchecked(DMatrix::identity(2 * n_modes, 2 * n_modes)))
    }

    /// Single-mode squeezed vacuum with `cov = diag(e^{2r}, e^{-2r})`.
    pub fn squeezed_vacuum(r: f64) -> Result<Self> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(invalid(format!("squeezing parameter must be finite and >= 0, got {r}")));
        }
        Self::vacuum(1)?.transform(&SymplecticOp::squeeze(1, 0, r)?)
    }

    /// Single-mode state `diag(anti, squeezed)` from measured variances.
    pub fn from_quadrature_variances(x_variance: f64, p_variance: f64) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            x_variance, p_variance,
        ])))
    }

    pub fn n_modes(&self) -> usize {
        self.cov.nrows() / 2
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Symplectic spectrum in ascending order.
    ///
    /// One mode uses `sqrt(det)`. For two modes the spectrum is read off the
    /// symmetric matrix `K^T K` with `K = cov^{1/2} Omega cov^{1/2}`, whose
    /// eigenvalues are the squared symplectic eigenvalues, each twice. This
    /// stays accurate for degenerate (e.g. pure) spectra where the quadratic
    /// formula in the `Delta` invariant loses half the digits.
    pub fn symplectic_eigenvalues(&self) -> Vec<f64> {
        let c = &self.cov;
        match self.n_modes() {
            1 => vec![c.determinant().max(0.0).sqrt()],
            n => {
                let eig = c.clone().symmetric_eigen();
                let half_sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
                let root = &eig.eigenvectors
                    * DMatrix::from_diagonal(&half_sqrt)
                    * eig.eigenvectors.transpose();
                let k = &root * symplectic_form(n) * &root;
                let mut sq: Vec<f64> = (k.transpose() * &k)
                    .symmetric_eigen()
                    .eigenvalues
                    .iter()
                    .map(|v| v.max(0.0))
                    .collect();
                sq.sort_by(f64::total_cmp);
                sq.chunks(2).map(|p| (0.5 * (p[0] + p[1])).sqrt()).collect()
            }
        }
    }

    /// Conjugates the covariance by a symplectic map of matching size.
    pub fn transform(&self, op: &SymplecticOp) -> Result<Self> {
        if op.n_modes() != self.n_modes() {
            return Err(invalid(format!(
                "operator acts on {} mode(s), state has {}",
                op.n_modes(),
                self.n_modes()
            )));
        }
        let s = op.matrix();
        Ok(Self::from_cov_unchecked(s * &self.cov * s.transpose()))
    }

    /// Pure-loss channel: each mode block becomes
    /// `sqrt(eta_i eta_j) * cov_ij + (1 - eta) I` on the diagonal.
    pub fn apply_loss(&self, etas: &[f64]) -> Result<Self> {
        let n = self.n_modes();
        if etas.len() != n {
            return Err(invalid(format!(
                "expected {n} transmission value(s), got {}",
                etas.len()
            )));
        }
        if let Some(bad) = etas.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(invalid(format!("transmission must lie in [0, 1], got {bad}")));
        }
        let mut cov = self.cov.clone();
        for i in 0..2 * n {
            for j in 0..2 * n {
                let g = (etas[i / 2] * etas[j / 2]).sqrt();
                cov[(i, j)] *= g;
            }
        }
        for (k, eta) in etas.iter().enumerate() {
            cov[(2 * k, 2 * k)] += 1.0 - eta;
            cov[(2 * k + 1, 2 * k + 1)] += 1.0 - eta;
        }
        Ok(Self::from_cov_unchecked(cov))
    }

    /// Same transmission on every mode.
    pub fn apply_uniform_loss(&self, eta: f64) -> Result<Self> {
        self.apply_loss(&vec![eta; self.n_modes()])
    }

    pub fn phase_rotation(&self, theta: f64, mode: usize) -> Result<Self> {
        self.transform(&SymplecticOp::rotation(self.n_modes(), mode, theta)?)
    }

    /// `u^T cov u` with `u = (cos theta, sin theta)` in the chosen mode block.
    pub fn quadrature_variance(&self, theta: f64, mode: usize) -> Result<f64> {
        check_mode(self.n_modes(), mode)?;
        let (s, c) = theta.sin_cos();
        let i = 2 * mode;
        let m = &self.cov;
        Ok(c * c * m[(i, i)] + 2.0 * c * s * m[(i, i + 1)] + s * s * m[(i + 1, i + 1)])
    }

    /// Block-diagonal product state of two single-mode states.
    pub fn tensor(&self, other: &GaussianState) -> Result<Self> {
        if self.n_modes() != 1 || other.n_modes() != 1 {
            return Err(invalid("tensor product is defined for two single-mode states"));
        }
        let mut cov = DMatrix::zeros(4, 4);
        cov.view_mut((0, 0), (2, 2)).copy_from(&self.cov);
        cov.view_mut((2, 2), (2, 2)).copy_from(&other.cov);
        Ok(Self::from_cov_unchecked(cov))
    }
}

/// Mixes two single-mode states on a balanced lossless splitter.
pub fn beam_splitter_50_50(a: &GaussianState, b: &GaussianState) -> Result<GaussianState> {
    a.tensor(b)?.transform(&SymplecticOp::balanced_beam_splitter())
}
