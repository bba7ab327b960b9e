//! Joint fit of squeezing and anti-squeezing versus pump power.
//!
//! Both branches of the lossy model, `theta = pi/2` (squeezed) and
//! `theta = 0` (anti-squeezed), are fitted together for `(mu, eta)` by a
//! damped Gauss-Newton iteration. Residuals are formed in dB by default.

use std::f64::consts::LN_10;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gaussian::from_db;

/// Per-point uncertainty used when none is given.
pub const DEFAULT_SIGMA_DB: f64 = 0.05;

const DB_PER_NEPER: f64 = 10.0 / LN_10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataRow {
    pub power_mw: f64,
    pub squeezing_db: f64,
    pub antisqueezing_db: f64,
    pub sigma_db: f64,
}

impl DataRow {
    fn validate(&self) -> std::result::Result<(), String> {
        let finite = [self.power_mw, self.squeezing_db, self.antisqueezing_db, self.sigma_db]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err("non-finite value".into());
        }
        if self.power_mw <= 0.0 {
            return Err(format!("power_mw must be > 0, got {}", self.power_mw));
        }
        if self.sigma_db <= 0.0 {
            return Err(format!("sigma_db must be > 0, got {}", self.sigma_db));
        }
        if self.antisqueezing_db < self.squeezing_db {
            return Err(format!(
                "antisqueezing_db {} is below squeezing_db {}",
                self.antisqueezing_db, self.squeezing_db
            ));
        }
        Ok(())
    }
}

/// Squeezing / anti-squeezing measurements at several pump powers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataSet {
    rows: Vec<DataRow>,
}

#[derive(Deserialize)]
struct CsvRow {
    power_mw: f64,
    squeezing_db: f64,
    antisqueezing_db: f64,
    sigma_db: Option<f64>,
}

impl DataSet {
    pub fn new(rows: Vec<DataRow>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            row.validate().map_err(|m| invalid(format!("row {i}: {m}")))?;
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[DataRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Copy with every sigma multiplied by `factor`.
    pub fn with_scaled_sigma(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.rows
                .iter()
                .map(|r| DataRow { sigma_db: r.sigma_db * factor, ..*r })
                .collect(),
        )
    }

    /// Reads `power_mw,squeezing_db,antisqueezing_db[,sigma_db]` with a
    /// header line. A missing or empty sigma defaults to 0.05 dB.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .flexible(true)
            .from_reader(reader);
        let headers = rdr.headers().map_err(csv_error)?.clone();
        for required in ["power_mw", "squeezing_db", "antisqueezing_db"] {
            if !headers.iter().any(|h| h == required) {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("missing column `{required}` in header"),
                });
            }
        }
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(csv_error)?;
            let line = record.position().map_or(0, |p| p.line());
            let row: CsvRow = record
                .deserialize(Some(&headers))
                .map_err(|e| Error::Parse { line, message: e.to_string() })?;
            let row = DataRow {
                power_mw: row.power_mw,
                squeezing_db: row.squeezing_db,
                antisqueezing_db: row.antisqueezing_db,
                sigma_db: row.sigma_db.unwrap_or(DEFAULT_SIGMA_DB),
            };
            row.validate().map_err(|message| Error::Parse { line, message })?;
            rows.push(row);
        }
        Ok(Self { rows })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "power_mw,squeezing_db,antisqueezing_db,sigma_db")?;
        for r in &self.rows {
            writeln!(
                w,
                "{:?},{:?},{:?},{:?}",
                r.power_mw, r.squeezing_db, r.antisqueezing_db, r.sigma_db
            )?;
        }
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse { line, message: e.to_string() }
}

/// Units in which residuals are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Decibel,
    /// Linear variance with `sigma_lin = V * sigma_db * ln10 / 10`.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EtaBound {
    /// `eta = 1 / (1 + e^-u)`, keeping eta inside (0, 1).
    #[default]
    Logistic,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub initial: Option<(f64, f64)>,
    pub weighting: Weighting,
    pub eta_bound: EtaBound,
    /// Relative pump-power uncertainty folded into each point's variance
    /// as `(dmodel/dP * rel * P)^2`. `None` disables it.
    pub power_rel_uncertainty: Option<f64>,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            initial: None,
            weighting: Weighting::Decibel,
            eta_bound: EtaBound::Logistic,
            power_rel_uncertainty: None,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub mu: f64,
    pub eta: f64,
    pub sigma_mu: f64,
    pub sigma_eta: f64,
    pub correlation_mu_eta: f64,
    pub chi2: f64,
    pub n_dof: usize,
    pub converged: bool,
    pub n_iterations: usize,
}

impl FitResult {
    pub fn reduced_chi2(&self) -> f64 {
        self.chi2 / self.n_dof as f64
    }

    /// Flat `key = value` text report.
    pub fn to_report(&self) -> String {
        format!(
            "mu = {:?}\nsigma_mu = {:?}\neta = {:?}\nsigma_eta = {:?}\n\
             correlation_mu_eta = {:?}\nchi2 = {:?}\nn_dof = {}\nchi2_per_dof = {:?}\n\
             converged = {}\nn_iterations = {}\n",
            self.mu,
            self.sigma_mu,
            self.eta,
            self.sigma_eta,
            self.correlation_mu_eta,
            self.chi2,
            self.n_dof,
            self.reduced_chi2(),
            self.converged,
            self.n_iterations
        )
    }
}

#[derive(Clone, Copy)]
enum Branch {
    Squeezed,
    AntiSqueezed,
}

impl Branch {
    fn sign(self) -> f64 {
        match self {
            Branch::Squeezed => -1.0,
            Branch::AntiSqueezed => 1.0,
        }
    }
}

/// Linear variance on one branch and its partials w.r.t. `(mu, eta, P)`.
fn branch_variance(mu: f64, eta: f64, power_mw: f64, branch: Branch) -> (f64, [f64; 3]) {
    let s = branch.sign();
    let sqrt_p = power_mw.sqrt();
    let e = (2.0 * s * mu * sqrt_p).exp();
    let v = eta * e + 1.0 - eta;
    let dv_dmu = eta * 2.0 * s * sqrt_p * e;
    let dv_deta = e - 1.0;
    let dv_dp = eta * s * mu * e / sqrt_p;
    (v, [dv_dmu, dv_deta, dv_dp])
}

fn branches(data: &DataSet) -> impl Iterator<Item = (&DataRow, Branch)> {
    data.rows
        .iter()
        .map(|r| (r, Branch::Squeezed))
        .chain(data.rows.iter().map(|r| (r, Branch::AntiSqueezed)))
}

fn observed_db(row: &DataRow, branch: Branch) -> f64 {
    match branch {
        Branch::Squeezed => row.squeezing_db,
        Branch::AntiSqueezed => row.antisqueezing_db,
    }
}

/// Weighted residuals and natural-parameter Jacobian for the given options.
/// Returns `None` when the model leaves the positive-variance domain.
fn weighted_system(
    data: &DataSet,
    mu: f64,
    eta: f64,
    opts: &FitOptions,
) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let m = 2 * data.len();
    let mut res = DVector::zeros(m);
    let mut jac = DMatrix::zeros(m, 2);
    for (i, (row, branch)) in branches(data).enumerate() {
        let (v, [dmu, deta, dp]) = branch_variance(mu, eta, row.power_mw, branch);
        if !(v > 0.0) || !v.is_finite() {
            return None;
        }
        let obs_db = observed_db(row, branch);
        let (value, scale, sigma) = match opts.weighting {
            Weighting::Decibel => (DB_PER_NEPER * v.ln() - obs_db, DB_PER_NEPER / v, row.sigma_db),
            Weighting::Linear => {
                let obs = from_db(obs_db);
                (v - obs, 1.0, obs * row.sigma_db / DB_PER_NEPER)
            }
        };
        let sigma = match opts.power_rel_uncertainty {
            Some(rel) => (sigma * sigma + (scale * dp * rel * row.power_mw).powi(2)).sqrt(),
            None => sigma,
        };
        res[i] = value / sigma;
        jac[(i, 0)] = scale * dmu / sigma;
        jac[(i, 1)] = scale * deta / sigma;
    }
    Some((res, jac))
}

/// Weighted dB residuals, squeezing rows first, then anti-squeezing rows.
pub fn residuals(data: &DataSet, mu: f64, eta: f64) -> Result<Vec<f64>> {
    weighted_system(data, mu, eta, &FitOptions::default())
        .map(|(r, _)| r.iter().copied().collect())
        .ok_or_else(|| invalid(format!("model variance is not positive at mu={mu}, eta={eta}")))
}

/// Unweighted analytic Jacobian of the dB model, `2n x 2`, columns `(mu, eta)`,
/// rows ordered like [`residuals`].
pub fn model_jacobian(data: &DataSet, mu: f64, eta: f64) -> Result<DMatrix<f64>> {
    let mut jac = DMatrix::zeros(2 * data.len(), 2);
    for (i, (row, branch)) in branches(data).enumerate() {
        let (v, [dmu, deta, _]) = branch_variance(mu, eta, row.power_mw, branch);
        if !(v > 0.0) {
            return Err(invalid(format!("model variance is not positive at mu={mu}, eta={eta}")));
        }
        jac[(i, 0)] = DB_PER_NEPER * dmu / v;
        jac[(i, 1)] = DB_PER_NEPER * deta / v;
    }
    Ok(jac)
}

/// Model values in dB: `(squeezing, antisqueezing)` at `power_mw`.
pub fn model_db(mu: f64, eta: f64, power_mw: f64) -> (f64, f64) {
    let sq = branch_variance(mu, eta, power_mw, Branch::Squeezed).0;
    let anti = branch_variance(mu, eta, power_mw, Branch::AntiSqueezed).0;
    (DB_PER_NEPER * sq.ln(), DB_PER_NEPER * anti.ln())
}

fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn logit(eta: f64) -> f64 {
    let e = eta.clamp(1e-9, 1.0 - 1e-9);
    (e / (1.0 - e)).ln()
}

struct Parameterization(EtaBound);

impl Parameterization {
    fn to_natural(&self, q: Vector2<f64>) -> (f64, f64, f64) {
        match self.0 {
            EtaBound::Logistic => {
                let eta = logistic(q[1]);
                (q[0], eta, eta * (1.0 - eta))
            }
            EtaBound::Unbounded => (q[0], q[1], 1.0),
        }
    }

    fn to_internal(&self, mu: f64, eta: f64) -> Vector2<f64> {
        match self.0 {
            EtaBound::Logistic => Vector2::new(mu, logit(eta)),
            EtaBound::Unbounded => Vector2::new(mu, eta),
        }
    }
}

/// Starting point: `eta0 = 0.5` and `mu0` from inverting the model on the
/// highest-power point.
pub fn default_initial_guess(data: &DataSet) -> (f64, f64) {
    let eta0 = 0.5;
    let Some(top) = data
        .rows
        .iter()
        .max_by(|a, b| a.power_mw.total_cmp(&b.power_mw))
    else {
        return (0.05, eta0);
    };
    let sqrt_p = top.power_mw.sqrt();
    let source_sq = (from_db(top.squeezing_db) - (1.0 - eta0)) / eta0;
    let source_anti = (from_db(top.antisqueezing_db) - (1.0 - eta0)) / eta0;
    let r = if source_sq > 0.0 && source_sq < 1.0 {
        -0.5 * source_sq.ln()
    } else if source_anti > 1.0 {
        0.5 * source_anti.ln()
    } else {
        0.05 * sqrt_p
    };
    (r / sqrt_p, eta0)
}

pub fn fit_squeezing_curve(data: &DataSet, initial: Option<(f64, f64)>) -> Result<FitResult> {
    fit_with_options(data, &FitOptions { initial, ..FitOptions::default() })
}

struct Evaluation {
    res: DVector<f64>,
    /// Jacobian w.r.t. the internal parameters.
    jac: DMatrix<f64>,
    cost: f64,
}

fn evaluate(
    data: &DataSet,
    q: Vector2<f64>,
    param: &Parameterization,
    opts: &FitOptions,
) -> Option<Evaluation> {
    let (mu, eta, deta_du) = param.to_natural(q);
    let (res, mut jac) = weighted_system(data, mu, eta, opts)?;
    jac.column_mut(1).scale_mut(deta_du);
    let cost = 0.5 * res.norm_squared();
    cost.is_finite().then_some(Evaluation { res, jac, cost })
}

const GRADIENT_TOL: f64 = 1e-10;
const STEP_TOL: f64 = 1e-12;

const MAX_RESTARTS: usize = 3;
const POLISH_STEPS: usize = 4;
/// `eta (1 - eta)` below which the logistic counts as saturated.
const SATURATION: f64 = 1e-8;

struct LmRun {
    q: Vector2<f64>,
    converged: bool,
    iterations: usize,
}

fn levenberg_marquardt(
    data: &DataSet,
    mut q: Vector2<f64>,
    param: &Parameterization,
    opts: &FitOptions,
    max_iterations: usize,
) -> Option<LmRun> {
    let mut current = evaluate(data, q, param, opts)?;
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iterations {
        let grad = current.jac.tr_mul(&current.res);
        if grad.norm() < GRADIENT_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let normal: Matrix2<f64> = {
            let jtj = current.jac.tr_mul(&current.jac);
            Matrix2::new(jtj[(0, 0)], jtj[(0, 1)], jtj[(1, 0)], jtj[(1, 1)])
        };
        let g = Vector2::new(grad[0], grad[1]);
        let mut accepted = None;
        let mut last_step = f64::INFINITY;
        while lambda < 1e20 {
            let mut damped = normal;
            for k in 0..2 {
                damped[(k, k)] += lambda * normal[(k, k)].max(1e-12);
            }
            let Some(step) = damped.lu().solve(&(-g)) else {
                lambda *= 10.0;
                continue;
            };
            last_step = step.norm();
            if last_step < STEP_TOL {
                break;
            }
            let trial = q + step;
            match evaluate(data, trial, param, opts) {
                Some(eval) if eval.cost < current.cost => {
                    accepted = Some((trial, eval));
                    lambda = (lambda / 10.0).max(1e-15);
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        match accepted {
            Some((trial, eval)) => {
                q = trial;
                current = eval;
                if last_step < STEP_TOL {
                    converged = true;
                    break;
                }
            }
            None => {
                // No improving step remains above machine resolution.
                converged = last_step < STEP_TOL;
                break;
            }
        }
    }
    if !converged {
        converged = current.jac.tr_mul(&current.res).norm() < GRADIENT_TOL;
    }
    if converged {
        // Near the optimum the cost change drops below its rounding error,
        // so the last few undamped steps are judged by the gradient instead.
        for _ in 0..POLISH_STEPS {
            let grad = current.jac.tr_mul(&current.res);
            let jtj = current.jac.tr_mul(&current.jac);
            let normal = Matrix2::new(jtj[(0, 0)], jtj[(0, 1)], jtj[(1, 0)], jtj[(1, 1)]);
            let Some(step) = normal.lu().solve(&Vector2::new(-grad[0], -grad[1])) else {
                break;
            };
            if step.norm() < f64::EPSILON * (1.0 + q.norm()) {
                break;
            }
            match evaluate(data, q + step, param, opts) {
                Some(eval) if eval.jac.tr_mul(&eval.res).norm() < grad.norm() => {
                    q += step;
                    current = eval;
                }
                _ => break,
            }
        }
    }
    Some(LmRun { q, converged, iterations })
}

/// True when a logistic fit sits on a flat tail although the cost gradient in
/// natural coordinates points back into `(0, 1)`.
fn spurious_boundary(data: &DataSet, q: Vector2<f64>, param: &Parameterization, opts: &FitOptions) -> bool {
    if param.0 != EtaBound::Logistic {
        return false;
    }
    let (mu, eta, slope) = param.to_natural(q);
    if slope > SATURATION {
        return false;
    }
    let Some((res, jac)) = weighted_system(data, mu, eta, opts) else {
        return false;
    };
    let d_eta = jac.column(1).dot(&res);
    (eta > 0.5 && d_eta > 0.0) || (eta < 0.5 && d_eta < 0.0)
}

/// Damped Gauss-Newton (Levenberg-Marquardt) fit.
pub fn fit_with_options(data: &DataSet, opts: &FitOptions) -> Result<FitResult> {
    if data.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 rows for a 2-parameter fit, got {}",
            data.len()
        )));
    }
    if let Some(rel) = opts.power_rel_uncertainty {
        if !(rel.is_finite() && rel >= 0.0) {
            return Err(invalid(format!("power uncertainty must be >= 0, got {rel}")));
        }
    }
    let (mu0, eta0) = opts.initial.unwrap_or_else(|| default_initial_guess(data));
    if !(mu0.is_finite() && eta0.is_finite()) {
        return Err(invalid("initial guess must be finite"));
    }
    let param = Parameterization(opts.eta_bound);
    let mut q = param.to_internal(mu0, eta0);
    let mut iterations = 0;
    let mut converged;
    let mut restarts = 0;
    loop {
        let run = levenberg_marquardt(data, q, &param, opts, opts.max_iterations - iterations)
            .ok_or_else(|| invalid(format!("initial guess (mu={mu0}, eta={eta0}) is outside the model domain")))?;
        q = run.q;
        iterations += run.iterations;
        converged = run.converged;
        // A saturated logistic makes any point look stationary. If the cost
        // still falls towards the interior, start again from eta = 1/2.
        if restarts < MAX_RESTARTS && iterations < opts.max_iterations && spurious_boundary(data, q, &param, opts) {
            restarts += 1;
            q[1] = 0.0;
            continue;
        }
        break;
    }

    let (mu, eta, _) = param.to_natural(q);
    let (res, jac) = weighted_system(data, mu, eta, opts)
        .ok_or_else(|| invalid("fit left the model domain"))?;
    let chi2 = res.norm_squared();
    let n_dof = 2 * data.len() - 2;
    let scale = chi2 / n_dof as f64;
    let (sigma_mu, sigma_eta, correlation_mu_eta) = match jac.tr_mul(&jac).try_inverse() {
        Some(cov) => {
            let (vm, ve) = (cov[(0, 0)] * scale, cov[(1, 1)] * scale);
            let corr = if vm > 0.0 && ve > 0.0 {
                (cov[(0, 1)] * scale / (vm * ve).sqrt()).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            (vm.max(0.0).sqrt(), ve.max(0.0).sqrt(), corr)
        }
        None => (f64::NAN, f64::NAN, f64::NAN),
    };
    Ok(FitResult {
        mu,
        eta,
        sigma_mu,
        sigma_eta,
        correlation_mu_eta,
        chi2,
        n_dof,
        converged,
        n_iterations: iterations,
    })
}

/// Model values at `theta = pi/2` and `theta = 0` plus independent Gaussian
/// dB noise of `noise_db`. Rows carry `sigma_db = noise_db`, or the 0.05 dB
/// default when `noise_db` is zero.
pub fn generate_synthetic_dataset(
    mu: f64,
    eta: f64,
    powers: &[f64],
    noise_db: f64,
    seed: u64,
) -> Result<DataSet> {
    if powers.is_empty() {
        return Err(invalid("at least one pump power is required"));
    }
    if let Some(p) = powers.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
        return Err(invalid(format!("pump powers must be > 0, got {p}")));
    }
    if !(noise_db.is_finite() && noise_db >= 0.0) {
        return Err(invalid(format!("noise level must be >= 0 dB, got {noise_db}")));
    }
    crate::chain::PumpSqueezeModel::new(mu, eta)?;
    let normal = Normal::new(0.0, noise_db).map_err(|e| invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma_db = if noise_db > 0.0 { noise_db } else { DEFAULT_SIGMA_DB };
    let rows = powers
        .iter()
        .map(|&p| {
            let (sq, anti) = model_db(mu, eta, p);
            DataRow {
                power_mw: p,
                squeezing_db: sq + normal.sample(&mut rng),
                antisqueezing_db: anti + normal.sample(&mut rng),
                sigma_db,
            }
        })
        .collect();
    DataSet::new(rows)
}

/// Eight pump powers spanning the measured range, in mW.
pub const RECONSTRUCTION_POWERS_MW: [f64; 8] = [2.0, 5.0, 9.0, 13.0, 17.0, 21.0, 25.0, 28.0];
