//! The full penalized-likelihood estimator: an ADMM loop alternating a
//! closed-form per-cell hazard update, a penalized low-rank factorization of
//! `H + Theta/rho`, and a dual ascent step, with an adaptive balancing
//! parameter and residual-based stopping. Also hosts the bootstrap
//! confidence-band machinery built on refitting resampled records.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellStats, EventRecord, TimeGrid};
use crate::mle::{log_likelihood, mle, HazardMatrix};
use crate::smooth::{fit_rank_r, FactorModel, LambdaPolicy, RoughnessMatrix};

/// Estimator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Number of rank-one layers.
    pub rank: usize,
    /// Initial balancing parameter.
    pub rho0: f64,
    /// Relative stopping threshold: stop when `max(z, s) <= tol * ||H||_F^2`.
    pub tol: f64,
    /// Iteration cap.
    pub max_iter: usize,
    /// Smoothing-parameter policy for the factorization subproblem.
    pub lambda: LambdaPolicy,
    /// Whether the balancing parameter follows the residual-ratio schedule.
    pub adapt_rho: bool,
    /// Bootstrap replicate count.
    pub bootstrap_reps: usize,
    /// Seed for every random step downstream (bootstrap resampling).
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            rank: 1,
            rho0: 0.1,
            tol: 1e-6,
            max_iter: 500,
            lambda: LambdaPolicy::adaptive(),
            adapt_rho: true,
            bootstrap_reps: 100,
            seed: 0,
        }
    }
}

impl FitConfig {
    /// Checks the settings against the data shape.
    pub fn validate(&self, m: usize, p: usize) -> Result<()> {
        if !(self.rho0 > 0.0) {
            return Err(Error::Config(format!("rho0 must be > 0, got {}", self.rho0)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.rank < 1 || self.rank > m.min(p) {
            return Err(Error::Config(format!(
                "rank {} out of range 1..={}",
                self.rank,
                m.min(p)
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loop state. [`fit`] drives it to convergence; it is public so tests can
/// step the iteration and inspect invariants.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub h: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub rho: f64,
    pub iter: usize,
    /// Primal residual `z`, a squared Frobenius norm.
    pub primal: f64,
    /// Dual residual `s`, a squared Frobenius norm.
    pub dual: f64,
    /// Smoothing parameters of the latest factorization, per layer.
    pub lambdas: Vec<(f64, f64)>,
}

impl AdmmState {
    /// Initial state: identified rank-`r` factorization of the grand-mean
    /// imputed MLE, zero dual matrix, `rho = rho0`. The previous-`H` slot is
    /// seeded with the imputed MLE itself: the first hazard update at a
    /// small `rho` stays close to the MLE, so the first dual residual is
    /// small and the schedule ramps `rho` up immediately instead of idling.
    pub fn init(
        stats: &CellStats,
        cfg: &FitConfig,
        omega_u: &RoughnessMatrix,
        omega_v: &RoughnessMatrix,
    ) -> Result<Self> {
        let imputed = mle(stats).imputed()?;
        let init = fit_rank_r(&imputed, cfg.rank, omega_u, omega_v, &cfg.lambda)?.identified()?;
        Ok(Self {
            h: imputed,
            u: init.u,
            v: init.v,
            theta: DMatrix::zeros(stats.rows(), stats.cols()),
            rho: cfg.rho0,
            iter: 0,
            primal: f64::INFINITY,
            dual: f64::INFINITY,
            lambdas: init.lambdas,
        })
    }

    /// One iteration: hazard update, factorization update, residuals, stop
    /// check, then (if not stopping) dual update and the rho schedule.
    /// Returns true when the stop criterion is met. `policy` is the
    /// smoothing-parameter policy for this iteration's factorization (the
    /// driver may freeze it after a warm phase).
    pub fn step(
        &mut self,
        stats: &CellStats,
        cfg: &FitConfig,
        omega_u: &RoughnessMatrix,
        omega_v: &RoughnessMatrix,
        policy: &LambdaPolicy,
    ) -> Result<bool> {
        self.iter += 1;
        let h_new = h_update(stats, &self.u, &self.v, &self.theta, self.rho);
        let uv_prev = &self.u * self.v.transpose();
        let (z, s) = residuals(&h_new, &uv_prev, &self.h);
        self.h = h_new;
        self.primal = z;
        self.dual = s;

        let model = uv_update(
            &self.h,
            &self.theta,
            self.rho,
            cfg.rank,
            omega_u,
            omega_v,
            policy,
        )?;
        self.u = model.u;
        self.v = model.v;
        self.lambdas = model.lambdas;

        if z.max(s) <= cfg.tol * self.h.norm_squared() {
            return Ok(true);
        }
        self.theta = dual_update(&self.theta, &self.h, &self.u, &self.v, self.rho);
        if cfg.adapt_rho && self.iter < RHO_FREEZE_ITER {
            self.adapt_rho_to_fixed_point(stats);
            if self.iter == RHO_FREEZE_ITER - 1 && z > 3.0 * s {
                // the schedule is about to freeze while the primal residual
                // still dominates; stopping needs both residuals down and a
                // larger rho is what drives the primal one, so settle on the
                // primal-favoring side of the schedule's band
                self.rho *= 2.0;
            }
        }
        Ok(false)
    }

    /// Iterates the residual-ratio schedule until the candidate rho stops
    /// moving. After the first application on the measured residuals, each
    /// candidate is scored by simulating two hazard updates with a dual
    /// ascent between them (factors held fixed), which yields a primal and a
    /// dual residual both produced at the candidate; a single outer
    /// iteration can then carry rho across several orders of magnitude
    /// instead of waiting for later measured residuals.
    fn adapt_rho_to_fixed_point(&mut self, stats: &CellStats) {
        let uv_now = &self.u * self.v.transpose();
        let mut seen = Vec::with_capacity(RHO_INNER_APPLICATIONS);
        let (mut pz, mut ps) = (self.primal, self.dual);
        for _ in 0..RHO_INNER_APPLICATIONS {
            let next = adapt_rho(self.rho, pz, ps);
            if next == self.rho {
                break;
            }
            if seen.contains(&next) {
                // oscillation between two candidates; settle on the larger
                self.rho = self.rho.max(next);
                break;
            }
            seen.push(self.rho);
            self.rho = next;
            let ahead = h_update(stats, &self.u, &self.v, &self.theta, self.rho);
            let theta2 = &self.theta + (&ahead - &uv_now) * self.rho;
            let ahead2 = h_update(stats, &self.u, &self.v, &theta2, self.rho);
            (pz, ps) = residuals(&ahead2, &uv_now, &ahead);
        }
    }
}

/// Converged (or capped) estimate with diagnostics.
#[derive(Debug, Clone)]
pub struct HazardFit {
    /// Identified factors.
    pub factors: FactorModel,
    /// Final constrained hazard matrix from the closed-form update.
    pub h: DMatrix<f64>,
    /// Reported surface: `U V'` with negative entries clamped to zero.
    pub surface: DMatrix<f64>,
    /// Log likelihood of the clamped surface.
    pub loglik: f64,
    pub rho_trace: Vec<f64>,
    pub primal_trace: Vec<f64>,
    pub dual_trace: Vec<f64>,
    /// How many surface entries the clamp touched.
    pub clamp_count: usize,
    pub converged: bool,
    pub iterations: usize,
}

/// Closed-form hazard update. Entrywise, with `b = t - rho * u'v + theta`,
/// the minimizer of the per-cell augmented objective is the nonnegative root
/// of `rho h^2 + b h - d = 0`:
///
/// ```text
/// h = (-b + sqrt(b^2 + 4 rho d)) / (2 rho)
/// ```
///
/// evaluated in a cancellation-free form; cells with `d = 0` reduce to
/// `max(u'v - (t + theta)/rho, 0)`.
pub fn h_update(
    stats: &CellStats,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    rho: f64,
) -> DMatrix<f64> {
    debug_assert!(rho > 0.0);
    let fitted = u * v.transpose();
    let (m, p) = (stats.rows(), stats.cols());
    DMatrix::from_fn(m, p, |j, k| {
        let t = stats.t_sum[(j, k)];
        let d = stats.d_sum[(j, k)];
        let b = t - rho * fitted[(j, k)] + theta[(j, k)];
        if d == 0.0 {
            (-b / rho).max(0.0)
        } else if b >= 0.0 {
            2.0 * d / (b + (b * b + 4.0 * rho * d).sqrt())
        } else {
            (-b + (b * b + 4.0 * rho * d).sqrt()) / (2.0 * rho)
        }
    })
}

/// Factorization update: penalized rank-`r` fit of `H + Theta / rho`.
pub fn uv_update(
    h: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    rho: f64,
    rank: usize,
    omega_u: &RoughnessMatrix,
    omega_v: &RoughnessMatrix,
    policy: &LambdaPolicy,
) -> Result<FactorModel> {
    let target = h + theta / rho;
    fit_rank_r(&target, rank, omega_u, omega_v, policy)
}

/// Dual ascent: `Theta + rho (H - U V')`.
pub fn dual_update(
    theta: &DMatrix<f64>,
    h: &DMatrix<f64>,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    rho: f64,
) -> DMatrix<f64> {
    theta + (h - u * v.transpose()) * rho
}

/// Primal and dual residuals as squared Frobenius norms:
/// `z = ||H - U_prev V_prev'||_F^2`, `s = ||H - H_prev||_F^2`.
pub fn residuals(h: &DMatrix<f64>, uv_prev: &DMatrix<f64>, h_prev: &DMatrix<f64>) -> (f64, f64) {
    let z = (h - uv_prev).norm_squared();
    let s = (h - h_prev).norm_squared();
    (z, s)
}

/// Residual-ratio schedule for the balancing parameter.
pub fn adapt_rho(rho: f64, z: f64, s: f64) -> f64 {
    if 100.0 * s < z {
        10.0 * rho
    } else if 10.0 * s < z {
        2.0 * rho
    } else if z >= s / 10.0 {
        rho
    } else if z >= s / 100.0 {
        rho / 2.0
    } else {
        rho / 10.0
    }
}

/// Iterations during which an adaptive policy keeps re-selecting smoothing
/// parameters; afterwards the last selection is frozen. The dual matrix is
/// still small during the warm phase, so the GCV targets are clean; letting
/// the selection keep floating on the dual-contaminated later targets makes
/// the argmin chatter between grid points and the loop cannot contract.
const LAMBDA_FREEZE_ITER: usize = 6;

/// The balancing-parameter schedule runs during the first iterations and is
/// then frozen, which the convergence theory for a variable penalty
/// parameter requires anyway. A change in rho pollutes the next few
/// measured ratios (the hazard update's anchor moves), so within the window
/// each application iterates the schedule to a fixed point by previewing
/// the next hazard update under the candidate rho (the update is closed
/// form and cheap); rho therefore jumps straight to the value that balances
/// the residuals instead of inching toward it on polluted measurements.
const RHO_FREEZE_ITER: usize = 20;

/// Cap on schedule applications per iteration; the up moves cover eleven
/// orders of magnitude under this cap.
const RHO_INNER_APPLICATIONS: usize = 12;

/// Runs the full estimator on aggregated statistics.
///
/// Initialization takes the identified rank-`r` factorization of the
/// grand-mean-imputed MLE. Each iteration runs the hazard update, the
/// factorization update, the residual/stop check, the dual update, and (when
/// enabled) the balancing-parameter schedule. An adaptive smoothing policy
/// re-selects during the first [`LAMBDA_FREEZE_ITER`] iterations and is then
/// frozen. Hitting the iteration cap is reported through
/// `converged = false`, not as an error.
pub fn fit(stats: &CellStats, cfg: &FitConfig) -> Result<HazardFit> {
    let (m, p) = (stats.rows(), stats.cols());
    cfg.validate(m, p)?;
    if stats.t_sum.sum() <= 0.0 {
        return Err(Error::Argument("statistics carry no exposure".into()));
    }
    let omega_u = RoughnessMatrix::second_difference(m)?;
    let omega_v = RoughnessMatrix::second_difference(p)?;

    let mut state = AdmmState::init(stats, cfg, &omega_u, &omega_v)?;
    let mut policy = cfg.lambda.clone();
    let mut rho_trace = Vec::new();
    let mut primal_trace = Vec::new();
    let mut dual_trace = Vec::new();
    let mut converged = false;

    while state.iter < cfg.max_iter {
        let rho_before = state.rho;
        let stop = state.step(stats, cfg, &omega_u, &omega_v, &policy)?;
        rho_trace.push(rho_before);
        primal_trace.push(state.primal);
        dual_trace.push(state.dual);
        if stop {
            converged = true;
            break;
        }
        if state.iter == LAMBDA_FREEZE_ITER && matches!(policy, LambdaPolicy::AdaptiveGcv { .. }) {
            policy = LambdaPolicy::FixedPerLayer {
                pairs: state.lambdas.clone(),
            };
        }
    }
    let iterations = state.iter;

    let factors = FactorModel {
        u: state.u,
        v: state.v,
        lambdas: state.lambdas,
    }
    .identified()?;
    let raw_surface = factors.surface();
    let mut clamp_count = 0;
    let surface = raw_surface.map(|x| {
        if x < 0.0 {
            clamp_count += 1;
            0.0
        } else {
            x
        }
    });
    let loglik = log_likelihood(&HazardMatrix::dense(surface.clone()), stats)?;

    Ok(HazardFit {
        factors,
        h: state.h,
        surface,
        loglik,
        rho_trace,
        primal_trace,
        dual_trace,
        clamp_count,
        converged,
        iterations,
    })
}

/// Pointwise band for one rank-one layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentBands {
    pub u_lower: Vec<f64>,
    pub u_estimate: Vec<f64>,
    pub u_upper: Vec<f64>,
    pub v_lower: Vec<f64>,
    pub v_estimate: Vec<f64>,
    pub v_upper: Vec<f64>,
}

/// Pointwise 2.5%/97.5% bootstrap bands for every factor component.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapBands {
    pub components: Vec<ComponentBands>,
    /// Replicates requested.
    pub b_requested: usize,
    /// Replicates that converged and entered the quantiles.
    pub b_used: usize,
    /// Replicates excluded for non-convergence.
    pub failed: usize,
    pub seed: u64,
}

impl BootstrapBands {
    pub fn rank(&self) -> usize {
        self.components.len()
    }
}

/// Outward-rounded empirical quantile pair: the lower index is floored and
/// the upper index is ceiled, so small replicate counts yield conservative
/// bands (min/max for fewer than ~40 replicates at the 2.5%/97.5% level).
fn quantile_pair(sorted: &[f64], alpha: f64) -> (f64, f64) {
    let n = sorted.len();
    let lo = ((alpha * (n - 1) as f64).floor() as usize).min(n - 1);
    let hi = (((1.0 - alpha) * (n - 1) as f64).ceil() as usize).min(n - 1);
    (sorted[lo], sorted[hi])
}

fn resample_indices(n: usize, rep: usize, seed: u64) -> Vec<usize> {
    if rep == 0 {
        return (0..n).collect();
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Bootstrap pointwise confidence bands: refit on `B` with-replacement
/// resamples of the records, then take per-point empirical quantiles of each
/// identified component. Replicate 0 refits the original sample, so the
/// point estimate always belongs to the quantile pool and doubles as the
/// reported estimate. Non-convergent replicates are counted and excluded.
///
/// Replicates draw from independent seeded streams keyed by `(seed, rep)`,
/// so the result does not depend on thread scheduling.
pub fn bootstrap(
    records: &[EventRecord],
    arrival_grid: &TimeGrid,
    wait_grid: &TimeGrid,
    cfg: &FitConfig,
) -> Result<BootstrapBands> {
    if records.is_empty() {
        return Err(Error::Argument("bootstrap needs at least one record".into()));
    }
    if cfg.bootstrap_reps == 0 {
        return Err(Error::Config("bootstrap replicate count must be >= 1".into()));
    }
    let n = records.len();
    let b = cfg.bootstrap_reps;

    let fits: Vec<Result<(bool, FactorModel)>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let idx = resample_indices(n, rep, cfg.seed);
            let sample: Vec<EventRecord> = idx.iter().map(|&i| records[i]).collect();
            let stats = CellStats::from_records(&sample, arrival_grid, wait_grid)?;
            let fit = fit(&stats, cfg)?;
            Ok((fit.converged, fit.factors))
        })
        .collect();

    let mut estimate: Option<FactorModel> = None;
    let mut pool: Vec<FactorModel> = Vec::with_capacity(b);
    let mut failed = 0usize;
    for (rep, res) in fits.into_iter().enumerate() {
        let (conv, factors) = res?;
        if rep == 0 {
            estimate = Some(factors.clone());
        }
        if conv {
            pool.push(factors);
        } else {
            failed += 1;
        }
    }
    let estimate = estimate.expect("replicate 0 always present");
    if pool.is_empty() {
        return Err(Error::InsufficientData(
            "no bootstrap replicate converged".into(),
        ));
    }

    let r = estimate.rank();
    let m = estimate.u.nrows();
    let p = estimate.v.nrows();
    let mut components = Vec::with_capacity(r);
    for layer in 0..r {
        let mut bands = ComponentBands {
            u_lower: vec![0.0; m],
            u_estimate: estimate.u.column(layer).iter().copied().collect(),
            u_upper: vec![0.0; m],
            v_lower: vec![0.0; p],
            v_estimate: estimate.v.column(layer).iter().copied().collect(),
            v_upper: vec![0.0; p],
        };
        let mut values: Vec<f64> = Vec::with_capacity(pool.len());
        for j in 0..m {
            values.clear();
            values.extend(pool.iter().map(|f| f.u[(j, layer)]));
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (lo, hi) = quantile_pair(&values, 0.025);
            bands.u_lower[j] = lo;
            bands.u_upper[j] = hi;
        }
        for k in 0..p {
            values.clear();
            values.extend(pool.iter().map(|f| f.v[(k, layer)]));
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (lo, hi) = quantile_pair(&values, 0.025);
            bands.v_lower[k] = lo;
            bands.v_upper[k] = hi;
        }
        components.push(bands);
    }

    Ok(BootstrapBands {
        components,
        b_requested: b,
        b_used: pool.len(),
        failed,
        seed: cfg.seed,
    })
}

/// Serializable snapshot of a fit, pairing the factors with the grids they
/// live on. The reported surface is the outer product of the components with
/// negatives clamped at zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDocument {
    pub arrival_knots: Vec<f64>,
    pub wait_knots: Vec<f64>,
    pub rank: usize,
    /// Arrival-axis components, one vector of length `m` per layer.
    pub u: Vec<Vec<f64>>,
    /// Wait-axis components, one vector of length `p` per layer.
    pub v: Vec<Vec<f64>>,
    pub lambda_u: Vec<f64>,
    pub lambda_v: Vec<f64>,
    pub rho_trace: Vec<f64>,
    pub primal_trace: Vec<f64>,
    pub dual_trace: Vec<f64>,
    pub clamp_count: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Log likelihood of the clamped surface; absent when not finite.
    pub loglik: Option<f64>,
}

impl FitDocument {
    pub fn new(fit: &HazardFit, arrival_grid: &TimeGrid, wait_grid: &TimeGrid) -> Self {
        let r = fit.factors.rank();
        Self {
            arrival_knots: arrival_grid.knots().to_vec(),
            wait_knots: wait_grid.knots().to_vec(),
            rank: r,
            u: (0..r)
                .map(|i| fit.factors.u.column(i).iter().copied().collect())
                .collect(),
            v: (0..r)
                .map(|i| fit.factors.v.column(i).iter().copied().collect())
                .collect(),
            lambda_u: fit.factors.lambdas.iter().map(|l| l.0).collect(),
            lambda_v: fit.factors.lambdas.iter().map(|l| l.1).collect(),
            rho_trace: fit.rho_trace.clone(),
            primal_trace: fit.primal_trace.clone(),
            dual_trace: fit.dual_trace.clone(),
            clamp_count: fit.clamp_count,
            converged: fit.converged,
            iterations: fit.iterations,
            loglik: fit.loglik.is_finite().then_some(fit.loglik),
        }
    }

    /// Clamped surface reconstructed from the stored components.
    pub fn surface(&self) -> DMatrix<f64> {
        let m = self.arrival_knots.len() - 1;
        let p = self.wait_knots.len() - 1;
        let mut out = DMatrix::zeros(m, p);
        for layer in 0..self.rank {
            let u = DVector::from_column_slice(&self.u[layer]);
            let v = DVector::from_column_slice(&self.v[layer]);
            out += u * v.transpose();
        }
        out.map(|x| x.max(0.0))
    }
}
