//! Roughness matrices, the two-way roughness penalty, GCV smoothing-parameter
//! selection, and the penalized rank-one / rank-r factorization.
//!
//! The factorization minimizes
//!
//! ```text
//! ||Z - u v'||_F^2 + P(u, v),
//! P(u, v) = lu * u'Wu u * ||v||^2 + lv * v'Wv v * ||u||^2
//!         + lu * u'Wu u * lv * v'Wv v,
//! ```
//!
//! which factors as `||Z||^2 - 2 u'Zv + (||u||^2 + lu u'Wu u)(||v||^2 + lv v'Wv v)`.
//! Minimizing over one factor with the other fixed has the closed form
//! `u = (I + lu Wu)^{-1} Z v / (||v||^2 + lv v'Wv v)` (and symmetrically for
//! `v`), so the fit alternates these two half-steps. Both shifted systems are
//! pentadiagonal and solved in O(q).

use nalgebra::{DMatrix, DVector};

use crate::banded::{PentaBands, PentaCholesky};
use crate::error::{Error, Result};

/// Relative objective-change tolerance for the alternating fit. Tight enough
/// that the unpenalized fit reproduces the leading singular pair to well
/// below 1e-6 in Frobenius norm.
pub const ALT_TOL: f64 = 1e-12;

/// Sweep cap for the alternating fit.
pub const MAX_SWEEPS: usize = 500;

/// A symmetric positive semi-definite roughness matrix built from squared
/// second differences, with cached bands and eigenvalues for fast shifted
/// solves and smoother traces. Its null space contains all affine sequences.
#[derive(Debug, Clone)]
pub struct RoughnessMatrix {
    omega: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    diag: Vec<f64>,
    sub1: Vec<f64>,
    sub2: Vec<f64>,
}

impl RoughnessMatrix {
    /// `Omega = D2' D2` where `D2` is the `(q-2) x q` second-difference
    /// operator, so `v' Omega v = sum_i (2 v_i - v_{i-1} - v_{i+1})^2`.
    pub fn second_difference(q: usize) -> Result<Self> {
        if q < 3 {
            return Err(Error::Size {
                what: "roughness matrix dimension",
                expected: 3,
                got: q,
            });
        }
        let mut omega = DMatrix::zeros(q, q);
        for i in 1..q - 1 {
            // row (-1, 2, -1) centered at i
            let idx = [i - 1, i, i + 1];
            let coef = [-1.0, 2.0, -1.0];
            for a in 0..3 {
                for b in 0..3 {
                    omega[(idx[a], idx[b])] += coef[a] * coef[b];
                }
            }
        }
        let mut eigenvalues: Vec<f64> = omega
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .map(|&e: &f64| e.max(0.0))
            .collect();
        eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let diag = (0..q).map(|i| omega[(i, i)]).collect();
        let sub1 = (0..q - 1).map(|i| omega[(i + 1, i)]).collect();
        let sub2 = (0..q - 2).map(|i| omega[(i + 2, i)]).collect();
        Ok(Self {
            omega,
            eigenvalues,
            diag,
            sub1,
            sub2,
        })
    }

    pub fn dim(&self) -> usize {
        self.omega.nrows()
    }

    /// The dense matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.omega
    }

    /// Quadratic form `v' Omega v`.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.omega * v))
    }

    /// Solves `(I + lambda Omega) x = rhs` via the banded Cholesky.
    pub fn shifted_solve(&self, lambda: f64, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        if rhs.len() != self.dim() {
            return Err(Error::Size {
                what: "shifted solve rhs",
                expected: self.dim(),
                got: rhs.len(),
            });
        }
        if lambda == 0.0 {
            return Ok(rhs.clone());
        }
        let bands = PentaBands {
            diag: self.diag.iter().map(|&d| 1.0 + lambda * d).collect(),
            sub1: self.sub1.iter().map(|&d| lambda * d).collect(),
            sub2: self.sub2.iter().map(|&d| lambda * d).collect(),
        };
        let chol = PentaCholesky::factor(&bands)?;
        Ok(chol.solve(rhs))
    }

    /// Trace of the smoother `(I + lambda Omega)^{-1}`.
    pub fn smoother_trace(&self, lambda: f64) -> f64 {
        self.eigenvalues.iter().map(|&e| 1.0 / (1.0 + lambda * e)).sum()
    }
}

/// The two-way roughness penalty for one layer.
pub fn penalty(
    u: &DVector<f64>,
    v: &DVector<f64>,
    lambda_u: f64,
    lambda_v: f64,
    omega_u: &RoughnessMatrix,
    omega_v: &RoughnessMatrix,
) -> Result<f64> {
    if u.len() != omega_u.dim() {
        return Err(Error::Size {
            what: "penalty u",
            expected: omega_u.dim(),
            got: u.len(),
        });
    }
    if v.len() != omega_v.dim() {
        return Err(Error::Size {
            what: "penalty v",
            expected: omega_v.dim(),
            got: v.len(),
        });
    }
    if lambda_u < 0.0 || lambda_v < 0.0 {
        return Err(Error::Argument("smoothing parameters must be >= 0".into()));
    }
    let qu = lambda_u * omega_u.quad_form(u);
    let qv = lambda_v * omega_v.quad_form(v);
    Ok(qu * v.norm_squared() + qv * u.norm_squared() + qu * qv)
}

/// Result of a GCV scan over a smoothing-parameter grid.
#[derive(Debug, Clone)]
pub struct GcvFit {
    pub lambda: f64,
    pub fitted: DVector<f64>,
    pub score: f64,
}

/// Scans `grid` and returns the minimizer of
/// `GCV(l) = (||y - S_l y||^2 / q) / (1 - tr(S_l)/q)^2` with
/// `S_l = (I + l Omega)^{-1}`, together with its fit. Ties keep the earliest
/// grid point, so the scan is deterministic.
pub fn gcv_select(y: &DVector<f64>, omega: &RoughnessMatrix, grid: &[f64]) -> Result<GcvFit> {
    if grid.is_empty() {
        return Err(Error::Argument("GCV grid must be nonempty".into()));
    }
    if grid.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Argument("GCV grid values must be > 0".into()));
    }
    let q = omega.dim() as f64;
    let mut best: Option<GcvFit> = None;
    for &lambda in grid {
        let fitted = omega.shifted_solve(lambda, y)?;
        let rss = (y - &fitted).norm_squared();
        let denom = 1.0 - omega.smoother_trace(lambda) / q;
        let score = (rss / q) / (denom * denom);
        if best.as_ref().map_or(true, |b| score < b.score) {
            best = Some(GcvFit { lambda, fitted, score });
        }
    }
    Ok(best.unwrap())
}

/// Default smoothing-parameter grid: 30 points log-spaced on [1e-6, 1e6].
pub fn default_lambda_grid() -> Vec<f64> {
    let n = 30;
    (0..n)
        .map(|i| 10f64.powf(-6.0 + 12.0 * i as f64 / (n - 1) as f64))
        .collect()
}

/// How smoothing parameters are chosen during the alternating fit.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaPolicy {
    /// The same fixed pair for every layer.
    Fixed { lambda_u: f64, lambda_v: f64 },
    /// Per-layer fixed pairs; a layer beyond the list reuses the last pair.
    FixedPerLayer { pairs: Vec<(f64, f64)> },
    /// Refresh each parameter by GCV before its half-step.
    AdaptiveGcv { grid: Vec<f64> },
}

impl LambdaPolicy {
    pub fn adaptive() -> Self {
        LambdaPolicy::AdaptiveGcv {
            grid: default_lambda_grid(),
        }
    }

    pub fn unpenalized() -> Self {
        LambdaPolicy::Fixed {
            lambda_u: 0.0,
            lambda_v: 0.0,
        }
    }

    /// The policy a single layer sees.
    fn for_layer(&self, layer: usize) -> Result<LambdaPolicy> {
        match self {
            LambdaPolicy::FixedPerLayer { pairs } => {
                let (lambda_u, lambda_v) = *pairs
                    .get(layer)
                    .or_else(|| pairs.last())
                    .ok_or_else(|| Error::Argument("fixed lambda pair list is empty".into()))?;
                Ok(LambdaPolicy::Fixed { lambda_u, lambda_v })
            }
            other => Ok(other.clone()),
        }
    }
}

/// Converged rank-one layer.
#[derive(Debug, Clone)]
pub struct RankOneFit {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub lambda_u: f64,
    pub lambda_v: f64,
    /// Objective after every half-step, evaluated at the current smoothing
    /// parameters. Non-increasing when the parameters are fixed.
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
    /// Set when the target (or a deflated residual) carried no signal and
    /// zero factors were returned.
    pub degenerate: bool,
}

fn objective(
    z_norm2: f64,
    z: &DMatrix<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
    lambda_u: f64,
    lambda_v: f64,
    omega_u: &RoughnessMatrix,
    omega_v: &RoughnessMatrix,
) -> f64 {
    let su = u.norm_squared() + lambda_u * omega_u.quad_form(u);
    let sv = v.norm_squared() + lambda_v * omega_v.quad_form(v);
    z_norm2 - 2.0 * u.dot(&(z * v)) + su * sv
}

/// Alternating penalized rank-one fit of `Z`, starting from `init`.
///
/// Each sweep runs the v half-step then the u half-step; with the adaptive
/// policy the corresponding smoothing parameter is re-selected by GCV
/// immediately before each half-step. Stops when the relative objective
/// change over a sweep drops below [`ALT_TOL`] or after [`MAX_SWEEPS`].
pub fn fit_rank_one(
    z: &DMatrix<f64>,
    omega_u: &RoughnessMatrix,
    omega_v: &RoughnessMatrix,
    init: (DVector<f64>, DVector<f64>),
    policy: &LambdaPolicy,
) -> Result<RankOneFit> {
    let (m, p) = (z.nrows(), z.ncols());
    if omega_u.dim() != m || omega_v.dim() != p {
        return Err(Error::Size {
            what: "roughness matrices vs target",
            expected: m + p,
            got: omega_u.dim() + omega_v.dim(),
        });
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::Argument("target matrix must be finite".into()));
    }
    let (mut u, mut v) = init;
    if u.len() != m || v.len() != p {
        return Err(Error::Size {
            what: "init factors",
            expected: m + p,
            got: u.len() + v.len(),
        });
    }
    if u.norm() == 0.0 || v.norm() == 0.0 {
        return Err(Error::Argument("init factors must be nonzero".into()));
    }
    let z_norm2 = z.norm_squared();
    let policy = policy.for_layer(0)?;
    let (mut lambda_u, mut lambda_v) = match &policy {
        LambdaPolicy::Fixed { lambda_u, lambda_v } => {
            if *lambda_u < 0.0 || *lambda_v < 0.0 {
                return Err(Error::Argument("smoothing parameters must be >= 0".into()));
            }
            (*lambda_u, *lambda_v)
        }
        // refreshed before each half-step; start unpenalized
        _ => (0.0, 0.0),
    };
    if z_norm2 == 0.0 {
        return Ok(RankOneFit {
            u: DVector::zeros(m),
            v: DVector::zeros(p),
            lambda_u,
            lambda_v,
            objective_trace: vec![0.0],
            sweeps: 0,
            degenerate: true,
        });
    }

    let mut trace = Vec::new();
    let mut prev = objective(z_norm2, z, &u, &v, lambda_u, lambda_v, omega_u, omega_v);
    let mut degenerate = false;
    let mut sweeps = 0;
    for sweep in 1..=MAX_SWEEPS {
        sweeps = sweep;
        // v-step: fix u, update v
        let ztu = z.transpose() * &u;
        if let LambdaPolicy::AdaptiveGcv { grid } = &policy {
            let target = &ztu / u.norm_squared();
            lambda_v = gcv_select(&target, omega_v, grid)?.lambda;
        }
        let denom_u = u.norm_squared() + lambda_u * omega_u.quad_form(&u);
        v = omega_v.shifted_solve(lambda_v, &ztu)? / denom_u;
        if v.norm() == 0.0 {
            degenerate = true;
            break;
        }
        trace.push(objective(z_norm2, z, &u, &v, lambda_u, lambda_v, omega_u, omega_v));

        // u-step: fix v, update u
        let zv = z * &v;
        if let LambdaPolicy::AdaptiveGcv { grid } = &policy {
            let target = &zv / v.norm_squared();
            lambda_u = gcv_select(&target, omega_u, grid)?.lambda;
        }
        let denom_v = v.norm_squared() + lambda_v * omega_v.quad_form(&v);
        u = omega_u.shifted_solve(lambda_u, &zv)? / denom_v;
        if u.norm() == 0.0 {
            degenerate = true;
            break;
        }
        let cur = objective(z_norm2, z, &u, &v, lambda_u, lambda_v, omega_u, omega_v);
        trace.push(cur);

        let rel = (prev - cur).abs() / prev.abs().max(f64::MIN_POSITIVE);
        prev = cur;
        if rel < ALT_TOL {
            break;
        }
    }
    if degenerate {
        u = DVector::zeros(m);
        v = DVector::zeros(p);
    }
    Ok(RankOneFit {
        u,
        v,
        lambda_u,
        lambda_v,
        objective_trace: trace,
        sweeps,
        degenerate,
    })
}

/// Rank-`r` factor pair with per-layer smoothing parameters. Columns satisfy
/// the identification conditions (orthogonal columns, unit-mean `u` columns)
/// only after [`FactorModel::identified`].
#[derive(Debug, Clone)]
pub struct FactorModel {
    /// `m x r` arrival-axis components.
    pub u: DMatrix<f64>,
    /// `p x r` wait-axis components.
    pub v: DMatrix<f64>,
    /// Per-layer `(lambda_u, lambda_v)` pairs.
    pub lambdas: Vec<(f64, f64)>,
}

impl FactorModel {
    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    /// The modeled surface `U V'`.
    pub fn surface(&self) -> DMatrix<f64> {
        &self.u * self.v.transpose()
    }

    /// Post-processed copy satisfying the identification conditions; the
    /// product `U V'` is preserved exactly.
    pub fn identified(&self) -> Result<FactorModel> {
        let (u, v) = identify(&self.u, &self.v)?;
        Ok(FactorModel {
            u,
            v,
            lambdas: self.lambdas.clone(),
        })
    }
}

/// Leading singular triplets of `z`, sorted by descending singular value.
/// Returns `(sigma, u_cols, v_cols)` with unit singular vectors.
pub(crate) fn svd_leading(z: &DMatrix<f64>, r: usize) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let svd = z.clone().svd(true, true);
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap());
    let r = r.min(order.len());
    let u_full = svd.u.as_ref().expect("svd with u");
    let vt_full = svd.v_t.as_ref().expect("svd with v_t");
    let mut sigmas = Vec::with_capacity(r);
    let mut u = DMatrix::zeros(z.nrows(), r);
    let mut v = DMatrix::zeros(z.ncols(), r);
    for (i, &idx) in order.iter().take(r).enumerate() {
        sigmas.push(sv[idx]);
        u.set_column(i, &u_full.column(idx));
        v.set_column(i, &vt_full.row(idx).transpose());
    }
    (sigmas, u, v)
}

/// Deterministic sign fix: flip so the vector's mean (or, when the mean
/// vanishes, its largest-magnitude entry) is positive.
fn sign_fix(w: &mut DVector<f64>, x: &mut DVector<f64>) {
    let mean = w.mean();
    let s = if mean != 0.0 {
        mean.signum()
    } else {
        let mut s = 1.0;
        let mut best = 0.0;
        for &e in w.iter() {
            if e.abs() > best {
                best = e.abs();
                s = e.signum();
            }
        }
        s
    };
    if s < 0.0 {
        *w = -&*w;
        *x = -&*x;
    }
}

/// Sequential rank-`r` fit: layer `i` is a penalized rank-one fit of the
/// residual after subtracting the previous converged layers. Factors are
/// returned before identification.
pub fn fit_rank_r(
    z: &DMatrix<f64>,
    r: usize,
    omega_u: &RoughnessMatrix,
    omega_v: &RoughnessMatrix,
    policy: &LambdaPolicy,
) -> Result<FactorModel> {
    let (m, p) = (z.nrows(), z.ncols());
    if r < 1 || r > m.min(p) {
        return Err(Error::Argument(format!(
            "rank {r} out of range 1..={}",
            m.min(p)
        )));
    }
    let mut residual = z.clone();
    let mut u = DMatrix::zeros(m, r);
    let mut v = DMatrix::zeros(p, r);
    let mut lambdas = Vec::with_capacity(r);
    for layer in 0..r {
        let layer_policy = policy.for_layer(layer)?;
        let fit = if residual.norm_squared() == 0.0 {
            RankOneFit {
                u: DVector::zeros(m),
                v: DVector::zeros(p),
                lambda_u: 0.0,
                lambda_v: 0.0,
                objective_trace: vec![0.0],
                sweeps: 0,
                degenerate: true,
            }
        } else {
            let (sigmas, u0, v0) = svd_leading(&residual, 1);
            let mut w = DVector::from_column_slice(u0.column(0).as_slice());
            let mut x = DVector::from_column_slice(v0.column(0).as_slice());
            sign_fix(&mut w, &mut x);
            fit_rank_one(&residual, omega_u, omega_v, (w, x * sigmas[0]), &layer_policy)?
        };
        residual -= &fit.u * fit.v.transpose();
        u.set_column(layer, &fit.u);
        v.set_column(layer, &fit.v);
        lambdas.push((fit.lambda_u, fit.lambda_v));
    }
    Ok(FactorModel { u, v, lambdas })
}

/// Restores the identification conditions by re-decomposing `U V'`: each
/// layer's `u` is the left singular vector rescaled to mean 1 (sign chosen so
/// the mean is positive) and `v` carries the remaining scale. The product is
/// preserved exactly; column scaling keeps the columns orthogonal.
///
/// Layers with a numerically zero singular value come back as a unit-mean
/// constant `u` column against a zero `v` column.
pub fn identify(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let r = u.ncols();
    if v.ncols() != r {
        return Err(Error::Size {
            what: "factor widths",
            expected: r,
            got: v.ncols(),
        });
    }
    let product = u * v.transpose();
    let scale = product.norm();
    if scale == 0.0 {
        return Err(Error::Argument("cannot identify an identically zero product".into()));
    }
    let (sigmas, w, x) = svd_leading(&product, r);
    let m = u.nrows();
    let p = v.nrows();
    let mut u_out = DMatrix::zeros(m, r);
    let mut v_out = DMatrix::zeros(p, r);
    for i in 0..r {
        if sigmas[i] <= 1e-14 * sigmas[0] {
            u_out.set_column(i, &DVector::from_element(m, 1.0));
            // v column stays zero; the layer contributes nothing
            continue;
        }
        let mut wi = DVector::from_column_slice(w.column(i).as_slice());
        let mut xi = DVector::from_column_slice(x.column(i).as_slice());
        sign_fix(&mut wi, &mut xi);
        let mean = wi.mean();
        if mean.abs() <= 1e-12 {
            return Err(Error::Identification { layer: i + 1 });
        }
        u_out.set_column(i, &(&wi / mean));
        v_out.set_column(i, &(xi * (sigmas[i] * mean)));
    }
    Ok((u_out, v_out))
}
