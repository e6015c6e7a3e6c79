//! Steady-state abandonment evaluation for an M/M/n+G queue whose patience
//! distribution comes from a piecewise-constant hazard, plus a discrete-event
//! simulation oracle used to validate the analytic evaluator.
//!
//! The analytic route evaluates the stationary offered-wait density of a
//! delayed customer, `w(t) = exp(lambda * int_0^t S(u) du - n mu t)` with `S`
//! the patience survival function, and computes
//!
//! ```text
//! P{abandon | delayed} = int (1 - S(t)) w(t) dt / int w(t) dt
//! ```
//!
//! by adaptive quadrature split at the hazard knots, with an analytic
//! exponential bound on the tail.
//!
//! Extrapolation policy for estimated hazards: the hazard is zero below the
//! first knot and held constant at the final rate beyond the last knot. The
//! tail rate must be positive so the integrals converge.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::PiecewiseHazard;

/// M/M/n queue with generally distributed patience.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueModel {
    /// Arrival rate per unit time.
    pub lambda: f64,
    /// Per-server service rate.
    pub mu: f64,
    /// Number of servers.
    pub n: usize,
    /// Patience hazard; constant at its final rate beyond the grid.
    pub patience: PiecewiseHazard,
}

impl QueueModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !(self.mu > 0.0) {
            return Err(Error::Config(format!(
                "arrival and service rates must be > 0, got lambda {} mu {}",
                self.lambda, self.mu
            )));
        }
        if self.n < 1 {
            return Err(Error::Config("server count must be >= 1".into()));
        }
        if !(self.tail_rate() > 0.0) {
            return Err(Error::Config(
                "patience tail rate must be > 0 for the evaluator to converge".into(),
            ));
        }
        Ok(())
    }

    /// Hazard rate beyond the last knot.
    pub fn tail_rate(&self) -> f64 {
        *self.patience.rates.last().unwrap()
    }
}

/// Piecewise-exponential survival curve with cached knot values and
/// cumulative integrals, extended by the tail rule.
#[derive(Debug, Clone)]
struct SurvivalCurve {
    knots: Vec<f64>,
    rates: Vec<f64>,
    tail_rate: f64,
    /// Survival at each knot.
    s_at: Vec<f64>,
    /// `int_0^knot S` at each knot.
    i_at: Vec<f64>,
}

impl SurvivalCurve {
    fn new(hz: &PiecewiseHazard) -> Self {
        let knots = hz.grid.knots().to_vec();
        let rates = hz.rates.clone();
        let tail_rate = *rates.last().unwrap();
        let q = knots.len();
        let mut s_at = vec![1.0; q];
        let mut i_at = vec![0.0; q];
        // zero hazard below the first knot
        i_at[0] = knots[0];
        for k in 1..q {
            let width = knots[k] - knots[k - 1];
            let rate = rates[k - 1];
            let decay = (-rate * width).exp();
            s_at[k] = s_at[k - 1] * decay;
            i_at[k] = i_at[k - 1]
                + if rate > 0.0 {
                    s_at[k - 1] * (1.0 - decay) / rate
                } else {
                    s_at[k - 1] * width
                };
        }
        Self {
            knots,
            rates,
            tail_rate,
            s_at,
            i_at,
        }
    }

    fn end(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    fn survival(&self, t: f64) -> f64 {
        if t <= self.knots[0] {
            return 1.0;
        }
        let end = self.end();
        if t > end {
            let s_end = *self.s_at.last().unwrap();
            return s_end * (-(self.tail_rate) * (t - end)).exp();
        }
        let k = self.knots.partition_point(|&g| g < t); // first knot >= t
        let a = self.knots[k - 1];
        self.s_at[k - 1] * (-(self.rates[k - 1]) * (t - a)).exp()
    }

    /// `int_0^t S(u) du`.
    fn integral(&self, t: f64) -> f64 {
        if t <= self.knots[0] {
            return t.max(0.0);
        }
        let end = self.end();
        if t > end {
            let s_end = *self.s_at.last().unwrap();
            let i_end = *self.i_at.last().unwrap();
            return i_end + s_end * (1.0 - (-(self.tail_rate) * (t - end)).exp()) / self.tail_rate;
        }
        let k = self.knots.partition_point(|&g| g < t);
        let a = self.knots[k - 1];
        let rate = self.rates[k - 1];
        let s_a = self.s_at[k - 1];
        self.i_at[k - 1]
            + if rate > 0.0 {
                s_a * (1.0 - (-rate * (t - a)).exp()) / rate
            } else {
                s_a * (t - a)
            }
    }
}

/// Patience survival `S(t) = exp(-int_0^t h)` under the extrapolation policy
/// (zero hazard below the grid, final rate beyond it).
pub fn patience_survival(hz: &PiecewiseHazard, t: f64) -> f64 {
    if t < 0.0 {
        return 1.0;
    }
    SurvivalCurve::new(hz).survival(t)
}

/// Which route produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateMethod {
    Analytic,
    Des,
}

/// Steady-state probability of abandonment conditional on being delayed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbandonEstimate {
    pub p_abandon_given_delay: f64,
    pub method: EstimateMethod,
    /// Batch-means standard error; present only for the simulation route.
    pub standard_error: Option<f64>,
}

/// Recursive adaptive Simpson on `[a, b]` with absolute tolerance.
fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let fb = f(b);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Analytic abandonment probability for a delayed customer.
///
/// The exponent `g(t) = lambda * int_0^t S - n mu t` is concave (its slope
/// `lambda S(t) - n mu` is nonincreasing), so its exact maximum is found in
/// closed form and factored out of both integrals before quadrature; the
/// pieces follow the hazard knots and the tail is cut off once the analytic
/// exponential bound on the remainder is negligible.
pub fn p_abandon_delayed(model: &QueueModel) -> Result<AbandonEstimate> {
    model.validate()?;
    let curve = SurvivalCurve::new(&model.patience);
    let lambda = model.lambda;
    let nmu = model.n as f64 * model.mu;
    let exponent = |t: f64| lambda * curve.integral(t) - nmu * t;

    // exact maximum of the concave exponent
    let shift = {
        if lambda * curve.survival(0.0) <= nmu {
            0.0
        } else {
            // walk the pieces for the slope sign change
            let mut t_star = None;
            let knots = &curve.knots;
            for k in 0..knots.len() {
                if lambda * curve.s_at[k.min(curve.s_at.len() - 1)] < nmu {
                    // crossing happens in the piece ending at knots[k]
                    let (a, s_a, rate) = if k == 0 {
                        (0.0, 1.0, 0.0)
                    } else {
                        (knots[k - 1], curve.s_at[k - 1], curve.rates[k - 1])
                    };
                    if rate > 0.0 {
                        t_star = Some(a + (lambda * s_a / nmu).ln() / rate);
                    } else {
                        // slope constant over the piece; maximum sits at its start
                        t_star = Some(a);
                    }
                    break;
                }
            }
            let t_star = t_star.unwrap_or_else(|| {
                // crossing beyond the grid: tail rate applies
                let s_end = *curve.s_at.last().unwrap();
                curve.end() + (lambda * s_end / nmu).ln() / curve.tail_rate
            });
            exponent(t_star.max(0.0))
        }
    };
    if !shift.is_finite() {
        return Err(Error::Instability(format!(
            "offered-wait exponent diverged for lambda {lambda}, mu {}, n {}",
            model.mu, model.n
        )));
    }

    let w = |t: f64| (exponent(t) - shift).exp();
    let num_f = |t: f64| (1.0 - curve.survival(t)) * w(t);

    let mut den = 0.0;
    let mut num = 0.0;
    let mut pieces: Vec<(f64, f64)> = Vec::new();
    let mut prev = 0.0;
    for &g in curve.knots.iter() {
        if g > prev {
            pieces.push((prev, g));
            prev = g;
        }
    }
    let tol = 1e-12;
    for &(a, b) in &pieces {
        den += integrate(&w, a, b, tol * (1.0 + b - a));
        num += integrate(&num_f, a, b, tol * (1.0 + b - a));
    }

    // tail chunks until the analytic bound on the remainder is negligible:
    // for t > T with lambda S(T) < n mu, int_T^inf w <= w(T) / (n mu - lambda S(T))
    let mut t = prev.max(0.0);
    let chunk = (1.0 / nmu).max(curve.end().max(1.0) / 16.0);
    let mut chunks = 0usize;
    loop {
        let s_here = curve.survival(t);
        let w_here = w(t);
        if lambda * s_here < nmu {
            let bound = w_here / (nmu - lambda * s_here);
            if bound <= 1e-13 * den.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        den += integrate(&w, t, t + chunk, tol);
        num += integrate(&num_f, t, t + chunk, tol);
        t += chunk;
        chunks += 1;
        if chunks > 100_000 {
            return Err(Error::Instability(format!(
                "offered-wait integral did not converge for lambda {lambda}, mu {}, n {}",
                model.mu, model.n
            )));
        }
    }

    if !(den > 0.0) || !den.is_finite() || !num.is_finite() {
        return Err(Error::Instability(format!(
            "degenerate offered-wait integrals (num {num}, den {den}) for lambda {lambda}, mu {}, n {}",
            model.mu, model.n
        )));
    }
    Ok(AbandonEstimate {
        p_abandon_given_delay: (num / den).clamp(0.0, 1.0),
        method: EstimateMethod::Analytic,
        standard_error: None,
    })
}

/// Samples a patience time from the hazard under the extrapolation policy.
fn sample_patience<R: Rng + ?Sized>(hz: &PiecewiseHazard, rng: &mut R) -> f64 {
    let knots = hz.grid.knots();
    for k in 0..hz.grid.count() {
        let rate = hz.rates[k];
        let width = knots[k + 1] - knots[k];
        if rate <= 0.0 {
            continue;
        }
        let draw = -(1.0 - rng.random::<f64>()).ln() / rate;
        if draw <= width {
            return knots[k] + draw;
        }
    }
    let tail = *hz.rates.last().unwrap();
    hz.grid.end() - (1.0 - rng.random::<f64>()).ln() / tail
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    Arrival,
    Completion,
    Abandon(usize),
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // reversed so the BinaryHeap pops the earliest event; ties break on the
    // scheduling sequence number for determinism
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .partial_cmp(&self.time)
            .unwrap()
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum WaitStatus {
    Waiting,
    Served,
    Abandoned,
}

/// Event-driven FCFS M/M/n+G simulation. Each arrival draws a patience time;
/// a delayed customer abandons if service has not begun by then. The
/// statistic is the abandoned fraction among delayed customers resolved
/// after `warmup`, with a batch-means standard error over 20 consecutive
/// equal-count batches.
pub fn des_oracle<R: Rng + ?Sized>(
    model: &QueueModel,
    sim_time: f64,
    warmup: f64,
    rng: &mut R,
) -> Result<AbandonEstimate> {
    model.validate()?;
    if !(sim_time > warmup && warmup > 0.0) {
        return Err(Error::Config(format!(
            "need sim_time > warmup > 0, got sim_time {sim_time}, warmup {warmup}"
        )));
    }
    let mut heap: BinaryHeap<Event> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut schedule = |heap: &mut BinaryHeap<Event>, time: f64, kind: EventKind| {
        let event = Event { time, seq, kind };
        seq += 1;
        heap.push(event);
    };

    let exp_draw = |rng: &mut R, rate: f64| -(1.0 - rng.random::<f64>()).ln() / rate;

    let mut busy = 0usize;
    let mut fifo: VecDeque<usize> = VecDeque::new();
    let mut status: Vec<WaitStatus> = Vec::new();
    let mut outcomes: Vec<bool> = Vec::new(); // resolved delayed customers, post-warmup

    schedule(&mut heap, exp_draw(rng, model.lambda), EventKind::Arrival);
    while let Some(event) = heap.pop() {
        if event.time > sim_time {
            break;
        }
        let now = event.time;
        match event.kind {
            EventKind::Arrival => {
                schedule(&mut heap, now + exp_draw(rng, model.lambda), EventKind::Arrival);
                if busy < model.n {
                    busy += 1;
                    schedule(&mut heap, now + exp_draw(rng, model.mu), EventKind::Completion);
                } else {
                    let id = status.len();
                    status.push(WaitStatus::Waiting);
                    fifo.push_back(id);
                    let patience = sample_patience(&model.patience, rng);
                    schedule(&mut heap, now + patience, EventKind::Abandon(id));
                }
            }
            EventKind::Completion => {
                busy -= 1;
                while let Some(&id) = fifo.front() {
                    if status[id] == WaitStatus::Waiting {
                        fifo.pop_front();
                        status[id] = WaitStatus::Served;
                        if now > warmup {
                            outcomes.push(false);
                        }
                        busy += 1;
                        schedule(&mut heap, now + exp_draw(rng, model.mu), EventKind::Completion);
                        break;
                    }
                    fifo.pop_front(); // already abandoned, drop lazily
                }
            }
            EventKind::Abandon(id) => {
                if status[id] == WaitStatus::Waiting {
                    status[id] = WaitStatus::Abandoned;
                    if now > warmup {
                        outcomes.push(true);
                    }
                }
            }
        }
    }

    let batches = 20usize;
    if outcomes.len() < batches {
        return Err(Error::InsufficientData(format!(
            "only {} delayed customers resolved after warmup (need >= {batches})",
            outcomes.len()
        )));
    }
    let per = outcomes.len() / batches;
    let mut means = Vec::with_capacity(batches);
    for b in 0..batches {
        let lo = b * per;
        let hi = if b == batches - 1 { outcomes.len() } else { lo + per };
        let part = &outcomes[lo..hi];
        means.push(part.iter().filter(|&&a| a).count() as f64 / part.len() as f64);
    }
    let p_hat = outcomes.iter().filter(|&&a| a).count() as f64 / outcomes.len() as f64;
    let mean_of_means = means.iter().sum::<f64>() / batches as f64;
    let var = means
        .iter()
        .map(|m| (m - mean_of_means).powi(2))
        .sum::<f64>()
        / (batches - 1) as f64;
    let se = (var / batches as f64).sqrt();

    Ok(AbandonEstimate {
        p_abandon_given_delay: p_hat,
        method: EstimateMethod::Des,
        standard_error: Some(se),
    })
}
