//! Two-way time grid, record decomposition, filtering, and aggregation into
//! per-cell sufficient statistics.
//!
//! Every interval on either axis is half-open on the left and closed on the
//! right: interval `k` of a grid with knots `g_0 < g_1 < ... < g_q` is
//! `(g_{k-1}, g_k]`. A time exactly equal to a knot therefore belongs to the
//! interval ending at that knot, and a time equal to the first knot lies
//! outside the grid.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A strictly increasing sequence of knots partitioning a time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

impl TimeGrid {
    /// Builds a grid from explicit knots. Needs at least two strictly
    /// increasing, nonnegative knots.
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Size {
                what: "time grid knots",
                expected: 2,
                got: knots.len(),
            });
        }
        if knots.iter().any(|k| !k.is_finite() || *k < 0.0) {
            return Err(Error::Argument("grid knots must be finite and >= 0".into()));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument("grid knots must be strictly increasing".into()));
        }
        Ok(Self { knots })
    }

    /// Uniform grid from `start` to `end` in steps of `width`. `end - start`
    /// must be an integer multiple of `width` (to 1e-9 relative).
    pub fn uniform(start: f64, end: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) || !(end > start) {
            return Err(Error::Argument(format!(
                "uniform grid needs end > start and width > 0, got [{start}, {end}] step {width}"
            )));
        }
        let count = ((end - start) / width).round();
        if count < 1.0 || ((start + count * width) - end).abs() > 1e-9 * end.abs().max(1.0) {
            return Err(Error::Argument(format!(
                "grid width {width} does not tile [{start}, {end}]"
            )));
        }
        let count = count as usize;
        let mut knots = Vec::with_capacity(count + 1);
        for i in 0..count {
            knots.push(start + i as f64 * width);
        }
        knots.push(end);
        Self::new(knots)
    }

    /// The knot sequence.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of intervals.
    pub fn count(&self) -> usize {
        self.knots.len() - 1
    }

    /// Domain start (first knot).
    pub fn start(&self) -> f64 {
        self.knots[0]
    }

    /// Domain end (last knot).
    pub fn end(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    /// Midpoint of interval `k` (0-based).
    pub fn midpoint(&self, k: usize) -> f64 {
        0.5 * (self.knots[k] + self.knots[k + 1])
    }

    /// 0-based index of the interval containing `x`, i.e. the unique `k`
    /// with `g_k < x <= g_{k+1}`.
    pub fn interval_index(&self, x: f64) -> Result<usize> {
        if !x.is_finite() || x <= self.start() || x > self.end() {
            return Err(Error::Domain {
                quantity: "time",
                value: x,
                lo: self.start(),
                hi: self.end(),
            });
        }
        // count of knots strictly below x is in 1..=count
        let j = self.knots.partition_point(|&k| k < x);
        Ok(j - 1)
    }
}

/// One observation: arrival clock time, waiting duration, and whether the
/// event of interest was observed (`false` marks right censoring).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    /// Clock time of arrival, seconds since midnight.
    pub arrival: f64,
    /// Waiting duration in seconds, finite and >= 0.
    pub wait: f64,
    /// True if the event was observed, false if right-censored.
    pub event: bool,
}

/// Which raw outcome counts as the event when building records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventRole {
    /// Abandonment is the event; answered calls are censored (patience study).
    AbandonAsEvent,
    /// Answering is the event; abandoned calls are censored (offered-wait study).
    AnswerAsEvent,
}

/// Raw outcome of a waiting spell before the study role is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Answered,
    Abandoned,
}

/// A raw input row: arrival time, wait, and outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRecord {
    pub arrival: f64,
    pub wait: f64,
    pub outcome: Outcome,
}

/// Pruning and truncation settings applied before aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Waits strictly below this are dropped.
    pub min_wait: f64,
    /// Waits above this are truncated to it and marked censored.
    pub max_wait: f64,
    /// Arrivals at or before this clock second are dropped.
    pub day_start: f64,
    /// Arrivals after this clock second are dropped.
    pub day_end: f64,
    /// Which outcome counts as the event.
    pub event_role: EventRole,
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_wait < self.max_wait) {
            return Err(Error::Config(format!(
                "min_wait ({}) must be < max_wait ({})",
                self.min_wait, self.max_wait
            )));
        }
        if !(self.day_start < self.day_end) {
            return Err(Error::Config(format!(
                "day_start ({}) must be < day_end ({})",
                self.day_start, self.day_end
            )));
        }
        Ok(())
    }
}

/// Per-category counts of what [`apply_filters`] did, so the pruning step is
/// auditable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropReport {
    /// Rows seen.
    pub n_input: usize,
    /// Dropped: wait below `min_wait`.
    pub short_wait: usize,
    /// Dropped: arrival outside `(day_start, day_end]`.
    pub outside_day: usize,
    /// Retained but truncated to `max_wait` and censored.
    pub truncated: usize,
    /// Retained records.
    pub retained: usize,
    /// Retained records with an observed event.
    pub events: usize,
}

/// Applies the pruning pipeline to raw rows: drop arrivals outside the day
/// window, drop short waits, truncate-and-censor long waits, and set the
/// event flag according to the study role.
///
/// Degenerate rows land in the report; this function never fails.
pub fn apply_filters(raw: &[RawRecord], cfg: &FilterConfig) -> (Vec<EventRecord>, DropReport) {
    let mut report = DropReport {
        n_input: raw.len(),
        ..DropReport::default()
    };
    let mut out = Vec::with_capacity(raw.len());
    for rec in raw {
        if !(rec.arrival > cfg.day_start && rec.arrival <= cfg.day_end) {
            report.outside_day += 1;
            continue;
        }
        if rec.wait < cfg.min_wait {
            report.short_wait += 1;
            continue;
        }
        let mut wait = rec.wait;
        let mut event = match (cfg.event_role, rec.outcome) {
            (EventRole::AbandonAsEvent, Outcome::Abandoned) => true,
            (EventRole::AnswerAsEvent, Outcome::Answered) => true,
            _ => false,
        };
        if wait > cfg.max_wait {
            wait = cfg.max_wait;
            event = false;
            report.truncated += 1;
        }
        report.retained += 1;
        if event {
            report.events += 1;
        }
        out.push(EventRecord {
            arrival: rec.arrival,
            wait,
            event,
        });
    }
    (out, report)
}

/// Splits a waiting spell `(t, d)` across the intervals of `grid`.
///
/// Interval `k` receives exposure `0` if `t <= g_{k-1}`, `t - g_{k-1}` if
/// `g_{k-1} < t <= g_k`, and the full interval width otherwise; the event
/// indicator lands in the single interval containing `t`. Exposures sum to
/// `t - g_0` and the indicators sum to `d` (for `t` above the first knot).
pub fn decompose_wait(t: f64, d: bool, grid: &TimeGrid) -> Result<(Vec<f64>, Vec<bool>)> {
    if !t.is_finite() || t < 0.0 || t > grid.end() {
        return Err(Error::Domain {
            quantity: "wait",
            value: t,
            lo: 0.0,
            hi: grid.end(),
        });
    }
    if d && t <= grid.start() {
        // an event below the domain start cannot be attributed to any interval
        return Err(Error::Domain {
            quantity: "event wait",
            value: t,
            lo: grid.start(),
            hi: grid.end(),
        });
    }
    let p = grid.count();
    let knots = grid.knots();
    let mut t_vec = vec![0.0; p];
    let mut d_vec = vec![false; p];
    for k in 0..p {
        if t <= knots[k] {
            break;
        }
        if t <= knots[k + 1] {
            t_vec[k] = t - knots[k];
            d_vec[k] = d;
            break;
        }
        t_vec[k] = knots[k + 1] - knots[k];
    }
    Ok((t_vec, d_vec))
}

/// 1-based arrival interval index: the unique `j` with `a_{j-1} < a <= a_j`.
pub fn arrival_index(a: f64, grid: &TimeGrid) -> Result<usize> {
    grid.interval_index(a).map(|j| j + 1).map_err(|e| match e {
        Error::Domain { value, lo, hi, .. } => Error::Domain {
            quantity: "arrival",
            value,
            lo,
            hi,
        },
        other => other,
    })
}

/// Aggregated sufficient statistics on the `m x p` grid: per-cell event
/// counts and exposure seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    /// `m x p` event counts.
    pub d_sum: DMatrix<f64>,
    /// `m x p` exposure seconds.
    pub t_sum: DMatrix<f64>,
    /// Number of records aggregated.
    pub n_records: usize,
}

impl CellStats {
    /// All-zero statistics of the given shape.
    pub fn zeros(m: usize, p: usize) -> Self {
        Self {
            d_sum: DMatrix::zeros(m, p),
            t_sum: DMatrix::zeros(m, p),
            n_records: 0,
        }
    }

    /// Aggregates records over the two grids. Fails on the first record that
    /// cannot be placed, identifying it by index.
    pub fn from_records(
        records: &[EventRecord],
        arrival_grid: &TimeGrid,
        wait_grid: &TimeGrid,
    ) -> Result<Self> {
        let mut stats = Self::zeros(arrival_grid.count(), wait_grid.count());
        for (i, rec) in records.iter().enumerate() {
            stats
                .add_record(rec, arrival_grid, wait_grid)
                .map_err(|e| e.at_record(i))?;
        }
        Ok(stats)
    }

    /// Adds one record. Equivalent to accumulating the outer product of the
    /// arrival indicator with the decomposed wait, without materializing it.
    pub fn add_record(
        &mut self,
        rec: &EventRecord,
        arrival_grid: &TimeGrid,
        wait_grid: &TimeGrid,
    ) -> Result<()> {
        if !rec.wait.is_finite() || rec.wait < 0.0 {
            return Err(Error::Argument(format!("wait must be finite and >= 0, got {}", rec.wait)));
        }
        let row = arrival_grid.interval_index(rec.arrival).map_err(|e| match e {
            Error::Domain { value, lo, hi, .. } => Error::Domain {
                quantity: "arrival",
                value,
                lo,
                hi,
            },
            other => other,
        })?;
        self.add_to_row(row, rec.wait, rec.event, wait_grid)?;
        self.n_records += 1;
        Ok(())
    }

    /// Adds a waiting spell directly to arrival row `row` (0-based).
    pub(crate) fn add_to_row(
        &mut self,
        row: usize,
        wait: f64,
        event: bool,
        wait_grid: &TimeGrid,
    ) -> Result<()> {
        let t = wait;
        if !t.is_finite() || t < 0.0 || t > wait_grid.end() {
            return Err(Error::Domain {
                quantity: "wait",
                value: t,
                lo: 0.0,
                hi: wait_grid.end(),
            });
        }
        if event && t <= wait_grid.start() {
            return Err(Error::Domain {
                quantity: "event wait",
                value: t,
                lo: wait_grid.start(),
                hi: wait_grid.end(),
            });
        }
        let knots = wait_grid.knots();
        for k in 0..wait_grid.count() {
            if t <= knots[k] {
                break;
            }
            if t <= knots[k + 1] {
                self.t_sum[(row, k)] += t - knots[k];
                if event {
                    self.d_sum[(row, k)] += 1.0;
                }
                break;
            }
            self.t_sum[(row, k)] += knots[k + 1] - knots[k];
        }
        Ok(())
    }

    /// Number of arrival rows.
    pub fn rows(&self) -> usize {
        self.d_sum.nrows()
    }

    /// Number of wait columns.
    pub fn cols(&self) -> usize {
        self.d_sum.ncols()
    }

    /// Entrywise sum of two compatible statistics.
    pub fn merge(mut self, other: &CellStats) -> Self {
        self.d_sum += &other.d_sum;
        self.t_sum += &other.t_sum;
        self.n_records += other.n_records;
        self
    }

    /// Scales event counts and exposures by `c` (used by tests for
    /// equivariance checks; counts stay integral only for integer `c`).
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            d_sum: &self.d_sum * c,
            t_sum: &self.t_sum * c,
            n_records: self.n_records,
        }
    }
}
