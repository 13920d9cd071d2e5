//! Validity gating and self-calibration.
//!
//! A per-eye prediction counts as reliable when it is on-screen, or when
//! it stays within three standard-deviation distances of the person's
//! valid same-eye history mean. Self-calibration then subtracts the gap
//! between the person's valid-history mean and the dataset-wise mean.

use alloc::string::String;
use alloc::vec::Vec;

use crate::geometry::{PoG, ScreenSpec, Unit};
use crate::math;

/// Valid samples required before the 3-sigma history rule activates;
/// the spread of tiny samples is meaningless.
pub const DEFAULT_MIN_HISTORY: usize = 10;

/// Combined per-sample flag is the product of the per-eye flags.
pub fn combine_eyes(b_l: bool, b_r: bool) -> bool {
    b_l && b_r
}

/// Incrementally maintained statistics of one eye's valid history
/// points (cm).
///
/// `dist_std` is the root-mean-square Euclidean distance of the points
/// from their mean, i.e. the square root of the trace of the sample
/// covariance. Maintained from running sums so that adding or removing
/// a point is O(1) and incremental and batch values agree to round-off.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ValidStats {
    n: usize,
    sum_x: f64,
    sum_y: f64,
    sum_sq: f64,
}

impl ValidStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points<'a, I: IntoIterator<Item = &'a PoG>>(points: I) -> Self {
        let mut s = Self::new();
        for p in points {
            s.add(p);
        }
        s
    }

    pub fn add(&mut self, p: &PoG) {
        debug_assert_eq!(p.unit, Unit::Cm);
        self.n += 1;
        self.sum_x += p.x;
        self.sum_y += p.y;
        self.sum_sq += p.x * p.x + p.y * p.y;
    }

    pub fn remove(&mut self, p: &PoG) {
        debug_assert!(self.n > 0);
        self.n -= 1;
        self.sum_x -= p.x;
        self.sum_y -= p.y;
        self.sum_sq -= p.x * p.x + p.y * p.y;
    }

    pub fn n_valid(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> Option<PoG> {
        (self.n > 0).then(|| PoG::cm(self.sum_x / self.n as f64, self.sum_y / self.n as f64))
    }

    pub fn dist_std(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let n = self.n as f64;
        let mx = self.sum_x / n;
        let my = self.sum_y / n;
        let var = self.sum_sq / n - (mx * mx + my * my);
        math::sqrt(var.max(0.0))
    }
}

/// Per-eye reliability gate: valid iff on-screen, or within three
/// standard-deviation distances of the valid same-eye history mean
/// (once at least `min_history` valid samples exist). The two rules are
/// a disjunction.
pub fn assess_eye(p_eye: &PoG, stats: &ValidStats, s: &ScreenSpec, min_history: usize) -> bool {
    debug_assert_eq!(p_eye.unit, Unit::Cm);
    if s.contains_cm(p_eye.x, p_eye.y) {
        return true;
    }
    if stats.n_valid() >= min_history {
        if let Some(mean) = stats.mean() {
            return p_eye.distance(&mean) <= 3.0 * stats.dist_std();
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineError {
    /// Dataset mean requested over a set with no valid samples.
    NoValidSamples,
}

impl core::fmt::Display for RefineError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::NoValidSamples => f.write_str("no valid samples to average"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for RefineError {}

/// Dataset-wise mean PoG over valid training samples:
/// `g_tr = sum(g * v) / sum(v)`.
pub fn dataset_mean(training_samples: &[(PoG, bool)]) -> Result<PoG, RefineError> {
    let mut sum = (0.0, 0.0);
    let mut count = 0usize;
    for (g, v) in training_samples {
        if *v {
            sum.0 += g.x;
            sum.1 += g.y;
            count += 1;
        }
    }
    if count == 0 {
        return Err(RefineError::NoValidSamples);
    }
    Ok(PoG::cm(sum.0 / count as f64, sum.1 / count as f64))
}

/// Self-calibration offset correction given an already computed
/// valid-history mean: `p_hat = p - (history_mean - g_tr)`.
///
/// With no valid history (`None`) the prediction passes through
/// unchanged rather than failing.
pub fn calibrate(p: &PoG, valid_history_mean: Option<PoG>, g_tr: &PoG) -> PoG {
    match valid_history_mean {
        Some(mean) => PoG::cm(p.x - (mean.x - g_tr.x), p.y - (mean.y - g_tr.y)),
        None => *p,
    }
}

/// History index-set semantics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum HistoryMode {
    /// Strictly past samples: `{1, ..., t-1}`.
    Online,
    /// All other samples of the same person: `{1, ..., t-1, t+1, ..., N}`.
    Offline,
}

/// The history index set for sample `t` of a stream of `n_total`
/// samples, with 1-based indices.
pub fn history_indices(mode: HistoryMode, t: u64, n_total: u64) -> Vec<u64> {
    debug_assert!(t >= 1 && t <= n_total);
    match mode {
        HistoryMode::Online => (1..t).collect(),
        HistoryMode::Offline => (1..t).chain(t + 1..=n_total).collect(),
    }
}

/// One record of a person's prediction history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub t: u64,
    pub p_left: PoG,
    pub p_right: PoG,
    /// Averaged initial prediction (cm).
    pub p_avg: PoG,
    pub b_left: bool,
    pub b_right: bool,
    /// Combined flag, product of the per-eye flags.
    pub b: bool,
    /// Self-calibrated prediction, once computed.
    pub p_refined: Option<PoG>,
}

/// Ordered per-person store of predictions with validity. Single
/// writer; entries keep unique, strictly increasing sample indices.
#[derive(Debug, Clone)]
pub struct PersonHistory {
    pub person_id: String,
    pub mode: HistoryMode,
    entries: Vec<HistoryEntry>,
}

impl PersonHistory {
    pub fn new(person_id: String, mode: HistoryMode) -> Self {
        Self { person_id, mode, entries: Vec::new() }
    }

    /// Appends an entry. Panics if `t` does not strictly increase.
    pub fn push(&mut self, entry: HistoryEntry) {
        if let Some(last) = self.entries.last() {
            assert!(entry.t > last.t, "history indices must strictly increase");
        }
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [HistoryEntry] {
        &mut self.entries
    }

    /// Entries visible from sample `t` under this store's mode.
    pub fn history(&self, t: u64) -> impl Iterator<Item = &HistoryEntry> {
        let mode = self.mode;
        self.entries.iter().filter(move |e| match mode {
            HistoryMode::Online => e.t < t,
            HistoryMode::Offline => e.t != t,
        })
    }

    /// Mean of the valid initial predictions in the history set of `t`.
    pub fn valid_history_mean(&self, t: u64) -> Option<PoG> {
        let mut sum = (0.0, 0.0);
        let mut count = 0usize;
        for e in self.history(t) {
            if e.b {
                sum.0 += e.p_avg.x;
                sum.1 += e.p_avg.y;
                count += 1;
            }
        }
        (count > 0).then(|| PoG::cm(sum.0 / count as f64, sum.1 / count as f64))
    }
}

/// Self-calibration of one prediction against its person history
/// (Eq. form: `p_hat = p - (valid-history mean - g_tr)`); bypasses when
/// the history set holds no valid sample.
pub fn self_calibrate(p: &PoG, hist: &PersonHistory, t: u64, g_tr: &PoG) -> PoG {
    calibrate(p, hist.valid_history_mean(t), g_tr)
}
