//! End-to-end refinement: validity gating, self-calibration, and the
//! person-specific transform, chained over per-person prediction
//! streams. Also hosts the evaluation report, the history-length
//! ablation, and the training-set builder for the transform network.

use alloc::string::String;
use alloc::vec::Vec;

use crate::geometry::{
    angular_error, average_eyes, pog_to_direction, GazeOrigin, GeometryError, PoG, ScreenSpec,
};
use crate::affine::{apply_affine_points, sample_affine, sample_noise, AugmentConfig};
use crate::pt::{infer_pog, PtModel, PtTrainingSample};
use crate::raster::{rasterize_history, rasterize_point, HeatmapSpec, RasterError};
use crate::refinement::{
    assess_eye, calibrate, combine_eyes, HistoryMode, ValidStats, DEFAULT_MIN_HISTORY,
};
use crate::rng::{split_seed, SplitMix64};
use crate::sim::GazeStream;

/// Default number of valid history samples an online stream must
/// accumulate before refinement engages; below it the initial
/// prediction passes through untouched.
pub const DEFAULT_ONLINE_THRESHOLD: usize = 2000;

/// Default viewing distance used when a stream carries no per-sample
/// gaze origin (cm in front of the screen center).
pub const DEFAULT_VIEWING_DISTANCE_CM: f64 = 60.0;

/// Configuration of the full refinement pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub screen: ScreenSpec,
    pub mode: HistoryMode,
    pub heatmap: HeatmapSpec,
    /// Valid same-eye history needed before the distance rule applies.
    pub min_history: usize,
    /// Online-mode warm-up: with at most this many valid history
    /// samples the pipeline outputs the initial prediction unchanged.
    pub online_threshold: usize,
    pub enable_validity: bool,
    pub enable_calibration: bool,
    pub enable_transform: bool,
    /// Reference mean gaze location the calibration shifts toward
    /// (cm); typically the valid ground-truth mean of a training set,
    /// or the screen center absent one.
    pub g_tr: PoG,
    /// Base seed for the rasterization visit orders.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let screen = ScreenSpec::eve_default();
        let g_tr = screen.center_cm();
        Self {
            screen,
            mode: HistoryMode::Online,
            heatmap: HeatmapSpec::default(),
            min_history: DEFAULT_MIN_HISTORY,
            online_threshold: DEFAULT_ONLINE_THRESHOLD,
            enable_validity: true,
            enable_calibration: true,
            enable_transform: true,
            g_tr,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PipelineError {
    EmptyStream,
    Geometry(GeometryError),
    Raster(RasterError),
}

impl From<GeometryError> for PipelineError {
    fn from(e: GeometryError) -> Self {
        Self::Geometry(e)
    }
}

impl From<RasterError> for PipelineError {
    fn from(e: RasterError) -> Self {
        Self::Raster(e)
    }
}

impl core::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::EmptyStream => f.write_str("stream holds no samples"),
            Self::Geometry(e) => write!(f, "geometry: {e}"),
            Self::Raster(e) => write!(f, "raster: {e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for PipelineError {}

/// One refined record. All points are in cm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinedSample {
    pub t: u64,
    /// Averaged initial prediction.
    pub p_initial: PoG,
    pub b_left: bool,
    pub b_right: bool,
    /// Combined validity flag.
    pub b: bool,
    /// After self-calibration (equals `p_initial` when disabled or
    /// bypassed).
    pub p_calibrated: PoG,
    /// Final output after the person-specific transform.
    pub p_final: PoG,
    pub ground_truth: Option<PoG>,
    pub origin: Option<GazeOrigin>,
}

#[derive(Debug, Clone)]
pub struct RefinedStream {
    pub person_id: String,
    pub mode: HistoryMode,
    pub samples: Vec<RefinedSample>,
}

/// FNV-1a over the person id, for deriving a per-person seed lane.
fn person_lane(person_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in person_id.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Evenly spaced subsample of `0..n` with `limit` elements.
fn subsample_indices(n: usize, limit: usize) -> Vec<usize> {
    if limit >= n {
        return (0..n).collect();
    }
    (0..limit).map(|i| i * n / limit).collect()
}

struct FlaggedSample {
    t: u64,
    b_left: bool,
    b_right: bool,
    b: bool,
    p_avg: PoG,
}

/// Validity pass. Online keeps running per-eye statistics over the
/// already-flagged past; offline first builds the statistics from the
/// on-screen rule alone, then applies the combined rule with the
/// sample under test excluded from its own statistics.
fn assess_stream(
    stream: &GazeStream,
    cfg: &PipelineConfig,
) -> Result<Vec<FlaggedSample>, PipelineError> {
    let s = &cfg.screen;
    let mut out = Vec::with_capacity(stream.samples.len());
    match cfg.mode {
        HistoryMode::Online => {
            let mut stats_l = ValidStats::new();
            let mut stats_r = ValidStats::new();
            for smp in &stream.samples {
                let b_l = !cfg.enable_validity
                    || assess_eye(&smp.p_left, &stats_l, s, cfg.min_history);
                let b_r = !cfg.enable_validity
                    || assess_eye(&smp.p_right, &stats_r, s, cfg.min_history);
                if b_l {
                    stats_l.add(&smp.p_left);
                }
                if b_r {
                    stats_r.add(&smp.p_right);
                }
                out.push(FlaggedSample {
                    t: smp.t,
                    b_left: b_l,
                    b_right: b_r,
                    b: combine_eyes(b_l, b_r),
                    p_avg: average_eyes(&smp.p_left, &smp.p_right)?,
                });
            }
        }
        HistoryMode::Offline => {
            // phase 1: statistics from the on-screen rule only, which
            // breaks the circularity of flags depending on flags
            let mut stats_l = ValidStats::new();
            let mut stats_r = ValidStats::new();
            for smp in &stream.samples {
                if s.contains_cm(smp.p_left.x, smp.p_left.y) {
                    stats_l.add(&smp.p_left);
                }
                if s.contains_cm(smp.p_right.x, smp.p_right.y) {
                    stats_r.add(&smp.p_right);
                }
            }
            // phase 2: flag each sample with itself excluded
            for smp in &stream.samples {
                let assess = |p: &PoG, stats: &mut ValidStats| {
                    if !cfg.enable_validity {
                        return true;
                    }
                    let on_screen = s.contains_cm(p.x, p.y);
                    if on_screen {
                        stats.remove(p);
                    }
                    let b = assess_eye(p, stats, s, cfg.min_history);
                    if on_screen {
                        stats.add(p);
                    }
                    b
                };
                let b_l = assess(&smp.p_left, &mut stats_l);
                let b_r = assess(&smp.p_right, &mut stats_r);
                out.push(FlaggedSample {
                    t: smp.t,
                    b_left: b_l,
                    b_right: b_r,
                    b: combine_eyes(b_l, b_r),
                    p_avg: average_eyes(&smp.p_left, &smp.p_right)?,
                });
            }
        }
    }
    Ok(out)
}

/// Runs the full refinement over one person's stream.
pub fn run(
    stream: &GazeStream,
    cfg: &PipelineConfig,
    model: Option<&PtModel>,
) -> Result<RefinedStream, PipelineError> {
    run_with_history_limit(stream, cfg, model, None)
}

/// [`run`] with the history set of every sample restricted to an
/// evenly spaced subsample of at most `limit` valid entries (used by
/// the history-length ablation). `Some(0)` disables refinement
/// entirely; `None` means unrestricted.
pub fn run_with_history_limit(
    stream: &GazeStream,
    cfg: &PipelineConfig,
    model: Option<&PtModel>,
    limit: Option<usize>,
) -> Result<RefinedStream, PipelineError> {
    if stream.samples.is_empty() {
        return Err(PipelineError::EmptyStream);
    }
    let flagged = assess_stream(stream, cfg)?;
    let n = flagged.len();

    // indices (into `flagged`) of combined-valid samples, in order
    let valid_idx: Vec<usize> = (0..n).filter(|&i| flagged[i].b).collect();
    // for each sample, how many valid samples strictly precede it
    let mut valid_before = Vec::with_capacity(n);
    {
        let mut count = 0usize;
        for f in &flagged {
            valid_before.push(count);
            if f.b {
                count += 1;
            }
        }
    }
    let total_valid = valid_idx.len();

    // running sums for the unrestricted valid-history means
    let sum_all = valid_idx
        .iter()
        .fold((0.0, 0.0), |acc, &i| (acc.0 + flagged[i].p_avg.x, acc.1 + flagged[i].p_avg.y));

    // valid history of sample i, as indices into `flagged`
    let history_of = |i: usize| -> Vec<usize> {
        let pool: Vec<usize> = match cfg.mode {
            HistoryMode::Online => valid_idx[..valid_before[i]].to_vec(),
            HistoryMode::Offline => valid_idx.iter().copied().filter(|&j| j != i).collect(),
        };
        match limit {
            Some(l) => subsample_indices(pool.len(), l)
                .into_iter()
                .map(|k| pool[k])
                .collect(),
            None => pool,
        }
    };

    // self-calibration pass
    let mut calibrated = Vec::with_capacity(n);
    for (i, f) in flagged.iter().enumerate() {
        if !cfg.enable_calibration || limit == Some(0) {
            calibrated.push(f.p_avg);
            continue;
        }
        let mean = if limit.is_none() {
            // O(1): totals, minus the sample itself in offline mode
            let (mut sx, mut sy, mut m) = match cfg.mode {
                HistoryMode::Online => {
                    let k = valid_before[i];
                    let (px, py) = valid_idx[..k].iter().fold((0.0, 0.0), |acc, &j| {
                        (acc.0 + flagged[j].p_avg.x, acc.1 + flagged[j].p_avg.y)
                    });
                    (px, py, k)
                }
                HistoryMode::Offline => (sum_all.0, sum_all.1, total_valid),
            };
            if cfg.mode == HistoryMode::Offline && f.b {
                sx -= f.p_avg.x;
                sy -= f.p_avg.y;
                m -= 1;
            }
            (m > 0).then(|| PoG::cm(sx / m as f64, sy / m as f64))
        } else {
            let hist = history_of(i);
            let m = hist.len();
            let (sx, sy) = hist.iter().fold((0.0, 0.0), |acc, &j| {
                (acc.0 + flagged[j].p_avg.x, acc.1 + flagged[j].p_avg.y)
            });
            (m > 0).then(|| PoG::cm(sx / m as f64, sy / m as f64))
        };
        calibrated.push(calibrate(&f.p_avg, mean, &cfg.g_tr));
    }

    // person-specific transform pass
    let lane = person_lane(&stream.person_id);
    let mut samples = Vec::with_capacity(n);
    for (i, f) in flagged.iter().enumerate() {
        let valid_in_history = match cfg.mode {
            HistoryMode::Online => valid_before[i],
            HistoryMode::Offline => total_valid - usize::from(f.b),
        };
        // online warm-up: pass the initial prediction through
        let warming_up = cfg.mode == HistoryMode::Online && valid_in_history <= cfg.online_threshold;
        let (p_cal, p_final) = if warming_up || limit == Some(0) {
            (f.p_avg, f.p_avg)
        } else {
            let p_cal = calibrated[i];
            let p_final = if cfg.enable_transform && model.is_some() && valid_in_history > 0 {
                let hist = history_of(i);
                let points: Vec<(PoG, bool)> =
                    hist.iter().map(|&j| (calibrated[j], true)).collect();
                let mut order_rng = SplitMix64::new(split_seed(split_seed(cfg.seed, lane), f.t));
                let r_history =
                    rasterize_history(&points, &cfg.screen, &cfg.heatmap, &mut order_rng);
                let r_sample = rasterize_point(&p_cal, &cfg.screen, &cfg.heatmap);
                // a warp pushing the sample fully off-grid degenerates
                // the decode; keep the calibrated point in that case
                infer_pog(model.unwrap(), &r_sample, &r_history, &cfg.screen, &cfg.heatmap)
                    .unwrap_or(p_cal)
            } else {
                p_cal
            };
            (p_cal, p_final)
        };
        let src = &stream.samples[i];
        samples.push(RefinedSample {
            t: f.t,
            p_initial: f.p_avg,
            b_left: f.b_left,
            b_right: f.b_right,
            b: f.b,
            p_calibrated: p_cal,
            p_final,
            ground_truth: src.ground_truth,
            origin: src.origin,
        });
    }
    Ok(RefinedStream { person_id: stream.person_id.clone(), mode: cfg.mode, samples })
}

/// Mean errors of one prediction stage against the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ErrorStats {
    pub cm: f64,
    pub px: f64,
    pub degrees: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PersonReport {
    pub person_id: String,
    /// Samples with ground truth and a positive combined flag.
    pub n_eval: usize,
    pub initial: ErrorStats,
    pub calibrated: ErrorStats,
    pub refined: ErrorStats,
}

/// Per-person and sample-weighted aggregate evaluation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub persons: Vec<PersonReport>,
    pub overall: PersonReport,
}

fn default_origin(s: &ScreenSpec) -> GazeOrigin {
    let c = s.center_cm();
    GazeOrigin::new(c.x, c.y, -DEFAULT_VIEWING_DISTANCE_CM)
}

struct ErrorAccum {
    cm: f64,
    px: f64,
    deg: f64,
    n: usize,
}

impl ErrorAccum {
    fn new() -> Self {
        Self { cm: 0.0, px: 0.0, deg: 0.0, n: 0 }
    }

    fn add(&mut self, p: &PoG, gt: &PoG, origin: &GazeOrigin, s: &ScreenSpec) {
        self.cm += p.distance(gt);
        self.px += p.to_px(s).distance(&gt.to_px(s));
        if let (Ok(d1), Ok(d2)) = (pog_to_direction(p, origin), pog_to_direction(gt, origin)) {
            self.deg += angular_error(&d1, &d2);
        }
        self.n += 1;
    }

    fn merge(&mut self, other: &ErrorAccum) {
        self.cm += other.cm;
        self.px += other.px;
        self.deg += other.deg;
        self.n += other.n;
    }

    fn stats(&self) -> ErrorStats {
        if self.n == 0 {
            return ErrorStats::default();
        }
        let n = self.n as f64;
        ErrorStats { cm: self.cm / n, px: self.px / n, degrees: self.deg / n }
    }
}

/// Evaluates refined streams against their ground truth. Samples
/// without ground truth or with a negative combined flag are skipped;
/// the aggregate row is sample-weighted across persons.
pub fn evaluate(streams: &[RefinedStream], s: &ScreenSpec) -> EvalReport {
    let fallback = default_origin(s);
    let mut persons = Vec::with_capacity(streams.len());
    let mut all_init = ErrorAccum::new();
    let mut all_cal = ErrorAccum::new();
    let mut all_fin = ErrorAccum::new();
    for stream in streams {
        let mut init = ErrorAccum::new();
        let mut cal = ErrorAccum::new();
        let mut fin = ErrorAccum::new();
        for smp in &stream.samples {
            let Some(gt) = smp.ground_truth else { continue };
            if !smp.b {
                continue;
            }
            let origin = smp.origin.unwrap_or(fallback);
            init.add(&smp.p_initial, &gt, &origin, s);
            cal.add(&smp.p_calibrated, &gt, &origin, s);
            fin.add(&smp.p_final, &gt, &origin, s);
        }
        all_init.merge(&init);
        all_cal.merge(&cal);
        all_fin.merge(&fin);
        persons.push(PersonReport {
            person_id: stream.person_id.clone(),
            n_eval: init.n,
            initial: init.stats(),
            calibrated: cal.stats(),
            refined: fin.stats(),
        });
    }
    let overall = PersonReport {
        person_id: String::from("overall"),
        n_eval: all_init.n,
        initial: all_init.stats(),
        calibrated: all_cal.stats(),
        refined: all_fin.stats(),
    };
    EvalReport { persons, overall }
}

/// One row of the history-length ablation.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationRow {
    /// Requested history limit.
    pub requested: usize,
    /// Limit actually achievable given the streams (the requested
    /// value clamped to the largest available history).
    pub effective: usize,
    pub refined: ErrorStats,
}

/// Mean refined error as a function of the history length available to
/// calibration and the transform. `0` reports the unrefined baseline.
pub fn ablate_history(
    streams: &[GazeStream],
    cfg: &PipelineConfig,
    model: Option<&PtModel>,
    lengths: &[usize],
) -> Result<Vec<AblationRow>, PipelineError> {
    let max_available = streams
        .iter()
        .map(|st| st.samples.len().saturating_sub(1))
        .max()
        .unwrap_or(0);
    let mut rows = Vec::with_capacity(lengths.len());
    for &l in lengths {
        let mut refined = Vec::with_capacity(streams.len());
        for stream in streams {
            refined.push(run_with_history_limit(stream, cfg, model, Some(l))?);
        }
        let report = evaluate(&refined, &cfg.screen);
        rows.push(AblationRow {
            requested: l,
            effective: l.min(max_available),
            refined: report.overall.refined,
        });
    }
    Ok(rows)
}

/// Training-set synthesis for the person-specific transform.
#[derive(Debug, Clone, PartialEq)]
pub struct PtDatasetConfig {
    pub heatmap: HeatmapSpec,
    pub augment: AugmentConfig,
    /// History lengths each anchor sample is synthesized at.
    pub history_lengths: Vec<usize>,
    /// Anchor samples drawn per person and history length.
    pub anchors_per_person: usize,
    /// Where the augmented window is recentered before rasterization.
    /// `Some(g_tr)` reproduces self-calibration exactly (the inference-
    /// time history mean sits at g_tr), so the transform also learns to
    /// undo the calibration's own trajectory-mean residual. `None`
    /// aligns to the clean window mean instead (no translation left to
    /// learn).
    pub recenter_at: Option<PoG>,
    pub seed: u64,
}

impl Default for PtDatasetConfig {
    fn default() -> Self {
        Self {
            heatmap: HeatmapSpec::default(),
            augment: AugmentConfig::default(),
            history_lengths: alloc::vec![500, 2000],
            anchors_per_person: 8,
            recenter_at: None,
            seed: 0,
        }
    }
}

/// Builds transform training pairs from ground-truth trajectories.
///
/// Per person one shared affine is drawn from the augmentation ranges
/// and applied (plus per-point noise) to the clean trajectory, playing
/// the role of an unknown person-specific bias. Each anchor pairs the
/// augmented current point and augmented history heatmap (input)
/// against the clean history heatmap (target); both rasterizations
/// share one visit order. Streams without ground truth are skipped.
pub fn build_pt_training_set(
    streams: &[GazeStream],
    s: &ScreenSpec,
    cfg: &PtDatasetConfig,
) -> Vec<PtTrainingSample> {
    let mut out = Vec::new();
    for stream in streams {
        let clean_px: Vec<PoG> = stream
            .samples
            .iter()
            .filter(|smp| smp.valid != Some(false))
            .filter_map(|smp| smp.ground_truth)
            .map(|g| g.to_px(s))
            .collect();
        if clean_px.len() < 2 {
            continue;
        }
        let lane = person_lane(&stream.person_id);
        let mut rng = SplitMix64::new(split_seed(cfg.seed, lane));
        let affine = sample_affine(&mut rng, &cfg.augment, s);
        let noise: Vec<_> = (0..clean_px.len())
            .map(|_| sample_noise(&mut rng, &cfg.augment, s))
            .collect();
        let aug_px = apply_affine_points(&clean_px, &affine, &noise);
        let clean: Vec<PoG> = clean_px.iter().map(|p| p.to_cm(s)).collect();
        let aug: Vec<PoG> = aug_px.iter().map(|p| p.to_cm(s)).collect();

        let n = clean.len();
        for &len in &cfg.history_lengths {
            for k in 0..cfg.anchors_per_person {
                // anchor index with at least min(len, n-1) predecessors
                let window = len.min(n - 1);
                let anchor = window + crate::rng::index(&mut rng, n - window);
                let hist_range = anchor - window..anchor;
                let hist_clean: Vec<(PoG, bool)> =
                    clean[hist_range.clone()].iter().map(|p| (*p, true)).collect();
                // recenter the augmented window the way self-calibration
                // aligns the history the transform sees at inference
                let mean = |pts: &[(PoG, bool)]| {
                    let n = pts.len() as f64;
                    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, (p, _)| (a.0 + p.x, a.1 + p.y));
                    (sx / n, sy / n)
                };
                let hist_aug_raw: Vec<(PoG, bool)> =
                    aug[hist_range.clone()].iter().map(|p| (*p, true)).collect();
                let (amx, amy) = mean(&hist_aug_raw);
                let (tx, ty) = match cfg.recenter_at {
                    Some(g) => (g.x, g.y),
                    None => mean(&hist_clean),
                };
                let (sx, sy) = (tx - amx, ty - amy);
                let hist_aug: Vec<(PoG, bool)> = hist_aug_raw
                    .iter()
                    .map(|(p, b)| (PoG::cm(p.x + sx, p.y + sy), *b))
                    .collect();
                let anchor_aug = PoG::cm(aug[anchor].x + sx, aug[anchor].y + sy);
                // identical visit order on both sides of the pair
                let order_seed = split_seed(split_seed(cfg.seed, lane), (len * 1000 + k) as u64);
                let target_history = rasterize_history(
                    &hist_clean,
                    s,
                    &cfg.heatmap,
                    &mut SplitMix64::new(order_seed),
                );
                let input_history = rasterize_history(
                    &hist_aug,
                    s,
                    &cfg.heatmap,
                    &mut SplitMix64::new(order_seed),
                );
                let input_sample = rasterize_point(&anchor_aug, s, &cfg.heatmap);
                out.push(PtTrainingSample { input_sample, input_history, target_history });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_stream, PersonProfile, TrajectoryConfig, TrajectoryMode};
    use alloc::string::ToString;
    use alloc::vec;
    use rand_core::SeedableRng;

    fn eve() -> ScreenSpec {
        ScreenSpec::eve_default()
    }

    fn stream(profile: &PersonProfile, n: usize, seed: u64) -> GazeStream {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        generate_stream(
            profile,
            &TrajectoryConfig { mode: TrajectoryMode::FreeViewing, n_samples: n },
            &eve(),
            &mut rng,
        )
    }

    fn offline_cfg() -> PipelineConfig {
        PipelineConfig { mode: HistoryMode::Offline, ..PipelineConfig::default() }
    }

    #[test]
    fn identity_person_stays_identity_without_transform() {
        let st = stream(&PersonProfile::identity("p".to_string()), 300, 71);
        let mut cfg = offline_cfg();
        cfg.enable_transform = false;
        let refined = run(&st, &cfg, None).unwrap();
        for smp in &refined.samples {
            let gt = smp.ground_truth.unwrap();
            assert!(smp.b);
            assert!(smp.p_initial.distance(&gt) < 1e-9);
            // calibration shifts by (history mean - g_tr), which is the
            // trajectory-sampling bias only; bounded by a few cm
            assert!(smp.p_final.distance(&gt) < 8.0);
        }
    }

    #[test]
    fn offline_calibration_removes_pure_translation() {
        let s = eve();
        let profile = PersonProfile::pure_translation("p".to_string(), 2.5, -1.5, &s);
        let st = stream(&profile, 800, 72);
        // with g_tr set to the true trajectory mean, calibration must
        // recover the translation exactly (no noise, no blinks)
        let gts: Vec<PoG> = st.samples.iter().map(|x| x.ground_truth.unwrap()).collect();
        let g_tr = PoG::cm(
            gts.iter().map(|p| p.x).sum::<f64>() / gts.len() as f64,
            gts.iter().map(|p| p.y).sum::<f64>() / gts.len() as f64,
        );
        let mut cfg = offline_cfg();
        cfg.g_tr = g_tr;
        cfg.enable_transform = false;
        let refined = run(&st, &cfg, None).unwrap();
        for smp in &refined.samples {
            let gt = smp.ground_truth.unwrap();
            // the history mean excludes the sample itself, so each
            // residual is O(screen extent / n)
            assert!(smp.p_calibrated.distance(&gt) < 0.08, "{}", smp.p_calibrated.distance(&gt));
        }
    }

    #[test]
    fn online_warm_up_passes_initial_through() {
        let s = eve();
        let profile = PersonProfile::pure_translation("p".to_string(), 2.0, 1.0, &s);
        let st = stream(&profile, 400, 73);
        let mut cfg = PipelineConfig { online_threshold: 200, ..PipelineConfig::default() };
        cfg.enable_transform = false;
        let refined = run(&st, &cfg, None).unwrap();
        for smp in &refined.samples {
            // thresholds count valid history; all samples are valid here
            if (smp.t as usize) <= cfg.online_threshold + 1 {
                assert_eq!(smp.p_final, smp.p_initial);
            } else {
                assert!(smp.p_final.distance(&smp.p_initial) > 0.5);
            }
        }
    }

    #[test]
    fn online_outputs_are_causal() {
        // refinement of a prefix equals the prefix of the refinement
        let s = eve();
        let mut profile = PersonProfile::pure_translation("p".to_string(), 1.0, 0.5, &s);
        profile.blink_rate = 0.05;
        let st = stream(&profile, 300, 74);
        let cfg = PipelineConfig { online_threshold: 50, ..PipelineConfig::default() };
        let full = run(&st, &cfg, None).unwrap();
        let mut prefix_stream = st.clone();
        prefix_stream.samples.truncate(150);
        let prefix = run(&prefix_stream, &cfg, None).unwrap();
        for (a, b) in prefix.samples.iter().zip(&full.samples) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn offline_flags_mark_wild_samples() {
        let mut profile = PersonProfile::identity("p".to_string());
        profile.blink_rate = 0.1;
        let st = stream(&profile, 2000, 75);
        let cfg = offline_cfg();
        let refined = run(&st, &cfg, None).unwrap();
        let mut agree = 0usize;
        for (r, s) in refined.samples.iter().zip(&st.samples) {
            if r.b == s.valid.unwrap() {
                agree += 1;
            }
        }
        assert!(agree as f64 / st.samples.len() as f64 > 0.98, "agreement {agree}");
    }

    #[test]
    fn empty_stream_is_an_error() {
        let st = GazeStream { person_id: "p".to_string(), samples: vec![] };
        assert_eq!(
            run(&st, &PipelineConfig::default(), None).unwrap_err(),
            PipelineError::EmptyStream
        );
    }

    #[test]
    fn history_limit_zero_disables_refinement() {
        let s = eve();
        let profile = PersonProfile::pure_translation("p".to_string(), 2.0, 1.0, &s);
        let st = stream(&profile, 200, 76);
        let refined = run_with_history_limit(&st, &offline_cfg(), None, Some(0)).unwrap();
        for smp in &refined.samples {
            assert_eq!(smp.p_final, smp.p_initial);
            assert_eq!(smp.p_calibrated, smp.p_initial);
        }
    }

    #[test]
    fn history_limit_equals_full_run_when_large() {
        let s = eve();
        let mut profile = PersonProfile::pure_translation("p".to_string(), 2.0, 1.0, &s);
        profile.noise_sigma_px = 10.0;
        let st = stream(&profile, 300, 77);
        let cfg = offline_cfg();
        let a = run(&st, &cfg, None).unwrap();
        let b = run_with_history_limit(&st, &cfg, None, Some(10_000)).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!(x.p_final.distance(&y.p_final) < 1e-9);
        }
    }

    #[test]
    fn ablation_error_shrinks_with_history() {
        let s = eve();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(78);
        let streams: Vec<GazeStream> = (0..4)
            .map(|i| {
                let mut p = PersonProfile::sample_default(alloc::format!("p{i}"), &s, &mut rng);
                p.blink_rate = 0.02;
                stream(&p, 600, 100 + i)
            })
            .collect();
        let mut cfg = offline_cfg();
        cfg.enable_transform = false;
        let rows = ablate_history(&streams, &cfg, None, &[5, 50, 500]).unwrap();
        assert!(rows[0].refined.cm > rows[2].refined.cm);
        assert_eq!(rows[2].effective, 500);
    }

    #[test]
    fn evaluate_reports_sample_weighted_overall() {
        let s = eve();
        let st1 = stream(&PersonProfile::pure_translation("a".to_string(), 1.0, 0.0, &s), 50, 79);
        let st2 = stream(&PersonProfile::pure_translation("b".to_string(), 3.0, 0.0, &s), 150, 80);
        let mut cfg = offline_cfg();
        cfg.enable_calibration = false;
        cfg.enable_transform = false;
        let refined: Vec<_> = [st1, st2].iter().map(|x| run(x, &cfg, None).unwrap()).collect();
        let report = evaluate(&refined, &s);
        assert_eq!(report.overall.n_eval, 200);
        let expected = (50.0 * 1.0 + 150.0 * 3.0) / 200.0;
        assert!((report.overall.initial.cm - expected).abs() < 1e-9);
        // px column scales by the screen pixel pitch along x
        let px_per_cm = s.width_px as f64 / s.width_cm;
        assert!((report.overall.initial.px - expected * px_per_cm).abs() < 1e-6);
        assert!(report.overall.initial.degrees > 0.0);
    }

    #[test]
    fn training_set_builder_is_deterministic_and_shaped() {
        let s = eve();
        let st = stream(&PersonProfile::identity("p".to_string()), 400, 81);
        let cfg = PtDatasetConfig {
            history_lengths: vec![50, 100],
            anchors_per_person: 3,
            ..PtDatasetConfig::default()
        };
        let a = build_pt_training_set(core::slice::from_ref(&st), &s, &cfg);
        let b = build_pt_training_set(core::slice::from_ref(&st), &s, &cfg);
        assert_eq!(a.len(), 6);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.input_sample.data(), y.input_sample.data());
            assert_eq!(x.input_history.data(), y.input_history.data());
            assert_eq!(x.target_history.data(), y.target_history.data());
        }
        for smp in &a {
            assert!((smp.target_history.peak() - 1.0).abs() < 1e-12);
            assert!((smp.input_history.peak() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn training_pair_with_identity_augmentation_matches_target() {
        let s = eve();
        let st = stream(&PersonProfile::identity("p".to_string()), 300, 82);
        let cfg = PtDatasetConfig {
            augment: AugmentConfig::identity(),
            history_lengths: vec![100],
            anchors_per_person: 2,
            ..PtDatasetConfig::default()
        };
        let set = build_pt_training_set(core::slice::from_ref(&st), &s, &cfg);
        for smp in &set {
            assert_eq!(smp.input_history.data(), smp.target_history.data());
        }
    }
}
