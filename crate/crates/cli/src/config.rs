//! TOML configuration with CLI override precedence: a flag given on the
//! command line always wins over the config file, which wins over the
//! built-in defaults.

use std::path::Path;

use anyhow::{bail, Context, Result};
use gaze_refine::pipeline::PipelineConfig;
use gaze_refine::raster::HeatmapSpec;
use gaze_refine::refinement::HistoryMode;
use gaze_refine::{PoG, ScreenSpec};
use serde::Deserialize;

/// Config-file schema; every field is optional so a partial file only
/// overrides what it names.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub screen: ScreenSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreenSection {
    pub width_cm: Option<f64>,
    pub height_cm: Option<f64>,
    pub width_px: Option<u32>,
    pub height_px: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    /// "online" or "offline".
    pub mode: Option<String>,
    pub heatmap_h: Option<usize>,
    pub heatmap_w: Option<usize>,
    pub sigma: Option<f64>,
    pub min_history: Option<usize>,
    pub online_threshold: Option<usize>,
    pub validity: Option<bool>,
    pub calibration: Option<bool>,
    pub transform: Option<bool>,
    pub g_tr_x_cm: Option<f64>,
    pub g_tr_y_cm: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub grad_clip: Option<f64>,
    pub lr_decay: Option<f64>,
    pub history_lengths: Option<Vec<usize>>,
    pub anchors_per_person: Option<usize>,
    pub channels: Option<Vec<usize>>,
}

pub fn load_file(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

pub fn parse_mode(raw: &str) -> Result<HistoryMode> {
    match raw {
        "online" => Ok(HistoryMode::Online),
        "offline" => Ok(HistoryMode::Offline),
        other => bail!("mode must be \"online\" or \"offline\", got {other:?}"),
    }
}

/// Resolves the effective pipeline configuration from defaults, an
/// optional config file and the CLI flags (highest precedence).
pub struct PipelineOverrides {
    pub mode: Option<HistoryMode>,
    pub seed: Option<u64>,
    pub no_validity: bool,
    pub no_calibration: bool,
    pub no_transform: bool,
}

pub fn resolve_pipeline(file: &FileConfig, cli: &PipelineOverrides) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();

    let s = &file.screen;
    if [s.width_cm.is_some(), s.height_cm.is_some(), s.width_px.is_some(), s.height_px.is_some()]
        .iter()
        .any(|p| *p)
    {
        cfg.screen = ScreenSpec::new(
            s.width_cm.unwrap_or(cfg.screen.width_cm),
            s.height_cm.unwrap_or(cfg.screen.height_cm),
            s.width_px.unwrap_or(cfg.screen.width_px),
            s.height_px.unwrap_or(cfg.screen.height_px),
        )
        .map_err(|e| anyhow::anyhow!("screen: {e}"))?;
        cfg.g_tr = cfg.screen.center_cm();
    }

    let p = &file.pipeline;
    if let Some(mode) = &p.mode {
        cfg.mode = parse_mode(mode)?;
    }
    cfg.heatmap = HeatmapSpec {
        h: p.heatmap_h.unwrap_or(cfg.heatmap.h),
        w: p.heatmap_w.unwrap_or(cfg.heatmap.w),
        sigma: p.sigma.unwrap_or(cfg.heatmap.sigma),
    };
    if cfg.heatmap.h < 8 || cfg.heatmap.w < 8 {
        bail!("heatmap dims must be at least 8x8");
    }
    if !(cfg.heatmap.sigma > 0.0) {
        bail!("sigma must be positive");
    }
    if let Some(v) = p.min_history {
        cfg.min_history = v;
    }
    if let Some(v) = p.online_threshold {
        cfg.online_threshold = v;
    }
    if let Some(v) = p.validity {
        cfg.enable_validity = v;
    }
    if let Some(v) = p.calibration {
        cfg.enable_calibration = v;
    }
    if let Some(v) = p.transform {
        cfg.enable_transform = v;
    }
    if let (Some(x), Some(y)) = (p.g_tr_x_cm, p.g_tr_y_cm) {
        cfg.g_tr = PoG::cm(x, y);
    } else if p.g_tr_x_cm.is_some() || p.g_tr_y_cm.is_some() {
        bail!("g_tr_x_cm and g_tr_y_cm must be set together");
    }
    if let Some(v) = p.seed {
        cfg.seed = v;
    }

    // CLI flags trump the file
    if let Some(mode) = cli.mode {
        cfg.mode = mode;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.no_validity {
        cfg.enable_validity = false;
    }
    if cli.no_calibration {
        cfg.enable_calibration = false;
    }
    if cli.no_transform {
        cfg.enable_transform = false;
    }
    Ok(cfg)
}
