//! Synthetic person simulator: a stand-in for any upstream gaze
//! network. Emits per-person streams of ground-truth PoG trajectories
//! together with "initial predictions" distorted by a person-specific
//! latent affine, per-eye disparity, pixel noise and blink corruption.

use alloc::string::String;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::affine::{sample_affine, AffineParams, AugmentConfig};
use crate::geometry::{GazeOrigin, PoG, ScreenSpec};
use crate::math;
use crate::rng;

/// One record of a prediction stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeSample {
    pub t: u64,
    /// Initial per-eye PoG predictions, cm.
    pub p_left: PoG,
    pub p_right: PoG,
    /// Per-frame gaze origin when known (cm, screen frame).
    pub origin: Option<GazeOrigin>,
    /// Ground-truth PoG when known, cm.
    pub ground_truth: Option<PoG>,
    /// Dataset-level validity label when known.
    pub valid: Option<bool>,
}

/// A person's ordered prediction stream.
#[derive(Debug, Clone)]
pub struct GazeStream {
    pub person_id: String,
    pub samples: Vec<GazeSample>,
}

/// Latent per-person bias: an affine distortion in screen pixel space
/// (the stand-in for the unobservable optical/visual-axis deviation),
/// prediction noise, blink corruption and a left/right eye disparity.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonProfile {
    pub person_id: String,
    /// Affine applied to the ground truth in pixel space.
    pub distortion: AffineParams,
    pub noise_sigma_px: f64,
    /// Probability that a sample is corrupted (e.g. a blink).
    pub blink_rate: f64,
    /// Fraction of corrupted samples that still land on-screen, to
    /// exercise the history-distance validity rule.
    pub blink_on_screen_frac: f64,
    /// Left/right eye offsets around the averaged PoG, cm.
    pub eye_offset_left: (f64, f64),
    pub eye_offset_right: (f64, f64),
}

impl PersonProfile {
    /// A bias-free person: predictions equal the ground truth.
    pub fn identity(person_id: String) -> Self {
        Self {
            person_id,
            distortion: AffineParams::identity(),
            noise_sigma_px: 0.0,
            blink_rate: 0.0,
            blink_on_screen_frac: 0.0,
            eye_offset_left: (0.0, 0.0),
            eye_offset_right: (0.0, 0.0),
        }
    }

    /// A person whose bias is a pure translation, given in cm.
    pub fn pure_translation(person_id: String, dx_cm: f64, dy_cm: f64, s: &ScreenSpec) -> Self {
        let t = PoG::cm(dx_cm, dy_cm).to_px(s);
        Self {
            distortion: AffineParams::translation(t.x, t.y),
            ..Self::identity(person_id)
        }
    }

    /// Draws a person with a mild bias calibrated so that raw
    /// predictions carry roughly a 2 degree mean angular error at a
    /// 60 cm viewing distance (the kappa-scale regime).
    pub fn sample_default<R: RngCore + ?Sized>(
        person_id: String,
        s: &ScreenSpec,
        rng_handle: &mut R,
    ) -> Self {
        let kappa = AugmentConfig {
            scale_min: 0.97,
            scale_max: 1.03,
            rotation_max_deg: 1.5,
            shear_max: 0.02,
            translation_max_frac: 0.0,
            noise_sigma_frac: 0.0,
        };
        let linear = sample_affine(rng_handle, &kappa, s);
        // translation drawn separately as a Gaussian offset in cm
        let t = PoG::cm(
            rng::normal(rng_handle, 0.0, 2.0),
            rng::normal(rng_handle, 0.0, 2.0),
        )
        .to_px(s);
        Self {
            distortion: AffineParams::translation(t.x, t.y).compose(&linear),
            noise_sigma_px: 0.004 * s.diagonal_px(),
            blink_rate: 0.0,
            blink_on_screen_frac: 0.005,
            eye_offset_left: (-0.4, 0.0),
            eye_offset_right: (0.4, 0.0),
            person_id,
        }
    }

    /// Draws a person whose distortion comes from the augmentation
    /// ranges, mirroring the transforms the person-specific transform
    /// is trained against.
    pub fn sample_from_augmentation<R: RngCore + ?Sized>(
        person_id: String,
        cfg: &AugmentConfig,
        s: &ScreenSpec,
        rng_handle: &mut R,
    ) -> Self {
        Self {
            distortion: sample_affine(rng_handle, cfg, s),
            noise_sigma_px: 0.004 * s.diagonal_px(),
            blink_rate: 0.0,
            blink_on_screen_frac: 0.005,
            eye_offset_left: (-0.4, 0.0),
            eye_offset_right: (0.4, 0.0),
            person_id,
        }
    }
}

/// Ground-truth trajectory model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TrajectoryMode {
    /// Fixation + saccade random process over the screen (geometric
    /// fixation durations, 3-sample linear saccades).
    FreeViewing,
    /// I.i.d. uniform targets over the screen.
    RandomPoints,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryConfig {
    pub mode: TrajectoryMode,
    pub n_samples: usize,
}

const FIXATION_MEAN_SAMPLES: f64 = 30.0;
const SACCADE_SAMPLES: usize = 3;

fn uniform_target<R: RngCore + ?Sized>(rng_handle: &mut R, s: &ScreenSpec) -> PoG {
    PoG::cm(
        rng::uniform(rng_handle, 0.0, s.width_cm),
        rng::uniform(rng_handle, 0.0, s.height_cm),
    )
}

/// Ground-truth gaze trajectory on the screen.
fn trajectory<R: RngCore + ?Sized>(
    traj: &TrajectoryConfig,
    s: &ScreenSpec,
    rng_handle: &mut R,
) -> Vec<PoG> {
    let mut out = Vec::with_capacity(traj.n_samples);
    match traj.mode {
        TrajectoryMode::RandomPoints => {
            for _ in 0..traj.n_samples {
                out.push(uniform_target(rng_handle, s));
            }
        }
        TrajectoryMode::FreeViewing => {
            let mut current = uniform_target(rng_handle, s);
            while out.len() < traj.n_samples {
                // geometric fixation duration, mean FIXATION_MEAN_SAMPLES
                let p = 1.0 / FIXATION_MEAN_SAMPLES;
                let mut dwell = 1usize;
                while rng::uniform01(rng_handle) > p {
                    dwell += 1;
                }
                for _ in 0..dwell {
                    if out.len() >= traj.n_samples {
                        return out;
                    }
                    out.push(current);
                }
                let next = uniform_target(rng_handle, s);
                for k in 1..=SACCADE_SAMPLES {
                    if out.len() >= traj.n_samples {
                        return out;
                    }
                    let a = k as f64 / (SACCADE_SAMPLES + 1) as f64;
                    out.push(PoG::cm(
                        current.x + a * (next.x - current.x),
                        current.y + a * (next.y - current.y),
                    ));
                }
                current = next;
            }
        }
    }
    out
}

/// Wild corrupted prediction: an isotropic draw one to four screen
/// diagonals away from the screen center (a closed eye makes the
/// upstream network diverge, not drift), landing on-screen only with
/// the configured small probability.
fn wild_draw<R: RngCore + ?Sized>(rng_handle: &mut R, s: &ScreenSpec, on_screen_frac: f64) -> PoG {
    if rng::uniform01(rng_handle) < on_screen_frac {
        return uniform_target(rng_handle, s);
    }
    let c = s.center_cm();
    let diag = math::sqrt(s.width_cm * s.width_cm + s.height_cm * s.height_cm);
    let r = diag * rng::uniform(rng_handle, 1.0, 4.0);
    let phi = rng::uniform(rng_handle, 0.0, 2.0 * core::f64::consts::PI);
    PoG::cm(c.x + r * math::cos(phi), c.y + r * math::sin(phi))
}

/// Generates one person's stream: ground truth plus per-eye initial
/// predictions (affine-distorted, noise-perturbed, eye-offset), with
/// blink corruption replacing predictions by wild draws. Deterministic
/// given (profile, trajectory config, RNG state).
pub fn generate_stream<R: RngCore + ?Sized>(
    profile: &PersonProfile,
    traj: &TrajectoryConfig,
    s: &ScreenSpec,
    rng_handle: &mut R,
) -> GazeStream {
    let targets = trajectory(traj, s, rng_handle);
    let mut samples = Vec::with_capacity(targets.len());
    for (i, g) in targets.iter().enumerate() {
        let t = i as u64 + 1;
        let corrupted = profile.blink_rate > 0.0 && rng::uniform01(rng_handle) < profile.blink_rate;
        let (p_left, p_right) = if corrupted {
            (
                wild_draw(rng_handle, s, profile.blink_on_screen_frac),
                wild_draw(rng_handle, s, profile.blink_on_screen_frac),
            )
        } else {
            let undistorted =
                profile.distortion == AffineParams::identity() && profile.noise_sigma_px == 0.0;
            let eye = |offset: (f64, f64), rng_handle: &mut R| {
                // skip the px round trip when it would be a no-op, so a
                // bias-free person reproduces the ground truth bit-exactly
                if undistorted {
                    return PoG::cm(g.x + offset.0, g.y + offset.1);
                }
                let gp = g.to_px(s);
                let (mut x, mut y) = profile.distortion.apply(gp.x, gp.y);
                if profile.noise_sigma_px > 0.0 {
                    x += rng::normal(rng_handle, 0.0, profile.noise_sigma_px);
                    y += rng::normal(rng_handle, 0.0, profile.noise_sigma_px);
                }
                let cm = PoG::px(x, y).to_cm(s);
                PoG::cm(cm.x + offset.0, cm.y + offset.1)
            };
            (
                eye(profile.eye_offset_left, rng_handle),
                eye(profile.eye_offset_right, rng_handle),
            )
        };
        samples.push(GazeSample {
            t,
            p_left,
            p_right,
            origin: None,
            ground_truth: Some(*g),
            valid: Some(!corrupted),
        });
    }
    GazeStream { person_id: profile.person_id.clone(), samples }
}
