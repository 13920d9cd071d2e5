//! Person-specific transform: a small spatial-transformer network that
//! predicts one 2x3 affine from a (sample, history) heatmap pair and
//! warps both channels with it.
//!
//! The localization net is a stack of 3x3 stride-2 conv+ReLU stages, a
//! global average pool and a fully connected head emitting 6 reals added
//! to the identity affine. The final layer is zero-initialized with an
//! identity bias, so a fresh model is an exact identity map. Training
//! minimizes binary cross-entropy on the warped history channel only;
//! gradients are fully analytic, including through the bilinear sampler
//! and the affine grid.

mod net;
mod sampler;
mod train;

pub use net::{ConvLayer, Dense, PtModel, Tensor, DEFAULT_CHANNELS};
pub use sampler::{warp, warp_tensor};
pub use train::{train, PtError, PtTrainConfig, PtTrainingSample, TrainOutcome};

use alloc::vec::Vec;

use crate::affine::AffineParams;
use crate::geometry::{PoG, ScreenSpec};
use crate::raster::{decode_subcell, Heatmap, HeatmapSpec, RasterError};

/// Clamp for predicted probabilities inside the BCE log terms.
pub const BCE_EPS: f64 = 1e-7;

/// Result of one forward pass.
#[derive(Debug, Clone)]
pub struct PtOutput {
    /// Predicted affine over normalized [-1, 1]^2 grid coordinates.
    pub theta: AffineParams,
    pub sample: Heatmap,
    pub history: Heatmap,
}

/// Runs the localization net on the 2-channel (sample, history) input
/// and warps both channels with the predicted affine. Out-of-bounds
/// samples read as zero.
pub fn forward(model: &PtModel, sample: &Heatmap, history: &Heatmap) -> PtOutput {
    assert_eq!((sample.h(), sample.w()), (history.h(), history.w()));
    let input = Tensor::from_channels(&[sample, history]);
    let (theta, _) = model.localize(&input);
    let warped = sampler::warp_tensor(&input, &theta);
    let (out_sample, out_history) = warped.into_two_heatmaps();
    PtOutput { theta, sample: out_sample, history: out_history }
}

/// Mean binary cross-entropy between a target map and a predicted map,
/// with the prediction clamped to `[BCE_EPS, 1 - BCE_EPS]`.
pub fn bce_loss(target: &Heatmap, predicted: &Heatmap) -> f64 {
    debug_assert_eq!(target.data().len(), predicted.data().len());
    let mut acc = 0.0;
    for (&t, &q) in target.data().iter().zip(predicted.data()) {
        let q = q.clamp(BCE_EPS, 1.0 - BCE_EPS);
        acc -= t * crate::math::ln(q) + (1.0 - t) * crate::math::ln(1.0 - q);
    }
    acc / target.data().len() as f64
}

/// Loss and analytic parameter gradients for one training sample.
/// The loss is BCE on the warped history channel only; the warped
/// sample channel carries no loss.
pub fn backward(model: &PtModel, sample: &PtTrainingSample) -> (f64, Vec<f64>) {
    train::loss_and_gradients(model, sample)
}

/// Final-PoG inference: forward on the 2-channel input, then decode the
/// transformed sample channel with sub-cell refinement (the warped
/// Gaussian rarely lands on a cell center, so plain argmax would add a
/// half-cell quantization floor to every output).
pub fn infer_pog(
    model: &PtModel,
    r_sample: &Heatmap,
    r_history: &Heatmap,
    s: &ScreenSpec,
    hspec: &HeatmapSpec,
) -> Result<PoG, RasterError> {
    let out = forward(model, r_sample, r_history);
    decode_subcell(&out.sample, s, hspec)
}
