//! Forward and inverse neural skinning maps and the ghost-corrected posed
//! occupancy query.
//!
//! The inverse map evaluates the weight field at the *posed* query, blends
//! the per-bone skinning transforms with those weights and inverts the
//! blended matrix in closed form:
//!
//! ```text
//! x_rest = [ sum_c W_c(x_posed | theta) B_c ]^-1 x_posed
//! ```
//!
//! With a ghost channel the network has one more output than the rig has
//! bones. That channel blends the root's transform and also scales the
//! cached occupancy by `1 - W_ghost`, which lets background regions switch
//! themselves off.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::geometry::{homogeneous, skinning_transforms, HomogeneousTransform, Point2};
use crate::lbs::blend_matrices;
use crate::occupancy::{GridSample, OccupancyGrid};
use crate::weightnet::{softmax, softmax_backward, Gradients, PoseEncoding, Tape, WeightNet};

/// Rest and posed frames with the ghost bone (a copy of the root) appended.
#[derive(Clone, Debug, PartialEq)]
pub struct GhostedFrames {
    pub rest: Vec<HomogeneousTransform>,
    pub posed: Vec<HomogeneousTransform>,
}

impl GhostedFrames {
    /// Number of real bones, excluding the ghost.
    pub fn bone_count(&self) -> usize {
        self.rest.len() - 1
    }
}

pub fn augment_ghost(rest: &[HomogeneousTransform], posed: &[HomogeneousTransform]) -> Result<GhostedFrames> {
    if rest.is_empty() || rest.len() != posed.len() {
        return Err(Error::invalid(format!(
            "need equal, nonempty frame lists (rest {}, posed {})",
            rest.len(),
            posed.len()
        )));
    }
    let mut r = rest.to_vec();
    let mut p = posed.to_vec();
    r.push(rest[0]);
    p.push(posed[0]);
    Ok(GhostedFrames { rest: r, posed: p })
}

/// Per-pose data shared by every query: the frames used to encode a query
/// and the per-channel skinning transforms `B_c = posed_c rest_c^-1`.
#[derive(Clone, Debug)]
pub struct PoseContext {
    encode_inverses: Vec<HomogeneousTransform>,
    blend: Vec<HomogeneousTransform>,
}

impl PoseContext {
    /// Context for posed-space queries (inverse map): encodes with the posed frames.
    pub fn posed(frames: &GhostedFrames) -> Result<Self> {
        let b = frames.bone_count();
        Ok(Self {
            encode_inverses: frames.posed[..b].iter().map(|f| f.inverse()).collect::<Result<_>>()?,
            blend: skinning_transforms(&frames.rest, &frames.posed)?,
        })
    }

    /// Context for rest-space queries (forward map): encodes with the rest frames.
    pub fn rest(frames: &GhostedFrames) -> Result<Self> {
        let b = frames.bone_count();
        Ok(Self {
            encode_inverses: frames.rest[..b].iter().map(|f| f.inverse()).collect::<Result<_>>()?,
            blend: skinning_transforms(&frames.rest, &frames.posed)?,
        })
    }

    pub fn bone_count(&self) -> usize {
        self.encode_inverses.len()
    }

    pub fn encode(&self, x: Point2) -> PoseEncoding {
        PoseEncoding::from_inverses(&self.encode_inverses, x)
    }

    /// Skinning transforms for the first `channels` weight channels.
    pub fn blend_frames(&self, channels: usize) -> &[HomogeneousTransform] {
        &self.blend[..channels]
    }

    fn check(&self, net: &WeightNet) -> Result<()> {
        if net.bone_count() != self.bone_count() || net.input_dim() != 3 * self.bone_count() {
            return Err(Error::invalid(format!(
                "network expects {} bones, pose has {}",
                net.bone_count(),
                self.bone_count()
            )));
        }
        if net.output_dim() > self.blend.len() || net.output_dim() < self.bone_count() {
            return Err(Error::invalid(format!("network has {} output channels", net.output_dim())));
        }
        Ok(())
    }
}

/// Counts queries that hit a singular blended matrix. Safe to share between threads.
#[derive(Debug, Default)]
pub struct SingularCounter(AtomicU64);

impl SingularCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn increment(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

fn blended_weights(net: &WeightNet, ctx: &PoseContext, x: Point2) -> Result<(Vec<f64>, Tape)> {
    ctx.check(net)?;
    let enc = ctx.encode(x);
    let (logits, tape) = net.forward(enc.as_slice())?;
    Ok((softmax(&logits), tape))
}

/// `[W(x_rest) B(theta)] x_rest`, weights evaluated with the rest encoding.
pub fn forward_map(net: &WeightNet, frames: &GhostedFrames, x: Point2) -> Result<Point2> {
    let ctx = PoseContext::rest(frames)?;
    forward_map_with(net, &ctx, x)
}

/// [`forward_map`] with a prebuilt rest-encoding context.
pub fn forward_map_with(net: &WeightNet, rest_ctx: &PoseContext, x: Point2) -> Result<Point2> {
    let (w, _) = blended_weights(net, rest_ctx, x)?;
    Ok(blend_matrices(&w, rest_ctx.blend_frames(w.len())).apply_point(x))
}

/// `[W(x_posed | theta) B(theta)]^-1 x_posed`.
pub fn inverse_map(net: &WeightNet, ctx: &PoseContext, x: Point2) -> Result<Point2> {
    let (w, _) = blended_weights(net, ctx, x)?;
    let m = blend_matrices(&w, ctx.blend_frames(w.len()));
    let inv = m.try_inverse().ok_or(Error::SingularBlend)?;
    Ok(inv.apply_point(x))
}

/// Ghost-corrected occupancy of the posed shape at `x`.
///
/// A singular blend yields 0 and bumps `singular`; other failures propagate.
pub fn corrected_occupancy(
    net: &WeightNet,
    ctx: &PoseContext,
    grid: &OccupancyGrid,
    x: Point2,
    singular: &SingularCounter,
) -> Result<f64> {
    match OccupancyEval::evaluate(net, ctx, grid, x) {
        Ok(e) => Ok(e.value),
        Err(Error::SingularBlend) => {
            singular.increment();
            Ok(0.0)
        }
        Err(e) => Err(e),
    }
}

/// One differentiable corrected-occupancy evaluation.
#[derive(Clone, Debug)]
pub struct OccupancyEval {
    pub value: f64,
    pub weights: Vec<f64>,
    pub rest_point: Point2,
    pub cache: GridSample,
    tape: Tape,
    blend_inverse: HomogeneousTransform,
    ghost: bool,
}

impl OccupancyEval {
    pub fn evaluate(net: &WeightNet, ctx: &PoseContext, grid: &OccupancyGrid, x: Point2) -> Result<Self> {
        let (weights, tape) = blended_weights(net, ctx, x)?;
        let m = blend_matrices(&weights, ctx.blend_frames(weights.len()));
        let blend_inverse = m.try_inverse().ok_or(Error::SingularBlend)?;
        let rest_point = blend_inverse.apply_point(x);
        let cache = grid.sample(rest_point);
        let ghost = net.has_ghost();
        let keep = if ghost { 1.0 - weights[weights.len() - 1] } else { 1.0 };
        Ok(Self {
            value: keep * cache.value,
            weights,
            rest_point,
            cache,
            tape,
            blend_inverse,
            ghost,
        })
    }

    pub fn ghost_weight(&self) -> f64 {
        if self.ghost {
            self.weights[self.weights.len() - 1]
        } else {
            0.0
        }
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    /// Accumulate `d_value * d(value)/d(params)` into `grads`.
    ///
    /// The chain runs through the ghost factor, the bilinear cache lookup,
    /// the blended-matrix inverse (`d(M^-1) = -M^-1 dM M^-1`), the softmax
    /// and the MLP.
    pub fn backward(&self, net: &WeightNet, ctx: &PoseContext, d_value: f64, grads: &mut Gradients) {
        if d_value == 0.0 {
            return;
        }
        let channels = self.weights.len();
        let keep = 1.0 - self.ghost_weight();
        let d_cache = d_value * keep;

        // dL/dx_rest in homogeneous form, then u = M^-T g so that
        // dL/dM = -u x_rest^T and dL/dw_c = -u . (B_c x_rest).
        let g = [d_cache * self.cache.gradient[0], d_cache * self.cache.gradient[1], 0.0, 0.0];
        let mut u = [0.0; 4];
        let inv = &self.blend_inverse.m;
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = inv[0][i] * g[0] + inv[1][i] * g[1] + inv[2][i] * g[2] + inv[3][i] * g[3];
        }
        let xr = homogeneous(self.rest_point);
        let mut d_weights: Vec<f64> = ctx
            .blend_frames(channels)
            .iter()
            .map(|b| {
                let p = b.apply(xr);
                -(u[0] * p[0] + u[1] * p[1] + u[2] * p[2] + u[3] * p[3])
            })
            .collect();
        if self.ghost {
            d_weights[channels - 1] -= d_value * self.cache.value;
        }
        let d_logits = softmax_backward(&self.weights, &d_weights);
        net.backward_into(&self.tape, &d_logits, grads);
    }
}
