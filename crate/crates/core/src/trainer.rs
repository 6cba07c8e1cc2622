//! Joint fitting of the weight field to posed occupancy and painted
//! skinning weights.

use std::fmt::Write as _;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::AnimationSet;
use crate::error::{Error, Result};
use crate::geometry::{Point2, Pose};
use crate::nilbs::{augment_ghost, OccupancyEval, PoseContext};
use crate::occupancy::{node_position, Aabb2, OccupancyGrid};
use crate::weightnet::{softmax, softmax_backward, Gradients, WeightNet};

/// Added inside the log of the cross-entropy.
pub const CE_EPS: f64 = 1e-12;
/// Boundary samples are jittered by this fraction of the box diagonal.
pub const BOUNDARY_SIGMA: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_poses: usize,
    pub points_per_pose: usize,
    pub learning_rate: f64,
    /// Multiplier on the skinning-weight loss.
    pub lambda_w: f64,
    pub seed: u64,
    pub grid_resolution: [usize; 2],
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Train with the background (ghost) channel.
    pub ghost: bool,
    pub eval_resolution: usize,
    /// Write a checkpoint every this many steps from the CLI (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            batch_poses: 4,
            points_per_pose: 128,
            learning_rate: 1e-3,
            lambda_w: 1.0,
            seed: 0,
            grid_resolution: [128, 128],
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            ghost: true,
            eval_resolution: 128,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("steps", self.steps),
            ("batch_poses", self.batch_poses),
            ("points_per_pose", self.points_per_pose),
            ("eval_resolution", self.eval_resolution),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.grid_resolution.iter().any(|r| *r < 2) || self.eval_resolution < 2 {
            return Err(Error::config("resolutions need at least 2 nodes per axis"));
        }
        // Zero is allowed: it makes training a no-op.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning_rate must be non-negative, got {}", self.learning_rate)));
        }
        if !(self.lambda_w >= 0.0 && self.lambda_w.is_finite()) {
            return Err(Error::config(format!("lambda_w must be non-negative, got {}", self.lambda_w)));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::config("beta1 and beta2 must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("epsilon must be positive"));
        }
        Ok(())
    }

    /// Parse a `key = value` file. Blank lines and `#` comments are ignored;
    /// unset keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::config(format!("line {}: {key}: expected {what}, got `{value}`", n + 1));
            let int = || value.parse::<usize>().map_err(|_| bad("a non-negative integer"));
            let real = || value.parse::<f64>().map_err(|_| bad("a number"));
            match key {
                "steps" => cfg.steps = int()?,
                "batch_poses" => cfg.batch_poses = int()?,
                "points_per_pose" => cfg.points_per_pose = int()?,
                "learning_rate" => cfg.learning_rate = real()?,
                "lambda_w" => cfg.lambda_w = real()?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("a non-negative integer"))?,
                "grid_resolution" => {
                    let parts: Vec<&str> = value.split([',', 'x', ' ']).filter(|s| !s.is_empty()).collect();
                    let nums = parts
                        .iter()
                        .map(|p| p.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad("`N` or `NX,NY`"))?;
                    cfg.grid_resolution = match nums[..] {
                        [n] => [n, n],
                        [nx, ny] => [nx, ny],
                        _ => return Err(bad("`N` or `NX,NY`")),
                    };
                }
                "beta1" => cfg.beta1 = real()?,
                "beta2" => cfg.beta2 = real()?,
                "epsilon" => cfg.epsilon = real()?,
                "ghost" => cfg.ghost = value.parse().map_err(|_| bad("true or false"))?,
                "eval_resolution" => cfg.eval_resolution = int()?,
                "checkpoint_every" => cfg.checkpoint_every = int()?,
                _ => return Err(Error::config(format!("line {}: unknown key `{key}`", n + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "batch_poses = {}", self.batch_poses);
        let _ = writeln!(s, "points_per_pose = {}", self.points_per_pose);
        let _ = writeln!(s, "learning_rate = {:?}", self.learning_rate);
        let _ = writeln!(s, "lambda_w = {:?}", self.lambda_w);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "grid_resolution = {},{}", self.grid_resolution[0], self.grid_resolution[1]);
        let _ = writeln!(s, "beta1 = {:?}", self.beta1);
        let _ = writeln!(s, "beta2 = {:?}", self.beta2);
        let _ = writeln!(s, "epsilon = {:?}", self.epsilon);
        let _ = writeln!(s, "ghost = {}", self.ghost);
        let _ = writeln!(s, "eval_resolution = {}", self.eval_resolution);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        s
    }
}

/// Losses logged for one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss_occ: f64,
    pub loss_w: f64,
    pub singular_count: usize,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    /// IoU for every training pose after the last step.
    pub final_iou: Vec<f64>,
}

impl TrainReport {
    pub fn mean_iou(&self) -> f64 {
        if self.final_iou.is_empty() {
            return 0.0;
        }
        self.final_iou.iter().sum::<f64>() / self.final_iou.len() as f64
    }

    /// `step,loss_occ,loss_w,singular_count` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss_occ,loss_w,singular_count\n");
        for r in &self.steps {
            let _ = writeln!(s, "{},{:?},{:?},{}", r.step, r.loss_occ, r.loss_w, r.singular_count);
        }
        s
    }

    pub fn iou_json(&self) -> String {
        let mut s = serde_json::to_string(&self.final_iou).expect("floats serialize");
        s.push('\n');
        s
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Adam {
    pub fn new(net: &WeightNet, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut WeightNet, grads: &Gradients) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        };
        for (k, layer) in net.layers_mut().iter_mut().enumerate() {
            let g = &grads.layers[k];
            let (m, v) = (&mut self.m.layers[k], &mut self.v.layers[k]);
            update(&mut layer.w, &g.w, &mut m.w, &mut v.w);
            update(&mut layer.b, &g.b, &mut m.b, &mut v.b);
        }
    }
}

/// Anything that can answer posed occupancy queries for the frames of an animation.
pub trait PosedOccupancy {
    /// Occupancy at `x` in frame `pose`. `Err(SingularBlend)` marks a sample to skip.
    fn occupancy(&self, pose: usize, x: Point2) -> Result<f64>;
}

/// The learned model: weight field, rest cache and per-frame contexts.
pub struct NeuralOccupancy<'a> {
    pub net: &'a WeightNet,
    pub grid: &'a OccupancyGrid,
    contexts: Vec<PoseContext>,
}

impl<'a> NeuralOccupancy<'a> {
    pub fn new(net: &'a WeightNet, grid: &'a OccupancyGrid, animation: &AnimationSet) -> Result<Self> {
        let contexts = pose_contexts(animation, &animation.poses)?;
        Ok(Self { net, grid, contexts })
    }

    pub fn context(&self, pose: usize) -> &PoseContext {
        &self.contexts[pose]
    }
}

impl PosedOccupancy for NeuralOccupancy<'_> {
    fn occupancy(&self, pose: usize, x: Point2) -> Result<f64> {
        OccupancyEval::evaluate(self.net, &self.contexts[pose], self.grid, x).map(|e| e.value)
    }
}

/// Exact occupancy of the skinned outline.
pub struct GroundTruth<'a>(pub &'a AnimationSet);

impl PosedOccupancy for GroundTruth<'_> {
    fn occupancy(&self, pose: usize, x: Point2) -> Result<f64> {
        Ok(f64::from(self.0.gt_occupancy(pose, x)))
    }
}

/// Posed-query contexts (with ghost frames) for each pose.
pub fn pose_contexts(animation: &AnimationSet, poses: &[Pose]) -> Result<Vec<PoseContext>> {
    let rest = animation.rig.rest_frames();
    poses
        .iter()
        .map(|p| {
            let posed = animation.rig.pose(p)?;
            PoseContext::posed(&augment_ghost(&rest, &posed)?)
        })
        .collect()
}

/// Rest-encoding context used by the weight loss.
pub fn rest_context(animation: &AnimationSet) -> Result<PoseContext> {
    let rest = animation.rig.rest_frames();
    PoseContext::rest(&augment_ghost(&rest, &rest)?)
}

/// Sampled query points for one frame with their ground-truth labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSamples {
    pub pose: usize,
    pub points: Vec<Point2>,
    pub labels: Vec<f64>,
}

/// Half uniform over `bbox`, half jittered around random points on `boundary`.
///
/// Jitter is Gaussian with sigma `2%` of the box diagonal, truncated at 3 sigma.
pub fn sample_points(bbox: &Aabb2, boundary: &[Point2], n: usize, rng: &mut impl Rng) -> Vec<Point2> {
    let uniform = n - n / 2;
    let mut out = Vec::with_capacity(n);
    for _ in 0..uniform {
        out.push([
            rng.gen_range(bbox.min[0]..=bbox.max[0]),
            rng.gen_range(bbox.min[1]..=bbox.max[1]),
        ]);
    }
    let sigma = BOUNDARY_SIGMA * bbox.diagonal();
    let m = boundary.len();
    let lengths: Vec<f64> = (0..m)
        .map(|i| {
            let (a, b) = (boundary[i], boundary[(i + 1) % m]);
            (b[0] - a[0]).hypot(b[1] - a[1])
        })
        .collect();
    let total: f64 = lengths.iter().sum();
    for _ in uniform..n {
        let base = if m == 0 || total <= 0.0 {
            bbox.center()
        } else {
            let mut s = rng.gen_range(0.0..total);
            let mut e = 0;
            while e + 1 < m && s >= lengths[e] {
                s -= lengths[e];
                e += 1;
            }
            let (a, b) = (boundary[e], boundary[(e + 1) % m]);
            let t = (s / lengths[e]).clamp(0.0, 1.0);
            [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
        };
        let jitter = loop {
            let dx: f64 = StandardNormal.sample(rng);
            let dy: f64 = StandardNormal.sample(rng);
            if dx.hypot(dy) <= 3.0 {
                break [dx * sigma, dy * sigma];
            }
        };
        out.push([base[0] + jitter[0], base[1] + jitter[1]]);
    }
    out
}

/// Occupancy loss over a batch: per-pose mean absolute error, averaged over
/// poses. Samples the model rejects as singular are skipped and counted.
pub fn loss_occupancy(model: &impl PosedOccupancy, batch: &[PoseSamples]) -> Result<(f64, usize)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut total = 0.0;
    let mut skipped = 0;
    for ps in batch {
        let mut sum = 0.0;
        let mut used = 0usize;
        for (x, y) in ps.points.iter().zip(&ps.labels) {
            match model.occupancy(ps.pose, *x) {
                Ok(v) => {
                    sum += (v - y).abs();
                    used += 1;
                }
                Err(Error::SingularBlend) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        if used > 0 {
            total += sum / used as f64;
        }
    }
    Ok((total / batch.len() as f64, skipped))
}

/// Painted weight rows padded with a zero background entry when the network has one.
fn weight_targets(animation: &AnimationSet, channels: usize) -> Vec<Vec<f64>> {
    animation
        .mesh
        .weights()
        .iter()
        .map(|row| {
            let mut t = row.clone();
            t.resize(channels, 0.0);
            t
        })
        .collect()
}

/// Mean cross-entropy between the rest-pose weight field at each vertex and its painted weights.
pub fn loss_weights(net: &WeightNet, animation: &AnimationSet) -> Result<f64> {
    let ctx = rest_context(animation)?;
    let targets = weight_targets(animation, net.output_dim());
    let mut total = 0.0;
    for (v, t) in animation.mesh.vertices().iter().zip(&targets) {
        let (logits, _) = net.forward(ctx.encode(*v).as_slice())?;
        total += cross_entropy(&softmax(&logits), t);
    }
    Ok(total / targets.len() as f64)
}

pub fn cross_entropy(predicted: &[f64], target: &[f64]) -> f64 {
    -predicted
        .iter()
        .zip(target)
        .filter(|(_, t)| **t != 0.0)
        .map(|(p, t)| t * (p + CE_EPS).ln())
        .sum::<f64>()
}

/// Loss values of one evaluation of the training objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub occupancy: f64,
    pub weights: f64,
    pub total: f64,
    pub singular: usize,
}

/// The training objective `L_occ + lambda_w * L_w` with analytic gradients.
pub struct Objective<'a> {
    animation: &'a AnimationSet,
    grid: &'a OccupancyGrid,
    contexts: Vec<PoseContext>,
    rest: PoseContext,
    rest_encodings: Vec<Vec<f64>>,
    pub lambda_w: f64,
}

impl<'a> Objective<'a> {
    pub fn new(animation: &'a AnimationSet, grid: &'a OccupancyGrid, lambda_w: f64) -> Result<Self> {
        let rest = rest_context(animation)?;
        let rest_encodings = animation.mesh.vertices().iter().map(|v| rest.encode(*v).0).collect();
        Ok(Self {
            animation,
            grid,
            contexts: pose_contexts(animation, &animation.poses)?,
            rest,
            rest_encodings,
            lambda_w,
        })
    }

    pub fn context(&self, pose: usize) -> &PoseContext {
        &self.contexts[pose]
    }

    pub fn rest_context(&self) -> &PoseContext {
        &self.rest
    }

    /// Draw `points_per_pose` labelled samples for each listed pose.
    pub fn sample_batch(&self, poses: &[usize], points_per_pose: usize, rng: &mut impl Rng) -> Vec<PoseSamples> {
        poses
            .iter()
            .map(|&p| {
                let points = sample_points(&self.animation.bbox, self.animation.deformed(p), points_per_pose, rng);
                let labels = points.iter().map(|x| f64::from(self.animation.gt_occupancy(p, *x))).collect();
                PoseSamples { pose: p, points, labels }
            })
            .collect()
    }

    pub fn loss(&self, net: &WeightNet, batch: &[PoseSamples]) -> Result<LossBreakdown> {
        self.evaluate(net, batch, None)
    }

    /// Loss, with its gradient written into `grads` (overwritten).
    pub fn loss_and_grad(&self, net: &WeightNet, batch: &[PoseSamples], grads: &mut Gradients) -> Result<LossBreakdown> {
        grads.clear();
        self.evaluate(net, batch, Some(grads))
    }

    fn evaluate(&self, net: &WeightNet, batch: &[PoseSamples], mut grads: Option<&mut Gradients>) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let pose_scale = 1.0 / batch.len() as f64;
        let mut occupancy = 0.0;
        let mut singular = 0;
        let mut evals = Vec::new();
        for ps in batch {
            let ctx = &self.contexts[ps.pose];
            evals.clear();
            for (x, y) in ps.points.iter().zip(&ps.labels) {
                match OccupancyEval::evaluate(net, ctx, self.grid, *x) {
                    Ok(e) => evals.push((e, *y)),
                    Err(Error::SingularBlend) => singular += 1,
                    Err(e) => return Err(e),
                }
            }
            if evals.is_empty() {
                continue;
            }
            let scale = pose_scale / evals.len() as f64;
            for (e, y) in &evals {
                let diff = e.value - y;
                occupancy += scale * diff.abs();
                if let Some(g) = grads.as_deref_mut() {
                    let sign = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    e.backward(net, ctx, scale * sign, g);
                }
            }
        }

        let targets = weight_targets(self.animation, net.output_dim());
        let vscale = 1.0 / targets.len() as f64;
        let mut weights = 0.0;
        for (enc, t) in self.rest_encodings.iter().zip(&targets) {
            let (logits, tape) = net.forward(enc)?;
            let w = softmax(&logits);
            weights += vscale * cross_entropy(&w, t);
            if let Some(g) = grads.as_deref_mut() {
                if self.lambda_w != 0.0 {
                    let d_w: Vec<f64> = w
                        .iter()
                        .zip(t)
                        .map(|(p, t)| -self.lambda_w * vscale * t / (p + CE_EPS))
                        .collect();
                    net.backward_into(&tape, &softmax_backward(&w, &d_w), g);
                }
            }
        }
        Ok(LossBreakdown {
            occupancy,
            weights,
            total: occupancy + self.lambda_w * weights,
            singular,
        })
    }
}

/// IoU between `{prediction >= 0.5}` and the ground truth on a `resolution^2`
/// node lattice over the animation's box. Both empty counts as a perfect match.
pub fn evaluate_iou(model: &impl PosedOccupancy, animation: &AnimationSet, pose: usize, resolution: usize) -> Result<f64> {
    let mut inter = 0usize;
    let mut union = 0usize;
    for_each_node(animation, resolution, |p| {
        let pred = predicted(model, pose, p)? >= 0.5;
        let gt = animation.gt_occupancy(pose, p) == 1;
        inter += usize::from(pred && gt);
        union += usize::from(pred || gt);
        Ok(())
    })?;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mean predicted occupancy over lattice nodes, counting only nodes outside
/// the true shape (i.e. occupancy mass placed on background).
pub fn false_positive_mass(model: &impl PosedOccupancy, animation: &AnimationSet, pose: usize, resolution: usize) -> Result<f64> {
    let mut mass = 0.0;
    let mut nodes = 0usize;
    for_each_node(animation, resolution, |p| {
        nodes += 1;
        if animation.gt_occupancy(pose, p) == 0 {
            mass += predicted(model, pose, p)?;
        }
        Ok(())
    })?;
    Ok(mass / nodes as f64)
}

fn predicted(model: &impl PosedOccupancy, pose: usize, p: Point2) -> Result<f64> {
    match model.occupancy(pose, p) {
        Err(Error::SingularBlend) => Ok(0.0),
        r => r,
    }
}

fn for_each_node(animation: &AnimationSet, resolution: usize, mut f: impl FnMut(Point2) -> Result<()>) -> Result<()> {
    if resolution < 2 {
        return Err(Error::InvalidResolution(resolution));
    }
    for j in 0..resolution {
        for i in 0..resolution {
            f(node_position(&animation.bbox, [resolution, resolution], i, j))?;
        }
    }
    Ok(())
}

/// Train a fresh network on `animation` against the rest cache `grid`.
pub fn train(config: &TrainConfig, animation: &AnimationSet, grid: &OccupancyGrid) -> Result<(WeightNet, TrainReport)> {
    train_with(config, animation, grid, |_, _| Ok(()))
}

/// [`train`] with a callback after every step (progress, checkpoints).
pub fn train_with(
    config: &TrainConfig,
    animation: &AnimationSet,
    grid: &OccupancyGrid,
    mut on_step: impl FnMut(&StepRecord, &WeightNet) -> Result<()>,
) -> Result<(WeightNet, TrainReport)> {
    config.validate()?;
    let net = WeightNet::for_rig(animation.rig.bone_count(), config.ghost, config.seed)?;
    train_from(net, config, animation, grid, &mut on_step)
}

/// Continue training an existing network.
pub fn train_from(
    mut net: WeightNet,
    config: &TrainConfig,
    animation: &AnimationSet,
    grid: &OccupancyGrid,
    on_step: &mut impl FnMut(&StepRecord, &WeightNet) -> Result<()>,
) -> Result<(WeightNet, TrainReport)> {
    config.validate()?;
    if net.bone_count() != animation.rig.bone_count() {
        return Err(Error::config(format!(
            "network expects {} bones, rig has {}",
            net.bone_count(),
            animation.rig.bone_count()
        )));
    }
    let objective = Objective::new(animation, grid, config.lambda_w)?;
    let mut adam = Adam::new(&net, config.learning_rate, config.beta1, config.beta2, config.epsilon);
    let mut grads = Gradients::zeros_like(&net);
    // Sampling gets its own stream so it does not shift with initialization.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let frames = animation.len();
    let mut report = TrainReport::default();

    for step in 0..config.steps {
        let poses: Vec<usize> = if config.batch_poses >= frames {
            (0..frames).collect()
        } else {
            let mut v = sample_indices(&mut rng, frames, config.batch_poses).into_vec();
            v.sort_unstable();
            v
        };
        let batch = objective.sample_batch(&poses, config.points_per_pose, &mut rng);
        let loss = match objective.loss_and_grad(&net, &batch, &mut grads) {
            Ok(l) => l,
            Err(Error::NonFiniteActivation { .. }) => return Err(Error::DivergedTraining { step, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        if !loss.total.is_finite() || !grads.is_finite() {
            return Err(Error::DivergedTraining { step, loss: loss.total });
        }
        adam.step(&mut net, &grads);
        let record = StepRecord {
            step,
            loss_occ: loss.occupancy,
            loss_w: loss.weights,
            singular_count: loss.singular,
        };
        report.steps.push(record);
        on_step(&record, &net)?;
    }

    let model = NeuralOccupancy::new(&net, grid, animation)?;
    report.final_iou = (0..frames)
        .map(|t| evaluate_iou(&model, animation, t, config.eval_resolution))
        .collect::<Result<_>>()?;
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant(f64);

    impl PosedOccupancy for Constant {
        fn occupancy(&self, _: usize, _: Point2) -> Result<f64> {
            Ok(self.0)
        }
    }

    fn small_set() -> AnimationSet {
        AnimationSet::gingerbread(4, 3).unwrap()
    }

    #[test]
    fn config_parsing() {
        let cfg = TrainConfig::parse("# comment\nsteps = 10\nlearning_rate=0.01 # inline\ngrid_resolution = 64,32\nghost = false\n").unwrap();
        assert_eq!(cfg.steps, 10);
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.grid_resolution, [64, 32]);
        assert!(!cfg.ghost);
        assert_eq!(cfg.batch_poses, TrainConfig::default().batch_poses);
        assert_eq!(TrainConfig::parse("grid_resolution = 16").unwrap().grid_resolution, [16, 16]);
        assert_eq!(TrainConfig::parse(&cfg.to_config_string()).unwrap(), cfg);

        for bad in [
            "learning_rate = -1e-3",
            "steps = 0",
            "steps = ten",
            "bogus = 1",
            "steps 10",
            "grid_resolution = 1",
            "beta1 = 1.0",
            "epsilon = 0",
            "ghost = maybe",
        ] {
            assert!(matches!(TrainConfig::parse(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn sampler_contract() {
        let set = small_set();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = sample_points(&set.bbox, set.deformed(0), 1000, &mut rng);
        assert_eq!(pts.len(), 1000);
        let sigma = BOUNDARY_SIGMA * set.bbox.diagonal();
        let grown = set.bbox.expanded_by(3.0 * sigma);
        assert!(pts.iter().all(|p| grown.contains(*p)));

        let mut again = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(sample_points(&set.bbox, set.deformed(0), 1000, &mut again), pts);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts = sample_points(&set.bbox, set.deformed(0), 20000, &mut rng);
        let uniform = &pts[..10000];
        let c = set.bbox.center();
        let mean = [
            uniform.iter().map(|p| p[0]).sum::<f64>() / 1e4,
            uniform.iter().map(|p| p[1]).sum::<f64>() / 1e4,
        ];
        // Standard error of a uniform mean is width / sqrt(12 n), ~0.3% of the width here.
        assert!((mean[0] - c[0]).abs() < 0.05 * set.bbox.width());
        assert!((mean[1] - c[1]).abs() < 0.05 * set.bbox.height());
    }

    fn batch_for(set: &AnimationSet) -> Vec<PoseSamples> {
        let grid = OccupancyGrid::bake(set.rest_polygon(), set.bbox, [32, 32]).unwrap();
        let obj = Objective::new(set, &grid, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        obj.sample_batch(&[0, 2], 50, &mut rng)
    }

    #[test]
    fn occupancy_loss_examples() {
        let set = small_set();
        let batch = batch_for(&set);
        assert_eq!(loss_occupancy(&GroundTruth(&set), &batch).unwrap(), (0.0, 0));
        let (l, _) = loss_occupancy(&Constant(0.5), &batch).unwrap();
        assert!((l - 0.5).abs() < 1e-15);
        assert!(loss_occupancy(&Constant(0.5), &[]).is_err());
    }

    #[test]
    fn weight_loss_examples() {
        let set = small_set();
        // Zero last layer: every channel at 1/7, and each target row sums to one.
        let mut net = WeightNet::for_rig(6, true, 2).unwrap();
        let last = net.layers_mut().last_mut().unwrap();
        last.w.iter_mut().for_each(|w| *w = 0.0);
        let l = loss_weights(&net, &set).unwrap();
        assert!((l - 7f64.ln()).abs() < 1e-9, "{l}");

        assert!(cross_entropy(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).abs() < 1e-11);
        let u = [1.0 / 7.0; 7];
        assert!((cross_entropy(&u, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]) - 1.945910149).abs() < 1e-8);
        assert!((cross_entropy(&u, &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]) - 7f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn iou_examples() {
        let set = small_set();
        assert_eq!(evaluate_iou(&GroundTruth(&set), &set, 1, 32).unwrap(), 1.0);
        assert_eq!(evaluate_iou(&Constant(0.0), &set, 1, 32).unwrap(), 0.0);
        assert!(evaluate_iou(&Constant(0.0), &set, 1, 1).is_err());
        assert_eq!(false_positive_mass(&GroundTruth(&set), &set, 0, 32).unwrap(), 0.0);
    }

    #[test]
    fn iou_of_offset_squares() {
        // Two equal squares overlapping by half: |A n B| = 1/2, |A u B| = 3/2.
        let set = AnimationSet::from_parts(
            crate::dataset::gingerbread_rig(),
            crate::lbs::SkinnedMesh::new(
                vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
                vec![vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]; 4],
            )
            .unwrap(),
            vec![Pose::rest(6)],
            Aabb2::new([-0.5, -0.5], [2.0, 1.5]).unwrap(),
            0,
        )
        .unwrap();
        struct Shifted;
        impl PosedOccupancy for Shifted {
            fn occupancy(&self, _: usize, x: Point2) -> Result<f64> {
                Ok(f64::from((0.5..1.5).contains(&x[0]) && (0.0..1.0).contains(&x[1])))
            }
        }
        let iou = evaluate_iou(&Shifted, &set, 0, 401).unwrap();
        assert!((iou - 1.0 / 3.0).abs() < 0.01, "{iou}");
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let set = small_set();
        let grid = OccupancyGrid::bake(set.rest_polygon(), set.bbox, [32, 32]).unwrap();
        let cfg = TrainConfig {
            steps: 3,
            points_per_pose: 16,
            learning_rate: 0.0,
            eval_resolution: 8,
            ..TrainConfig::default()
        };
        let (net, report) = train(&cfg, &set, &grid).unwrap();
        assert_eq!(net, WeightNet::for_rig(6, true, cfg.seed).unwrap());
        assert_eq!(report.steps.len(), 3);
    }

    #[test]
    fn training_is_deterministic() {
        let set = small_set();
        let grid = OccupancyGrid::bake(set.rest_polygon(), set.bbox, [32, 32]).unwrap();
        let cfg = TrainConfig {
            steps: 5,
            points_per_pose: 16,
            batch_poses: 2,
            eval_resolution: 8,
            ..TrainConfig::default()
        };
        let a = train(&cfg, &set, &grid).unwrap();
        let b = train(&cfg, &set, &grid).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert!(a.1.steps.iter().all(|r| r.loss_occ >= 0.0 && r.loss_w >= 0.0));
        assert!(a.1.to_csv().starts_with("step,loss_occ,loss_w,singular_count\n0,"));
    }

    #[test]
    fn rig_mismatch_is_a_config_error() {
        let set = small_set();
        let grid = OccupancyGrid::bake(set.rest_polygon(), set.bbox, [8, 8]).unwrap();
        let net = WeightNet::for_rig(3, true, 0).unwrap();
        let r = train_from(net, &TrainConfig::default(), &set, &grid, &mut |_, _| Ok(()));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut net = WeightNet::new(&[2, 2], 0).unwrap();
        let before = net.clone();
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].w = vec![0.5, -2.0, 0.0, 1e-3];
        let mut adam = Adam::new(&net, 0.1, 0.9, 0.999, 1e-8);
        adam.step(&mut net, &g);
        let d: Vec<f64> = net.layers()[0].w.iter().zip(&before.layers()[0].w).map(|(a, b)| a - b).collect();
        // Bias-corrected first step is lr * g / (|g| + eps).
        assert!((d[0] + 0.1).abs() < 1e-7 && (d[1] - 0.1).abs() < 1e-7 && d[2] == 0.0);
        assert!((d[3] + 0.1 * 1e-3 / (1e-3 + 1e-8)).abs() < 1e-12);
    }
}
