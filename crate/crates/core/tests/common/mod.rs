//! Oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::f64::consts::PI;

use nilbs_core::dataset::AnimationSet;
use nilbs_core::geometry::{Bone, HomogeneousTransform, Pose, Rig};
use nilbs_core::lbs::SkinnedMesh;
use nilbs_core::nilbs::OccupancyEval;
use nilbs_core::occupancy::OccupancyGrid;
use nilbs_core::trainer::{Objective, PoseSamples};
use nilbs_core::weightnet::{Gradients, WeightNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for relative errors, so that parameters with a
/// vanishing gradient are judged on absolute error instead.
pub const REL_FLOOR: f64 = 1e-8;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Random tree of 1..=6 bones with rest frames `T(pivot) Rz(angle)`.
pub fn random_rig(rng: &mut impl Rng) -> Rig {
    let n = rng.gen_range(1..=6);
    let bones = (0..n)
        .map(|b| {
            let pivot = [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)];
            let angle = rng.gen_range(-PI..PI);
            Bone {
                parent: if b == 0 { None } else { Some(rng.gen_range(0..b)) },
                rest_frame: HomogeneousTransform::translation(pivot[0], pivot[1], 0.0)
                    * HomogeneousTransform::rotation_z(angle),
                pivot,
            }
        })
        .collect();
    Rig::new(bones).unwrap()
}

pub fn random_pose(bone_count: usize, rng: &mut impl Rng) -> Pose {
    Pose {
        theta: (0..bone_count).map(|_| rng.gen_range(-PI..PI)).collect(),
        root_translation: [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
    }
}

/// Star-shaped counterclockwise polygon (simple by construction) with random simplex weights.
pub fn random_mesh(bone_count: usize, rng: &mut impl Rng) -> SkinnedMesh {
    let n = rng.gen_range(3..40);
    let step = 2.0 * PI / n as f64;
    let center = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let vertices = (0..n)
        .map(|k| {
            let a = step * (k as f64 + rng.gen_range(-0.4..0.4));
            let r = rng.gen_range(0.5..2.0);
            [center[0] + r * a.cos(), center[1] + r * a.sin()]
        })
        .collect();
    let weights = (0..n)
        .map(|_| {
            let row: Vec<f64> = (0..bone_count).map(|_| rng.gen_range(0.0..1.0) + 1e-3).collect();
            let s: f64 = row.iter().sum();
            row.into_iter().map(|w| w / s).collect()
        })
        .collect();
    SkinnedMesh::new(vertices, weights).unwrap()
}

/// Randomize every parameter of `net` in `[-scale, scale]`.
pub fn randomize(net: &mut WeightNet, scale: f64, rng: &mut impl Rng) {
    for i in 0..net.num_params() {
        net.set_param(i, rng.gen_range(-scale..scale));
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub probes: usize,
    /// Probes rejected because a kink was crossed inside `[-h, h]`.
    pub skipped: usize,
    pub worst: f64,
}

impl GradCheck {
    fn record(&mut self, analytic: f64, numeric: f64) {
        self.probes += 1;
        self.worst = self.worst.max(rel_error(analytic, numeric));
    }
}

fn leaky_signs(net: &WeightNet, enc: &[f64], out: &mut Vec<i64>) {
    let (_, tape) = net.forward(enc).unwrap();
    out.extend(tape.hidden_pre_activations().map(|v| (v > 0.0) as i64));
}

/// Central differences of `r . logits(enc)` against backprop, for `probes` random parameters.
pub fn check_logits(seed: u64, probes: usize) -> GradCheck {
    let mut rng = rng(seed);
    let mut net = WeightNet::for_rig(6, true, seed).unwrap();
    randomize(&mut net, 0.5, &mut rng);
    let enc: Vec<f64> = (0..net.input_dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let r: Vec<f64> = (0..net.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let objective = |net: &WeightNet| -> f64 {
        let (logits, _) = net.forward(&enc).unwrap();
        logits.iter().zip(&r).map(|(l, r)| l * r).sum()
    };
    let (_, tape) = net.forward(&enc).unwrap();
    let (grads, _) = net.backward(&tape, &r);
    let flat = grads.flat();
    let mut base = Vec::new();
    leaky_signs(&net, &enc, &mut base);

    let mut out = GradCheck::default();
    while out.probes < probes {
        let k = rng.gen_range(0..net.num_params());
        let p = net.param(k);
        let mut values = [0.0; 2];
        let mut same = true;
        for (s, v) in [1.0, -1.0].iter().zip(values.iter_mut()) {
            let mut probe = net.clone();
            probe.set_param(k, p + s * FD_STEP);
            let mut sig = Vec::new();
            leaky_signs(&probe, &enc, &mut sig);
            same &= sig == base;
            *v = objective(&probe);
        }
        if !same {
            out.skipped += 1;
            continue;
        }
        out.record(flat[k], (values[0] - values[1]) / (2.0 * FD_STEP));
    }
    out
}

/// Fixed mini-batch for the full-loss check.
pub struct LossFixture {
    pub set: AnimationSet,
    pub grid: OccupancyGrid,
    pub net: WeightNet,
    pub batch: Vec<PoseSamples>,
}

impl LossFixture {
    pub fn new(seed: u64) -> Self {
        let set = AnimationSet::gingerbread(4, seed).unwrap();
        let grid = OccupancyGrid::bake(set.rest_polygon(), set.bbox, [48, 48]).unwrap();
        let mut rng = rng(seed ^ 0x5eed);
        let mut net = WeightNet::for_rig(6, true, seed).unwrap();
        // A larger spread than the initializer so the ghost and occupancy paths carry signal.
        randomize(&mut net, 0.3, &mut rng);
        let batch = {
            let obj = Objective::new(&set, &grid, 1.0).unwrap();
            obj.sample_batch(&[0, 1, 2, 3], 24, &mut rng)
        };
        Self { set, grid, net, batch }
    }

    pub fn objective(&self) -> Objective<'_> {
        Objective::new(&self.set, &self.grid, 1.0).unwrap()
    }

    /// Every discrete choice the loss makes: activation signs, grid cells, L1 signs.
    fn signature(&self, obj: &Objective<'_>, net: &WeightNet) -> Vec<i64> {
        let mut sig = Vec::new();
        for ps in &self.batch {
            let ctx = obj.context(ps.pose);
            for (x, y) in ps.points.iter().zip(&ps.labels) {
                match OccupancyEval::evaluate(net, ctx, &self.grid, *x) {
                    Ok(e) => {
                        sig.extend(e.tape().hidden_pre_activations().map(|v| (v > 0.0) as i64));
                        match self.grid.locate(e.rest_point) {
                            Some((cell, _)) => sig.extend([cell[0] as i64, cell[1] as i64]),
                            None => sig.push(-1),
                        }
                        sig.push((e.value - y).signum() as i64 * i64::from(e.value != *y));
                    }
                    Err(_) => sig.push(-2),
                }
            }
        }
        for v in self.set.mesh.vertices() {
            leaky_signs(net, obj.rest_context().encode(*v).as_slice(), &mut sig);
        }
        sig
    }
}

/// Central differences of the full training loss against the analytic gradient.
pub fn check_full_loss(seed: u64, probes: usize) -> GradCheck {
    let fx = LossFixture::new(seed);
    let obj = fx.objective();
    let mut grads = Gradients::zeros_like(&fx.net);
    obj.loss_and_grad(&fx.net, &fx.batch, &mut grads).unwrap();
    let flat = grads.flat();
    let base = fx.signature(&obj, &fx.net);
    let mut rng = rng(seed.wrapping_add(77));

    let mut out = GradCheck::default();
    while out.probes < probes {
        let k = rng.gen_range(0..fx.net.num_params());
        let p = fx.net.param(k);
        let mut values = [0.0; 2];
        let mut same = true;
        for (s, v) in [1.0, -1.0].iter().zip(values.iter_mut()) {
            let mut probe = fx.net.clone();
            probe.set_param(k, p + s * FD_STEP);
            same &= fx.signature(&obj, &probe) == base;
            *v = obj.loss(&probe, &fx.batch).unwrap().total;
        }
        if !same {
            out.skipped += 1;
            continue;
        }
        out.record(flat[k], (values[0] - values[1]) / (2.0 * FD_STEP));
    }
    out
}
