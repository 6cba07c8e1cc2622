//! Procedural "gingerbread" character: outline, six-bone rig, painted
//! weights, a looping animation and the ground-truth posed occupancy.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_6, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Bone, HomogeneousTransform, Point2, Pose, Rig};
use crate::lbs::SkinnedMesh;
use crate::occupancy::{point_in_polygon, Aabb2};

pub const BONE_COUNT: usize = 6;
pub const TORSO: usize = 0;
pub const HEAD: usize = 1;
pub const LEFT_ARM: usize = 2;
pub const RIGHT_ARM: usize = 3;
pub const LEFT_LEG: usize = 4;
pub const RIGHT_LEG: usize = 5;

/// Largest joint-angle change allowed between consecutive frames.
pub const MAX_FRAME_STEP: f64 = 0.15;
/// Largest joint amplitude.
pub const MAX_AMPLITUDE: f64 = FRAC_PI_3;
/// Fraction of the shapes' extent added on each side of the bounding box.
pub const BBOX_PADDING: f64 = 0.2;
/// Default number of animation frames.
pub const DEFAULT_FRAMES: usize = 100;

/// Softening added to squared distances in the weight falloff.
const FALLOFF_EPS: f64 = 0.01;

/// Bone segment used for weight painting, with the falloff's support radius.
#[derive(Clone, Copy, Debug)]
pub struct BoneSegment {
    pub a: Point2,
    pub b: Point2,
    pub support: f64,
}

impl BoneSegment {
    pub fn distance(&self, p: Point2) -> f64 {
        let ab = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let len2 = ab[0] * ab[0] + ab[1] * ab[1];
        let t = if len2 > 0.0 {
            (((p[0] - self.a[0]) * ab[0] + (p[1] - self.a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (p[0] - self.a[0] - t * ab[0]).hypot(p[1] - self.a[1] - t * ab[1])
    }

    /// Inverse-square falloff shifted to reach zero at the support radius.
    pub fn falloff(&self, p: Point2) -> f64 {
        let d = self.distance(p);
        (1.0 / (d * d + FALLOFF_EPS) - 1.0 / (self.support * self.support + FALLOFF_EPS)).max(0.0)
    }
}

/// Segments for torso, head, left/right arm, left/right leg.
pub fn gingerbread_segments() -> [BoneSegment; BONE_COUNT] {
    let limb = 0.45;
    [
        BoneSegment { a: [0.0, -0.5], b: [0.0, 0.5], support: 0.7 },
        BoneSegment { a: [0.0, 0.65], b: [0.0, 1.1], support: limb },
        BoneSegment { a: [-0.45, 0.4], b: [-1.25, 0.4], support: limb },
        BoneSegment { a: [0.45, 0.4], b: [1.25, 0.4], support: limb },
        BoneSegment { a: [-0.28, -0.6], b: [-0.28, -1.45], support: limb },
        BoneSegment { a: [0.28, -0.6], b: [0.28, -1.45], support: limb },
    ]
}

/// Normalized falloff weights; a point outside every support goes to its nearest bone.
pub fn paint_weights(p: Point2, segments: &[BoneSegment]) -> Vec<f64> {
    let mut w: Vec<f64> = segments.iter().map(|s| s.falloff(p)).collect();
    let sum: f64 = w.iter().sum();
    if sum > 0.0 {
        w.iter_mut().for_each(|v| *v /= sum);
    } else {
        let nearest = segments
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.distance(p).total_cmp(&b.distance(p)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        w.iter_mut().enumerate().for_each(|(i, v)| *v = f64::from(i == nearest));
    }
    w
}

fn arc(center: Point2, radius: f64, from: f64, to: f64, steps: usize) -> impl Iterator<Item = Point2> {
    (1..steps).map(move |k| {
        let a = from + (to - from) * k as f64 / steps as f64;
        [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
    })
}

/// Right half of the outline, from the crotch to the top of the head.
fn right_half_outline() -> Vec<Point2> {
    let mut v = vec![[0.0, -0.6], [0.11, -0.6], [0.11, -1.0], [0.11, -1.45]];
    v.extend(arc([0.28, -1.45], 0.17, PI, TAU, 4));
    v.extend([[0.45, -1.45], [0.45, -1.0], [0.45, -0.6], [0.45, -0.2], [0.45, 0.25], [0.8, 0.25], [1.25, 0.25]]);
    v.extend(arc([1.25, 0.4], 0.15, -FRAC_PI_2, FRAC_PI_2, 4));
    v.extend([[1.25, 0.55], [0.8, 0.55], [0.45, 0.55], [0.35, 0.65], [0.12, 0.65]]);
    let (center, radius, neck): (Point2, f64, f64) = ([0.0, 1.0], 0.32, 0.12);
    let start = (-(radius * radius - neck * neck).sqrt()).atan2(neck);
    v.push([neck, center[1] + radius * start.sin()]);
    v.extend(arc(center, radius, start, FRAC_PI_2, 10));
    v.push([0.0, center[1] + radius]);
    v
}

/// The gingerbread outline, counterclockwise.
pub fn gingerbread_outline() -> Vec<Point2> {
    let right = right_half_outline();
    let mut out = right.clone();
    out.extend(right[1..right.len() - 1].iter().rev().map(|p| [-p[0], p[1]]));
    out
}

pub fn gingerbread_rig() -> Rig {
    let frame = |pivot: Point2, angle: f64| {
        HomogeneousTransform::translation(pivot[0], pivot[1], 0.0).compose(&HomogeneousTransform::rotation_z(angle))
    };
    let bone = |parent, pivot: Point2, angle| Bone {
        parent,
        rest_frame: frame(pivot, angle),
        pivot,
    };
    Rig::new(vec![
        bone(None, [0.0, 0.0], 0.0),
        bone(Some(TORSO), [0.0, 0.65], FRAC_PI_2),
        bone(Some(TORSO), [-0.45, 0.4], PI),
        bone(Some(TORSO), [0.45, 0.4], 0.0),
        bone(Some(TORSO), [-0.28, -0.6], -FRAC_PI_2),
        bone(Some(TORSO), [0.28, -0.6], -FRAC_PI_2),
    ])
    .expect("gingerbread rig is valid")
}

/// Rig and skinned outline of the gingerbread character.
pub fn build_gingerbread() -> (Rig, SkinnedMesh) {
    let vertices = gingerbread_outline();
    let segments = gingerbread_segments();
    let weights = vertices.iter().map(|p| paint_weights(*p, &segments)).collect();
    let mesh = SkinnedMesh::new(vertices, weights).expect("gingerbread mesh is valid");
    (gingerbread_rig(), mesh)
}

/// Per-bone sinusoid parameters of the looping animation.
#[derive(Clone, Debug, PartialEq)]
pub struct AnimationParams {
    pub amplitudes: Vec<f64>,
    pub frequencies: Vec<u32>,
    pub phases: Vec<f64>,
    /// Semi-axes of the root's elliptical path.
    pub root_radii: Point2,
    pub root_phase: f64,
}

impl AnimationParams {
    pub fn random(bone_count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut amplitudes = Vec::with_capacity(bone_count);
        let mut frequencies = Vec::with_capacity(bone_count);
        let mut phases = Vec::with_capacity(bone_count);
        for b in 0..bone_count {
            // Keep the torso and head calmer than the limbs.
            let hi = if b == TORSO || b == HEAD { FRAC_PI_6 } else { MAX_AMPLITUDE };
            amplitudes.push(rng.gen_range(0.5 * hi..=hi));
            frequencies.push(rng.gen_range(1..=3));
            phases.push(rng.gen_range(0.0..TAU));
        }
        let root_radii = [rng.gen_range(0.05..0.15), rng.gen_range(0.05..0.15)];
        let root_phase = rng.gen_range(0.0..TAU);
        Self {
            amplitudes,
            frequencies,
            phases,
            root_radii,
            root_phase,
        }
    }

    /// Amplitude actually used for `t_count` frames: capped so that one
    /// frame's change, at most `2 A sin(pi f / T)`, stays within the step limit.
    pub fn effective_amplitude(&self, b: usize, t_count: usize) -> f64 {
        let f = f64::from(self.frequencies[b]);
        let max_step_per_unit = 2.0 * (PI * f / t_count as f64).sin().abs();
        let a = self.amplitudes[b].min(MAX_AMPLITUDE);
        if max_step_per_unit > 0.0 {
            a.min(MAX_FRAME_STEP / max_step_per_unit)
        } else {
            a
        }
    }

    pub fn frames(&self, t_count: usize) -> Vec<Pose> {
        let n = self.amplitudes.len();
        let amps: Vec<f64> = (0..n).map(|b| self.effective_amplitude(b, t_count)).collect();
        (0..t_count)
            .map(|t| {
                let s = TAU * t as f64 / t_count as f64;
                let theta = (0..n)
                    .map(|b| amps[b] * (s * f64::from(self.frequencies[b]) + self.phases[b]).sin())
                    .collect();
                let r = s + self.root_phase;
                let root_translation = [
                    self.root_radii[0] * r.sin(),
                    self.root_radii[1] * (self.root_phase.cos() - r.cos()),
                ];
                Pose { theta, root_translation }
            })
            .collect()
    }
}

/// `t_count` frames of a seeded looping animation.
pub fn sample_animation(rig: &Rig, t_count: usize, seed: u64) -> Result<Vec<Pose>> {
    if t_count == 0 {
        return Err(Error::invalid("animation needs at least one frame"));
    }
    Ok(AnimationParams::random(rig.bone_count(), seed).frames(t_count))
}

/// Ground-truth occupancy of the skinned outline at `x`.
pub fn gt_occupancy(mesh: &SkinnedMesh, rig: &Rig, pose: &Pose, x: Point2) -> Result<u8> {
    Ok(point_in_polygon(&mesh.skin(rig, pose)?, x))
}

/// A character, its animation frames and a box containing every frame.
#[derive(Clone, Debug)]
pub struct AnimationSet {
    pub rig: Rig,
    pub mesh: SkinnedMesh,
    pub poses: Vec<Pose>,
    pub bbox: Aabb2,
    pub seed: u64,
    deformed: Vec<Vec<Point2>>,
}

impl AnimationSet {
    /// Gingerbread dataset with `t_count` frames.
    pub fn gingerbread(t_count: usize, seed: u64) -> Result<Self> {
        let (rig, mesh) = build_gingerbread();
        let poses = sample_animation(&rig, t_count, seed)?;
        let deformed = deform_all(&mesh, &rig, &poses)?;
        let bbox = Aabb2::around(mesh.vertices().iter().chain(deformed.iter().flatten()))
            .ok_or_else(|| Error::invalid("empty mesh"))?
            .padded(BBOX_PADDING);
        Ok(Self {
            rig,
            mesh,
            poses,
            bbox,
            seed,
            deformed,
        })
    }

    /// Assemble from parts (e.g. loaded from disk), checking consistency.
    pub fn from_parts(rig: Rig, mesh: SkinnedMesh, poses: Vec<Pose>, bbox: Aabb2, seed: u64) -> Result<Self> {
        if mesh.bone_count() != rig.bone_count() {
            return Err(Error::invalid(format!(
                "mesh weights cover {} bones, rig has {}",
                mesh.bone_count(),
                rig.bone_count()
            )));
        }
        if poses.is_empty() {
            return Err(Error::invalid("dataset has no poses"));
        }
        let deformed = deform_all(&mesh, &rig, &poses)?;
        Ok(Self {
            rig,
            mesh,
            poses,
            bbox,
            seed,
            deformed,
        })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Skinned outline for frame `t`.
    pub fn deformed(&self, t: usize) -> &[Point2] {
        &self.deformed[t]
    }

    pub fn gt_occupancy(&self, t: usize, x: Point2) -> u8 {
        point_in_polygon(&self.deformed[t], x)
    }

    pub fn rest_polygon(&self) -> &[Point2] {
        self.mesh.vertices()
    }
}

fn deform_all(mesh: &SkinnedMesh, rig: &Rig, poses: &[Pose]) -> Result<Vec<Vec<Point2>>> {
    poses.iter().map(|p| mesh.skin(rig, p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occupancy::{is_simple_polygon, winding_number};

    #[test]
    fn gingerbread_shape() {
        let (rig, mesh) = build_gingerbread();
        assert_eq!(rig.bone_count(), BONE_COUNT);
        assert_eq!(mesh.vertices().len(), 64);
        assert!(is_simple_polygon(mesh.vertices()));
        for row in mesh.weights() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|w| *w >= 0.0));
        }
        for b in 1..BONE_COUNT {
            assert_eq!(rig.bones()[b].parent, Some(TORSO));
        }
    }

    #[test]
    fn limb_tips_are_one_hot() {
        let (_, mesh) = build_gingerbread();
        let segs = gingerbread_segments();
        let tip = mesh
            .vertices()
            .iter()
            .position(|p| (p[0] + 1.40).abs() < 1e-12 && (p[1] - 0.4).abs() < 1e-12)
            .expect("left hand tip vertex");
        // Hand tip (-1.40, 0.4): 0.15 from the left arm segment, and every
        // other segment is further than its support (torso 1.40 > 0.7,
        // right arm 1.85, head sqrt(1.96 + 0.0625) > 0.45, legs > 1.0).
        for (b, s) in segs.iter().enumerate() {
            if b != LEFT_ARM {
                assert!(s.distance(mesh.vertices()[tip]) > s.support);
            }
        }
        assert!(mesh.weights()[tip][LEFT_ARM] > 0.99);
        assert_eq!(mesh.weights()[tip][LEFT_ARM], 1.0);
        let foot = mesh.vertices().iter().position(|p| (p[1] + 1.62).abs() < 1e-12 && p[0] > 0.0).unwrap();
        assert_eq!(mesh.weights()[foot][RIGHT_LEG], 1.0);
    }

    #[test]
    fn torso_side_is_mostly_torso() {
        let w = paint_weights([0.45, -0.2], &gingerbread_segments());
        assert!(w[TORSO] > 0.8);
    }

    #[test]
    fn animation_is_deterministic_and_smooth() {
        let rig = gingerbread_rig();
        for t_count in [1, 10, 100] {
            let a = sample_animation(&rig, t_count, 7).unwrap();
            let b = sample_animation(&rig, t_count, 7).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), t_count);
            for pair in a.windows(2) {
                for (x, y) in pair[0].theta.iter().zip(&pair[1].theta) {
                    assert!((x - y).abs() <= MAX_FRAME_STEP + 1e-12);
                }
            }
            for p in &a {
                assert!(p.theta.iter().all(|t| t.abs() <= MAX_AMPLITUDE));
            }
        }
        assert!(sample_animation(&rig, 0, 7).is_err());
        assert_ne!(sample_animation(&rig, 10, 7).unwrap(), sample_animation(&rig, 10, 8).unwrap());
    }

    #[test]
    fn zero_phases_start_at_rest() {
        let mut params = AnimationParams::random(BONE_COUNT, 3);
        params.phases.iter_mut().for_each(|p| *p = 0.0);
        params.root_phase = 0.0;
        let frames = params.frames(100);
        assert_eq!(frames[0], Pose::rest(BONE_COUNT));
    }

    #[test]
    fn bbox_contains_every_frame() {
        let set = AnimationSet::gingerbread(100, 1).unwrap();
        for t in 0..set.len() {
            assert!(set.deformed(t).iter().all(|p| set.bbox.contains(*p)));
        }
        assert!(set.rest_polygon().iter().all(|p| set.bbox.contains(*p)));
    }

    #[test]
    fn gt_occupancy_examples() {
        let (rig, mesh) = build_gingerbread();
        let rest = Pose::rest(BONE_COUNT);
        for p in [[0.0, 0.0], [1.0, 0.4], [0.8, -0.8], [2.0, 2.0], [0.0, -1.0]] {
            assert_eq!(gt_occupancy(&mesh, &rig, &rest, p).unwrap(), point_in_polygon(mesh.vertices(), p));
        }
        let d = [0.3, -0.2];
        let shifted = Pose {
            theta: vec![0.0; BONE_COUNT],
            root_translation: d,
        };
        for p in [[0.3, -0.2], [1.2, 0.2], [0.0, 1.2], [-0.5, -1.5], [0.75, 0.7]] {
            assert_eq!(
                gt_occupancy(&mesh, &rig, &shifted, p).unwrap(),
                point_in_polygon(mesh.vertices(), [p[0] - d[0], p[1] - d[1]])
            );
        }
    }

    #[test]
    fn lowered_arm_overlap_stays_solid() {
        let (rig, mesh) = build_gingerbread();
        let mut theta = vec![0.0; BONE_COUNT];
        theta[RIGHT_ARM] = -FRAC_PI_2;
        let pose = Pose {
            theta,
            root_translation: [0.0, 0.0],
        };
        let deformed = mesh.skin(&rig, &pose).unwrap();
        // The lowered arm folds over the torso side: the region is wound twice.
        let p = [0.4, 0.0];
        assert_eq!(winding_number(&deformed, p), 2);
        assert_eq!(gt_occupancy(&mesh, &rig, &pose, p).unwrap(), 1);
    }
}
