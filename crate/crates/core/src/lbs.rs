//! Classical linear blend skinning of polygon vertices.

use crate::error::{Error, Result};
use crate::geometry::{homogeneous, skinning_transforms, HomogeneousTransform, Point2, Pose, Rig};
use crate::occupancy::{is_simple_polygon, signed_area};

/// Weight rows whose sum is off by less than this are renormalized on load.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

/// A closed counterclockwise polygon with one skinning weight row per vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinnedMesh {
    vertices: Vec<Point2>,
    weights: Vec<Vec<f64>>,
}

impl SkinnedMesh {
    pub fn new(vertices: Vec<Point2>, mut weights: Vec<Vec<f64>>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::invalid("mesh needs at least 3 vertices"));
        }
        if weights.len() != vertices.len() {
            return Err(Error::invalid(format!(
                "{} vertices but {} weight rows",
                vertices.len(),
                weights.len()
            )));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite vertex coordinate"));
        }
        let width = weights[0].len();
        if width == 0 {
            return Err(Error::invalid("empty weight rows"));
        }
        for (n, row) in weights.iter_mut().enumerate() {
            normalize_weight_row(row).map_err(|e| match e {
                Error::InvalidInput(msg) => Error::invalid(format!("weight row {n}: {msg}")),
                e => e,
            })?;
            if row.len() != width {
                return Err(Error::invalid(format!("weight row {n} has width {}, expected {width}", row.len())));
            }
        }
        if !is_simple_polygon(&vertices) {
            return Err(Error::invalid("mesh polygon self-intersects"));
        }
        if signed_area(&vertices) <= 0.0 {
            return Err(Error::invalid("mesh polygon is not counterclockwise"));
        }
        Ok(Self { vertices, weights })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn bone_count(&self) -> usize {
        self.weights[0].len()
    }

    /// Deform every vertex with the pre-blended matrix `[w_n B(theta)] v_n`.
    pub fn skin(&self, rig: &Rig, pose: &Pose) -> Result<Vec<Point2>> {
        let transforms = self.transforms_for(rig, pose)?;
        Ok(self
            .vertices
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| blend_matrices(w, &transforms).apply_point(*v))
            .collect())
    }

    /// Deform every vertex as the weighted sum of per-bone images `sum_b w_b (B_b v_n)`.
    pub fn skin_summed(&self, rig: &Rig, pose: &Pose) -> Result<Vec<Point2>> {
        let transforms = self.transforms_for(rig, pose)?;
        Ok(self
            .vertices
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| {
                let mut out = [0.0; 2];
                for (wb, t) in w.iter().zip(&transforms) {
                    let p = t.apply(homogeneous(*v));
                    out[0] += wb * p[0];
                    out[1] += wb * p[1];
                }
                out
            })
            .collect())
    }

    fn transforms_for(&self, rig: &Rig, pose: &Pose) -> Result<Vec<HomogeneousTransform>> {
        if rig.bone_count() != self.bone_count() {
            return Err(Error::invalid(format!(
                "mesh weights have {} bones, rig has {}",
                self.bone_count(),
                rig.bone_count()
            )));
        }
        skinning_transforms(&rig.rest_frames(), &rig.pose(pose)?)
    }
}

/// Check a weight row lies on the simplex, renormalizing small drift in place.
pub fn normalize_weight_row(row: &mut [f64]) -> Result<()> {
    if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() >= WEIGHT_SUM_TOLERANCE {
        return Err(Error::invalid(format!("weights sum to {sum}, not 1")));
    }
    // Rows already exact up to rounding are left alone so files round-trip.
    if (sum - 1.0).abs() > 1e-12 {
        row.iter_mut().for_each(|w| *w /= sum);
    }
    Ok(())
}

/// Convex combination `sum_b w_b F_b` of 4x4 matrices.
pub fn blend_matrices(weights: &[f64], frames: &[HomogeneousTransform]) -> HomogeneousTransform {
    debug_assert_eq!(weights.len(), frames.len());
    let mut out = HomogeneousTransform::ZERO;
    for (w, f) in weights.iter().zip(frames) {
        out.add_scaled(*w, f);
    }
    out
}

/// Skin one homogeneous point: `[sum_b w_b posed_b rest_b^-1] v`.
pub fn skin_vertex(
    v: [f64; 4],
    weights: &[f64],
    rest: &[HomogeneousTransform],
    posed: &[HomogeneousTransform],
) -> Result<[f64; 4]> {
    let transforms = skinning_transforms(rest, posed)?;
    Ok(blend_matrices(weights, &transforms).apply(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Bone;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    type T = HomogeneousTransform;

    #[test]
    fn blend_examples() {
        let frames = [T::translation(1.0, 0.0, 0.0), T::rotation_z(0.3), T::translation(0.0, 2.0, 0.0)];
        assert_eq!(blend_matrices(&[0.0, 1.0, 0.0], &frames), frames[1]);

        let t = T::rotation_z(0.7) * T::translation(0.25, -1.0, 0.0);
        let b = blend_matrices(&[0.2, 0.5, 0.3], &[t, t, t]);
        assert!(b.max_abs_diff(&t) < 1e-15);

        let b = blend_matrices(&[0.5, 0.5], &[T::IDENTITY, T::translation(2.0, 0.0, 0.0)]);
        assert_eq!(b, T::translation(1.0, 0.0, 0.0));
    }

    #[test]
    fn skin_vertex_examples() {
        let rest = [T::translation(0.3, 0.1, 0.0), T::rotation_z(1.0)];
        let p = [0.4, -0.2, 0.0, 1.0];
        let out = skin_vertex(p, &[0.4, 0.6], &rest, &rest).unwrap();
        assert!((out[0] - p[0]).abs() < 1e-15 && (out[1] - p[1]).abs() < 1e-15);

        let out = skin_vertex([0.0, 0.0, 0.0, 1.0], &[1.0], &[T::IDENTITY], &[T::translation(1.0, 0.0, 0.0)]).unwrap();
        assert_eq!(out, [1.0, 0.0, 0.0, 1.0]);

        // Encode: Translate(-1,0,0) * (1,0,0,1) = (0,0,0,1); decode: Rz(pi/2) * (0,0,0,1) = (0,0,0,1).
        let rest = [T::translation(1.0, 0.0, 0.0)];
        let posed = [T::rotation_z(FRAC_PI_2)];
        let encoded = rest[0].inverse().unwrap().apply([1.0, 0.0, 0.0, 1.0]);
        assert_eq!(encoded, [0.0, 0.0, 0.0, 1.0]);
        let out = skin_vertex([1.0, 0.0, 0.0, 1.0], &[1.0], &rest, &posed).unwrap();
        assert!(out.iter().zip([0.0, 0.0, 0.0, 1.0]).all(|(a, b)| (a - b).abs() < 1e-15));

        assert!(matches!(
            skin_vertex([0.0; 4], &[1.0], &[T::ZERO], &[T::IDENTITY]),
            Err(Error::SingularTransform)
        ));
    }

    #[test]
    fn weight_rows_validated() {
        let square = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let rows = |r: Vec<f64>| vec![r; 4];
        let m = SkinnedMesh::new(square.clone(), rows(vec![0.5, 0.5 + 1e-8])).unwrap();
        let s: f64 = m.weights()[0].iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
        assert_ne!(m.weights()[0][1], 0.5 + 1e-8);
        assert!(SkinnedMesh::new(square.clone(), rows(vec![0.5, 0.6])).is_err());
        assert!(SkinnedMesh::new(square.clone(), rows(vec![1.5, -0.5])).is_err());
        assert!(SkinnedMesh::new(square.clone(), vec![vec![1.0]; 3]).is_err());
        let mut clockwise = square.clone();
        clockwise.reverse();
        assert!(SkinnedMesh::new(clockwise, rows(vec![1.0])).is_err());
        let bowtie = vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(SkinnedMesh::new(bowtie, rows(vec![1.0])).is_err());
    }

    fn two_bone_rig() -> Rig {
        Rig::new(vec![
            Bone {
                parent: None,
                rest_frame: T::IDENTITY,
                pivot: [0.0, 0.0],
            },
            Bone {
                parent: Some(0),
                rest_frame: T::translation(1.0, 0.0, 0.0),
                pivot: [1.0, 0.0],
            },
        ])
        .unwrap()
    }

    fn strip() -> SkinnedMesh {
        // A horizontal bar from x=0 to x=3, torso half on bone 0, arm half on bone 1.
        let vertices = vec![[0.0, -0.2], [1.0, -0.2], [3.0, -0.2], [3.0, 0.2], [1.0, 0.2], [0.0, 0.2]];
        let weights = vec![
            vec![1.0, 0.0],
            vec![0.5, 0.5],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            vec![0.5, 0.5],
            vec![1.0, 0.0],
        ];
        SkinnedMesh::new(vertices, weights).unwrap()
    }

    #[test]
    fn rest_and_rigid_examples() {
        let rig = two_bone_rig();
        let mesh = strip();
        assert_eq!(mesh.skin(&rig, &Pose::rest(2)).unwrap(), mesh.vertices());

        let moved = mesh
            .skin(
                &rig,
                &Pose {
                    theta: vec![0.0, 0.0],
                    root_translation: [3.0, 0.0],
                },
            )
            .unwrap();
        for (a, b) in moved.iter().zip(mesh.vertices()) {
            assert!((a[0] - b[0] - 3.0).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn bent_arm_rotates_about_shoulder() {
        let rig = two_bone_rig();
        let mesh = strip();
        let angle = std::f64::consts::FRAC_PI_4;
        let pose = Pose {
            theta: vec![0.0, angle],
            root_translation: [0.0, 0.0],
        };
        let blended = mesh.skin(&rig, &pose).unwrap();
        let summed = mesh.skin_summed(&rig, &pose).unwrap();
        let (s, c) = angle.sin_cos();
        for (n, v) in mesh.vertices().iter().enumerate() {
            let w = &mesh.weights()[n];
            // Rotation about (1, 0) by hand.
            let rot = [1.0 + c * (v[0] - 1.0) - s * v[1], s * (v[0] - 1.0) + c * v[1]];
            let expected = [w[0] * v[0] + w[1] * rot[0], w[0] * v[1] + w[1] * rot[1]];
            assert!((blended[n][0] - expected[0]).abs() < 1e-12);
            assert!((blended[n][1] - expected[1]).abs() < 1e-12);
            assert!((summed[n][0] - expected[0]).abs() < 1e-12);
            assert!((summed[n][1] - expected[1]).abs() < 1e-12);
        }
        assert_eq!(blended[0], mesh.vertices()[0]);
    }

    proptest! {
        #[test]
        fn summed_and_blended_agree(
            theta in prop::array::uniform2(-3.0f64..3.0),
            t in prop::array::uniform2(-1.0f64..1.0),
            raw in prop::collection::vec(0.0f64..1.0, 6),
        ) {
            let rig = two_bone_rig();
            let base = strip();
            let weights = (0..6).map(|n| vec![raw[n], 1.0 - raw[n]]).collect();
            let mesh = SkinnedMesh::new(base.vertices().to_vec(), weights).unwrap();
            let pose = Pose { theta: theta.to_vec(), root_translation: t };
            let a = mesh.skin(&rig, &pose).unwrap();
            let b = mesh.skin_summed(&rig, &pose).unwrap();
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p[0] - q[0]).abs() <= 1e-12 && (p[1] - q[1]).abs() <= 1e-12);
            }
        }
    }
}
