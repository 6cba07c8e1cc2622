//! Homogeneous transform algebra, rigs and forward kinematics.
//!
//! Everything is planar: points live in the `z = 0` plane of homogeneous
//! 4-vectors and joint rotations are about the z axis.

use std::ops::Mul;

use crate::error::{Error, Result};

/// A point in the plane.
pub type Point2 = [f64; 2];

/// Determinant magnitude below which a transform is treated as singular.
pub const SINGULAR_DET: f64 = 1e-12;

/// Lift a planar point to homogeneous coordinates (`z = 0`, `w = 1`).
#[inline]
pub fn homogeneous(p: Point2) -> [f64; 4] {
    [p[0], p[1], 0.0, 1.0]
}

/// A 4x4 transform acting on homogeneous column vectors, stored row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomogeneousTransform {
    pub m: [[f64; 4]; 4],
}

impl Default for HomogeneousTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl HomogeneousTransform {
    pub const IDENTITY: Self = Self {
        m: [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ],
    };

    pub const ZERO: Self = Self { m: [[0.0; 4]; 4] };

    pub fn from_rows(m: [[f64; 4]; 4]) -> Self {
        Self { m }
    }

    /// Build from 16 row-major entries.
    pub fn from_row_major(v: &[f64; 16]) -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row.copy_from_slice(&v[4 * i..4 * i + 4]);
        }
        Self { m }
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for i in 0..4 {
            out[4 * i..4 * i + 4].copy_from_slice(&self.m[i]);
        }
        out
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        let mut t = Self::IDENTITY;
        t.m[0][3] = x;
        t.m[1][3] = y;
        t.m[2][3] = z;
        t
    }

    /// Rotation by `angle` radians about the z axis.
    pub fn rotation_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let mut t = Self::IDENTITY;
        t.m[0][0] = c;
        t.m[0][1] = -s;
        t.m[1][0] = s;
        t.m[1][1] = c;
        t
    }

    /// Rotation about the z axis through the planar point `pivot`.
    pub fn rotation_about(pivot: Point2, angle: f64) -> Self {
        Self::translation(pivot[0], pivot[1], 0.0)
            .compose(&Self::rotation_z(angle))
            .compose(&Self::translation(-pivot[0], -pivot[1], 0.0))
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.m[i][0] * other.m[0][j]
                    + self.m[i][1] * other.m[1][j]
                    + self.m[i][2] * other.m[2][j]
                    + self.m[i][3] * other.m[3][j];
            }
        }
        Self { m: out }
    }

    pub fn apply(&self, p: [f64; 4]) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (o, row) in out.iter_mut().zip(&self.m) {
            *o = row[0] * p[0] + row[1] * p[1] + row[2] * p[2] + row[3] * p[3];
        }
        out
    }

    /// Apply to a planar point, returning the planar part of the result.
    pub fn apply_point(&self, p: Point2) -> Point2 {
        let r = self.apply(homogeneous(p));
        [r[0], r[1]]
    }

    pub fn transpose(&self) -> Self {
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.m[j][i];
            }
        }
        Self { m: out }
    }

    /// Last row is exactly `[0, 0, 0, 1]`.
    pub fn is_affine(&self) -> bool {
        self.m[3] == [0.0, 0.0, 0.0, 1.0]
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite())
    }

    /// Frobenius inner product `sum_ij a_ij b_ij`.
    pub fn frobenius_dot(&self, other: &Self) -> f64 {
        let mut acc = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                acc += self.m[i][j] * other.m[i][j];
            }
        }
        acc
    }

    /// `self += s * other`, entrywise.
    pub fn add_scaled(&mut self, s: f64, other: &Self) {
        for i in 0..4 {
            for j in 0..4 {
                self.m[i][j] += s * other.m[i][j];
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                d = d.max((self.m[i][j] - other.m[i][j]).abs());
            }
        }
        d
    }

    pub fn determinant(&self) -> f64 {
        let (s, c) = minors_2x2(&self.m);
        s[0] * c[5] - s[1] * c[4] + s[2] * c[3] + s[3] * c[2] - s[4] * c[1] + s[5] * c[0]
    }

    /// Inverse via the adjugate; fails when `|det| < 1e-12`.
    pub fn inverse(&self) -> Result<Self> {
        self.try_inverse().ok_or(Error::SingularTransform)
    }

    /// Inverse via the adjugate, `None` when `|det| < 1e-12`.
    pub fn try_inverse(&self) -> Option<Self> {
        let m = &self.m;
        let ([s0, s1, s2, s3, s4, s5], [c0, c1, c2, c3, c4, c5]) = minors_2x2(m);

        let det = s0 * c5 - s1 * c4 + s2 * c3 + s3 * c2 - s4 * c1 + s5 * c0;
        if !(det.abs() >= SINGULAR_DET) {
            return None;
        }
        let inv_det = 1.0 / det;

        let mut r = [[0.0; 4]; 4];
        r[0][0] = (m[1][1] * c5 - m[1][2] * c4 + m[1][3] * c3) * inv_det;
        r[0][1] = (-m[0][1] * c5 + m[0][2] * c4 - m[0][3] * c3) * inv_det;
        r[0][2] = (m[3][1] * s5 - m[3][2] * s4 + m[3][3] * s3) * inv_det;
        r[0][3] = (-m[2][1] * s5 + m[2][2] * s4 - m[2][3] * s3) * inv_det;

        r[1][0] = (-m[1][0] * c5 + m[1][2] * c2 - m[1][3] * c1) * inv_det;
        r[1][1] = (m[0][0] * c5 - m[0][2] * c2 + m[0][3] * c1) * inv_det;
        r[1][2] = (-m[3][0] * s5 + m[3][2] * s2 - m[3][3] * s1) * inv_det;
        r[1][3] = (m[2][0] * s5 - m[2][2] * s2 + m[2][3] * s1) * inv_det;

        r[2][0] = (m[1][0] * c4 - m[1][1] * c2 + m[1][3] * c0) * inv_det;
        r[2][1] = (-m[0][0] * c4 + m[0][1] * c2 - m[0][3] * c0) * inv_det;
        r[2][2] = (m[3][0] * s4 - m[3][1] * s2 + m[3][3] * s0) * inv_det;
        r[2][3] = (-m[2][0] * s4 + m[2][1] * s2 - m[2][3] * s0) * inv_det;

        r[3][0] = (-m[1][0] * c3 + m[1][1] * c1 - m[1][2] * c0) * inv_det;
        r[3][1] = (m[0][0] * c3 - m[0][1] * c1 + m[0][2] * c0) * inv_det;
        r[3][2] = (-m[3][0] * s3 + m[3][1] * s1 - m[3][2] * s0) * inv_det;
        r[3][3] = (m[2][0] * s3 - m[2][1] * s1 + m[2][2] * s0) * inv_det;

        Some(Self { m: r })
    }
}

/// 2x2 minors of the top two rows (`s`) and bottom two rows (`c`).
fn minors_2x2(m: &[[f64; 4]; 4]) -> ([f64; 6], [f64; 6]) {
    let s = [
        m[0][0] * m[1][1] - m[1][0] * m[0][1],
        m[0][0] * m[1][2] - m[1][0] * m[0][2],
        m[0][0] * m[1][3] - m[1][0] * m[0][3],
        m[0][1] * m[1][2] - m[1][1] * m[0][2],
        m[0][1] * m[1][3] - m[1][1] * m[0][3],
        m[0][2] * m[1][3] - m[1][2] * m[0][3],
    ];
    let c = [
        m[2][0] * m[3][1] - m[3][0] * m[2][1],
        m[2][0] * m[3][2] - m[3][0] * m[2][2],
        m[2][0] * m[3][3] - m[3][0] * m[2][3],
        m[2][1] * m[3][2] - m[3][1] * m[2][2],
        m[2][1] * m[3][3] - m[3][1] * m[2][3],
        m[2][2] * m[3][3] - m[3][2] * m[2][3],
    ];
    (s, c)
}

impl Mul for HomogeneousTransform {
    type Output = Self;

    fn mul(self, rhs: Self) -> Self {
        self.compose(&rhs)
    }
}

impl Mul for &HomogeneousTransform {
    type Output = HomogeneousTransform;

    fn mul(self, rhs: Self) -> HomogeneousTransform {
        self.compose(rhs)
    }
}

/// One bone of a [`Rig`].
#[derive(Clone, Debug, PartialEq)]
pub struct Bone {
    /// `None` for the root.
    pub parent: Option<usize>,
    /// Rest frame in world coordinates.
    pub rest_frame: HomogeneousTransform,
    /// Joint pivot in rest world coordinates.
    pub pivot: Point2,
}

/// A bone hierarchy rooted at bone 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Rig {
    bones: Vec<Bone>,
    /// Parent-before-child evaluation order.
    order: Vec<usize>,
}

impl Rig {
    pub fn new(bones: Vec<Bone>) -> Result<Self> {
        let n = bones.len();
        if n == 0 {
            return Err(Error::invalid("rig has no bones"));
        }
        if bones[0].parent.is_some() {
            return Err(Error::invalid("bone 0 must be the root"));
        }
        for (b, bone) in bones.iter().enumerate().skip(1) {
            match bone.parent {
                None => return Err(Error::invalid(format!("bone {b} has no parent; only bone 0 may be a root"))),
                Some(p) if p >= n || p == b => {
                    return Err(Error::invalid(format!("bone {b} has invalid parent {p}")))
                }
                Some(_) => {}
            }
        }
        for (b, bone) in bones.iter().enumerate() {
            if !bone.rest_frame.is_finite() || !bone.pivot.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid(format!("bone {b} has non-finite data")));
            }
            if bone.rest_frame.try_inverse().is_none() {
                return Err(Error::invalid(format!("bone {b} rest frame is singular")));
            }
        }

        // Breadth-first from the root; anything unreached sits on a cycle.
        let mut children = vec![Vec::new(); n];
        for (b, bone) in bones.iter().enumerate() {
            if let Some(p) = bone.parent {
                children[p].push(b);
            }
        }
        let mut order = Vec::with_capacity(n);
        order.push(0);
        let mut head = 0;
        while head < order.len() {
            let b = order[head];
            head += 1;
            order.extend_from_slice(&children[b]);
        }
        if order.len() != n {
            return Err(Error::invalid("bone hierarchy contains a cycle"));
        }
        Ok(Self { bones, order })
    }

    pub fn bone_count(&self) -> usize {
        self.bones.len()
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn rest_frames(&self) -> Vec<HomogeneousTransform> {
        self.bones.iter().map(|b| b.rest_frame).collect()
    }

    /// Forward kinematics: the posed world frame of every bone.
    ///
    /// Each bone's skinning transform is its parent's skinning transform
    /// followed by a rotation of `theta[b]` about the bone's rest pivot; the
    /// root additionally carries the global translation. The posed frame is
    /// that transform applied to the rest frame, so the zero pose returns the
    /// rest frames exactly.
    pub fn pose(&self, pose: &Pose) -> Result<Vec<HomogeneousTransform>> {
        if pose.theta.len() != self.bones.len() {
            return Err(Error::invalid(format!(
                "pose has {} joint angles, rig has {} bones",
                pose.theta.len(),
                self.bones.len()
            )));
        }
        let mut skinning = vec![HomogeneousTransform::IDENTITY; self.bones.len()];
        for &b in &self.order {
            let bone = &self.bones[b];
            let parent = match bone.parent {
                Some(p) => skinning[p],
                None => HomogeneousTransform::translation(pose.root_translation[0], pose.root_translation[1], 0.0),
            };
            skinning[b] = parent.compose(&HomogeneousTransform::rotation_about(bone.pivot, pose.theta[b]));
        }
        Ok(skinning
            .iter()
            .zip(&self.bones)
            .map(|(g, bone)| g.compose(&bone.rest_frame))
            .collect())
    }
}

/// Per-bone joint angles plus a global root translation.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub theta: Vec<f64>,
    pub root_translation: Point2,
}

impl Pose {
    pub fn rest(bone_count: usize) -> Self {
        Self {
            theta: vec![0.0; bone_count],
            root_translation: [0.0, 0.0],
        }
    }
}

/// `B_b = posed_b * rest_b^-1` for every bone.
pub fn skinning_transforms(
    rest: &[HomogeneousTransform],
    posed: &[HomogeneousTransform],
) -> Result<Vec<HomogeneousTransform>> {
    if rest.len() != posed.len() {
        return Err(Error::invalid("rest and posed frame counts differ"));
    }
    rest.iter()
        .zip(posed)
        .map(|(r, p)| Ok(p.compose(&r.inverse()?)))
        .collect()
}
