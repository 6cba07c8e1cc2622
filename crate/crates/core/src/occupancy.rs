//! Point-in-polygon occupancy and the baked rest-pose occupancy grid.

use crate::error::{Error, Result};
use crate::geometry::Point2;

/// Axis-aligned box in the plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb2 {
    pub min: Point2,
    pub max: Point2,
}

impl Aabb2 {
    pub fn new(min: Point2, max: Point2) -> Result<Self> {
        let extent = [max[0] - min[0], max[1] - min[1]];
        if !(min.iter().chain(&max).chain(&extent).all(|v| v.is_finite()) && extent[0] > 0.0 && extent[1] > 0.0) {
            return Err(Error::invalid(format!("degenerate box {min:?}..{max:?}")));
        }
        Ok(Self { min, max })
    }

    /// Smallest box containing all points. `None` when empty.
    pub fn around<'a>(points: impl IntoIterator<Item = &'a Point2>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut b = Self { min: first, max: first };
        for p in it {
            b.min = [b.min[0].min(p[0]), b.min[1].min(p[1])];
            b.max = [b.max[0].max(p[0]), b.max[1].max(p[1])];
        }
        Some(b)
    }

    /// Grow each side by `fraction` of the box extent along that axis.
    pub fn padded(&self, fraction: f64) -> Self {
        let dx = (self.max[0] - self.min[0]) * fraction;
        let dy = (self.max[1] - self.min[1]) * fraction;
        Self {
            min: [self.min[0] - dx, self.min[1] - dy],
            max: [self.max[0] + dx, self.max[1] + dy],
        }
    }

    pub fn expanded_by(&self, margin: f64) -> Self {
        Self {
            min: [self.min[0] - margin, self.min[1] - margin],
            max: [self.max[0] + margin, self.max[1] + margin],
        }
    }

    pub fn contains(&self, p: Point2) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn center(&self) -> Point2 {
        [0.5 * (self.min[0] + self.max[0]), 0.5 * (self.min[1] + self.max[1])]
    }
}

#[inline]
fn is_left(a: Point2, b: Point2, p: Point2) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])
}

/// Signed winding number of a closed polygon around `p`.
///
/// Edges are half-open in y (an upward edge owns its lower endpoint, a
/// downward edge its upper one), so a point on the boundary gets a
/// deterministic answer: left and bottom edges of a counterclockwise shape
/// count as inside, right and top edges as outside.
pub fn winding_number(polygon: &[Point2], p: Point2) -> i32 {
    let n = polygon.len();
    let mut wn = 0;
    for i in 0..n {
        let a = polygon[i];
        let b = polygon[(i + 1) % n];
        if a[1] <= p[1] {
            if b[1] > p[1] && is_left(a, b, p) > 0.0 {
                wn += 1;
            }
        } else if b[1] <= p[1] && is_left(a, b, p) < 0.0 {
            wn -= 1;
        }
    }
    wn
}

/// Nonzero-winding occupancy: 1 inside, 0 outside.
pub fn point_in_polygon(polygon: &[Point2], p: Point2) -> u8 {
    u8::from(winding_number(polygon, p) != 0)
}

/// Shoelace area, positive for counterclockwise polygons.
pub fn signed_area(polygon: &[Point2]) -> f64 {
    let n = polygon.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = polygon[i];
        let b = polygon[(i + 1) % n];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * acc
}

fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let d1 = is_left(c, d, a);
    let d2 = is_left(c, d, b);
    let d3 = is_left(a, b, c);
    let d4 = is_left(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |p: Point2, q: Point2, r: Point2, side: f64| {
        side == 0.0
            && r[0] >= p[0].min(q[0])
            && r[0] <= p[0].max(q[0])
            && r[1] >= p[1].min(q[1])
            && r[1] <= p[1].max(q[1])
    };
    on(c, d, a, d1) || on(c, d, b, d2) || on(a, b, c, d3) || on(a, b, d, d4)
}

/// No two non-adjacent edges touch and no vertex repeats.
pub fn is_simple_polygon(polygon: &[Point2]) -> bool {
    let n = polygon.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (polygon[i], polygon[(i + 1) % n]);
        if a == b {
            return false;
        }
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(a, b, polygon[j], polygon[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// Occupancy sampled on a regular node lattice spanning a box inclusively.
///
/// Node `(i, j)` sits at `min + (i * dx, j * dy)` and is stored at flat index
/// `j * nx + i` (rows of constant y, bottom row first).
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    bbox: Aabb2,
    resolution: [usize; 2],
    values: Vec<f64>,
    cell: [f64; 2],
}

/// Value and planar gradient of a bilinear grid lookup.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSample {
    pub value: f64,
    pub gradient: [f64; 2],
}

impl OccupancyGrid {
    pub fn new(bbox: Aabb2, resolution: [usize; 2], values: Vec<f64>) -> Result<Self> {
        let bbox = Aabb2::new(bbox.min, bbox.max)?;
        for &r in &resolution {
            if r < 2 {
                return Err(Error::InvalidResolution(r));
            }
        }
        let expected = resolution[0]
            .checked_mul(resolution[1])
            .ok_or_else(|| Error::invalid("grid resolution overflows"))?;
        if values.len() != expected {
            return Err(Error::invalid(format!("grid has {} values, expected {expected}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("grid value {v} outside [0, 1]")));
        }
        let cell = [
            bbox.width() / (resolution[0] - 1) as f64,
            bbox.height() / (resolution[1] - 1) as f64,
        ];
        Ok(Self {
            bbox,
            resolution,
            values,
            cell,
        })
    }

    /// Rasterize polygon occupancy at every node.
    pub fn bake(polygon: &[Point2], bbox: Aabb2, resolution: [usize; 2]) -> Result<Self> {
        for &r in &resolution {
            if r < 2 {
                return Err(Error::InvalidResolution(r));
            }
        }
        let [nx, ny] = resolution;
        let mut values = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let p = node_position(&bbox, resolution, i, j);
                values.push(f64::from(point_in_polygon(polygon, p)));
            }
        }
        Self::new(bbox, resolution, values)
    }

    pub fn bbox(&self) -> Aabb2 {
        self.bbox
    }

    pub fn resolution(&self) -> [usize; 2] {
        self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell_size(&self) -> [f64; 2] {
        self.cell
    }

    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.resolution[0] + i]
    }

    pub fn node_position(&self, i: usize, j: usize) -> Point2 {
        node_position(&self.bbox, self.resolution, i, j)
    }

    /// Lower-left node of the cell containing `p` and the fractional offset
    /// within it, or `None` outside the box.
    pub fn locate(&self, p: Point2) -> Option<([usize; 2], [f64; 2])> {
        if !self.bbox.contains(p) {
            return None;
        }
        let mut idx = [0; 2];
        let mut frac = [0.0; 2];
        for a in 0..2 {
            let mut f = (p[a] - self.bbox.min[a]) / self.cell[a];
            // Snap onto nodes so node queries return stored values exactly.
            if (f - f.round()).abs() < 1e-9 {
                f = f.round();
            }
            let i = (f.floor() as usize).min(self.resolution[a] - 2);
            idx[a] = i;
            frac[a] = f - i as f64;
        }
        Some((idx, frac))
    }

    /// Bilinear lookup; 0 outside the box.
    pub fn query(&self, p: Point2) -> f64 {
        self.sample(p).value
    }

    /// Bilinear lookup with its gradient in `p` (zero outside the box).
    pub fn sample(&self, p: Point2) -> GridSample {
        let Some(([i, j], [tx, ty])) = self.locate(p) else {
            return GridSample {
                value: 0.0,
                gradient: [0.0, 0.0],
            };
        };
        let v00 = self.node(i, j);
        let v10 = self.node(i + 1, j);
        let v01 = self.node(i, j + 1);
        let v11 = self.node(i + 1, j + 1);
        let bottom = v00 + tx * (v10 - v00);
        let top = v01 + tx * (v11 - v01);
        let value = (bottom + ty * (top - bottom)).clamp(0.0, 1.0);
        let dx = ((1.0 - ty) * (v10 - v00) + ty * (v11 - v01)) / self.cell[0];
        let dy = (top - bottom) / self.cell[1];
        GridSample {
            value,
            gradient: [dx, dy],
        }
    }
}

pub fn node_position(bbox: &Aabb2, resolution: [usize; 2], i: usize, j: usize) -> Point2 {
    // Hit the far edge exactly rather than accumulating rounding.
    let along = |a: usize, k: usize| {
        let t = k as f64 / (resolution[a] - 1) as f64;
        if k + 1 == resolution[a] {
            bbox.max[a]
        } else {
            bbox.min[a] + t * (bbox.max[a] - bbox.min[a])
        }
    };
    [along(0, i), along(1, j)]
}
