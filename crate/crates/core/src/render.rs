//! ASCII PGM (P2) images of occupancy fields.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::occupancy::{node_position, Aabb2, OccupancyGrid};

pub const MAX_GRAY: u32 = 255;
/// Samples per text line, keeping lines under 70 characters.
const PER_LINE: usize = 17;

/// Grayscale image, row 0 at the top.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// From lattice values in node order (`j * nx + i`, `j = 0` at the bottom),
    /// clamped to [0, 1] and scaled to 0..=255.
    pub fn from_nodes(values: &[f64], nx: usize, ny: usize) -> Result<Self> {
        if values.len() != nx * ny {
            return Err(Error::invalid(format!("expected {} values, got {}", nx * ny, values.len())));
        }
        let mut pixels = Vec::with_capacity(values.len());
        for j in (0..ny).rev() {
            for v in &values[j * nx..(j + 1) * nx] {
                pixels.push(to_gray(*v));
            }
        }
        Ok(Self { width: nx, height: ny, pixels })
    }

    pub fn to_pgm(&self) -> String {
        let mut s = format!("P2\n{} {}\n{}\n", self.width, self.height, MAX_GRAY);
        for row in self.pixels.chunks(self.width.max(1)) {
            for chunk in row.chunks(PER_LINE) {
                let line: Vec<String> = chunk.iter().map(u8::to_string).collect();
                let _ = writeln!(s, "{}", line.join(" "));
            }
        }
        s
    }

    /// Parse a P2 image with maxval 255. `#` comments are allowed between tokens.
    pub fn parse_pgm(text: &str) -> Result<Self> {
        let mut tokens = text
            .lines()
            .flat_map(|l| l.split('#').next().unwrap_or("").split_ascii_whitespace());
        let bad = |m: &str| Error::invalid(format!("pgm: {m}"));
        if tokens.next() != Some("P2") {
            return Err(bad("missing P2 magic"));
        }
        let mut number = |what: &str| -> Result<usize> {
            tokens
                .next()
                .ok_or_else(|| bad(&format!("missing {what}")))?
                .parse()
                .map_err(|_| bad(&format!("bad {what}")))
        };
        let width = number("width")?;
        let height = number("height")?;
        if number("maxval")? != MAX_GRAY as usize {
            return Err(bad("maxval must be 255"));
        }
        let n = width.checked_mul(height).ok_or_else(|| bad("image too large"))?;
        let mut pixels = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let v = number("pixel")?;
            pixels.push(u8::try_from(v).map_err(|_| bad("pixel above maxval"))?);
        }
        if tokens.next().is_some() {
            return Err(bad("trailing data"));
        }
        Ok(Self { width, height, pixels })
    }
}

pub fn to_gray(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * f64::from(MAX_GRAY)).round() as u8
}

/// Evaluate `f` on the `res x res` node lattice over `bbox`, in node order.
pub fn sample_nodes(bbox: &Aabb2, res: usize, mut f: impl FnMut(Point2) -> Result<f64>) -> Result<Vec<f64>> {
    if res < 2 {
        return Err(Error::InvalidResolution(res));
    }
    let mut out = Vec::with_capacity(res * res);
    for j in 0..res {
        for i in 0..res {
            out.push(f(node_position(bbox, [res, res], i, j))?);
        }
    }
    Ok(out)
}

pub fn render_field(bbox: &Aabb2, res: usize, f: impl FnMut(Point2) -> Result<f64>) -> Result<GrayImage> {
    GrayImage::from_nodes(&sample_nodes(bbox, res, f)?, res, res)
}

pub fn render_grid(grid: &OccupancyGrid) -> GrayImage {
    let [nx, ny] = grid.resolution();
    GrayImage::from_nodes(grid.values(), nx, ny).expect("grid values match its resolution")
}
