use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};

/// Rasterisable object classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
    Cross,
    Star,
    Ring,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 6] = [
        ShapeKind::Circle,
        ShapeKind::Square,
        ShapeKind::Triangle,
        ShapeKind::Cross,
        ShapeKind::Star,
        ShapeKind::Ring,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Cross => "cross",
            ShapeKind::Star => "star",
            ShapeKind::Ring => "ring",
        }
    }

    /// Area of the unit shape (circumradius 1).
    fn unit_area(self) -> f64 {
        match self {
            ShapeKind::Circle => PI,
            ShapeKind::Square => 2.0,
            ShapeKind::Triangle => 3.0 * 3f64.sqrt() / 4.0,
            ShapeKind::Cross => 4.0 * 2.0 * ARM - 4.0 * ARM * ARM,
            ShapeKind::Star => 5.0 * STAR_INNER * (2.0 * PI / 10.0).sin(),
            ShapeKind::Ring => PI * (1.0 - RING_INNER * RING_INNER),
        }
    }

    /// Point membership for the unit shape in its own frame (y points down).
    fn contains(self, u: f64, v: f64) -> bool {
        match self {
            ShapeKind::Circle => u * u + v * v <= 1.0,
            ShapeKind::Square => u.abs().max(v.abs()) <= FRAC_1_SQRT_2,
            ShapeKind::Triangle => {
                // vertices at angles -90°, 30°, 150° on the unit circle
                let verts = [
                    (0.0, -1.0),
                    (0.866_025_403_784_438_6, 0.5),
                    (-0.866_025_403_784_438_6, 0.5),
                ];
                in_convex(&verts, u, v)
            }
            ShapeKind::Cross => (u.abs() <= ARM && v.abs() <= 1.0) || (v.abs() <= ARM && u.abs() <= 1.0),
            ShapeKind::Star => in_star(u, v),
            ShapeKind::Ring => {
                let r2 = u * u + v * v;
                (RING_INNER * RING_INNER..=1.0).contains(&r2)
            }
        }
    }
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
/// Half-width of the cross arms.
const ARM: f64 = 0.3;
const STAR_INNER: f64 = 0.5;
const RING_INNER: f64 = 0.55;

fn in_convex(verts: &[(f64, f64)], u: f64, v: f64) -> bool {
    let n = verts.len();
    (0..n).all(|i| {
        let (ax, ay) = verts[i];
        let (bx, by) = verts[(i + 1) % n];
        (bx - ax) * (v - ay) - (by - ay) * (u - ax) >= 0.0
    })
}

/// Five-pointed star: a ray-casting point-in-polygon test over its ten
/// alternating outer and inner vertices.
fn in_star(u: f64, v: f64) -> bool {
    let verts: Vec<(f64, f64)> = (0..10)
        .map(|k| {
            let r = if k % 2 == 0 { 1.0 } else { STAR_INNER };
            let a = -PI / 2.0 + k as f64 * PI / 5.0;
            (r * a.cos(), r * a.sin())
        })
        .collect();
    let mut inside = false;
    let mut j = verts.len() - 1;
    for i in 0..verts.len() {
        let (xi, yi) = verts[i];
        let (xj, yj) = verts[j];
        if (yi > v) != (yj > v) && u < (xj - xi) * (v - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// A shape class with its placement jitter.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeClass {
    pub id: usize,
    pub kind: ShapeKind,
    /// Range of the nominal area as a fraction of the image.
    pub area: (f64, f64),
    /// Max centre offset as a fraction of the image side.
    pub position_jitter: f64,
    /// Max rotation, radians, either way.
    pub rotation_jitter: f64,
}

/// Bounds on the rasterised mask area (fraction of the image).
pub const MIN_AREA: f64 = 0.2;
pub const MAX_AREA: f64 = 0.6;

impl ShapeClass {
    pub fn catalog(classes: usize) -> Result<Vec<ShapeClass>> {
        if classes == 0 || classes > ShapeKind::ALL.len() {
            return Err(Error::config(format!(
                "class count must be in 1..={}, got {classes}",
                ShapeKind::ALL.len()
            )));
        }
        Ok(ShapeKind::ALL[..classes]
            .iter()
            .enumerate()
            .map(|(id, &kind)| ShapeClass {
                id,
                kind,
                area: (0.26, 0.42),
                position_jitter: 0.08,
                rotation_jitter: 20f64.to_radians(),
            })
            .collect())
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Draws a placement and rasterises it on a `size × size` grid, retrying
    /// until the mask area lies in `[MIN_AREA, MAX_AREA]`.
    pub fn rasterize<R: Rng>(&self, size: usize, rng: &mut R) -> Vec<bool> {
        loop {
            let frac = rng.gen_range(self.area.0..=self.area.1);
            let radius = (frac * (size * size) as f64 / self.kind.unit_area()).sqrt();
            let s = size as f64;
            let cx = s / 2.0 + rng.gen_range(-1.0..=1.0) * self.position_jitter * s;
            let cy = s / 2.0 + rng.gen_range(-1.0..=1.0) * self.position_jitter * s;
            let theta = rng.gen_range(-1.0..=1.0) * self.rotation_jitter;
            let (sin, cos) = theta.sin_cos();
            let mut mask = Vec::with_capacity(size * size);
            for y in 0..size {
                for x in 0..size {
                    let (dx, dy) = ((x as f64 + 0.5 - cx) / radius, (y as f64 + 0.5 - cy) / radius);
                    let (u, v) = (cos * dx + sin * dy, -sin * dx + cos * dy);
                    mask.push(self.kind.contains(u, v));
                }
            }
            let area = mask.iter().filter(|&&m| m).count() as f64 / (size * size) as f64;
            if (MIN_AREA..=MAX_AREA).contains(&area) {
                return mask;
            }
        }
    }
}
