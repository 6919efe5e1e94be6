use rand::Rng;

use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TextureKind {
    Solid,
    Stripes,
    Checker,
    WhiteNoise,
    BlobNoise,
}

impl TextureKind {
    pub fn name(self) -> &'static str {
        match self {
            TextureKind::Solid => "solid",
            TextureKind::Stripes => "stripes",
            TextureKind::Checker => "checker",
            TextureKind::WhiteNoise => "white-noise",
            TextureKind::BlobNoise => "blob-noise",
        }
    }
}

/// A fully specified texture: a base colour modulated by a pattern in
/// `[-1, 1]` scaled by `contrast`. Deterministic given its fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Texture {
    pub kind: TextureKind,
    pub color: [f64; 3],
    pub contrast: f64,
    /// Stripe period, checker cell or blob size, in pixels.
    pub scale: f64,
    pub angle: f64,
    pub seed: u64,
    /// Global exposure applied after the pattern: `offset + gain · value`.
    pub gain: f64,
    pub offset: f64,
}

impl Texture {
    pub fn solid(color: [f64; 3]) -> Self {
        Texture {
            kind: TextureKind::Solid,
            color,
            contrast: 0.0,
            scale: 1.0,
            angle: 0.0,
            seed: 0,
            gain: 1.0,
            offset: 0.0,
        }
    }

    /// Pattern values in `[-1, 1]`, row-major `size × size`.
    fn pattern(&self, size: usize) -> Vec<f64> {
        let (sin, cos) = self.angle.sin_cos();
        let n = size * size;
        match self.kind {
            TextureKind::Solid => vec![0.0; n],
            TextureKind::Stripes => (0..n)
                .map(|i| {
                    let (x, y) = ((i % size) as f64, (i / size) as f64);
                    let t = (x * cos + y * sin) / self.scale;
                    if t.rem_euclid(1.0) < 0.5 {
                        1.0
                    } else {
                        -1.0
                    }
                })
                .collect(),
            TextureKind::Checker => (0..n)
                .map(|i| {
                    let (x, y) = ((i % size) as f64, (i / size) as f64);
                    let (u, v) = (x * cos + y * sin, -x * sin + y * cos);
                    let k = (u / self.scale).floor() as i64 + (v / self.scale).floor() as i64;
                    if k.rem_euclid(2) == 0 {
                        1.0
                    } else {
                        -1.0
                    }
                })
                .collect(),
            TextureKind::WhiteNoise => {
                let mut r = rng::stream(self.seed, "white-noise", &[]);
                (0..n).map(|_| r.gen_range(-1.0..=1.0)).collect()
            }
            TextureKind::BlobNoise => blob_noise(size, self.scale, self.seed),
        }
    }

    /// Renders a 3-channel `size × size` image, channel-major, clamped to
    /// `[0, 1]`.
    pub fn render(&self, size: usize) -> Vec<f64> {
        let p = self.pattern(size);
        let mut out = Vec::with_capacity(3 * size * size);
        for c in 0..3 {
            out.extend(p.iter().map(|&m| {
                let v = (self.color[c] + 0.5 * self.contrast * m).clamp(0.0, 1.0);
                (self.offset + self.gain * v).clamp(0.0, 1.0)
            }));
        }
        out
    }
}

/// Smooth value noise: a coarse random lattice with cell `scale`,
/// bilinearly interpolated and rescaled to span `[-1, 1]`.
fn blob_noise(size: usize, scale: f64, seed: u64) -> Vec<f64> {
    let cells = (size as f64 / scale).ceil() as usize + 2;
    let mut r = rng::stream(seed, "blob-noise", &[]);
    let lattice: Vec<f64> = (0..cells * cells).map(|_| r.gen_range(-1.0..=1.0)).collect();
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 / scale, y as f64 / scale);
            let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
            let (tx, ty) = (smooth(fx - ix as f64), smooth(fy - iy as f64));
            let at = |i: usize, j: usize| lattice[j * cells + i];
            let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
            let bottom = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    let (lo, hi) = out.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if hi - lo > 1e-12 {
        for v in &mut out {
            *v = 2.0 * (*v - lo) / (hi - lo) - 1.0;
        }
    }
    out
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

pub fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u8 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// A rendering style: which pattern generator is used and with what
/// parameter ranges, for both object and background.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureDomain {
    pub id: usize,
    pub kind: TextureKind,
    pub contrast: (f64, f64),
    pub scale: (f64, f64),
    /// Hue of the muted background tint.
    pub background_hue: f64,
    /// Brightness range of the background.
    pub background_value: (f64, f64),
    pub gain: f64,
    pub offset: f64,
}

impl TextureDomain {
    /// The built-in domains, one per generator kind. Each has its own
    /// pattern contrast, background tint and brightness, and exposure, so
    /// domains differ in first- and second-order colour statistics.
    pub fn catalog() -> Vec<TextureDomain> {
        use TextureKind::*;
        #[rustfmt::skip]
        let spec = [
            // kind, contrast, scale, bg hue, bg value, gain, offset
            (Solid, (0.0, 0.0), (1.0, 1.0), 0.62, (0.08, 0.2), 1.0, 0.0),
            (Stripes, (0.5, 0.7), (5.0, 8.0), 0.12, (0.85, 0.97), 0.45, 0.5),
            (Checker, (0.3, 0.45), (4.0, 6.0), 0.38, (0.3, 0.42), 0.35, 0.02),
            (WhiteNoise, (0.6, 0.8), (1.0, 1.0), 0.85, (0.62, 0.74), 1.0, 0.0),
            (BlobNoise, (0.9, 1.1), (7.0, 11.0), 0.5, (0.48, 0.58), 0.7, 0.15),
        ];
        spec.iter()
            .enumerate()
            .map(
                |(id, &(kind, contrast, scale, background_hue, background_value, gain, offset))| TextureDomain {
                    id,
                    kind,
                    contrast,
                    scale,
                    background_hue,
                    background_value,
                    gain,
                    offset,
                },
            )
            .collect()
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// A texture of this domain's kind with the given base colour.
    pub fn texture<R: Rng>(&self, color: [f64; 3], rng: &mut R) -> Texture {
        Texture {
            kind: self.kind,
            color,
            contrast: sample(rng, self.contrast),
            scale: sample(rng, self.scale),
            angle: rng.gen_range(0.0..std::f64::consts::PI),
            seed: rng.gen(),
            gain: self.gain,
            offset: self.offset,
        }
    }

    pub fn background<R: Rng>(&self, rng: &mut R) -> Texture {
        let hue = self.background_hue + rng.gen_range(-0.05..=0.05);
        let color = hsv(hue, rng.gen_range(0.35..=0.45), sample(rng, self.background_value));
        self.texture(color, rng)
    }
}

fn sample<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}
