//! Synthetic marker imagery.
//!
//! Renders the blue spherical marker as a shaded disc with an anti-aliased
//! rim over a plain or value-noise background. The renderer knows the exact
//! marker center, so it doubles as ground truth for the detector.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::frame::Frame;

/// Surface color and lighting of the marker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerStyle {
    pub base_rgb: [f32; 3],
    pub ambient: f32,
    pub diffuse: f32,
    /// Direction towards the light, camera looking down -z.
    pub light_dir: [f64; 3],
}

impl Default for MarkerStyle {
    fn default() -> Self {
        Self {
            base_rgb: [25.0, 75.0, 230.0],
            ambient: 0.55,
            diffuse: 0.45,
            light_dir: [-0.3, -0.3, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    Plain {
        rgb: [u8; 3],
    },
    /// Bilinear value noise blending two colors over cells of `cell` pixels.
    Textured {
        seed: u64,
        a: [u8; 3],
        b: [u8; 3],
        cell: f64,
    },
}

impl Background {
    pub const fn plain(rgb: [u8; 3]) -> Self {
        Self::Plain { rgb }
    }

    /// Color at scene position `(x, y)`.
    fn sample(&self, x: f64, y: f64) -> [f32; 3] {
        match *self {
            Background::Plain { rgb } => rgb.map(f32::from),
            Background::Textured { seed, a, b, cell } => {
                let t = value_noise(seed, x / cell, y / cell) as f32;
                [0, 1, 2].map(|i| f32::from(a[i]) * (1.0 - t) + f32::from(b[i]) * t)
            }
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(
        seed ^ splitmix((ix as u64).wrapping_mul(0x1F1F_1F1F) ^ (iy as u64).rotate_left(32)),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (tx, ty) = (smooth(x - fx), smooth(y - fy));
    let top = lattice(seed, ix, iy) * (1.0 - tx) + lattice(seed, ix + 1, iy) * tx;
    let bottom = lattice(seed, ix, iy + 1) * (1.0 - tx) + lattice(seed, ix + 1, iy + 1) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Marker disc in scene coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerDisc {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

/// Everything needed to render one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderRequest<'a> {
    pub width: u32,
    pub height: u32,
    /// Scene position of the top-left corner of pixel (0, 0).
    pub origin: (f64, f64),
    pub marker: Option<MarkerDisc>,
    pub background: &'a Background,
    pub style: &'a MarkerStyle,
    pub illumination_gain: f32,
    /// Standard deviation of additive Gaussian noise at unit gain, in 8-bit levels.
    pub noise_sigma: f32,
    pub noise_seed: u64,
    pub timestamp_ms: u64,
}

pub fn render(req: &RenderRequest<'_>) -> Frame {
    let (w, h) = (req.width as usize, req.height as usize);
    let gain = req.illumination_gain;
    let mut buf = vec![0f32; w * h * 3];
    for y in 0..h {
        let sy = req.origin.1 + y as f64 + 0.5;
        for x in 0..w {
            let sx = req.origin.0 + x as f64 + 0.5;
            let c = req.background.sample(sx, sy);
            let i = (y * w + x) * 3;
            for k in 0..3 {
                buf[i + k] = c[k] * gain;
            }
        }
    }
    if let Some(m) = req.marker {
        shade_disc(
            &mut buf, req.width, req.height, req.origin, m, req.style, gain,
        );
    }

    // Sensor noise grows with the square root of the illumination level.
    let sigma = f64::from(req.noise_sigma * gain.max(0.0).sqrt());
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(req.noise_seed);
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        for v in buf.iter_mut() {
            *v += normal.sample(&mut rng) as f32;
        }
    }

    let pixels = buf
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    Frame::new(req.width, req.height, pixels, req.timestamp_ms)
        .expect("buffer sized from dimensions")
}

fn shade_disc(
    buf: &mut [f32],
    width: u32,
    height: u32,
    origin: (f64, f64),
    m: MarkerDisc,
    style: &MarkerStyle,
    gain: f32,
) {
    let [lx, ly, lz] = style.light_dir;
    let norm = (lx * lx + ly * ly + lz * lz).sqrt();
    let light = [lx / norm, ly / norm, lz / norm];
    // Pixel range touched by the disc, in image coordinates.
    let reach = m.radius + 1.0;
    let x0 = ((m.cx - reach - origin.0).floor().max(0.0)) as usize;
    let y0 = ((m.cy - reach - origin.1).floor().max(0.0)) as usize;
    let x1 = ((m.cx + reach - origin.0).ceil().min(f64::from(width))).max(0.0) as usize;
    let y1 = ((m.cy + reach - origin.1).ceil().min(f64::from(height))).max(0.0) as usize;
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = origin.0 + x as f64 + 0.5 - m.cx;
            let dy = origin.1 + y as f64 + 0.5 - m.cy;
            let d = dx.hypot(dy);
            let coverage = (m.radius + 0.5 - d).clamp(0.0, 1.0) as f32;
            if coverage == 0.0 {
                continue;
            }
            let (nx, ny) = (
                (dx / m.radius).clamp(-1.0, 1.0),
                (dy / m.radius).clamp(-1.0, 1.0),
            );
            let nz = (1.0 - nx * nx - ny * ny).max(0.0).sqrt();
            let lambert = (nx * light[0] + ny * light[1] + nz * light[2]).max(0.0) as f32;
            let intensity = (style.ambient + style.diffuse * lambert) * gain;
            let i = (y * width as usize + x) * 3;
            for k in 0..3 {
                let marker = style.base_rgb[k] * intensity;
                buf[i + k] = buf[i + k] * (1.0 - coverage) + marker * coverage;
            }
        }
    }
}

/// Noise-free frame at unit gain with the scene origin at the image corner.
pub fn render_marker_frame(
    width: u32,
    height: u32,
    marker: Option<(f64, f64, f64)>,
    background: &Background,
    style: &MarkerStyle,
) -> Frame {
    render(&RenderRequest {
        width,
        height,
        origin: (0.0, 0.0),
        marker: marker.map(|(cx, cy, radius)| MarkerDisc { cx, cy, radius }),
        background,
        style,
        illumination_gain: 1.0,
        noise_sigma: 0.0,
        noise_seed: 0,
        timestamp_ms: 0,
    })
}

/// Paints an additional marker into an existing frame at unit gain.
pub fn draw_marker(frame: &mut Frame, cx: f64, cy: f64, radius: f64, style: &MarkerStyle) {
    let (w, h) = (frame.width(), frame.height());
    let mut buf: Vec<f32> = frame.pixels().iter().map(|&v| f32::from(v)).collect();
    shade_disc(
        &mut buf,
        w,
        h,
        (0.0, 0.0),
        MarkerDisc { cx, cy, radius },
        style,
        1.0,
    );
    for (dst, v) in frame.pixels_mut().iter_mut().zip(buf) {
        *dst = v.round().clamp(0.0, 255.0) as u8;
    }
}
