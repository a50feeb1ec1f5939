//! Reference color-blob detector.
//!
//! Pipeline: per-pixel HSV threshold, 4-connected labelling, area and
//! circularity filtering, then the centroid of the largest surviving
//! component. Pixel `(i, j)` covers `[i, i+1) x [j, j+1)` so its center sits at
//! `(i + 0.5, j + 0.5)`.

use std::collections::VecDeque;
use std::f64::consts::PI;

use super::hsv::rgb_to_hsv;
use super::{BBox, BlobParams, Detection};
use crate::frame::Frame;
use crate::geometry::PixelPoint;

/// Statistics of one connected component of the threshold mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub area: usize,
    pub centroid: PixelPoint,
    pub bbox: BBox,
    /// Number of pixel edges separating the component from the background.
    pub crack_length: usize,
}

impl Component {
    /// Perimeter estimate: crack length scaled by pi/4, which is unbiased for
    /// shapes with isotropic boundary orientation (a digitized disc of
    /// radius r has a crack length close to 8r).
    pub fn perimeter(&self) -> f64 {
        self.crack_length as f64 * PI / 4.0
    }

    /// `4 pi area / perimeter^2`; 1 for an ideal disc.
    pub fn circularity(&self) -> f64 {
        let p = self.perimeter();
        if p == 0.0 {
            return 0.0;
        }
        4.0 * PI * self.area as f64 / (p * p)
    }

    /// Fraction of the bounding box covered by the component.
    pub fn fill_ratio(&self) -> f64 {
        self.area as f64 / (f64::from(self.bbox.w) * f64::from(self.bbox.h))
    }
}

pub fn threshold_mask(frame: &Frame, params: &BlobParams) -> Vec<bool> {
    frame
        .pixels()
        .chunks_exact(3)
        .map(|px| {
            let hsv = rgb_to_hsv([px[0], px[1], px[2]]);
            params.hue.contains(hsv.hue)
                && hsv.saturation >= params.saturation_min
                && hsv.value >= params.value_min
        })
        .collect()
}

/// Labels 4-connected components of `mask`, in raster order of their first pixel.
pub fn connected_components(mask: &[bool], width: u32, height: u32) -> Vec<Component> {
    let (w, h) = (width as usize, height as usize);
    debug_assert_eq!(mask.len(), w * h);
    let mut visited = vec![false; mask.len()];
    let mut queue = VecDeque::new();
    let mut components = Vec::new();

    for start in 0..mask.len() {
        if !mask[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        let (mut area, mut sx, mut sy, mut crack) = (0usize, 0f64, 0f64, 0usize);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);

        while let Some(idx) = queue.pop_front() {
            let (x, y) = (idx % w, idx / w);
            area += 1;
            sx += x as f64 + 0.5;
            sy += y as f64 + 0.5;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);

            let neighbours = [
                (x > 0).then(|| idx - 1),
                (x + 1 < w).then(|| idx + 1),
                (y > 0).then(|| idx - w),
                (y + 1 < h).then(|| idx + w),
            ];
            for n in neighbours {
                match n {
                    Some(n) if mask[n] => {
                        if !visited[n] {
                            visited[n] = true;
                            queue.push_back(n);
                        }
                    }
                    _ => crack += 1,
                }
            }
        }

        components.push(Component {
            area,
            centroid: PixelPoint::new(sx / area as f64, sy / area as f64),
            bbox: BBox {
                x: x0 as u32,
                y: y0 as u32,
                w: (x1 - x0 + 1) as u32,
                h: (y1 - y0 + 1) as u32,
            },
            crack_length: crack,
        });
    }
    components
}

pub fn reference_blob_detect(frame: &Frame, params: &BlobParams) -> Option<Detection> {
    let mask = threshold_mask(frame, params);
    let components = connected_components(&mask, frame.width(), frame.height());
    components
        .into_iter()
        .filter(|c| c.area >= params.min_area && c.circularity() >= params.min_circularity)
        // max_by_key keeps the last maximum; reverse so the first in raster order wins ties.
        .rev()
        .max_by_key(|c| c.area)
        .map(|c| Detection {
            center_x: c.centroid.x,
            center_y: c.centroid.y,
            confidence: c.fill_ratio().clamp(0.0, 1.0),
            bbox: c.bbox,
        })
}
