//! Hexcone RGB to HSV conversion.

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv {
    pub hue: f32,
    pub saturation: f32,
    pub value: f32,
}

pub fn rgb_to_hsv([r, g, b]: [u8; 3]) -> Hsv {
    let (rf, gf, bf) = (f32::from(r), f32::from(g), f32::from(b));
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = f32::from(max - min);
    let value = f32::from(max) / 255.0;
    if max == 0 {
        return Hsv {
            hue: 0.0,
            saturation: 0.0,
            value,
        };
    }
    let saturation = delta / f32::from(max);
    if delta == 0.0 {
        return Hsv {
            hue: 0.0,
            saturation,
            value,
        };
    }
    let sector = if max == r {
        ((gf - bf) / delta).rem_euclid(6.0)
    } else if max == g {
        (bf - rf) / delta + 2.0
    } else {
        (rf - gf) / delta + 4.0
    };
    let mut hue = 60.0 * sector;
    if hue >= 360.0 {
        hue -= 360.0;
    }
    Hsv {
        hue,
        saturation,
        value,
    }
}
