use thiserror::Error;

use crate::geometry::CropRegion;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("pixel buffer holds {actual} bytes, expected {expected} for {width}x{height} RGB")]
    BufferSize {
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },
    #[error("crop {crop:?} does not fit inside a {width}x{height} frame")]
    CropOutside {
        crop: CropRegion,
        width: u32,
        height: u32,
    },
}

/// An RGB image with 8 bits per channel, row-major, plus the capture time in
/// milliseconds since controller start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
    pub timestamp_ms: u64,
}

impl Frame {
    pub fn new(
        width: u32,
        height: u32,
        pixels: Vec<u8>,
        timestamp_ms: u64,
    ) -> Result<Self, FrameError> {
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(FrameError::BufferSize {
                width,
                height,
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
            timestamp_ms,
        })
    }

    /// A frame filled with a single color.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3], timestamp_ms: u64) -> Self {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self {
            width,
            height,
            pixels,
            timestamp_ms,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copies out the crop region as a new frame with the same timestamp.
    pub fn crop(&self, crop: &CropRegion) -> Result<Frame, FrameError> {
        if !crop.fits_within(self.width, self.height) {
            return Err(FrameError::CropOutside {
                crop: *crop,
                width: self.width,
                height: self.height,
            });
        }
        let row_bytes = crop.width as usize * 3;
        let mut pixels = Vec::with_capacity(row_bytes * crop.height as usize);
        for y in crop.start_y..crop.start_y + crop.height {
            let start = (y as usize * self.width as usize + crop.start_x as usize) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + row_bytes]);
        }
        Ok(Frame {
            width: crop.width,
            height: crop.height,
            pixels,
            timestamp_ms: self.timestamp_ms,
        })
    }
}
