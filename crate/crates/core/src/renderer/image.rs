use std::path::Path;

use crate::error::{Error, Result};
use crate::ppm::{self, Depth};

/// Interleaved RGB raster. Rendered images stay in `[0, 1]`; the same type
/// carries image-space gradients, which are unbounded.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let r = ppm::read(path)?;
        let data = match r.channels {
            3 => r.data,
            _ => r.data.iter().flat_map(|&g| [g, g, g]).collect(),
        };
        Ok(Self {
            width: r.width,
            height: r.height,
            data,
        })
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        ppm::write_p6(path, self.width, self.height, &self.data, Depth::Eight)
    }

    /// Places images side by side, top-aligned, padding short ones with black.
    pub fn hstack(images: &[Image]) -> Self {
        let width = images.iter().map(|i| i.width).sum();
        let height = images.iter().map(|i| i.height).max().unwrap_or(0);
        let mut out = Image::zeros(width, height);
        let mut x0 = 0;
        for img in images {
            for y in 0..img.height {
                let src = &img.data[3 * y * img.width..3 * (y + 1) * img.width];
                let dst = 3 * (y * width + x0);
                out.data[dst..dst + src.len()].copy_from_slice(src);
            }
            x0 += img.width;
        }
        out
    }
}

/// Backdrop I_B composited behind the object.
#[derive(Clone, Debug, PartialEq)]
pub enum Background {
    Flat([f64; 3]),
    /// Linear blend from `top` (row 0) to `bottom` (last row).
    Vertical { top: [f64; 3], bottom: [f64; 3] },
    /// A loaded picture, resampled nearest-neighbour to the requested size.
    Picture(Image),
}

impl Default for Background {
    fn default() -> Self {
        Background::Vertical {
            top: [0.55, 0.7, 0.9],
            bottom: [0.35, 0.33, 0.3],
        }
    }
}

impl Background {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = Image::read_ppm(path)?;
        if img.width == 0 || img.height == 0 {
            return Err(Error::Image("empty background image".into()));
        }
        Ok(Background::Picture(img))
    }

    pub fn render(&self, width: usize, height: usize) -> Image {
        match self {
            Background::Flat(c) => Image::from_fn(width, height, |_, _| *c),
            Background::Vertical { top, bottom } => Image::from_fn(width, height, |_, y| {
                let t = if height > 1 { y as f64 / (height - 1) as f64 } else { 0.0 };
                std::array::from_fn(|c| top[c] + t * (bottom[c] - top[c]))
            }),
            Background::Picture(img) => Image::from_fn(width, height, |x, y| {
                img.pixel(x * img.width / width, y * img.height / height)
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertical_gradient_endpoints() {
        let bg = Background::Vertical {
            top: [1.0, 0.0, 0.0],
            bottom: [0.0, 0.0, 1.0],
        };
        let img = bg.render(16, 16);
        assert_eq!(img.pixel(3, 0), [1.0, 0.0, 0.0]);
        assert_eq!(img.pixel(3, 15), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn picture_resamples() {
        let src = Image::from_fn(2, 2, |x, y| [x as f64, y as f64, 0.0]);
        let out = Background::Picture(src).render(4, 4);
        assert_eq!(out.pixel(3, 0), [1.0, 0.0, 0.0]);
        assert_eq!(out.pixel(0, 3), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn hstack_widths() {
        let a = Image::from_fn(2, 2, |_, _| [1.0; 3]);
        let b = Image::from_fn(3, 1, |_, _| [0.5; 3]);
        let s = Image::hstack(&[a, b]);
        assert_eq!(s.dims(), (5, 2));
        assert_eq!(s.pixel(1, 1), [1.0; 3]);
        assert_eq!(s.pixel(4, 0), [0.5; 3]);
        assert_eq!(s.pixel(4, 1), [0.0; 3]);
    }
}
