//! Planar float images and PNG I/O.

use std::path::Path;

use vivat_autograd::{Scalar, Tensor};

use crate::error::{shape, validation, Error, Result};

/// H x W x C image with values nominally in `[0, 1]`, stored channel-planar.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self { width, height, channels, data: vec![value; width * height * channels] }
    }

    /// Builds from planar data (`channels` consecutive `height x width` planes).
    pub fn from_planar(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(shape(format!(
                "{width}x{height}x{channels} image needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f32,
    ) -> Self {
        let mut img = Self::new(width, height, channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    img.set(c, y, x, f(c, y, x));
                }
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }

    pub fn ensure_same_dims(&self, other: &Image) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(shape(format!(
                "image dimensions differ: {:?} vs {:?} (HxWxC)",
                self.dims(),
                other.dims()
            )))
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamped(&self) -> Image {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        out
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    /// Rec.601 luma for 3-channel images; the single plane otherwise.
    pub fn luma(&self) -> Vec<f64> {
        let n = self.width * self.height;
        if self.channels == 3 {
            let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
            (0..n)
                .map(|i| 0.299 * r[i] as f64 + 0.587 * g[i] as f64 + 0.114 * b[i] as f64)
                .collect()
        } else {
            let planes = self.channels as f64;
            (0..n)
                .map(|i| (0..self.channels).map(|c| self.plane(c)[i] as f64).sum::<f64>() / planes)
                .collect()
        }
    }

    /// Stacks same-sized images into an NCHW tensor.
    pub fn batch_to_tensor<T: Scalar>(images: &[Image]) -> Result<Tensor<T>> {
        let first = images.first().ok_or_else(|| validation("empty image batch"))?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for img in images {
            img.ensure_same_dims(first)?;
            data.extend(img.data.iter().map(|&v| T::lit(v as f64)));
        }
        Ok(Tensor::from_vec(&[images.len(), first.channels, first.height, first.width], data)?)
    }

    /// Splits an NCHW tensor back into images.
    pub fn batch_from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Vec<Image>> {
        let (n, c, h, w) = t.dims4()?;
        let per = c * h * w;
        Ok((0..n)
            .map(|i| Image {
                width: w,
                height: h,
                channels: c,
                data: t.data()[i * per..(i + 1) * per].iter().map(|v| v.as_f64() as f32).collect(),
            })
            .collect())
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let decoded = image::open(path).map_err(|e| Error::Codec(format!("{}: {e}", path.display())))?;
        let rgb = decoded.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let mut img = Image::new(w, h, 3);
        for (x, y, px) in rgb.enumerate_pixels() {
            for c in 0..3 {
                img.set(c, y as usize, x as usize, px[c] as f32 / 255.0);
            }
        }
        Ok(img)
    }

    /// Writes 8-bit RGB (or grayscale for single-channel), clamping to `[0, 1]`.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let to8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let (w, h) = (self.width as u32, self.height as u32);
        let result = if self.channels == 1 {
            image::GrayImage::from_fn(w, h, |x, y| image::Luma([to8(self.get(0, y as usize, x as usize))]))
                .save(path)
        } else {
            image::RgbImage::from_fn(w, h, |x, y| {
                let p = |c: usize| to8(self.get(c.min(self.channels - 1), y as usize, x as usize));
                image::Rgb([p(0), p(1), p(2)])
            })
            .save(path)
        };
        result.map_err(|e| Error::Codec(format!("{}: {e}", path.display())))
    }

    /// Places images left to right on a shared canvas (heights must match).
    pub fn side_by_side(images: &[&Image]) -> Result<Image> {
        let first = images.first().ok_or_else(|| validation("nothing to concatenate"))?;
        let width = images.iter().map(|i| i.width).sum();
        let mut out = Image::new(width, first.height, first.channels);
        let mut offset = 0;
        for img in images {
            if img.height != first.height || img.channels != first.channels {
                return Err(shape("side-by-side images need equal height and channels"));
            }
            for c in 0..img.channels {
                for y in 0..img.height {
                    for x in 0..img.width {
                        out.set(c, y, offset + x, img.get(c, y, x));
                    }
                }
            }
            offset += img.width;
        }
        Ok(out)
    }
}

/// Writes a scalar map as a 16-bit grayscale PNG, normalized to its own min..max.
pub fn save_heatmap_png(values: &[f64], width: usize, height: usize, path: &Path) -> Result<()> {
    if values.len() != width * height {
        return Err(shape("heatmap size mismatch"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
        image::ImageBuffer::from_fn(width as u32, height as u32, |x, y| {
            let v = (values[y as usize * width + x as usize] - lo) / span;
            image::Luma([(v.clamp(0.0, 1.0) * 65535.0).round() as u16])
        });
    buf.save(path).map_err(|e| Error::Codec(format!("{}: {e}", path.display())))
}

/// Raw little-endian float32 dump preceded by a one-line text header `dtype=f32 shape=HxW\n`.
pub fn save_raw_f32(values: &[f64], shape_dims: &[usize], path: &Path) -> Result<()> {
    let dims: Vec<String> = shape_dims.iter().map(|d| d.to_string()).collect();
    let mut bytes = format!("dtype=f32 shape={}\n", dims.join("x")).into_bytes();
    for v in values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}
