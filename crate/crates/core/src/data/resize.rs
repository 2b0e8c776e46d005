//! Separable, antialiased resampling with pixel-centre alignment.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeFilter {
    #[default]
    Bicubic,
    Bilinear,
    Nearest,
}

const CUBIC_A: f64 = -0.5;

/// Catmull-Rom cubic (a = -0.5).
pub fn cubic_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        ((CUBIC_A + 2.0) * x - (CUBIC_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * CUBIC_A
    } else {
        0.0
    }
}

fn triangle(x: f64) -> f64 {
    (1.0 - x.abs()).max(0.0)
}

impl ResizeFilter {
    fn support(self) -> f64 {
        match self {
            ResizeFilter::Bicubic => 2.0,
            ResizeFilter::Bilinear => 1.0,
            ResizeFilter::Nearest => 0.5,
        }
    }

    fn eval(self, x: f64) -> f64 {
        match self {
            ResizeFilter::Bicubic => cubic_kernel(x),
            ResizeFilter::Bilinear => triangle(x),
            ResizeFilter::Nearest => {
                if (-0.5..0.5).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Per output sample: first source index and normalized weights.
fn coefficients(n_in: usize, n_out: usize, filter: ResizeFilter) -> Vec<(usize, Vec<f64>)> {
    let scale = n_in as f64 / n_out as f64;
    if filter == ResizeFilter::Nearest {
        return (0..n_out)
            .map(|i| (((i as f64 + 0.5) * scale).floor() as usize).min(n_in - 1))
            .map(|j| (j, vec![1.0]))
            .collect();
    }
    let filter_scale = scale.max(1.0);
    let support = filter.support() * filter_scale;
    (0..n_out)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale;
            let lo = ((center - support + 0.5).floor().max(0.0)) as usize;
            let hi = ((center + support + 0.5).floor() as usize).min(n_in);
            let mut w: Vec<f64> = (lo..hi)
                .map(|j| filter.eval((j as f64 + 0.5 - center) / filter_scale))
                .collect();
            let total: f64 = w.iter().sum();
            if total != 0.0 {
                w.iter_mut().for_each(|v| *v /= total);
            }
            (lo, w)
        })
        .collect()
}

/// Resamples to exactly `width x height`.
pub fn resize(img: &Image, width: usize, height: usize, filter: ResizeFilter) -> Result<Image> {
    if width == 0 || height == 0 {
        return Err(validation(format!("resize target {width}x{height} must be positive")));
    }
    let (h, w, c) = img.dims();
    if (w, h) == (width, height) {
        return Ok(img.clone());
    }
    let cx = coefficients(w, width, filter);
    let cy = coefficients(h, height, filter);
    let mut out = Image::new(width, height, c);
    let mut tmp = vec![0.0f64; h * width];
    for ch in 0..c {
        let plane = img.plane(ch);
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            for (x, (lo, ws)) in cx.iter().enumerate() {
                tmp[y * width + x] = ws.iter().enumerate().map(|(k, wt)| wt * row[lo + k] as f64).sum();
            }
        }
        let dst = out.plane_mut(ch);
        for (y, (lo, ws)) in cy.iter().enumerate() {
            for x in 0..width {
                let v: f64 = ws.iter().enumerate().map(|(k, wt)| wt * tmp[(lo + k) * width + x]).sum();
                dst[y * width + x] = v as f32;
            }
        }
    }
    Ok(out)
}

/// Scales so the short side equals `short_side`; the long side is rounded.
pub fn resize_proportional(img: &Image, short_side: usize, filter: ResizeFilter) -> Result<Image> {
    if short_side == 0 {
        return Err(validation("resize short side must be positive"));
    }
    let (h, w, _) = img.dims();
    if h == 0 || w == 0 {
        return Err(validation("cannot resize an empty image"));
    }
    let short = h.min(w);
    if short == short_side {
        return Ok(img.clone());
    }
    let long = ((h.max(w) as f64) * short_side as f64 / short as f64).round() as usize;
    let (nw, nh) = if w >= h { (long, short_side) } else { (short_side, long) };
    resize(img, nw, nh, filter)
}
