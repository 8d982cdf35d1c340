//! Separable bilinear resize with half-pixel centers (`align_corners = false`)
//! and its exact adjoint.
//!
//! Output pixel `i` samples the source at `(i + 0.5)·(in/out) − 0.5`,
//! clamped to the valid range, so a same-size resize is the identity.
//! Interpolation is evaluated as `a + f·(b − a)`, which reproduces constant
//! regions bit for bit.

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Two-tap interpolation weights along one axis.
#[derive(Debug, Clone)]
struct AxisTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    w_lo: Vec<f64>,
    w_hi: Vec<f64>,
}

impl AxisTaps {
    fn new(input: usize, output: usize) -> Self {
        let scale = input as f64 / output as f64;
        let max = (input - 1) as f64;
        let mut taps = AxisTaps {
            lo: Vec::with_capacity(output),
            hi: Vec::with_capacity(output),
            w_lo: Vec::with_capacity(output),
            w_hi: Vec::with_capacity(output),
        };
        for i in 0..output {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            let frac = src - lo as f64;
            taps.lo.push(lo);
            taps.hi.push(hi);
            taps.w_lo.push(1.0 - frac);
            taps.w_hi.push(frac);
        }
        taps
    }
}

/// A fixed bilinear resize between two spatial sizes.
#[derive(Debug, Clone)]
pub struct BilinearResize {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    rows: AxisTaps,
    cols: AxisTaps,
}

impl BilinearResize {
    pub fn new(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Result<Self> {
        if in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0 {
            return Err(Error::invalid("resize dimensions must be positive"));
        }
        Ok(Self {
            in_h,
            in_w,
            out_h,
            out_w,
            rows: AxisTaps::new(in_h, out_h),
            cols: AxisTaps::new(in_w, out_w),
        })
    }

    pub fn is_identity(&self) -> bool {
        self.in_h == self.out_h && self.in_w == self.out_w
    }

    fn check(&self, x: &ImageTensor, h: usize, w: usize) -> Result<()> {
        if x.height() != h || x.width() != w {
            return Err(Error::ShapeMismatch {
                expected: (x.channels(), h, w),
                got: x.shape(),
            });
        }
        Ok(())
    }

    /// `R x`
    pub fn forward(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.check(x, self.in_h, self.in_w)?;
        if self.is_identity() {
            return Ok(x.clone());
        }
        let c = x.channels();
        let src = x.as_slice();
        let mut out = vec![0.0; c * self.out_h * self.out_w];
        let mut tmp = vec![0.0; self.in_h * self.out_w];
        for ch in 0..c {
            let plane = &src[ch * self.in_h * self.in_w..(ch + 1) * self.in_h * self.in_w];
            for y in 0..self.in_h {
                let row = &plane[y * self.in_w..(y + 1) * self.in_w];
                let t = &mut tmp[y * self.out_w..(y + 1) * self.out_w];
                for j in 0..self.out_w {
                    let a = row[self.cols.lo[j]];
                    t[j] = a + self.cols.w_hi[j] * (row[self.cols.hi[j]] - a);
                }
            }
            let dst = &mut out[ch * self.out_h * self.out_w..(ch + 1) * self.out_h * self.out_w];
            for i in 0..self.out_h {
                let (a, b) = (self.rows.lo[i], self.rows.hi[i]);
                let wb = self.rows.w_hi[i];
                for j in 0..self.out_w {
                    let lo = tmp[a * self.out_w + j];
                    dst[i * self.out_w + j] = lo + wb * (tmp[b * self.out_w + j] - lo);
                }
            }
        }
        ImageTensor::from_vec(c, self.out_h, self.out_w, out)
    }

    /// `Rᵀ y`
    pub fn adjoint(&self, y: &ImageTensor) -> Result<ImageTensor> {
        self.check(y, self.out_h, self.out_w)?;
        if self.is_identity() {
            return Ok(y.clone());
        }
        let c = y.channels();
        let src = y.as_slice();
        let mut out = vec![0.0; c * self.in_h * self.in_w];
        let mut tmp = vec![0.0; self.in_h * self.out_w];
        for ch in 0..c {
            tmp.iter_mut().for_each(|v| *v = 0.0);
            let plane = &src[ch * self.out_h * self.out_w..(ch + 1) * self.out_h * self.out_w];
            for i in 0..self.out_h {
                let (a, b) = (self.rows.lo[i], self.rows.hi[i]);
                let (wa, wb) = (self.rows.w_lo[i], self.rows.w_hi[i]);
                for j in 0..self.out_w {
                    let g = plane[i * self.out_w + j];
                    tmp[a * self.out_w + j] += wa * g;
                    tmp[b * self.out_w + j] += wb * g;
                }
            }
            let dst = &mut out[ch * self.in_h * self.in_w..(ch + 1) * self.in_h * self.in_w];
            for y in 0..self.in_h {
                let t = &tmp[y * self.out_w..(y + 1) * self.out_w];
                let row = &mut dst[y * self.in_w..(y + 1) * self.in_w];
                for j in 0..self.out_w {
                    row[self.cols.lo[j]] += self.cols.w_lo[j] * t[j];
                    row[self.cols.hi[j]] += self.cols.w_hi[j] * t[j];
                }
            }
        }
        ImageTensor::from_vec(c, self.in_h, self.in_w, out)
    }
}

/// Resizes every channel of `image` to `height×width`.
pub fn resize(image: &ImageTensor, height: usize, width: usize) -> Result<ImageTensor> {
    if image.is_empty() {
        return Err(Error::invalid("cannot resize an empty image"));
    }
    BilinearResize::new(image.height(), image.width(), height, width)?.forward(image)
}
