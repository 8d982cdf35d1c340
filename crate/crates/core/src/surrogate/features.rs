//! Random convolutional features.
//!
//! A frozen bank of `N(0, 1)` convolution kernels applied with stride one and
//! no padding, followed by a constant bias, a ReLU and non-overlapping mean
//! pooling. With the default geometry (`3×224×224` input, `5×5` kernels,
//! `55×55` pooling) each channel yields a `4×4` grid, so 160 channels give
//! 2560 features.
//!
//! The convolution is evaluated as an im2col matrix product one pooling band
//! at a time. Windows whose pixels are all equal (per channel) skip the
//! product: within a pooling cell they are grouped by value and evaluated
//! once from the precomputed kernel sums. Rendered and upsampled images are
//! mostly flat, so this removes most of the work.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::gemm;
use crate::rng;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub input_side: usize,
    pub kernel: usize,
    pub bias: f64,
    pub pool: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        Self {
            in_channels: 3,
            input_side: 224,
            kernel: 5,
            bias: 2.0,
            pool: 55,
        }
    }
}

impl ConvGeometry {
    pub fn conv_side(&self) -> usize {
        self.input_side + 1 - self.kernel
    }

    /// Pooled cells per spatial axis.
    pub fn pooled_side(&self) -> usize {
        self.conv_side() / self.pool
    }

    /// Taps per kernel: `in_channels·kernel²`.
    pub fn taps(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.kernel == 0 || self.pool == 0 {
            return Err(Error::invalid("conv geometry sizes must be positive"));
        }
        if self.input_side < self.kernel {
            return Err(Error::invalid("input side smaller than kernel"));
        }
        if self.pooled_side() == 0 {
            return Err(Error::invalid("pool window larger than the convolution output"));
        }
        if !self.bias.is_finite() {
            return Err(Error::NonFinite("conv bias".into()));
        }
        Ok(())
    }
}

/// Serializable description of an extractor; the weights are regenerated
/// from the seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub seed: u64,
    pub out_channels: usize,
    #[serde(flatten)]
    pub geometry: ConvGeometry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomConvExtractor {
    spec: ExtractorSpec,
    /// `out_channels × taps`, taps ordered `(channel, ky, kx)`.
    weights: Vec<f64>,
    /// `out_channels × in_channels` sums of each kernel slice.
    kernel_sums: Vec<f64>,
}

/// Random features with the default geometry.
pub fn init_random_features(seed: u64, out_channels: usize) -> Result<RandomConvExtractor> {
    RandomConvExtractor::from_spec(ExtractorSpec {
        seed,
        out_channels,
        geometry: ConvGeometry::default(),
    })
}

impl RandomConvExtractor {
    pub fn from_spec(spec: ExtractorSpec) -> Result<Self> {
        if spec.out_channels == 0 {
            return Err(Error::invalid("out_channels must be at least 1"));
        }
        spec.geometry.validate()?;
        let taps = spec.geometry.taps();
        let mut r = rng::stream(spec.seed, rng::streams::CONV_WEIGHTS);
        let weights: Vec<f64> = (0..spec.out_channels * taps)
            .map(|_| rng::standard_normal(&mut r))
            .collect();
        let kk = spec.geometry.kernel * spec.geometry.kernel;
        let kernel_sums = weights.chunks(kk).map(|slice| slice.iter().sum::<f64>()).collect();
        Ok(Self {
            spec,
            weights,
            kernel_sums,
        })
    }

    pub fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }

    pub fn geometry(&self) -> &ConvGeometry {
        &self.spec.geometry
    }

    pub fn out_channels(&self) -> usize {
        self.spec.out_channels
    }

    pub fn feature_dim(&self) -> usize {
        let p = self.geometry().pooled_side();
        self.spec.out_channels * p * p
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        let g = self.geometry();
        (g.in_channels, g.input_side, g.input_side)
    }

    fn check_input(&self, image: &ImageTensor) -> Result<()> {
        if image.shape() != self.input_shape() {
            return Err(Error::ShapeMismatch {
                expected: self.input_shape(),
                got: image.shape(),
            });
        }
        Ok(())
    }

    /// Feature vector of a correctly sized image, ordered
    /// `(out_channel, pooled_row, pooled_col)`.
    pub fn extract(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        self.check_input(image)?;
        let g = *self.geometry();
        let (p, pool, out) = (g.pooled_side(), g.pool, self.spec.out_channels);
        let flat = FlatWindows::new(image, g.kernel);
        let mut features = vec![0.0; self.feature_dim()];
        let area = (pool * pool) as f64;
        let mut acc = vec![0.0; out * p];
        for band in 0..p {
            let b = self.band(image, &flat, band);
            acc.iter_mut().for_each(|v| *v = 0.0);
            for (r, &pos) in b.dense_pos.iter().enumerate() {
                let cell = b.cell_of(pos);
                for (o, &v) in b.dense_pre[r * out..(r + 1) * out].iter().enumerate() {
                    if v > 0.0 {
                        acc[o * p + cell] += v;
                    }
                }
            }
            for grp in &b.groups {
                let n = grp.positions.len() as f64;
                for (o, &v) in grp.pre.iter().enumerate() {
                    if v > 0.0 {
                        acc[o * p + grp.cell] += n * v;
                    }
                }
            }
            for o in 0..out {
                for cell in 0..p {
                    features[(o * p + band) * p + cell] = acc[o * p + cell] / area;
                }
            }
        }
        Ok(features)
    }

    /// Vector-Jacobian product: given `∂L/∂features`, returns `∂L/∂image`.
    pub fn backward(&self, image: &ImageTensor, feature_grad: &[f64]) -> Result<ImageTensor> {
        self.check_input(image)?;
        if feature_grad.len() != self.feature_dim() {
            return Err(Error::invalid(format!(
                "feature gradient has length {}, expected {}",
                feature_grad.len(),
                self.feature_dim()
            )));
        }
        let g = *self.geometry();
        let (p, out, taps) = (g.pooled_side(), self.spec.out_channels, g.taps());
        let area = (g.pool * g.pool) as f64;
        let flat = FlatWindows::new(image, g.kernel);
        let mut grad = vec![0.0; g.in_channels * g.input_side * g.input_side];
        let upstream = |v: f64, o: usize, band: usize, cell: usize| {
            if v > 0.0 {
                feature_grad[(o * p + band) * p + cell] / area
            } else {
                0.0
            }
        };
        for band in 0..p {
            let mut b = self.band(image, &flat, band);
            let m = b.dense_pos.len();
            if m > 0 {
                for (r, &pos) in b.dense_pos.iter().enumerate() {
                    let cell = b.cell_of(pos);
                    for (o, v) in b.dense_pre[r * out..(r + 1) * out].iter_mut().enumerate() {
                        *v = upstream(*v, o, band, cell);
                    }
                }
                // dcol = dpre (m×out) · W (out×taps)
                let mut dcol = vec![0.0; m * taps];
                gemm(m, out, taps, &b.dense_pre, out, 1, &self.weights, taps, 1, &mut dcol);
                for (r, &pos) in b.dense_pos.iter().enumerate() {
                    self.scatter(&mut grad, &b, pos, &dcol[r * taps..(r + 1) * taps]);
                }
            }
            let mut col = vec![0.0; taps];
            for grp in &b.groups {
                col.iter_mut().for_each(|v| *v = 0.0);
                for (o, &v) in grp.pre.iter().enumerate() {
                    let d = upstream(v, o, band, grp.cell);
                    if d != 0.0 {
                        for (c, &w) in col.iter_mut().zip(&self.weights[o * taps..(o + 1) * taps]) {
                            *c += d * w;
                        }
                    }
                }
                if col.iter().any(|&v| v != 0.0) {
                    for &pos in &grp.positions {
                        self.scatter(&mut grad, &b, pos, &col);
                    }
                }
            }
            b.dense_pre.clear();
        }
        ImageTensor::from_vec(g.in_channels, g.input_side, g.input_side, grad)
    }

    /// Adds one window's tap gradient into the image gradient.
    fn scatter(&self, grad: &mut [f64], band: &Band, pos: usize, col: &[f64]) {
        let g = self.geometry();
        let (k, side) = (g.kernel, g.input_side);
        let (i, j) = band.pixel_of(pos);
        let mut t = 0;
        for c in 0..g.in_channels {
            for ky in 0..k {
                let base = (c * side + i + ky) * side + j;
                for kx in 0..k {
                    grad[base + kx] += col[t];
                    t += 1;
                }
            }
        }
    }

    /// Pre-activations (`conv + bias`) of one pooling band. Non-flat windows
    /// go through im2col and a matrix product; flat windows are grouped by
    /// pooling cell and pixel value and evaluated once per group from the
    /// kernel sums.
    fn band(&self, image: &ImageTensor, flat: &FlatWindows, band: usize) -> Band {
        let g = self.geometry();
        let (pool, out, k, taps, side, cin) = (
            g.pool,
            self.spec.out_channels,
            g.kernel,
            g.taps(),
            g.input_side,
            g.in_channels,
        );
        let width = g.pooled_side() * pool;
        let src = image.as_slice();
        let plane = side * side;

        let mut b = Band {
            row0: band * pool,
            width,
            pool,
            dense_pos: Vec::new(),
            dense_pre: Vec::new(),
            groups: Vec::new(),
        };
        let mut index: HashMap<(usize, Vec<u64>), usize> = HashMap::new();
        let mut cols: Vec<f64> = Vec::new();
        let mut key = Vec::with_capacity(cin);
        let mut last: Option<usize> = None;

        for pos in 0..pool * width {
            let (i, j) = b.pixel_of(pos);
            if flat.is_flat(i, j) {
                key.clear();
                key.extend((0..cin).map(|c| src[c * plane + i * side + j].to_bits()));
                let cell = b.cell_of(pos);
                let same_as_last = last.is_some_and(|s: usize| b.groups[s].cell == cell && b.groups[s].key == key);
                let slot = match last
                    .filter(|_| same_as_last)
                    .or_else(|| index.get(&(cell, key.clone())).copied())
                {
                    Some(s) => s,
                    None => {
                        let vals: Vec<f64> = key.iter().map(|&bits| f64::from_bits(bits)).collect();
                        let pre = (0..out)
                            .map(|o| {
                                let sums = &self.kernel_sums[o * cin..(o + 1) * cin];
                                g.bias + sums.iter().zip(&vals).map(|(s, v)| s * v).sum::<f64>()
                            })
                            .collect();
                        b.groups.push(FlatGroup {
                            cell,
                            key: key.clone(),
                            pre,
                            positions: Vec::new(),
                        });
                        index.insert((cell, key.clone()), b.groups.len() - 1);
                        b.groups.len() - 1
                    }
                };
                b.groups[slot].positions.push(pos);
                last = Some(slot);
            } else {
                b.dense_pos.push(pos);
                for c in 0..cin {
                    for ky in 0..k {
                        let base = c * plane + (i + ky) * side + j;
                        cols.extend_from_slice(&src[base..base + k]);
                    }
                }
            }
        }

        let m = b.dense_pos.len();
        if m > 0 {
            b.dense_pre = vec![0.0; m * out];
            // pre = cols (m×taps) · Wᵀ (taps×out)
            gemm(m, taps, out, &cols, taps, 1, &self.weights, 1, taps, &mut b.dense_pre);
            b.dense_pre.iter_mut().for_each(|v| *v += g.bias);
        }
        b
    }
}

/// Flat windows of one pooling cell sharing the same pixel value.
struct FlatGroup {
    cell: usize,
    /// Bit patterns of the window's pixel value in each channel.
    key: Vec<u64>,
    /// Pre-activation per output channel.
    pre: Vec<f64>,
    positions: Vec<usize>,
}

/// Pre-activations of one horizontal band of pooling cells. Positions are
/// raster indices within the band.
struct Band {
    row0: usize,
    width: usize,
    pool: usize,
    dense_pos: Vec<usize>,
    /// `dense_pos.len() × out_channels`
    dense_pre: Vec<f64>,
    groups: Vec<FlatGroup>,
}

impl Band {
    fn pixel_of(&self, pos: usize) -> (usize, usize) {
        (self.row0 + pos / self.width, pos % self.width)
    }

    fn cell_of(&self, pos: usize) -> usize {
        (pos % self.width) / self.pool
    }
}

/// Marks conv windows whose pixels are constant within every channel.
struct FlatWindows {
    conv_side: usize,
    flat: Vec<bool>,
}

impl FlatWindows {
    fn new(image: &ImageTensor, k: usize) -> Self {
        let (c, side) = (image.channels(), image.width());
        let conv_side = side + 1 - k;
        let src = image.as_slice();
        let plane = side * side;
        // hflat[y][x]: the k pixels starting at x on row y are equal, in every channel
        let mut hflat = vec![true; side * conv_side];
        let mut run = vec![0usize; side];
        for ch in 0..c {
            for y in 0..side {
                let row = &src[ch * plane + y * side..ch * plane + (y + 1) * side];
                run[side - 1] = 1;
                for x in (0..side - 1).rev() {
                    run[x] = if row[x + 1] == row[x] { run[x + 1] + 1 } else { 1 };
                }
                for x in 0..conv_side {
                    if run[x] < k {
                        hflat[y * conv_side + x] = false;
                    }
                }
            }
        }
        let mut flat = vec![false; conv_side * conv_side];
        for i in 0..conv_side {
            for j in 0..conv_side {
                flat[i * conv_side + j] = (0..k).all(|dy| {
                    hflat[(i + dy) * conv_side + j]
                        && (0..c).all(|ch| src[ch * plane + (i + dy) * side + j] == src[ch * plane + i * side + j])
                });
            }
        }
        Self { conv_side, flat }
    }

    #[inline]
    fn is_flat(&self, i: usize, j: usize) -> bool {
        self.flat[i * self.conv_side + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(seed: u64, out: usize) -> RandomConvExtractor {
        RandomConvExtractor::from_spec(ExtractorSpec {
            seed,
            out_channels: out,
            geometry: ConvGeometry {
                in_channels: 3,
                input_side: 8,
                kernel: 5,
                bias: 2.0,
                pool: 2,
            },
        })
        .unwrap()
    }

    /// Dense-loop reference: conv → +bias → ReLU → mean pool.
    fn oracle(ex: &RandomConvExtractor, img: &ImageTensor) -> Vec<f64> {
        let g = ex.geometry();
        let (k, pool, p) = (g.kernel, g.pool, g.pooled_side());
        let mut feats = vec![0.0; ex.feature_dim()];
        for o in 0..ex.out_channels() {
            for pr in 0..p {
                for pc in 0..p {
                    let mut s = 0.0;
                    for i in pr * pool..(pr + 1) * pool {
                        for j in pc * pool..(pc + 1) * pool {
                            let mut a = g.bias;
                            for c in 0..g.in_channels {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let w = ex.weights()[((o * g.in_channels + c) * k + ky) * k + kx];
                                        a += w * img.get(c, i + ky, j + kx);
                                    }
                                }
                            }
                            s += a.max(0.0);
                        }
                    }
                    feats[(o * p + pr) * p + pc] = s / (pool * pool) as f64;
                }
            }
        }
        feats
    }

    #[test]
    fn default_dimensions() {
        assert_eq!(init_random_features(0, 160).unwrap().feature_dim(), 2560);
        assert_eq!(init_random_features(0, 1).unwrap().feature_dim(), 16);
        assert!(init_random_features(0, 0).is_err());
    }

    #[test]
    fn weights_are_deterministic() {
        assert_eq!(init_random_features(9, 4).unwrap(), init_random_features(9, 4).unwrap());
        assert_ne!(
            init_random_features(9, 4).unwrap().weights(),
            init_random_features(10, 4).unwrap().weights()
        );
    }

    #[test]
    fn zero_image_gives_bias() {
        let ex = init_random_features(3, 2).unwrap();
        let f = ex.extract(&ImageTensor::zeros(3, 224, 224)).unwrap();
        assert!(f.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn matches_dense_oracle_on_random_and_negated_images() {
        let ex = toy(4, 6);
        let mut r = rng::stream(1, 0);
        for _ in 0..5 {
            let img = rng::normal_tensor(&mut r, 3, 8, 8).scale(0.3);
            let got = ex.extract(&img).unwrap();
            let want = oracle(&ex, &img);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
            let neg = img.scale(-1.0);
            let got = ex.extract(&neg).unwrap();
            let want = oracle(&ex, &neg);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_pixel_response() {
        let ex = toy(5, 3);
        let mut img = ImageTensor::zeros(3, 8, 8);
        img.set(1, 4, 4, 1.0);
        let got = ex.extract(&img).unwrap();
        assert_eq!(got, oracle(&ex, &img));
        // conv output (i, j) sees pixel (4, 4) through tap (4 − i, 4 − j)
        let g = ex.geometry();
        let w = |o: usize, ky: usize, kx: usize| ex.weights()[((o * 3 + 1) * 5 + ky) * 5 + kx];
        for o in 0..3 {
            let mut s = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    s += (g.bias + w(o, 4 - i, 4 - j)).max(0.0);
                }
            }
            assert!((got[o * 4] - s / 4.0).abs() < 1e-14);
        }
    }

    #[test]
    fn flat_path_agrees_with_dense_path() {
        let ex = toy(6, 5);
        let mut img = ImageTensor::filled(3, 8, 8, 0.25);
        for i in 0..8 {
            for j in 5..8 {
                img.set(0, i, j, 0.75);
                img.set(2, i, j, -0.5);
            }
        }
        let got = ex.extract(&img).unwrap();
        let want = oracle(&ex, &img);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let ex = toy(7, 4);
        let mut r = rng::stream(2, 0);
        let img = rng::normal_tensor(&mut r, 3, 8, 8).scale(0.4);
        let fg: Vec<f64> = (0..ex.feature_dim()).map(|_| rng::standard_normal(&mut r)).collect();
        let grad = ex.backward(&img, &fg).unwrap();
        let loss = |x: &ImageTensor| -> f64 { ex.extract(x).unwrap().iter().zip(&fg).map(|(a, b)| a * b).sum() };
        let h = 1e-6;
        for idx in 0..img.len() {
            let mut p = img.clone();
            let mut m = img.clone();
            p.as_mut_slice()[idx] += h;
            m.as_mut_slice()[idx] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            let an = grad.as_slice()[idx];
            assert!((fd - an).abs() <= 1e-5 * fd.abs().max(1.0), "{idx}: {fd} vs {an}");
        }
    }

    #[test]
    fn rejects_wrong_shape() {
        let ex = toy(1, 1);
        assert!(ex.extract(&ImageTensor::zeros(3, 9, 9)).is_err());
        assert!(ex.extract(&ImageTensor::zeros(1, 8, 8)).is_err());
        assert!(ex.backward(&ImageTensor::zeros(3, 8, 8), &[0.0; 3]).is_err());
    }
}
