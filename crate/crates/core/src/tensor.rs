//! Deterministic NCHW tensor kernels.
//!
//! Every reduction in this module runs sequentially in a fixed order, so the
//! encoder and the decoder reproduce identical floats on one platform. Entropy
//! parameters are derived from these values, and a single differing bit would
//! desynchronize the range coder.

use crate::error::{Error, Result};

/// Dimensions of a rank-4 tensor in (batch, channel, row, column) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense single-precision tensor stored row-major in (n, c, h, w) order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, rejecting length mismatches and non-finite values.
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::invalid(format!(
                "tensor {shape} needs {} values, got {}",
                shape.numel(),
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Self { shape, data }
    }

    /// Broadcasts a per-channel vector over a `1 x len x h x w` grid.
    pub fn broadcast_channels(values: &[f32], h: usize, w: usize) -> Self {
        let shape = Shape::new(1, values.len(), h, w);
        let mut data = Vec::with_capacity(shape.numel());
        for &v in values {
            data.extend(std::iter::repeat_n(v, h * w));
        }
        Self { shape, data }
    }

    pub(crate) fn from_raw(shape: Shape, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: f32) {
        let i = self.index(n, c, h, w);
        self.data[i] = value;
    }

    /// Spatial plane of one (batch, channel) pair.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(Error::invalid(format!("cannot reshape {} into {shape}", self.shape)));
        }
        Ok(Self { shape, data: self.data })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        ensure_same_shape(self, other)?;
        Ok(Self {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, factor: f32) -> Self {
        self.map(|v| v * factor)
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Concatenates tensors with equal (n, h, w) along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let Shape { n, h, w, .. } = first.shape;
        let mut c_total = 0;
        for part in parts {
            let s = part.shape;
            if s.n != n || s.h != h || s.w != w {
                return Err(Error::invalid(format!(
                    "concat shape mismatch: {} vs {}",
                    first.shape, s
                )));
            }
            c_total += s.c;
        }
        let shape = Shape::new(n, c_total, h, w);
        let mut data = Vec::with_capacity(shape.numel());
        for b in 0..n {
            for part in parts {
                let per_batch = part.shape.c * h * w;
                data.extend_from_slice(&part.data[b * per_batch..(b + 1) * per_batch]);
            }
        }
        Ok(Self { shape, data })
    }

    /// Copies channels `[start, start + count)`.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Self> {
        let s = self.shape;
        if start + count > s.c {
            return Err(Error::invalid(format!(
                "channel slice {start}..{} out of range for {s}",
                start + count
            )));
        }
        let shape = Shape::new(s.n, count, s.h, s.w);
        let mut data = Vec::with_capacity(shape.numel());
        for b in 0..s.n {
            let from = (b * s.c + start) * s.plane();
            data.extend_from_slice(&self.data[from..from + count * s.plane()]);
        }
        Ok(Self { shape, data })
    }

    /// Pads right and bottom by repeating the last column and row.
    pub fn pad_replicate(&self, right: usize, bottom: usize) -> Self {
        let s = self.shape;
        let (h, w) = (s.h + bottom, s.w + right);
        let out_shape = Shape::new(s.n, s.c, h, w);
        Self::from_fn(out_shape, |n, c, i, j| self.at(n, c, i.min(s.h - 1), j.min(s.w - 1)))
    }

    /// Pads right and bottom with zeros.
    pub fn pad_zero(&self, right: usize, bottom: usize) -> Self {
        let s = self.shape;
        let out_shape = Shape::new(s.n, s.c, s.h + bottom, s.w + right);
        Self::from_fn(
            out_shape,
            |n, c, i, j| {
                if i < s.h && j < s.w {
                    self.at(n, c, i, j)
                } else {
                    0.0
                }
            },
        )
    }

    /// Keeps the top-left `h x w` window.
    pub fn crop(&self, h: usize, w: usize) -> Result<Self> {
        let s = self.shape;
        if h > s.h || w > s.w {
            return Err(Error::invalid(format!("crop {h}x{w} exceeds {s}")));
        }
        Ok(Self::from_fn(Shape::new(s.n, s.c, h, w), |n, c, i, j| {
            self.at(n, c, i, j)
        }))
    }
}

pub(crate) fn ensure_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::invalid(format!("shape mismatch: {} vs {}", a.shape, b.shape)));
    }
    Ok(())
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-channel spatial convolution with zero padding.
///
/// `kernel` has shape `(c, 1, kh, kw)`. Taps accumulate top-to-bottom,
/// left-to-right.
pub fn depthwise_conv(t: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let s = t.shape;
    let k = kernel.shape;
    if k.n != s.c || k.c != 1 {
        return Err(Error::invalid(format!(
            "depthwise kernel {k} does not match {} input channels",
            s.c
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    if s.h + 2 * padding < k.h || s.w + 2 * padding < k.w {
        return Err(Error::invalid(format!("kernel {k} larger than padded input {s}")));
    }
    let h_out = (s.h + 2 * padding - k.h) / stride + 1;
    let w_out = (s.w + 2 * padding - k.w) / stride + 1;
    let out_shape = Shape::new(s.n, s.c, h_out, w_out);
    let mut out = vec![0.0f32; out_shape.numel()];
    let taps = k.h * k.w;
    if stride == 1 {
        // same per-element order as the general path, vectorized along rows
        for n in 0..s.n {
            for c in 0..s.c {
                let src = t.plane(n, c);
                let ker = &kernel.data[c * taps..(c + 1) * taps];
                let dst_base = (n * s.c + c) * h_out * w_out;
                for oy in 0..h_out {
                    let dst = &mut out[dst_base + oy * w_out..dst_base + (oy + 1) * w_out];
                    for ky in 0..k.h {
                        let iy = (oy + ky) as isize - padding as isize;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * s.w..(iy as usize + 1) * s.w];
                        for kx in 0..k.w {
                            let wv = ker[ky * k.w + kx];
                            // ox + kx - padding must land in [0, s.w)
                            let lo = padding.saturating_sub(kx);
                            let hi = (s.w + padding).saturating_sub(kx).min(w_out);
                            if lo >= hi {
                                continue;
                            }
                            let shift = lo + kx - padding;
                            for (d, &x) in dst[lo..hi].iter_mut().zip(&row[shift..shift + (hi - lo)]) {
                                *d += wv * x;
                            }
                        }
                    }
                }
            }
        }
        return Ok(Tensor::from_raw(out_shape, out));
    }
    for n in 0..s.n {
        for c in 0..s.c {
            let src = t.plane(n, c);
            let ker = &kernel.data[c * taps..(c + 1) * taps];
            let dst_base = (n * s.c + c) * h_out * w_out;
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut acc = 0.0f32;
                    for ky in 0..k.h {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * s.w..(iy as usize + 1) * s.w];
                        for kx in 0..k.w {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= s.w as isize {
                                continue;
                            }
                            acc += ker[ky * k.w + kx] * row[ix as usize];
                        }
                    }
                    out[dst_base + oy * w_out + ox] = acc;
                }
            }
        }
    }
    Ok(Tensor::from_raw(out_shape, out))
}

const MIX_ROWS: usize = 4;
const MIX_COLS: usize = 8;

/// Pointwise channel mixing: `out[n, :, i, j] = weights * in[n, :, i, j] + bias`.
///
/// `weights` has shape `(c_out, c_in, 1, 1)`; `bias` holds `c_out` values in
/// any shape. Input channels accumulate in ascending order.
pub fn linear_mix(t: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let s = t.shape;
    let ws = weights.shape;
    if ws.c != s.c || ws.h != 1 || ws.w != 1 {
        return Err(Error::invalid(format!(
            "linear weights {ws} incompatible with input {s}"
        )));
    }
    if bias.len() != ws.n {
        return Err(Error::invalid(format!(
            "bias has {} values, expected {}",
            bias.len(),
            ws.n
        )));
    }
    let (c_in, c_out, p) = (s.c, ws.n, s.plane());
    let out_shape = Shape::new(s.n, c_out, s.h, s.w);
    let mut out = vec![0.0f32; out_shape.numel()];
    // Blocked over MIX_ROWS outputs x MIX_COLS positions; every element still
    // accumulates bias first, then inputs in ascending order.
    let input = &t.data;
    for n in 0..s.n {
        let src = &input[n * c_in * p..(n + 1) * c_in * p];
        let dst = &mut out[n * c_out * p..(n + 1) * c_out * p];
        let mut o = 0;
        while o < c_out {
            let rows = MIX_ROWS.min(c_out - o);
            let mut col = 0;
            while col < p {
                let cols = MIX_COLS.min(p - col);
                if rows == MIX_ROWS && cols == MIX_COLS {
                    mix_block(
                        &weights.data[o * c_in..(o + MIX_ROWS) * c_in],
                        &bias.data[o..o + MIX_ROWS],
                        src,
                        p,
                        col,
                        &mut dst[o * p..(o + MIX_ROWS) * p],
                    );
                } else {
                    for r in 0..rows {
                        for k in 0..cols {
                            let mut a = bias.data[o + r];
                            for i in 0..c_in {
                                a += weights.data[(o + r) * c_in + i] * src[i * p + col + k];
                            }
                            dst[(o + r) * p + col + k] = a;
                        }
                    }
                }
                col += cols;
            }
            o += rows;
        }
    }
    Ok(Tensor::from_raw(out_shape, out))
}

#[inline(always)]
fn mix_block(w: &[f32], bias: &[f32], src: &[f32], p: usize, col: usize, dst: &mut [f32]) {
    let c_in = w.len() / MIX_ROWS;
    let (w0, rest) = w.split_at(c_in);
    let (w1, rest) = rest.split_at(c_in);
    let (w2, w3) = rest.split_at(c_in);
    let mut a0 = [bias[0]; MIX_COLS];
    let mut a1 = [bias[1]; MIX_COLS];
    let mut a2 = [bias[2]; MIX_COLS];
    let mut a3 = [bias[3]; MIX_COLS];
    for i in 0..c_in {
        let x: [f32; MIX_COLS] = src[i * p + col..i * p + col + MIX_COLS].try_into().unwrap();
        let (v0, v1, v2, v3) = (w0[i], w1[i], w2[i], w3[i]);
        for k in 0..MIX_COLS {
            a0[k] += v0 * x[k];
            a1[k] += v1 * x[k];
            a2[k] += v2 * x[k];
            a3[k] += v3 * x[k];
        }
    }
    for (r, a) in [a0, a1, a2, a3].iter().enumerate() {
        dst[r * p + col..r * p + col + MIX_COLS].copy_from_slice(a);
    }
}

/// Weighted SiLU, `x * sigmoid(4x)`.
pub fn wsilu(t: &Tensor) -> Tensor {
    t.map(|x| x * sigmoid(4.0 * x))
}

/// Moves each `r x r` spatial patch into channels: `(n,c,h,w) -> (n,c*r*r,h/r,w/r)`.
pub fn pixel_unshuffle(t: &Tensor, r: usize) -> Result<Tensor> {
    let s = t.shape;
    if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(Error::invalid(format!(
            "pixel_unshuffle factor {r} does not divide {}x{}",
            s.h, s.w
        )));
    }
    let (ho, wo) = (s.h / r, s.w / r);
    let out_shape = Shape::new(s.n, s.c * r * r, ho, wo);
    let mut out = vec![0.0f32; out_shape.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            for dy in 0..r {
                for dx in 0..r {
                    let oc = c * r * r + dy * r + dx;
                    let base = (n * out_shape.c + oc) * ho * wo;
                    for i in 0..ho {
                        for j in 0..wo {
                            out[base + i * wo + j] = t.at(n, c, i * r + dy, j * r + dx);
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_raw(out_shape, out))
}

/// Exact inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle(t: &Tensor, r: usize) -> Result<Tensor> {
    let s = t.shape;
    if r == 0 || !s.c.is_multiple_of(r * r) {
        return Err(Error::invalid(format!(
            "pixel_shuffle factor {r} does not divide {} channels",
            s.c
        )));
    }
    let c_out = s.c / (r * r);
    let out_shape = Shape::new(s.n, c_out, s.h * r, s.w * r);
    let mut out = Tensor::zeros(out_shape);
    for n in 0..s.n {
        for c in 0..c_out {
            for dy in 0..r {
                for dx in 0..r {
                    let src = t.plane(n, c * r * r + dy * r + dx);
                    for i in 0..s.h {
                        for j in 0..s.w {
                            out.set(n, c, i * r + dy, j * r + dx, src[i * s.w + j]);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Shifts the first half of the channels by one pixel (right, left, down, up
/// per quarter of that half) with zero fill; the second half passes through.
pub fn spatial_shift(t: &Tensor) -> Result<Tensor> {
    let s = t.shape;
    if !s.c.is_multiple_of(8) {
        return Err(Error::invalid(format!(
            "spatial_shift needs channels divisible by 8, got {}",
            s.c
        )));
    }
    let g = s.c / 8;
    let mut out = t.clone();
    for n in 0..s.n {
        for c in 0..4 * g {
            let src = t.plane(n, c).to_vec();
            let dst = out.plane_mut(n, c);
            dst.fill(0.0);
            for i in 0..s.h {
                for j in 0..s.w {
                    let from = match c / g {
                        0 => (j > 0).then(|| (i, j - 1)),
                        1 => (j + 1 < s.w).then(|| (i, j + 1)),
                        2 => (i > 0).then(|| (i - 1, j)),
                        _ => (i + 1 < s.h).then(|| (i + 1, j)),
                    };
                    if let Some((fi, fj)) = from {
                        dst[i * s.w + j] = src[fi * s.w + fj];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Group-transpose channel permutation: view channels as `(groups, c/groups)`,
/// transpose, flatten.
pub fn channel_shuffle(t: &Tensor, groups: usize) -> Result<Tensor> {
    let s = t.shape;
    if groups == 0 || !s.c.is_multiple_of(groups) {
        return Err(Error::invalid(format!(
            "channel_shuffle groups {groups} do not divide {} channels",
            s.c
        )));
    }
    let per = s.c / groups;
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for g in 0..groups {
            for j in 0..per {
                let src = g * per + j;
                let dst = j * groups + g;
                out.plane_mut(n, dst).copy_from_slice(t.plane(n, src));
            }
        }
    }
    Ok(out)
}

/// Precomputed corner indices and weights of one clamped bilinear lookup.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BilinearTap {
    i00: usize,
    i01: usize,
    i10: usize,
    i11: usize,
    fr: f32,
    fc: f32,
}

impl BilinearTap {
    #[inline]
    pub(crate) fn new(h: usize, w: usize, row: f32, col: f32) -> Self {
        let r = row.clamp(0.0, (h - 1) as f32);
        let c = col.clamp(0.0, (w - 1) as f32);
        let r0 = r.floor() as usize;
        let c0 = c.floor() as usize;
        let r1 = (r0 + 1).min(h - 1);
        let c1 = (c0 + 1).min(w - 1);
        Self {
            i00: r0 * w + c0,
            i01: r0 * w + c1,
            i10: r1 * w + c0,
            i11: r1 * w + c1,
            fr: r - r0 as f32,
            fc: c - c0 as f32,
        }
    }

    #[inline]
    pub(crate) fn sample(&self, plane: &[f32]) -> f32 {
        let top = plane[self.i00] * (1.0 - self.fc) + plane[self.i01] * self.fc;
        let bottom = plane[self.i10] * (1.0 - self.fc) + plane[self.i11] * self.fc;
        top * (1.0 - self.fr) + bottom * self.fr
    }

    /// Samples `out.len()` interleaved channels of a position-major buffer
    /// holding `stride` values per position.
    #[inline]
    pub(crate) fn gather_into(&self, data: &[f32], stride: usize, out: &mut [f32]) {
        let d = out.len();
        let p00 = &data[self.i00 * stride..self.i00 * stride + d];
        let p01 = &data[self.i01 * stride..self.i01 * stride + d];
        let p10 = &data[self.i10 * stride..self.i10 * stride + d];
        let p11 = &data[self.i11 * stride..self.i11 * stride + d];
        let (fr, fc) = (self.fr, self.fc);
        for k in 0..d {
            let top = p00[k] * (1.0 - fc) + p01[k] * fc;
            let bottom = p10[k] * (1.0 - fc) + p11[k] * fc;
            out[k] = top * (1.0 - fr) + bottom * fr;
        }
    }
}

/// Bilinear lookup in one `h x w` plane at a fractional (row, col), clamping
/// the coordinate to the plane.
#[inline]
pub fn sample_plane(plane: &[f32], h: usize, w: usize, row: f32, col: f32) -> f32 {
    BilinearTap::new(h, w, row, col).sample(plane)
}

/// Samples every channel of `t` at the coordinates in `coords`.
///
/// `coords` has shape `(n, 2, h_out, w_out)` holding rows in channel 0 and
/// columns in channel 1.
pub fn bilinear_sample(t: &Tensor, coords: &Tensor) -> Result<Tensor> {
    let s = t.shape;
    let cs = coords.shape;
    if cs.n != s.n || cs.c != 2 {
        return Err(Error::invalid(format!("coordinate tensor {cs} incompatible with {s}")));
    }
    let out_shape = Shape::new(s.n, s.c, cs.h, cs.w);
    let mut out = Tensor::zeros(out_shape);
    for n in 0..s.n {
        let rows = coords.plane(n, 0);
        let cols = coords.plane(n, 1);
        for c in 0..s.c {
            let src = t.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (k, d) in dst.iter_mut().enumerate() {
                *d = sample_plane(src, s.h, s.w, rows[k], cols[k]);
            }
        }
    }
    Ok(out)
}

/// Global average pooling to shape `(n, c, 1, 1)`.
pub fn reduce_mean_spatial(t: &Tensor) -> Result<Tensor> {
    let s = t.shape;
    if s.plane() == 0 {
        return Err(Error::invalid("mean over an empty spatial grid"));
    }
    let mut out = Vec::with_capacity(s.n * s.c);
    for n in 0..s.n {
        for c in 0..s.c {
            let sum: f32 = t.plane(n, c).iter().fold(0.0, |acc, &v| acc + v);
            out.push(sum / s.plane() as f32);
        }
    }
    Ok(Tensor::from_raw(Shape::new(s.n, s.c, 1, 1), out))
}

/// Multiplies channel `c` by `q_vec[c]`.
pub fn apply_rate_vector(t: &Tensor, q_vec: &[f32]) -> Result<Tensor> {
    let s = t.shape;
    if q_vec.len() != s.c {
        return Err(Error::invalid(format!(
            "rate vector has {} entries for {} channels",
            q_vec.len(),
            s.c
        )));
    }
    let mut out = t.clone();
    for n in 0..s.n {
        for (c, &q) in q_vec.iter().enumerate() {
            for v in out.plane_mut(n, c) {
                *v *= q;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t4(c: usize, h: usize, w: usize, f: impl FnMut(usize, usize, usize, usize) -> f32) -> Tensor {
        Tensor::from_fn(Shape::new(1, c, h, w), f)
    }

    #[test]
    fn new_rejects_bad_length_and_nan() {
        assert!(Tensor::new(Shape::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
        assert!(Tensor::new(Shape::new(1, 1, 1, 1), vec![f32::NAN]).is_err());
    }

    #[test]
    fn depthwise_zero_kernel_gives_zero() {
        let x = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
        let k = Tensor::zeros(Shape::new(1, 1, 3, 3));
        let y = depthwise_conv(&x, &k, 1, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn depthwise_identity_kernel() {
        let x = t4(2, 4, 5, |_, c, i, j| (c * 20 + i * 5 + j) as f32);
        let k = Tensor::from_fn(
            Shape::new(2, 1, 3, 3),
            |_, _, i, j| {
                if i == 1 && j == 1 {
                    1.0
                } else {
                    0.0
                }
            },
        );
        assert_eq!(depthwise_conv(&x, &k, 1, 1).unwrap(), x);
    }

    #[test]
    fn depthwise_box_sum_on_ramp() {
        let x = t4(1, 4, 4, |_, _, i, j| (i * 4 + j) as f32);
        let k = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
        let y = depthwise_conv(&x, &k, 1, 1).unwrap();
        // neighbourhood of (1,1): rows 0..=2, cols 0..=2 of the ramp
        let expected: f32 = [0, 1, 2, 4, 5, 6, 8, 9, 10].iter().map(|&v| v as f32).sum();
        assert_eq!(y.at(0, 0, 1, 1), expected);
        assert_eq!(y.at(0, 0, 1, 1), 45.0);
        // corner only sees the 2x2 interior neighbourhood
        assert_eq!(y.at(0, 0, 0, 0), 0.0 + 1.0 + 4.0 + 5.0);
    }

    #[test]
    fn depthwise_stride_two_shape() {
        let x = Tensor::zeros(Shape::new(1, 3, 8, 6));
        let k = Tensor::zeros(Shape::new(3, 1, 3, 3));
        assert_eq!(depthwise_conv(&x, &k, 2, 1).unwrap().shape(), Shape::new(1, 3, 4, 3));
        let bad = Tensor::zeros(Shape::new(2, 1, 3, 3));
        assert!(depthwise_conv(&x, &bad, 1, 1).is_err());
    }

    #[test]
    fn depthwise_matches_nested_loops() {
        let x = Tensor::from_fn(Shape::new(2, 3, 5, 7), |n, c, i, j| {
            ((n * 13 + c * 7 + i * 5 + j * 3) % 11) as f32 * 0.37 - 1.1
        });
        for (kh, kw, pad) in [(3, 3, 1), (5, 5, 2), (3, 1, 0), (1, 3, 2), (4, 2, 1)] {
            let k = Tensor::from_fn(Shape::new(3, 1, kh, kw), |c, _, i, j| {
                ((c * 5 + i * 3 + j) % 7) as f32 * 0.21 - 0.6
            });
            let y = depthwise_conv(&x, &k, 1, pad).unwrap();
            let ys = y.shape();
            for n in 0..2 {
                for c in 0..3 {
                    for oy in 0..ys.h {
                        for ox in 0..ys.w {
                            let mut acc = 0.0f32;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let (iy, ix) = (
                                        oy as isize + ky as isize - pad as isize,
                                        ox as isize + kx as isize - pad as isize,
                                    );
                                    if iy >= 0 && ix >= 0 && (iy as usize) < 5 && (ix as usize) < 7 {
                                        acc += k.at(c, 0, ky, kx) * x.at(n, c, iy as usize, ix as usize);
                                    }
                                }
                            }
                            assert_eq!(y.at(n, c, oy, ox).to_bits(), acc.to_bits());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn linear_mix_matches_nested_loops() {
        let x = Tensor::from_fn(Shape::new(2, 6, 3, 5), |n, c, i, j| {
            ((n * 3 + c * 7 + i * 5 + j) % 13) as f32 * 0.3 - 1.7
        });
        for c_out in [1, 4, 9] {
            let w = Tensor::from_fn(Shape::new(c_out, 6, 1, 1), |o, i, _, _| {
                ((o * 5 + i * 3) % 7) as f32 * 0.4 - 1.0
            });
            let b = Tensor::from_fn(Shape::new(1, c_out, 1, 1), |_, o, _, _| o as f32 * 0.1);
            let y = linear_mix(&x, &w, &b).unwrap();
            for n in 0..2 {
                for o in 0..c_out {
                    for i in 0..3 {
                        for j in 0..5 {
                            let mut acc = b.data()[o];
                            for c in 0..6 {
                                acc += w.at(o, c, 0, 0) * x.at(n, c, i, j);
                            }
                            assert_eq!(y.at(n, o, i, j).to_bits(), acc.to_bits());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn linear_mix_cases() {
        let x = t4(2, 1, 1, |_, c, _, _| [1.0, 2.0][c]);
        let w = Tensor::new(Shape::new(2, 2, 1, 1), vec![1.0, 1.0, 1.0, -1.0]).unwrap();
        let b = Tensor::zeros(Shape::new(1, 2, 1, 1));
        let y = linear_mix(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[3.0, -1.0]);

        let eye = Tensor::new(Shape::new(2, 2, 1, 1), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(linear_mix(&x, &eye, &b).unwrap(), x);

        let zero = Tensor::zeros(Shape::new(3, 2, 1, 1));
        let bias = Tensor::new(Shape::new(1, 3, 1, 1), vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(linear_mix(&x, &zero, &bias).unwrap().data(), &[0.5, -1.0, 2.0]);
        assert!(linear_mix(&x, &Tensor::zeros(Shape::new(2, 3, 1, 1)), &b).is_err());
    }

    #[test]
    fn wsilu_values() {
        let x = Tensor::new(Shape::new(1, 3, 1, 1), vec![0.0, 1.0, 20.0]).unwrap();
        let y = wsilu(&x);
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 0.982_013_8).abs() < 1e-5);
        assert!((y.data()[2] - 20.0).abs() < 1e-4);
    }

    #[test]
    fn pixel_unshuffle_index_map() {
        let x = Tensor::new(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_unshuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 4, 1, 1));
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(pixel_unshuffle(&x, 1).unwrap(), x);
        assert!(pixel_unshuffle(&x, 3).is_err());
        assert!(pixel_shuffle(&x, 2).is_err());
    }

    #[test]
    fn pixel_shuffle_inverts_unshuffle() {
        let x = t4(3, 16, 24, |_, c, i, j| (c * 1000 + i * 31 + j * 7) as f32 * 0.25);
        let y = pixel_shuffle(&pixel_unshuffle(&x, 8).unwrap(), 8).unwrap();
        assert!(y.bit_eq(&x));
    }

    #[test]
    fn spatial_shift_groups() {
        let (c, h, w) = (8, 3, 3);
        for ch in 0..c {
            let x = t4(
                c,
                h,
                w,
                |_, cc, i, j| if cc == ch && i == 1 && j == 1 { 1.0 } else { 0.0 },
            );
            let y = spatial_shift(&x).unwrap();
            let expected = match ch {
                0 => (1, 2),
                1 => (1, 0),
                2 => (2, 1),
                3 => (0, 1),
                _ => (1, 1),
            };
            assert_eq!(y.at(0, ch, expected.0, expected.1), 1.0, "channel {ch}");
            assert_eq!(y.plane(0, ch).iter().sum::<f32>(), 1.0);
        }
        // right-shift falls off the border
        let x = t4(
            8,
            2,
            2,
            |_, cc, i, j| if cc == 0 && i == 0 && j == 1 { 1.0 } else { 0.0 },
        );
        assert!(spatial_shift(&x).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(spatial_shift(&Tensor::zeros(Shape::new(1, 6, 2, 2))).is_err());
    }

    #[test]
    fn channel_shuffle_permutation() {
        let x = t4(4, 1, 1, |_, c, _, _| c as f32);
        let y = channel_shuffle(&x, 2).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0, 1.0, 3.0]);
        assert_eq!(channel_shuffle(&y, 2).unwrap(), x);
        assert_eq!(channel_shuffle(&x, 1).unwrap(), x);
        assert!(channel_shuffle(&x, 3).is_err());
    }

    #[test]
    fn bilinear_cases() {
        let x = Tensor::new(Shape::new(1, 1, 2, 2), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let coords = Tensor::new(Shape::new(1, 2, 1, 3), vec![0.25, 1.0, -5.0, 0.75, 0.0, 9.0]).unwrap();
        let y = bilinear_sample(&x, &coords).unwrap();
        // (0.25, 0.75): 0.75*(0.25*0 + 0.75*1) + 0.25*(0.25*2 + 0.75*3)
        assert!((y.data()[0] - 1.25).abs() < 1e-6);
        assert_eq!(y.data()[1], 2.0);
        // clamped to (0, 1)
        assert_eq!(y.data()[2], 1.0);
        let line = [0.0f32, 1.0];
        assert_eq!(sample_plane(&line, 1, 2, 0.0, 0.5), 0.5);
    }

    #[test]
    fn mean_spatial_cases() {
        let x = Tensor::new(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(reduce_mean_spatial(&x).unwrap().data(), &[2.5]);
        let k = Tensor::full(Shape::new(2, 3, 5, 5), 0.7);
        let m = reduce_mean_spatial(&k).unwrap();
        assert!(m.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
        let centered = x.map(|v| v - 2.5);
        assert!(reduce_mean_spatial(&centered).unwrap().data()[0].abs() < 1e-6);
    }

    #[test]
    fn rate_vector_scales_channels() {
        let x = t4(3, 2, 2, |_, c, i, j| (c + i + j) as f32 + 0.5);
        assert_eq!(apply_rate_vector(&x, &[1.0; 3]).unwrap(), x);
        assert!(apply_rate_vector(&x, &[0.0; 3])
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let y = apply_rate_vector(&x, &[2.0, 0.5, -1.0]).unwrap();
        assert_eq!(y.at(0, 1, 1, 0), x.at(0, 1, 1, 0) * 0.5);
        assert_eq!(y.at(0, 2, 0, 1), -x.at(0, 2, 0, 1));
        assert!(apply_rate_vector(&x, &[1.0; 2]).is_err());
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let a = t4(2, 2, 3, |_, c, i, j| (c * 6 + i * 3 + j) as f32);
        let b = t4(3, 2, 3, |_, c, i, j| -((c * 6 + i * 3 + j) as f32));
        let cat = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape().c, 5);
        assert_eq!(cat.slice_channels(0, 2).unwrap(), a);
        assert_eq!(cat.slice_channels(2, 3).unwrap(), b);
    }

    #[test]
    fn pad_and_crop() {
        let x = t4(1, 2, 2, |_, _, i, j| (i * 2 + j) as f32);
        let p = x.pad_replicate(1, 2);
        assert_eq!(p.shape(), Shape::new(1, 1, 4, 3));
        assert_eq!(p.at(0, 0, 3, 2), 3.0);
        assert_eq!(p.crop(2, 2).unwrap(), x);
        assert_eq!(x.pad_zero(1, 1).at(0, 0, 2, 2), 0.0);
    }
}
