//! Convolution kernels: im2col + GEMM for the strided case and a direct
//! GEMM formulation for the 2x2 / stride-2 transposed convolution.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Symmetric zero padding of this many pixels on every side.
    Explicit(usize),
    /// `floor(k / 2)` on every side; odd kernels and stride 1 only.
    Same,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn square(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: Padding) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
        }
    }

    /// 3x3, stride 1, same padding.
    pub fn same3x3(in_channels: usize, out_channels: usize) -> Self {
        Self::square(in_channels, out_channels, 3, 1, Padding::Same)
    }

    /// 1x1 pointwise convolution.
    pub fn pointwise(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        Self::square(in_channels, out_channels, 1, stride, Padding::Explicit(0))
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::InvalidSpec("kernel extents must be >= 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::InvalidSpec("stride must be >= 1".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidSpec("channel counts must be >= 1".into()));
        }
        if self.padding == Padding::Same {
            if self.stride != 1 {
                return Err(Error::InvalidSpec("same padding requires stride 1".into()));
            }
            if self.kernel_h.is_multiple_of(2) || self.kernel_w.is_multiple_of(2) {
                return Err(Error::InvalidSpec("same padding requires odd kernel extents".into()));
            }
        }
        Ok(())
    }

    /// Padding in pixels as (rows, cols).
    pub fn pad(&self) -> (usize, usize) {
        match self.padding {
            Padding::Explicit(p) => (p, p),
            Padding::Same => (self.kernel_h / 2, self.kernel_w / 2),
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let (ph, pw) = self.pad();
        let span_h = h + 2 * ph;
        let span_w = w + 2 * pw;
        if span_h < self.kernel_h || span_w < self.kernel_w {
            return Err(Error::shape(format!(
                "kernel {}x{} larger than padded input {span_h}x{span_w}",
                self.kernel_h, self.kernel_w
            )));
        }
        Ok((
            (span_h - self.kernel_h) / self.stride + 1,
            (span_w - self.kernel_w) / self.stride + 1,
        ))
    }
}

/// Row-major GEMM `c = beta * c + op(a) * op(b)` where `op(a)` is `m x k` and
/// `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slice lengths were checked against the stated extents and
    // the strides describe dense row-major (or transposed) layouts inside them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    stride: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.ph == 0 && self.pw == 0
    }
}

fn im2col(g: &Geometry, input: &[f64], cols: &mut [f64]) {
    let plane = g.ho * g.wo;
    for c in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.ph as isize;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &input[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pw as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(g: &Geometry, cols: &[f64], out: &mut [f64]) {
    let plane = g.ho * g.wo;
    for c in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pw as isize;
                        if ix >= 0 && ix < g.w as isize {
                            out[base + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn geometry(input: &Tensor, weight: &Tensor, spec: &ConvSpec) -> Result<(usize, Geometry)> {
    spec.validate()?;
    let (n, c, h, w) = input.dims4()?;
    if c != spec.in_channels {
        return Err(Error::ChannelMismatch {
            expected: spec.in_channels,
            got: c,
        });
    }
    if weight.shape() != spec.weight_shape() {
        return Err(Error::shape(format!(
            "conv weight shape {:?} does not match spec {:?}",
            weight.shape(),
            spec.weight_shape()
        )));
    }
    let (ho, wo) = spec.output_extent(h, w)?;
    let (ph, pw) = spec.pad();
    Ok((
        n,
        Geometry {
            c,
            h,
            w,
            kh: spec.kernel_h,
            kw: spec.kernel_w,
            ph,
            pw,
            stride: spec.stride,
            ho,
            wo,
        },
    ))
}

/// Cross-correlation of `input [N, C, H, W]` with `weight [F, C, kh, kw]`.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    let (n, g) = geometry(input, weight, spec)?;
    let f = spec.out_channels;
    if let Some(b) = bias {
        if b.len() != f {
            return Err(Error::shape(format!("bias length {} != out channels {f}", b.len())));
        }
    }
    let kdim = g.c * g.kh * g.kw;
    let plane = g.ho * g.wo;
    let in_per = g.c * g.h * g.w;
    let mut out = Tensor::zeros([n, f, g.ho, g.wo]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; kdim * plane] };
    for s in 0..n {
        let x = &input.data()[s * in_per..(s + 1) * in_per];
        let y = &mut out.data_mut()[s * f * plane..(s + 1) * f * plane];
        let b_mat: &[f64] = if g.is_pointwise() {
            x
        } else {
            im2col(&g, x, &mut cols);
            &cols
        };
        gemm(f, kdim, plane, weight.data(), false, b_mat, false, 0.0, y);
        if let Some(b) = bias {
            for (fi, row) in y.chunks_mut(plane).enumerate() {
                let bv = b.data()[fi];
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

/// Gradients of [`conv2d`] given the upstream gradient `grad_out`.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
    want: [bool; 3],
) -> Result<ConvGrads> {
    let (n, g) = geometry(input, weight, spec)?;
    let f = spec.out_channels;
    let kdim = g.c * g.kh * g.kw;
    let plane = g.ho * g.wo;
    let in_per = g.c * g.h * g.w;
    if grad_out.shape() != [n, f, g.ho, g.wo] {
        return Err(Error::shape("conv2d upstream gradient shape mismatch"));
    }
    let mut gx = want[0].then(|| Tensor::zeros(input.shape().to_vec()));
    let mut gw = want[1].then(|| Tensor::zeros(weight.shape().to_vec()));
    let mut gb = want[2].then(|| Tensor::zeros([f]));
    let mut cols = vec![0.0; kdim * plane];
    for s in 0..n {
        let x = &input.data()[s * in_per..(s + 1) * in_per];
        let dy = &grad_out.data()[s * f * plane..(s + 1) * f * plane];
        if let Some(gw) = gw.as_mut() {
            let b_mat: &[f64] = if g.is_pointwise() {
                x
            } else {
                im2col(&g, x, &mut cols);
                &cols
            };
            // dW [F, kdim] += dY [F, plane] * cols^T [plane, kdim]
            gemm(f, plane, kdim, dy, false, b_mat, true, 1.0, gw.data_mut());
        }
        if let Some(gx) = gx.as_mut() {
            let dx = &mut gx.data_mut()[s * in_per..(s + 1) * in_per];
            if g.is_pointwise() {
                gemm(kdim, f, plane, weight.data(), true, dy, false, 0.0, dx);
            } else {
                gemm(kdim, f, plane, weight.data(), true, dy, false, 0.0, &mut cols);
                col2im(&g, &cols, dx);
            }
        }
        if let Some(gb) = gb.as_mut() {
            for (fi, row) in dy.chunks(plane).enumerate() {
                gb.data_mut()[fi] += row.iter().sum::<f64>();
            }
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

fn transpose_dims(input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    let (wc, f, kh, kw) = weight.dims4()?;
    if kh != 2 || kw != 2 {
        return Err(Error::InvalidSpec(format!(
            "transposed convolution supports only 2x2 kernels with stride 2, got {kh}x{kw}"
        )));
    }
    if wc != c {
        return Err(Error::ChannelMismatch { expected: wc, got: c });
    }
    Ok((n, c, h, w, f))
}

/// 2x2 / stride-2 transposed convolution. `weight` is `[C_in, F, 2, 2]`;
/// output is `[N, F, 2H, 2W]`.
pub fn conv2d_transpose(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (n, c, h, w, f) = transpose_dims(input, weight)?;
    if let Some(b) = bias {
        if b.len() != f {
            return Err(Error::shape(format!("bias length {} != out channels {f}", b.len())));
        }
    }
    let plane = h * w;
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = Tensor::zeros([n, f, ho, wo]);
    let mut y = vec![0.0; f * 4 * plane];
    for s in 0..n {
        let x = &input.data()[s * c * plane..(s + 1) * c * plane];
        // Y [F*4, HW] = W^T [F*4, C] * X [C, HW]
        gemm(f * 4, c, plane, weight.data(), true, x, false, 0.0, &mut y);
        let o = &mut out.data_mut()[s * f * ho * wo..(s + 1) * f * ho * wo];
        for fi in 0..f {
            let bv = bias.map_or(0.0, |b| b.data()[fi]);
            for a in 0..2 {
                for b in 0..2 {
                    let row = &y[(fi * 4 + a * 2 + b) * plane..(fi * 4 + a * 2 + b + 1) * plane];
                    for i in 0..h {
                        for j in 0..w {
                            o[(fi * ho + 2 * i + a) * wo + 2 * j + b] = row[i * w + j] + bv;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn conv2d_transpose_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    want: [bool; 3],
) -> Result<ConvGrads> {
    let (n, c, h, w, f) = transpose_dims(input, weight)?;
    let plane = h * w;
    let (ho, wo) = (2 * h, 2 * w);
    if grad_out.shape() != [n, f, ho, wo] {
        return Err(Error::shape("transposed conv upstream gradient shape mismatch"));
    }
    let mut gx = want[0].then(|| Tensor::zeros(input.shape().to_vec()));
    let mut gw = want[1].then(|| Tensor::zeros(weight.shape().to_vec()));
    let mut gb = want[2].then(|| Tensor::zeros([f]));
    let mut gy = vec![0.0; f * 4 * plane];
    for s in 0..n {
        let dy = &grad_out.data()[s * f * ho * wo..(s + 1) * f * ho * wo];
        for fi in 0..f {
            for a in 0..2 {
                for b in 0..2 {
                    let row = &mut gy[(fi * 4 + a * 2 + b) * plane..(fi * 4 + a * 2 + b + 1) * plane];
                    for i in 0..h {
                        for j in 0..w {
                            row[i * w + j] = dy[(fi * ho + 2 * i + a) * wo + 2 * j + b];
                        }
                    }
                }
            }
            if let Some(gb) = gb.as_mut() {
                gb.data_mut()[fi] += dy[fi * ho * wo..(fi + 1) * ho * wo].iter().sum::<f64>();
            }
        }
        let x = &input.data()[s * c * plane..(s + 1) * c * plane];
        if let Some(gx) = gx.as_mut() {
            // dX [C, HW] = W [C, F*4] * dY' [F*4, HW]
            let dx = &mut gx.data_mut()[s * c * plane..(s + 1) * c * plane];
            gemm(c, f * 4, plane, weight.data(), false, &gy, false, 0.0, dx);
        }
        if let Some(gw) = gw.as_mut() {
            // dW [C, F*4] += X [C, HW] * dY'^T [HW, F*4]
            gemm(c, plane, f * 4, x, false, &gy, true, 1.0, gw.data_mut());
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(input: &Tensor, weight: &Tensor, bias: &[f64], spec: &ConvSpec) -> Tensor {
        let (n, c, h, w) = input.dims4().unwrap();
        let (ho, wo) = spec.output_extent(h, w).unwrap();
        let (ph, pw) = spec.pad();
        let f = spec.out_channels;
        let mut out = Tensor::zeros([n, f, ho, wo]);
        for s in 0..n {
            for fi in 0..f {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = bias[fi];
                        for ci in 0..c {
                            for ky in 0..spec.kernel_h {
                                for kx in 0..spec.kernel_w {
                                    let iy = (oy * spec.stride + ky) as isize - ph as isize;
                                    let ix = (ox * spec.stride + kx) as isize - pw as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += input.at4(s, ci, iy as usize, ix as usize)
                                            * weight.at4(fi, ci, ky, kx);
                                    }
                                }
                            }
                        }
                        out.data_mut()[((s * f + fi) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn three_by_three_all_ones_sums_window() {
        let input = Tensor::new([1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let weight = Tensor::full([1, 1, 3, 3], 1.0);
        let spec = ConvSpec::square(1, 1, 3, 1, Padding::Explicit(0));
        let out = conv2d(&input, &weight, Some(&Tensor::zeros([1])), &spec).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data()[0], 45.0);
    }

    #[test]
    fn zero_input_yields_bias() {
        let input = Tensor::zeros([2, 3, 5, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let weight = Tensor::randn([4, 3, 3, 3], 1.0, &mut rng);
        let bias = Tensor::new([4], vec![0.5, -1.0, 2.0, 3.25]).unwrap();
        let out = conv2d(&input, &weight, Some(&bias), &ConvSpec::same3x3(3, 4)).unwrap();
        for s in 0..2 {
            for f in 0..4 {
                for y in 0..5 {
                    for x in 0..5 {
                        assert_eq!(out.at4(s, f, y, x), bias.data()[f]);
                    }
                }
            }
        }
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (k, stride, pad) in [(3, 1, Padding::Same), (3, 2, Padding::Explicit(1)), (1, 2, Padding::Explicit(0)), (5, 1, Padding::Explicit(2)), (2, 2, Padding::Explicit(0)), (7, 2, Padding::Explicit(3))] {
            let spec = ConvSpec::square(3, 4, k, stride, pad);
            let input = Tensor::randn([2, 3, 9, 8], 1.0, &mut rng);
            let weight = Tensor::randn(spec.weight_shape(), 1.0, &mut rng);
            let bias = Tensor::randn([4], 1.0, &mut rng);
            let fast = conv2d(&input, &weight, Some(&bias), &spec).unwrap();
            let slow = naive_conv(&input, &weight, bias.data(), &spec);
            assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12, "k={k} s={stride}");
        }
    }

    #[test]
    fn paper_first_layer_shape() {
        let input = Tensor::zeros([1, 1, 256, 256]);
        let weight = Tensor::zeros([64, 1, 3, 3]);
        let out = conv2d(&input, &weight, None, &ConvSpec::same3x3(1, 64)).unwrap();
        assert_eq!(out.shape(), &[1, 64, 256, 256]);
    }

    #[test]
    fn channel_mismatch_and_degenerate_output_rejected() {
        let input = Tensor::zeros([1, 2, 4, 4]);
        let weight = Tensor::zeros([1, 3, 3, 3]);
        assert!(matches!(
            conv2d(&input, &weight, None, &ConvSpec::same3x3(3, 1)),
            Err(Error::ChannelMismatch { .. })
        ));
        let spec = ConvSpec::square(2, 1, 5, 1, Padding::Explicit(0));
        assert!(conv2d(&input, &Tensor::zeros(spec.weight_shape()), None, &spec).is_err());
        assert!(ConvSpec::square(1, 1, 3, 2, Padding::Same).validate().is_err());
    }

    #[test]
    fn transpose_doubles_and_stamps_kernel() {
        let input = Tensor::zeros([1, 1, 8, 8]);
        let out = conv2d_transpose(&input, &Tensor::zeros([1, 3, 2, 2]), None).unwrap();
        assert_eq!(out.shape(), &[1, 3, 16, 16]);

        let single = Tensor::new([1, 1, 1, 1], vec![2.5]).unwrap();
        let out = conv2d_transpose(&single, &Tensor::full([1, 1, 2, 2], 1.0), None).unwrap();
        assert_eq!(out.data(), &[2.5; 4]);

        assert!(matches!(
            conv2d_transpose(&input, &Tensor::zeros([1, 1, 3, 3]), None),
            Err(Error::InvalidSpec(_))
        ));
    }
}
