//! Forward kernels shared by the tape and by inference code.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero border so the output keeps the input extent (odd kernels only).
    Same,
    Valid,
}

/// Dense `[m, k] x [k, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    gemm(a, false, b, false)
}

/// `op(a) x op(b)` where `op` optionally transposes a rank-2 operand.
pub fn gemm(a: &Tensor, a_t: bool, b: &Tensor, b_t: bool) -> Result<Tensor> {
    let [ar, ac] = a.dims2()?;
    let [br, bc] = b.dims2()?;
    let (m, k, rsa, csa) = if a_t {
        (ac, ar, 1, ac)
    } else {
        (ar, ac, ac, 1)
    };
    let (k2, n, rsb, csb) = if b_t {
        (bc, br, 1, bc)
    } else {
        (br, bc, bc, 1)
    };
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul inner extents differ: {:?}{} x {:?}{}",
            a.dims(),
            if a_t { "ᵀ" } else { "" },
            b.dims(),
            if b_t { "ᵀ" } else { "" }
        )));
    }
    let mut out = vec![0.0; m * n];
    // SAFETY: slices are sized m*k, k*n and m*n with the strides computed above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data().as_ptr(),
            rsa as isize,
            csa as isize,
            b.data().as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Tensor::new(&[m, n], out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let [r, c] = a.dims2()?;
    let src = a.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    Tensor::new(&[c, r], out)
}

/// Softmax along `axis`, max-subtracted.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let dims = x.dims();
    if axis >= dims.len() {
        return Err(Error::shape(format!(
            "softmax axis {axis} out of range for {dims:?}"
        )));
    }
    let n = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * n * inner + k * inner + i;
            let max = (0..n).map(|k| src[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..n {
                let e = (src[at(k)] - max).exp();
                out[at(k)] = e;
                total += e;
            }
            for k in 0..n {
                out[at(k)] /= total;
            }
        }
    }
    Tensor::new(dims, out)
}

pub(crate) struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

pub(crate) fn conv_geometry(
    x: &Tensor,
    k: &Tensor,
    padding: Padding,
) -> Result<(usize, ConvGeometry)> {
    let [c_in, h, w] = x.dims3()?;
    let (c_out, kc, kh, kw) = match k.dims() {
        &[a, b, c, d] => (a, b, c, d),
        d => {
            return Err(Error::shape(format!(
                "conv kernel must be rank 4, got {d:?}"
            )))
        }
    };
    if kc != c_in {
        return Err(Error::shape(format!(
            "conv channel mismatch: input {c_in}, kernel {kc}"
        )));
    }
    let (pad_h, pad_w) = match padding {
        Padding::Same => {
            if kh % 2 == 0 || kw % 2 == 0 {
                return Err(Error::shape(format!(
                    "same padding needs odd kernel, got {kh}x{kw}"
                )));
            }
            (kh / 2, kw / 2)
        }
        Padding::Valid => (0, 0),
    };
    if h + 2 * pad_h < kh || w + 2 * pad_w < kw {
        return Err(Error::shape(format!(
            "kernel {kh}x{kw} larger than input {h}x{w}"
        )));
    }
    let out_h = h + 2 * pad_h - kh + 1;
    let out_w = w + 2 * pad_w - kw + 1;
    Ok((
        c_out,
        ConvGeometry {
            c_in,
            h,
            w,
            kh,
            kw,
            pad_h,
            pad_w,
            out_h,
            out_w,
        },
    ))
}

/// Output columns `oj` for which input column `oj + dj - pad_w` lies inside the image.
fn valid_cols(dj: usize, g: &ConvGeometry) -> (usize, usize) {
    let lo = g.pad_w.saturating_sub(dj);
    let hi = (g.w + g.pad_w).saturating_sub(dj).min(g.out_w);
    (lo, hi.max(lo))
}

/// `[C_in*kh*kw, out_h*out_w]` patch matrix.
pub(crate) fn im2col(x: &[f64], g: &ConvGeometry) -> Tensor {
    let rows = g.c_in * g.kh * g.kw;
    let cols = g.out_h * g.out_w;
    let mut out = vec![0.0; rows * cols];
    for c in 0..g.c_in {
        for di in 0..g.kh {
            for dj in 0..g.kw {
                let row = (c * g.kh + di) * g.kw + dj;
                let dst = &mut out[row * cols..(row + 1) * cols];
                let (lo, hi) = valid_cols(dj, g);
                for oi in 0..g.out_h {
                    let ii = oi + di;
                    if ii < g.pad_h || ii - g.pad_h >= g.h || lo == hi {
                        continue;
                    }
                    let src = c * g.h * g.w + (ii - g.pad_h) * g.w + lo + dj - g.pad_w;
                    dst[oi * g.out_w + lo..oi * g.out_w + hi]
                        .copy_from_slice(&x[src..src + hi - lo]);
                }
            }
        }
    }
    Tensor::new(&[rows, cols], out).expect("im2col shape")
}

/// Adjoint of [`im2col`].
pub(crate) fn col2im(col: &Tensor, g: &ConvGeometry) -> Vec<f64> {
    let cols = g.out_h * g.out_w;
    let src = col.data();
    let mut out = vec![0.0; g.c_in * g.h * g.w];
    for c in 0..g.c_in {
        for di in 0..g.kh {
            for dj in 0..g.kw {
                let row = (c * g.kh + di) * g.kw + dj;
                let s = &src[row * cols..(row + 1) * cols];
                let (lo, hi) = valid_cols(dj, g);
                for oi in 0..g.out_h {
                    let ii = oi + di;
                    if ii < g.pad_h || ii - g.pad_h >= g.h || lo == hi {
                        continue;
                    }
                    let base = c * g.h * g.w + (ii - g.pad_h) * g.w + lo + dj - g.pad_w;
                    for (o, v) in out[base..base + hi - lo]
                        .iter_mut()
                        .zip(&s[oi * g.out_w + lo..oi * g.out_w + hi])
                    {
                        *o += v;
                    }
                }
            }
        }
    }
    out
}

/// Cross-correlation of `x: [C_in, H, W]` with `k: [C_out, C_in, kh, kw]`.
pub fn conv2d(x: &Tensor, k: &Tensor, padding: Padding) -> Result<Tensor> {
    let (c_out, g) = conv_geometry(x, k, padding)?;
    let col = im2col(x.data(), &g);
    let kmat = k.clone().reshape(&[c_out, g.c_in * g.kh * g.kw])?;
    matmul(&kmat, &col)?.reshape(&[c_out, g.out_h, g.out_w])
}

/// `[C*r*r, H, W] -> [C, r*H, r*W]` with `out(c, r*i+di, r*j+dj) = in(c*r*r + di*r + dj, i, j)`.
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let [cr2, h, w] = x.dims3()?;
    if r == 0 || cr2 % (r * r) != 0 {
        return Err(Error::shape(format!(
            "pixel_shuffle: {cr2} channels not divisible by {r}²"
        )));
    }
    let c = cr2 / (r * r);
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    let (oh, ow) = (h * r, w * r);
    for ch in 0..c {
        for di in 0..r {
            for dj in 0..r {
                let ic = ch * r * r + di * r + dj;
                for i in 0..h {
                    for j in 0..w {
                        out[ch * oh * ow + (r * i + di) * ow + r * j + dj] =
                            src[ic * h * w + i * w + j];
                    }
                }
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let [c, oh, ow] = x.dims3()?;
    if r == 0 || oh % r != 0 || ow % r != 0 {
        return Err(Error::shape(format!(
            "pixel_unshuffle: {oh}x{ow} not divisible by {r}"
        )));
    }
    let (h, w) = (oh / r, ow / r);
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for di in 0..r {
            for dj in 0..r {
                let oc = ch * r * r + di * r + dj;
                for i in 0..h {
                    for j in 0..w {
                        out[oc * h * w + i * w + j] =
                            src[ch * oh * ow + (r * i + di) * ow + r * j + dj];
                    }
                }
            }
        }
    }
    Tensor::new(&[c * r * r, h, w], out)
}

/// `[C, H, W] -> [N, C*P*P]`, tokens in row-major patch order.
pub fn patchify(x: &Tensor, p: usize) -> Result<Tensor> {
    let [c, h, w] = x.dims3()?;
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::shape(format!(
            "patch size {p} does not divide {h}x{w}"
        )));
    }
    let (gh, gw) = (h / p, w / p);
    let dim = c * p * p;
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for gi in 0..gh {
        for gj in 0..gw {
            let row = &mut out[(gi * gw + gj) * dim..][..dim];
            for ch in 0..c {
                for di in 0..p {
                    let s = &src[ch * h * w + (gi * p + di) * w + gj * p..][..p];
                    row[(ch * p + di) * p..][..p].copy_from_slice(s);
                }
            }
        }
    }
    Tensor::new(&[gh * gw, dim], out)
}

/// Inverse of [`patchify`] for a `(gh, gw)` token grid.
pub fn unpatchify(tokens: &Tensor, c: usize, p: usize, gh: usize, gw: usize) -> Result<Tensor> {
    let [n, dim] = tokens.dims2()?;
    if n != gh * gw || dim != c * p * p {
        return Err(Error::shape(format!(
            "unpatchify: tokens {:?} do not match grid {gh}x{gw}, C={c}, P={p}",
            tokens.dims()
        )));
    }
    let (h, w) = (gh * p, gw * p);
    let src = tokens.data();
    let mut out = vec![0.0; src.len()];
    for gi in 0..gh {
        for gj in 0..gw {
            let row = &src[(gi * gw + gj) * dim..][..dim];
            for ch in 0..c {
                for di in 0..p {
                    out[ch * h * w + (gi * p + di) * w + gj * p..][..p]
                        .copy_from_slice(&row[(ch * p + di) * p..][..p]);
                }
            }
        }
    }
    Tensor::new(&[c, h, w], out)
}
