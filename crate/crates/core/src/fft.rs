//! Radix-2 2-D FFT over the last two axes.
//!
//! Forward transform is unnormalized; the inverse carries `1/(H*W)` so
//! `ifft2(fft2(x)) == x`. Leading axes are treated as a batch.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

pub fn fft2(x: &ComplexTensor) -> Result<ComplexTensor> {
    transform(x, false)
}

pub fn ifft2(x: &ComplexTensor) -> Result<ComplexTensor> {
    transform(x, true)
}

/// Validates that the last two axes are powers of two and returns `(batch, h, w)`.
pub fn spatial_extents(dims: &[usize]) -> Result<(usize, usize, usize)> {
    let rank = dims.len();
    if rank < 2 {
        return Err(Error::shape(format!("fft2 needs rank >= 2, got {dims:?}")));
    }
    for axis in [rank - 2, rank - 1] {
        if !dims[axis].is_power_of_two() {
            return Err(Error::Sizing {
                axis,
                extent: dims[axis],
            });
        }
    }
    let (h, w) = (dims[rank - 2], dims[rank - 1]);
    Ok((dims[..rank - 2].iter().product(), h, w))
}

fn transform(x: &ComplexTensor, inverse: bool) -> Result<ComplexTensor> {
    let (batch, h, w) = spatial_extents(x.dims())?;
    let mut out = x.clone();
    let row_tw = twiddles(w, inverse);
    let col_tw = twiddles(h, inverse);
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    let data = out.data_mut();
    for b in 0..batch {
        let plane = &mut data[b * h * w..(b + 1) * h * w];
        for row in plane.chunks_exact_mut(w) {
            fft_in_place(row, &row_tw);
        }
        for j in 0..w {
            for i in 0..h {
                column[i] = plane[i * w + j];
            }
            fft_in_place(&mut column, &col_tw);
            for i in 0..h {
                plane[i * w + j] = column[i];
            }
        }
    }
    if inverse {
        let scale = 1.0 / (h * w) as f64;
        for z in data.iter_mut() {
            *z *= scale;
        }
    }
    Ok(out)
}

fn twiddles(n: usize, inverse: bool) -> Vec<Complex64> {
    let sign = if inverse { 1.0 } else { -1.0 };
    (0..n / 2)
        .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / n as f64))
        .collect()
}

/// Iterative Cooley-Tukey; `twiddles[k] = exp(∓2πik/n)` for the full length `n`.
fn fft_in_place(buf: &mut [Complex64], twiddles: &[Complex64]) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let t = twiddles[k * stride] * buf[start + k + half];
                let u = buf[start + k];
                buf[start + k] = u + t;
                buf[start + k + half] = u - t;
            }
        }
        len <<= 1;
    }
}
