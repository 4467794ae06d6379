//! Dynamic reverse-mode tape.
//!
//! Every operation appends a node whose value is computed eagerly. Node
//! indices are a topological order, so [`Tape::backward`] walks them in
//! reverse and accumulates into parents in a fixed order. Nodes that do not
//! depend on any gradient-requiring leaf never receive gradient storage.

mod gradcheck;

pub use gradcheck::{finite_diff_grad, gradient_check, relative_error};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft;
use crate::ops::{self, Padding};
use crate::tensor::{ComplexTensor, Tensor};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    AddChannel(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Conv2d {
        x: Var,
        k: Var,
        padding: Padding,
    },
    PixelShuffle(Var, usize),
    Patchify(Var, usize),
    Unpatchify {
        x: Var,
        p: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    ReplaceRows {
        x: Var,
        token: Var,
        rows: Vec<bool>,
    },
    Gelu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    Icn {
        x: Var,
        mask: Vec<bool>,
        mean: f64,
        std: f64,
        eps: f64,
    },
    FreqGate {
        x: Var,
        grid: (usize, usize),
        padded: (usize, usize),
        spectrum: ComplexTensor,
    },
    Sum(Var),
    MeanRows(Var),
    MaskedMse {
        pred: Var,
        target: Tensor,
        weights: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
    CosineDistance(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    warnings: Vec<String>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Number of nodes holding gradient storage.
    pub fn stored(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Diagnostics raised by degenerate inputs (empty masks, zero vectors).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        debug_assert!(value.is_finite() || !parents.is_empty(), "non-finite leaf");
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    /// `x[N, D] + b[D]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let [n, d] = self.value(x).dims2()?;
        let bias = self.value(b);
        if bias.numel() != d {
            return Err(Error::shape(format!(
                "row bias of {} for width {d}",
                bias.numel()
            )));
        }
        let mut v = self.value(x).clone();
        for row in v.data_mut().chunks_exact_mut(d) {
            for (a, &c) in row.iter_mut().zip(bias.data()) {
                *a += c;
            }
        }
        debug_assert_eq!(v.numel(), n * d);
        Ok(self.push(v, Op::AddRow(x, b), &[x, b]))
    }

    /// `x[C, H, W] + b[C]` broadcast over each plane.
    pub fn add_channel(&mut self, x: Var, b: Var) -> Result<Var> {
        let [c, h, w] = self.value(x).dims3()?;
        let bias = self.value(b);
        if bias.numel() != c {
            return Err(Error::shape(format!(
                "channel bias of {} for {c} channels",
                bias.numel()
            )));
        }
        let mut v = self.value(x).clone();
        for (plane, &bc) in v.data_mut().chunks_exact_mut(h * w).zip(bias.data()) {
            plane.iter_mut().for_each(|a| *a += bc);
        }
        Ok(self.push(v, Op::AddChannel(x, b), &[x, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = ops::transpose(self.value(a))?;
        Ok(self.push(v, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, dims: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(dims)?;
        Ok(self.push(v, Op::Reshape(a), &[a]))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, padding: Padding) -> Result<Var> {
        let v = ops::conv2d(self.value(x), self.value(k), padding)?;
        Ok(self.push(v, Op::Conv2d { x, k, padding }, &[x, k]))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let v = ops::pixel_shuffle(self.value(x), r)?;
        Ok(self.push(v, Op::PixelShuffle(x, r), &[x]))
    }

    pub fn patchify(&mut self, x: Var, p: usize) -> Result<Var> {
        let v = ops::patchify(self.value(x), p)?;
        Ok(self.push(v, Op::Patchify(x, p), &[x]))
    }

    pub fn unpatchify(&mut self, x: Var, c: usize, p: usize, grid: (usize, usize)) -> Result<Var> {
        let v = ops::unpatchify(self.value(x), c, p, grid.0, grid.1)?;
        Ok(self.push(v, Op::Unpatchify { x, p }, &[x]))
    }

    /// Columns `start..start+len` of a rank-2 value.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [n, d] = self.value(x).dims2()?;
        if len == 0 || start + len > d {
            return Err(Error::shape(format!(
                "column slice {start}..{} of width {d}",
                start + len
            )));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * len);
        for row in src.chunks_exact(d) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let v = Tensor::new(&[n, len], out)?;
        Ok(self.push(v, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of nothing"))?;
        let n = self.value(*first).dims2()?[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let [pn, pd] = self.value(p).dims2()?;
            if pn != n {
                return Err(Error::shape(format!("concat rows differ: {n} vs {pn}")));
            }
            widths.push(pd);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; n * total];
        let mut offset = 0;
        for (&p, &pd) in parts.iter().zip(&widths) {
            for (i, row) in self.value(p).data().chunks_exact(pd).enumerate() {
                out[i * total + offset..][..pd].copy_from_slice(row);
            }
            offset += pd;
        }
        let v = Tensor::new(&[n, total], out)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Gathers rows of a rank-2 value.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let [n, d] = self.value(x).dims2()?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::shape(format!("row {bad} out of range for {n} rows")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            out.extend_from_slice(&src[r * d..(r + 1) * d]);
        }
        let v = Tensor::new(&[rows.len(), d], out)?;
        Ok(self.push(
            v,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            &[x],
        ))
    }

    /// Rows flagged `true` are replaced by `token[D]`; others pass through unchanged.
    pub fn replace_rows(&mut self, x: Var, token: Var, rows: &[bool]) -> Result<Var> {
        let [n, d] = self.value(x).dims2()?;
        if rows.len() != n {
            return Err(Error::shape(format!(
                "{} row flags for {n} rows",
                rows.len()
            )));
        }
        let tok = self.value(token);
        if tok.numel() != d {
            return Err(Error::shape(format!(
                "replacement token of {} for width {d}",
                tok.numel()
            )));
        }
        let mut v = self.value(x).clone();
        for (row, &m) in v.data_mut().chunks_exact_mut(d).zip(rows) {
            if m {
                row.copy_from_slice(tok.data());
            }
        }
        Ok(self.push(
            v,
            Op::ReplaceRows {
                x,
                token,
                rows: rows.to_vec(),
            },
            &[x, token],
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self
            .value(x)
            .map(|a| 0.5 * a * (1.0 + (GELU_C * (a + 0.044715 * a * a * a)).tanh()));
        self.push(v, Op::Gelu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid(x), &[x])
    }

    /// Softmax over the last axis of a rank-2 value.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        if self.value(x).dims().len() != 2 {
            return Err(Error::shape("softmax_rows expects rank 2"));
        }
        let v = ops::softmax(self.value(x), 1)?;
        Ok(self.push(v, Op::SoftmaxRows(x), &[x]))
    }

    /// Foreground-anchored normalization: `(x - mean_M) / (std_M + eps)` applied
    /// to every element, with statistics over elements where `mask` is true.
    /// An empty mask falls back to whole-tensor statistics and records a warning.
    pub fn icn(&mut self, x: Var, mask: &[bool], eps: f64) -> Result<Var> {
        let numel = self.value(x).numel();
        if mask.len() != numel {
            return Err(Error::shape(format!(
                "icn mask of {} for {numel} elements",
                mask.len()
            )));
        }
        let mut mask = mask.to_vec();
        if !mask.iter().any(|&m| m) {
            self.warnings
                .push("icn: empty foreground mask, using whole-tensor statistics".into());
            log::warn!("icn: empty foreground mask, using whole-tensor statistics");
            mask.iter_mut().for_each(|m| *m = true);
        }
        let xv = self.value(x);
        let (mean, std) = masked_moments(xv.data(), &mask);
        let v = xv.map(|a| (a - mean) / (std + eps));
        Ok(self.push(
            v,
            Op::Icn {
                x,
                mask,
                mean,
                std,
                eps,
            },
            &[x],
        ))
    }

    /// `Re(ifft2(|fft2(x)|))` per column of `x[N, D]`, viewing the `N` rows as a
    /// `grid.0 x grid.1` token grid. Grids that are not powers of two are
    /// zero-padded for the transform and cropped afterwards.
    pub fn freq_gate(&mut self, x: Var, grid: (usize, usize)) -> Result<Var> {
        let [n, d] = self.value(x).dims2()?;
        let (gh, gw) = grid;
        if gh * gw != n {
            return Err(Error::shape(format!(
                "token grid {gh}x{gw} does not hold {n} tokens"
            )));
        }
        let padded = (gh.next_power_of_two(), gw.next_power_of_two());
        let planes = scatter_planes(self.value(x).data(), d, grid, padded);
        let spectrum = fft::fft2(&planes)?;
        let magnitude = ComplexTensor::new(
            spectrum.dims(),
            spectrum
                .data()
                .iter()
                .map(|z| Complex64::new(z.norm(), 0.0))
                .collect(),
        )?;
        let back = fft::ifft2(&magnitude)?;
        let out = gather_planes(back.data(), d, grid, padded);
        let v = Tensor::new(&[n, d], out)?;
        Ok(self.push(
            v,
            Op::FreqGate {
                x,
                grid,
                padded,
                spectrum,
            },
            &[x],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), &[x])
    }

    /// `[N, D] -> [D]` mean over rows.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let [n, d] = self.value(x).dims2()?;
        let mut out = vec![0.0; d];
        for row in self.value(x).data().chunks_exact(d) {
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a;
            }
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        let v = Tensor::new(&[d], out)?;
        Ok(self.push(v, Op::MeanRows(x), &[x]))
    }

    /// Weighted mean squared error `Σ w (p - t)^2 / Σ w`; zero when all weights vanish.
    pub fn masked_mse(&mut self, pred: Var, target: &Tensor, weights: Vec<f64>) -> Result<Var> {
        let p = self.value(pred);
        p.expect_same_shape(target)?;
        if weights.len() != p.numel() {
            return Err(Error::shape(format!(
                "{} weights for {} elements",
                weights.len(),
                p.numel()
            )));
        }
        let total: f64 = weights.iter().sum();
        let sse: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .zip(&weights)
            .map(|((a, b), w)| w * (a - b) * (a - b))
            .sum();
        let loss = if total > 0.0 { sse / total } else { 0.0 };
        let v = Tensor::scalar(loss);
        Ok(self.push(
            v,
            Op::MaskedMse {
                pred,
                target: target.clone(),
                weights,
            },
            &[pred],
        ))
    }

    /// Mean per-pixel cross-entropy of `logits[K, H, W]` against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let [k, h, w] = self.value(logits).dims3()?;
        if labels.len() != h * w {
            return Err(Error::shape(format!(
                "{} labels for {h}x{w} logits",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::shape(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let probs = ops::softmax(self.value(logits), 0)?;
        let hw = h * w;
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -probs.data()[l * hw + i].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / hw as f64;
        let v = Tensor::scalar(loss);
        Ok(self.push(
            v,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            &[logits],
        ))
    }

    /// `1 - cos(a, b)`; a zero vector yields 1 with zero gradient and a warning.
    pub fn cosine_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.expect_same_shape(bv)?;
        let (na, nb) = (av.norm(), bv.norm());
        let loss = if na == 0.0 || nb == 0.0 {
            self.warnings.push("cosine_distance: zero embedding".into());
            log::warn!("cosine_distance: zero embedding, loss defined as 1");
            1.0
        } else {
            let dot: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).sum();
            1.0 - dot / (na * nb)
        };
        Ok(self.push(Tensor::scalar(loss), Op::CosineDistance(a, b), &[a, b]))
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::contract(format!(
                "backward from non-scalar of shape {:?}",
                lv.dims()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::ones(lv.dims()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(g.dims(), self.nodes[v.0].value.dims());
        match &mut grads[v.0] {
            Some(acc) => acc.axpy(1.0, &g).expect("gradient shape"),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    self.accumulate(grads, *a, g.zip_map(val(*b), |x, y| x * y)?);
                }
                if needs(*b) {
                    self.accumulate(grads, *b, g.zip_map(val(*a), |x, y| x * y)?);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| x * s)),
            Op::AddRow(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if needs(*b) {
                    let d = val(*b).numel();
                    let mut gb = vec![0.0; d];
                    for row in g.data().chunks_exact(d) {
                        for (o, &a) in gb.iter_mut().zip(row) {
                            *o += a;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::from_shape(val(*b).shape().clone(), gb)?);
                }
            }
            Op::AddChannel(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if needs(*b) {
                    let [_, h, w] = g.dims3()?;
                    let gb = g
                        .data()
                        .chunks_exact(h * w)
                        .map(|p| p.iter().sum())
                        .collect();
                    self.accumulate(grads, *b, Tensor::from_shape(val(*b).shape().clone(), gb)?);
                }
            }
            Op::MatMul(a, b) => {
                if needs(*a) {
                    self.accumulate(grads, *a, ops::gemm(g, false, val(*b), true)?);
                }
                if needs(*b) {
                    self.accumulate(grads, *b, ops::gemm(val(*a), true, g, false)?);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, ops::transpose(g)?),
            Op::Reshape(a) => self.accumulate(grads, *a, g.clone().reshape(val(*a).dims())?),
            Op::Conv2d { x, k, padding } => {
                let (c_out, geo) = ops::conv_geometry(val(*x), val(*k), *padding)?;
                let gmat = g.clone().reshape(&[c_out, geo.out_h * geo.out_w])?;
                if needs(*k) {
                    let col = ops::im2col(val(*x).data(), &geo);
                    let gk = ops::gemm(&gmat, false, &col, true)?.reshape(val(*k).dims())?;
                    self.accumulate(grads, *k, gk);
                }
                if needs(*x) {
                    let kmat = val(*k)
                        .clone()
                        .reshape(&[c_out, geo.c_in * geo.kh * geo.kw])?;
                    let gcol = ops::gemm(&kmat, true, &gmat, false)?;
                    let gx = Tensor::from_shape(val(*x).shape().clone(), ops::col2im(&gcol, &geo))?;
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::PixelShuffle(x, r) => self.accumulate(grads, *x, ops::pixel_unshuffle(g, *r)?),
            Op::Patchify(x, p) => {
                let [c, h, w] = val(*x).dims3()?;
                self.accumulate(grads, *x, ops::unpatchify(g, c, *p, h / p, w / p)?);
            }
            Op::Unpatchify { x, p } => self.accumulate(grads, *x, ops::patchify(g, *p)?),
            Op::SliceCols { x, start } => {
                let [n, d] = val(*x).dims2()?;
                let len = g.dims()[1];
                let mut gx = vec![0.0; n * d];
                for (i, row) in g.data().chunks_exact(len).enumerate() {
                    gx[i * d + start..][..len].copy_from_slice(row);
                }
                self.accumulate(grads, *x, Tensor::new(&[n, d], gx)?);
            }
            Op::ConcatCols(parts) => {
                let total = g.dims()[1];
                let mut offset = 0;
                for &p in parts {
                    let [n, pd] = val(p).dims2()?;
                    if needs(p) {
                        let mut gp = Vec::with_capacity(n * pd);
                        for row in g.data().chunks_exact(total) {
                            gp.extend_from_slice(&row[offset..offset + pd]);
                        }
                        self.accumulate(grads, p, Tensor::new(&[n, pd], gp)?);
                    }
                    offset += pd;
                }
            }
            Op::SelectRows { x, rows } => {
                let [n, d] = val(*x).dims2()?;
                let mut gx = vec![0.0; n * d];
                for (row, &r) in g.data().chunks_exact(d).zip(rows) {
                    for (o, &a) in gx[r * d..(r + 1) * d].iter_mut().zip(row) {
                        *o += a;
                    }
                }
                self.accumulate(grads, *x, Tensor::new(&[n, d], gx)?);
            }
            Op::ReplaceRows { x, token, rows } => {
                let d = val(*token).numel();
                if needs(*x) {
                    let mut gx = g.clone();
                    for (row, &m) in gx.data_mut().chunks_exact_mut(d).zip(rows) {
                        if m {
                            row.iter_mut().for_each(|a| *a = 0.0);
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if needs(*token) {
                    let mut gt = vec![0.0; d];
                    for (row, &m) in g.data().chunks_exact(d).zip(rows) {
                        if m {
                            for (o, &a) in gt.iter_mut().zip(row) {
                                *o += a;
                            }
                        }
                    }
                    self.accumulate(
                        grads,
                        *token,
                        Tensor::from_shape(val(*token).shape().clone(), gt)?,
                    );
                }
            }
            Op::Gelu(x) => {
                let gx = val(*x).zip_map(g, |a, gy| {
                    let inner = GELU_C * (a + 0.044715 * a * a * a);
                    let t = inner.tanh();
                    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * a * a);
                    gy * (0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * dinner)
                })?;
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = node.value.zip_map(g, |s, gy| gy * s * (1.0 - s))?;
                self.accumulate(grads, *x, gx);
            }
            Op::SoftmaxRows(x) => {
                let d = node.value.dims()[1];
                let mut gx = vec![0.0; node.value.numel()];
                for ((s, gy), out) in node
                    .value
                    .data()
                    .chunks_exact(d)
                    .zip(g.data().chunks_exact(d))
                    .zip(gx.chunks_exact_mut(d))
                {
                    let dot: f64 = s.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for k in 0..d {
                        out[k] = s[k] * (gy[k] - dot);
                    }
                }
                self.accumulate(
                    grads,
                    *x,
                    Tensor::from_shape(node.value.shape().clone(), gx)?,
                );
            }
            Op::Icn {
                x,
                mask,
                mean,
                std,
                eps,
            } => {
                let xv = val(*x).data();
                let m = mask.iter().filter(|&&b| b).count() as f64;
                let s = std + eps;
                let d_mean: f64 = -g.data().iter().sum::<f64>() / s;
                let d_s: f64 = -g
                    .data()
                    .iter()
                    .zip(xv)
                    .map(|(gy, a)| gy * (a - mean))
                    .sum::<f64>()
                    / (s * s);
                let gx = g
                    .data()
                    .iter()
                    .zip(xv)
                    .zip(mask)
                    .map(|((gy, a), &in_mask)| {
                        let mut out = gy / s;
                        if in_mask {
                            out += d_mean / m;
                            if *std > 0.0 {
                                out += d_s * (a - mean) / (m * std);
                            }
                        }
                        out
                    })
                    .collect();
                self.accumulate(grads, *x, Tensor::from_shape(val(*x).shape().clone(), gx)?);
            }
            Op::FreqGate {
                x,
                grid,
                padded,
                spectrum,
            } => {
                let d = val(*x).dims()[1];
                let area = (padded.0 * padded.1) as f64;
                let gplanes = scatter_planes(g.data(), d, *grid, *padded);
                let gspec = fft::fft2(&gplanes)?;
                let phase_weighted: Vec<Complex64> = gspec
                    .data()
                    .iter()
                    .zip(spectrum.data())
                    .map(|(gs, f)| {
                        let mag = f.norm();
                        if mag == 0.0 {
                            Complex64::new(0.0, 0.0)
                        } else {
                            f * (gs.re / area / mag)
                        }
                    })
                    .collect();
                let u = ComplexTensor::new(spectrum.dims(), phase_weighted)?;
                let back = fft::ifft2(&u)?;
                let scaled: Vec<Complex64> = back.data().iter().map(|z| z * area).collect();
                let gx = gather_planes(&scaled, d, *grid, *padded);
                self.accumulate(grads, *x, Tensor::from_shape(val(*x).shape().clone(), gx)?);
            }
            Op::Sum(x) => self.accumulate(grads, *x, Tensor::full(val(*x).dims(), g.item())),
            Op::MeanRows(x) => {
                let [n, d] = val(*x).dims2()?;
                let mut gx = Vec::with_capacity(n * d);
                for _ in 0..n {
                    gx.extend(g.data().iter().map(|a| a / n as f64));
                }
                self.accumulate(grads, *x, Tensor::new(&[n, d], gx)?);
            }
            Op::MaskedMse {
                pred,
                target,
                weights,
            } => {
                let total: f64 = weights.iter().sum();
                if total > 0.0 {
                    let scale = 2.0 * g.item() / total;
                    let gp = val(*pred)
                        .data()
                        .iter()
                        .zip(target.data())
                        .zip(weights)
                        .map(|((a, b), w)| scale * w * (a - b))
                        .collect();
                    self.accumulate(
                        grads,
                        *pred,
                        Tensor::from_shape(target.shape().clone(), gp)?,
                    );
                }
            }
            Op::CrossEntropy { logits, labels } => {
                let [_, h, w] = val(*logits).dims3()?;
                let hw = h * w;
                let mut gl = ops::softmax(val(*logits), 0)?;
                for (i, &l) in labels.iter().enumerate() {
                    gl.data_mut()[l * hw + i] -= 1.0;
                }
                let scale = g.item() / hw as f64;
                gl.data_mut().iter_mut().for_each(|a| *a *= scale);
                self.accumulate(grads, *logits, gl);
            }
            Op::CosineDistance(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (na, nb) = (av.norm(), bv.norm());
                if na > 0.0 && nb > 0.0 {
                    let dot: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).sum();
                    let gy = g.item();
                    let ga = av.zip_map(bv, |ai, bi| {
                        -gy * (bi / (na * nb) - dot * ai / (na * na * na * nb))
                    })?;
                    let gb = bv.zip_map(av, |bi, ai| {
                        -gy * (ai / (na * nb) - dot * bi / (nb * nb * nb * na))
                    })?;
                    self.accumulate(grads, *a, ga);
                    self.accumulate(grads, *b, gb);
                }
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn masked_moments(data: &[f64], mask: &[bool]) -> (f64, f64) {
    let m = mask.iter().filter(|&&b| b).count() as f64;
    let mean = data
        .iter()
        .zip(mask)
        .filter(|(_, &b)| b)
        .map(|(a, _)| a)
        .sum::<f64>()
        / m;
    let var = data
        .iter()
        .zip(mask)
        .filter(|(_, &b)| b)
        .map(|(a, _)| (a - mean) * (a - mean))
        .sum::<f64>()
        / m;
    (mean, var.sqrt())
}

/// `[N, D]` columns into zero-padded `[D, ph, pw]` complex planes.
fn scatter_planes(
    data: &[f64],
    d: usize,
    grid: (usize, usize),
    padded: (usize, usize),
) -> ComplexTensor {
    let (gh, gw) = grid;
    let (ph, pw) = padded;
    let mut planes = ComplexTensor::zeros(&[d, ph, pw]);
    let out = planes.data_mut();
    for i in 0..gh {
        for j in 0..gw {
            let row = &data[(i * gw + j) * d..][..d];
            for (c, &v) in row.iter().enumerate() {
                out[c * ph * pw + i * pw + j] = Complex64::new(v, 0.0);
            }
        }
    }
    planes
}

/// Real parts of the cropped planes back into `[N, D]` order.
fn gather_planes(
    planes: &[Complex64],
    d: usize,
    grid: (usize, usize),
    padded: (usize, usize),
) -> Vec<f64> {
    let (gh, gw) = grid;
    let (ph, pw) = padded;
    let mut out = vec![0.0; gh * gw * d];
    for i in 0..gh {
        for j in 0..gw {
            for c in 0..d {
                out[(i * gw + j) * d + c] = planes[c * ph * pw + i * pw + j].re;
            }
        }
    }
    out
}
