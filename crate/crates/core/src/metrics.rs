//! PSNR, SSIM, Dice and 95th-percentile Hausdorff distance.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// `10 log10(peak² / MSE)`; `f64::INFINITY` when the images are identical.
pub fn psnr(pred: &Tensor, target: &Tensor, peak: f64) -> Result<f64> {
    pred.expect_same_shape(target)?;
    if !(peak > 0.0) {
        return Err(Error::config(format!(
            "psnr peak must be positive, got {peak}"
        )));
    }
    let mse = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / pred.numel() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

fn spatial_planes(t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.dims() {
        &[h, w] => Ok((1, h, w)),
        &[c, h, w] => Ok((c, h, w)),
        d => Err(Error::shape(format!(
            "expected [H, W] or [C, H, W], got {d:?}"
        ))),
    }
}

/// Mean SSIM over every full `window x window` Gaussian-weighted window
/// (σ = 1.5) of every channel, with `C1 = (k1·peak)²` and `C2 = (k2·peak)²`.
pub fn ssim(
    pred: &Tensor,
    target: &Tensor,
    window: usize,
    k1: f64,
    k2: f64,
    peak: f64,
) -> Result<f64> {
    pred.expect_same_shape(target)?;
    let (c, h, w) = spatial_planes(pred)?;
    if window == 0 || h < window || w < window {
        return Err(Error::shape(format!(
            "{h}x{w} image is smaller than the {window}-pixel SSIM window"
        )));
    }
    let g = gaussian_window(window, SSIM_SIGMA);
    let c1 = (k1 * peak).powi(2);
    let c2 = (k2 * peak).powi(2);
    let (oh, ow) = (h - window + 1, w - window + 1);
    let mut total = 0.0;
    for ch in 0..c {
        let x = &pred.data()[ch * h * w..(ch + 1) * h * w];
        let y = &target.data()[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for di in 0..window {
                    for dj in 0..window {
                        let wt = g[di] * g[dj];
                        let k = (i + di) * w + j + dj;
                        let (a, b) = (x[k], y[k]);
                        mx += wt * a;
                        my += wt * b;
                        xx += wt * a * a;
                        yy += wt * b * b;
                        xy += wt * a * b;
                    }
                }
                let vx = xx - mx * mx;
                let vy = yy - my * my;
                let cov = xy - mx * my;
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
    }
    Ok(total / (c * oh * ow) as f64)
}

/// [`ssim`] with the standard window and constants.
pub fn ssim_default(pred: &Tensor, target: &Tensor, peak: f64) -> Result<f64> {
    ssim(pred, target, SSIM_WINDOW, SSIM_K1, SSIM_K2, peak)
}

/// `2|A ∩ B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice(pred: &[bool], target: &[bool]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::shape(format!(
            "dice masks of {} and {} elements",
            pred.len(),
            target.len()
        )));
    }
    let a = pred.iter().filter(|&&v| v).count();
    let b = target.iter().filter(|&&v| v).count();
    if a + b == 0 {
        log::debug!("dice of two empty masks reported as 1");
        return Ok(1.0);
    }
    let both = pred.iter().zip(target).filter(|(&p, &t)| p && t).count();
    Ok(2.0 * both as f64 / (a + b) as f64)
}

/// Dice of every class `1..classes` of two label maps.
pub fn dice_per_class(pred: &[usize], target: &[usize], classes: usize) -> Result<Vec<f64>> {
    (1..classes)
        .map(|k| {
            let p: Vec<bool> = pred.iter().map(|&v| v == k).collect();
            let t: Vec<bool> = target.iter().map(|&v| v == k).collect();
            dice(&p, &t)
        })
        .collect()
}

/// Mask pixels with at least one 4-neighbour outside the mask (or outside the image).
pub fn boundary(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let at = |i: isize, j: isize| {
        i >= 0
            && j >= 0
            && (i as usize) < h
            && (j as usize) < w
            && mask[i as usize * w + j as usize]
    };
    (0..h * w)
        .map(|k| {
            let (i, j) = ((k / w) as isize, (k % w) as isize);
            mask[k] && !(at(i - 1, j) && at(i + 1, j) && at(i, j - 1) && at(i, j + 1))
        })
        .collect()
}

// 1-D squared distance transform of a sampled function (lower envelope of parabolas).
fn dt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k: usize = 0;
    let Some(start) = f.iter().position(|v| v.is_finite()) else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    v[0] = start;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in start + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            // z[0] is -inf, so this stops at k = 0 at the latest.
            if s > z[k] {
                break;
            }
            k -= 1;
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest `true` site.
pub fn squared_distance_transform(sites: &[bool], h: usize, w: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = sites
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for j in 0..w {
        for i in 0..h {
            col[i] = grid[i * w + j];
        }
        dt_1d(&col, &mut col_out);
        for i in 0..h {
            grid[i * w + j] = col_out[i];
        }
    }
    let mut row_out = vec![0.0; w];
    for i in 0..h {
        dt_1d(&grid[i * w..(i + 1) * w], &mut row_out);
        grid[i * w..(i + 1) * w].copy_from_slice(&row_out);
    }
    grid
}

/// Percentile `q ∈ [0, 1]` of sorted values, linear between neighbouring ranks.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// 95th percentile of the pooled boundary-to-boundary nearest distances, in pixels.
pub fn hd95(pred: &[bool], target: &[bool], h: usize, w: usize) -> Result<f64> {
    if pred.len() != h * w || target.len() != h * w {
        return Err(Error::shape(format!(
            "hd95 masks must have {h}x{w} elements"
        )));
    }
    if !pred.iter().any(|&v| v) || !target.iter().any(|&v| v) {
        return Err(Error::UndefinedMetric("hd95 of an empty mask".into()));
    }
    let ba = boundary(pred, h, w);
    let bb = boundary(target, h, w);
    let da = squared_distance_transform(&ba, h, w);
    let db = squared_distance_transform(&bb, h, w);
    let mut d: Vec<f64> = (0..h * w)
        .filter_map(|k| match (ba[k], bb[k]) {
            (true, true) => Some([db[k], da[k]].to_vec()),
            (true, false) => Some(vec![db[k]]),
            (false, true) => Some(vec![da[k]]),
            _ => None,
        })
        .flatten()
        .map(f64::sqrt)
        .collect();
    d.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&d, 0.95))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub sample_id: String,
    pub task: String,
    pub metric: String,
    pub value: f64,
}

/// Unit of a metric name as reported alongside its value.
pub fn units(metric: &str) -> &'static str {
    match metric {
        "psnr" => "dB",
        "hd95" => "px",
        _ => "1",
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub const HEADER: &'static str = "sample_id,task,metric,value";

    pub fn push(
        &mut self,
        sample_id: impl Into<String>,
        task: impl Into<String>,
        metric: &str,
        value: f64,
    ) {
        self.rows.push(MetricRow {
            sample_id: sample_id.into(),
            task: task.into(),
            metric: metric.into(),
            value,
        });
    }

    /// Mean of a metric over rows, skipping infinite values; `None` if no finite row.
    pub fn mean(&self, metric: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.metric == metric && r.value.is_finite())
            .map(|r| r.value)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.sample_id, r.task, r.metric, r.value).unwrap();
        }
        out
    }
}
