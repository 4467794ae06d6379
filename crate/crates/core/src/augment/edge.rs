use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Non-negative per-pixel edge energy of a single-channel image.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMap {
    values: Tensor,
}

impl EdgeMap {
    pub fn new(values: Tensor) -> Result<Self> {
        values.dims2()?;
        if values.data().iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::contract(
                "edge energy must be non-negative and finite",
            ));
        }
        Ok(EdgeMap { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn height(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.values.dims()[1]
    }
}

/// `E = (|∂x I| + |∂y I|) / 2` with central differences over a
/// replicate-padded border.
pub fn edge_energy(image: &Tensor) -> Result<EdgeMap> {
    let [h, w] = image.dims2()?;
    if h < 2 || w < 2 {
        return Err(Error::shape(format!(
            "edge energy needs at least 2x2, got {h}x{w}"
        )));
    }
    let px = image.data();
    let at = |i: usize, j: usize| px[i * w + j];
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        let (up, down) = (i.saturating_sub(1), (i + 1).min(h - 1));
        for j in 0..w {
            let (left, right) = (j.saturating_sub(1), (j + 1).min(w - 1));
            let gx = (at(i, right) - at(i, left)) / 2.0;
            let gy = (at(down, j) - at(up, j)) / 2.0;
            out[i * w + j] = (gx.abs() + gy.abs()) / 2.0;
        }
    }
    EdgeMap::new(Tensor::new(&[h, w], out)?)
}

/// Edge energy of a multi-channel `[C, H, W]` image, averaged over channels.
pub fn edge_energy_mean(image: &Tensor) -> Result<EdgeMap> {
    let [c, h, w] = image.dims3()?;
    let mut acc = Tensor::zeros(&[h, w]);
    for ch in 0..c {
        acc.axpy(1.0 / c as f64, edge_energy(&image.channel(ch)?)?.values())?;
    }
    EdgeMap::new(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn constant_has_no_energy() {
        let e = edge_energy(&Tensor::full(&[6, 5], 3.0)).unwrap();
        assert!(e.values().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_step() {
        let img = Tensor::from_fn(&[8, 8], |i| if i % 8 >= 4 { 1.0 } else { 0.0 });
        let e = edge_energy(&img).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let want = if j == 3 || j == 4 { 0.25 } else { 0.0 };
                assert_eq!(e.values().data()[i * 8 + j], want, "({i},{j})");
            }
        }
    }

    #[test]
    fn negation_invariant() {
        let mut rng = Rng::new(1);
        let img = Tensor::from_fn(&[7, 9], |_| rng.normal());
        assert_eq!(
            edge_energy(&img).unwrap(),
            edge_energy(&img.map(|v| -v)).unwrap()
        );
    }

    #[test]
    fn translation_equivariant_on_interior() {
        let mut rng = Rng::new(2);
        let (h, w) = (10, 10);
        let img = Tensor::from_fn(&[h, w], |_| rng.normal());
        let shifted = Tensor::from_fn(&[h, w], |k| {
            let (i, j) = (k / w, k % w);
            img.data()[i * w + (j + w - 1) % w]
        });
        let (a, b) = (edge_energy(&img).unwrap(), edge_energy(&shifted).unwrap());
        for i in 1..h - 1 {
            for j in 2..w - 1 {
                let x = a.values().data()[i * w + j - 1];
                let y = b.values().data()[i * w + j];
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_pixel_axis_rejected() {
        assert!(edge_energy(&Tensor::zeros(&[1, 8])).is_err());
    }
}
