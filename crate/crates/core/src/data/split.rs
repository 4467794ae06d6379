//! Dataset partitioning and the line-oriented manifest.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle, then consecutive partitions of sizes `round(f * n)`;
/// the test split takes whatever remains.
pub fn split_dataset<T: Clone>(
    items: &[T],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Split<T>> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let n_train = ((a * n as f64).round() as usize).min(n);
    let n_val = ((b * n as f64).round() as usize).min(n - n_train);
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok(Split {
        train: pick(&order[..n_train]),
        val: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub role: String,
    pub channels: usize,
}

/// One `path<TAB>role<TAB>channels` line per file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn push(&mut self, path: impl Into<String>, role: impl Into<String>, channels: usize) {
        self.entries.push(ManifestEntry {
            path: path.into(),
            role: role.into(),
            channels,
        });
    }

    pub fn with_role<'a>(&'a self, role: &'a str) -> impl Iterator<Item = &'a ManifestEntry> + 'a {
        self.entries.iter().filter(move |e| e.role == role)
    }
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{}\t{}\t{}", e.path, e.role, e.channels)?;
        }
        Ok(())
    }
}

impl FromStr for Manifest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (no, line) in s.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::Format(format!("manifest line {}: `{line}`", no + 1));
            let mut parts = line.split('\t');
            let (Some(path), Some(role), Some(ch), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad());
            };
            m.push(path, role, ch.parse().map_err(|_| bad())?);
        }
        Ok(m)
    }
}
