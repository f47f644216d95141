//! Conditional expectations `E[payload | x_T]` from ensembles: equal-width
//! histogram bins in one dimension and exact k-nearest-neighbour matching in
//! any dimension.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Default minimum sample count below which a bin is reported empty.
pub const DEFAULT_MIN_COUNT: usize = 30;

/// Equal-width partition of `[lo, hi]`. Bins are `[left, right)` except the
/// last, which is closed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinSpec {
    pub lo: f64,
    pub hi: f64,
    pub n_bins: usize,
    pub min_count: usize,
}

impl BinSpec {
    pub fn new(lo: f64, hi: f64, n_bins: usize) -> Result<Self> {
        if !(hi > lo) || n_bins == 0 || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidConfig(format!("bad bins [{lo}, {hi}] x {n_bins}")));
        }
        Ok(Self { lo, hi, n_bins, min_count: DEFAULT_MIN_COUNT })
    }

    pub fn with_min_count(mut self, min_count: usize) -> Self {
        self.min_count = min_count;
        self
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.n_bins as f64
    }

    pub fn edges(&self, k: usize) -> (f64, f64) {
        let w = self.width();
        let left = self.lo + k as f64 * w;
        let right = if k + 1 == self.n_bins { self.hi } else { self.lo + (k + 1) as f64 * w };
        (left, right)
    }

    pub fn center(&self, k: usize) -> f64 {
        let (l, r) = self.edges(k);
        0.5 * (l + r)
    }

    pub fn index_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo && x <= self.hi) {
            return None;
        }
        let k = ((x - self.lo) / self.width()).floor() as usize;
        let k = k.min(self.n_bins - 1);
        // guard against rounding at interior edges
        let (l, r) = self.edges(k);
        if x < l {
            Some(k - 1)
        } else if x >= r && k + 1 < self.n_bins {
            Some(k + 1)
        } else {
            Some(k)
        }
    }
}

/// One row of a conditional table. `mean`/`se` are absent for bins with
/// fewer than `min_count` samples; `log_density` is absent for empty bins.
#[derive(Debug, Clone, PartialEq)]
pub struct BinRow {
    pub left: f64,
    pub right: f64,
    pub count: usize,
    pub mean: Option<f64>,
    pub se: Option<f64>,
    pub log_density: Option<f64>,
}

impl BinRow {
    pub fn center(&self) -> f64 {
        0.5 * (self.left + self.right)
    }
}

/// Binned conditional means with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTable {
    pub rows: Vec<BinRow>,
    pub out_of_range: usize,
    pub total: usize,
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    pub n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample variance (`n − 1` denominator), 0 for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn se(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Mean and standard error of a sample.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let mut m = Moments::default();
    values.iter().for_each(|&v| m.push(v));
    (m.mean(), m.se())
}

/// Histograms `xs` and averages `payload` within each bin.
pub fn bin_1d(xs: &[f64], payload: &[f64], spec: &BinSpec) -> ConditionalTable {
    assert_eq!(xs.len(), payload.len(), "one payload per sample");
    let mut stats = vec![Moments::default(); spec.n_bins];
    let mut out_of_range = 0;
    for (&x, &p) in xs.iter().zip(payload) {
        match spec.index_of(x) {
            Some(k) => stats[k].push(p),
            None => out_of_range += 1,
        }
    }
    let total = xs.len();
    let width = spec.width();
    let rows = stats
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let (left, right) = spec.edges(k);
            let reported = s.n >= spec.min_count.max(1);
            BinRow {
                left,
                right,
                count: s.n,
                mean: reported.then(|| s.mean()),
                se: reported.then(|| s.se()),
                log_density: (s.n > 0).then(|| (s.n as f64 / (total as f64 * width)).ln()),
            }
        })
        .collect();
    ConditionalTable { rows, out_of_range, total }
}

impl ConditionalTable {
    pub const HEADER: [&'static str; 6] = ["bin_left", "bin_right", "count", "mean", "se", "log_density"];

    /// Writes `bin_left,bin_right,count,mean,se,log_density`; missing values
    /// are empty fields.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(Self::HEADER)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            wr.write_record([
                r.left.to_string(),
                r.right.to_string(),
                r.count.to_string(),
                opt(r.mean),
                opt(r.se),
                opt(r.log_density),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a table written by [`Self::write_csv`]. `out_of_range` and
    /// `total` are not part of the file and come back as `0` and the sum of
    /// counts.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let parse = |s: &str| -> Result<f64> { s.parse::<f64>().map_err(|e| Error::Csv(format!("{s}: {e}"))) };
        let opt = |s: &str| -> Result<Option<f64>> { if s.is_empty() { Ok(None) } else { parse(s).map(Some) } };
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() != 6 {
                return Err(Error::Csv(format!("expected 6 fields, got {}", rec.len())));
            }
            rows.push(BinRow {
                left: parse(&rec[0])?,
                right: parse(&rec[1])?,
                count: rec[2].parse().map_err(|e| Error::Csv(format!("count: {e}")))?,
                mean: opt(&rec[3])?,
                se: opt(&rec[4])?,
                log_density: opt(&rec[5])?,
            });
        }
        let total = rows.iter().map(|r| r.count).sum();
        Ok(Self { rows, out_of_range: 0, total })
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact Euclidean k-nearest neighbours of each query among `points`
/// (both flat, row-major with `dim` columns). Ties go to the lower index.
/// Neighbour lists are sorted by distance.
pub fn knn(queries: &[f64], points: &[f64], dim: usize, k: usize, exec: Execution) -> Result<Vec<Vec<usize>>> {
    if dim == 0 || points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let n = points.len() / dim;
    if k > n {
        return Err(Error::TooManyNeighbors { k, available: n });
    }
    let nq = queries.len() / dim;
    Ok(par::map_indexed(
        exec,
        nq,
        || Vec::with_capacity(n),
        |buf: &mut Vec<(f64, usize)>, q| {
            let y = &queries[q * dim..(q + 1) * dim];
            buf.clear();
            buf.extend(points.chunks_exact(dim).enumerate().map(|(i, p)| (sq_dist(y, p), i)));
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k > 0 && k < buf.len() {
                buf.select_nth_unstable_by(k - 1, cmp);
            }
            let mut head: Vec<(f64, usize)> = buf.iter().take(k).copied().collect();
            head.sort_by(cmp);
            head.into_iter().map(|(_, i)| i).collect()
        },
    ))
}

/// Conditional mean of `payload` at each query, estimated by averaging over
/// its `k` nearest ensemble points.
pub fn knn_mean(queries: &[f64], points: &[f64], payload: &[f64], dim: usize, k: usize, exec: Execution) -> Result<Vec<(f64, f64)>> {
    let nbrs = knn(queries, points, dim, k, exec)?;
    Ok(nbrs
        .iter()
        .map(|idx| {
            let v: Vec<f64> = idx.iter().map(|&i| payload[i]).collect();
            mean_se(&v)
        })
        .collect())
}
