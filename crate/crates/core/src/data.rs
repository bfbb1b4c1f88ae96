//! Datasets of (input, response, sensitivity) samples: standardization,
//! splitting, minibatching and the CSV exchange format.
//!
//! CSV header layout for `N` inputs and `M` outputs:
//!
//! ```text
//! x1,...,xN,y1,...,yM,dy1_dx1,...,dy1_dxN,...,dyM_dx1,...,dyM_dxN
//! ```

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub x: Vector,
    pub y: Vector,
    /// `n_out × n_in`, entry `(i, j)` is `∂y_i/∂x_j`.
    pub dy_dx: Matrix,
}

impl SamplePoint {
    pub fn new(x: Vec<f64>, y: Vec<f64>, dy_dx: Matrix) -> Result<Self> {
        if dy_dx.rows() != y.len() || dy_dx.cols() != x.len() {
            return Err(Error::shape(
                "SamplePoint::new",
                format!("{}x{} sensitivity matrix", y.len(), x.len()),
                format!("{}x{}", dy_dx.rows(), dy_dx.cols()),
            ));
        }
        Ok(SamplePoint {
            x: x.into(),
            y: y.into(),
            dy_dx,
        })
    }

    pub fn n_in(&self) -> usize {
        self.x.len()
    }

    pub fn n_out(&self) -> usize {
        self.y.len()
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.dy_dx.is_finite()
    }
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

impl StandardizationStats {
    /// Stats that leave data unchanged.
    pub fn identity(n_in: usize, n_out: usize) -> Self {
        StandardizationStats {
            x_mean: vec![0.0; n_in],
            x_std: vec![1.0; n_in],
            y_mean: vec![0.0; n_out],
            y_std: vec![1.0; n_out],
        }
    }

    fn validate(&self) -> Result<()> {
        for (i, s) in self.x_std.iter().enumerate() {
            if !(*s > 0.0 && s.is_finite()) {
                return Err(Error::DegenerateScale {
                    column: format!("x{}", i + 1),
                });
            }
        }
        for (i, s) in self.y_std.iter().enumerate() {
            if !(*s > 0.0 && s.is_finite()) {
                return Err(Error::DegenerateScale {
                    column: format!("y{}", i + 1),
                });
            }
        }
        Ok(())
    }

    pub fn unstandardize_y(&self, y_s: &[f64]) -> Vector {
        y_s.iter()
            .zip(self.y_mean.iter().zip(&self.y_std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<SamplePoint>,
    pub stats: Option<StandardizationStats>,
    pub standardized: bool,
}

impl Dataset {
    pub fn new(samples: Vec<SamplePoint>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let (n_in, n_out) = (first.n_in(), first.n_out());
            for (i, s) in samples.iter().enumerate() {
                if s.n_in() != n_in || s.n_out() != n_out {
                    return Err(Error::shape(
                        "Dataset::new",
                        format!("{n_in} inputs, {n_out} outputs"),
                        format!("sample {i}: {} inputs, {} outputs", s.n_in(), s.n_out()),
                    ));
                }
            }
        }
        Ok(Dataset {
            samples,
            stats: None,
            standardized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_in(&self) -> usize {
        self.samples.first().map_or(0, SamplePoint::n_in)
    }

    pub fn n_out(&self) -> usize {
        self.samples.first().map_or(0, SamplePoint::n_out)
    }

    /// Copy of the selected samples, carrying over standardization metadata.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            stats: self.stats.clone(),
            standardized: self.standardized,
        }
    }

    /// Inverse of [`apply_standardize`], using the stats stored on the dataset.
    pub fn unstandardize(&self) -> Dataset {
        let Some(stats) = self.stats.as_ref().filter(|_| self.standardized) else {
            return self.clone();
        };
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let x = s
                    .x
                    .iter()
                    .zip(stats.x_mean.iter().zip(&stats.x_std))
                    .map(|(v, (m, sd))| v * sd + m)
                    .collect();
                let y = stats.unstandardize_y(&s.y);
                let mut dy_dx = s.dy_dx.clone();
                for i in 0..dy_dx.rows() {
                    for j in 0..dy_dx.cols() {
                        dy_dx.set(i, j, dy_dx.get(i, j) * stats.y_std[i] / stats.x_std[j]);
                    }
                }
                SamplePoint { x, y, dy_dx }
            })
            .collect();
        Dataset {
            samples,
            stats: self.stats.clone(),
            standardized: false,
        }
    }
}

fn column_stats(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Fits per-column statistics on `train` and returns its standardized copy.
pub fn fit_standardize(train: &Dataset) -> Result<(Dataset, StandardizationStats)> {
    let n = train.len();
    if n < 2 {
        return Err(Error::Size {
            requested: 2,
            available: n,
        });
    }
    let (n_in, n_out) = (train.n_in(), train.n_out());
    let mut stats = StandardizationStats::identity(n_in, n_out);
    for j in 0..n_in {
        let (m, s) = column_stats(train.samples.iter().map(|p| p.x[j]), n);
        stats.x_mean[j] = m;
        stats.x_std[j] = s;
    }
    for i in 0..n_out {
        let (m, s) = column_stats(train.samples.iter().map(|p| p.y[i]), n);
        stats.y_mean[i] = m;
        stats.y_std[i] = s;
    }
    // A column whose spread is pure rounding noise is constant for our purposes.
    for (j, (m, s)) in stats.x_mean.iter().zip(&stats.x_std).enumerate() {
        if *s <= 1e-12 * m.abs().max(1e-300) || *s == 0.0 {
            return Err(Error::DegenerateScale {
                column: format!("x{}", j + 1),
            });
        }
    }
    for (i, (m, s)) in stats.y_mean.iter().zip(&stats.y_std).enumerate() {
        if *s <= 1e-12 * m.abs().max(1e-300) || *s == 0.0 {
            return Err(Error::DegenerateScale {
                column: format!("y{}", i + 1),
            });
        }
    }
    let standardized = apply_standardize(train, &stats)?;
    Ok((standardized, stats))
}

/// Rescales `∂y_i/∂x_j` by `σ_{x_j}/σ_{y_i}` so it matches standardized coordinates.
pub fn scale_sensitivities(s: &SamplePoint, stats: &StandardizationStats) -> Result<SamplePoint> {
    stats.validate()?;
    let mut out = s.clone();
    for i in 0..s.dy_dx.rows() {
        for j in 0..s.dy_dx.cols() {
            out.dy_dx
                .set(i, j, s.dy_dx.get(i, j) * stats.x_std[j] / stats.y_std[i]);
        }
    }
    Ok(out)
}

/// Standardizes `d` with frozen stats (validation data reuses training stats).
pub fn apply_standardize(d: &Dataset, stats: &StandardizationStats) -> Result<Dataset> {
    stats.validate()?;
    if d.standardized {
        return Err(Error::Config("dataset is already standardized".into()));
    }
    if !d.is_empty() && (d.n_in() != stats.x_mean.len() || d.n_out() != stats.y_mean.len()) {
        return Err(Error::shape(
            "apply_standardize",
            format!("{} inputs, {} outputs", stats.x_mean.len(), stats.y_mean.len()),
            format!("{} inputs, {} outputs", d.n_in(), d.n_out()),
        ));
    }
    let samples = d
        .samples
        .iter()
        .map(|s| {
            let mut p = scale_sensitivities(s, stats)?;
            for (j, v) in p.x.iter_mut().enumerate() {
                *v = (*v - stats.x_mean[j]) / stats.x_std[j];
            }
            for (i, v) in p.y.iter_mut().enumerate() {
                *v = (*v - stats.y_mean[i]) / stats.y_std[i];
            }
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        samples,
        stats: Some(stats.clone()),
        standardized: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "pattern", content = "seed")]
pub enum SplitPattern {
    /// Even flattened indices train, odd indices validate.
    Stride2,
    /// Fixed-seed random permutation.
    Seeded(u64),
}

/// Splits `d` into disjoint (train, validation) sets; both keep ascending index order.
///
/// `Stride2` takes validation from the odd indices and training from the even
/// ones, each truncated to the requested count. When more training samples are
/// requested than there are even indices, the odd indices left over after the
/// validation pick fill the gap.
pub fn grid_split(
    d: &Dataset,
    n_train: usize,
    n_val: usize,
    pattern: SplitPattern,
) -> Result<(Dataset, Dataset)> {
    let total = n_train + n_val;
    if total > d.len() {
        return Err(Error::Size {
            requested: total,
            available: d.len(),
        });
    }
    let (mut train_idx, mut val_idx): (Vec<usize>, Vec<usize>) = match pattern {
        SplitPattern::Stride2 => {
            let odd: Vec<usize> = (1..d.len()).step_by(2).collect();
            let even: Vec<usize> = (0..d.len()).step_by(2).collect();
            if n_val > odd.len() {
                return Err(Error::Size {
                    requested: n_val,
                    available: odd.len(),
                });
            }
            let val = odd[..n_val].to_vec();
            let mut train: Vec<usize> = even.into_iter().take(n_train).collect();
            train.extend(odd[n_val..].iter().take(n_train - train.len()));
            (train, val)
        }
        SplitPattern::Seeded(seed) => {
            let mut perm: Vec<usize> = (0..d.len()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let val = perm[n_train..total].to_vec();
            perm.truncate(n_train);
            (perm, val)
        }
    };
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok((d.subset(&train_idx), d.subset(&val_idx)))
}

/// Per-run minibatch schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinibatchPlan {
    pub batch_size: usize,
    pub rng_seed: u64,
    n: usize,
}

impl MinibatchPlan {
    pub fn new(n_train: usize, batch_size: usize, rng_seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(MinibatchPlan {
            batch_size,
            rng_seed,
            n: n_train,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }

    /// Shuffled index order for `epoch`; depends only on `(rng_seed, epoch)`.
    pub fn epoch_permutation(&self, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(epoch as u64);
        let mut perm: Vec<usize> = (0..self.n).collect();
        perm.shuffle(&mut rng);
        perm
    }
}

/// Minibatches for one epoch. The final short batch is kept.
pub fn minibatches(plan: &MinibatchPlan, epoch: usize) -> Vec<Vec<usize>> {
    plan.epoch_permutation(epoch)
        .chunks(plan.batch_size)
        .map(<[usize]>::to_vec)
        .collect()
}

pub fn csv_header(n_in: usize, n_out: usize) -> Vec<String> {
    let mut h: Vec<String> = (1..=n_in).map(|j| format!("x{j}")).collect();
    h.extend((1..=n_out).map(|i| format!("y{i}")));
    for i in 1..=n_out {
        h.extend((1..=n_in).map(|j| format!("dy{i}_dx{j}")));
    }
    h
}

fn count_indexed(header: &[String], start: usize, prefix: &str) -> usize {
    header[start..]
        .iter()
        .enumerate()
        .take_while(|(k, name)| {
            name.strip_prefix(prefix)
                .is_some_and(|rest| rest == (k + 1).to_string())
        })
        .count()
}

/// Parses a dataset from CSV bytes.
pub fn parse_csv<R: Read>(input: R) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = reader.records();
    let header: Vec<String> = match records.next() {
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty file, expected header".into(),
            })
        }
        Some(rec) => rec
            .map_err(csv_error)?
            .iter()
            .map(str::to_owned)
            .collect(),
    };
    let n_in = count_indexed(&header, 0, "x");
    let n_out = count_indexed(&header, n_in, "y");
    if n_in == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "missing column `x1`".into(),
        });
    }
    if n_out == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "missing column `y1`".into(),
        });
    }
    let expected = csv_header(n_in, n_out);
    for (k, name) in expected.iter().enumerate() {
        match header.get(k) {
            Some(h) if h == name => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("missing column `{name}`"),
                })
            }
        }
    }
    if header.len() > expected.len() {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected column `{}`", header[expected.len()]),
        });
    }

    let width = expected.len();
    let mut samples = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let mut values = Vec::with_capacity(width);
        for (k, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column `{}`: `{cell}` is not a number", expected[k]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column `{}`: non-finite value `{cell}`", expected[k]),
                });
            }
            values.push(v);
        }
        let x = values[..n_in].to_vec();
        let y = values[n_in..n_in + n_out].to_vec();
        let dy_dx = Matrix::from_vec(n_out, n_in, values[n_in + n_out..].to_vec())?;
        samples.push(SamplePoint::new(x, y, dy_dx)?);
    }
    Dataset::new(samples)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(std::io::BufReader::new(file))
}

/// Shortest round-trip text; exponent form for very small or large magnitudes.
pub(crate) fn float_text(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && (a < 1e-5 || a >= 1e16) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

/// Writes samples in the CSV exchange format using shortest round-trip float text.
pub fn write_csv_to<W: Write>(d: &Dataset, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(d.n_in(), d.n_out()))?;
    for s in &d.samples {
        debug_assert!(s.is_finite());
        let row = s
            .x
            .iter()
            .chain(s.y.iter())
            .chain(s.dy_dx.as_slice())
            .map(|&v| float_text(v));
        w.write_record(row)?;
    }
    w.flush()
}

pub fn write_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(d, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn point(x: &[f64], y: &[f64], dy: &[f64]) -> SamplePoint {
        SamplePoint::new(
            x.to_vec(),
            y.to_vec(),
            Matrix::from_vec(y.len(), x.len(), dy.to_vec()).unwrap(),
        )
        .unwrap()
    }

    fn line_dataset(n: usize) -> Dataset {
        Dataset::new(
            (0..n)
                .map(|i| {
                    let x = i as f64;
                    point(&[x, 2.0 * x + 1.0], &[x * x], &[2.0 * x, 0.5])
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn standardize_two_points() {
        let d = Dataset::new(vec![point(&[1.0], &[0.0], &[1.0]), point(&[3.0], &[4.0], &[1.0])])
            .unwrap();
        let (s, stats) = fit_standardize(&d).unwrap();
        assert_eq!(stats.x_mean, vec![2.0]);
        assert_eq!(stats.x_std, vec![1.0]);
        assert_eq!(s.samples[0].x[0], -1.0);
        assert_eq!(s.samples[1].x[0], 1.0);
        assert!(s.standardized);
    }

    #[test]
    fn refit_on_standardized_data_is_identity() {
        let (s, _) = fit_standardize(&line_dataset(9)).unwrap();
        let raw = Dataset::new(s.samples.clone()).unwrap();
        let (again, stats) = fit_standardize(&raw).unwrap();
        for (m, sd) in stats.x_mean.iter().zip(&stats.x_std) {
            assert!(m.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        }
        for (a, b) in again.samples.iter().zip(&s.samples) {
            for (u, v) in a.x.iter().zip(b.x.iter()) {
                assert!((u - v).abs() < 1e-12);
            }
            for (u, v) in a.dy_dx.as_slice().iter().zip(b.dy_dx.as_slice()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_std() {
        let (s, _) = fit_standardize(&line_dataset(17)).unwrap();
        for j in 0..2 {
            let n = s.len() as f64;
            let mean: f64 = s.samples.iter().map(|p| p.x[j]).sum::<f64>() / n;
            let var: f64 = s.samples.iter().map(|p| (p.x[j] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-10);
            assert!((var.sqrt() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_column_names_it() {
        let d = Dataset::new(vec![
            point(&[1.0, 5.0], &[0.0], &[1.0, 1.0]),
            point(&[2.0, 5.0], &[1.0], &[1.0, 1.0]),
        ])
        .unwrap();
        match fit_standardize(&d) {
            Err(Error::DegenerateScale { column }) => assert_eq!(column, "x2"),
            other => panic!("unexpected {other:?}"),
        }
        let d = Dataset::new(vec![point(&[1.0], &[3.0], &[1.0]), point(&[2.0], &[3.0], &[1.0])])
            .unwrap();
        assert!(matches!(
            fit_standardize(&d),
            Err(Error::DegenerateScale { column }) if column == "y1"
        ));
        let one = Dataset::new(vec![point(&[1.0], &[3.0], &[1.0])]).unwrap();
        assert!(matches!(fit_standardize(&one), Err(Error::Size { .. })));
    }

    #[test]
    fn sensitivity_scaling() {
        let stats = StandardizationStats {
            x_mean: vec![0.0],
            x_std: vec![0.5],
            y_mean: vec![0.0],
            y_std: vec![2.0],
        };
        let s = scale_sensitivities(&point(&[0.0], &[0.0], &[2.0]), &stats).unwrap();
        assert_eq!(s.dy_dx.get(0, 0), 0.5);
        let same = StandardizationStats {
            x_std: vec![1.7],
            y_std: vec![1.7],
            ..stats
        };
        let s = scale_sensitivities(&point(&[0.0], &[0.0], &[2.0]), &same).unwrap();
        assert!((s.dy_dx.get(0, 0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn apply_then_invert_round_trip() {
        let d = line_dataset(12);
        let (_, stats) = fit_standardize(&d).unwrap();
        let back = apply_standardize(&d, &stats).unwrap().unstandardize();
        for (a, b) in back.samples.iter().zip(&d.samples) {
            for (u, v) in a
                .x
                .iter()
                .chain(a.y.iter())
                .chain(a.dy_dx.as_slice())
                .zip(b.x.iter().chain(b.y.iter()).chain(b.dy_dx.as_slice()))
            {
                assert!((u - v).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn identity_stats_are_identity() {
        let d = line_dataset(5);
        let s = apply_standardize(&d, &StandardizationStats::identity(2, 1)).unwrap();
        assert_eq!(s.samples, d.samples);
    }

    #[test]
    fn manual_per_sample_transform() {
        let d = line_dataset(10);
        let stats = StandardizationStats {
            x_mean: vec![0.3, -1.0],
            x_std: vec![2.0, 0.25],
            y_mean: vec![4.0],
            y_std: vec![8.0],
        };
        let s = apply_standardize(&d, &stats).unwrap();
        for (p, q) in d.samples.iter().zip(&s.samples) {
            assert_eq!(q.x[0], (p.x[0] - 0.3) / 2.0);
            assert_eq!(q.x[1], (p.x[1] + 1.0) / 0.25);
            assert_eq!(q.y[0], (p.y[0] - 4.0) / 8.0);
            assert_eq!(q.dy_dx.get(0, 1), p.dy_dx.get(0, 1) * 0.25 / 8.0);
        }
        assert!(apply_standardize(&s, &stats).is_err());
    }

    #[test]
    fn stride2_interleave() {
        let d = line_dataset(625);
        let (tr, va) = grid_split(&d, 313, 312, SplitPattern::Stride2).unwrap();
        for (k, p) in tr.samples.iter().enumerate() {
            assert_eq!(p.x[0], (2 * k) as f64);
        }
        for (k, p) in va.samples.iter().enumerate() {
            assert_eq!(p.x[0], (2 * k + 1) as f64);
        }
    }

    fn index_set(d: &Dataset) -> Vec<usize> {
        d.samples.iter().map(|p| p.x[0] as usize).collect()
    }

    #[test]
    fn split_320_305_is_disjoint_cover() {
        let d = line_dataset(625);
        for pattern in [SplitPattern::Stride2, SplitPattern::Seeded(42)] {
            let (tr, va) = grid_split(&d, 320, 305, pattern).unwrap();
            assert_eq!((tr.len(), va.len()), (320, 305));
            let mut all: Vec<usize> = index_set(&tr).into_iter().chain(index_set(&va)).collect();
            all.sort_unstable();
            assert_eq!(all, (0..625).collect::<Vec<_>>());
        }
    }

    #[test]
    fn split_edge_cases() {
        let d = line_dataset(10);
        let (tr, va) = grid_split(&d, 10, 0, SplitPattern::Stride2).unwrap();
        assert_eq!(index_set(&tr), (0..10).collect::<Vec<_>>());
        assert!(va.is_empty());
        assert!(matches!(
            grid_split(&d, 8, 3, SplitPattern::Stride2),
            Err(Error::Size { .. })
        ));
        assert!(grid_split(&d, 2, 6, SplitPattern::Stride2).is_err());
    }

    #[test]
    fn minibatch_counts() {
        let plan = MinibatchPlan::new(320, 64, 1).unwrap();
        let b = minibatches(&plan, 0);
        assert_eq!(b.len(), 5);
        assert!(b.iter().all(|s| s.len() == 64));

        let plan = MinibatchPlan::new(625, 64, 1).unwrap();
        let b = minibatches(&plan, 3);
        assert_eq!(b.len(), 10);
        assert_eq!(b.last().unwrap().len(), 625 - 9 * 64);

        let plan = MinibatchPlan::new(7, 64, 1).unwrap();
        let b = minibatches(&plan, 0);
        assert_eq!(b.len(), 1);
        let mut only = b[0].clone();
        only.sort_unstable();
        assert_eq!(only, (0..7).collect::<Vec<_>>());
        assert!(MinibatchPlan::new(7, 0, 1).is_err());
    }

    #[test]
    fn minibatch_replay_is_deterministic() {
        let a = MinibatchPlan::new(100, 16, 9).unwrap();
        let b = MinibatchPlan::new(100, 16, 9).unwrap();
        for epoch in 0..5 {
            assert_eq!(minibatches(&a, epoch), minibatches(&b, epoch));
        }
        assert_ne!(a.epoch_permutation(0), a.epoch_permutation(1));
    }

    #[test]
    fn csv_reads_three_rows() {
        let text = "x1,x2,y1,dy1_dx1,dy1_dx2\n0,1,2,3,4\n1,1,2,3,4\n-1.5,2e-3,0,0,0\n";
        let d = parse_csv(text.as_bytes()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.samples[2].x[1], 2e-3);
        assert_eq!(d.samples[0].dy_dx.get(0, 1), 4.0);
    }

    #[test]
    fn csv_missing_column_named() {
        let text = "x1,x2,y1,dy1_dx1\n0,1,2,3\n";
        match parse_csv(text.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 1);
                assert!(message.contains("dy1_dx2"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_bad_cells_report_line() {
        let text = "x1,y1,dy1_dx1\n0,1,2\n0,abc,2\n";
        assert!(matches!(parse_csv(text.as_bytes()), Err(Error::Parse { line: 3, .. })));
        let text = "x1,y1,dy1_dx1\n0,1,2\n0,1\n";
        assert!(matches!(parse_csv(text.as_bytes()), Err(Error::Parse { line: 3, .. })));
        let text = "x1,y1,dy1_dx1\nNaN,1,2\n";
        assert!(matches!(parse_csv(text.as_bytes()), Err(Error::Parse { line: 2, .. })));
        assert!(parse_csv("".as_bytes()).is_err());
        assert!(parse_csv("x1,y1,dy1_dx1,extra\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn float_text_round_trips(bits: u64) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            prop_assert_eq!(float_text(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }

        #[test]
        fn csv_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e12f64..1e12, 6), 1..20)) {
            let samples: Vec<SamplePoint> = rows
                .iter()
                .map(|r| point(&r[..2], &r[2..3], &r[3..5]))
                .collect();
            let d = Dataset::new(samples).unwrap();
            let mut buf = Vec::new();
            write_csv_to(&d, &mut buf).unwrap();
            let back = parse_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back.samples, d.samples);
        }

        #[test]
        fn minibatches_cover_each_index_once(n in 1usize..300, bs in 1usize..80, seed: u64, epoch in 0usize..50) {
            let plan = MinibatchPlan::new(n, bs, seed).unwrap();
            let mut seen: Vec<usize> = minibatches(&plan, epoch).concat();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn split_is_disjoint(n in 2usize..200, a in 0usize..100, b in 0usize..100, seed: u64) {
            let d = line_dataset(n);
            for pattern in [SplitPattern::Stride2, SplitPattern::Seeded(seed)] {
                if let Ok((tr, va)) = grid_split(&d, a, b, pattern) {
                    prop_assert_eq!((tr.len(), va.len()), (a, b));
                    let mut all: Vec<usize> = index_set(&tr).into_iter().chain(index_set(&va)).collect();
                    all.sort_unstable();
                    all.dedup();
                    prop_assert_eq!(all.len(), a + b);
                } else {
                    prop_assert!(a + b > n || pattern == SplitPattern::Stride2);
                }
            }
        }
    }
}
