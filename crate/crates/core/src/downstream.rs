//! Property-prediction harness: fingerprints, ECFP baseline, dataset
//! splits, ridge regression and radius selection.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::{debug, warn};
use mhg_autodiff::rng::{keyed_rng, standard_normal};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::model::{gin_encode_batch, ModelError, ModelParams};
use crate::molgraph::Molecule;

#[derive(Debug, Error)]
pub enum DownstreamError {
    #[error("dataset has {0} records; at least 5 are needed to split")]
    DatasetTooSmall(usize),
    #[error("split ratios must be non-negative and sum to 1")]
    BadRatios,
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("target is constant")]
    ConstantTarget,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("fingerprint file: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, DownstreamError>;

/// Rows of fixed width, tagged with where they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintMatrix {
    pub rows: Vec<Vec<f64>>,
    pub dim: usize,
    pub provenance: String,
}

impl FingerprintMatrix {
    pub fn new(rows: Vec<Vec<f64>>, dim: usize, provenance: impl Into<String>) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(DownstreamError::LengthMismatch(r.len(), dim));
        }
        Ok(Self {
            rows,
            dim,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Header `id,f0,..,f{d-1}`; ids are row indices.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for j in 0..self.dim {
            write!(out, ",f{j}").expect("string write");
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            write!(out, "{i}").expect("string write");
            for v in row {
                write!(out, ",{v}").expect("string write");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, provenance: impl Into<String>) -> Result<Self> {
        let bad = |m: String| DownstreamError::Format(m);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("missing header".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"id")
            || cols[1..]
                .iter()
                .enumerate()
                .any(|(j, c)| *c != format!("f{j}"))
        {
            return Err(bad("header must be id,f0,..".into()));
        }
        let dim = cols.len() - 1;
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut fields = line.split(',');
            let id: usize = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| bad(format!("row {}: bad id", n + 1)))?;
            if id != rows.len() {
                return Err(bad(format!("row {}: id {id} out of order", n + 1)));
            }
            let row = fields
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("row {}: bad value", n + 1)))?;
            if row.len() != dim {
                return Err(bad(format!("row {}: expected {dim} values", n + 1)));
            }
            rows.push(row);
        }
        Self::new(rows, dim, provenance)
    }
}

/// Readout `h_G` per molecule, eval-mode statistics.
pub fn fingerprint(
    mols: &[Molecule],
    params: &ModelParams,
    provenance: &str,
) -> Result<FingerprintMatrix> {
    let mut rows = Vec::with_capacity(mols.len());
    for chunk in mols.chunks(64) {
        let refs: Vec<&Molecule> = chunk.iter().collect();
        rows.extend(gin_encode_batch(&refs, params).map_err(|e| match e {
            ModelError::Feature { index, source } => ModelError::Feature {
                index: index + rows.len(),
                source,
            },
            other => other,
        })?);
    }
    FingerprintMatrix::new(rows, params.config.readout_dim(), provenance)
}

pub const ECFP_RADIUS: usize = 3;
pub const ECFP_BITS: usize = 1024;

fn fnv1a_bytes(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn fnv1a(words: &[u64]) -> u64 {
    fnv1a_bytes(words.iter().flat_map(|w| w.to_le_bytes()))
}

/// Morgan-style circular fingerprint: atom identifiers are rehashed with
/// their sorted (bond order, neighbor identifier) lists `radius` times and
/// every identifier from every depth sets bit `id mod n_bits`.
pub fn ecfp(m: &Molecule, radius: usize, n_bits: usize) -> Vec<bool> {
    let mut bits = vec![false; n_bits];
    if n_bits == 0 {
        return bits;
    }
    let mut ids: Vec<u64> = m
        .atoms()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            fnv1a(&[
                a.element.atomic_number() as u64,
                m.degree(i) as u64,
                a.explicit_h_count as u64,
                a.formal_charge as i64 as u64,
                a.in_ring as u64,
                a.aromatic as u64,
            ])
        })
        .collect();
    for depth in 0..=radius {
        for &id in &ids {
            bits[(id % n_bits as u64) as usize] = true;
        }
        if depth == radius {
            break;
        }
        ids = (0..ids.len())
            .map(|i| {
                let mut env: Vec<(u64, u64)> = m
                    .neighbors(i)
                    .iter()
                    .map(|&(j, b)| (m.bonds()[b].order.code() as u64, ids[j]))
                    .collect();
                env.sort_unstable();
                let mut words = vec![depth as u64 + 1, ids[i]];
                words.extend(env.iter().flat_map(|&(o, id)| [o, id]));
                fnv1a(&words)
            })
            .collect();
    }
    bits
}

pub fn ecfp_matrix(mols: &[Molecule]) -> FingerprintMatrix {
    let rows = mols
        .iter()
        .map(|m| {
            ecfp(m, ECFP_RADIUS, ECFP_BITS)
                .into_iter()
                .map(|b| if b { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    FingerprintMatrix {
        rows,
        dim: ECFP_BITS,
        provenance: "ecfp6".into(),
    }
}

/// Seeded Gaussian projection of the ECFP bits to `width` columns.
pub fn random_projection(ecfp: &FingerprintMatrix, width: usize, seed: u64) -> FingerprintMatrix {
    let proj = standard_normal(&mut keyed_rng(seed, 0x5eed, 0), &[ecfp.dim, width]);
    let p = proj.data();
    let rows = ecfp
        .rows
        .iter()
        .map(|x| {
            let mut out = vec![0.0; width];
            for (i, &v) in x.iter().enumerate() {
                if v != 0.0 {
                    for (o, w) in out.iter_mut().zip(&p[i * width..(i + 1) * width]) {
                        *o += v * w;
                    }
                }
            }
            out
        })
        .collect();
    FingerprintMatrix {
        rows,
        dim: width,
        provenance: format!("random-projection({width})"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

/// Disjoint, exhaustive index sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn tags(&self, n: usize) -> Vec<SplitTag> {
        let mut tags = vec![SplitTag::Train; n];
        for &i in &self.val {
            tags[i] = SplitTag::Val;
        }
        for &i in &self.test {
            tags[i] = SplitTag::Test;
        }
        tags
    }
}

/// Seeded shuffle then contiguous cut: val and test get `floor(n * ratio)`
/// records and train takes the rest.
pub fn split_dataset(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<Split> {
    if n < 5 {
        return Err(DownstreamError::DatasetTooSmall(n));
    }
    let (tr, va, te) = ratios;
    if tr < 0.0 || va < 0.0 || te < 0.0 || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(DownstreamError::BadRatios);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut keyed_rng(seed, 0x5711, 0));
    let n_val = (n as f64 * va).floor() as usize;
    let n_test = (n as f64 * te).floor() as usize;
    let n_train = n - n_val - n_test;
    Ok(Split {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    })
}

pub fn r2_score(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(DownstreamError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.len() < 2 {
        return Err(DownstreamError::EmptyInput);
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(DownstreamError::ConstantTarget);
    }
    let ss_res: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (y - p).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub const DEFAULT_RIDGE_GRID: [f64; 7] = [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0];

/// Ridge regression on standardized features.
#[derive(Debug, Clone)]
pub struct RidgeModel {
    /// Input columns used, after dropping constant and duplicate ones.
    pub kept: Vec<usize>,
    means: Vec<f64>,
    scales: Vec<f64>,
    weights: Vec<f64>,
    intercept: f64,
    pub lambda: f64,
    pub val_r2: f64,
}

impl RidgeModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.kept
            .iter()
            .enumerate()
            .map(|(k, &j)| (x[j] - self.means[k]) / self.scales[k] * self.weights[k])
            .sum::<f64>()
            + self.intercept
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|r| self.predict_row(r)).collect()
    }
}

struct Standardized {
    kept: Vec<usize>,
    means: Vec<f64>,
    scales: Vec<f64>,
    x: DMatrix<f64>,
}

fn standardize(rows: &[Vec<f64>]) -> Standardized {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let mut kept = Vec::new();
    let mut means = Vec::new();
    let mut scales = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut seen: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    let (mut constant, mut duplicate) = (0, 0);
    for j in 0..d {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        if var <= 1e-24 {
            constant += 1;
            continue;
        }
        let key: Vec<u64> = col.iter().map(|v| v.to_bits()).collect();
        if seen.contains_key(&key) {
            duplicate += 1;
            continue;
        }
        seen.insert(key, j);
        let sd = var.sqrt();
        kept.push(j);
        means.push(mean);
        scales.push(sd);
        columns.push(col.iter().map(|v| (v - mean) / sd).collect());
    }
    if constant + duplicate > 0 {
        debug!("ridge: dropped {constant} constant and {duplicate} duplicate columns of {d}");
    }
    let x = DMatrix::from_fn(n, kept.len(), |i, k| columns[k][i]);
    Standardized {
        kept,
        means,
        scales,
        x,
    }
}

fn solve_ridge(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let (n, d) = x.shape();
    let fail = || {
        DownstreamError::DegenerateDesign(format!("ridge system is singular at lambda {lambda}"))
    };
    if d <= n {
        let a = x.transpose() * x + DMatrix::identity(d, d) * lambda;
        let chol = a.cholesky().ok_or_else(fail)?;
        Ok(chol.solve(&(x.transpose() * y)))
    } else {
        let k = x * x.transpose() + DMatrix::identity(n, n) * lambda;
        let chol = k.cholesky().ok_or_else(fail)?;
        Ok(x.transpose() * chol.solve(y))
    }
}

/// Fits one ridge model per grid point on the training rows and keeps the
/// one with the best validation R² (first on ties).
pub fn fit_ridge(
    x_train: &[Vec<f64>],
    y_train: &[f64],
    x_val: &[Vec<f64>],
    y_val: &[f64],
    grid: &[f64],
) -> Result<RidgeModel> {
    if x_train.len() != y_train.len() {
        return Err(DownstreamError::LengthMismatch(
            x_train.len(),
            y_train.len(),
        ));
    }
    if x_train.len() < 2 {
        return Err(DownstreamError::DegenerateDesign(
            "fewer than 2 training rows".into(),
        ));
    }
    if grid.is_empty() {
        return Err(DownstreamError::EmptyInput);
    }
    let s = standardize(x_train);
    if s.kept.is_empty() {
        return Err(DownstreamError::DegenerateDesign(
            "every feature column is constant".into(),
        ));
    }
    if s.kept.len() < x_train[0].len() {
        warn!(
            "ridge: using {} of {} feature columns (constant or duplicate columns dropped)",
            s.kept.len(),
            x_train[0].len()
        );
    }
    let intercept = y_train.iter().sum::<f64>() / y_train.len() as f64;
    let y = DVector::from_iterator(y_train.len(), y_train.iter().map(|v| v - intercept));
    let mut best: Option<RidgeModel> = None;
    for &lambda in grid {
        let w = solve_ridge(&s.x, &y, lambda)?;
        let model = RidgeModel {
            kept: s.kept.clone(),
            means: s.means.clone(),
            scales: s.scales.clone(),
            weights: w.iter().copied().collect(),
            intercept,
            lambda,
            val_r2: f64::NEG_INFINITY,
        };
        let val_r2 = r2_score(y_val, &model.predict(x_val))?;
        if best.as_ref().is_none_or(|b| val_r2 > b.val_r2) {
            best = Some(RidgeModel { val_r2, ..model });
        }
    }
    Ok(best.expect("non-empty grid"))
}

/// Radius with the best validation R²; ties go to the smaller radius.
pub fn select_radius(val_r2: &BTreeMap<usize, f64>) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (&r, &score) in val_r2 {
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((r, score));
        }
    }
    best.map(|(r, _)| r).ok_or(DownstreamError::EmptyInput)
}

/// One line of an evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub radius: Option<usize>,
    pub split: SplitTag,
    pub r2: f64,
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("method,radius,split,r2\n");
    for r in rows {
        let radius = r.radius.map_or(String::new(), |v| v.to_string());
        writeln!(out, "{},{},{},{}", r.method, radius, r.split.as_str(), r.r2)
            .expect("string write");
    }
    out
}

fn pick<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

/// A ridge model fitted on the train rows with its grid chosen on val.
pub struct Fitted {
    pub model: RidgeModel,
    pub train_r2: f64,
    pub val_r2: f64,
}

pub fn fit_on_split(
    x: &FingerprintMatrix,
    y: &[f64],
    split: &Split,
    grid: &[f64],
) -> Result<Fitted> {
    if x.len() != y.len() {
        return Err(DownstreamError::LengthMismatch(x.len(), y.len()));
    }
    let model = fit_ridge(
        &pick(&x.rows, &split.train),
        &pick(y, &split.train),
        &pick(&x.rows, &split.val),
        &pick(y, &split.val),
        grid,
    )?;
    let train_r2 = r2_score(
        &pick(y, &split.train),
        &model.predict(&pick(&x.rows, &split.train)),
    )?;
    let val_r2 = model.val_r2;
    Ok(Fitted {
        model,
        train_r2,
        val_r2,
    })
}

/// Test R² of an already-selected model.
pub fn test_r2(fitted: &Fitted, x: &FingerprintMatrix, y: &[f64], split: &Split) -> Result<f64> {
    r2_score(
        &pick(y, &split.test),
        &fitted.model.predict(&pick(&x.rows, &split.test)),
    )
}

/// Train, val and test rows for one representation.
pub fn evaluate(
    method: &str,
    radius: Option<usize>,
    x: &FingerprintMatrix,
    y: &[f64],
    split: &Split,
    grid: &[f64],
) -> Result<Vec<ReportRow>> {
    let fitted = fit_on_split(x, y, split, grid)?;
    let test = test_r2(&fitted, x, y, split)?;
    let row = |split, r2| ReportRow {
        method: method.to_string(),
        radius,
        split,
        r2,
    };
    Ok(vec![
        row(SplitTag::Train, fitted.train_r2),
        row(SplitTag::Val, fitted.val_r2),
        row(SplitTag::Test, test),
    ])
}

/// Outcome of a radius scan: validation scores for every radius and the
/// test score of the selected one only.
#[derive(Debug, Clone)]
pub struct RadiusScan {
    pub val_r2: BTreeMap<usize, f64>,
    pub chosen: usize,
    pub test_r2: f64,
}

/// Fits every radius, selects on validation R², and only then scores the
/// selected radius on the test rows.
pub fn radius_scan(
    per_radius: &BTreeMap<usize, FingerprintMatrix>,
    y: &[f64],
    split: &Split,
    grid: &[f64],
) -> Result<RadiusScan> {
    let mut fitted = BTreeMap::new();
    for (&r, x) in per_radius {
        fitted.insert(r, fit_on_split(x, y, split, grid)?);
    }
    let val_r2: BTreeMap<usize, f64> = fitted.iter().map(|(&r, f)| (r, f.val_r2)).collect();
    let chosen = select_radius(&val_r2)?;
    let test_r2 = test_r2(&fitted[&chosen], &per_radius[&chosen], y, split)?;
    Ok(RadiusScan {
        val_r2,
        chosen,
        test_r2,
    })
}
