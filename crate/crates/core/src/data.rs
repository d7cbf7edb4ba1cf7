//! Datasets: synthetic generation, CSV ingestion, standardisation and
//! seeded splitting.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_label, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Row-major `n x d` features with 1-based labels.
#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    d: usize,
    k: usize,
    pub standardization: Option<Standardization>,
}

impl OrdinalDataset {
    pub fn new(features: Vec<f64>, d: usize, labels: Vec<usize>, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::KInvalid(k));
        }
        if d == 0 || features.len() != labels.len() * d {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * d.max(1),
                got: features.len(),
            });
        }
        for &y in &labels {
            check_label(y, k)?;
        }
        Ok(Self {
            features,
            labels,
            d,
            k,
            standardization: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>, k: usize) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: r.len(),
            });
        }
        Self::new(rows.concat(), d, labels, k)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.d)
    }

    /// Same features, different labels.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: labels.len(),
            });
        }
        for &y in &labels {
            check_label(y, self.k)?;
        }
        Ok(Self {
            labels,
            ..self.clone()
        })
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            d: self.d,
            k: self.k,
            standardization: self.standardization.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &y in &self.labels {
            counts[y - 1] += 1;
        }
        counts
    }

    /// Writes features plus `label`, and `noisy_label` when given.
    pub fn write_csv(&self, path: &Path, noisy_labels: Option<&[usize]>) -> Result<()> {
        if let Some(noisy) = noisy_labels {
            if noisy.len() != self.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.len(),
                    got: noisy.len(),
                });
            }
        }
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.d).map(|j| format!("x{}", j + 1)).collect();
        header.push("label".into());
        if noisy_labels.is_some() {
            header.push("noisy_label".into());
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[i].to_string());
            if let Some(noisy) = noisy_labels {
                rec.push(noisy[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub direction: Vec<f64>,
    /// Strictly decreasing, length `k - 1`.
    pub margins: Vec<f64>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::with_shape(2500, 2, 5, 0)
    }
}

impl SynthSpec {
    /// Equal-weight unit direction and margins evenly spaced over [1.5, -1.5].
    pub fn with_shape(n: usize, d: usize, k: usize, seed: u64) -> Self {
        let direction = vec![1.0 / (d.max(1) as f64).sqrt(); d];
        let margins = if k <= 2 {
            vec![0.0; k.saturating_sub(1)]
        } else {
            (0..k - 1)
                .map(|i| 1.5 - 3.0 * i as f64 / (k - 2) as f64)
                .collect()
        };
        Self {
            n,
            d,
            k,
            direction,
            margins,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::KInvalid(self.k));
        }
        if self.n == 0 || self.d == 0 {
            return Err(Error::ConfigInvalid("synthetic n and d must be positive".into()));
        }
        if self.direction.len() != self.d {
            return Err(Error::ConfigInvalid(format!(
                "direction has length {}, expected d={}",
                self.direction.len(),
                self.d
            )));
        }
        let norm = self.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::ConfigInvalid(format!("direction norm {norm} != 1")));
        }
        if self.margins.len() != self.k - 1 {
            return Err(Error::ConfigInvalid(format!(
                "need {} margins, got {}",
                self.k - 1,
                self.margins.len()
            )));
        }
        if self.margins.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::ConfigInvalid("margins must be strictly decreasing".into()));
        }
        Ok(())
    }

    /// The generating rule `1 + sum_k I{direction . x + margin_k > 0}`.
    pub fn label_of(&self, x: &[f64]) -> usize {
        let s: f64 = self.direction.iter().zip(x).map(|(a, b)| a * b).sum();
        1 + self.margins.iter().filter(|&&m| s + m > 0.0).count()
    }
}

pub fn generate_synth(spec: &SynthSpec) -> Result<OrdinalDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let features: Vec<f64> = (0..spec.n * spec.d)
        .map(|_| rng.random_range(-3.0..3.0))
        .collect();
    let labels = features
        .chunks_exact(spec.d)
        .map(|x| spec.label_of(x))
        .collect();
    OrdinalDataset::new(features, spec.d, labels, spec.k)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
    Last,
}

impl LabelColumn {
    /// A bare integer is a 0-based column index, anything else a header name.
    pub fn parse(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        }
    }
}

/// Reads a comma-separated file. A first row containing any non-numeric
/// cell is taken as a header.
pub fn load_csv(path: &Path, label_column: &LabelColumn, k: usize) -> Result<OrdinalDataset> {
    load_csv_with_extra(path, label_column, &[], k).map(|(d, _)| d)
}

/// Like [`load_csv`] but also extracts extra integer label columns (by name),
/// which are excluded from the features.
pub fn load_csv_with_extra(
    path: &Path,
    label_column: &LabelColumn,
    extra: &[&str],
    k: usize,
) -> Result<(OrdinalDataset, Vec<Vec<usize>>)> {
    if k < 2 {
        return Err(Error::KInvalid(k));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut records = reader.records();
    let first = match records.next() {
        Some(r) => r?,
        None => return Err(Error::EmptyDataset),
    };
    let header_present = first.iter().any(|c| c.parse::<f64>().is_err());
    let width = first.len();
    let names: Vec<String> = if header_present {
        first.iter().map(str::to_string).collect()
    } else {
        (0..width).map(|j| j.to_string()).collect()
    };

    let find = |name: &str| -> Result<usize> {
        names.iter().position(|n| n == name).ok_or_else(|| Error::ParseError {
            path: path.to_path_buf(),
            row: 1,
            column: name.to_string(),
            message: "column not found in header".into(),
        })
    };
    let label_idx = match label_column {
        LabelColumn::Name(n) => find(n)?,
        LabelColumn::Index(i) if *i < width => *i,
        LabelColumn::Index(i) => {
            return Err(Error::ParseError {
                path: path.to_path_buf(),
                row: 1,
                column: i.to_string(),
                message: format!("label column index out of range (width {width})"),
            })
        }
        LabelColumn::Last => width - 1,
    };
    let extra_idx: Vec<usize> = extra.iter().map(|n| find(n)).collect::<Result<_>>()?;
    let feature_idx: Vec<usize> = (0..width)
        .filter(|j| *j != label_idx && !extra_idx.contains(j))
        .collect();
    if feature_idx.is_empty() {
        return Err(Error::ConfigInvalid("csv has no feature columns".into()));
    }

    let parse_label = |cell: &str, row: usize, col: usize| -> Result<usize> {
        let v: f64 = cell.parse().map_err(|_| Error::ParseError {
            path: path.to_path_buf(),
            row,
            column: names[col].clone(),
            message: format!("non-numeric label '{cell}'"),
        })?;
        if v.fract() != 0.0 {
            return Err(Error::ParseError {
                path: path.to_path_buf(),
                row,
                column: names[col].clone(),
                message: format!("label '{cell}' is not an integer"),
            });
        }
        if v < 1.0 || v > k as f64 {
            return Err(Error::LabelOutOfRange { label: v as i64, k });
        }
        Ok(v as usize)
    };

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut extras: Vec<Vec<usize>> = vec![Vec::new(); extra.len()];
    let data_rows = std::iter::once(Ok(first))
        .filter(|_| !header_present)
        .chain(records);
    // rows are reported 1-based as they appear in the file
    let row_offset = if header_present { 2 } else { 1 };
    for (r, rec) in data_rows.enumerate() {
        let rec = rec?;
        let row = r + row_offset;
        if rec.len() != width {
            return Err(Error::ParseError {
                path: path.to_path_buf(),
                row,
                column: "*".into(),
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        for &j in &feature_idx {
            let cell = &rec[j];
            let v: f64 = cell.parse().map_err(|_| Error::ParseError {
                path: path.to_path_buf(),
                row,
                column: names[j].clone(),
                message: format!("non-numeric value '{cell}'"),
            })?;
            features.push(v);
        }
        labels.push(parse_label(&rec[label_idx], row, label_idx)?);
        for (e, &j) in extra_idx.iter().enumerate() {
            extras[e].push(parse_label(&rec[j], row, j)?);
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    log::info!(
        "loaded {} rows x {} features from {}",
        labels.len(),
        feature_idx.len(),
        path.display()
    );
    Ok((
        OrdinalDataset::new(features, feature_idx.len(), labels, k)?,
        extras,
    ))
}

/// Standardise with statistics from `train` only, applied to every dataset.
///
/// Uses the population standard deviation; constant columns keep std 1.
pub fn standardize(
    train: &OrdinalDataset,
    others: &[&OrdinalDataset],
) -> Result<(OrdinalDataset, Vec<OrdinalDataset>)> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = train.dim();
    let n = train.len() as f64;
    let mut mean = vec![0.0; d];
    for row in train.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for row in train.rows() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let sd = (s / n).sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                log::warn!("feature {j} is constant in the training split; using std 1");
                1.0
            }
        })
        .collect();
    let stats = Standardization { mean, std };
    let apply = |data: &OrdinalDataset| -> Result<OrdinalDataset> {
        if data.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: data.dim(),
            });
        }
        let mut out = data.clone();
        for row in out.features.chunks_exact_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
                *v = (*v - m) / s;
            }
        }
        out.standardization = Some(stats.clone());
        Ok(out)
    };
    let train_out = apply(train)?;
    let others_out = others.iter().map(|o| apply(o)).collect::<Result<_>>()?;
    Ok((train_out, others_out))
}

pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Seeded shuffle, then the first `floor(fraction * n)` indices train.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, have: n });
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::ConfigInvalid(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let idx = shuffled_indices(n, seed);
    let n_train = ((train_fraction * n as f64).floor() as usize).clamp(1, n - 1);
    let test = idx[n_train..].to_vec();
    let mut train = idx;
    train.truncate(n_train);
    Ok((train, test))
}

pub fn split(data: &OrdinalDataset, train_fraction: f64, seed: u64) -> Result<(OrdinalDataset, OrdinalDataset)> {
    let (tr, te) = split_indices(data.len(), train_fraction, seed)?;
    Ok((data.subset(&tr), data.subset(&te)))
}

/// Contiguous folds over a seeded permutation; the first `n % k` folds get
/// one extra sample. Returns `(train, validation)` index pairs.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::ConfigInvalid(format!("k-fold needs k >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::TooFewSamples { needed: k, have: n });
    }
    let idx = shuffled_indices(n, seed);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let val = idx[start..start + len].to_vec();
        let train = idx[..start].iter().chain(&idx[start + len..]).copied().collect();
        folds.push((train, val));
        start += len;
    }
    Ok(folds)
}

pub fn kfold(data: &OrdinalDataset, k: usize, seed: u64) -> Result<Vec<(OrdinalDataset, OrdinalDataset)>> {
    Ok(kfold_indices(data.len(), k, seed)?
        .into_iter()
        .map(|(tr, va)| (data.subset(&tr), data.subset(&va)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn synth_defaults_cover_every_class() {
        let data = generate_synth(&SynthSpec::default()).unwrap();
        assert_eq!(data.len(), 2500);
        assert!(data.class_counts().iter().all(|&c| c > 0));
        let spec = SynthSpec::default();
        for (x, &y) in data.rows().zip(data.labels()) {
            assert_eq!(spec.label_of(x), y);
        }
        assert_eq!(data, generate_synth(&SynthSpec::default()).unwrap());
    }

    #[test]
    fn synth_margins() {
        let s = SynthSpec::default();
        assert_eq!(s.margins, vec![1.5, 0.5, -0.5, -1.5]);
        let mut bad = s.clone();
        bad.margins = vec![1.0, 1.0, 0.0, -1.0];
        assert!(generate_synth(&bad).is_err());
        let mut bad = s;
        bad.direction = vec![1.0, 1.0];
        assert!(generate_synth(&bad).is_err());
    }

    #[test]
    fn csv_with_header() {
        let f = write_tmp("a,b,label\n1.0,2.0,1\n3,4,2\n5,6,3\n");
        let d = load_csv(f.path(), &LabelColumn::Name("label".into()), 3).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.labels(), &[1, 2, 3]);
        assert_eq!(d.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn csv_without_header_uses_index() {
        let f = write_tmp("1,1.5,2\n3,0.5,4\n");
        let d = load_csv(f.path(), &LabelColumn::Index(0), 3).unwrap();
        assert_eq!(d.labels(), &[1, 3]);
        assert_eq!(d.row(0), &[1.5, 2.0]);
    }

    #[test]
    fn csv_non_numeric_cell_names_row_and_column() {
        let f = write_tmp("a,b,label\n1,2,1\n1,oops,2\n");
        let err = load_csv(f.path(), &LabelColumn::Last, 3).unwrap_err();
        match err {
            Error::ParseError { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_label_zero_out_of_range() {
        let f = write_tmp("a,label\n1,0\n");
        assert!(matches!(
            load_csv(f.path(), &LabelColumn::Last, 3),
            Err(Error::LabelOutOfRange { label: 0, k: 3 })
        ));
    }

    #[test]
    fn standardize_column() {
        let train = OrdinalDataset::from_rows(&[vec![1.0], vec![2.0], vec![3.0]], vec![1, 1, 2], 2).unwrap();
        let test = OrdinalDataset::from_rows(&[vec![2.0], vec![10.0]], vec![1, 2], 2).unwrap();
        let (t, others) = standardize(&train, &[&test]).unwrap();
        let want = [-1.224744871391589, 0.0, 1.224744871391589];
        for (v, w) in t.features().iter().zip(want) {
            assert!((v - w).abs() < 1e-12);
        }
        // test uses train statistics, not its own
        let sd = (2.0f64 / 3.0).sqrt();
        assert!((others[0].row(1)[0] - 8.0 / sd).abs() < 1e-12);
        assert_eq!(others[0].row(0)[0], 0.0);
        // idempotent
        let (again, _) = standardize(&t, &[]).unwrap();
        for (a, b) in again.features().iter().zip(t.features()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn standardize_constant_column_keeps_values_finite() {
        let train = OrdinalDataset::from_rows(&[vec![5.0, 1.0], vec![5.0, 2.0]], vec![1, 2], 2).unwrap();
        let (t, _) = standardize(&train, &[]).unwrap();
        assert_eq!(t.standardization.as_ref().unwrap().std[0], 1.0);
        assert_eq!(t.row(0)[0], 0.0);
    }

    #[test]
    fn split_sizes_and_seeds() {
        let (tr, te) = split_indices(10, 0.8, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let perms: std::collections::HashSet<Vec<usize>> =
            (0..5).map(|s| shuffled_indices(10, s)).collect();
        assert_eq!(perms.len(), 5);
        assert!(matches!(split_indices(1, 0.8, 0), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn kfold_sizes() {
        let folds = kfold_indices(10, 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        assert!(folds.iter().all(|(tr, va)| va.len() == 2 && tr.len() == 8));
        assert_eq!(folds, kfold_indices(10, 5, 3).unwrap());
        assert!(matches!(kfold_indices(3, 5, 0), Err(Error::TooFewSamples { .. })));
    }
}
