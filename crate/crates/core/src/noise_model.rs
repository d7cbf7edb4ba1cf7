//! Class-conditional noise matrices for ordinal labels.
//!
//! Entry `(i, j)` of a noise matrix is `P(noisy = j | clean = i)`. The
//! inversely decaying family puts `rho_i / |i - j|` off the diagonal, so
//! neighbouring ranks are confused more often than distant ones, and the
//! diagonal takes whatever mass is left.
//!
//! Classes are 1-based wherever a label crosses the API; matrix indices are
//! 0-based.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_label, Error, Result};
use crate::linalg::SquareMatrix;

/// Matrices whose 1-norm condition number exceeds this are rejected.
pub const CONDITION_CAP: f64 = 1e8;

const ROW_SUM_TOL: f64 = 1e-12;
const EXPLICIT_ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    UniformInverselyDecaying,
    ClassConditionalInverselyDecaying,
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rho: Vec<f64>,
    pub explicit_matrix: Option<SquareMatrix>,
    pub k: usize,
}

impl NoiseSpec {
    pub fn uniform(k: usize, rho: f64) -> Self {
        Self {
            kind: NoiseKind::UniformInverselyDecaying,
            rho: vec![rho; k],
            explicit_matrix: None,
            k,
        }
    }

    pub fn class_conditional(rho: Vec<f64>) -> Self {
        Self {
            kind: NoiseKind::ClassConditionalInverselyDecaying,
            k: rho.len(),
            rho,
            explicit_matrix: None,
        }
    }

    pub fn explicit(matrix: SquareMatrix) -> Self {
        Self {
            kind: NoiseKind::Explicit,
            rho: Vec::new(),
            k: matrix.dim(),
            explicit_matrix: Some(matrix),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::SpecInvalid(format!("K must be >= 2, got {}", self.k)));
        }
        match self.kind {
            NoiseKind::Explicit => {
                let m = self
                    .explicit_matrix
                    .as_ref()
                    .ok_or_else(|| Error::SpecInvalid("explicit spec without a matrix".into()))?;
                if m.dim() != self.k {
                    return Err(Error::SpecInvalid(format!(
                        "explicit matrix is {}x{}, expected K={}",
                        m.dim(),
                        m.dim(),
                        self.k
                    )));
                }
                for i in 0..self.k {
                    let row = m.row(i);
                    if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                        return Err(Error::SpecInvalid(format!(
                            "row {} has entry {v} outside [0, 1]",
                            i + 1
                        )));
                    }
                    let s: f64 = row.iter().sum();
                    if (s - 1.0).abs() > EXPLICIT_ROW_SUM_TOL {
                        return Err(Error::SpecInvalid(format!(
                            "row {} sums to {s}, not 1",
                            i + 1
                        )));
                    }
                }
            }
            NoiseKind::UniformInverselyDecaying | NoiseKind::ClassConditionalInverselyDecaying => {
                if self.rho.len() != self.k {
                    return Err(Error::SpecInvalid(format!(
                        "rho has {} entries, expected K={}",
                        self.rho.len(),
                        self.k
                    )));
                }
                if self.kind == NoiseKind::UniformInverselyDecaying
                    && self.rho.iter().any(|&r| r != self.rho[0])
                {
                    return Err(Error::SpecInvalid("uniform spec with unequal rho".into()));
                }
                for (i, &r) in self.rho.iter().enumerate() {
                    if !(0.0..1.0).contains(&r) {
                        return Err(Error::SpecInvalid(format!(
                            "rho_{} = {r} outside [0, 1)",
                            i + 1
                        )));
                    }
                    let off = off_diagonal_mass(r, i, self.k);
                    if off >= 1.0 {
                        return Err(Error::SpecInvalid(format!(
                            "class {} has off-diagonal mass {off} >= 1",
                            i + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn off_diagonal_mass(rho: f64, i: usize, k: usize) -> f64 {
    (0..k)
        .filter(|&j| j != i)
        .map(|j| rho / (i as f64 - j as f64).abs())
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub doubly_stochastic: bool,
    pub max_column_sum_deviation: f64,
    /// Strict row dominance, i.e. every diagonal entry above 0.5.
    pub diagonally_dominant: bool,
    pub inverse_row_sums: Vec<f64>,
    pub inverse_col_sums: Vec<f64>,
    pub min_inverse_entry_per_column: Vec<f64>,
    pub lipschitz_inflation_m: f64,
    pub condition_number: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMatrix {
    entries: SquareMatrix,
    inverse: Option<SquareMatrix>,
    diagnostics: Option<Diagnostics>,
}

/// Build the transition matrix described by `spec`.
pub fn build_noise_matrix(spec: &NoiseSpec) -> Result<NoiseMatrix> {
    spec.validate()?;
    let k = spec.k;
    let entries = match spec.kind {
        NoiseKind::Explicit => {
            let mut m = spec.explicit_matrix.clone().expect("validated");
            for i in 0..k {
                let s: f64 = m.row(i).iter().sum();
                m.row_mut(i).iter_mut().for_each(|v| *v /= s);
            }
            m
        }
        _ => {
            let mut m = SquareMatrix::zeros(k);
            for i in 0..k {
                let mut off = 0.0;
                for j in 0..k {
                    if i != j {
                        let eta = spec.rho[i] / (i as f64 - j as f64).abs();
                        m.set(i, j, eta);
                        off += eta;
                    }
                }
                let diag = 1.0 - off;
                if diag <= 0.0 {
                    return Err(Error::SpecInvalid(format!(
                        "class {} diagonal would be {diag}",
                        i + 1
                    )));
                }
                m.set(i, i, diag);
            }
            m
        }
    };
    for (i, s) in entries.row_sums().iter().enumerate() {
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::SpecInvalid(format!("row {} sums to {s}", i + 1)));
        }
    }
    Ok(NoiseMatrix {
        entries,
        inverse: None,
        diagnostics: None,
    })
}

/// Invert `matrix` and populate its diagnostics.
pub fn invert_noise_matrix(matrix: NoiseMatrix) -> Result<NoiseMatrix> {
    matrix.invert()
}

impl NoiseMatrix {
    pub fn identity(k: usize) -> Self {
        Self {
            entries: SquareMatrix::identity(k),
            inverse: None,
            diagnostics: None,
        }
    }

    /// Wrap an arbitrary matrix, renormalising rows that sum to 1 within 1e-6.
    pub fn from_explicit(matrix: SquareMatrix) -> Result<Self> {
        build_noise_matrix(&NoiseSpec::explicit(matrix))
    }

    pub fn k(&self) -> usize {
        self.entries.dim()
    }

    pub fn entries(&self) -> &SquareMatrix {
        &self.entries
    }

    pub fn entry(&self, true_label: usize, noisy_label: usize) -> f64 {
        self.entries.get(true_label - 1, noisy_label - 1)
    }

    pub fn inverse(&self) -> Option<&SquareMatrix> {
        self.inverse.as_ref()
    }

    pub fn diagnostics(&self) -> Option<&Diagnostics> {
        self.diagnostics.as_ref()
    }

    pub fn is_symmetric(&self) -> bool {
        let k = self.k();
        (0..k).all(|i| (0..k).all(|j| self.entries.get(i, j) == self.entries.get(j, i)))
    }

    pub fn invert(mut self) -> Result<Self> {
        let (inverse, condition) = self.entries.inverse_with_condition();
        let inverse = match inverse {
            Some(inv) if condition.is_finite() && condition <= CONDITION_CAP => inv,
            _ => {
                return Err(Error::SingularMatrix {
                    condition,
                    cap: CONDITION_CAP,
                })
            }
        };
        let k = self.k();
        let col_sums = self.entries.col_sums();
        let max_column_sum_deviation = col_sums
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max);
        let diagonally_dominant = (0..k).all(|i| {
            let d = self.entries.get(i, i);
            let off: f64 = (0..k).filter(|&j| j != i).map(|j| self.entries.get(i, j)).sum();
            d > off
        });
        if !diagonally_dominant {
            log::warn!("noise matrix is not strictly diagonally dominant");
        }
        let min_inverse_entry_per_column = (0..k)
            .map(|j| (0..k).map(|i| inverse.get(i, j)).fold(f64::INFINITY, f64::min))
            .collect();
        self.diagnostics = Some(Diagnostics {
            doubly_stochastic: max_column_sum_deviation <= 1e-9,
            max_column_sum_deviation,
            diagonally_dominant,
            inverse_row_sums: inverse.row_sums(),
            inverse_col_sums: inverse.col_sums(),
            min_inverse_entry_per_column,
            lipschitz_inflation_m: inverse.norm_inf(),
            condition_number: condition,
        });
        self.inverse = Some(inverse);
        Ok(self)
    }

    /// `M = max_y sum_j |N^-1_(y,j)|`, the factor by which correction can
    /// inflate a loss's Lipschitz constant.
    pub fn lipschitz_inflation(&self) -> Result<f64> {
        self.inverse
            .as_ref()
            .map(SquareMatrix::norm_inf)
            .ok_or(Error::InverseMissing)
    }

    /// Replace each 1-based label by a draw from its row.
    pub fn corrupt_labels(&self, labels: &[usize], seed: u64) -> Result<Vec<usize>> {
        let k = self.k();
        for &y in labels {
            check_label(y, k)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(labels
            .iter()
            .map(|&y| sample_row(self.entries.row(y - 1), rng.random::<f64>()) + 1)
            .collect())
    }

    pub fn to_text(&self) -> String {
        let k = self.k();
        let mut out = format!("K {k}\n");
        for i in 0..k {
            let row: Vec<String> = self
                .entries
                .row(i)
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let parse_err = |msg: String| Error::SpecInvalid(format!("noise matrix file: {msg}"));
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| parse_err("empty file".into()))?;
        let k = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["K", k] => k
                .parse::<usize>()
                .map_err(|e| parse_err(format!("bad K: {e}")))?,
            _ => return Err(parse_err(format!("expected 'K <int>', got '{header}'"))),
        };
        let mut rows = Vec::with_capacity(k);
        for r in 0..k {
            let line = lines
                .next()
                .ok_or_else(|| parse_err(format!("missing row {}", r + 1)))?;
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(format!("row {}: {e}", r + 1)))?;
            if row.len() != k {
                return Err(parse_err(format!(
                    "row {} has {} entries, expected {k}",
                    r + 1,
                    row.len()
                )));
            }
            rows.push(row);
        }
        if lines.next().is_some() {
            return Err(parse_err("trailing data after matrix".into()));
        }
        Self::from_explicit(SquareMatrix::from_rows(&rows)?)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text)
    }
}

/// Index of the categorical outcome selected by `u` in `[0, 1)`.
pub(crate) fn sample_row(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last_positive = j;
            acc += p;
            if u < acc {
                return j;
            }
        }
    }
    last_positive
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_one() -> NoiseMatrix {
        build_noise_matrix(&NoiseSpec::uniform(4, 0.15)).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let m = build_noise_matrix(&NoiseSpec::uniform(5, 0.0)).unwrap();
        assert_eq!(m.entries(), &SquareMatrix::identity(5));
    }

    #[test]
    fn class_conditional_rows() {
        let m = build_noise_matrix(&NoiseSpec::class_conditional(vec![0.1, 0.2, 0.1])).unwrap();
        let e = m.entries();
        assert!((e.get(1, 0) - 0.2).abs() < 1e-15);
        assert!((e.get(1, 2) - 0.2).abs() < 1e-15);
        assert!((e.get(1, 1) - 0.6).abs() < 1e-15);
        for (j, want) in [0.85, 0.1, 0.05].iter().enumerate() {
            assert!((e.get(0, j) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn oversized_rho_rejected() {
        // K=4 interior row: rho * (1 + 1 + 1/2) >= 1 at rho = 0.4
        let err = build_noise_matrix(&NoiseSpec::uniform(4, 0.4)).unwrap_err();
        assert!(matches!(err, Error::SpecInvalid(_)));
        assert!(build_noise_matrix(&NoiseSpec::uniform(4, -0.1)).is_err());
        assert!(build_noise_matrix(&NoiseSpec::uniform(1, 0.1)).is_err());
    }

    #[test]
    fn example_one_inverse_has_negative_entry_in_every_column() {
        let m = example_one().invert().unwrap();
        let d = m.diagnostics().unwrap();
        assert!(d.min_inverse_entry_per_column.iter().all(|&v| v < 0.0));
        assert!(d.doubly_stochastic);
        assert!(d.diagonally_dominant);
    }

    #[test]
    fn lipschitz_requires_inverse() {
        assert!(matches!(
            example_one().lipschitz_inflation(),
            Err(Error::InverseMissing)
        ));
        let id = NoiseMatrix::identity(3).invert().unwrap();
        assert_eq!(id.lipschitz_inflation().unwrap(), 1.0);
    }

    #[test]
    fn not_dominant_is_only_a_warning() {
        let m = SquareMatrix::from_rows(&[vec![0.4, 0.6], vec![0.1, 0.9]]).unwrap();
        let m = NoiseMatrix::from_explicit(m).unwrap().invert().unwrap();
        assert!(!m.diagnostics().unwrap().diagonally_dominant);
    }

    #[test]
    fn singular_rejected() {
        let m = SquareMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let err = NoiseMatrix::from_explicit(m).unwrap().invert().unwrap_err();
        assert!(matches!(err, Error::SingularMatrix { .. }));
    }

    #[test]
    fn ill_conditioned_rejected() {
        let e = 1e-10;
        let m = SquareMatrix::from_rows(&[vec![0.5 + e, 0.5 - e], vec![0.5, 0.5]]).unwrap();
        let err = NoiseMatrix::from_explicit(m).unwrap().invert().unwrap_err();
        assert!(matches!(err, Error::SingularMatrix { .. }));
    }

    #[test]
    fn corrupt_identity_is_noop_and_deterministic() {
        let labels: Vec<usize> = (0..50).map(|i| i % 4 + 1).collect();
        let id = NoiseMatrix::identity(4);
        assert_eq!(id.corrupt_labels(&labels, 3).unwrap(), labels);
        let m = example_one();
        assert_eq!(
            m.corrupt_labels(&labels, 9).unwrap(),
            m.corrupt_labels(&labels, 9).unwrap()
        );
        assert!(matches!(
            m.corrupt_labels(&[5], 0),
            Err(Error::LabelOutOfRange { label: 5, k: 4 })
        ));
        assert!(m.corrupt_labels(&[0], 0).is_err());
    }

    #[test]
    fn text_format_round_trips_exactly() {
        let m = build_noise_matrix(&NoiseSpec::class_conditional(vec![0.1, 0.27, 0.05, 0.13]))
            .unwrap();
        let text = m.to_text();
        assert!(text.starts_with("K 4\n"));
        let back = NoiseMatrix::parse_text(&text).unwrap();
        assert_eq!(back.entries(), m.entries());
    }

    #[test]
    fn text_format_errors() {
        assert!(NoiseMatrix::parse_text("").is_err());
        assert!(NoiseMatrix::parse_text("K 2\n1 0\n").is_err());
        assert!(NoiseMatrix::parse_text("K 2\n1 0\n0 x\n").is_err());
        assert!(NoiseMatrix::parse_text("K 2\n0.5 0.4\n0 1\n").is_err());
        assert!(NoiseMatrix::parse_text("# comment\nK 2\n1 0\n0 1\n").is_ok());
    }
}
