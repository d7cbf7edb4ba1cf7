//! Ordinal losses over a scalar score `g` and thresholds `b`, and their
//! noise-corrected versions.
//!
//! Both surrogates decompose into one binary term per threshold `i`: the
//! "positive" term applies when the label lies above threshold `i`
//! (`i < y`), the "negative" term otherwise. A corrected loss
//! `sum_j Ninv[y_noisy, j] * l(g, b, j)` therefore reweights the same two
//! terms per threshold, with weights given by suffix and prefix sums of the
//! inverse-matrix row. Uncorrected losses use weights 1 and 0.

use crate::error::{check_label, Error, Result};
use crate::linalg::SquareMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds(Vec<f64>);

impl Thresholds {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::KInvalid(1));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::ConfigInvalid(format!("non-finite threshold {v}")));
        }
        Ok(Self(values))
    }

    /// Number of classes these thresholds separate.
    pub fn k(&self) -> usize {
        self.0.len() + 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Thresholds {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseLoss {
    Ce,
    Imc,
    Mae,
}

impl BaseLoss {
    pub fn name(self) -> &'static str {
        match self {
            BaseLoss::Ce => "ce",
            BaseLoss::Imc => "imc",
            BaseLoss::Mae => "mae",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ce" => Ok(BaseLoss::Ce),
            "imc" => Ok(BaseLoss::Imc),
            "mae" => Ok(BaseLoss::Mae),
            other => Err(Error::ConfigInvalid(format!("unknown loss '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub base: BaseLoss,
    /// Inverse noise matrix `N^-1`.
    pub correction: Option<SquareMatrix>,
}

impl LossSpec {
    pub fn plain(base: BaseLoss) -> Self {
        Self {
            base,
            correction: None,
        }
    }

    pub fn corrected(base: BaseLoss, inverse: SquareMatrix) -> Result<Self> {
        if base == BaseLoss::Mae {
            return Err(Error::ConfigInvalid("mae cannot be corrected".into()));
        }
        Ok(Self {
            base,
            correction: Some(inverse),
        })
    }

    /// CLI vocabulary: "ce", "imc", "ce-corrected", "imc-corrected".
    pub fn name(&self) -> String {
        match self.correction {
            Some(_) => format!("{}-corrected", self.base.name()),
            None => self.base.name().to_string(),
        }
    }

    /// Loss and gradients for one sample, corrected when a matrix is present.
    pub fn evaluate(&self, g: f64, b: &Thresholds, y: usize) -> Result<LossValueGrad> {
        match self.correction {
            Some(_) => corrected_loss(self, g, b, y),
            None => match self.base {
                BaseLoss::Ce => loss_ce(g, b, y),
                BaseLoss::Imc => loss_imc(g, b, y),
                BaseLoss::Mae => Err(Error::ConfigInvalid("mae has no gradient".into())),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValueGrad {
    pub value: f64,
    pub d_g: f64,
    pub d_b: Vec<f64>,
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sum over thresholds of `w_pos[i] * pos_term(a_i) + w_neg[i] * neg_term(a_i)`.
///
/// Writes per-threshold gradients into `d_b` and returns `(value, d_g)`.
#[inline]
fn weighted_terms(
    base: BaseLoss,
    g: f64,
    b: &[f64],
    w_pos: &[f64],
    w_neg: &[f64],
    d_b: &mut [f64],
) -> (f64, f64) {
    let mut value = 0.0;
    let mut d_g = 0.0;
    for (((&bi, &wp), &wn), out) in b.iter().zip(w_pos).zip(w_neg).zip(d_b.iter_mut()) {
        let a = g + bi;
        let (v, d) = match base {
            BaseLoss::Ce => {
                // -log sigma(a) = softplus(-a); -log(1 - sigma(a)) = softplus(a)
                let s = sigmoid(a);
                (wp * softplus(-a) + wn * softplus(a), wp * (s - 1.0) + wn * s)
            }
            BaseLoss::Imc => {
                // z = +1: max(0, 1 - a); z = -1: max(0, 1 + a); kink gradient 0
                let (vp, dp) = if a < 1.0 { (1.0 - a, -1.0) } else { (0.0, 0.0) };
                let (vn, dn) = if -a < 1.0 { (1.0 + a, 1.0) } else { (0.0, 0.0) };
                (wp * vp + wn * vn, wp * dp + wn * dn)
            }
            BaseLoss::Mae => unreachable!("mae has no weighted form"),
        };
        value += v;
        d_g += d;
        *out = d;
    }
    (value, d_g)
}

fn weighted(base: BaseLoss, g: f64, b: &[f64], w_pos: &[f64], w_neg: &[f64]) -> LossValueGrad {
    let mut d_b = vec![0.0; b.len()];
    let (value, d_g) = weighted_terms(base, g, b, w_pos, w_neg, &mut d_b);
    LossValueGrad { value, d_g, d_b }
}

/// Per-label threshold weights, precomputed once for a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedLoss {
    base: BaseLoss,
    k: usize,
    w_pos: Vec<Vec<f64>>,
    w_neg: Vec<Vec<f64>>,
}

impl PreparedLoss {
    pub fn new(spec: &LossSpec, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::KInvalid(k));
        }
        if spec.base == BaseLoss::Mae {
            return Err(Error::ConfigInvalid("mae cannot be trained on".into()));
        }
        let (w_pos, w_neg) = match &spec.correction {
            None => (1..=k).map(|y| label_weights(k, y)).unzip(),
            Some(inv) => {
                if inv.dim() != k {
                    return Err(Error::DimensionMismatch {
                        expected: k,
                        got: inv.dim(),
                    });
                }
                (1..=k).map(|y| correction_weights(inv.row(y - 1))).unzip()
            }
        };
        Ok(Self {
            base: spec.base,
            k,
            w_pos,
            w_neg,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Writes `d loss / d b` into `d_b` and returns `(value, d loss / d g)`.
    #[inline]
    pub fn eval_into(&self, g: f64, b: &[f64], y: usize, d_b: &mut [f64]) -> (f64, f64) {
        weighted_terms(self.base, g, b, &self.w_pos[y - 1], &self.w_neg[y - 1], d_b)
    }
}

/// Weights for `sum_j row[j] * l(j)`: threshold `i` (0-based) lies below
/// labels `j >= i + 1` (0-based).
fn correction_weights(row: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = row.len();
    let mut w_neg = Vec::with_capacity(k - 1);
    let mut acc = 0.0;
    for &c in &row[..k - 1] {
        acc += c;
        w_neg.push(acc);
    }
    let mut w_pos = vec![0.0; k - 1];
    let mut acc = 0.0;
    for i in (0..k - 1).rev() {
        acc += row[i + 1];
        w_pos[i] = acc;
    }
    (w_pos, w_neg)
}

fn label_weights(k: usize, y: usize) -> (Vec<f64>, Vec<f64>) {
    let w_pos = (1..k).map(|i| if i < y { 1.0 } else { 0.0 }).collect();
    let w_neg = (1..k).map(|i| if i < y { 0.0 } else { 1.0 }).collect();
    (w_pos, w_neg)
}

/// Rank distance under the threshold rule, counting `g + b_i = 0` as "above".
pub fn loss_mae(g: f64, b: &Thresholds, y: usize) -> Result<usize> {
    check_label(y, b.k())?;
    Ok(b.as_slice()
        .iter()
        .enumerate()
        .filter(|&(i, &bi)| {
            let a = g + bi;
            if i + 1 < y {
                a < 0.0
            } else {
                a >= 0.0
            }
        })
        .count())
}

pub fn loss_imc(g: f64, b: &Thresholds, y: usize) -> Result<LossValueGrad> {
    check_label(y, b.k())?;
    let (wp, wn) = label_weights(b.k(), y);
    Ok(weighted(BaseLoss::Imc, g, b.as_slice(), &wp, &wn))
}

pub fn loss_ce(g: f64, b: &Thresholds, y: usize) -> Result<LossValueGrad> {
    check_label(y, b.k())?;
    let (wp, wn) = label_weights(b.k(), y);
    Ok(weighted(BaseLoss::Ce, g, b.as_slice(), &wp, &wn))
}

fn base_loss(base: BaseLoss, g: f64, b: &Thresholds, y: usize) -> Result<LossValueGrad> {
    match base {
        BaseLoss::Ce => loss_ce(g, b, y),
        BaseLoss::Imc => loss_imc(g, b, y),
        BaseLoss::Mae => Err(Error::ConfigInvalid("mae admits no correction".into())),
    }
}

fn correction_for<'a>(spec: &'a LossSpec, b: &Thresholds) -> Result<&'a SquareMatrix> {
    let inv = spec.correction.as_ref().ok_or(Error::CorrectionMissing)?;
    if spec.base == BaseLoss::Mae {
        return Err(Error::ConfigInvalid("mae admits no correction".into()));
    }
    if inv.dim() != b.k() {
        return Err(Error::DimensionMismatch {
            expected: b.k(),
            got: inv.dim(),
        });
    }
    Ok(inv)
}

/// `sum_j Ninv[y_noisy, j] * l(g, b, j)` with matching gradients.
pub fn corrected_loss(spec: &LossSpec, g: f64, b: &Thresholds, y_noisy: usize) -> Result<LossValueGrad> {
    let inv = correction_for(spec, b)?;
    let k = b.k();
    check_label(y_noisy, k)?;
    let (w_pos, w_neg) = correction_weights(inv.row(y_noisy - 1));
    Ok(weighted(spec.base, g, b.as_slice(), &w_pos, &w_neg))
}

/// `N^-1 L` (or `L` when uncorrected), computed from the K base losses.
pub fn loss_table(spec: &LossSpec, g: f64, b: &Thresholds) -> Result<Vec<f64>> {
    let k = b.k();
    let base: Vec<f64> = (1..=k)
        .map(|y| base_loss(spec.base, g, b, y).map(|l| l.value))
        .collect::<Result<_>>()?;
    match spec.correction {
        None => Ok(base),
        Some(_) => correction_for(spec, b)?.mat_vec(&base),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise_model::{build_noise_matrix, NoiseSpec};

    fn th(v: &[f64]) -> Thresholds {
        Thresholds::new(v.to_vec()).unwrap()
    }

    #[test]
    fn mae_examples() {
        let b = th(&[2.0, 0.0, -2.0]);
        assert_eq!(loss_mae(1.0, &b, 2).unwrap(), 1);
        assert_eq!(loss_mae(-1.0, &b, 2).unwrap(), 0);
        assert!(matches!(
            loss_mae(0.0, &b, 5),
            Err(Error::LabelOutOfRange { label: 5, k: 4 })
        ));
    }

    #[test]
    fn mae_tie_counts_as_above() {
        // g + b_i = 0 with i >= y counts; with i < y it does not
        let b = th(&[0.0]);
        assert_eq!(loss_mae(0.0, &b, 1).unwrap(), 1);
        assert_eq!(loss_mae(0.0, &b, 2).unwrap(), 0);
    }

    #[test]
    fn imc_examples() {
        let l = loss_imc(0.0, &th(&[0.0, 0.0]), 2).unwrap();
        assert_eq!(l.value, 2.0);
        assert_eq!(l.d_b, vec![-1.0, 1.0]);
        assert_eq!(l.d_g, 0.0);

        // margins satisfied: g + b_1 >= 1 for i < y, g + b_i <= -1 for i >= y
        let l = loss_imc(0.0, &th(&[1.5, -1.0, -3.0]), 2).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.d_b.iter().all(|&d| d == 0.0));
        assert_eq!(l.d_g, 0.0);
    }

    #[test]
    fn imc_kink_has_zero_subgradient() {
        let l = loss_imc(0.0, &th(&[1.0]), 2).unwrap();
        assert_eq!(l.value, 0.0);
        assert_eq!(l.d_b, vec![0.0]);
    }

    #[test]
    fn ce_examples() {
        let l = loss_ce(0.0, &th(&[0.0]), 1).unwrap();
        assert!((l.value - 2f64.ln()).abs() < 1e-15);

        let l = loss_ce(0.0, &th(&[1.0, -1.0]), 3).unwrap();
        let s = |x: f64| 1.0 / (1.0 + (-x).exp());
        let want = -s(1.0).ln() - s(-1.0).ln();
        assert!((l.value - want).abs() < 1e-14);
        assert!((l.value - 1.6265).abs() < 1e-4);
    }

    #[test]
    fn ce_is_finite_at_extremes() {
        for a in [-500.0, -50.0, 50.0, 500.0] {
            for y in 1..=3 {
                let l = loss_ce(a, &th(&[0.0, -0.5]), y).unwrap();
                assert!(l.value.is_finite(), "a={a} y={y}");
                assert!(l.d_b.iter().all(|d| d.is_finite() && d.abs() <= 1.0));
            }
        }
    }

    #[test]
    fn identity_correction_is_bit_identical() {
        let spec = LossSpec::corrected(BaseLoss::Ce, SquareMatrix::identity(4)).unwrap();
        let b = th(&[1.3, 0.2, -0.7]);
        for y in 1..=4 {
            for g in [-2.0, -0.3, 0.0, 0.9, 4.0] {
                assert_eq!(corrected_loss(&spec, g, &b, y).unwrap(), loss_ce(g, &b, y).unwrap());
            }
        }
        let spec = LossSpec::corrected(BaseLoss::Imc, SquareMatrix::identity(4)).unwrap();
        for y in 1..=4 {
            assert_eq!(corrected_loss(&spec, 0.4, &b, y).unwrap(), loss_imc(0.4, &b, y).unwrap());
        }
    }

    #[test]
    fn table_matches_corrected_and_preserves_constants() {
        let m = build_noise_matrix(&NoiseSpec::uniform(4, 0.15)).unwrap().invert().unwrap();
        let inv = m.inverse().unwrap().clone();
        let spec = LossSpec::corrected(BaseLoss::Ce, inv.clone()).unwrap();
        let b = th(&[1.0, 0.1, -1.2]);
        let table = loss_table(&spec, 0.35, &b).unwrap();
        for (i, t) in table.iter().enumerate() {
            let c = corrected_loss(&spec, 0.35, &b, i + 1).unwrap();
            assert!((c.value - t).abs() < 1e-12);
        }
        let ones = inv.mat_vec(&[1.0; 4]).unwrap();
        assert!(ones.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn correction_errors() {
        let b = th(&[0.0, 0.0]);
        let spec = LossSpec::plain(BaseLoss::Ce);
        assert!(matches!(corrected_loss(&spec, 0.0, &b, 1), Err(Error::CorrectionMissing)));
        let spec = LossSpec::corrected(BaseLoss::Ce, SquareMatrix::identity(4)).unwrap();
        assert!(matches!(
            corrected_loss(&spec, 0.0, &b, 1),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(LossSpec::corrected(BaseLoss::Mae, SquareMatrix::identity(3)).is_err());
        assert!(LossSpec::plain(BaseLoss::Mae).evaluate(0.0, &b, 1).is_err());
    }

    #[test]
    fn names() {
        assert_eq!(LossSpec::plain(BaseLoss::Imc).name(), "imc");
        assert_eq!(
            LossSpec::corrected(BaseLoss::Ce, SquareMatrix::identity(2)).unwrap().name(),
            "ce-corrected"
        );
    }
}
