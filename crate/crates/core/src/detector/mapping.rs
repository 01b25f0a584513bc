//! Affine mapping from an accuracy vector to the probability of poisoning,
//! fit by ordinary least squares on `(1, A_1, ..., A_|S|)`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub const MAX_CONDITION: f64 = 1e12;
pub const RIDGE_LAMBDA: f64 = 1e-8;
/// Predictions are clamped to `[EPS, 1 - EPS]`.
pub const EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionMapping {
    /// `b_0, b_1, ..., b_|S|`
    pub coefficients: Vec<f64>,
    pub num_samples: usize,
    pub architecture_id: String,
    pub training_set_size: usize,
    /// Set when the normal matrix was singular or ill-conditioned and the ridge fallback was used.
    pub ridge: bool,
}

/// Solves the normal equations `(X'X) b = X'y` for `X = [1 | rows]`.
///
/// Falls back to `(X'X + lambda I) b = X'y` when the normal matrix is singular
/// or its condition number exceeds [`MAX_CONDITION`]. Returns `(b, ridge_used)`.
pub fn least_squares(rows: &[&[f64]], targets: &[f64]) -> Result<(Vec<f64>, bool)> {
    let n = rows.len();
    let k = rows.first().map_or(0, |r| r.len()) + 1;
    if let Some(bad) = rows.iter().find(|r| r.len() + 1 != k) {
        return Err(Error::VectorLength { expected: k - 1, got: bad.len() });
    }
    if n < k + 1 {
        return Err(Error::InsufficientPairs { needed: k + 1, got: n });
    }
    let x = DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
    let y = DVector::from_column_slice(targets);
    let xt = x.transpose();
    let normal = &xt * &x;
    let rhs = &xt * &y;

    let eig = SymmetricEigen::new(normal.clone());
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let well_conditioned = min > 0.0 && max / min <= MAX_CONDITION;

    if well_conditioned {
        if let Some(chol) = normal.clone().cholesky() {
            return Ok((chol.solve(&rhs).iter().copied().collect(), false));
        }
    }
    let regularised = normal + DMatrix::identity(k, k) * RIDGE_LAMBDA;
    let sol = match regularised.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => regularised
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidConfig("ridge system is singular".into()))?,
    };
    Ok((sol.iter().copied().collect(), true))
}

/// Fits the mapping from `(accuracy values, label)` pairs.
pub fn fit_mapping(pairs: &[(&[f64], u8)], architecture_id: &str) -> Result<RegressionMapping> {
    let num_samples = pairs.first().map_or(0, |p| p.0.len());
    if let Some(bad) = pairs.iter().find(|p| p.0.len() != num_samples) {
        return Err(Error::VectorLength { expected: num_samples, got: bad.0.len() });
    }
    if pairs.len() < num_samples + 2 {
        return Err(Error::InsufficientPairs { needed: num_samples + 2, got: pairs.len() });
    }
    let rows: Vec<&[f64]> = pairs.iter().map(|p| p.0).collect();
    let targets: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
    let (coefficients, ridge) = least_squares(&rows, &targets)?;
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidConfig("non-finite regression coefficients".into()));
    }
    Ok(RegressionMapping {
        coefficients,
        num_samples,
        architecture_id: architecture_id.to_string(),
        training_set_size: pairs.len(),
        ridge,
    })
}

impl RegressionMapping {
    /// Unclamped affine value `b_0 + sum b_k A_k`.
    pub fn raw(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.num_samples {
            return Err(Error::VectorLength { expected: self.num_samples, got: values.len() });
        }
        Ok(self.coefficients[0] + self.coefficients[1..].iter().zip(values).map(|(b, a)| b * a).sum::<f64>())
    }

    /// Probability of poisoning, clamped to `[EPS, 1 - EPS]`.
    pub fn predict(&self, values: &[f64]) -> Result<f64> {
        Ok(self.raw(values)?.clamp(EPS, 1.0 - EPS))
    }

    pub fn to_text(&self) -> String {
        let mut coeffs = String::new();
        for (i, c) in self.coefficients.iter().enumerate() {
            if i > 0 {
                coeffs.push(',');
            }
            let _ = write!(coeffs, "{c}");
        }
        format!(
            "architecture_id\t{}\nnum_samples\t{}\ntraining_set_size\t{}\nridge\t{}\ncoefficients\t{}\n",
            self.architecture_id, self.num_samples, self.training_set_size, self.ridge, coeffs
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let (k, v) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(format!("mapping:{}", i + 1), "expected key<TAB>value"))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| Error::parse("mapping", format!("missing {k}")));
        let bad = |k: &str| Error::parse("mapping", format!("bad {k}"));
        let coefficients = get("coefficients")?
            .split(',')
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad("coefficients"))?;
        let mapping = Self {
            num_samples: get("num_samples")?.parse().map_err(|_| bad("num_samples"))?,
            architecture_id: get("architecture_id")?.to_string(),
            training_set_size: get("training_set_size")?.parse().map_err(|_| bad("training_set_size"))?,
            ridge: get("ridge")?.parse().map_err(|_| bad("ridge"))?,
            coefficients,
        };
        if mapping.coefficients.len() != mapping.num_samples + 1 || mapping.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::parse("mapping", "need num_samples + 1 finite coefficients"));
        }
        Ok(mapping)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
