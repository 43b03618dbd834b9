//! L2-normalized feature embeddings.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Tolerance for the unit-norm postcondition of normalization.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Tolerance beyond which inputs claiming to be unit-norm are rejected.
pub const NORM_CONTRACT_TOLERANCE: f64 = 1e-4;

/// A fixed-dimension unit-norm feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Array1<f64>,
}

impl Embedding {
    /// Normalizes an arbitrary feature vector onto the unit sphere.
    pub fn normalize(features: ArrayView1<f64>) -> Result<Self> {
        Ok(Embedding {
            values: normalize(features)?,
        })
    }

    /// Wraps a vector that is already unit-norm (within the contract
    /// tolerance).
    pub fn from_unit(values: Array1<f64>) -> Result<Self> {
        let norm = values.dot(&values).sqrt();
        if (norm - 1.0).abs() > NORM_CONTRACT_TOLERANCE {
            return Err(Error::Contract(format!(
                "embedding norm {norm} deviates from 1 beyond {NORM_CONTRACT_TOLERANCE}"
            )));
        }
        Ok(Embedding { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }
}

/// `v / ||v||`; errors on (near-)zero input.
pub fn normalize(v: ArrayView1<f64>) -> Result<Array1<f64>> {
    let norm = v.dot(&v).sqrt();
    if !(norm > 1e-12) {
        return Err(Error::Contract(
            "cannot normalize a zero-norm feature vector".to_string(),
        ));
    }
    Ok(v.mapv(|x| x / norm))
}

/// Row-wise normalization of a feature batch.
pub fn normalize_batch(features: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = features.clone();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if !(norm > 1e-12) {
            return Err(Error::Contract(
                "cannot normalize a zero-norm feature row".to_string(),
            ));
        }
        row.mapv_inplace(|x| x / norm);
    }
    Ok(out)
}

/// Backward pass of row-wise normalization.
///
/// Given raw features `x` (pre-normalization) and the loss gradient with
/// respect to the normalized rows `e = x/||x||`, returns the gradient with
/// respect to `x`: `(g - (g.e) e) / ||x||` per row.
pub fn normalize_batch_backward(
    features: &Array2<f64>,
    d_embeddings: &Array2<f64>,
) -> Result<Array2<f64>> {
    if features.dim() != d_embeddings.dim() {
        return Err(Error::Contract(format!(
            "normalize backward shape mismatch: {:?} vs {:?}",
            features.dim(),
            d_embeddings.dim()
        )));
    }
    let mut out = Array2::zeros(features.raw_dim());
    for ((x, g), mut dx) in features
        .rows()
        .into_iter()
        .zip(d_embeddings.rows())
        .zip(out.rows_mut())
    {
        let norm = x.dot(&x).sqrt();
        let e = x.mapv(|v| v / norm);
        let proj = g.dot(&e);
        for j in 0..x.len() {
            dx[j] = (g[j] - proj * e[j]) / norm;
        }
    }
    Ok(out)
}

/// Verifies every row of a batch is unit-norm within the contract tolerance.
pub fn check_unit_rows(batch: &Array2<f64>, what: &str) -> Result<()> {
    for (i, row) in batch.rows().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if (norm - 1.0).abs() > NORM_CONTRACT_TOLERANCE {
            return Err(Error::Contract(format!(
                "{what}: row {i} has norm {norm}, beyond {NORM_CONTRACT_TOLERANCE} of unit"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normalized_vector_is_unit() {
        let e = Embedding::normalize(array![3.0, 4.0].view()).unwrap();
        let norm = e.values().dot(&e.values()).sqrt();
        assert!((norm - 1.0).abs() <= NORM_TOLERANCE);
        assert_eq!(e.dim(), 2);
    }

    #[test]
    fn zero_vector_rejected() {
        assert!(Embedding::normalize(array![0.0, 0.0].view()).is_err());
    }

    #[test]
    fn from_unit_enforces_contract() {
        assert!(Embedding::from_unit(array![1.0, 0.0]).is_ok());
        assert!(Embedding::from_unit(array![1.1, 0.0]).is_err());
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        use crate::rng::make_rng;
        use rand::Rng;
        let mut rng = make_rng(9, "norm-backward-test");
        let n = 4;
        let d = 6;
        let x = Array2::from_shape_fn((n, d), |_| rng.gen::<f64>() * 2.0 - 1.0 + 0.5);
        let g = Array2::from_shape_fn((n, d), |_| rng.gen::<f64>() * 2.0 - 1.0);
        // scalar objective: sum(g * normalize(x))
        let dx = normalize_batch_backward(&x, &g).unwrap();
        let h = 1e-6;
        for i in 0..n {
            for j in 0..d {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let fp = (&normalize_batch(&xp).unwrap() * &g).sum();
                let fm = (&normalize_batch(&xm).unwrap() * &g).sum();
                let num = (fp - fm) / (2.0 * h);
                assert!(
                    (num - dx[[i, j]]).abs() <= 1e-6 * (1.0 + num.abs()),
                    "({i},{j}): analytic {} vs numeric {}",
                    dx[[i, j]],
                    num
                );
            }
        }
    }
}
