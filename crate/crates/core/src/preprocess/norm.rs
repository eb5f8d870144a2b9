use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-column `(min, max)` pooled over a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationStats {
    pub fn n_cols(&self) -> usize {
        self.min.len()
    }

    /// `max - min`, or 1 for a constant column.
    pub fn scale(&self, c: usize) -> f64 {
        let s = self.max[c] - self.min[c];
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }
}

pub fn fit_norm<'a>(trials: impl IntoIterator<Item = &'a Array2<f64>>) -> Result<NormalizationStats> {
    let mut stats: Option<NormalizationStats> = None;
    for x in trials {
        let st = stats.get_or_insert_with(|| NormalizationStats {
            min: vec![f64::INFINITY; x.ncols()],
            max: vec![f64::NEG_INFINITY; x.ncols()],
        });
        if x.ncols() != st.n_cols() {
            return Err(Error::ColumnMismatch {
                expected: format!("{} columns", st.n_cols()),
                found: format!("{} columns", x.ncols()),
            });
        }
        for row in x.rows() {
            for (c, &v) in row.iter().enumerate() {
                st.min[c] = st.min[c].min(v);
                st.max[c] = st.max[c].max(v);
            }
        }
    }
    match stats {
        Some(s) if s.min.iter().all(|v| v.is_finite()) => Ok(s),
        Some(_) => Err(Error::InvalidInput("normalization needs at least one sample".into())),
        None => Err(Error::InvalidInput("normalization needs at least one trial".into())),
    }
}

/// `(x - min) / scale`, unclipped.
pub fn apply_norm(x: &Array2<f64>, stats: &NormalizationStats) -> Result<Array2<f64>> {
    if x.ncols() != stats.n_cols() {
        return Err(Error::ColumnMismatch {
            expected: format!("{} columns", stats.n_cols()),
            found: format!("{} columns", x.ncols()),
        });
    }
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = (*v - stats.min[c]) / stats.scale(c);
        }
    }
    Ok(y)
}
