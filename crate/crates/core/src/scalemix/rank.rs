//! Empirical rank transform to the uniform scale.

use crate::error::{Error, Result};

/// Column-wise `rank / (T_obs + 1)` over the observed entries of a
/// `T × D` table (rows are times). Ties share their average rank and
/// missing entries stay missing.
pub fn rank_transform(data: &[Vec<Option<f64>>]) -> Result<Vec<Vec<Option<f64>>>> {
    let d = data.first().map_or(0, Vec::len);
    if let Some(t) = data.iter().position(|row| row.len() != d) {
        return Err(Error::DimensionMismatch(format!(
            "row {t} has {} columns, expected {d}",
            data[t].len()
        )));
    }
    let mut out = vec![vec![None; d]; data.len()];
    for j in 0..d {
        let mut obs: Vec<(f64, usize)> = Vec::with_capacity(data.len());
        for (t, row) in data.iter().enumerate() {
            if let Some(v) = row[j] {
                if v.is_nan() {
                    return Err(Error::invalid(format!("NaN value at row {t}, column {j}")));
                }
                obs.push((v, t));
            }
        }
        if obs.is_empty() {
            return Err(Error::invalid(format!("column {j} has no observed values")));
        }
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let denom = obs.len() as f64 + 1.0;
        let mut start = 0;
        while start < obs.len() {
            let mut end = start + 1;
            while end < obs.len() && obs[end].0 == obs[start].0 {
                end += 1;
            }
            // 1-based ranks start+1..=end share their mean
            let rank = (start + 1 + end) as f64 / 2.0;
            for &(_, t) in &obs[start..end] {
                out[t][j] = Some(rank / denom);
            }
            start = end;
        }
    }
    Ok(out)
}
