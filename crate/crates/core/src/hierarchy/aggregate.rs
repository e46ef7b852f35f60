//! Fine-to-coarse feature aggregation and RS feature concatenation.

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{col, D_ST, D_TEMPORAL, WEATHER_KINDS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggPolicy {
    Max,
    Mean,
    Sum,
}

/// Policy for a column of an (optionally enhanced) feature row.
///
/// | columns                         | policy |
/// |---------------------------------|--------|
/// | hour / weekday one-hots         | mean   |
/// | holiday flag, weather one-hot   | max    |
/// | POI distribution, temperature   | mean   |
/// | risk, inflow, outflow           | sum    |
/// | RS feature channels             | mean   |
pub fn column_policy(c: usize) -> AggPolicy {
    match c {
        col::HOLIDAY => AggPolicy::Max,
        c if c < D_TEMPORAL => AggPolicy::Mean,
        c if (col::WEATHER..col::WEATHER + WEATHER_KINDS).contains(&c) => AggPolicy::Max,
        col::RISK | col::INFLOW | col::OUTFLOW => AggPolicy::Sum,
        _ => AggPolicy::Mean,
    }
}

pub fn default_policies(width: usize) -> Vec<AggPolicy> {
    debug_assert!(width >= D_ST);
    (0..width).map(column_policy).collect()
}

pub fn aggregate_region_features(
    fine: &Array2<f64>,
    membership: &[usize],
    coarse: usize,
    policies: &[AggPolicy],
) -> Result<Array2<f64>> {
    if membership.len() != fine.nrows() || policies.len() != fine.ncols() {
        return Err(Error::Shape(format!(
            "{:?} features, {} memberships, {} policies",
            fine.dim(),
            membership.len(),
            policies.len()
        )));
    }
    let mut count = vec![0usize; coarse];
    for &c in membership {
        if c >= coarse {
            return Err(Error::InvalidInput(format!("cluster {c} out of range {coarse}")));
        }
        count[c] += 1;
    }
    if let Some(empty) = count.iter().position(|&m| m == 0) {
        return Err(Error::EmptyCluster(empty));
    }
    let mut out = Array2::zeros((coarse, fine.ncols()));
    for (j, p) in policies.iter().enumerate() {
        if *p == AggPolicy::Max {
            out.column_mut(j).fill(f64::NEG_INFINITY);
        }
    }
    for (i, &c) in membership.iter().enumerate() {
        for (j, p) in policies.iter().enumerate() {
            let v = fine[[i, j]];
            let o = &mut out[[c, j]];
            match p {
                AggPolicy::Max => *o = o.max(v),
                AggPolicy::Mean | AggPolicy::Sum => *o += v,
            }
        }
    }
    for (j, p) in policies.iter().enumerate() {
        if *p == AggPolicy::Mean {
            for (c, &m) in count.iter().enumerate() {
                out[[c, j]] /= m as f64;
            }
        }
    }
    Ok(out)
}

/// `[ST | F_rs]` row-wise.
pub fn enhance_features(st: &Array2<f64>, f_rs: &Array2<f64>) -> Result<Array2<f64>> {
    if st.nrows() != f_rs.nrows() {
        return Err(Error::Shape(format!("{} feature rows vs {} RS rows", st.nrows(), f_rs.nrows())));
    }
    Ok(concatenate(Axis(1), &[st.view(), f_rs.view()]).expect("row counts checked"))
}
