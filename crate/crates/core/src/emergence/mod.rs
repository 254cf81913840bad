//! Path-count emergence of a layered network.
//!
//! For layers `1..N` with `n_i` units of which `a_i` are alive,
//!
//! ```text
//! E = sum_{i<j} (n_i - a_i) * a_j * prod_{k=i+1}^{j-1} n_k
//! ```
//!
//! counts directed paths that start at a dead unit and end at an alive unit in a fully
//! connected layered graph. The conv variant replaces the intermediate factor `n_k` with the
//! filter count `m_k`. Values are exact; `ln E` is kept alongside for plotting.

mod dag;

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use thiserror::Error;

use crate::instrument::{ActiveCounts, LayerCount};
use crate::nn::ParamCount;

pub use dag::{brute_force_emergence, brute_force_emergence_with, LayeredDag};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EmergenceError {
    #[error("layer {layer}: {active} active units exceed {total} total")]
    ActiveExceedsTotal { layer: usize, active: u64, total: u64 },
    #[error("length mismatch: expected {expected} entries, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("relative emergence needs at least one unmasked parameter")]
    ZeroParameters,
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
}

/// Which nodes a counted path may pass through between its endpoints.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntermediateMode {
    /// Any node (the closed-form formulas).
    #[default]
    All,
    /// Alive nodes only.
    AliveOnly,
}

/// `sum_j a_j * S_j` with `S_{j+1} = S_j * factor_j + (n_j - a_j)`, i.e. the double sum
/// evaluated in one pass.
fn layered_path_sum(counts: &[LayerCount], factors: &[u64]) -> BigUint {
    let mut pending = BigUint::zero();
    let mut total = BigUint::zero();
    for (j, (c, &factor)) in counts.iter().zip(factors).enumerate() {
        if j > 0 && c.active > 0 {
            total += &pending * c.active;
        }
        pending = pending * factor + (c.total - c.active);
    }
    total
}

/// Emergence of a dense network (intermediate factor = total units).
pub fn emergence_mlp(counts: &ActiveCounts) -> BigUint {
    layered_path_sum(counts.layers(), &counts.totals())
}

/// Emergence with the filter count `filters[k]` as the intermediate factor of layer `k`.
pub fn emergence_conv(counts: &ActiveCounts, filters: &[u64]) -> Result<BigUint, EmergenceError> {
    if filters.len() != counts.len() {
        return Err(EmergenceError::LengthMismatch { expected: counts.len(), found: filters.len() });
    }
    Ok(layered_path_sum(counts.layers(), filters))
}

/// Closed form under either intermediate convention.
pub fn emergence_with_intermediate(counts: &ActiveCounts, mode: IntermediateMode) -> BigUint {
    match mode {
        IntermediateMode::All => emergence_mlp(counts),
        IntermediateMode::AliveOnly => layered_path_sum(counts.layers(), &counts.actives()),
    }
}

/// Natural log; `-inf` for zero.
pub fn ln_biguint(x: &BigUint) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = x.bits();
    if bits <= 1000 {
        return x.to_f64().expect("below f64 range").ln();
    }
    let shift = bits - 64;
    let top = (x >> shift).to_f64().expect("64-bit value");
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// `E / unmasked parameters`. Falls back to log space when `E` exceeds the f64 range, in
/// which case the result may be `+inf`.
pub fn relative_emergence(e: &BigUint, params: &ParamCount) -> Result<f64, EmergenceError> {
    if params.unmasked == 0 {
        return Err(EmergenceError::ZeroParameters);
    }
    if e.bits() <= 1000 {
        return Ok(e.to_f64().expect("below f64 range") / params.unmasked as f64);
    }
    Ok((ln_biguint(e) - (params.unmasked as f64).ln()).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmergenceRecord {
    pub exact: BigUint,
    pub log_e: f64,
    pub relative: f64,
    pub param_count: ParamCount,
    pub active_counts: ActiveCounts,
}

impl EmergenceRecord {
    /// `filters` selects the conv formula; `None` uses the dense one.
    pub fn compute(
        counts: ActiveCounts,
        filters: Option<&[u64]>,
        params: ParamCount,
    ) -> Result<Self, EmergenceError> {
        let exact = match filters {
            Some(f) => emergence_conv(&counts, f)?,
            None => emergence_mlp(&counts),
        };
        let relative = relative_emergence(&exact, &params)?;
        Ok(Self { log_e: ln_biguint(&exact), relative, exact, param_count: params, active_counts: counts })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(n: &[u64], a: &[u64]) -> ActiveCounts {
        ActiveCounts::from_slices(n, a).unwrap()
    }

    /// Direct transcription of the double sum with an explicit product.
    fn double_sum(n: &[u64], a: &[u64], factor: &[u64]) -> BigUint {
        let mut e = BigUint::zero();
        for i in 0..n.len() {
            for j in i + 1..n.len() {
                let mut term = BigUint::from(n[i] - a[i]) * a[j];
                for f in &factor[i + 1..j] {
                    term *= *f;
                }
                e += term;
            }
        }
        e
    }

    #[test]
    fn documented_values() {
        assert_eq!(emergence_mlp(&counts(&[2, 2, 2], &[1, 1, 1])), BigUint::from(4u32));
        assert_eq!(emergence_mlp(&counts(&[3, 2], &[1, 2])), BigUint::from(4u32));
        assert_eq!(emergence_mlp(&counts(&[5], &[2])), BigUint::zero());
        assert_eq!(emergence_mlp(&counts(&[4, 6, 3], &[4, 6, 3])), BigUint::zero());
        assert_eq!(emergence_mlp(&counts(&[4, 6, 3], &[0, 0, 0])), BigUint::zero());
        assert_eq!(emergence_conv(&counts(&[2, 3, 2], &[1, 1, 1]), &[2, 3, 2]).unwrap(), BigUint::from(6u32));
        assert_eq!(emergence_conv(&counts(&[4, 4], &[2, 3]), &[4, 4]).unwrap(), BigUint::from(6u32));
        assert_eq!(emergence_conv(&counts(&[4, 4], &[4, 4]), &[4, 4]).unwrap(), BigUint::zero());
        assert!(matches!(
            emergence_conv(&counts(&[4, 4], &[2, 3]), &[4]),
            Err(EmergenceError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn conv_factor_differs_from_unit_count() {
        // n=[2,5,2] but only 3 filters in the middle layer
        let c = counts(&[2, 5, 2], &[1, 2, 1]);
        let expected = double_sum(&[2, 5, 2], &[1, 2, 1], &[2, 3, 2]);
        assert_eq!(emergence_conv(&c, &[2, 3, 2]).unwrap(), expected);
        assert_eq!(expected, BigUint::from(1u32 * 2 + 1 * 3 + 3));
    }

    #[test]
    fn alive_only_mode_uses_active_factors() {
        let c = counts(&[3, 4, 2], &[1, 2, 1]);
        assert_eq!(
            emergence_with_intermediate(&c, IntermediateMode::AliveOnly),
            double_sum(&[3, 4, 2], &[1, 2, 1], &[1, 2, 1])
        );
    }

    #[test]
    fn relative_emergence_cases() {
        let p = |unmasked| ParamCount { total: 10, unmasked };
        assert_eq!(relative_emergence(&BigUint::from(4u32), &p(8)).unwrap(), 0.5);
        assert_eq!(relative_emergence(&BigUint::zero(), &p(8)).unwrap(), 0.0);
        assert_eq!(relative_emergence(&BigUint::from(4u32), &p(0)), Err(EmergenceError::ZeroParameters));
    }

    #[test]
    fn ln_matches_for_small_and_huge_values() {
        assert_eq!(ln_biguint(&BigUint::zero()), f64::NEG_INFINITY);
        assert!((ln_biguint(&BigUint::from(1000u32)) - 1000f64.ln()).abs() < 1e-12);
        let huge = BigUint::from(3u32).pow(2000);
        let expected = 2000.0 * 3f64.ln();
        assert!((ln_biguint(&huge) - expected).abs() / expected < 1e-12);
        let rel = relative_emergence(&huge, &ParamCount { total: 1, unmasked: 1 }).unwrap();
        assert!(rel.is_infinite());
    }

    #[test]
    fn wide_deep_shape_stays_exact() {
        // ten layers of 1024 units, half alive
        let c = counts(&[1024; 10], &[512; 10]);
        let e = emergence_mlp(&c);
        assert_eq!(e, double_sum(&[1024; 10], &[512; 10], &[1024; 10]));
        assert!(e.bits() > 64);
        let back = ln_biguint(&e).exp();
        let exact = e.to_f64().unwrap();
        assert!((back - exact).abs() / exact <= 1e-9);
    }

    #[test]
    fn record_fields_are_consistent() {
        let params = ParamCount { total: 20, unmasked: 16 };
        let r = EmergenceRecord::compute(counts(&[2, 2, 2], &[1, 1, 1]), None, params).unwrap();
        assert_eq!(r.exact, BigUint::from(4u32));
        assert_eq!(r.relative, 0.25);
        assert!((r.log_e - 4f64.ln()).abs() < 1e-15);
        let zero = EmergenceRecord::compute(counts(&[2, 2], &[2, 1]), None, params).unwrap();
        assert_eq!(zero.relative, 0.0);
        assert_eq!(zero.log_e, f64::NEG_INFINITY);
    }

    fn shape_strategy() -> impl Strategy<Value = (Vec<u64>, Vec<u64>)> {
        proptest::collection::vec(1u64..40, 1..8).prop_flat_map(|n| {
            let a = n.iter().map(|&x| 0..=x).collect::<Vec<_>>();
            (Just(n), a)
        })
    }

    proptest! {
        #[test]
        fn single_pass_equals_double_sum((n, a) in shape_strategy()) {
            prop_assert_eq!(emergence_mlp(&counts(&n, &a)), double_sum(&n, &a, &n));
        }

        #[test]
        fn boundary_layers_are_monotone((n, a) in shape_strategy()) {
            let base = emergence_mlp(&counts(&n, &a));
            let last = n.len() - 1;
            if a[last] < n[last] {
                let mut a2 = a.clone();
                a2[last] += 1;
                prop_assert!(emergence_mlp(&counts(&n, &a2)) >= base);
            }
            if a[0] > 0 {
                let mut a2 = a.clone();
                a2[0] -= 1;
                prop_assert!(emergence_mlp(&counts(&n, &a2)) >= base);
            }
        }

        #[test]
        fn log_companion_is_consistent((n, a) in shape_strategy()) {
            let e = emergence_mlp(&counts(&n, &a));
            let l = ln_biguint(&e);
            if e.is_zero() {
                prop_assert_eq!(l, f64::NEG_INFINITY);
            } else {
                let exact = e.to_f64().unwrap();
                prop_assert!((l.exp() - exact).abs() / exact.max(1.0) <= 1e-9);
            }
        }
    }
}
