//! Weber–Fechner modulation of driving parameters.
//!
//! A vehicle's scarcity signal `σ` is the smaller of its normalized credit and
//! normalized resources. The intensity `λ = ln(1 + σ) / ln 2` maps it onto
//! `[0, 1]`, and the effective parameters are interpolated between the
//! conservative anchor (`λ = 0`) and the vehicle's native anchor (`λ = 1`).
//! Conservative drivers ignore the signal entirely.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{DrivingParams, ParamsError, PARAM_COUNT};
use crate::economy::{EconomyConstants, Ledger, Units};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverType {
    Conservative,
    Normal,
    Aggressive,
}

impl DriverType {
    pub const ALL: [DriverType; 3] = [DriverType::Conservative, DriverType::Normal, DriverType::Aggressive];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    /// One step toward conservative.
    pub fn calmer(self) -> DriverType {
        match self {
            DriverType::Aggressive => DriverType::Normal,
            _ => DriverType::Conservative,
        }
    }
}

impl fmt::Display for DriverType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DriverType::Conservative => "conservative",
            DriverType::Normal => "normal",
            DriverType::Aggressive => "aggressive",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AnchorError {
    #[error("{0} anchor: {1}")]
    Invalid(DriverType, ParamsError),
}

/// Parameter tuples for the three driver types at full intensity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorAnchors {
    pub conservative: DrivingParams,
    pub normal: DrivingParams,
    pub aggressive: DrivingParams,
}

impl BehaviorAnchors {
    /// Normal anchor is the componentwise midpoint of the other two.
    pub fn with_midpoint(conservative: DrivingParams, aggressive: DrivingParams) -> Self {
        let a = conservative.to_array();
        let c = aggressive.to_array();
        let mut b = [0.0; PARAM_COUNT];
        for i in 0..PARAM_COUNT {
            b[i] = 0.5 * (a[i] + c[i]);
        }
        BehaviorAnchors { conservative, normal: DrivingParams::from_array(b), aggressive }
    }

    pub fn get(&self, t: DriverType) -> &DrivingParams {
        match t {
            DriverType::Conservative => &self.conservative,
            DriverType::Normal => &self.normal,
            DriverType::Aggressive => &self.aggressive,
        }
    }

    pub fn validate(&self) -> Result<(), AnchorError> {
        for t in DriverType::ALL {
            self.get(t).validate().map_err(|e| AnchorError::Invalid(t, e))?;
        }
        Ok(())
    }
}

/// Normalized scarcity in `[0, 1]`, computed exactly and converted last.
pub fn sigma(ledger: &Ledger, c: &EconomyConstants) -> f64 {
    let credit = ledger.credit.ratio(c.l0);
    let resources = (ledger.resources - c.p_floor_norm).ratio(c.p0 - c.p_floor_norm);
    credit.min(resources).clamp(Units::ZERO, Units::from_int(1)).to_f64()
}

/// Weber–Fechner intensity `ln(1 + σ) / ln 2`.
#[inline]
pub fn lambda(sigma: f64) -> f64 {
    (sigma.ln_1p() / std::f64::consts::LN_2).clamp(0.0, 1.0)
}

/// `(N0 − A0)·λ + A0` componentwise, where `N0` is the native anchor and `A0`
/// the conservative one. The endpoints are returned exactly and every
/// component stays between its two anchor values.
pub fn effective_params(anchors: &BehaviorAnchors, native: DriverType, lam: f64) -> DrivingParams {
    let base = anchors.conservative;
    if native == DriverType::Conservative || lam <= 0.0 {
        return base;
    }
    let target = *anchors.get(native);
    if lam >= 1.0 {
        return target;
    }
    let a = base.to_array();
    let n = target.to_array();
    let mut out = [0.0; PARAM_COUNT];
    for i in 0..PARAM_COUNT {
        let v = (n[i] - a[i]) * lam + a[i];
        out[i] = v.clamp(a[i].min(n[i]), a[i].max(n[i]));
    }
    DrivingParams::from_array(out)
}

pub const NATIVE_THRESHOLD: f64 = 2.0 / 3.0;
pub const CALMER_THRESHOLD: f64 = 1.0 / 3.0;

/// Effective type for reporting: native above 2/3, one step calmer above
/// 1/3, conservative otherwise.
pub fn classify(native: DriverType, lam: f64) -> DriverType {
    if native == DriverType::Conservative {
        DriverType::Conservative
    } else if lam > NATIVE_THRESHOLD {
        native
    } else if lam > CALMER_THRESHOLD {
        native.calmer()
    } else {
        DriverType::Conservative
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorState {
    pub native: DriverType,
    pub lambda: f64,
    pub effective: DrivingParams,
    pub class: DriverType,
}

impl BehaviorState {
    pub fn new(anchors: &BehaviorAnchors, native: DriverType, lam: f64) -> Self {
        BehaviorState { native, lambda: lam, effective: effective_params(anchors, native, lam), class: classify(native, lam) }
    }

    pub fn from_ledger(anchors: &BehaviorAnchors, native: DriverType, ledger: &Ledger, c: &EconomyConstants) -> Self {
        Self::new(anchors, native, lambda(sigma(ledger, c)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::tests::example_params;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn constants() -> EconomyConstants {
        EconomyConstants {
            p0: 10.into(),
            p_min: 2.into(),
            p_floor_norm: 2.into(),
            l0: 10.into(),
            period_days: 7,
            congestion_fee: 2.into(),
        }
    }

    fn ledger(res: i64, cre: i64) -> Ledger {
        Ledger { resources: res.into(), credit: cre.into(), ban: None }
    }

    pub(crate) fn kmh_anchors() -> BehaviorAnchors {
        let kmh = |v: f64| v / 3.6;
        let base = example_params();
        let mut aggressive = base;
        aggressive.v0 = kmh(30.0);
        aggressive.lane_change_duration = 6.0;
        aggressive.time_headway = 1.0;
        let mut conservative = base;
        conservative.v0 = kmh(50.0);
        conservative.lane_change_duration = 3.0;
        conservative.time_headway = 1.8;
        let mut normal = BehaviorAnchors::with_midpoint(conservative, aggressive).normal;
        normal.lane_change_duration = 5.0;
        BehaviorAnchors { conservative, normal, aggressive }
    }

    #[test]
    fn sigma_examples() {
        let c = constants();
        assert_eq!(sigma(&ledger(10, 10), &c), 1.0);
        assert_eq!(sigma(&ledger(6, 6), &c), 0.5);
        assert_eq!(sigma(&ledger(50, 0), &c), 0.0);
        assert_eq!(sigma(&ledger(40, 10), &c), 1.0);
        assert_eq!(sigma(&ledger(1, 10), &c), 0.0);
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(lambda(1.0), 1.0);
        assert_eq!(lambda(0.0), 0.0);
        // ln(1.5)/ln(2) to 15 digits.
        assert_abs_diff_eq!(lambda(0.5), 0.584962500721156, epsilon = 1e-14);
    }

    #[test]
    fn interpolation_examples() {
        let a = kmh_anchors();
        assert_eq!(effective_params(&a, DriverType::Aggressive, 1.0), a.aggressive);
        assert_eq!(effective_params(&a, DriverType::Aggressive, 0.0), a.conservative);
        let v0 = effective_params(&a, DriverType::Aggressive, 0.585).v0 * 3.6;
        assert_abs_diff_eq!(v0, 38.3, epsilon = 1e-9);
        assert_eq!(effective_params(&a, DriverType::Conservative, 0.3), a.conservative);
    }

    #[test]
    fn midpoint_anchor() {
        let a = kmh_anchors();
        let m = BehaviorAnchors::with_midpoint(a.conservative, a.aggressive);
        assert_abs_diff_eq!(m.normal.v0 * 3.6, 40.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.normal.lane_change_duration, 4.5, epsilon = 1e-12);
        assert!(m.validate().is_ok());
    }

    #[test]
    fn classification() {
        assert_eq!(classify(DriverType::Aggressive, 1.0), DriverType::Aggressive);
        assert_eq!(classify(DriverType::Aggressive, 0.5), DriverType::Normal);
        assert_eq!(classify(DriverType::Normal, 0.2), DriverType::Conservative);
        assert_eq!(classify(DriverType::Normal, 0.5), DriverType::Conservative);
        assert_eq!(classify(DriverType::Aggressive, 2.0 / 3.0), DriverType::Normal);
        assert_eq!(classify(DriverType::Aggressive, 1.0 / 3.0), DriverType::Conservative);
        assert_eq!(classify(DriverType::Conservative, 1.0), DriverType::Conservative);
    }

    proptest! {
        #[test]
        fn lambda_sigma_monotone(res in -5i64..60, cre in -5i64..=10, dres in 0i64..10, dcre in 0i64..10) {
            let c = constants();
            let l1 = lambda(sigma(&ledger(res, cre), &c));
            let l2 = lambda(sigma(&ledger(res + dres, (cre + dcre).min(10)), &c));
            prop_assert!(l2 >= l1);
            prop_assert!((0.0..=1.0).contains(&l1));
        }

        #[test]
        fn lambda_concave(s1 in 0.0..1.0f64, s2 in 0.0..1.0f64) {
            let (a, b) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
            prop_assert!(lambda(0.5 * (a + b)) >= 0.5 * (lambda(a) + lambda(b)) - 1e-12);
        }

        #[test]
        fn lambda_strictly_increasing(s in 0.0..0.99f64, d in 0.001..0.01f64) {
            prop_assert!(lambda(s + d) > lambda(s));
        }

        #[test]
        fn interpolation_between_anchors(lam in 0.0..=1.0f64, native in prop_oneof![Just(DriverType::Normal), Just(DriverType::Aggressive)]) {
            let a = kmh_anchors();
            let e = effective_params(&a, native, lam).to_array();
            let lo = a.conservative.to_array();
            let hi = a.get(native).to_array();
            for i in 0..PARAM_COUNT {
                prop_assert!(e[i] >= lo[i].min(hi[i]) && e[i] <= lo[i].max(hi[i]));
            }
        }

        #[test]
        fn conservative_is_invariant(res in -10i64..100, cre in -10i64..=10) {
            let a = kmh_anchors();
            let c = constants();
            let s = BehaviorState::from_ledger(&a, DriverType::Conservative, &ledger(res, cre), &c);
            prop_assert_eq!(s.effective.to_array().map(f64::to_bits), a.conservative.to_array().map(f64::to_bits));
            prop_assert_eq!(s.class, DriverType::Conservative);
        }
    }
}
