//! Transportation resources, driving credit, fines, congestion fees and bans.
//!
//! All amounts are [`Units`], an exact rational. A fine of `f` split among
//! `k` reporters is paid out as `k` shares of `f / k` whose sum is `f` with
//! no rounding, which makes the system-wide resource balance checkable with
//! `==`.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::VehicleId;

/// Exact amount of resource value or driving credit.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Units(Ratio<i128>);

impl Units {
    pub const ZERO: Units = Units(Ratio::new_raw(0, 1));

    pub fn from_int(value: i64) -> Self {
        Units(Ratio::from_integer(value as i128))
    }

    pub fn new(numer: i64, denom: i64) -> Self {
        assert!(denom != 0, "zero denominator");
        Units(Ratio::new(numer as i128, denom as i128))
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    /// One of `parts` equal shares. `share(n) * n == self` exactly.
    pub fn share(self, parts: usize) -> Units {
        assert!(parts > 0, "cannot split into zero shares");
        Units(self.0 / Ratio::from_integer(parts as i128))
    }

    pub fn ratio(self, denominator: Units) -> Units {
        assert!(!denominator.is_zero(), "division by zero units");
        Units(self.0 / denominator.0)
    }

    pub fn min(self, other: Units) -> Units {
        if other < self {
            other
        } else {
            self
        }
    }

    pub fn clamp(self, lo: Units, hi: Units) -> Units {
        if self < lo {
            lo
        } else if self > hi {
            hi
        } else {
            self
        }
    }

    pub fn to_f64(self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }
}

impl Default for Units {
    fn default() -> Self {
        Units::ZERO
    }
}

impl From<i64> for Units {
    fn from(value: i64) -> Self {
        Units::from_int(value)
    }
}

impl Add for Units {
    type Output = Units;
    fn add(self, rhs: Units) -> Units {
        Units(self.0 + rhs.0)
    }
}

impl Sub for Units {
    type Output = Units;
    fn sub(self, rhs: Units) -> Units {
        Units(self.0 - rhs.0)
    }
}

impl Neg for Units {
    type Output = Units;
    fn neg(self) -> Units {
        Units(-self.0)
    }
}

impl AddAssign for Units {
    fn add_assign(&mut self, rhs: Units) {
        self.0 += rhs.0;
    }
}

impl SubAssign for Units {
    fn sub_assign(&mut self, rhs: Units) {
        self.0 -= rhs.0;
    }
}

impl Sum for Units {
    fn sum<I: Iterator<Item = Units>>(iter: I) -> Units {
        iter.fold(Units::ZERO, |acc, x| acc + x)
    }
}

impl<'a> Sum<&'a Units> for Units {
    fn sum<I: Iterator<Item = &'a Units>>(iter: I) -> Units {
        iter.fold(Units::ZERO, |acc, x| acc + *x)
    }
}

/// Integers print bare, everything else as a reduced `a/b`. Parseable by [`FromStr`].
impl fmt::Display for Units {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl fmt::Debug for Units {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Units({self})")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid units literal {0:?}: expected an integer, a decimal or a fraction a/b")]
pub struct ParseUnitsError(String);

impl FromStr for Units {
    type Err = ParseUnitsError;

    /// Accepts `12`, `-0.25` and `5/3`. Decimals are converted exactly.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseUnitsError(s.to_string());
        let t = s.trim();
        if let Some((n, d)) = t.split_once('/') {
            let n: i128 = n.trim().parse().map_err(|_| err())?;
            let d: i128 = d.trim().parse().map_err(|_| err())?;
            if d == 0 {
                return Err(err());
            }
            return Ok(Units(Ratio::new(n, d)));
        }
        let (neg, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(err());
        }
        if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
            return Err(err());
        }
        if frac_part.len() > 18 {
            return Err(err());
        }
        let digits = format!("{int_part}{frac_part}");
        let numer: i128 = if digits.is_empty() { 0 } else { digits.parse().map_err(|_| err())? };
        let denom = 10i128.pow(frac_part.len() as u32);
        let value = Ratio::new(numer, denom);
        Ok(Units(if neg { -value } else { value }))
    }
}

impl Serialize for Units {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if self.0.is_integer() {
            if let Ok(v) = i64::try_from(*self.0.numer()) {
                return serializer.serialize_i64(v);
            }
        }
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Units {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct Visitor;
        impl serde::de::Visitor<'_> for Visitor {
            type Value = Units;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or a string like \"5/3\"")
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<Units, E> {
                Ok(Units::from_int(v))
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<Units, E> {
                Ok(Units(Ratio::from_integer(v as i128)))
            }
            fn visit_f64<E: serde::de::Error>(self, v: f64) -> Result<Units, E> {
                if !v.is_finite() {
                    return Err(E::custom("non-finite units"));
                }
                // `{}` prints the shortest decimal that round-trips, i.e. the literal.
                format!("{v}").parse().map_err(E::custom)
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Units, E> {
                v.parse().map_err(E::custom)
            }
        }
        deserializer.deserialize_any(Visitor)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EconomyError {
    #[error("population must contain at least one vehicle")]
    EmptyPopulation,
    #[error("invalid economy constants: {0}")]
    InvalidConstants(String),
    #[error("invalid tariff: {0}")]
    InvalidTariff(String),
    #[error("violation of {0} has no reporters; a CATS fine needs at least one")]
    NoReporters(VehicleId),
    #[error("vehicle {0} cannot report its own violation")]
    SelfReport(VehicleId),
    #[error("vehicle {0} appears twice in the reporter set")]
    DuplicateReporter(VehicleId),
    #[error("unknown violation type {0}")]
    UnknownViolationType(u16),
    #[error("unknown vehicle {0}")]
    UnknownVehicle(VehicleId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EconomyConstants {
    /// Initial and periodic resource grant.
    pub p0: Units,
    /// Resource floor: at or below it the vehicle is banned.
    pub p_min: Units,
    /// Reference point subtracted from resources when normalizing them.
    pub p_floor_norm: Units,
    /// Credit granted at every period start; also the credit cap.
    pub l0: Units,
    /// Allocation period in simulated days.
    pub period_days: u32,
    pub congestion_fee: Units,
}

impl EconomyConstants {
    pub fn validate(&self) -> Result<(), EconomyError> {
        let bad = |m: &str| Err(EconomyError::InvalidConstants(m.to_string()));
        if self.p_min <= Units::ZERO || self.p_min >= self.p0 {
            return bad("require 0 < p_min < p0");
        }
        if self.p_floor_norm >= self.p0 {
            return bad("require p_floor_norm < p0");
        }
        if self.l0 <= Units::ZERO {
            return bad("require l0 > 0");
        }
        if self.period_days < 1 {
            return bad("require period_days >= 1");
        }
        if self.congestion_fee.is_negative() {
            return bad("require congestion_fee >= 0");
        }
        Ok(())
    }
}

/// Index into the violation catalog.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ViolationType(pub u16);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TariffEntry {
    /// Resource fine.
    pub resources: Units,
    /// Credit deduction.
    pub credit: Units,
}

/// Fine schedule, one entry per violation type. The catalog size is the
/// number of entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ViolationTariff(pub Vec<TariffEntry>);

impl ViolationTariff {
    pub fn uniform(types: usize, resources: Units, credit: Units) -> Self {
        ViolationTariff(vec![TariffEntry { resources, credit }; types])
    }

    pub fn catalog_size(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, k: ViolationType) -> Result<&TariffEntry, EconomyError> {
        self.0.get(k.0 as usize).ok_or(EconomyError::UnknownViolationType(k.0))
    }

    pub fn validate(&self) -> Result<(), EconomyError> {
        if self.0.is_empty() {
            return Err(EconomyError::InvalidTariff("at least one violation type is required".into()));
        }
        if self.0.len() > u16::MAX as usize {
            return Err(EconomyError::InvalidTariff("too many violation types".into()));
        }
        for (k, e) in self.0.iter().enumerate() {
            if e.resources.is_negative() || e.credit.is_negative() {
                return Err(EconomyError::InvalidTariff(format!("type {k} has a negative amount")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BanReason {
    ResourceExhaustion,
    CreditExhaustion,
}

impl fmt::Display for BanReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BanReason::ResourceExhaustion => "resource-exhaustion",
            BanReason::CreditExhaustion => "credit-exhaustion",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    pub resources: Units,
    pub credit: Units,
    /// Set when a threshold is crossed; cleared only by [`periodic_grant`].
    pub ban: Option<BanReason>,
}

impl Ledger {
    pub fn new(c: &EconomyConstants) -> Self {
        Ledger { resources: c.p0, credit: c.l0, ban: None }
    }

    pub fn is_banned(&self) -> bool {
        self.ban.is_some()
    }

    /// Bans the ledger if a threshold has been reached. Returns the reason if
    /// this call is what banned it.
    pub fn reevaluate_ban(&mut self, c: &EconomyConstants) -> Option<BanReason> {
        if self.ban.is_some() {
            return None;
        }
        let reason = if self.credit <= Units::ZERO {
            Some(BanReason::CreditExhaustion)
        } else if self.resources <= c.p_min {
            Some(BanReason::ResourceExhaustion)
        } else {
            None
        };
        self.ban = reason;
        reason
    }
}

/// Either side of a transfer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Account {
    /// The allocating authority: source of grants, sink of fees and sunk fines.
    System,
    Vehicle(VehicleId),
}

impl fmt::Display for Account {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Account::System => f.write_str("system"),
            Account::Vehicle(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferCause {
    Fine,
    CongestionFee,
    Grant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub payer: Account,
    pub payee: Account,
    pub amount: Units,
    pub cause: TransferCause,
}

/// Everything a fine did to the ledgers, in application order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FineOutcome {
    pub transfers: Vec<Transfer>,
    pub credit_deducted: Units,
    /// Set if the offender was banned by this fine.
    pub banned: Option<BanReason>,
}

pub fn init_ledgers(n: usize, c: &EconomyConstants) -> Result<Vec<Ledger>, EconomyError> {
    if n == 0 {
        return Err(EconomyError::EmptyPopulation);
    }
    c.validate()?;
    Ok(vec![Ledger::new(c); n])
}

/// Period-boundary allocation: resources accumulate, credit resets, bans lift.
pub fn periodic_grant(ledger: &mut Ledger, vehicle: VehicleId, c: &EconomyConstants) -> Transfer {
    ledger.resources += c.p0;
    ledger.credit = c.l0;
    ledger.ban = None;
    Transfer { payer: Account::System, payee: Account::Vehicle(vehicle), amount: c.p0, cause: TransferCause::Grant }
}

/// CATS fine: the offender pays `f_res[k]` split evenly among the reporters
/// and loses `f_cre[k]` credit.
pub fn apply_fine(
    ledgers: &mut [Ledger],
    offender: VehicleId,
    reporters: &[VehicleId],
    k: ViolationType,
    tariff: &ViolationTariff,
    c: &EconomyConstants,
) -> Result<FineOutcome, EconomyError> {
    let entry = tariff.get(k)?.clone();
    if reporters.is_empty() {
        return Err(EconomyError::NoReporters(offender));
    }
    let n = ledgers.len();
    if offender.index() >= n {
        return Err(EconomyError::UnknownVehicle(offender));
    }
    for (i, r) in reporters.iter().enumerate() {
        if *r == offender {
            return Err(EconomyError::SelfReport(*r));
        }
        if r.index() >= n {
            return Err(EconomyError::UnknownVehicle(*r));
        }
        if reporters[..i].contains(r) {
            return Err(EconomyError::DuplicateReporter(*r));
        }
    }

    let share = entry.resources.share(reporters.len());
    let mut sorted = reporters.to_vec();
    sorted.sort_unstable();
    let off = &mut ledgers[offender.index()];
    off.resources -= entry.resources;
    off.credit -= entry.credit;
    let banned = off.reevaluate_ban(c);

    let mut transfers = Vec::with_capacity(sorted.len());
    for r in sorted {
        ledgers[r.index()].resources += share;
        transfers.push(Transfer {
            payer: Account::Vehicle(offender),
            payee: Account::Vehicle(r),
            amount: share,
            cause: TransferCause::Fine,
        });
    }
    Ok(FineOutcome { transfers, credit_deducted: entry.credit, banned })
}

/// Camera-enforced fine outside CATS: the resource part leaves the system.
pub fn apply_sunk_fine(
    ledger: &mut Ledger,
    offender: VehicleId,
    k: ViolationType,
    tariff: &ViolationTariff,
    c: &EconomyConstants,
) -> Result<FineOutcome, EconomyError> {
    let entry = tariff.get(k)?.clone();
    ledger.resources -= entry.resources;
    ledger.credit -= entry.credit;
    let banned = ledger.reevaluate_ban(c);
    Ok(FineOutcome {
        transfers: vec![Transfer {
            payer: Account::Vehicle(offender),
            payee: Account::System,
            amount: entry.resources,
            cause: TransferCause::Fine,
        }],
        credit_deducted: entry.credit,
        banned,
    })
}

/// Charged once per entry into a congested segment. The fee is sunk.
pub fn charge_congestion(ledger: &mut Ledger, vehicle: VehicleId, c: &EconomyConstants) -> (Transfer, Option<BanReason>) {
    ledger.resources -= c.congestion_fee;
    let banned = ledger.reevaluate_ban(c);
    (
        Transfer {
            payer: Account::Vehicle(vehicle),
            payee: Account::System,
            amount: c.congestion_fee,
            cause: TransferCause::CongestionFee,
        },
        banned,
    )
}

pub fn is_allowed_to_drive(ledger: &Ledger) -> bool {
    !ledger.is_banned()
}
