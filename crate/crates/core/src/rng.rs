//! Counter-based random streams.
//!
//! Every draw in the simulation comes from a stream addressed by
//! `(master seed, purpose, day, vehicle)`. The seed and purpose form the
//! ChaCha key and `(day, vehicle)` selects the stream, so the values a vehicle
//! sees on a given day do not depend on which other vehicles were visited
//! first, or whether they were visited at all.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::VehicleId;

/// What a stream is used for. Distinct purposes never share key material.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Purpose {
    /// Initial type assignment (vehicle 0, day 0 only).
    Population,
    /// The tick at which a vehicle is inspected on a given day.
    SampleTick,
    /// Violation Bernoulli draw and violation type.
    Violation,
    /// Accident escalation of an accepted violation.
    Accident,
}

impl Purpose {
    fn code(self) -> u32 {
        match self {
            Purpose::Population => 1,
            Purpose::SampleTick => 2,
            Purpose::Violation => 3,
            Purpose::Accident => 4,
        }
    }
}

/// Address of a stream, logged alongside the events it produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub purpose: Purpose,
    pub day: u32,
    pub vehicle: VehicleId,
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.purpose.code(), self.day, self.vehicle)
    }
}

impl StreamId {
    pub fn new(purpose: Purpose, day: u32, vehicle: VehicleId) -> Self {
        StreamId { purpose, day, vehicle }
    }

    pub fn open(self, seed: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..12].copy_from_slice(&self.purpose.code().to_le_bytes());
        // Domain tag so that keys never coincide with a plain `seed_from_u64`.
        key[12..16].copy_from_slice(b"cats");
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(((self.day as u64) << 32) | self.vehicle.0 as u64);
        rng
    }
}

pub fn stream(seed: u64, purpose: Purpose, day: u32, vehicle: VehicleId) -> ChaCha8Rng {
    StreamId::new(purpose, day, vehicle).open(seed)
}

/// One Bernoulli draw. `p <= 0` never fires and `p >= 1` always does, without
/// depending on the drawn value.
#[inline]
pub fn bernoulli<R: Rng>(rng: &mut R, p: f64) -> bool {
    let u: f64 = rng.random();
    if p <= 0.0 {
        false
    } else if p >= 1.0 {
        true
    } else {
        u < p
    }
}
