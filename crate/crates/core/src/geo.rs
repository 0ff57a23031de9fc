//! Planar integer coordinates and the floored Euclidean distance.

use num_integer::Roots;
use serde::{Deserialize, Serialize};

/// Exclusive upper bound for each coordinate, in meters.
pub const COORDINATE_LIMIT: u32 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Location {
    pub x: u32,
    pub y: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("coordinate ({x}, {y}) outside [0, {COORDINATE_LIMIT})")]
pub struct OutOfBounds {
    pub x: u32,
    pub y: u32,
}

impl Location {
    pub fn new(x: u32, y: u32) -> Result<Self, OutOfBounds> {
        if x >= COORDINATE_LIMIT || y >= COORDINATE_LIMIT {
            return Err(OutOfBounds { x, y });
        }
        Ok(Self { x, y })
    }

    /// Canonical 8-byte form: `x` then `y`, each 32-bit big-endian.
    pub fn to_bytes(self) -> [u8; 8] {
        let mut out = [0u8; 8];
        out[..4].copy_from_slice(&self.x.to_be_bytes());
        out[4..].copy_from_slice(&self.y.to_be_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != 8 {
            return None;
        }
        let x = u32::from_be_bytes(bytes[..4].try_into().ok()?);
        let y = u32::from_be_bytes(bytes[4..].try_into().ok()?);
        Self::new(x, y).ok()
    }
}

/// `floor(sqrt((xa - xb)^2 + (ya - yb)^2))`, exact in integer arithmetic.
pub fn distance(a: Location, b: Location) -> u32 {
    let dx = u64::from(a.x.abs_diff(b.x));
    let dy = u64::from(a.y.abs_diff(b.y));
    let root = (dx * dx + dy * dy).sqrt();
    u32::try_from(root).expect("distance of in-range points fits in u32")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn loc(x: u32, y: u32) -> Location {
        Location::new(x, y).unwrap()
    }

    // Largest r with r*r <= v, by linear search from below.
    fn isqrt_oracle(v: u64) -> u64 {
        let mut r = 0u64;
        while (r + 1) * (r + 1) <= v {
            r += 1;
        }
        r
    }

    #[test]
    fn named_cases() {
        assert_eq!(distance(loc(0, 0), loc(3, 4)), 5);
        assert_eq!(distance(loc(0, 0), loc(1, 1)), isqrt_oracle(2) as u32);
        assert_eq!(distance(loc(0, 0), loc(1, 1)), 1);
        assert_eq!(distance(loc(42, 42), loc(42, 42)), 0);
        assert_eq!(
            distance(loc(0, 0), loc(999_999, 999_999)),
            1_414_212 // floor(999999 * sqrt 2)
        );
    }

    #[test]
    fn bounds() {
        assert!(Location::new(COORDINATE_LIMIT, 0).is_err());
        assert!(Location::new(0, COORDINATE_LIMIT).is_err());
        assert_eq!(Location::from_bytes(&loc(7, 9).to_bytes()), Some(loc(7, 9)));
        assert_eq!(Location::from_bytes(&[0xff; 8]), None);
    }

    proptest! {
        #[test]
        fn floor_sqrt_and_symmetry(ax in 0u32..2000, ay in 0u32..2000, bx in 0u32..2000, by in 0u32..2000) {
            let (a, b) = (loc(ax, ay), loc(bx, by));
            let dx = u64::from(ax.abs_diff(bx));
            let dy = u64::from(ay.abs_diff(by));
            prop_assert_eq!(u64::from(distance(a, b)), isqrt_oracle(dx * dx + dy * dy));
            prop_assert_eq!(distance(a, b), distance(b, a));
        }
    }
}
