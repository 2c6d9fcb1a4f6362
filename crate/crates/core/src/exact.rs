//! Unbounded integers with an `i128` fast path, used for the exact track of
//! the evaluator.

use std::cmp::Ordering;

use num_bigint::BigInt;
use num_traits::{One, ToPrimitive};

use crate::fixedpoint::{fits, wrap};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Exact {
    Small(i128),
    Big(BigInt),
}

impl Exact {
    fn big(&self) -> BigInt {
        match self {
            Exact::Small(v) => BigInt::from(*v),
            Exact::Big(b) => b.clone(),
        }
    }

    fn norm(b: BigInt) -> Exact {
        match b.to_i128() {
            Some(v) => Exact::Small(v),
            None => Exact::Big(b),
        }
    }

    pub fn add(&self, o: &Exact) -> Exact {
        if let (Exact::Small(a), Exact::Small(b)) = (self, o) {
            if let Some(v) = a.checked_add(*b) {
                return Exact::Small(v);
            }
        }
        Exact::norm(self.big() + o.big())
    }

    pub fn sub(&self, o: &Exact) -> Exact {
        if let (Exact::Small(a), Exact::Small(b)) = (self, o) {
            if let Some(v) = a.checked_sub(*b) {
                return Exact::Small(v);
            }
        }
        Exact::norm(self.big() - o.big())
    }

    pub fn mul(&self, o: &Exact) -> Exact {
        if let (Exact::Small(a), Exact::Small(b)) = (self, o) {
            if let Some(v) = a.checked_mul(*b) {
                return Exact::Small(v);
            }
        }
        Exact::norm(self.big() * o.big())
    }

    /// `floor(self / 2^d)`.
    pub fn shr(&self, d: u32) -> Exact {
        match self {
            Exact::Small(a) => Exact::Small(if d >= 127 {
                if *a < 0 {
                    -1
                } else {
                    0
                }
            } else {
                a >> d
            }),
            Exact::Big(b) => Exact::norm(b >> d as usize),
        }
    }

    pub fn shl(&self, d: u32) -> Exact {
        if let Exact::Small(a) = self {
            if d < 127 && fits(*a, 128 - d) {
                return Exact::Small(a << d);
            }
        }
        Exact::norm(self.big() << d as usize)
    }

    pub fn fits(&self, bits: u32) -> bool {
        match self {
            Exact::Small(v) => fits(*v, bits),
            Exact::Big(_) => false,
        }
    }

    /// Residue mod `2^bits` in the signed range.
    pub fn reduce(&self, bits: u32) -> i128 {
        match self {
            Exact::Small(v) => wrap(*v, bits),
            Exact::Big(b) => {
                let mask = (BigInt::one() << 128usize) - 1;
                let low: BigInt = b & mask;
                wrap(low.to_u128().expect("masked to 128 bits") as i128, bits)
            }
        }
    }
}

impl PartialOrd for Exact {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Exact {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Exact::Small(a), Exact::Small(b)) => a.cmp(b),
            _ => self.big().cmp(&other.big()),
        }
    }
}

impl std::fmt::Display for Exact {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Exact::Small(v) => write!(f, "{v}"),
            Exact::Big(b) => write!(f, "{b}"),
        }
    }
}
