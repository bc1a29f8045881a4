//! Per-thread operation counters.
//!
//! Each handshake peer runs on its own thread, so a peer's cost is the
//! difference between two snapshots taken on that thread.

use std::cell::Cell;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CryptoCounts {
    pub modexp: u64,
    pub prf: u64,
    pub prf_plus: u64,
}

impl Sub for CryptoCounts {
    type Output = CryptoCounts;

    fn sub(self, rhs: Self) -> Self {
        CryptoCounts {
            modexp: self.modexp - rhs.modexp,
            prf: self.prf - rhs.prf,
            prf_plus: self.prf_plus - rhs.prf_plus,
        }
    }
}

impl Add for CryptoCounts {
    type Output = CryptoCounts;

    fn add(self, rhs: Self) -> Self {
        CryptoCounts {
            modexp: self.modexp + rhs.modexp,
            prf: self.prf + rhs.prf,
            prf_plus: self.prf_plus + rhs.prf_plus,
        }
    }
}

thread_local! {
    static COUNTS: Cell<CryptoCounts> = const { Cell::new(CryptoCounts { modexp: 0, prf: 0, prf_plus: 0 }) };
}

pub fn snapshot() -> CryptoCounts {
    COUNTS.with(Cell::get)
}

fn bump(f: impl FnOnce(&mut CryptoCounts)) {
    COUNTS.with(|c| {
        let mut v = c.get();
        f(&mut v);
        c.set(v);
    });
}

pub(crate) fn record_modexp() {
    bump(|c| c.modexp += 1);
}

pub(crate) fn record_prf() {
    bump(|c| c.prf += 1);
}

pub(crate) fn record_prf_plus() {
    bump(|c| c.prf_plus += 1);
}
