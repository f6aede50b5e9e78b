//! Run-wide cost accounting in integer micro-units.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

/// A monetary amount in millionths of a currency unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cost(pub u64);

impl Cost {
    pub const ZERO: Cost = Cost(0);

    pub fn from_units(units: f64) -> Cost {
        Cost((units.max(0.0) * 1e6).round() as u64)
    }

    pub fn units(self) -> f64 {
        self.0 as f64 / 1e6
    }
}

impl std::ops::Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost(self.0 + o.0)
    }
}

impl std::iter::Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::ZERO, |a, b| a + b)
    }
}

impl std::fmt::Display for Cost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.6}", self.units())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("budget exceeded: spent {spent} + reserved {reserved} + estimate {estimate} > cap {cap}")]
pub struct BudgetExceeded {
    pub spent: Cost,
    pub reserved: Cost,
    pub estimate: Cost,
    pub cap: Cost,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub scenario_id: String,
    pub request_hash: String,
    pub cost: Cost,
}

#[derive(Debug, Default)]
struct LedgerState {
    spent: Cost,
    reserved: Cost,
    entries: Vec<LedgerEntry>,
}

/// Single-writer ledger shared by concurrent requests. Estimates are
/// reserved before a call so concurrent calls cannot overshoot the cap.
#[derive(Debug)]
pub struct Ledger {
    cap: Cost,
    state: Mutex<LedgerState>,
}

#[must_use]
#[derive(Debug)]
pub struct Reservation {
    amount: Cost,
}

impl Ledger {
    pub fn new(cap: Cost) -> Self {
        Ledger { cap, state: Mutex::new(LedgerState::default()) }
    }

    pub fn cap(&self) -> Cost {
        self.cap
    }

    pub fn reserve(&self, estimate: Cost) -> Result<Reservation, BudgetExceeded> {
        let mut st = self.state.lock().expect("ledger lock");
        if st.spent.0 + st.reserved.0 + estimate.0 > self.cap.0 {
            return Err(BudgetExceeded { spent: st.spent, reserved: st.reserved, estimate, cap: self.cap });
        }
        st.reserved.0 += estimate.0;
        Ok(Reservation { amount: estimate })
    }

    pub fn settle(&self, r: Reservation, entry: LedgerEntry) {
        let mut st = self.state.lock().expect("ledger lock");
        st.reserved.0 -= r.amount.0;
        st.spent.0 += entry.cost.0;
        st.entries.push(entry);
    }

    pub fn release(&self, r: Reservation) {
        let mut st = self.state.lock().expect("ledger lock");
        st.reserved.0 -= r.amount.0;
    }

    pub fn total(&self) -> Cost {
        self.state.lock().expect("ledger lock").spent
    }

    pub fn entries(&self) -> Vec<LedgerEntry> {
        self.state.lock().expect("ledger lock").entries.clone()
    }
}
