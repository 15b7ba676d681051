//! Millisecond time grid shared by the solver, the online planner and the
//! simulator.
//!
//! Every duration and instant is rounded to whole milliseconds exactly once,
//! at the input boundary, so that window checks, dominance comparisons and
//! uplink bookkeeping are exact integer comparisons in every module and all
//! three agree on boundary feasibility.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

/// An instant or duration on the 1 ms grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeMs(pub i64);

impl TimeMs {
    pub const ZERO: TimeMs = TimeMs(0);
    /// Sentinel for "no lower bound"; only compared against, never added to.
    pub const MIN: TimeMs = TimeMs(i64::MIN);
    /// Sentinel for "no upper bound"; only compared against, never added to.
    pub const MAX: TimeMs = TimeMs(i64::MAX);

    /// Rounds seconds to the grid, half away from zero. This is the single
    /// seconds-to-grid conversion used everywhere.
    pub fn from_secs_f64(secs: f64) -> TimeMs {
        TimeMs((secs * 1000.0).round() as i64)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn as_millis(self) -> i64 {
        self.0
    }
}

impl Add for TimeMs {
    type Output = TimeMs;
    fn add(self, rhs: TimeMs) -> TimeMs {
        TimeMs(self.0 + rhs.0)
    }
}

impl AddAssign for TimeMs {
    fn add_assign(&mut self, rhs: TimeMs) {
        self.0 += rhs.0;
    }
}

impl Sub for TimeMs {
    type Output = TimeMs;
    fn sub(self, rhs: TimeMs) -> TimeMs {
        TimeMs(self.0 - rhs.0)
    }
}

impl fmt::Display for TimeMs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}
