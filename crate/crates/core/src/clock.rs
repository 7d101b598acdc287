//! Session clock: simulated (explicitly advanced) or wall-clock.

use std::time::Instant;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClockError {
    #[error("cannot move simulated clock back from {now_ms} ms to {target_ms} ms")]
    Backwards { now_ms: u64, target_ms: u64 },
    #[error("a realtime clock cannot be advanced explicitly")]
    Realtime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    Simulated,
    Realtime,
}

#[derive(Debug, Clone)]
pub struct Clock {
    inner: Inner,
}

#[derive(Debug, Clone)]
enum Inner {
    Simulated { now_ms: u64 },
    Realtime { origin: Instant, last_ms: std::cell::Cell<u64> },
}

impl Clock {
    pub fn simulated() -> Self {
        Clock {
            inner: Inner::Simulated { now_ms: 0 },
        }
    }

    pub fn realtime() -> Self {
        Clock {
            inner: Inner::Realtime {
                origin: Instant::now(),
                last_ms: std::cell::Cell::new(0),
            },
        }
    }

    pub fn mode(&self) -> ClockMode {
        match self.inner {
            Inner::Simulated { .. } => ClockMode::Simulated,
            Inner::Realtime { .. } => ClockMode::Realtime,
        }
    }

    pub fn now_ms(&self) -> u64 {
        match &self.inner {
            Inner::Simulated { now_ms } => *now_ms,
            Inner::Realtime { origin, last_ms } => {
                // Instant is monotone already; the max keeps that explicit.
                let now = (origin.elapsed().as_millis() as u64).max(last_ms.get());
                last_ms.set(now);
                now
            }
        }
    }

    pub fn advance(&mut self, delta_ms: u64) -> Result<u64, ClockError> {
        match &mut self.inner {
            Inner::Simulated { now_ms } => {
                *now_ms += delta_ms;
                Ok(*now_ms)
            }
            Inner::Realtime { .. } => Err(ClockError::Realtime),
        }
    }

    pub fn advance_to(&mut self, target_ms: u64) -> Result<u64, ClockError> {
        match &mut self.inner {
            Inner::Simulated { now_ms } => {
                if target_ms < *now_ms {
                    return Err(ClockError::Backwards {
                        now_ms: *now_ms,
                        target_ms,
                    });
                }
                *now_ms = target_ms;
                Ok(target_ms)
            }
            Inner::Realtime { .. } => Err(ClockError::Realtime),
        }
    }
}
