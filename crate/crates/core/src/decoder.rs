//! Dynamic chunk scheduling for an offline unit-to-audio decoder.
//!
//! Chunks are cut as late as possible: the next chunk is sent `epsilon` ms
//! before the audio of the current one would finish,
//! `t_{k+1} = t_k + n_k * t_unit - epsilon`, and it takes every unit that
//! has arrived by then. When units arrive faster than real time the chunks
//! grow, so there are fewer chunk boundaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("chunk must hold at least one unit")]
    EmptyChunk,
    #[error("unit duration must be positive")]
    ZeroUnitDuration,
    #[error("epsilon {epsilon_ms} ms exceeds chunk duration {chunk_ms} ms; schedule would move backwards")]
    EpsilonTooLarge { epsilon_ms: u64, chunk_ms: u64 },
    #[error("unit arrivals are not time-ordered at index {0}")]
    UnorderedArrivals(usize),
}

pub fn schedule_next(t_k: u64, n_k: u64, t_unit: u64, epsilon: u64) -> Result<u64, ScheduleError> {
    if n_k == 0 {
        return Err(ScheduleError::EmptyChunk);
    }
    if t_unit == 0 {
        return Err(ScheduleError::ZeroUnitDuration);
    }
    let chunk_ms = n_k * t_unit;
    if epsilon > chunk_ms {
        return Err(ScheduleError::EpsilonTooLarge {
            epsilon_ms: epsilon,
            chunk_ms,
        });
    }
    Ok(t_k + chunk_ms - epsilon)
}

/// Smallest chunk that moves the schedule forward by at least one unit
/// duration. Anything shorter leaves too little time for new units to
/// arrive and the plan degenerates into single-unit chunks.
pub fn min_chunk_units(t_unit: u64, epsilon: u64) -> u64 {
    epsilon.div_ceil(t_unit) + 1
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderProfile {
    pub processing_ms_per_chunk: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkEntry {
    pub t_ms: u64,
    pub n_units: u64,
    /// Index of the chunk's first unit in the arrival stream.
    pub first_unit: usize,
    pub playback_start_ms: u64,
    pub playback_end_ms: u64,
    /// False when the chunk had to wait for units past its scheduled time.
    pub on_schedule: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub entries: Vec<ChunkEntry>,
    pub t_unit_ms: u64,
    pub epsilon_ms: u64,
}

impl ChunkPlan {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sizes(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.n_units).collect()
    }

    pub fn playback_end_ms(&self) -> Option<u64> {
        self.entries.last().map(|e| e.playback_end_ms)
    }

    /// Adjacent pairs where the later chunk fired on schedule but violates the recurrence.
    pub fn recurrence_violations(&self) -> Vec<usize> {
        self.entries
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1].on_schedule && w[1].t_ms + self.epsilon_ms != w[0].t_ms + w[0].n_units * self.t_unit_ms)
            .map(|(k, _)| k)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioEvent {
    pub chunk: usize,
    pub ready_ms: u64,
    pub start_ms: u64,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Underrun {
    pub chunk: usize,
    pub gap_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamOutcome {
    pub plan: ChunkPlan,
    pub audio: Vec<AudioEvent>,
    /// On-schedule chunks that were not synthesized by `t_k + n_k * t_unit`,
    /// the time the schedule assumes the previous chunk stops playing.
    pub underruns: Vec<Underrun>,
    /// Actual silences in queued playback.
    pub starved: Vec<Underrun>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamParams {
    pub t_unit_ms: u64,
    pub epsilon_ms: u64,
    pub profile: DecoderProfile,
    /// Units that must have arrived before the first chunk fires.
    pub priming: u64,
}

impl StreamParams {
    pub fn new(t_unit_ms: u64, epsilon_ms: u64, processing_ms_per_chunk: u64) -> Self {
        StreamParams {
            t_unit_ms,
            epsilon_ms,
            profile: DecoderProfile {
                processing_ms_per_chunk,
            },
            priming: 1,
        }
    }
}

/// Incremental chunker. Feed unit arrivals with [`push_unit`](Self::push_unit),
/// call [`fire`](Self::fire) at the time returned by
/// [`next_fire_ms`](Self::next_fire_ms), and [`close`](Self::close) when
/// generation ends.
///
/// Each chunk takes every unit that has arrived by its time. It must hold at
/// least [`min_chunk_units`] units (the first also at least `priming`),
/// except the final drain; when too few have arrived the chunker waits and
/// fires as soon as enough do, marking that chunk off-schedule. Playback of
/// a chunk starts once it is synthesized and the previous chunk finished.
#[derive(Debug, Clone)]
pub struct ChunkScheduler {
    params: StreamParams,
    min_first: usize,
    min_n: usize,
    arrivals: Vec<u64>,
    next: usize,
    next_fire: Option<u64>,
    waiting: bool,
    on_schedule: bool,
    closed: bool,
    out: StreamOutcome,
}

impl ChunkScheduler {
    pub fn new(params: StreamParams) -> Result<Self, ScheduleError> {
        if params.t_unit_ms == 0 {
            return Err(ScheduleError::ZeroUnitDuration);
        }
        let min_n = min_chunk_units(params.t_unit_ms, params.epsilon_ms) as usize;
        Ok(ChunkScheduler {
            params,
            min_first: min_n.max(params.priming.max(1) as usize),
            min_n,
            arrivals: Vec::new(),
            next: 0,
            next_fire: None,
            waiting: true,
            on_schedule: true,
            closed: false,
            out: StreamOutcome {
                plan: ChunkPlan {
                    entries: Vec::new(),
                    t_unit_ms: params.t_unit_ms,
                    epsilon_ms: params.epsilon_ms,
                },
                ..Default::default()
            },
        })
    }

    pub fn next_fire_ms(&self) -> Option<u64> {
        self.next_fire
    }

    pub fn is_done(&self) -> bool {
        self.closed && self.next == self.arrivals.len()
    }

    pub fn outcome(&self) -> &StreamOutcome {
        &self.out
    }

    pub fn into_outcome(self) -> StreamOutcome {
        self.out
    }

    fn min_units(&self) -> usize {
        if self.out.plan.entries.is_empty() {
            self.min_first
        } else {
            self.min_n
        }
    }

    /// Returns the fire time if this arrival released a waiting chunk.
    pub fn push_unit(&mut self, t_ms: u64) -> Result<Option<u64>, ScheduleError> {
        if self.arrivals.last().is_some_and(|&last| t_ms < last) {
            return Err(ScheduleError::UnorderedArrivals(self.arrivals.len()));
        }
        self.arrivals.push(t_ms);
        if self.waiting && self.arrivals.len() - self.next >= self.min_units() {
            self.waiting = false;
            self.next_fire = Some(t_ms);
            return Ok(Some(t_ms));
        }
        Ok(None)
    }

    /// Ends the stream; a waiting remainder is released at `t_ms`.
    pub fn close(&mut self, t_ms: u64) -> Option<u64> {
        self.closed = true;
        if self.waiting && self.arrivals.len() > self.next {
            self.waiting = false;
            self.next_fire = Some(t_ms);
            return Some(t_ms);
        }
        None
    }

    pub fn fire(&mut self, t_ms: u64) -> Option<ChunkEntry> {
        self.next_fire = None;
        let arrived = self.arrivals.partition_point(|&a| a <= t_ms);
        let avail = arrived.saturating_sub(self.next);
        let drain = self.closed && arrived == self.arrivals.len();
        if avail == 0 || (avail < self.min_units() && !drain) {
            self.waiting = true;
            self.on_schedule = false;
            return None;
        }
        let StreamParams {
            t_unit_ms, profile, ..
        } = self.params;
        let n = avail as u64;
        let ready = t_ms + profile.processing_ms_per_chunk;
        let index = self.out.plan.entries.len();
        let on_schedule = self.on_schedule || index == 0;
        if let (true, Some(prev)) = (on_schedule, self.out.plan.entries.last()) {
            let deadline = prev.t_ms + prev.n_units * t_unit_ms;
            if ready > deadline {
                self.out.underruns.push(Underrun {
                    chunk: index,
                    gap_ms: ready - deadline,
                });
            }
        }
        let start = match self.out.plan.entries.last().map(|e| e.playback_end_ms) {
            Some(end) if ready > end => {
                self.out.starved.push(Underrun {
                    chunk: index,
                    gap_ms: ready - end,
                });
                ready
            }
            Some(end) => end,
            None => ready,
        };
        let entry = ChunkEntry {
            t_ms,
            n_units: n,
            first_unit: self.next,
            playback_start_ms: start,
            playback_end_ms: start + n * t_unit_ms,
            on_schedule,
        };
        self.out.audio.push(AudioEvent {
            chunk: index,
            ready_ms: ready,
            start_ms: start,
            duration_ms: n * t_unit_ms,
        });
        self.out.plan.entries.push(entry.clone());
        self.next += avail;
        if !self.is_done() {
            self.on_schedule = true;
            self.next_fire = Some(
                schedule_next(t_ms, n, t_unit_ms, self.params.epsilon_ms).expect("chunk outlasts the margin"),
            );
        }
        Some(entry)
    }
}

/// Plans decoder chunks over a complete, time-ordered unit arrival stream
/// that ends with its last arrival.
pub fn run_stream(arrivals: &[u64], params: StreamParams) -> Result<StreamOutcome, ScheduleError> {
    let mut sched = ChunkScheduler::new(params)?;
    if let Some(i) = arrivals.windows(2).position(|w| w[1] < w[0]) {
        return Err(ScheduleError::UnorderedArrivals(i + 1));
    }
    let mut i = 0;
    loop {
        match (arrivals.get(i), sched.next_fire_ms()) {
            (Some(&a), fire) if fire.is_none_or(|f| a <= f) => {
                sched.push_unit(a)?;
                i += 1;
                if i == arrivals.len() {
                    sched.close(a);
                }
            }
            (_, Some(f)) => {
                sched.fire(f);
            }
            (Some(_), None) => unreachable!(),
            (None, None) => break,
        }
    }
    Ok(sched.into_outcome())
}

/// Baseline: flush whatever arrived at every fixed period; counts non-empty chunks.
pub fn fixed_chunk_count(arrivals: &[u64], period_ms: u64) -> usize {
    let Some(&first) = arrivals.first() else { return 0 };
    let mut windows: Vec<u64> = arrivals.iter().map(|a| (a - first) / period_ms).collect();
    windows.dedup();
    windows.len()
}
