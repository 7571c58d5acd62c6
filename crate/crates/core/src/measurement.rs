//! Density, flow and speed over a space-time region, aggregated area-wise.
//!
//! Over a detector of total length `L` and a window of duration `W`, with `D` the distance
//! travelled inside the detector and `T` the time spent inside it (summed over vehicles):
//!
//! * density `k = T / (L W)`, reported in veh/km
//! * flow    `Q = D / (L W)`, reported in veh/h
//! * speed   `V = D / T`,     reported in km/h
//!
//! so `Q = k V` holds identically. Within a step a vehicle's position is interpolated
//! linearly, which splits time and distance exactly at detector boundaries.

use std::ops::Range;

use thiserror::Error;

use crate::geometry::ClosedNetwork;
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("measurement window has zero duration")]
    EmptyWindow,
    #[error("trace has {got} steps; warmup plus one window needs {needed}")]
    TraceTooShort { needed: usize, got: usize },
    #[error("invalid detector: {0}")]
    InvalidDetector(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSample<T> {
    /// veh/km
    pub k: T,
    /// veh/h
    pub q: T,
    /// km/h
    pub v: T,
    pub window_start: T,
    /// vehicle-meters
    pub total_travel_distance: T,
    /// vehicle-seconds
    pub total_travel_time: T,
}

impl<T: Scalar> FlowSample<T> {
    /// Builds a sample from area totals over a detector of `length` meters and a window of
    /// `window` seconds.
    pub fn from_totals(distance: T, time: T, length: T, window: T, window_start: T) -> Self {
        let area = length * window;
        let k = time / area * T::lit(1000.0);
        let q = distance / area * T::lit(3600.0);
        let v = if time > T::zero() {
            distance / time * T::lit(3.6)
        } else {
            T::zero()
        };
        Self {
            k,
            q,
            v,
            window_start,
            total_travel_distance: distance,
            total_travel_time: time,
        }
    }

    /// `|Q - k V| / max(Q, 1)`.
    pub fn identity_residual(&self) -> T {
        (self.q - self.k * self.v).abs() / self.q.max(T::one())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectorRegion {
    /// Approach segment plus conflict zone of every lane of one approach.
    Approach { approach: usize },
    /// An explicit `[start, end)` stretch of ring coordinates on every lane of one approach.
    Segment {
        approach: usize,
        segment_start: f64,
        segment_end: f64,
    },
    /// Every ring in full.
    WholeNetwork,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub region: DetectorRegion,
    /// seconds
    pub window: f64,
    /// seconds discarded at the start of a run
    pub warmup: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            region: DetectorRegion::Approach { approach: 0 },
            window: 60.0,
            warmup: 120.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), MeasureError> {
        if !(self.window > 0.0 && self.window.is_finite()) {
            return Err(MeasureError::InvalidDetector("window must be positive".into()));
        }
        if !(self.warmup >= 0.0 && self.warmup.is_finite()) {
            return Err(MeasureError::InvalidDetector("warmup must be non-negative".into()));
        }
        if let DetectorRegion::Segment {
            segment_start,
            segment_end,
            ..
        } = self.region
        {
            if !(segment_end > segment_start && segment_start >= 0.0) {
                return Err(MeasureError::InvalidDetector(format!(
                    "segment [{segment_start}, {segment_end}) is empty or negative"
                )));
            }
        }
        Ok(())
    }

    /// Maps the detector onto `network` for a simulation stepping at `dt`.
    pub fn resolve<T: Scalar>(&self, network: &ClosedNetwork, dt: f64) -> Result<ResolvedDetector<T>, MeasureError> {
        self.validate()?;
        let steps = |secs: f64, what: &str| -> Result<usize, MeasureError> {
            let n = (secs / dt).round();
            if (n * dt - secs).abs() > 1e-9 * secs.max(1.0) {
                return Err(MeasureError::InvalidDetector(format!(
                    "{what} {secs}s is not a multiple of the time step {dt}s"
                )));
            }
            Ok(n as usize)
        };
        let window_steps = steps(self.window, "window")?;
        let warmup_steps = steps(self.warmup, "warmup")?;

        let spec = &network.intersection;
        let mut spans = Vec::new();
        for (r, ring) in network.rings.iter().enumerate() {
            let c = ring.circuit_length;
            let span = match self.region {
                DetectorRegion::WholeNetwork => Some((0.0, c, true)),
                DetectorRegion::Approach { approach } if ring.approach == approach => {
                    let longest = ring
                        .movements
                        .iter()
                        .map(|&m| spec.conflict_zone_path_length[m])
                        .fold(0.0, f64::max);
                    Some((0.0, ring.entrance_line + longest, false))
                }
                DetectorRegion::Segment {
                    approach,
                    segment_start,
                    segment_end,
                } if ring.approach == approach => {
                    if segment_end > c {
                        return Err(MeasureError::InvalidDetector(format!(
                            "segment end {segment_end} beyond circuit length {c}"
                        )));
                    }
                    Some((segment_start, segment_end, false))
                }
                _ => None,
            };
            if let Some((start, end, whole)) = span {
                spans.push(RingSpan {
                    ring: r,
                    start: T::lit(start),
                    end: T::lit(end),
                    whole,
                });
            }
        }
        if spans.is_empty() {
            return Err(MeasureError::InvalidDetector(format!(
                "{:?} selects no lane of intersection {}",
                self.region, spec.id
            )));
        }
        let length = spans.iter().fold(T::zero(), |acc, s| acc + (s.end - s.start));
        let mut ring_span = vec![None; network.rings.len()];
        for (i, s) in spans.iter().enumerate() {
            ring_span[s.ring] = Some(i);
        }
        Ok(ResolvedDetector {
            spans,
            ring_span,
            length,
            window_steps,
            warmup_steps,
        })
    }
}

/// A `[start, end)` stretch of one ring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingSpan<T> {
    pub ring: usize,
    pub start: T,
    pub end: T,
    /// Covers the whole ring; every position is inside.
    pub whole: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedDetector<T> {
    pub spans: Vec<RingSpan<T>>,
    /// Span index per ring.
    pub ring_span: Vec<Option<usize>>,
    /// Total detector length, meters.
    pub length: T,
    pub window_steps: usize,
    pub warmup_steps: usize,
}

impl<T: Scalar> ResolvedDetector<T> {
    /// Span on `ring`, if the detector covers it.
    #[inline]
    pub fn span(&self, ring: usize) -> Option<&RingSpan<T>> {
        self.ring_span.get(ring).copied().flatten().map(|i| &self.spans[i])
    }
}

fn overlap<T: Scalar>(a0: T, a1: T, b0: T, b1: T) -> T {
    (a1.min(b1) - a0.max(b0)).max(T::zero())
}

/// Distance and time one vehicle accumulates inside `span` while moving from `x0` to `x1`
/// (ring coordinates, wrapping at `circuit`) during a step of `dt`.
#[inline]
pub fn step_contribution<T: Scalar>(x0: T, x1: T, circuit: T, dt: T, span: &RingSpan<T>) -> (T, T) {
    let mut d = x1 - x0;
    if d < T::zero() {
        d = d + circuit;
    }
    if span.whole {
        return (d, dt);
    }
    if d == T::zero() {
        let inside = x0 >= span.start && x0 < span.end;
        return (T::zero(), if inside { dt } else { T::zero() });
    }
    let end = x0 + d;
    let ov = overlap(x0, end, span.start, span.end)
        + overlap(x0, end, span.start + circuit, span.end + circuit);
    (ov, dt * ov / d)
}

/// Streaming window aggregation. Feed every vehicle's move for each step with
/// [`add_move`](Self::add_move), then close the step with [`end_step`](Self::end_step).
#[derive(Debug, Clone)]
pub struct WindowAccumulator<T> {
    detector: ResolvedDetector<T>,
    circuits: Vec<T>,
    dt: T,
    step: usize,
    distance: T,
    time: T,
    samples: Vec<FlowSample<T>>,
}

impl<T: Scalar> WindowAccumulator<T> {
    pub fn new(detector: ResolvedDetector<T>, circuits: Vec<T>, dt: T) -> Self {
        Self {
            detector,
            circuits,
            dt,
            step: 0,
            distance: T::zero(),
            time: T::zero(),
            samples: Vec::new(),
        }
    }

    pub fn measuring(&self) -> bool {
        self.step >= self.detector.warmup_steps
    }

    #[inline]
    pub fn add_move(&mut self, ring: usize, x0: T, x1: T) {
        if !self.measuring() {
            return;
        }
        if let Some(span) = self.detector.span(ring) {
            let (d, t) = step_contribution(x0, x1, self.circuits[ring], self.dt, span);
            self.distance = self.distance + d;
            self.time = self.time + t;
        }
    }

    pub fn end_step(&mut self) {
        self.step += 1;
        let det = &self.detector;
        if self.step > det.warmup_steps && (self.step - det.warmup_steps) % det.window_steps == 0 {
            let start = T::lit((self.step - det.window_steps) as f64) * self.dt;
            let window = T::lit(det.window_steps as f64) * self.dt;
            self.samples.push(FlowSample::from_totals(
                self.distance,
                self.time,
                det.length,
                window,
                start,
            ));
            self.distance = T::zero();
            self.time = T::zero();
        }
    }

    pub fn samples(&self) -> &[FlowSample<T>] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<FlowSample<T>> {
        self.samples
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint<T> {
    pub ring: usize,
    pub position: T,
    pub speed: T,
}

/// Snapshot of every vehicle after a step; vehicles keep their index across frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T> {
    pub time: T,
    pub vehicles: Vec<TracePoint<T>>,
}

/// Full trajectory record: frame 0 is the initial state, frame `i` the state after step `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace<T> {
    pub dt: T,
    pub circuit_lengths: Vec<T>,
    pub frames: Vec<Frame<T>>,
}

#[derive(Debug, Clone, Copy)]
pub struct TraceSlice<'a, T> {
    pub dt: T,
    pub circuit_lengths: &'a [T],
    pub frames: &'a [Frame<T>],
}

impl<T: Scalar> Trace<T> {
    pub fn steps(&self) -> usize {
        self.frames.len().saturating_sub(1)
    }

    /// Frames spanning the given steps (`steps.end` inclusive as a frame index).
    pub fn slice(&self, steps: Range<usize>) -> TraceSlice<'_, T> {
        TraceSlice {
            dt: self.dt,
            circuit_lengths: &self.circuit_lengths,
            frames: &self.frames[steps.start..=steps.end],
        }
    }
}

/// One sample from a slice spanning exactly one window.
pub fn measure_window<T: Scalar>(
    slice: TraceSlice<'_, T>,
    detector: &ResolvedDetector<T>,
) -> Result<FlowSample<T>, MeasureError> {
    if slice.frames.len() < 2 {
        return Err(MeasureError::EmptyWindow);
    }
    let mut distance = T::zero();
    let mut time = T::zero();
    for pair in slice.frames.windows(2) {
        for (a, b) in pair[0].vehicles.iter().zip(&pair[1].vehicles) {
            if let Some(span) = detector.span(a.ring) {
                let (d, t) = step_contribution(
                    a.position,
                    b.position,
                    slice.circuit_lengths[a.ring],
                    slice.dt,
                    span,
                );
                distance = distance + d;
                time = time + t;
            }
        }
    }
    let steps = slice.frames.len() - 1;
    let window = T::lit(steps as f64) * slice.dt;
    Ok(FlowSample::from_totals(
        distance,
        time,
        detector.length,
        window,
        slice.frames[0].time,
    ))
}

/// One sample per complete window after warmup; a partial trailing window is dropped.
pub fn measure_run<T: Scalar>(
    trace: &Trace<T>,
    detector: &ResolvedDetector<T>,
) -> Result<Vec<FlowSample<T>>, MeasureError> {
    let needed = detector.warmup_steps + detector.window_steps;
    if trace.steps() < needed || detector.window_steps == 0 {
        return Err(MeasureError::TraceTooShort {
            needed,
            got: trace.steps(),
        });
    }
    let mut acc = WindowAccumulator::new(detector.clone(), trace.circuit_lengths.clone(), trace.dt);
    for pair in trace.frames.windows(2) {
        for (a, b) in pair[0].vehicles.iter().zip(&pair[1].vehicles) {
            acc.add_move(a.ring, a.position, b.position);
        }
        acc.end_step();
    }
    Ok(acc.into_samples())
}
