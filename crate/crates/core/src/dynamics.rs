//! Longitudinal vehicle dynamics on the lane rings: Intelligent Driver Model car-following,
//! stop-line braking for vehicles denied entrance, and ballistic integration.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordination::{Decision, Grant};
use crate::geometry::{ClosedNetwork, MovementId};
use crate::Scalar;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum DynamicsError {
    #[error("negative gap {0} m passed to the car-following model")]
    NegativeGap(f64),
}

/// Fault raised when a step would break a simulation invariant.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimFault {
    #[error("t={time:.1}s: vehicle {follower} overlaps leader {leader} (gap {gap:.4} m)")]
    NegativeGap {
        follower: u32,
        leader: u32,
        gap: f64,
        time: f64,
    },
    #[error("t={time:.1}s: vehicles {a} and {b} occupy conflicting movements")]
    ConflictViolation { a: u32, b: u32, time: f64 },
    #[error("t={time:.1}s: vehicle {vehicle} crossed the entrance line without a grant ({overshoot:.4} m)")]
    EntranceViolation {
        vehicle: u32,
        overshoot: f64,
        time: f64,
    },
    #[error("t={time:.1}s: no entrance decision for waiting vehicle {vehicle}")]
    MissingDecision { vehicle: u32, time: f64 },
    #[error("t={time:.1}s: grant for vehicle {vehicle}, which is not waiting at the entrance")]
    InvalidGrant { vehicle: u32, time: f64 },
    #[error("t={time:.1}s: vehicle {vehicle} stood {waited:.1}s at the entrance")]
    Stalled { vehicle: u32, waited: f64, time: f64 },
    #[error("invalid time step {0}")]
    InvalidStep(f64),
}

/// Intelligent Driver Model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdmParams<T> {
    pub max_accel: T,
    pub comfortable_decel: T,
    /// Hard bound on braking; the model output is clamped to it.
    pub max_decel: T,
    pub min_gap: T,
    pub time_headway: T,
    pub exponent: i32,
    /// Capped by the intersection speed limit inside the simulator.
    pub desired_speed: T,
}

impl<T: Scalar> Default for IdmParams<T> {
    fn default() -> Self {
        Self {
            max_accel: T::lit(1.5),
            comfortable_decel: T::lit(2.0),
            max_decel: T::lit(9.0),
            min_gap: T::lit(2.0),
            time_headway: T::lit(1.5),
            exponent: 4,
            desired_speed: T::lit(crate::geometry::DEFAULT_SPEED_LIMIT),
        }
    }
}

impl<T: Scalar> IdmParams<T> {
    pub fn validate(&self) -> Result<(), String> {
        let positive = |x: T| x.is_finite() && x > T::zero();
        if !(positive(self.max_accel)
            && positive(self.comfortable_decel)
            && positive(self.max_decel)
            && positive(self.min_gap)
            && positive(self.time_headway)
            && positive(self.desired_speed))
        {
            return Err("car-following parameters must be positive".into());
        }
        if self.max_decel < self.comfortable_decel {
            return Err("max_decel must be at least comfortable_decel".into());
        }
        if self.exponent < 1 {
            return Err("acceleration exponent must be at least 1".into());
        }
        Ok(())
    }

    /// Desired dynamic gap `s*` at `speed` when closing on the leader at `approach_rate`.
    pub fn desired_gap(&self, speed: T, approach_rate: T) -> T {
        let two = T::lit(2.0);
        let dynamic = speed * self.time_headway
            + speed * approach_rate / (two * (self.max_accel * self.comfortable_decel).sqrt());
        self.min_gap + dynamic.max(T::zero())
    }
}

/// IDM acceleration of a follower at `speed` with bumper-to-bumper `gap` to a leader moving
/// at `leader_speed`. Pass `T::infinity()` as the gap on a free road. The result is clamped
/// to `[-max_decel, max_accel]`.
pub fn car_following_accel<T: Scalar>(
    speed: T,
    gap: T,
    leader_speed: T,
    params: &IdmParams<T>,
) -> Result<T, DynamicsError> {
    if gap < T::zero() || gap.is_nan() {
        return Err(DynamicsError::NegativeGap(gap.to_f64().unwrap_or(f64::NAN)));
    }
    let free = T::one() - (speed / params.desired_speed).powi(params.exponent);
    let interaction = if gap.is_infinite() {
        T::zero()
    } else {
        let ratio = params.desired_gap(speed, speed - leader_speed) / gap;
        ratio * ratio
    };
    let accel = params.max_accel * (free - interaction);
    // Zero gap gives -inf; NaN cannot occur since min_gap > 0.
    Ok(accel.max(-params.max_decel).min(params.max_accel))
}

/// Distance covered in one step under constant `accel`, stopping at zero speed. Returns
/// `(displacement, new_speed)`.
#[inline]
pub fn ballistic<T: Scalar>(speed: T, accel: T, dt: T) -> (T, T) {
    let half = T::lit(0.5);
    let next = speed + accel * dt;
    if next < T::zero() {
        let disp = if accel < T::zero() {
            -speed * speed / (T::lit(2.0) * accel)
        } else {
            T::zero()
        };
        (disp, T::zero())
    } else {
        (speed * dt + half * accel * dt * dt, next)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleClass {
    Human,
    Rv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Approaching,
    WaitingAtEntrance,
    InsideConflictZone,
    Clearing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: u32,
    pub class: VehicleClass,
    pub ring: usize,
    /// Front bumper, meters along the ring in `[0, circuit_length)`.
    pub route_position: f64,
    /// Completed laps; `lap * circuit_length + route_position` is monotone.
    pub lap: u64,
    pub speed: f64,
    pub accel: f64,
    pub length: f64,
    pub movement: MovementId,
    pub movement_index: usize,
    pub phase: Phase,
    /// Time the vehicle entered the entrance zone on its current lap.
    pub arrival_time: Option<f64>,
    /// Start of the current standstill.
    pub stopped_since: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    /// Smallest bumper-to-bumper gap after the step (infinite with no leaders).
    pub min_gap: f64,
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub time: f64,
    pub vehicles: Vec<VehicleState>,
    pub network: Arc<ClosedNetwork>,
    pub rng_seed: u64,
    pub idm: IdmParams<f64>,
    /// Vehicle indices per ring, ascending by initial position; the order never changes.
    ring_order: Vec<Vec<usize>>,
    /// Time the last vehicle of each movement left the conflict zone.
    last_clear: Vec<f64>,
    accel_buf: Vec<f64>,
    decision_buf: Vec<Option<Decision>>,
}

impl WorldState {
    /// Places the network's vehicles at rest with the given classes (indexed by vehicle id).
    pub fn new(
        network: Arc<ClosedNetwork>,
        classes: &[VehicleClass],
        idm: IdmParams<f64>,
        rng_seed: u64,
    ) -> Result<Self, String> {
        if classes.len() != network.vehicle_count() {
            return Err(format!(
                "{} classes for {} vehicles",
                classes.len(),
                network.vehicle_count()
            ));
        }
        idm.validate()?;
        let spec = &network.intersection;
        let mut vehicles = Vec::with_capacity(classes.len());
        let mut ring_order = vec![Vec::new(); network.rings.len()];
        for (id, (route, &class)) in network.routes.iter().zip(classes).enumerate() {
            let ring = &network.rings[route.ring];
            let movement_index = route.cycle[0];
            let pos = route.initial_position;
            let (phase, arrival_time) = if pos > ring.entrance_line {
                (Phase::Clearing, None)
            } else if pos >= ring.entrance_line - spec.entrance_zone_length {
                let behind = ring.entrance_line - pos;
                let arrived = (behind - spec.entrance_zone_length) / spec.speed_limit;
                (Phase::WaitingAtEntrance, Some(arrived))
            } else {
                (Phase::Approaching, None)
            };
            ring_order[route.ring].push(id);
            vehicles.push(VehicleState {
                id: id as u32,
                class,
                ring: route.ring,
                route_position: pos,
                lap: 0,
                speed: 0.0,
                accel: 0.0,
                length: network.params.vehicle_length,
                movement: spec.movements[movement_index],
                movement_index,
                phase,
                arrival_time,
                stopped_since: Some(0.0),
            });
        }
        for order in &mut ring_order {
            order.sort_by(|&a, &b| {
                vehicles[a]
                    .route_position
                    .total_cmp(&vehicles[b].route_position)
            });
        }
        let n = vehicles.len();
        Ok(Self {
            time: 0.0,
            vehicles,
            last_clear: vec![f64::NEG_INFINITY; spec.movement_count()],
            network,
            rng_seed,
            idm,
            ring_order,
            accel_buf: vec![0.0; n],
            decision_buf: vec![None; n],
        })
    }

    pub fn ring_order(&self, ring: usize) -> &[usize] {
        &self.ring_order[ring]
    }

    /// Time the last vehicle on `movement_index` cleared the conflict zone.
    pub fn last_clear_time(&self, movement_index: usize) -> f64 {
        self.last_clear[movement_index]
    }

    fn desired_speed(&self) -> f64 {
        self.idm.desired_speed.min(self.network.intersection.speed_limit)
    }

    /// Leader of the vehicle at `slot` in its ring's order, with the bumper-to-bumper gap.
    pub fn leader(&self, ring: usize, slot: usize) -> Option<(usize, f64)> {
        let order = &self.ring_order[ring];
        if order.len() < 2 {
            return None;
        }
        let wraps = slot + 1 == order.len();
        let leader = order[(slot + 1) % order.len()];
        let f = &self.vehicles[order[slot]];
        let l = &self.vehicles[leader];
        let c = self.network.rings[ring].circuit_length;
        let mut d = (l.lap as f64 - f.lap as f64) * c + l.route_position - f.route_position;
        if wraps {
            d += c;
        }
        Some((leader, d - l.length))
    }

    /// Advances the world by `dt`. `decisions` must cover every vehicle waiting at an
    /// entrance; `Go` moves the vehicle into the conflict zone.
    pub fn step(&mut self, dt: f64, decisions: &[Grant]) -> Result<StepReport, SimFault> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimFault::InvalidStep(dt));
        }
        let n = self.vehicles.len();
        let time = self.time;
        self.decision_buf.iter_mut().for_each(|d| *d = None);
        for g in decisions {
            let idx = g.vehicle as usize;
            if idx >= n {
                return Err(SimFault::InvalidGrant {
                    vehicle: g.vehicle,
                    time,
                });
            }
            self.decision_buf[idx] = Some(g.decision);
        }
        for (v, d) in self.vehicles.iter_mut().zip(&self.decision_buf) {
            match (v.phase, d) {
                (Phase::WaitingAtEntrance, None) => {
                    return Err(SimFault::MissingDecision { vehicle: v.id, time })
                }
                (Phase::WaitingAtEntrance, Some(Decision::Go)) => v.phase = Phase::InsideConflictZone,
                (_, Some(Decision::Go)) => return Err(SimFault::InvalidGrant { vehicle: v.id, time }),
                _ => {}
            }
        }
        self.check_exclusion()?;

        let spec = &self.network.intersection;
        let mut idm = self.idm;
        idm.desired_speed = self.desired_speed();
        for (r, order) in self.ring_order.iter().enumerate() {
            let line = self.network.rings[r].entrance_line;
            for slot in 0..order.len() {
                let vi = order[slot];
                let v = &self.vehicles[vi];
                let (gap, leader_speed) = match self.leader(r, slot) {
                    Some((l, gap)) => (gap, self.vehicles[l].speed),
                    None => (f64::INFINITY, 0.0),
                };
                let mut a = car_following_accel(v.speed, gap, leader_speed, &idm).map_err(|_| {
                    SimFault::NegativeGap {
                        follower: v.id,
                        leader: order[(slot + 1) % order.len()] as u32,
                        gap,
                        time,
                    }
                })?;
                if v.phase == Phase::WaitingAtEntrance {
                    a = a.min(stop_line_accel(v.speed, line - v.route_position, a, &idm, dt));
                }
                self.accel_buf[vi] = a;
            }
        }

        self.time += dt;
        let now = self.time;
        for (v, &a) in self.vehicles.iter_mut().zip(&self.accel_buf) {
            let ring = &self.network.rings[v.ring];
            let (disp, speed) = ballistic(v.speed, a, dt);
            v.accel = a;
            v.speed = speed;
            v.route_position += disp;
            if speed > 0.0 {
                v.stopped_since = None;
            } else if v.stopped_since.is_none() {
                v.stopped_since = Some(now);
            }
            if v.phase == Phase::WaitingAtEntrance && v.route_position > ring.entrance_line {
                let overshoot = v.route_position - ring.entrance_line;
                if overshoot > 1e-6 {
                    return Err(SimFault::EntranceViolation {
                        vehicle: v.id,
                        overshoot,
                        time: now,
                    });
                }
                v.route_position = ring.entrance_line;
                v.speed = 0.0;
                v.stopped_since.get_or_insert(now);
            }
            if v.phase == Phase::InsideConflictZone
                && v.route_position - ring.entrance_line >= spec.conflict_zone_path_length[v.movement_index]
            {
                v.phase = Phase::Clearing;
                self.last_clear[v.movement_index] = now;
            }
            if v.route_position >= ring.circuit_length {
                v.route_position -= ring.circuit_length;
                v.lap += 1;
                let cycle = &self.network.routes[v.id as usize].cycle;
                v.movement_index = cycle[(v.lap % cycle.len() as u64) as usize];
                v.movement = spec.movements[v.movement_index];
                v.phase = Phase::Approaching;
                v.arrival_time = None;
            }
            if v.phase == Phase::Approaching
                && v.route_position >= ring.entrance_line - spec.entrance_zone_length
            {
                v.phase = Phase::WaitingAtEntrance;
                v.arrival_time = Some(now);
            }
        }

        let mut min_gap = f64::INFINITY;
        for (r, order) in self.ring_order.iter().enumerate() {
            for slot in 0..order.len() {
                if let Some((leader, gap)) = self.leader(r, slot) {
                    if gap < 0.0 {
                        return Err(SimFault::NegativeGap {
                            follower: order[slot] as u32,
                            leader: leader as u32,
                            gap,
                            time: now,
                        });
                    }
                    min_gap = min_gap.min(gap);
                }
            }
        }
        Ok(StepReport { min_gap })
    }

    /// Fails if two vehicles inside the conflict zone hold conflicting movements.
    pub fn check_exclusion(&self) -> Result<(), SimFault> {
        let spec = &self.network.intersection;
        let inside: Vec<&VehicleState> = self
            .vehicles
            .iter()
            .filter(|v| v.phase == Phase::InsideConflictZone)
            .collect();
        for (i, a) in inside.iter().enumerate() {
            for b in &inside[..i] {
                if spec.conflicts_idx(a.movement_index, b.movement_index) {
                    return Err(SimFault::ConflictViolation {
                        a: b.id,
                        b: a.id,
                        time: self.time,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Braking needed to stop at the entrance line `dist` ahead. Returns `+inf` while the car
/// can keep following without braking: one more step at `proposed` stays behind the line
/// and leaves a stop within comfortable deceleration. Otherwise returns the constant
/// deceleration that ends exactly on the line.
fn stop_line_accel(speed: f64, dist: f64, proposed: f64, idm: &IdmParams<f64>, dt: f64) -> f64 {
    if dist <= 1e-9 {
        return if speed > 0.0 { -idm.max_decel } else { 0.0 };
    }
    let (disp, next_speed) = ballistic(speed, proposed, dt);
    if disp < dist && next_speed * next_speed / (2.0 * (dist - disp)) <= idm.comfortable_decel {
        return f64::INFINITY;
    }
    -(speed * speed / (2.0 * dist)).min(idm.max_decel)
}
