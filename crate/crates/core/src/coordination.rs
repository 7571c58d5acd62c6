//! Entrance control at the unsignalized intersection.
//!
//! Each lane's foremost waiting vehicle raises a claim. Claims are ordered first-come
//! first-served by `(arrival_time, vehicle id)`, one queue for humans and RVs alike. RVs
//! propose stop/go with [`rv_policy`] and the proposals pass through
//! [`failsafe_arbitrate`], which only ever grants a conflict-free set. Humans decide with
//! [`human_right_of_way`]; they additionally treat a movement as busy for a short clearance
//! headway after its last vehicle left the box.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Phase, SimFault, VehicleClass, WorldState};
use crate::geometry::{IntersectionSpec, MovementId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Go,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grant {
    pub vehicle: u32,
    pub decision: Decision,
    pub issue_time: f64,
}

impl Grant {
    pub fn go(vehicle: u32, issue_time: f64) -> Self {
        Self {
            vehicle,
            decision: Decision::Go,
            issue_time,
        }
    }

    pub fn stop(vehicle: u32, issue_time: f64) -> Self {
        Self {
            vehicle,
            decision: Decision::Stop,
            issue_time,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Claim {
    pub vehicle: u32,
    pub movement: MovementId,
    pub arrival_time: f64,
}

impl Claim {
    /// First-come first-served priority, ties broken by ascending vehicle id.
    pub fn priority_cmp(&self, other: &Claim) -> Ordering {
        self.arrival_time
            .total_cmp(&other.arrival_time)
            .then(self.vehicle.cmp(&other.vehicle))
    }

    pub fn precedes(&self, other: &Claim) -> bool {
        self.priority_cmp(other) == Ordering::Less
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntranceObservation {
    /// The observing vehicle's own claim.
    pub claim: Claim,
    pub class: VehicleClass,
    pub wait_time: f64,
    /// Movements of vehicles currently inside the conflict zone.
    pub occupancy: Vec<MovementId>,
    /// Movements whose last vehicle left the zone less than the human clearance headway ago.
    pub recently_cleared: Vec<MovementId>,
    /// Claims raised at all entrances this step, possibly including the observer's own.
    pub queued_claims: Vec<Claim>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub claim: Claim,
    pub decision: Decision,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoordinationParams {
    /// Seconds a human keeps treating a movement as occupied after it empties.
    pub human_clearance_gap: f64,
    /// A waiting vehicle standing still longer than this raises a liveness fault.
    pub wait_timeout: f64,
}

impl Default for CoordinationParams {
    fn default() -> Self {
        Self {
            human_clearance_gap: 1.5,
            wait_timeout: 300.0,
        }
    }
}

impl CoordinationParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.human_clearance_gap >= 0.0 && self.human_clearance_gap.is_finite()) {
            return Err("human_clearance_gap must be a non-negative number".into());
        }
        if !(self.wait_timeout > 0.0) {
            return Err("wait_timeout must be positive".into());
        }
        Ok(())
    }
}

fn conflicts(spec: &IntersectionSpec, a: MovementId, b: MovementId) -> bool {
    // Observations are built from the spec's own movements; unknown ones never conflict.
    spec.conflicting(a, b).unwrap_or(false)
}

/// Go iff nothing in `busy` conflicts and no earlier claim on a conflicting movement waits.
fn fcfs_decision(obs: &EntranceObservation, spec: &IntersectionSpec, busy: &[&[MovementId]]) -> Decision {
    let own = obs.claim.movement;
    let blocked = busy
        .iter()
        .flat_map(|set| set.iter())
        .any(|&m| conflicts(spec, own, m));
    let preceded = obs
        .queued_claims
        .iter()
        .any(|c| c.precedes(&obs.claim) && conflicts(spec, own, c.movement));
    if blocked || preceded {
        Decision::Stop
    } else {
        Decision::Go
    }
}

/// Rule-based stand-in for a learned RV stop/go policy.
pub fn rv_policy(obs: &EntranceObservation, spec: &IntersectionSpec) -> Decision {
    fcfs_decision(obs, spec, &[&obs.occupancy])
}

/// Human first-come first-served gap acceptance.
pub fn human_right_of_way(obs: &EntranceObservation, spec: &IntersectionSpec) -> Decision {
    fcfs_decision(obs, spec, &[&obs.occupancy, &obs.recently_cleared])
}

/// Fail-safe arbiter over RV proposals. Go proposals are taken in priority order and granted
/// when they conflict neither with `occupancy` nor with an earlier grant; stop proposals stay
/// stops. The result lists one grant per proposal, in priority order.
pub fn failsafe_arbitrate(
    proposals: &[Proposal],
    spec: &IntersectionSpec,
    occupancy: &[MovementId],
    issue_time: f64,
) -> Vec<Grant> {
    let mut ordered: Vec<&Proposal> = proposals.iter().collect();
    ordered.sort_by(|a, b| a.claim.priority_cmp(&b.claim));
    let mut granted: Vec<MovementId> = Vec::new();
    let mut out = Vec::with_capacity(proposals.len());
    for p in ordered {
        let m = p.claim.movement;
        let go = p.decision == Decision::Go
            && !occupancy.iter().any(|&o| conflicts(spec, m, o))
            && !granted.iter().any(|&g| conflicts(spec, m, g));
        if go {
            granted.push(m);
            out.push(Grant::go(p.claim.vehicle, issue_time));
        } else {
            out.push(Grant::stop(p.claim.vehicle, issue_time));
        }
    }
    out
}

/// Builds this step's entrance decisions: one grant for every waiting vehicle.
///
/// Only the foremost waiting vehicle of a lane may claim; everything else waiting gets
/// `Stop`. Fails with [`SimFault::Stalled`] when a waiting vehicle has stood still beyond the
/// timeout.
pub fn entrance_decisions(world: &WorldState, params: &CoordinationParams) -> Result<Vec<Grant>, SimFault> {
    let net = &world.network;
    let spec = &net.intersection;
    let now = world.time;
    let mut grants = Vec::new();

    let mut claims: Vec<(Claim, VehicleClass, f64)> = Vec::new();
    for r in 0..net.rings.len() {
        let order = world.ring_order(r);
        let mut head: Option<usize> = None;
        for (slot, &vi) in order.iter().enumerate() {
            let v = &world.vehicles[vi];
            if v.phase != Phase::WaitingAtEntrance {
                continue;
            }
            if let Some(since) = v.stopped_since {
                if now - since > params.wait_timeout {
                    return Err(SimFault::Stalled {
                        vehicle: v.id,
                        waited: now - since,
                        time: now,
                    });
                }
            }
            match head {
                Some(h) if world.vehicles[order[h]].route_position >= v.route_position => {
                    grants.push(Grant::stop(v.id, now))
                }
                Some(h) => {
                    grants.push(Grant::stop(world.vehicles[order[h]].id, now));
                    head = Some(slot);
                }
                None => head = Some(slot),
            }
        }
        let Some(slot) = head else { continue };
        let v = &world.vehicles[order[slot]];
        let claim = Claim {
            vehicle: v.id,
            movement: v.movement,
            arrival_time: v.arrival_time.unwrap_or(now),
        };
        claims.push((claim, v.class, now - claim.arrival_time));
    }
    if claims.is_empty() {
        return Ok(grants);
    }

    let mut occupancy: Vec<MovementId> = world
        .vehicles
        .iter()
        .filter(|v| v.phase == Phase::InsideConflictZone)
        .map(|v| v.movement)
        .collect();
    let recently_cleared: Vec<MovementId> = (0..spec.movement_count())
        .filter(|&m| now - world.last_clear_time(m) < params.human_clearance_gap)
        .map(|m| spec.movements[m])
        .collect();
    let queued: Vec<Claim> = claims.iter().map(|c| c.0).collect();

    let observe = |claim: Claim, class, wait_time, occupancy: &[MovementId]| EntranceObservation {
        claim,
        class,
        wait_time,
        occupancy: occupancy.to_vec(),
        recently_cleared: recently_cleared.clone(),
        queued_claims: queued.clone(),
    };

    let mut human_go = Vec::new();
    for &(claim, class, wait) in &claims {
        if class != VehicleClass::Human {
            continue;
        }
        let decision = human_right_of_way(&observe(claim, class, wait, &occupancy), spec);
        if decision == Decision::Go {
            human_go.push(claim.movement);
        }
        grants.push(Grant {
            vehicle: claim.vehicle,
            decision,
            issue_time: now,
        });
    }

    let proposals: Vec<Proposal> = claims
        .iter()
        .filter(|c| c.1 == VehicleClass::Rv)
        .map(|&(claim, class, wait)| Proposal {
            claim,
            decision: rv_policy(&observe(claim, class, wait, &occupancy), spec),
        })
        .collect();
    if !proposals.is_empty() {
        occupancy.extend(human_go);
        grants.extend(failsafe_arbitrate(&proposals, spec, &occupancy, now));
    }
    Ok(grants)
}
