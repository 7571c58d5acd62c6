//! Shared oracles for the integration and acceptance tests.
#![allow(dead_code)]

use mixfd::coordination::{Claim, Decision, Proposal};
use mixfd::geometry::{build_intersection, IntersectionKind, IntersectionSpec, MovementId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Vehicles granted go: among every go-subset that is conflict-free with itself and the
/// occupancy, the one whose membership vector read in priority order is lexicographically
/// largest.
pub fn brute_force_grants(
    proposals: &[Proposal],
    spec: &IntersectionSpec,
    occupancy: &[MovementId],
) -> Vec<u32> {
    let mut order: Vec<&Proposal> = proposals.iter().collect();
    order.sort_by(|a, b| {
        a.claim
            .arrival_time
            .total_cmp(&b.claim.arrival_time)
            .then(a.claim.vehicle.cmp(&b.claim.vehicle))
    });
    let n = order.len();
    let c = |a: MovementId, b: MovementId| spec.conflicting(a, b).unwrap();
    let mut best: Option<Vec<bool>> = None;
    for mask in 0u32..(1 << n) {
        let chosen: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
        let feasible = (0..n).all(|i| {
            !chosen[i]
                || (order[i].decision == Decision::Go
                    && !occupancy.iter().any(|&o| c(order[i].claim.movement, o))
                    && (0..n).all(|j| j == i || !chosen[j] || !c(order[i].claim.movement, order[j].claim.movement)))
        });
        if feasible && best.as_ref().map(|b| chosen > *b).unwrap_or(true) {
            best = Some(chosen);
        }
    }
    let best = best.unwrap_or_default();
    let mut out: Vec<u32> = (0..n).filter(|&i| best[i]).map(|i| order[i].claim.vehicle).collect();
    out.sort_unstable();
    out
}

/// A random claim set of at most 8 claims on a random archetype.
pub fn random_case(rng: &mut ChaCha8Rng) -> (IntersectionSpec, Vec<Proposal>, Vec<MovementId>) {
    let kind = IntersectionKind::ALL[rng.random_range(0..4)];
    let spec = build_intersection(kind);
    let n = rng.random_range(0..=8);
    let mut proposals = Vec::with_capacity(n);
    for v in 0..n {
        let m = spec.movements[rng.random_range(0..spec.movement_count())];
        // Coarse arrival times so ties on arrival are common.
        let arrival_time = rng.random_range(0..4) as f64 * 0.5;
        let decision = if rng.random_bool(0.8) { Decision::Go } else { Decision::Stop };
        proposals.push(Proposal {
            claim: Claim {
                vehicle: rng.random_range(0..1000) * 8 + v as u32,
                movement: m,
                arrival_time,
            },
            decision,
        });
    }
    let occupied = rng.random_range(0..=2);
    let occupancy = (0..occupied)
        .map(|_| spec.movements[rng.random_range(0..spec.movement_count())])
        .collect();
    (spec, proposals, occupancy)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
