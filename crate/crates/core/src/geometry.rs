//! Intersection topology, movement conflicts and the closed circuits that hold density fixed.
//!
//! Approaches are placed on compass legs numbered counter-clockwise (south, east, north,
//! west) and traffic keeps right. A movement is an `(approach, turn)` pair. Two movements
//! conflict when their paths through the box cross or when they merge into the same exit
//! lane; movements from the same approach diverge and never conflict.
//!
//! Every approach lane is closed into its own single-lane ring: approach segment, entrance
//! line, the movement's path through the conflict zone, then a return link back to the
//! start of the approach. Ring coordinates run from `0` (start of the approach) to the
//! circuit length; the entrance line sits at the approach length.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("movement {0} does not belong to intersection {1}")]
    UnknownMovement(MovementId, String),
    #[error("vehicle count {requested} exceeds the jam capacity {jam_capacity} of the circuit")]
    OverCapacity { requested: usize, jam_capacity: usize },
    #[error("invalid geometry: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Turn {
    Through,
    Left,
    Right,
}

impl Turn {
    fn slot(self) -> usize {
        match self {
            Turn::Through => 0,
            Turn::Left => 1,
            Turn::Right => 2,
        }
    }

    /// Compass leg reached when turning from `leg`.
    fn exit_leg(self, leg: u8) -> u8 {
        match self {
            Turn::Right => (leg + 1) % 4,
            Turn::Through => (leg + 2) % 4,
            Turn::Left => (leg + 3) % 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MovementId {
    pub approach: u8,
    pub turn: Turn,
}

impl MovementId {
    pub const fn new(approach: u8, turn: Turn) -> Self {
        Self { approach, turn }
    }
}

impl fmt::Display for MovementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}@{}", self.turn, self.approach)
    }
}

/// The four synthetic intersection archetypes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IntersectionKind {
    #[serde(rename = "fourway_1lane")]
    FourwayOneLane,
    #[serde(rename = "fourway_2lane")]
    FourwayTwoLane,
    #[serde(rename = "tjunction")]
    TJunction,
    #[serde(rename = "fourway_asym")]
    FourwayAsym,
}

impl IntersectionKind {
    pub const ALL: [IntersectionKind; 4] = [
        IntersectionKind::FourwayOneLane,
        IntersectionKind::FourwayTwoLane,
        IntersectionKind::TJunction,
        IntersectionKind::FourwayAsym,
    ];

    /// Identifier used in output files.
    pub fn label(self) -> &'static str {
        match self {
            IntersectionKind::FourwayOneLane => "229",
            IntersectionKind::FourwayTwoLane => "332",
            IntersectionKind::TJunction => "334",
            IntersectionKind::FourwayAsym => "499",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IntersectionKind::FourwayOneLane => "fourway_1lane",
            IntersectionKind::FourwayTwoLane => "fourway_2lane",
            IntersectionKind::TJunction => "tjunction",
            IntersectionKind::FourwayAsym => "fourway_asym",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.label() == label)
    }
}

impl fmt::Display for IntersectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Overrides applied on top of an archetype's defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryOverrides {
    /// Base approach length; the asymmetric archetype scales it per approach.
    pub approach_length: Option<f64>,
    pub entrance_zone_length: Option<f64>,
    pub speed_limit: Option<f64>,
}

pub const DEFAULT_APPROACH_LENGTH: f64 = 200.0;
pub const DEFAULT_ENTRANCE_ZONE_LENGTH: f64 = 30.0;
/// 50 km/h.
pub const DEFAULT_SPEED_LIMIT: f64 = 13.89;

#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionSpec {
    pub id: String,
    pub kind: IntersectionKind,
    /// Compass leg of each approach.
    pub legs: Vec<u8>,
    pub lanes_per_approach: Vec<usize>,
    pub movements: Vec<MovementId>,
    /// Approach lane used by each movement.
    pub movement_lane: Vec<usize>,
    /// Exit lane reached by each movement; merges only conflict within one exit lane.
    pub movement_exit_lane: Vec<usize>,
    /// Row-major `movements.len()` square matrix.
    pub conflict: Vec<bool>,
    pub entrance_zone_length: f64,
    /// Path length through the conflict zone, per movement.
    pub conflict_zone_path_length: Vec<f64>,
    /// Length of each approach segment, up to the entrance line.
    pub approach_length: Vec<f64>,
    pub speed_limit: f64,
    /// Movement index by `[approach][turn]`.
    pub lookup: Vec<[Option<usize>; 3]>,
}

struct Archetype {
    legs: &'static [u8],
    two_lane: bool,
    /// (right, through, left) conflict-zone path lengths per approach.
    paths: &'static [(f64, f64, f64)],
    /// Approach length as a multiple of the base length.
    length_factor: &'static [f64],
}

fn archetype(kind: IntersectionKind) -> Archetype {
    match kind {
        IntersectionKind::FourwayOneLane => Archetype {
            legs: &[0, 1, 2, 3],
            two_lane: false,
            paths: &[(9.0, 20.0, 26.0); 4],
            length_factor: &[1.0; 4],
        },
        IntersectionKind::FourwayTwoLane => Archetype {
            legs: &[0, 1, 2, 3],
            two_lane: true,
            paths: &[(11.0, 30.0, 36.0); 4],
            length_factor: &[1.0; 4],
        },
        IntersectionKind::TJunction => Archetype {
            legs: &[0, 1, 3],
            two_lane: false,
            paths: &[(9.0, 20.0, 26.0); 3],
            length_factor: &[1.0; 3],
        },
        // North-south approaches cross a wide east-west road; east-west ones a narrow one.
        IntersectionKind::FourwayAsym => Archetype {
            legs: &[0, 1, 2, 3],
            two_lane: false,
            paths: &[(9.0, 26.0, 30.0), (8.0, 16.0, 22.0), (9.0, 26.0, 30.0), (8.0, 16.0, 22.0)],
            length_factor: &[1.0, 0.6, 1.3, 0.4],
        },
    }
}

pub fn build_intersection(kind: IntersectionKind) -> IntersectionSpec {
    build_intersection_with(kind, &GeometryOverrides::default())
        .expect("archetype defaults are valid")
}

pub fn build_intersection_with(
    kind: IntersectionKind,
    overrides: &GeometryOverrides,
) -> Result<IntersectionSpec, GeometryError> {
    let arch = archetype(kind);
    let base = overrides.approach_length.unwrap_or(DEFAULT_APPROACH_LENGTH);
    let present: Vec<u8> = arch.legs.to_vec();

    let mut movements = Vec::new();
    let mut movement_lane = Vec::new();
    let mut movement_exit_lane = Vec::new();
    let mut paths = Vec::new();
    for (approach, &leg) in present.iter().enumerate() {
        for turn in [Turn::Through, Turn::Left, Turn::Right] {
            if !present.contains(&turn.exit_leg(leg)) {
                continue;
            }
            let lane = match (arch.two_lane, turn) {
                (true, Turn::Through | Turn::Right) => 1,
                _ => 0,
            };
            let (right, through, left) = arch.paths[approach];
            movements.push(MovementId::new(approach as u8, turn));
            movement_lane.push(lane);
            movement_exit_lane.push(lane);
            paths.push(match turn {
                Turn::Right => right,
                Turn::Through => through,
                Turn::Left => left,
            });
        }
    }

    let n = movements.len();
    let mut conflict = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            conflict[i * n + j] = paths_conflict(
                &present,
                arch.two_lane,
                (movements[i], movement_exit_lane[i]),
                (movements[j], movement_exit_lane[j]),
            );
        }
    }

    let lookup = movement_lookup(arch.legs.len(), &movements);
    let spec = IntersectionSpec {
        id: kind.label().to_string(),
        kind,
        legs: present,
        lanes_per_approach: vec![if arch.two_lane { 2 } else { 1 }; arch.legs.len()],
        movements,
        movement_lane,
        movement_exit_lane,
        conflict,
        entrance_zone_length: overrides
            .entrance_zone_length
            .unwrap_or(DEFAULT_ENTRANCE_ZONE_LENGTH),
        conflict_zone_path_length: paths,
        approach_length: arch.length_factor.iter().map(|f| f * base).collect(),
        speed_limit: overrides.speed_limit.unwrap_or(DEFAULT_SPEED_LIMIT),
        lookup,
    };
    spec.validate()?;
    Ok(spec)
}

fn movement_lookup(approaches: usize, movements: &[MovementId]) -> Vec<[Option<usize>; 3]> {
    let mut lookup = vec![[None; 3]; approaches];
    for (i, m) in movements.iter().enumerate() {
        if let Some(row) = lookup.get_mut(m.approach as usize) {
            row[m.turn.slot()] = Some(i);
        }
    }
    lookup
}

/// Boundary points of the box, counter-clockwise from the south leg: each leg contributes
/// its outbound lane then its inbound lane.
fn inbound_point(leg: u8) -> u8 {
    2 * leg + 1
}

fn outbound_point(leg: u8) -> u8 {
    2 * leg
}

fn chords_cross(a: (u8, u8), b: (u8, u8)) -> bool {
    let (lo, hi) = if a.0 < a.1 { (a.0, a.1) } else { (a.1, a.0) };
    let inside = |p: u8| lo < p && p < hi;
    inside(b.0) != inside(b.1)
}

fn paths_conflict(legs: &[u8], two_lane: bool, a: (MovementId, usize), b: (MovementId, usize)) -> bool {
    let (ma, exit_lane_a) = a;
    let (mb, exit_lane_b) = b;
    if ma.approach == mb.approach {
        return false;
    }
    let leg_a = legs[ma.approach as usize];
    let leg_b = legs[mb.approach as usize];
    let exit_a = ma.turn.exit_leg(leg_a);
    let exit_b = mb.turn.exit_leg(leg_b);
    if exit_a == exit_b {
        return exit_lane_a == exit_lane_b;
    }
    // Opposing left turns from shared lanes both sweep through the centre of the box.
    if !two_lane
        && ma.turn == Turn::Left && mb.turn == Turn::Left && (leg_a + 2) % 4 == leg_b {
        return true;
    }
    chords_cross(
        (inbound_point(leg_a), outbound_point(exit_a)),
        (inbound_point(leg_b), outbound_point(exit_b)),
    )
}

impl IntersectionSpec {
    pub fn approaches(&self) -> usize {
        self.legs.len()
    }

    pub fn movement_count(&self) -> usize {
        self.movements.len()
    }

    pub fn index_of(&self, m: MovementId) -> Result<usize, GeometryError> {
        self.lookup
            .get(m.approach as usize)
            .and_then(|row| row[m.turn.slot()])
            .ok_or_else(|| GeometryError::UnknownMovement(m, self.id.clone()))
    }

    /// Conflict lookup by movement index. Panics on out-of-range indices.
    #[inline]
    pub fn conflicts_idx(&self, i: usize, j: usize) -> bool {
        self.conflict[i * self.movements.len() + j]
    }

    pub fn conflicting(&self, m1: MovementId, m2: MovementId) -> Result<bool, GeometryError> {
        Ok(self.conflicts_idx(self.index_of(m1)?, self.index_of(m2)?))
    }

    /// Movement indices using `lane` of `approach`, in declaration order.
    pub fn lane_movements(&self, approach: usize, lane: usize) -> Vec<usize> {
        (0..self.movements.len())
            .filter(|&i| {
                self.movements[i].approach as usize == approach && self.movement_lane[i] == lane
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let invalid = |msg: String| Err(GeometryError::Invalid(msg));
        let n = self.movements.len();
        let a = self.approaches();
        if !(3..=4).contains(&a) {
            return invalid(format!("{a} approaches (expected 3 or 4)"));
        }
        if self.conflict.len() != n * n
            || self.movement_lane.len() != n
            || self.movement_exit_lane.len() != n
            || self.conflict_zone_path_length.len() != n
        {
            return invalid("per-movement tables have inconsistent sizes".into());
        }
        if self.lookup != movement_lookup(a, &self.movements) {
            return invalid("movement lookup table is stale".into());
        }
        if self.lanes_per_approach.len() != a || self.approach_length.len() != a {
            return invalid("per-approach tables have inconsistent sizes".into());
        }
        for (i, m) in self.movements.iter().enumerate() {
            if m.approach as usize >= a {
                return invalid(format!("movement {m} names a missing approach"));
            }
            if self.movement_lane[i] >= self.lanes_per_approach[m.approach as usize] {
                return invalid(format!("movement {m} uses a missing lane"));
            }
        }
        for i in 0..n {
            if self.conflicts_idx(i, i) {
                return invalid(format!("movement {} conflicts with itself", self.movements[i]));
            }
            for j in 0..i {
                if self.conflicts_idx(i, j) != self.conflicts_idx(j, i) {
                    return invalid("conflict matrix is not symmetric".into());
                }
            }
        }
        if a == 4 {
            for (i, m) in self.movements.iter().enumerate() {
                if m.turn != Turn::Left {
                    continue;
                }
                let opposing = MovementId::new((m.approach + 2) % 4, Turn::Through);
                let j = self.index_of(opposing)?;
                if !self.conflicts_idx(i, j) {
                    return invalid(format!("left turn {m} does not conflict with {opposing}"));
                }
            }
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.entrance_zone_length) || !positive(self.speed_limit) {
            return invalid("entrance zone length and speed limit must be positive".into());
        }
        if !self.conflict_zone_path_length.iter().all(|&x| positive(x)) {
            return invalid("conflict zone path lengths must be positive".into());
        }
        for &len in &self.approach_length {
            if !positive(len) {
                return invalid("approach lengths must be positive".into());
            }
            if self.entrance_zone_length > len {
                return invalid(format!(
                    "entrance zone ({} m) longer than approach ({len} m)",
                    self.entrance_zone_length
                ));
            }
        }
        Ok(())
    }
}

/// Parameters of the closed circuit built around an intersection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkParams {
    /// Length of every lane ring, meters.
    pub circuit_length: f64,
    pub vehicle_length: f64,
    /// Bumper-to-bumper gap of a standing queue.
    pub min_gap: f64,
}

impl Default for NetworkParams {
    fn default() -> Self {
        Self {
            circuit_length: 1000.0,
            vehicle_length: 5.0,
            min_gap: 2.0,
        }
    }
}

impl NetworkParams {
    pub fn jam_spacing(&self) -> f64 {
        self.vehicle_length + self.min_gap
    }
}

/// One approach lane closed into a ring.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneRing {
    pub approach: usize,
    pub lane: usize,
    pub movements: Vec<usize>,
    /// Ring coordinate of the entrance line.
    pub entrance_line: f64,
    /// Box footprint behind the entrance line: longest path plus one vehicle length.
    /// Vehicles are never placed there.
    pub zone_span: f64,
    pub circuit_length: f64,
    pub jam_capacity: usize,
}

impl LaneRing {
    pub fn storage_length(&self) -> f64 {
        self.circuit_length - self.zone_span
    }
}

/// A vehicle's route: the ring it circulates on and the cycle of movements it takes, one
/// per lap.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleRoute {
    pub ring: usize,
    pub cycle: Vec<usize>,
    pub initial_position: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedNetwork {
    pub intersection: IntersectionSpec,
    pub params: NetworkParams,
    pub rings: Vec<LaneRing>,
    /// Indexed by vehicle id.
    pub routes: Vec<VehicleRoute>,
}

impl ClosedNetwork {
    pub fn vehicle_count(&self) -> usize {
        self.routes.len()
    }

    pub fn jam_capacity(&self) -> usize {
        self.rings.iter().map(|r| r.jam_capacity).sum()
    }

    pub fn total_length(&self) -> f64 {
        self.rings.iter().map(|r| r.circuit_length).sum()
    }
}

fn lane_rings(spec: &IntersectionSpec, params: &NetworkParams) -> Result<Vec<LaneRing>, GeometryError> {
    let spacing = params.jam_spacing();
    if !(params.vehicle_length > 0.0 && params.min_gap > 0.0) {
        return Err(GeometryError::Invalid(
            "vehicle length and minimum gap must be positive".into(),
        ));
    }
    let mut rings = Vec::new();
    for approach in 0..spec.approaches() {
        for lane in 0..spec.lanes_per_approach[approach] {
            let movements = spec.lane_movements(approach, lane);
            if movements.is_empty() {
                continue;
            }
            let longest = movements
                .iter()
                .map(|&m| spec.conflict_zone_path_length[m])
                .fold(0.0, f64::max);
            let zone_span = longest + params.vehicle_length;
            let entrance_line = spec.approach_length[approach];
            if params.circuit_length < entrance_line + zone_span + spacing {
                return Err(GeometryError::Invalid(format!(
                    "circuit length {} too short for approach {approach} ({} m approach, {} m box)",
                    params.circuit_length, entrance_line, zone_span
                )));
            }
            // Small tolerance so an exact multiple of the jam spacing is not lost to rounding.
            let jam_capacity = (params.circuit_length / spacing + 1e-9).floor() as usize;
            if (params.circuit_length - zone_span) / jam_capacity as f64 <= params.vehicle_length {
                return Err(GeometryError::Invalid(format!(
                    "circuit length {} cannot hold {jam_capacity} vehicles outside the {zone_span} m box",
                    params.circuit_length
                )));
            }
            rings.push(LaneRing {
                approach,
                lane,
                movements,
                entrance_line,
                zone_span,
                circuit_length: params.circuit_length,
                jam_capacity,
            });
        }
    }
    Ok(rings)
}

/// Jam capacity of the circuit built around `spec`.
pub fn jam_capacity(spec: &IntersectionSpec, params: &NetworkParams) -> Result<usize, GeometryError> {
    Ok(lane_rings(spec, params)?.iter().map(|r| r.jam_capacity).sum())
}

pub fn build_closed_network(
    spec: &IntersectionSpec,
    vehicle_count: usize,
) -> Result<ClosedNetwork, GeometryError> {
    build_closed_network_with(spec, vehicle_count, &NetworkParams::default(), 0)
}

/// Builds the circuit and places `vehicle_count` vehicles on it. Vehicles are dealt to
/// rings round-robin, spread evenly over each ring's storage length with the foremost one
/// on the entrance line. `seed` only selects where in its lane's turning pattern each
/// vehicle's route cycle starts.
pub fn build_closed_network_with(
    spec: &IntersectionSpec,
    vehicle_count: usize,
    params: &NetworkParams,
    seed: u64,
) -> Result<ClosedNetwork, GeometryError> {
    spec.validate()?;
    let rings = lane_rings(spec, params)?;
    let jam: usize = rings.iter().map(|r| r.jam_capacity).sum();
    if vehicle_count > jam {
        return Err(GeometryError::OverCapacity {
            requested: vehicle_count,
            jam_capacity: jam,
        });
    }

    let mut per_ring = vec![0usize; rings.len()];
    let mut next = 0;
    for _ in 0..vehicle_count {
        while per_ring[next] == rings[next].jam_capacity {
            next = (next + 1) % rings.len();
        }
        per_ring[next] += 1;
        next = (next + 1) % rings.len();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut routes = Vec::with_capacity(vehicle_count);
    for (r, ring) in rings.iter().enumerate() {
        let count = per_ring[r];
        if count == 0 {
            continue;
        }
        let pattern = turning_pattern(spec, &ring.movements);
        let spacing = (ring.storage_length() / count as f64).min(params.jam_spacing());
        let mut positions: Vec<f64> = (0..count)
            .map(|i| (ring.entrance_line - i as f64 * spacing).rem_euclid(ring.circuit_length))
            .collect();
        positions.sort_by(f64::total_cmp);
        for position in positions {
            let offset = rng.random_range(0..pattern.len());
            let mut cycle = pattern.clone();
            cycle.rotate_left(offset);
            routes.push(VehicleRoute {
                ring: r,
                cycle,
                initial_position: position,
            });
        }
    }

    Ok(ClosedNetwork {
        intersection: spec.clone(),
        params: *params,
        rings,
        routes,
    })
}

/// Lane turning mix: through movements carry twice the share of turns.
fn turning_pattern(spec: &IntersectionSpec, lane_movements: &[usize]) -> Vec<usize> {
    let find = |turn: Turn| {
        lane_movements
            .iter()
            .copied()
            .find(|&m| spec.movements[m].turn == turn)
    };
    [Turn::Through, Turn::Left, Turn::Through, Turn::Right]
        .into_iter()
        .filter_map(find)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(approach: u8, turn: Turn) -> MovementId {
        MovementId::new(approach, turn)
    }

    #[test]
    fn archetype_movement_counts() {
        let four = build_intersection(IntersectionKind::FourwayOneLane);
        assert_eq!(four.approaches(), 4);
        assert_eq!(four.movement_count(), 12);
        let t = build_intersection(IntersectionKind::TJunction);
        assert_eq!(t.approaches(), 3);
        assert_eq!(t.movement_count(), 6);
        // Nothing heads for the missing north leg.
        assert!(t.index_of(m(0, Turn::Through)).is_err());
        assert_eq!(build_intersection(IntersectionKind::FourwayTwoLane).movement_count(), 12);
        assert_eq!(build_intersection(IntersectionKind::FourwayAsym).movement_count(), 12);
    }

    #[test]
    fn fourway_basic_conflicts() {
        let s = build_intersection(IntersectionKind::FourwayOneLane);
        assert!(s.conflicting(m(0, Turn::Through), m(1, Turn::Through)).unwrap());
        assert!(!s.conflicting(m(0, Turn::Through), m(2, Turn::Through)).unwrap());
        assert!(s.conflicting(m(0, Turn::Left), m(2, Turn::Through)).unwrap());
        for &x in &s.movements {
            assert!(!s.conflicting(x, x).unwrap());
        }
    }

    #[test]
    fn unknown_movement_is_an_error() {
        let t = build_intersection(IntersectionKind::TJunction);
        let err = t.conflicting(m(0, Turn::Through), m(1, Turn::Left)).unwrap_err();
        assert!(matches!(err, GeometryError::UnknownMovement(..)));
        assert!(t.conflicting(m(7, Turn::Left), m(1, Turn::Left)).is_err());
    }

    #[test]
    fn symmetric_with_false_diagonal_for_every_archetype() {
        for kind in IntersectionKind::ALL {
            let s = build_intersection(kind);
            for &a in &s.movements {
                for &b in &s.movements {
                    assert_eq!(s.conflicting(a, b).unwrap(), s.conflicting(b, a).unwrap());
                }
                assert!(!s.conflicting(a, a).unwrap());
            }
        }
    }

    #[test]
    fn empty_network_is_valid() {
        let s = build_intersection(IntersectionKind::FourwayOneLane);
        let net = build_closed_network(&s, 0).unwrap();
        assert_eq!(net.vehicle_count(), 0);
        assert_eq!(net.rings.len(), 4);
    }

    #[test]
    fn jam_capacity_boundary() {
        for kind in IntersectionKind::ALL {
            let s = build_intersection(kind);
            let params = NetworkParams::default();
            let jam = jam_capacity(&s, &params).unwrap();
            let net = build_closed_network(&s, jam).unwrap();
            assert_eq!(net.vehicle_count(), jam);
            // Full rings: packed at or below the minimum gap, slack only around the box.
            for (r, ring) in net.rings.iter().enumerate() {
                let pos: Vec<f64> = net
                    .routes
                    .iter()
                    .filter(|v| v.ring == r)
                    .map(|v| v.initial_position)
                    .collect();
                assert_eq!(pos.len(), ring.jam_capacity);
                let mut wide = 0;
                for w in pos.windows(2) {
                    let gap = w[1] - w[0] - params.vehicle_length;
                    assert!(gap > 0.0);
                    if gap > params.min_gap + 1e-9 {
                        wide += 1;
                    }
                }
                assert!(wide <= 1);
            }
            let err = build_closed_network(&s, jam + 1).unwrap_err();
            assert_eq!(
                err,
                GeometryError::OverCapacity {
                    requested: jam + 1,
                    jam_capacity: jam
                }
            );
            assert!(err.to_string().contains(&jam.to_string()));
        }
    }

    #[test]
    fn placement_keeps_the_box_empty() {
        let s = build_intersection(IntersectionKind::FourwayTwoLane);
        let jam = jam_capacity(&s, &NetworkParams::default()).unwrap();
        let net = build_closed_network(&s, jam).unwrap();
        for v in &net.routes {
            let ring = &net.rings[v.ring];
            let rear = v.initial_position - net.params.vehicle_length;
            let in_box = v.initial_position > ring.entrance_line
                && rear < ring.entrance_line + ring.zone_span;
            assert!(!in_box, "vehicle placed in the box at {}", v.initial_position);
        }
    }

    #[test]
    fn routes_only_use_their_lane_movements() {
        let s = build_intersection(IntersectionKind::FourwayTwoLane);
        let net = build_closed_network_with(&s, 100, &NetworkParams::default(), 3).unwrap();
        for v in &net.routes {
            let ring = &net.rings[v.ring];
            assert!(v.cycle.iter().all(|m| ring.movements.contains(m)));
        }
    }

    #[test]
    fn overrides_are_validated() {
        let bad = GeometryOverrides {
            entrance_zone_length: Some(500.0),
            ..Default::default()
        };
        assert!(build_intersection_with(IntersectionKind::FourwayOneLane, &bad).is_err());
        let neg = GeometryOverrides {
            speed_limit: Some(-1.0),
            ..Default::default()
        };
        assert!(build_intersection_with(IntersectionKind::TJunction, &neg).is_err());
    }
}
