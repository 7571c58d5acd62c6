//! The sweep protocol: intersections × RV penetrations × seeds × density levels, each run a
//! seeded closed-circuit simulation measured window by window.

use std::cmp::Ordering;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::coordination::{entrance_decisions, CoordinationParams};
use crate::dynamics::{IdmParams, SimFault, VehicleClass, WorldState};
use crate::geometry::{
    build_closed_network_with, build_intersection_with, jam_capacity, GeometryError,
    GeometryOverrides, IntersectionKind, IntersectionSpec, NetworkParams,
};
use crate::measurement::{
    DetectorConfig, FlowSample, Frame, MeasureError, Trace, TracePoint, WindowAccumulator,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Exactly `round(penetration * n)` RVs, placed by a seeded shuffle.
pub fn assign_classes(vehicle_count: usize, penetration: f64, seed: u64) -> Vec<VehicleClass> {
    assert!((0.0..=1.0).contains(&penetration), "penetration {penetration} outside [0, 1]");
    let rvs = (penetration * vehicle_count as f64).round() as usize;
    let mut classes: Vec<VehicleClass> = (0..vehicle_count)
        .map(|i| if i < rvs { VehicleClass::Rv } else { VehicleClass::Human })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    classes.shuffle(&mut rng);
    classes
}

/// Timing and model parameters shared by every run of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dt: f64,
    pub run_duration: f64,
    pub detector: DetectorConfig,
    pub idm: IdmParams<f64>,
    pub coordination: CoordinationParams,
    pub network: NetworkParams,
    pub geometry: GeometryOverrides,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dt: 0.2,
            run_duration: 900.0,
            detector: DetectorConfig::default(),
            idm: IdmParams::default(),
            coordination: CoordinationParams::default(),
            network: NetworkParams::default(),
            geometry: GeometryOverrides::default(),
        }
    }
}

impl RunConfig {
    pub fn steps(&self) -> usize {
        (self.run_duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let cfg = |m: String| ExperimentError::Config(m);
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(cfg(format!("dt must be positive, got {}", self.dt)));
        }
        let steps = (self.run_duration / self.dt).round();
        if !(self.run_duration > 0.0) || (steps * self.dt - self.run_duration).abs() > 1e-9 * self.run_duration {
            return Err(cfg(format!(
                "run_duration {} is not a positive multiple of dt {}",
                self.run_duration, self.dt
            )));
        }
        self.idm.validate().map_err(cfg)?;
        self.coordination.validate().map_err(cfg)?;
        self.detector.validate()?;
        if self.detector.warmup + self.detector.window > self.run_duration + 1e-9 {
            return Err(cfg(format!(
                "run_duration {} leaves no measurement window after warmup {}",
                self.run_duration, self.detector.warmup
            )));
        }
        let n = &self.network;
        if !(n.circuit_length > 0.0 && n.vehicle_length > 0.0 && n.min_gap >= 0.0) {
            return Err(cfg("network lengths must be positive".into()));
        }
        if (n.min_gap - self.idm.min_gap).abs() > 1e-12 {
            return Err(cfg(format!(
                "network min_gap {} differs from the car-following min_gap {}",
                n.min_gap, self.idm.min_gap
            )));
        }
        Ok(())
    }
}

/// Density levels of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityLadder {
    /// Fractions of each intersection's jam capacity.
    JamFractions(Vec<f64>),
    /// The same vehicle counts for every intersection.
    Counts(Vec<usize>),
}

impl Default for DensityLadder {
    /// Geometric from 5% to 25% of jam capacity, then linear in 10% steps to 95%.
    fn default() -> Self {
        let mut f: Vec<f64> = (0..5).map(|i| 0.05 * 5f64.powf(i as f64 / 4.0)).collect();
        f.extend((0..7).map(|i| 0.35 + 0.1 * i as f64));
        DensityLadder::JamFractions(f)
    }
}

impl DensityLadder {
    pub fn len(&self) -> usize {
        match self {
            DensityLadder::JamFractions(f) => f.len(),
            DensityLadder::Counts(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Vehicle counts for a network of the given jam capacity.
    pub fn counts(&self, jam: usize) -> Result<Vec<usize>, ExperimentError> {
        let counts: Vec<usize> = match self {
            DensityLadder::JamFractions(f) => {
                if let Some(x) = f.iter().find(|x| !(**x > 0.0 && **x <= 1.0)) {
                    return Err(ExperimentError::Config(format!("jam fraction {x} outside (0, 1]")));
                }
                f.iter().map(|x| (x * jam as f64).round() as usize).collect()
            }
            DensityLadder::Counts(c) => c.clone(),
        };
        if counts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ExperimentError::Config(format!(
                "density levels {counts:?} are not strictly increasing"
            )));
        }
        if let Some(&last) = counts.last() {
            if last > jam {
                return Err(GeometryError::OverCapacity {
                    requested: last,
                    jam_capacity: jam,
                }
                .into());
            }
        }
        Ok(counts)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub intersections: Vec<IntersectionKind>,
    pub penetrations: Vec<f64>,
    pub seeds: Vec<u64>,
    pub density: DensityLadder,
    pub run: RunConfig,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            intersections: IntersectionKind::ALL.to_vec(),
            penetrations: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            seeds: vec![1, 2, 3],
            density: DensityLadder::default(),
            run: RunConfig::default(),
        }
    }
}

/// One simulation of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RunJob {
    pub kind: IntersectionKind,
    pub penetration: f64,
    pub seed: u64,
    pub vehicle_count: usize,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let cfg = |m: String| Err(ExperimentError::Config(m));
        if self.intersections.is_empty() || self.penetrations.is_empty() || self.seeds.is_empty() {
            return cfg("plan needs at least one intersection, penetration and seed".into());
        }
        if self.density.is_empty() {
            return cfg("plan needs at least one density level".into());
        }
        if let Some(p) = self.penetrations.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return cfg(format!("penetration {p} outside [0, 1]"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return cfg(format!("seeds {:?} are not distinct", self.seeds));
        }
        let mut pens = self.penetrations.clone();
        pens.sort_by(f64::total_cmp);
        pens.dedup();
        if pens.len() != self.penetrations.len() {
            return cfg(format!("penetrations {:?} are not distinct", self.penetrations));
        }
        let mut kinds = self.intersections.clone();
        kinds.sort_by_key(|k| k.label());
        kinds.dedup();
        if kinds.len() != self.intersections.len() {
            return cfg("intersections are not distinct".into());
        }
        self.run.validate()?;
        for &kind in &self.intersections {
            let spec = build_intersection_with(kind, &self.run.geometry)?;
            self.density.counts(jam_capacity(&spec, &self.run.network)?)?;
            let empty = build_closed_network_with(&spec, 0, &self.run.network, 0)?;
            self.run.detector.resolve::<f64>(&empty, self.run.dt)?;
        }
        Ok(())
    }

    /// Every run of the plan in canonical order.
    pub fn jobs(&self) -> Result<Vec<RunJob>, ExperimentError> {
        self.validate()?;
        let mut kinds = self.intersections.clone();
        kinds.sort_by_key(|k| k.label());
        let mut pens = self.penetrations.clone();
        pens.sort_by(f64::total_cmp);
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        let mut jobs = Vec::new();
        for kind in kinds {
            let spec = build_intersection_with(kind, &self.run.geometry)?;
            let counts = self.density.counts(jam_capacity(&spec, &self.run.network)?)?;
            for &penetration in &pens {
                for &seed in &seeds {
                    for &vehicle_count in &counts {
                        jobs.push(RunJob {
                            kind,
                            penetration,
                            seed,
                            vehicle_count,
                        });
                    }
                }
            }
        }
        Ok(jobs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunStats {
    pub steps: usize,
    /// Smallest bumper-to-bumper gap seen, meters.
    pub min_gap: f64,
    /// Vehicles admitted into the conflict zone.
    pub entries: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub intersection: String,
    pub kind: IntersectionKind,
    pub penetration: f64,
    pub seed: u64,
    pub vehicle_count: usize,
    pub samples: Vec<FlowSample<f64>>,
    pub fault: Option<SimFault>,
    pub stats: RunStats,
}

impl RunResult {
    /// Order by (intersection, penetration, seed, vehicle count).
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.intersection
            .cmp(&other.intersection)
            .then(self.penetration.total_cmp(&other.penetration))
            .then(self.seed.cmp(&other.seed))
            .then(self.vehicle_count.cmp(&other.vehicle_count))
    }
}

fn frame(world: &WorldState) -> Frame<f64> {
    Frame {
        time: world.time,
        vehicles: world
            .vehicles
            .iter()
            .map(|v| TracePoint {
                ring: v.ring,
                position: v.route_position,
                speed: v.speed,
            })
            .collect(),
    }
}

fn simulate(
    spec: &IntersectionSpec,
    vehicle_count: usize,
    penetration: f64,
    seed: u64,
    config: &RunConfig,
    record: bool,
) -> Result<(RunResult, Option<Trace<f64>>), ExperimentError> {
    config.validate()?;
    if !(0.0..=1.0).contains(&penetration) {
        return Err(ExperimentError::Config(format!("penetration {penetration} outside [0, 1]")));
    }
    let network = Arc::new(build_closed_network_with(spec, vehicle_count, &config.network, seed)?);
    let detector = config.detector.resolve::<f64>(&network, config.dt)?;
    let classes = assign_classes(vehicle_count, penetration, seed);
    let mut world =
        WorldState::new(network.clone(), &classes, config.idm, seed).map_err(ExperimentError::Config)?;
    let circuits: Vec<f64> = network.rings.iter().map(|r| r.circuit_length).collect();
    let mut trace = record.then(|| Trace {
        dt: config.dt,
        circuit_lengths: circuits.clone(),
        frames: vec![frame(&world)],
    });
    let mut acc = WindowAccumulator::new(detector, circuits, config.dt);
    let mut prev = vec![0.0; vehicle_count];
    let mut stats = RunStats {
        steps: 0,
        min_gap: f64::INFINITY,
        entries: 0,
    };
    let mut fault = None;
    for _ in 0..config.steps() {
        let grants = match entrance_decisions(&world, &config.coordination) {
            Ok(g) => g,
            Err(f) => {
                fault = Some(f);
                break;
            }
        };
        stats.entries += grants
            .iter()
            .filter(|g| g.decision == crate::coordination::Decision::Go)
            .count() as u64;
        for (p, v) in prev.iter_mut().zip(&world.vehicles) {
            *p = v.route_position;
        }
        match world.step(config.dt, &grants) {
            Ok(report) => stats.min_gap = stats.min_gap.min(report.min_gap),
            Err(f) => {
                fault = Some(f);
                break;
            }
        }
        stats.steps += 1;
        for (&x0, v) in prev.iter().zip(&world.vehicles) {
            acc.add_move(v.ring, x0, v.route_position);
        }
        acc.end_step();
        if let Some(t) = trace.as_mut() {
            t.frames.push(frame(&world));
        }
    }
    let result = RunResult {
        intersection: spec.id.clone(),
        kind: spec.kind,
        penetration,
        seed,
        vehicle_count,
        samples: acc.into_samples(),
        fault,
        stats,
    };
    Ok((result, trace))
}

/// One seeded simulation, measured in windows after warmup. Configuration problems are
/// errors; faults raised while stepping end the run and are carried in the result.
pub fn run_sim(
    spec: &IntersectionSpec,
    vehicle_count: usize,
    penetration: f64,
    seed: u64,
    config: &RunConfig,
) -> Result<RunResult, ExperimentError> {
    simulate(spec, vehicle_count, penetration, seed, config, false).map(|r| r.0)
}

/// Like [`run_sim`], also returning every vehicle's trajectory.
pub fn run_sim_traced(
    spec: &IntersectionSpec,
    vehicle_count: usize,
    penetration: f64,
    seed: u64,
    config: &RunConfig,
) -> Result<(RunResult, Trace<f64>), ExperimentError> {
    simulate(spec, vehicle_count, penetration, seed, config, true).map(|(r, t)| (r, t.unwrap()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Executor {
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    /// Execute runs in an order permuted by this seed.
    pub shuffle: Option<u64>,
}

impl Default for Executor {
    fn default() -> Self {
        Self { jobs: 1, shuffle: None }
    }
}

/// Runs every job of the plan and returns results in canonical order.
pub fn run_sweep(plan: &ExperimentPlan, executor: &Executor) -> Result<Vec<RunResult>, ExperimentError> {
    let mut jobs = plan.jobs()?;
    let mut specs = Vec::new();
    for &kind in &plan.intersections {
        specs.push((kind, build_intersection_with(kind, &plan.run.geometry)?));
    }
    if let Some(s) = executor.shuffle {
        jobs.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
    }
    let run = |job: &RunJob| {
        let spec = &specs.iter().find(|(k, _)| *k == job.kind).unwrap().1;
        run_sim(spec, job.vehicle_count, job.penetration, job.seed, &plan.run)
    };
    let results: Result<Vec<RunResult>, ExperimentError> = if executor.jobs == 1 {
        jobs.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(executor.jobs)
            .build()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        pool.install(|| jobs.par_iter().map(run).collect())
    };
    let mut results = results?;
    results.sort_by(|a, b| a.canonical_cmp(b));
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_intersection;
    use crate::measurement::DetectorRegion;

    fn short_config() -> RunConfig {
        RunConfig {
            run_duration: 300.0,
            ..RunConfig::default()
        }
    }

    #[test]
    fn class_counts() {
        assert!(assign_classes(20, 0.0, 1).iter().all(|c| *c == VehicleClass::Human));
        assert!(assign_classes(20, 1.0, 1).iter().all(|c| *c == VehicleClass::Rv));
        let a = assign_classes(20, 0.25, 1);
        let rv = |v: &[VehicleClass]| v.iter().filter(|c| **c == VehicleClass::Rv).count();
        assert_eq!(rv(&a), 5);
        assert_eq!(a, assign_classes(20, 0.25, 1));
        let b = assign_classes(20, 0.25, 2);
        assert_eq!(rv(&b), 5);
        assert_ne!(a, b);
        assert_eq!(rv(&assign_classes(7, 0.5, 3)), 4);
        assert!(assign_classes(0, 0.5, 3).is_empty());
    }

    #[test]
    fn default_ladder_shape() {
        let DensityLadder::JamFractions(f) = DensityLadder::default() else {
            unreachable!()
        };
        assert_eq!(f.len(), 12);
        assert!((f[0] - 0.05).abs() < 1e-12 && (f[4] - 0.25).abs() < 1e-12);
        assert!((f[11] - 0.95).abs() < 1e-12);
        assert!(f.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn ladder_rejects_non_increasing() {
        assert!(DensityLadder::Counts(vec![3, 3]).counts(100).is_err());
        assert!(DensityLadder::Counts(vec![3, 200]).counts(100).is_err());
        assert!(DensityLadder::JamFractions(vec![0.01, 0.011]).counts(50).is_err());
        assert!(DensityLadder::JamFractions(vec![1.5]).counts(50).is_err());
    }

    #[test]
    fn default_plan_counts() {
        let plan = ExperimentPlan::default();
        assert_eq!(plan.jobs().unwrap().len(), 720);
        let single = ExperimentPlan {
            intersections: vec![IntersectionKind::TJunction],
            penetrations: vec![0.5],
            seeds: vec![9],
            density: DensityLadder::Counts(vec![10]),
            run: short_config(),
        };
        assert_eq!(run_sweep(&single, &Executor::default()).unwrap().len(), 1);
    }

    #[test]
    fn invalid_plans() {
        let bad_pen = ExperimentPlan {
            penetrations: vec![1.5],
            ..ExperimentPlan::default()
        };
        assert!(bad_pen.validate().is_err());
        let dup_seed = ExperimentPlan {
            seeds: vec![1, 1],
            ..ExperimentPlan::default()
        };
        assert!(dup_seed.validate().is_err());
        let mut bad_dt = ExperimentPlan::default();
        bad_dt.run.dt = 0.0;
        assert!(bad_dt.validate().is_err());
        let mut t_junction_north = ExperimentPlan {
            intersections: vec![IntersectionKind::TJunction],
            ..ExperimentPlan::default()
        };
        t_junction_north.run.detector.region = DetectorRegion::Approach { approach: 3 };
        assert!(matches!(t_junction_north.validate(), Err(ExperimentError::Measure(_))));
        let mut odd_window = ExperimentPlan::default();
        odd_window.run.detector.window = 60.1;
        assert!(odd_window.validate().is_err());
    }

    #[test]
    fn empty_network_measures_zero() {
        let spec = build_intersection(IntersectionKind::FourwayOneLane);
        let r = run_sim(&spec, 0, 0.5, 1, &short_config()).unwrap();
        assert!(r.fault.is_none());
        assert_eq!(r.samples.len(), 3);
        for s in &r.samples {
            assert_eq!((s.k, s.q, s.v), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let spec = build_intersection(IntersectionKind::FourwayAsym);
        let a = run_sim(&spec, 120, 0.5, 4, &short_config()).unwrap();
        let b = run_sim(&spec, 120, 0.5, 4, &short_config()).unwrap();
        assert_eq!(a, b);
        assert!(a.fault.is_none(), "{:?}", a.fault);
    }

    #[test]
    fn lone_vehicle_cruises_at_the_limit() {
        for kind in IntersectionKind::ALL {
            let spec = build_intersection(kind);
            for p in [0.0, 1.0] {
                let r = run_sim(&spec, 1, p, 1, &RunConfig::default()).unwrap();
                assert!(r.fault.is_none());
                assert_eq!(r.samples.len(), 13);
                for s in &r.samples {
                    assert!((s.v - spec.speed_limit * 3.6).abs() < 2.0, "{kind:?}: {}", s.v);
                }
            }
        }
    }

    #[test]
    fn whole_circuit_density_follows_the_ladder() {
        let mut config = short_config();
        config.detector.region = DetectorRegion::WholeNetwork;
        let spec = build_intersection(IntersectionKind::FourwayTwoLane);
        let jam = jam_capacity(&spec, &config.network).unwrap();
        let counts = DensityLadder::default().counts(jam).unwrap();
        let total = spec_total_length(&spec, &config);
        let mut last = -1.0;
        for n in counts {
            let r = run_sim(&spec, n, 0.25, 2, &config).unwrap();
            assert!(r.fault.is_none(), "{n}: {:?}", r.fault);
            for s in &r.samples {
                assert!((s.k - n as f64 / total * 1000.0).abs() < 1e-9);
                assert!(s.k > last);
            }
            last = r.samples[0].k;
        }
    }

    fn spec_total_length(spec: &IntersectionSpec, config: &RunConfig) -> f64 {
        build_closed_network_with(spec, 0, &config.network, 0)
            .unwrap()
            .total_length()
    }

    #[test]
    fn shuffled_execution_matches_sequential() {
        let plan = ExperimentPlan {
            intersections: vec![IntersectionKind::TJunction, IntersectionKind::FourwayOneLane],
            penetrations: vec![0.0, 1.0],
            seeds: vec![2, 1],
            density: DensityLadder::Counts(vec![4, 30]),
            run: short_config(),
        };
        let seq = run_sweep(&plan, &Executor::default()).unwrap();
        let shuffled = run_sweep(
            &plan,
            &Executor {
                jobs: 3,
                shuffle: Some(99),
            },
        )
        .unwrap();
        assert_eq!(seq.len(), 16);
        assert_eq!(seq, shuffled);
        assert!(seq.windows(2).all(|w| w[0].canonical_cmp(&w[1]) == Ordering::Less));
    }
}
