//! TOML configuration of a sweep. Every key is optional; an empty file is the default plan.
//!
//! ```toml
//! [plan]
//! intersections = ["fourway_1lane", "tjunction"]
//! penetrations = [0.0, 0.5, 1.0]
//! seeds = [1, 2, 3]
//! jam_fractions = [0.1, 0.5, 0.9]   # or vehicle_counts = [20, 100, 300]
//!
//! [run]
//! dt = 0.2
//! run_duration = 900.0
//!
//! [detector]
//! region = "approach"               # "segment" or "whole_network"
//! approach = 0
//! window = 60.0
//! warmup = 120.0
//!
//! [idm]
//! max_accel = 1.5
//!
//! [output]
//! dir = "out"
//! jobs = 4
//! emit_plots = true
//! ```
//!
//! `[idm]`, `[coordination]`, `[network]` and `[geometry]` take the fields of the matching
//! parameter types.

use std::path::PathBuf;

use serde::Deserialize;

use crate::coordination::CoordinationParams;
use crate::dynamics::IdmParams;
use crate::experiment::{DensityLadder, ExperimentPlan};
use crate::geometry::{GeometryOverrides, IntersectionKind, NetworkParams};
use crate::measurement::DetectorRegion;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub plan: PlanSection,
    pub run: RunSection,
    pub detector: DetectorSection,
    pub idm: Option<IdmParams<f64>>,
    pub coordination: Option<CoordinationParams>,
    pub network: Option<NetworkParams>,
    pub geometry: Option<GeometryOverrides>,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSection {
    pub intersections: Option<Vec<IntersectionKind>>,
    pub penetrations: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    pub jam_fractions: Option<Vec<f64>>,
    pub vehicle_counts: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub dt: Option<f64>,
    pub run_duration: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Approach,
    Segment,
    WholeNetwork,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub region: Option<RegionKind>,
    pub approach: Option<usize>,
    pub segment_start: Option<f64>,
    pub segment_end: Option<f64>,
    pub window: Option<f64>,
    pub warmup: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    pub jobs: Option<usize>,
    pub emit_plots: Option<bool>,
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// The experiment plan with every override applied, validated.
    pub fn plan(&self) -> Result<ExperimentPlan, String> {
        let mut plan = ExperimentPlan::default();
        let p = &self.plan;
        if let Some(v) = &p.intersections {
            plan.intersections = v.clone();
        }
        if let Some(v) = &p.penetrations {
            plan.penetrations = v.clone();
        }
        if let Some(v) = &p.seeds {
            plan.seeds = v.clone();
        }
        plan.density = match (&p.jam_fractions, &p.vehicle_counts) {
            (Some(_), Some(_)) => return Err("set either jam_fractions or vehicle_counts, not both".into()),
            (Some(f), None) => DensityLadder::JamFractions(f.clone()),
            (None, Some(c)) => DensityLadder::Counts(c.clone()),
            (None, None) => DensityLadder::default(),
        };

        let run = &mut plan.run;
        if let Some(dt) = self.run.dt {
            run.dt = dt;
        }
        if let Some(d) = self.run.run_duration {
            run.run_duration = d;
        }
        let d = &self.detector;
        if let Some(w) = d.window {
            run.detector.window = w;
        }
        if let Some(w) = d.warmup {
            run.detector.warmup = w;
        }
        let approach = d.approach.unwrap_or(0);
        let region = d.region.unwrap_or(if d.segment_start.is_some() || d.segment_end.is_some() {
            RegionKind::Segment
        } else {
            RegionKind::Approach
        });
        run.detector.region = match region {
            RegionKind::Approach => DetectorRegion::Approach { approach },
            RegionKind::WholeNetwork => DetectorRegion::WholeNetwork,
            RegionKind::Segment => match (d.segment_start, d.segment_end) {
                (Some(segment_start), Some(segment_end)) => DetectorRegion::Segment {
                    approach,
                    segment_start,
                    segment_end,
                },
                _ => return Err("a segment detector needs segment_start and segment_end".into()),
            },
        };
        if region != RegionKind::Segment && (d.segment_start.is_some() || d.segment_end.is_some()) {
            return Err("segment_start and segment_end only apply to a segment detector".into());
        }
        if let Some(idm) = self.idm {
            run.idm = idm;
        }
        if let Some(c) = self.coordination {
            run.coordination = c;
        }
        if let Some(n) = self.network {
            run.network = n;
        }
        if let Some(g) = self.geometry {
            run.geometry = g;
        }
        plan.validate().map_err(|e| e.to_string())?;
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default_plan() {
        let c = CliConfig::parse("").unwrap();
        assert_eq!(c.plan().unwrap(), ExperimentPlan::default());
        assert_eq!(c.output, OutputSection::default());
    }

    #[test]
    fn overrides() {
        let c = CliConfig::parse(
            r#"
            [plan]
            intersections = ["tjunction"]
            penetrations = [0.0, 1.0]
            seeds = [7]
            vehicle_counts = [10, 20]
            [run]
            run_duration = 300.0
            [detector]
            region = "whole_network"
            window = 30.0
            [idm]
            max_accel = 1.2
            [output]
            jobs = 2
            emit_plots = false
            "#,
        )
        .unwrap();
        let p = c.plan().unwrap();
        assert_eq!(p.intersections, vec![IntersectionKind::TJunction]);
        assert_eq!(p.seeds, vec![7]);
        assert_eq!(p.density, DensityLadder::Counts(vec![10, 20]));
        assert_eq!(p.run.run_duration, 300.0);
        assert_eq!(p.run.detector.region, DetectorRegion::WholeNetwork);
        assert_eq!(p.run.detector.window, 30.0);
        assert_eq!(p.run.idm.max_accel, 1.2);
        assert_eq!(p.run.idm.comfortable_decel, IdmParams::<f64>::default().comfortable_decel);
        assert_eq!(c.output.jobs, Some(2));
        assert_eq!(c.output.emit_plots, Some(false));
    }

    #[test]
    fn rejections() {
        assert!(CliConfig::parse("[plan]\nspeed = 3").is_err());
        assert!(CliConfig::parse("[plan]\nintersections = [\"roundabout\"]").is_err());
        let bad = |text: &str| CliConfig::parse(text).unwrap().plan().is_err();
        assert!(bad("[plan]\npenetrations = [1.5]"));
        assert!(bad("[plan]\njam_fractions = [0.5]\nvehicle_counts = [3]"));
        assert!(bad("[plan]\njam_fractions = [0.5, 0.4]"));
        assert!(bad("[detector]\nregion = \"segment\"\nsegment_start = 10.0"));
        assert!(bad("[detector]\napproach = 9"));
        assert!(bad("[run]\ndt = -1.0"));
        assert!(bad("[network]\nmin_gap = 3.0"));
    }
}
