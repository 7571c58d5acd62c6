//! Comparative summaries over the fit table: capacity against penetration per
//! intersection, and the spread of capacity across intersections.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::fdfit::{CellFit, FitFlag};

/// One row of `fits.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub intersection: String,
    pub penetration: f64,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub r_squared: Option<f64>,
    pub k_crit: Option<f64>,
    pub q_max: Option<f64>,
    pub n_points: usize,
    pub flag: String,
}

impl FitRow {
    pub fn from_cell(cell: &CellFit) -> Self {
        let fit = cell.fit.as_ref();
        Self {
            intersection: cell.key.intersection.clone(),
            penetration: cell.key.penetration,
            a: fit.map(|f| f.a),
            b: fit.map(|f| f.b),
            c: fit.map(|f| f.c),
            r_squared: fit.and_then(|f| f.r_squared),
            k_crit: fit.and_then(|f| f.k_crit),
            q_max: fit.and_then(|f| f.q_max),
            n_points: cell.n_points,
            flag: cell.flag.as_str().to_string(),
        }
    }

    pub fn flag(&self) -> Option<FitFlag> {
        FitFlag::parse(&self.flag)
    }

    /// Capacity usable for comparisons: an `ok` flag and a vertex.
    pub fn clean_capacity(&self) -> Option<(f64, f64)> {
        match (self.flag(), self.q_max, self.k_crit) {
            (Some(FitFlag::Ok), Some(q), Some(k)) => Some((q, k)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monotone {
    Increasing,
    Decreasing,
    NonMonotone,
    /// Some cell is missing or flagged, so no classification is made.
    Incomplete,
}

impl Monotone {
    pub fn as_str(self) -> &'static str {
        match self {
            Monotone::Increasing => "increasing",
            Monotone::Decreasing => "decreasing",
            Monotone::NonMonotone => "non-monotone",
            Monotone::Incomplete => "incomplete",
        }
    }
}

impl fmt::Display for Monotone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Classifies a capacity sequence already ordered by penetration.
pub fn classify(q_max: &[f64]) -> Monotone {
    if q_max.len() < 2 {
        return Monotone::Incomplete;
    }
    if q_max.windows(2).all(|w| w[1] > w[0]) {
        Monotone::Increasing
    } else if q_max.windows(2).all(|w| w[1] < w[0]) {
        Monotone::Decreasing
    } else {
        Monotone::NonMonotone
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendPoint {
    pub penetration: f64,
    pub q_max: Option<f64>,
    pub k_crit: Option<f64>,
    pub flag: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityTrend {
    pub intersection: String,
    pub points: Vec<TrendPoint>,
    pub monotone: Monotone,
}

fn sorted_rows(fits: &[FitRow]) -> Vec<&FitRow> {
    let mut rows: Vec<&FitRow> = fits.iter().collect();
    rows.sort_by(|x, y| {
        x.intersection
            .cmp(&y.intersection)
            .then(x.penetration.total_cmp(&y.penetration))
    });
    rows
}

/// One trend per intersection, in label order.
pub fn trend_table(fits: &[FitRow]) -> Vec<CapacityTrend> {
    let mut out: Vec<CapacityTrend> = Vec::new();
    for row in sorted_rows(fits) {
        if out.last().map(|t| t.intersection != row.intersection).unwrap_or(true) {
            out.push(CapacityTrend {
                intersection: row.intersection.clone(),
                points: Vec::new(),
                monotone: Monotone::Incomplete,
            });
        }
        let clean = row.clean_capacity();
        out.last_mut().unwrap().points.push(TrendPoint {
            penetration: row.penetration,
            q_max: clean.map(|c| c.0),
            k_crit: clean.map(|c| c.1),
            flag: row.flag.clone(),
        });
    }
    for trend in &mut out {
        let q: Option<Vec<f64>> = trend.points.iter().map(|p| p.q_max).collect();
        trend.monotone = q.map(|q| classify(&q)).unwrap_or(Monotone::Incomplete);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spread {
    pub penetration: f64,
    /// Intersections with a clean capacity at this penetration.
    pub n_intersections: usize,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub range: Option<f64>,
}

/// Capacity spread across intersections, one row per penetration in ascending order.
pub fn variability_summary(fits: &[FitRow]) -> Vec<Spread> {
    let mut rows: Vec<&FitRow> = fits.iter().collect();
    rows.sort_by(|x, y| x.penetration.total_cmp(&y.penetration));
    let mut out: Vec<Spread> = Vec::new();
    for row in rows {
        if out.last().map(|s| s.penetration != row.penetration).unwrap_or(true) {
            out.push(Spread {
                penetration: row.penetration,
                n_intersections: 0,
                min: None,
                max: None,
                range: None,
            });
        }
        let s = out.last_mut().unwrap();
        if let Some((q, _)) = row.clean_capacity() {
            s.n_intersections += 1;
            s.min = Some(s.min.map_or(q, |m| m.min(q)));
            s.max = Some(s.max.map_or(q, |m| m.max(q)));
        }
    }
    for s in &mut out {
        s.range = s.min.zip(s.max).map(|(lo, hi)| hi - lo);
    }
    out
}

fn num(x: Option<f64>, digits: usize) -> String {
    match x {
        Some(v) => format!("{v:.digits$}"),
        None => "n/a".into(),
    }
}

fn pct(p: f64) -> String {
    format!("{}%", (p * 100.0).round())
}

/// Markdown report derived from the fit table alone.
pub fn render_markdown(fits: &[FitRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Fundamental diagram sweep\n");
    let _ = writeln!(
        s,
        "Each cell pools the flow samples of all seeds and density levels before a single \
         quadratic fit Q = a k^2 + b k + c. Capacity q_max and critical density k_crit are the \
         vertex of the fitted parabola. Only cells flagged `ok` enter the comparisons below.\n"
    );

    let _ = writeln!(s, "## Fits\n");
    let _ = writeln!(s, "| intersection | RV share | a | b | c | r^2 | k_crit (veh/km) | q_max (veh/h) | points | flag |");
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|---|");
    for r in sorted_rows(fits) {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.intersection,
            pct(r.penetration),
            num(r.a, 5),
            num(r.b, 3),
            num(r.c, 1),
            num(r.r_squared, 3),
            num(r.k_crit, 1),
            num(r.q_max, 1),
            r.n_points,
            r.flag
        );
    }

    let _ = writeln!(s, "\n## Capacity against RV share\n");
    let trends = trend_table(fits);
    for t in &trends {
        let seq: Vec<String> = t
            .points
            .iter()
            .map(|p| format!("{}: {}", pct(p.penetration), num(p.q_max, 1)))
            .collect();
        let _ = writeln!(s, "- {}: {} ({})", t.intersection, t.monotone, seq.join(", "));
    }

    let _ = writeln!(s, "\n## Spread across intersections\n");
    let _ = writeln!(s, "| RV share | intersections | min q_max | max q_max | range |");
    let _ = writeln!(s, "|---|---|---|---|---|");
    for v in variability_summary(fits) {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} |",
            pct(v.penetration),
            v.n_intersections,
            num(v.min, 1),
            num(v.max, 1),
            num(v.range, 1)
        );
    }
    s
}
