//! Quadratic fundamental-diagram fits `Q = a k² + b k + c` and their vertex (capacity).

use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

use crate::experiment::RunResult;
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least 3 distinct density values, got {0}")]
    TooFewDistinct(usize),
    #[error("normal equations are rank deficient")]
    RankDeficient,
    #[error("non-finite input point")]
    NonFinite,
    #[error("fit is not concave (a = {0}); the densities never reached congestion")]
    NonConcave(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticFit<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    /// `1 - SS_res / SS_tot`; `None` when all `Q` are equal.
    pub r_squared: Option<T>,
    pub n_points: usize,
    /// Vertex abscissa `-b / (2a)`; `None` when `a = 0`.
    pub k_crit: Option<T>,
    /// Vertex ordinate `c - b² / (4a)`; `None` when `a = 0`.
    pub q_max: Option<T>,
    pub k_min: T,
    pub k_max: T,
}

impl<T: Scalar> QuadraticFit<T> {
    pub fn eval(&self, k: T) -> T {
        (self.a * k + self.b) * k + self.c
    }

    pub fn residual_sum(&self, points: &[(T, T)]) -> T {
        residual_sum(self.a, self.b, self.c, points)
    }
}

pub fn residual_sum<T: Scalar>(a: T, b: T, c: T, points: &[(T, T)]) -> T {
    points.iter().fold(T::zero(), |acc, &(k, q)| {
        let r = q - ((a * k + b) * k + c);
        acc + r * r
    })
}

fn vertex<T: Scalar>(a: T, b: T, c: T) -> (Option<T>, Option<T>) {
    if a == T::zero() {
        return (None, None);
    }
    let two = T::lit(2.0);
    (Some(-b / (two * a)), Some(c - b * b / (T::lit(4.0) * a)))
}

/// Solves `m x = rhs` by Gaussian elimination with partial pivoting.
fn solve3<T: Scalar>(mut m: [[T; 3]; 3], mut rhs: [T; 3]) -> Result<[T; 3], FitError> {
    let scale = m
        .iter()
        .flatten()
        .fold(T::zero(), |acc, v| acc.max(v.abs()));
    let tiny = scale * T::epsilon() * T::lit(64.0);
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap_or(Ordering::Equal))
            .unwrap();
        if !(m[pivot][col].abs() > tiny) {
            return Err(FitError::RankDeficient);
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] = m[row][k] - f * m[col][k];
            }
            rhs[row] = rhs[row] - f * rhs[col];
        }
    }
    let mut x = [T::zero(); 3];
    for row in (0..3).rev() {
        let mut s = rhs[row];
        for k in row + 1..3 {
            s = s - m[row][k] * x[k];
        }
        x[row] = s / m[row][row];
    }
    Ok(x)
}

/// Least-squares quadratic through `(k, Q)` points.
///
/// Densities are shifted by their mean and scaled by their half-range before forming the
/// normal equations; the coefficients are mapped back afterwards.
pub fn fit_quadratic<T: Scalar>(points: &[(T, T)]) -> Result<QuadraticFit<T>, FitError> {
    if points.iter().any(|(k, q)| !k.is_finite() || !q.is_finite()) {
        return Err(FitError::NonFinite);
    }
    let mut ks: Vec<T> = points.iter().map(|p| p.0).collect();
    ks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ks.dedup();
    if ks.len() < 3 {
        return Err(FitError::TooFewDistinct(ks.len()));
    }
    let k_min = ks[0];
    let k_max = ks[ks.len() - 1];
    let n = T::lit(points.len() as f64);
    let mean_k = points.iter().fold(T::zero(), |acc, p| acc + p.0) / n;
    let mean_q = points.iter().fold(T::zero(), |acc, p| acc + p.1) / n;
    let ss_tot = points
        .iter()
        .fold(T::zero(), |acc, p| acc + (p.1 - mean_q) * (p.1 - mean_q));

    let flat = points.iter().all(|p| p.1 == points[0].1);
    if flat {
        return Ok(QuadraticFit {
            a: T::zero(),
            b: T::zero(),
            c: points[0].1,
            r_squared: None,
            n_points: points.len(),
            k_crit: None,
            q_max: None,
            k_min,
            k_max,
        });
    }

    let half = ((k_max - k_min) / T::lit(2.0)).max(T::min_positive_value());
    let mut s = [T::zero(); 5];
    let mut t = [T::zero(); 3];
    for &(k, q) in points {
        let u = (k - mean_k) / half;
        let u2 = u * u;
        s[1] = s[1] + u;
        s[2] = s[2] + u2;
        s[3] = s[3] + u2 * u;
        s[4] = s[4] + u2 * u2;
        t[0] = t[0] + q;
        t[1] = t[1] + u * q;
        t[2] = t[2] + u2 * q;
    }
    s[0] = n;
    let m = [[s[4], s[3], s[2]], [s[3], s[2], s[1]], [s[2], s[1], s[0]]];
    let rhs = [t[2], t[1], t[0]];
    let [alpha, beta, gamma] = solve3(m, rhs)?;

    // Q = alpha u² + beta u + gamma with u = (k - m) / h
    let a = alpha / (half * half);
    let b = beta / half - T::lit(2.0) * a * mean_k;
    let c = a * mean_k * mean_k - beta / half * mean_k + gamma;

    let ss_res = residual_sum(a, b, c, points);
    let r_squared = if ss_tot > T::zero() {
        Some((T::one() - ss_res / ss_tot).max(T::zero()).min(T::one()))
    } else {
        None
    };
    let (k_crit, q_max) = vertex(a, b, c);
    Ok(QuadraticFit {
        a,
        b,
        c,
        r_squared,
        n_points: points.len(),
        k_crit,
        q_max,
        k_min,
        k_max,
    })
}

/// Vertex `(k_crit, q_max)` of a concave fit.
pub fn extract_capacity<T: Scalar>(fit: &QuadraticFit<T>) -> Result<(T, T), FitError> {
    if !(fit.a < T::zero()) {
        return Err(FitError::NonConcave(fit.a.to_f64().unwrap_or(f64::NAN)));
    }
    let two = T::lit(2.0);
    Ok((-fit.b / (two * fit.a), fit.c - fit.b * fit.b / (T::lit(4.0) * fit.a)))
}

/// One (intersection, penetration) cell of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CellKey {
    pub intersection: String,
    pub penetration: f64,
}

impl CellKey {
    pub fn new(intersection: impl Into<String>, penetration: f64) -> Self {
        Self {
            intersection: intersection.into(),
            penetration,
        }
    }
}

impl Eq for CellKey {}

impl Ord for CellKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.intersection
            .cmp(&other.intersection)
            .then(self.penetration.total_cmp(&other.penetration))
    }
}

impl PartialOrd for CellKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitFlag {
    Ok,
    /// Fitted, but some runs of the cell faulted and were left out.
    PartialFaults,
    NonConcave,
    Degenerate,
    /// Every run of the cell faulted.
    NoData,
}

impl FitFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            FitFlag::Ok => "ok",
            FitFlag::PartialFaults => "partial_faults",
            FitFlag::NonConcave => "non_concave",
            FitFlag::Degenerate => "degenerate",
            FitFlag::NoData => "no_data",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "ok" => FitFlag::Ok,
            "partial_faults" => FitFlag::PartialFaults,
            "non_concave" => FitFlag::NonConcave,
            "degenerate" => FitFlag::Degenerate,
            "no_data" => FitFlag::NoData,
            _ => return None,
        })
    }
}

impl fmt::Display for FitFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Pooled input of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSamples {
    pub key: CellKey,
    /// `(k, Q)` of every sample of every non-faulted run, in canonical run order.
    pub points: Vec<(f64, f64)>,
    pub faulted_runs: usize,
    /// First fault message, for the table.
    pub fault_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFit {
    pub key: CellKey,
    pub fit: Option<QuadraticFit<f64>>,
    pub n_points: usize,
    pub flag: FitFlag,
    pub note: Option<String>,
}

impl CellFit {
    /// Usable for capacity comparisons: fitted, concave and free of faults.
    pub fn is_clean(&self) -> bool {
        self.flag == FitFlag::Ok
    }
}

/// Fits every cell independently; the output follows the input order.
pub fn fit_cells(cells: &[CellSamples]) -> Vec<CellFit> {
    cells
        .iter()
        .map(|cell| {
            let n_points = cell.points.len();
            if n_points == 0 && cell.faulted_runs > 0 {
                return CellFit {
                    key: cell.key.clone(),
                    fit: None,
                    n_points,
                    flag: FitFlag::NoData,
                    note: cell.fault_reason.clone(),
                };
            }
            match fit_quadratic(&cell.points) {
                Err(e) => CellFit {
                    key: cell.key.clone(),
                    fit: None,
                    n_points,
                    flag: FitFlag::Degenerate,
                    note: Some(e.to_string()),
                },
                Ok(fit) => {
                    let (flag, note) = if !(fit.a < 0.0) {
                        (FitFlag::NonConcave, Some(format!("a = {}", fit.a)))
                    } else if cell.faulted_runs > 0 {
                        (FitFlag::PartialFaults, cell.fault_reason.clone())
                    } else {
                        (FitFlag::Ok, None)
                    };
                    CellFit {
                        key: cell.key.clone(),
                        fit: Some(fit),
                        n_points,
                        flag,
                        note,
                    }
                }
            }
        })
        .collect()
}

/// Groups run results into cells in canonical order, pooling samples across seeds.
pub fn pool_results(results: &[RunResult]) -> Vec<CellSamples> {
    let mut sorted: Vec<&RunResult> = results.iter().collect();
    sorted.sort_by(|x, y| x.canonical_cmp(y));
    let mut cells: Vec<CellSamples> = Vec::new();
    for r in sorted {
        let key = CellKey::new(r.intersection.clone(), r.penetration);
        if cells.last().map(|c| c.key != key).unwrap_or(true) {
            cells.push(CellSamples {
                key,
                points: Vec::new(),
                faulted_runs: 0,
                fault_reason: None,
            });
        }
        let cell = cells.last_mut().unwrap();
        match &r.fault {
            Some(f) => {
                cell.faulted_runs += 1;
                if cell.fault_reason.is_none() {
                    cell.fault_reason = Some(format!("seed {} n {}: {}", r.seed, r.vehicle_count, f));
                }
            }
            None => cell.points.extend(r.samples.iter().map(|s| (s.k, s.q))),
        }
    }
    cells
}

/// One fit per (intersection, penetration) cell.
pub fn fit_all(results: &[RunResult]) -> Vec<CellFit> {
    fit_cells(&pool_results(results))
}
