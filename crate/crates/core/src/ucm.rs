//! Uncontrolled-manifold analysis of trial-to-trial joint variability.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::model::{Joint, Mapping, TrialRecord, N_JOINTS};
use crate::{Error, Result};

/// Normalized-time points per trial (0.1% increments).
pub const N_NORMALIZED: usize = 1001;
/// Relative pivot threshold below which a column of Cᵀ counts as dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;

const ROW_DOF: usize = 2;
const NULL_DOF: usize = N_JOINTS - ROW_DOF;

/// Orthonormal bases of row(C) and null(C).
#[derive(Debug, Clone, PartialEq)]
pub struct Subspaces {
    pub row: SMatrix<f64, ROW_DOF, N_JOINTS>,
    pub null: SMatrix<f64, NULL_DOF, N_JOINTS>,
}

impl Subspaces {
    pub fn of(c: &Mapping) -> Result<Self> {
        let qr = c.transpose().col_piv_qr();
        let r = qr.r();
        let scale = r[(0, 0)].abs();
        let rank = (0..ROW_DOF)
            .filter(|&i| scale > 0.0 && r[(i, i)].abs() > RANK_TOLERANCE * scale)
            .count();
        if rank < ROW_DOF {
            return Err(Error::RankDeficient { rank });
        }
        let mut qt = SMatrix::<f64, N_JOINTS, N_JOINTS>::identity();
        qr.q_tr_mul(&mut qt);
        Ok(Self {
            row: qt.fixed_rows::<ROW_DOF>(0).into_owned(),
            null: qt.fixed_rows::<NULL_DOF>(ROW_DOF).into_owned(),
        })
    }

    /// Squared norms of the projections of `dev` onto null(C) and row(C).
    pub fn split(&self, dev: &Joint) -> (f64, f64) {
        ((self.null * dev).norm_squared(), (self.row * dev).norm_squared())
    }
}

/// Variance components at one normalized-time point, in squared joint units
/// per degree of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UcmPoint {
    pub t_norm: f64,
    pub v_ucm: f64,
    pub v_ort: f64,
    pub fraction: f64,
}

/// Decomposition of one group of trials (a target pair within a block of a run).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcmResult {
    pub group: String,
    pub run: usize,
    pub block: usize,
    pub pair: (usize, usize),
    pub points: Vec<UcmPoint>,
}

impl UcmResult {
    /// Fraction averaged over normalized time.
    pub fn mean_fraction(&self) -> f64 {
        self.points.iter().map(|p| p.fraction).sum::<f64>() / self.points.len() as f64
    }
}

/// Resamples each trial's joint angles onto `N_NORMALIZED` equispaced points of
/// normalized time by linear interpolation.
pub fn time_normalize(records: &[&TrialRecord]) -> Result<Vec<Vec<Joint>>> {
    if records.is_empty() {
        return Err(Error::Empty("trial records"));
    }
    records.iter().map(|r| normalize_one(r)).collect()
}

fn normalize_one(record: &TrialRecord) -> Result<Vec<Joint>> {
    let s = &record.samples;
    if s.len() < 2 {
        return Err(Error::Empty("trial record needs at least two samples"));
    }
    let (t0, t1) = (s[0].t, s[s.len() - 1].t);
    if !(t1 > t0) {
        return Err(Error::InvalidArgument(format!("trial spans no time ({t0}..{t1})")));
    }
    let tau: Vec<f64> = s.iter().map(|p| (p.t - t0) / (t1 - t0)).collect();
    let mut out = Vec::with_capacity(N_NORMALIZED);
    let mut k = 0;
    for i in 0..N_NORMALIZED {
        let t = i as f64 / (N_NORMALIZED - 1) as f64;
        while k + 2 < s.len() && tau[k + 1] < t {
            k += 1;
        }
        let span = tau[k + 1] - tau[k];
        let a = if span > 0.0 { ((t - tau[k]) / span).clamp(0.0, 1.0) } else { 0.0 };
        out.push(s[k].q * (1.0 - a) + s[k + 1].q * a);
    }
    Ok(out)
}

/// Per-time-point split of across-trial variance into the null space of `c`
/// (task-irrelevant) and its row space (task-relevant).
pub fn variance_decompose(tensor: &[Vec<Joint>], c: &Mapping) -> Result<Vec<UcmPoint>> {
    if tensor.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 trials, got {}", tensor.len())));
    }
    let len = tensor[0].len();
    if len == 0 || tensor.iter().any(|t| t.len() != len) {
        return Err(Error::InvalidArgument("trials have mismatched lengths".into()));
    }
    let basis = Subspaces::of(c)?;
    let n = tensor.len() as f64;
    let points = (0..len)
        .map(|i| {
            let mean = tensor.iter().fold(SVector::zeros(), |acc: Joint, t| acc + t[i]) / n;
            let (mut ucm, mut ort) = (0.0, 0.0);
            for t in tensor {
                let (a, b) = basis.split(&(t[i] - mean));
                ucm += a;
                ort += b;
            }
            let v_ucm = ucm / (NULL_DOF as f64 * (n - 1.0));
            let v_ort = ort / (ROW_DOF as f64 * (n - 1.0));
            let total = v_ucm + v_ort;
            UcmPoint {
                t_norm: if len > 1 { i as f64 / (len - 1) as f64 } else { 0.0 },
                v_ucm,
                v_ort,
                fraction: if total > 0.0 { v_ucm / total } else { 0.5 },
            }
        })
        .collect();
    Ok(points)
}

/// Assignment of blocks to analysis phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMap {
    pub phases: Vec<(RangeInclusive<usize>, usize)>,
}

impl PhaseMap {
    /// Blocks 1-3 form phase 1 and blocks 4-6 phase 2; later blocks are left out.
    pub fn training() -> Self {
        Self { phases: vec![(1..=3, 1), (4..=6, 2)] }
    }

    pub fn phase_of(&self, block: usize) -> Option<usize> {
        self.phases.iter().find(|(r, _)| r.contains(&block)).map(|(_, p)| *p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub group: String,
    pub phase: usize,
    pub n_runs: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Averages fractions over target pairs (and blocks) within each run, then
/// reports the mean and a 95% normal-approximation interval across runs.
pub fn phase_aggregate(results: &[UcmResult], map: &PhaseMap) -> Result<Vec<PhaseSummary>> {
    let mut per_run: BTreeMap<(String, usize), BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    for r in results {
        let Some(phase) = map.phase_of(r.block) else { continue };
        let e = per_run.entry((r.group.clone(), phase)).or_default().entry(r.run).or_insert((0.0, 0));
        e.0 += r.mean_fraction();
        e.1 += 1;
    }
    let groups: Vec<String> = {
        let mut g: Vec<String> = results.iter().map(|r| r.group.clone()).collect();
        g.sort();
        g.dedup();
        g
    };
    let mut phases: Vec<usize> = map.phases.iter().map(|(_, p)| *p).collect();
    phases.sort();
    phases.dedup();
    let mut out = Vec::new();
    for g in &groups {
        for &phase in &phases {
            let runs = per_run
                .get(&(g.clone(), phase))
                .ok_or_else(|| Error::InvalidArgument(format!("phase {phase} of group {g} has no data")))?;
            let xs: Vec<f64> = runs.values().map(|(s, c)| s / *c as f64).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let half = if xs.len() > 1 {
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
                1.96 * (var / n).sqrt()
            } else {
                0.0
            };
            out.push(PhaseSummary {
                group: g.clone(),
                phase,
                n_runs: xs.len(),
                mean,
                ci_low: mean - half,
                ci_high: mean + half,
            });
        }
    }
    Ok(out)
}
