//! NSGA-II building blocks: nondominated sorting, crowding, tournament
//! selection, SBX crossover and polynomial mutation.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Whether `a` Pareto-dominates `b` under minimization.
pub fn dominates<const M: usize>(a: &[f64; M], b: &[f64; M]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// Fast nondominated sort. Returns each point's front (1-based) and its
/// crowding distance within that front.
pub fn pareto_rank<const M: usize>(objs: &[[f64; M]]) -> Vec<(usize, f64)> {
    let n = objs.len();
    let mut dominated: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut count = vec![0usize; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates(&objs[i], &objs[j]) {
                dominated[i].push(j);
                count[j] += 1;
            } else if dominates(&objs[j], &objs[i]) {
                dominated[j].push(i);
                count[i] += 1;
            }
        }
    }
    let mut out = vec![(0usize, 0.0f64); n];
    let mut front: Vec<usize> = (0..n).filter(|&i| count[i] == 0).collect();
    let mut level = 1;
    while !front.is_empty() {
        for (i, c) in front.iter().zip(crowding(objs, &front)) {
            out[*i] = (level, c);
        }
        let mut next = Vec::new();
        for &i in &front {
            for &j in &dominated[i] {
                count[j] -= 1;
                if count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        front = next;
        level += 1;
    }
    out
}

/// Crowding distances of the members of one front; boundary points get
/// infinity.
pub fn crowding<const M: usize>(objs: &[[f64; M]], front: &[usize]) -> Vec<f64> {
    let n = front.len();
    let mut d = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    for m in 0..M {
        order.sort_by(|&a, &b| objs[front[a]][m].total_cmp(&objs[front[b]][m]).then(a.cmp(&b)));
        let lo = objs[front[order[0]]][m];
        let hi = objs[front[order[n - 1]]][m];
        d[order[0]] = f64::INFINITY;
        d[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range <= 0.0 || !range.is_finite() {
            continue;
        }
        for k in 1..n - 1 {
            d[order[k]] += (objs[front[order[k + 1]]][m] - objs[front[order[k - 1]]][m]) / range;
        }
    }
    d
}

/// Crowded-comparison order: lower rank first, then larger crowding.
pub fn crowded_cmp(a: (usize, f64), b: (usize, f64)) -> Ordering {
    a.0.cmp(&b.0).then(b.1.total_cmp(&a.1))
}

/// Binary tournament on crowded comparison; returns `n` winner indices.
pub fn tournament<R: Rng + ?Sized>(ranked: &[(usize, f64)], n: usize, rng: &mut R) -> Vec<usize> {
    let len = ranked.len();
    (0..n)
        .map(|_| {
            let a = rng.random_range(0..len);
            let b = if len > 1 { (a + rng.random_range(1..len)) % len } else { a };
            match crowded_cmp(ranked[a], ranked[b]) {
                Ordering::Less => a,
                Ordering::Greater => b,
                Ordering::Equal => {
                    if rng.random_bool(0.5) {
                        a
                    } else {
                        b
                    }
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationConfig {
    pub sbx_prob: f64,
    pub sbx_eta: f64,
    pub pm_prob: f64,
    pub pm_eta: f64,
}

/// SBX children of one pair of genes, before any clipping.
pub fn sbx_pair(p1: f64, p2: f64, eta: f64, u: f64) -> (f64, f64) {
    let beta = if u <= 0.5 {
        (2.0 * u).powf(1.0 / (eta + 1.0))
    } else {
        (1.0 / (2.0 * (1.0 - u))).powf(1.0 / (eta + 1.0))
    };
    (
        0.5 * ((1.0 + beta) * p1 + (1.0 - beta) * p2),
        0.5 * ((1.0 - beta) * p1 + (1.0 + beta) * p2),
    )
}

/// Bounded polynomial mutation of one gene.
pub fn polynomial_mutation(y: f64, lo: f64, hi: f64, eta: f64, u: f64) -> f64 {
    let range = hi - lo;
    if range <= 0.0 {
        return y;
    }
    let d1 = (y - lo) / range;
    let d2 = (hi - y) / range;
    let pow = 1.0 / (eta + 1.0);
    let dq = if u < 0.5 {
        let v = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1).max(0.0).powf(eta + 1.0);
        v.powf(pow) - 1.0
    } else {
        let v = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2).max(0.0).powf(eta + 1.0);
        1.0 - v.powf(pow)
    };
    y + dq * range
}

/// Offspring of consecutive parent pairs: SBX with probability `sbx_prob`
/// per pair (each gene crossed with probability 1/2), then per-gene
/// polynomial mutation, then clipping to bounds.
pub fn variation<const D: usize, R: Rng + ?Sized>(
    parents: &[[f64; D]],
    cfg: &VariationConfig,
    lower: &[f64; D],
    upper: &[f64; D],
    rng: &mut R,
) -> Vec<[f64; D]> {
    let mut out: Vec<[f64; D]> = Vec::with_capacity(parents.len());
    for pair in parents.chunks(2) {
        let mut a = pair[0];
        let mut b = *pair.get(1).unwrap_or(&pair[0]);
        if pair.len() == 2 && rng.random_bool(cfg.sbx_prob) {
            for g in 0..D {
                if rng.random_bool(0.5) && (a[g] - b[g]).abs() > 1e-14 {
                    let (c1, c2) = sbx_pair(a[g], b[g], cfg.sbx_eta, rng.random());
                    a[g] = c1;
                    b[g] = c2;
                }
            }
        }
        for child in [&mut a, &mut b].into_iter().take(pair.len()) {
            for g in 0..D {
                child[g] = child[g].clamp(lower[g], upper[g]);
                if rng.random_bool(cfg.pm_prob) {
                    child[g] = polynomial_mutation(child[g], lower[g], upper[g], cfg.pm_eta, rng.random())
                        .clamp(lower[g], upper[g]);
                }
            }
        }
        out.push(a);
        if pair.len() == 2 {
            out.push(b);
        }
    }
    out
}
