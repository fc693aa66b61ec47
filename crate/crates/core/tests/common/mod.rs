//! Independent oracles shared by the integration and acceptance suites.
//!
//! Nothing here goes through the simplex or branch-and-bound code paths,
//! except the binary-enumeration oracle, which by design solves each fixed
//! assignment with the plain LP solver.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surro2sp_core::lp::{solve_lp, LinearProgram, LpStatus, Relation};
use surro2sp_core::milp::{fix_binaries, MilpModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Solves a dense square system by Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn combinations(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Brute-force LP optimum over all basic solutions of a program whose
/// variables all have finite bounds. `None` means infeasible.
pub fn vertex_enumeration(lp: &LinearProgram) -> Option<f64> {
    let n = lp.n_vars();
    // Candidate hyperplanes: every row and every bound.
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for row in lp.constraints() {
        let mut a = vec![0.0; n];
        for &(j, v) in &row.terms {
            a[j] += v;
        }
        planes.push((a, row.rhs));
    }
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        planes.push((e.clone(), lp.lower()[j]));
        planes.push((e, lp.upper()[j]));
    }
    let mut best: Option<f64> = None;
    combinations(planes.len(), n, |pick| {
        let a: Vec<Vec<f64>> = pick.iter().map(|&p| planes[p].0.clone()).collect();
        let b: Vec<f64> = pick.iter().map(|&p| planes[p].1).collect();
        if let Some(x) = solve_dense(a, b) {
            if lp.max_violation(&x) <= 1e-9 {
                let obj = lp.evaluate(&x);
                if best.is_none_or(|v| obj < v) {
                    best = Some(obj);
                }
            }
        }
    });
    best
}

pub fn random_relation(rng: &mut ChaCha8Rng) -> Relation {
    match rng.random_range(0..6) {
        0 => Relation::Eq,
        1 | 2 => Relation::Ge,
        _ => Relation::Le,
    }
}

/// Random LP with finite boxes; rhs is built around a random interior point
/// so most instances are feasible.
pub fn random_lp(rng: &mut ChaCha8Rng, n: usize, m: usize) -> LinearProgram {
    let mut lp = LinearProgram::new();
    let mut anchor = Vec::with_capacity(n);
    for _ in 0..n {
        let lo = rng.random_range(-5.0..0.0);
        let hi = rng.random_range(0.5..5.0);
        lp.add_var(lo, hi, rng.random_range(-3.0..3.0)).unwrap();
        anchor.push(rng.random_range(lo..hi));
    }
    for _ in 0..m {
        let coeffs: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.8) { rng.random_range(-3.0..3.0) } else { 0.0 })
            .collect();
        let act: f64 = coeffs.iter().zip(&anchor).map(|(a, x)| a * x).sum();
        let rel = random_relation(rng);
        let rhs = match rel {
            Relation::Eq => act,
            Relation::Le => act + rng.random_range(-1.0..2.0),
            Relation::Ge => act - rng.random_range(-1.0..2.0),
        };
        lp.add_dense_constraint(&coeffs, rel, rhs).unwrap();
    }
    lp
}

/// Random MILP with `nb` binaries and `nc` bounded continuous variables.
pub fn random_milp(rng: &mut ChaCha8Rng, nb: usize, nc: usize, m: usize) -> MilpModel {
    let mut model = MilpModel::new();
    let mut anchor = Vec::new();
    for i in 0..nb {
        model.add_binary(format!("b{i}"), rng.random_range(-5.0..5.0)).unwrap();
        anchor.push(if rng.random_bool(0.5) { 1.0 } else { 0.0 });
    }
    for i in 0..nc {
        let lo = rng.random_range(-4.0..0.0);
        let hi = rng.random_range(0.5..4.0);
        model.add_continuous(format!("y{i}"), lo, hi, rng.random_range(-2.0..2.0)).unwrap();
        anchor.push(rng.random_range(lo..hi));
    }
    let n = nb + nc;
    for _ in 0..m {
        let mut terms = Vec::new();
        for j in 0..n {
            if rng.random_bool(0.5) {
                terms.push((j, rng.random_range(-4.0..4.0)));
            }
        }
        let act: f64 = terms.iter().map(|&(j, a)| a * anchor[j]).sum();
        let rel = if rng.random_bool(0.15) { Relation::Eq } else { random_relation(rng) };
        let rhs = match rel {
            Relation::Eq => act,
            Relation::Le => act + rng.random_range(-0.5..1.5),
            Relation::Ge => act - rng.random_range(-0.5..1.5),
        };
        model.add_constraint(&terms, rel, rhs).unwrap();
    }
    model
}

/// Exhaustive enumeration over every binary assignment, each completed by an LP solve.
pub fn binary_enumeration(model: &MilpModel) -> Option<f64> {
    let bins = model.binaries();
    assert!(bins.len() <= 16, "enumeration oracle is exponential");
    let mut best: Option<f64> = None;
    for mask in 0u32..(1u32 << bins.len()) {
        let assignment: BTreeMap<usize, bool> =
            bins.iter().enumerate().map(|(k, &j)| (j, mask >> k & 1 == 1)).collect();
        let fixed = fix_binaries(model, &assignment).unwrap();
        let out = solve_lp(fixed.lp(), 1e-9).unwrap();
        if out.status == LpStatus::Optimal && best.is_none_or(|b| out.objective < b) {
            best = Some(out.objective);
        }
    }
    best
}
