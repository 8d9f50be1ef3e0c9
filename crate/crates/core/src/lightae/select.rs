//! Constrained choice of one variant per block.
//!
//! The objective is the additive accuracy loss Σ U; the constraints cap total
//! latency and memory at a fraction of the teacher's totals. Small libraries
//! are enumerated exhaustively; larger ones fall back to a Lagrangian scan.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::library::{BlockLibrary, VariantProfile};
use crate::error::{invalid, Error, Result};

/// Libraries with at most this many combinations are solved exactly.
pub const EXHAUSTIVE_LIMIT: u128 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Constraints {
    pub latency_reduction_pct: f64,
    pub resource_reduction_pct: f64,
}

impl Constraints {
    pub fn new(latency_reduction_pct: f64, resource_reduction_pct: f64) -> Result<Self> {
        let c = Self {
            latency_reduction_pct,
            resource_reduction_pct,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for p in [self.latency_reduction_pct, self.resource_reduction_pct] {
            if !(0.0..100.0).contains(&p) {
                return Err(invalid(format!("reduction percentage {p} outside [0, 100)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    /// Chosen variant index per block.
    pub choices: Vec<usize>,
    pub memory_bytes: f64,
    pub latency_us: f64,
    pub accuracy_loss: f64,
    /// False when the plan came from the Lagrangian heuristic.
    pub exact: bool,
}

#[derive(Debug, Clone, Copy)]
struct Totals {
    memory: f64,
    latency: f64,
    loss: f64,
}

fn totals(profiles: &[Vec<VariantProfile>], choices: &[usize]) -> Totals {
    let mut t = Totals {
        memory: 0.0,
        latency: 0.0,
        loss: 0.0,
    };
    for (ps, &j) in profiles.iter().zip(choices) {
        t.memory += ps[j].memory_bytes;
        t.latency += ps[j].latency_us;
        t.loss += ps[j].accuracy_loss;
    }
    t
}

/// Lower loss wins, then larger memory, then lower latency.
fn rank(a: &Totals, b: &Totals) -> Ordering {
    a.loss
        .total_cmp(&b.loss)
        .then(b.memory.total_cmp(&a.memory))
        .then(a.latency.total_cmp(&b.latency))
}

struct Budget {
    memory: f64,
    latency: f64,
}

impl Budget {
    fn admits(&self, t: &Totals) -> bool {
        t.memory <= self.memory && t.latency <= self.latency
    }
}

fn budget(profiles: &[Vec<VariantProfile>], c: &Constraints) -> Result<Budget> {
    c.validate()?;
    if profiles.is_empty() || profiles.iter().any(Vec::is_empty) {
        return Err(invalid("every block needs at least one profiled variant"));
    }
    let teacher = totals(profiles, &vec![0; profiles.len()]);
    let b = Budget {
        memory: (1.0 - c.resource_reduction_pct / 100.0) * teacher.memory,
        latency: (1.0 - c.latency_reduction_pct / 100.0) * teacher.latency,
    };
    let min_of = |f: fn(&VariantProfile) -> f64| -> f64 {
        profiles
            .iter()
            .map(|ps| ps.iter().map(f).fold(f64::INFINITY, f64::min))
            .sum()
    };
    let min_memory = min_of(|p| p.memory_bytes);
    if min_memory > b.memory {
        return Err(Error::Infeasible {
            constraint: "memory",
            budget: b.memory,
            minimum: min_memory,
        });
    }
    let min_latency = min_of(|p| p.latency_us);
    if min_latency > b.latency {
        return Err(Error::Infeasible {
            constraint: "latency",
            budget: b.latency,
            minimum: min_latency,
        });
    }
    Ok(b)
}

fn plan(profiles: &[Vec<VariantProfile>], choices: Vec<usize>, exact: bool) -> SelectionPlan {
    let t = totals(profiles, &choices);
    SelectionPlan {
        choices,
        memory_bytes: t.memory,
        latency_us: t.latency,
        accuracy_loss: t.loss,
        exact,
    }
}

/// Minimum-loss plan under the constraints; variant 0 of each block is the
/// teacher and defines the reference totals.
pub fn select_from_profiles(profiles: &[Vec<VariantProfile>], c: &Constraints) -> Result<SelectionPlan> {
    let b = budget(profiles, c)?;
    let combos = profiles
        .iter()
        .try_fold(1u128, |acc, ps| acc.checked_mul(ps.len() as u128));
    match combos {
        Some(n) if n <= EXHAUSTIVE_LIMIT => exhaustive(profiles, &b),
        _ => lagrangian(profiles, &b),
    }
}

fn joint_infeasible(b: &Budget) -> Error {
    Error::JointlyInfeasible {
        memory: b.memory,
        latency: b.latency,
    }
}

/// Odometer enumeration in lexicographic order; only strict improvements
/// replace the incumbent, so ties resolve to the lowest index sequence.
fn exhaustive(profiles: &[Vec<VariantProfile>], b: &Budget) -> Result<SelectionPlan> {
    let n = profiles.len();
    let mut current = vec![0usize; n];
    let mut best: Option<(Vec<usize>, Totals)> = None;
    loop {
        let t = totals(profiles, &current);
        if b.admits(&t) && best.as_ref().is_none_or(|(_, bt)| rank(&t, bt) == Ordering::Less) {
            best = Some((current.clone(), t));
        }
        let mut k = n;
        loop {
            if k == 0 {
                return best
                    .map(|(choices, _)| plan(profiles, choices, true))
                    .ok_or_else(|| joint_infeasible(b));
            }
            k -= 1;
            current[k] += 1;
            if current[k] < profiles[k].len() {
                break;
            }
            current[k] = 0;
        }
    }
}

/// Per-block minimization of `U + λ·(M/M_budget + T/T_budget)` over a
/// geometric grid of multipliers, keeping the best admissible plan.
fn lagrangian(profiles: &[Vec<VariantProfile>], b: &Budget) -> Result<SelectionPlan> {
    let mut best: Option<(Vec<usize>, Totals)> = None;
    let lambdas = std::iter::once(0.0).chain((0..=240).map(|i| 10f64.powf(-6.0 + i as f64 * 0.05)));
    for lambda in lambdas {
        let choices: Vec<usize> = profiles
            .iter()
            .map(|ps| {
                let cost = |p: &VariantProfile| {
                    p.accuracy_loss
                        + lambda * (p.memory_bytes / b.memory.max(f64::MIN_POSITIVE)
                            + p.latency_us / b.latency.max(f64::MIN_POSITIVE))
                };
                (0..ps.len())
                    .min_by(|&x, &y| cost(&ps[x]).total_cmp(&cost(&ps[y])))
                    .expect("nonempty block")
            })
            .collect();
        let t = totals(profiles, &choices);
        if b.admits(&t) && best.as_ref().is_none_or(|(_, bt)| rank(&t, bt) == Ordering::Less) {
            best = Some((choices, t));
        }
    }
    best.map(|(choices, _)| plan(profiles, choices, false))
        .ok_or_else(|| joint_infeasible(b))
}

pub fn select_blocks(library: &BlockLibrary, c: &Constraints) -> Result<SelectionPlan> {
    let chosen = select_from_profiles(&library.profiles()?, c)?;
    log::info!(
        "selected plan {:?}: {:.0} B, {:.1} us, predicted loss {:.3}",
        chosen.choices,
        chosen.memory_bytes,
        chosen.latency_us,
        chosen.accuracy_loss
    );
    Ok(chosen)
}

/// Straightforward reference: materializes every combination and takes the
/// minimum under the same ordering. Exported for oracle checks.
pub fn brute_force_select(profiles: &[Vec<VariantProfile>], c: &Constraints) -> Option<Vec<usize>> {
    let b = budget(profiles, c).ok()?;
    let mut all: Vec<Vec<usize>> = vec![Vec::new()];
    for ps in profiles {
        all = all
            .into_iter()
            .flat_map(|prefix| {
                (0..ps.len()).map(move |j| {
                    let mut next = prefix.clone();
                    next.push(j);
                    next
                })
            })
            .collect();
    }
    all.into_iter()
        .filter(|ch| b.admits(&totals(profiles, ch)))
        .min_by(|x, y| rank(&totals(profiles, x), &totals(profiles, y)).then_with(|| x.cmp(y)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(m: f64, t: f64, u: f64) -> VariantProfile {
        VariantProfile {
            memory_bytes: m,
            latency_us: t,
            accuracy_loss: u,
        }
    }

    fn library() -> Vec<Vec<VariantProfile>> {
        vec![
            vec![p(100.0, 10.0, 0.0), p(50.0, 6.0, 0.5), p(25.0, 4.0, 2.0)],
            vec![p(200.0, 20.0, 0.0), p(100.0, 11.0, 0.2), p(50.0, 6.0, 3.0)],
        ]
    }

    #[test]
    fn unconstrained_keeps_teacher() {
        let plan = select_from_profiles(&library(), &Constraints::default()).unwrap();
        assert_eq!(plan.choices, vec![0, 0]);
        assert_eq!(plan.accuracy_loss, 0.0);
        assert!(plan.exact);
    }

    #[test]
    fn tighter_budgets_trade_accuracy() {
        let lib = library();
        let half = select_from_profiles(&lib, &Constraints::new(50.0, 50.0).unwrap()).unwrap();
        assert!(half.memory_bytes <= 150.0 && half.latency_us <= 15.0);
        assert_eq!(Some(half.choices.clone()), brute_force_select(&lib, &Constraints::new(50.0, 50.0).unwrap()));
    }

    #[test]
    fn infeasible_names_binding_constraint() {
        let err = select_from_profiles(&library(), &Constraints::new(0.0, 80.0).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Infeasible { constraint: "memory", .. }));
        let err = select_from_profiles(&library(), &Constraints::new(80.0, 0.0).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Infeasible { constraint: "latency", .. }));
        assert!(Constraints::new(100.0, 0.0).is_err());
    }

    #[test]
    fn lagrangian_returns_feasible_plan() {
        let lib = library();
        let b = budget(&lib, &Constraints::new(30.0, 30.0).unwrap()).unwrap();
        let approx = lagrangian(&lib, &b).unwrap();
        assert!(!approx.exact);
        assert!(approx.memory_bytes <= b.memory && approx.latency_us <= b.latency);
    }
}
