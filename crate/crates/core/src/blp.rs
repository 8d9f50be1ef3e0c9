//! Bounded Laplace mechanism.
//!
//! The release density is a Laplace kernel centred on the true value,
//! truncated to `[l, u]` and renormalized by
//! `C(x) = 1 - ½·exp(-(x-l)/b) - ½·exp(-(u-x)/b)` with `b = (u - l) / ε`.
//! Sampling inverts the closed-form truncated CDF, so one uniform draw maps to
//! exactly one release.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundedDomain {
    pub lower: f64,
    pub upper: f64,
}

impl BoundedDomain {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(invalid(format!("domain requires l < u, got [{lower}, {upper}]")));
        }
        Ok(Self { lower, upper })
    }

    /// Global sensitivity `Δ = u - l`.
    pub fn sensitivity(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lower..=self.upper).contains(&x)
    }

    fn check(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                value: x,
                lower: self.lower,
                upper: self.upper,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(invalid(format!("privacy budget must be positive, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }

    /// Laplace scale `b = Δ / ε` for the given domain.
    pub fn scale(&self, domain: &BoundedDomain) -> f64 {
        domain.sensitivity() / self.epsilon
    }
}

fn check_scale(b: f64) -> Result<()> {
    if b.is_finite() && b > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("Laplace scale must be positive, got {b}")))
    }
}

/// Probability mass the untruncated Laplace kernel puts on `[l, u]`.
pub fn normalization_constant(x: f64, domain: &BoundedDomain, b: f64) -> Result<f64> {
    domain.check(x)?;
    check_scale(b)?;
    Ok(1.0 - 0.5 * (-(x - domain.lower) / b).exp() - 0.5 * (-(domain.upper - x) / b).exp())
}

/// Release density `f_w(x*)` for true value `x`.
pub fn density(released: f64, x: f64, domain: &BoundedDomain, b: f64) -> Result<f64> {
    let c = normalization_constant(x, domain, b)?;
    if !domain.contains(released) {
        return Ok(0.0);
    }
    Ok((-(released - x).abs() / b).exp() / (2.0 * b * c))
}

/// Untruncated Laplace CDF centred at `x`.
fn laplace_cdf(t: f64, x: f64, b: f64) -> f64 {
    if t < x {
        0.5 * ((t - x) / b).exp()
    } else {
        1.0 - 0.5 * (-(t - x) / b).exp()
    }
}

/// CDF of the bounded release at `t`.
pub fn cdf(t: f64, x: f64, domain: &BoundedDomain, b: f64) -> Result<f64> {
    let c = normalization_constant(x, domain, b)?;
    if t <= domain.lower {
        return Ok(0.0);
    }
    if t >= domain.upper {
        return Ok(1.0);
    }
    let low = laplace_cdf(domain.lower, x, b);
    Ok(((laplace_cdf(t, x, b) - low) / c).clamp(0.0, 1.0))
}

/// Inverse CDF: maps a uniform draw `v ∈ [0, 1]` to a release in `[l, u]`.
pub fn inverse_cdf(v: f64, x: f64, domain: &BoundedDomain, b: f64) -> Result<f64> {
    let c = normalization_constant(x, domain, b)?;
    let low = laplace_cdf(domain.lower, x, b);
    let p = low + v.clamp(0.0, 1.0) * c;
    let t = if p < 0.5 {
        x + b * (2.0 * p).ln()
    } else {
        x - b * (2.0 * (1.0 - p)).ln()
    };
    // ulp-level excursions past the bounds are absorbed here.
    Ok(t.clamp(domain.lower, domain.upper))
}

/// Draws one bounded Laplace release of `x`.
pub fn sample<R: Rng + ?Sized>(
    x: f64,
    domain: &BoundedDomain,
    budget: PrivacyBudget,
    rng: &mut R,
) -> Result<f64> {
    let v: f64 = rng.random();
    inverse_cdf(v, x, domain, budget.scale(domain))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub mechanism: String,
    pub epsilon: f64,
}

/// Append-only sequential-composition accountant. The running total is the
/// correctly rounded sum of all recorded budgets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    entries: Vec<LedgerEntry>,
    #[serde(skip)]
    partials: Vec<f64>,
}

impl BudgetLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, mechanism: impl Into<String>, budget: PrivacyBudget) {
        self.entries.push(LedgerEntry {
            mechanism: mechanism.into(),
            epsilon: budget.epsilon,
        });
        add_partial(&mut self.partials, budget.epsilon);
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total privacy loss of the composed mechanisms.
    pub fn total(&self) -> f64 {
        if self.partials.is_empty() && !self.entries.is_empty() {
            // Deserialized ledgers rebuild their partials lazily.
            return compose(self.entries.iter().map(|e| e.epsilon));
        }
        round_partials(&self.partials)
    }
}

/// Exact (correctly rounded) sum of a budget sequence.
pub fn compose(budgets: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials = Vec::new();
    for eps in budgets {
        add_partial(&mut partials, eps);
    }
    round_partials(&partials)
}

// Shewchuk's non-overlapping partials, as in Python's math.fsum.
fn add_partial(partials: &mut Vec<f64>, mut x: f64) {
    let mut i = 0;
    for j in 0..partials.len() {
        let mut y = partials[j];
        if x.abs() < y.abs() {
            std::mem::swap(&mut x, &mut y);
        }
        let hi = x + y;
        let lo = y - (hi - x);
        if lo != 0.0 {
            partials[i] = lo;
            i += 1;
        }
        x = hi;
    }
    partials.truncate(i);
    partials.push(x);
}

fn round_partials(partials: &[f64]) -> f64 {
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    // Half-way case: break the tie using the sign of the remaining partials.
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        let yr = x - hi;
        if y == yr {
            hi = x;
        }
    }
    hi
}

/// Perturbs every field of a record independently and books each budget.
pub fn perturb_record<R: Rng + ?Sized>(
    record: &[f64],
    domains: &[BoundedDomain],
    budgets: &[PrivacyBudget],
    rng: &mut R,
    ledger: &mut BudgetLedger,
) -> Result<Vec<f64>> {
    if domains.len() < record.len() {
        return Err(invalid(format!(
            "field {} has no bounds ({} domains for {} fields)",
            domains.len(),
            domains.len(),
            record.len()
        )));
    }
    if budgets.len() < record.len() {
        return Err(invalid(format!(
            "field {} has no budget ({} budgets for {} fields)",
            budgets.len(),
            budgets.len(),
            record.len()
        )));
    }
    let mut out = Vec::with_capacity(record.len());
    for (i, &x) in record.iter().enumerate() {
        out.push(sample(x, &domains[i], budgets[i], rng)?);
    }
    for (i, budget) in budgets.iter().take(record.len()).enumerate() {
        ledger.record(format!("blp:field{i}"), *budget);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit() -> BoundedDomain {
        BoundedDomain::new(0.0, 1.0).unwrap()
    }

    #[test]
    fn normalization_examples() {
        let c = normalization_constant(0.5, &unit(), 0.25).unwrap();
        assert!((c - (1.0 - (-2.0_f64).exp())).abs() < 1e-15);
        assert!((c - 0.864_664_716_763_387_3).abs() < 1e-12);
        let edge = normalization_constant(0.0, &unit(), 0.25).unwrap();
        assert!((edge - 0.5 * (1.0 - (-4.0_f64).exp())).abs() < 1e-15);
        assert!(normalization_constant(1.5, &unit(), 0.25).is_err());
        assert!(normalization_constant(0.5, &unit(), 0.0).is_err());
    }

    #[test]
    fn normalization_is_symmetric() {
        let d = BoundedDomain::new(-2.0, 5.0).unwrap();
        for x in [-2.0, -1.0, 0.3, 1.5, 4.9] {
            let a = normalization_constant(x, &d, 0.7).unwrap();
            let b = normalization_constant(d.lower + d.upper - x, &d, 0.7).unwrap();
            assert!((a - b).abs() < 1e-14);
            assert!(a > 0.0 && a < 1.0);
        }
    }

    #[test]
    fn inverse_cdf_round_trips() {
        let d = BoundedDomain::new(10.0, 40.0).unwrap();
        for &x in &[10.0, 12.0, 25.0, 39.0, 40.0] {
            for &v in &[0.0, 0.1, 0.5, 0.77, 1.0] {
                let t = inverse_cdf(v, x, &d, 6.0).unwrap();
                assert!(d.contains(t));
                assert!((cdf(t, x, &d, 6.0).unwrap() - v).abs() < 1e-9, "x={x} v={v}");
            }
        }
    }

    #[test]
    fn samples_stay_in_domain_and_reject_outside() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = unit();
        let eps = PrivacyBudget::new(0.01).unwrap();
        for _ in 0..1000 {
            assert!(d.contains(sample(0.999, &d, eps, &mut rng).unwrap()));
        }
        assert!(sample(1.01, &d, eps, &mut rng).is_err());
    }

    #[test]
    fn perturb_record_books_budgets() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut ledger = BudgetLedger::new();
        let out = perturb_record(&[], &[], &[], &mut rng, &mut ledger).unwrap();
        assert!(out.is_empty() && ledger.is_empty());

        let domains = vec![unit(); 4];
        let budgets: Vec<_> = [1.0, 1.0, 2.0, 2.0]
            .iter()
            .map(|&e| PrivacyBudget::new(e).unwrap())
            .collect();
        let out = perturb_record(&[0.1, 0.5, 0.9, 0.0], &domains, &budgets, &mut rng, &mut ledger)
            .unwrap();
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(ledger.total(), 6.0);

        let err = perturb_record(&[0.1, 0.2], &domains[..1], &budgets, &mut rng, &mut ledger);
        assert!(err.is_err());
        assert_eq!(ledger.len(), 4);
    }

    #[test]
    fn compose_examples() {
        assert_eq!(compose([1.0, 2.0, 3.0]), 6.0);
        assert_eq!(compose([]), 0.0);
        assert_eq!(compose([0.7]), 0.7);
        // Naive left-to-right summation gives 0.6000000000000001 here.
        assert_eq!(compose([0.1, 0.2, 0.3]), 0.6);
    }

    #[test]
    fn ledger_survives_serialization() {
        let mut ledger = BudgetLedger::new();
        ledger.record("a", PrivacyBudget::new(0.1).unwrap());
        ledger.record("b", PrivacyBudget::new(0.2).unwrap());
        let json = serde_json::to_string(&ledger).unwrap();
        let back: BudgetLedger = serde_json::from_str(&json).unwrap();
        assert_eq!(back.total(), ledger.total());
        assert_eq!(back.entries(), ledger.entries());
    }
}
