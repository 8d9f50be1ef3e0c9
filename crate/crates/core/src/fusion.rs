//! Multi-dimensional risk fusion.
//!
//! Four risk dimensions (channel, sensitivity, context, resource) are weighted
//! by the principal eigenvector of a Saaty pairwise-comparison matrix, mapped
//! to fuzzy grade memberships with triangular functions, synthesized and
//! defuzzified into one composite risk in `[0, 1]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::stats;

/// Number of risk dimensions fused by default.
pub const DIMENSIONS: usize = 4;

const POWER_ITERATION_CAP: usize = 10_000;
const POWER_ITERATION_TOL: f64 = 1e-12;
const RECIPROCITY_TOL: f64 = 1e-12;

/// Saaty random consistency index, indexed by matrix order (0-based slot n-1).
const RANDOM_INDEX: [f64; 10] = [0.0, 0.0, 0.52, 0.89, 1.11, 1.25, 1.35, 1.40, 1.45, 1.49];

/// Reciprocal positive matrix of pairwise importance judgements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct PairwiseMatrix {
    entries: Vec<Vec<f64>>,
}

impl PairwiseMatrix {
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self> {
        let n = entries.len();
        if n == 0 {
            return Err(invalid("pairwise matrix is empty"));
        }
        for (i, row) in entries.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if !(v.is_finite() && v > 0.0) {
                    return Err(invalid(format!("entry ({i},{j}) = {v} is not positive")));
                }
            }
            if (row[i] - 1.0).abs() > RECIPROCITY_TOL {
                return Err(invalid(format!("diagonal entry ({i},{i}) = {} is not 1", row[i])));
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let product = entries[i][j] * entries[j][i];
                if (product - 1.0).abs() > RECIPROCITY_TOL {
                    return Err(invalid(format!(
                        "entries ({i},{j}) and ({j},{i}) are not reciprocal"
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    /// Builds the perfectly consistent matrix `w_i / w_j`.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let entries = weights
            .iter()
            .map(|wi| weights.iter().map(|wj| wi / wj).collect())
            .collect();
        Self::new(entries)
    }

    /// The expert matrix used for the default risk weights.
    pub fn default_risk_matrix() -> Self {
        Self::new(vec![
            vec![1.0, 1.0 / 3.0, 0.5, 3.0],
            vec![3.0, 1.0, 2.0, 5.0],
            vec![2.0, 0.5, 1.0, 3.0],
            vec![1.0 / 3.0, 1.0 / 5.0, 1.0 / 3.0, 1.0],
        ])
        .expect("default matrix is reciprocal")
    }

    pub fn order(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.entries
            .iter()
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for PairwiseMatrix {
    type Error = Error;

    fn try_from(entries: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(entries)
    }
}

impl From<PairwiseMatrix> for Vec<Vec<f64>> {
    fn from(m: PairwiseMatrix) -> Self {
        m.entries
    }
}

impl Default for PairwiseMatrix {
    fn default() -> Self {
        Self::default_risk_matrix()
    }
}

/// Normalized dimension weights with their consistency diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnpWeights {
    pub weights: Vec<f64>,
    pub lambda_max: f64,
    pub consistency_ratio: f64,
}

impl AnpWeights {
    /// Wraps an explicit weight vector, renormalizing it to unit sum.
    pub fn from_vector(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroMass);
        }
        let n = weights.len() as f64;
        Ok(Self {
            weights: weights.into_iter().map(|w| w / total).collect(),
            lambda_max: n,
            consistency_ratio: 0.0,
        })
    }
}

/// Principal-eigenvector weights of a pairwise matrix by power iteration.
pub fn anp_weights(matrix: &PairwiseMatrix) -> Result<AnpWeights> {
    let n = matrix.order();
    let mut v = vec![1.0 / n as f64; n];
    let mut converged = false;
    for _ in 0..POWER_ITERATION_CAP {
        let next = matrix.apply(&v);
        let total: f64 = next.iter().sum();
        let next: Vec<f64> = next.into_iter().map(|x| x / total).collect();
        let scale = next.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let delta = next
            .iter()
            .zip(&v)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        v = next;
        if delta <= POWER_ITERATION_TOL * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence {
            iterations: POWER_ITERATION_CAP,
        });
    }
    // v sums to one, so the Rayleigh-style estimate is the sum of C·v.
    let lambda_max: f64 = matrix.apply(&v).iter().sum();
    let consistency_ratio = consistency_ratio(lambda_max, n);
    if consistency_ratio > 0.1 {
        log::warn!("pairwise matrix consistency ratio {consistency_ratio:.3} exceeds 0.1");
    }
    Ok(AnpWeights {
        weights: v,
        lambda_max,
        consistency_ratio,
    })
}

fn consistency_ratio(lambda_max: f64, n: usize) -> f64 {
    if n <= 2 {
        return 0.0;
    }
    let ri = RANDOM_INDEX[(n - 1).min(RANDOM_INDEX.len() - 1)];
    ((lambda_max - n as f64) / ((n as f64 - 1.0) * ri)).max(0.0)
}

/// Triangular membership with shoulders: a degenerate edge (`l == m` or
/// `m == u`) still peaks at 1 on `x == m`.
pub fn triangular_membership(x: f64, l: f64, m: f64, u: f64) -> f64 {
    if x == m {
        return 1.0;
    }
    if x < m {
        if x <= l {
            0.0
        } else {
            (x - l) / (m - l)
        }
    } else if x >= u {
        0.0
    } else {
        (u - x) / (u - m)
    }
}

/// One fuzzy risk grade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grade {
    pub label: String,
    pub l: f64,
    pub m: f64,
    pub u: f64,
    pub representative: f64,
}

impl Grade {
    pub fn membership(&self, x: f64) -> f64 {
        triangular_membership(x, self.l, self.m, self.u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeScheme {
    pub grades: Vec<Grade>,
}

impl GradeScheme {
    pub fn new(grades: Vec<Grade>) -> Result<Self> {
        let scheme = Self { grades };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grades.is_empty() {
            return Err(invalid("grade scheme has no grades"));
        }
        for g in &self.grades {
            if !(g.l <= g.m && g.m <= g.u) {
                return Err(invalid(format!("grade {} violates l <= m <= u", g.label)));
            }
        }
        if self
            .grades
            .windows(2)
            .any(|w| w[0].representative >= w[1].representative)
        {
            return Err(invalid("grade representatives must strictly increase"));
        }
        let lo = self.grades.iter().map(|g| g.l).fold(f64::INFINITY, f64::min);
        let hi = self.grades.iter().map(|g| g.u).fold(f64::NEG_INFINITY, f64::max);
        if lo > 0.0 || hi < 1.0 {
            return Err(invalid("grade supports do not cover [0, 1]"));
        }
        Ok(())
    }

    pub fn representatives(&self) -> Vec<f64> {
        self.grades.iter().map(|g| g.representative).collect()
    }

    pub fn max_representative(&self) -> f64 {
        self.grades
            .iter()
            .map(|g| g.representative)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Default for GradeScheme {
    fn default() -> Self {
        let grade = |label: &str, l, m, u, representative| Grade {
            label: label.to_string(),
            l,
            m,
            u,
            representative,
        };
        Self {
            grades: vec![
                grade("low", 0.0, 0.0, 0.4, 0.2),
                grade("medium", 0.3, 0.5, 0.7, 0.5),
                grade("high", 0.6, 1.0, 1.0, 0.8),
            ],
        }
    }
}

/// Per-dimension risk scores, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskVector {
    pub channel: f64,
    pub sensitivity: f64,
    pub context: f64,
    pub resource: f64,
}

impl RiskVector {
    pub fn new(channel: f64, sensitivity: f64, context: f64, resource: f64) -> Result<Self> {
        let v = Self {
            channel,
            sensitivity,
            context,
            resource,
        };
        if v.as_array().iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(invalid(format!("risk components must lie in [0, 1]: {v:?}")));
        }
        Ok(v)
    }

    pub fn as_array(&self) -> [f64; DIMENSIONS] {
        [self.channel, self.sensitivity, self.context, self.resource]
    }
}

/// Rows are risk dimensions, columns are grades.
pub type RelationMatrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeRisk {
    pub relation: RelationMatrix,
    pub synthesis: Vec<f64>,
    pub r_risk: f64,
}

pub fn fuzzy_relation(risks: &RiskVector, scheme: &GradeScheme) -> RelationMatrix {
    risks
        .as_array()
        .iter()
        .map(|&x| scheme.grades.iter().map(|g| g.membership(x)).collect())
        .collect()
}

/// `B = ω · R`.
pub fn fuzzy_synthesize(weights: &AnpWeights, relation: &[Vec<f64>]) -> Result<Vec<f64>> {
    if weights.weights.len() != relation.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.weights.len(),
            actual: relation.len(),
        });
    }
    let k = relation.first().map_or(0, Vec::len);
    let mut b = vec![0.0; k];
    for (w, row) in weights.weights.iter().zip(relation) {
        if row.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: row.len(),
            });
        }
        for (acc, mu) in b.iter_mut().zip(row) {
            *acc += w * mu;
        }
    }
    Ok(b)
}

/// Representative-weighted average of the synthesis vector.
pub fn defuzzify(synthesis: &[f64], representatives: &[f64]) -> Result<f64> {
    if synthesis.len() != representatives.len() {
        return Err(Error::DimensionMismatch {
            expected: representatives.len(),
            actual: synthesis.len(),
        });
    }
    let mass: f64 = synthesis.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::ZeroMass);
    }
    let weighted: f64 = synthesis.iter().zip(representatives).map(|(b, a)| a * b).sum();
    // A weighted mean lies in the hull of its points; the division can overshoot by an ulp.
    let lo = representatives.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = representatives.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((weighted / mass).clamp(lo, hi))
}

pub fn fuse(risks: &RiskVector, weights: &AnpWeights, scheme: &GradeScheme) -> Result<CompositeRisk> {
    let relation = fuzzy_relation(risks, scheme);
    let synthesis = fuzzy_synthesize(weights, &relation)?;
    let r_risk = defuzzify(&synthesis, &scheme.representatives())?;
    Ok(CompositeRisk {
        relation,
        synthesis,
        r_risk,
    })
}

/// Like [`fuse`], but a zero-mass synthesis maps to the highest-risk grade.
pub fn fuse_conservative(
    risks: &RiskVector,
    weights: &AnpWeights,
    scheme: &GradeScheme,
) -> Result<CompositeRisk> {
    match fuse(risks, weights, scheme) {
        Err(Error::ZeroMass) => {
            let relation = fuzzy_relation(risks, scheme);
            let synthesis = fuzzy_synthesize(weights, &relation)?;
            Ok(CompositeRisk {
                relation,
                synthesis,
                r_risk: scheme.max_representative(),
            })
        }
        other => other,
    }
}

/// Number of equal-width histogram bins used for context entropy.
pub const ENTROPY_BINS: usize = 16;

/// One field participating in the context-risk average.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextField {
    /// Whether the field co-occurs with sensitive information.
    pub sensitive: bool,
    pub samples: Vec<f64>,
}

/// Mean over fields of `indicator * normalized entropy`.
pub fn context_risk(fields: &[ContextField]) -> Result<f64> {
    if fields.is_empty() {
        return Err(invalid("context risk needs at least one field"));
    }
    let mut total = 0.0;
    for field in fields {
        if field.samples.is_empty() {
            return Err(invalid("context field has no samples"));
        }
        if field.sensitive {
            total += stats::histogram_entropy(&field.samples, ENTROPY_BINS)
                / (ENTROPY_BINS as f64).log2();
        }
    }
    Ok((total / fields.len() as f64).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceSnapshot {
    pub mem_usage: f64,
    pub cpu_usage: f64,
    pub mem_normal: f64,
    pub cpu_normal: f64,
    pub mem_max: f64,
    pub cpu_max: f64,
}

impl ResourceSnapshot {
    pub fn validate(&self) -> Result<()> {
        let ok = |normal: f64, max: f64| 0.0 <= normal && normal < max && max <= 1.0;
        if !ok(self.mem_normal, self.mem_max) || !ok(self.cpu_normal, self.cpu_max) {
            return Err(invalid("resource calibration requires 0 <= normal < max <= 1"));
        }
        if !(0.0..=1.0).contains(&self.mem_usage) || !(0.0..=1.0).contains(&self.cpu_usage) {
            return Err(invalid("resource usage must be a fraction"));
        }
        Ok(())
    }
}

/// Larger of the two normalized excesses over baseline, clamped to `[0, 1]`.
pub fn resource_risk(snap: &ResourceSnapshot) -> Result<f64> {
    snap.validate()?;
    let mem = (snap.mem_usage - snap.mem_normal) / (snap.mem_max - snap.mem_normal);
    let cpu = (snap.cpu_usage - snap.cpu_normal) / (snap.cpu_max - snap.cpu_normal);
    Ok(mem.max(cpu).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Location,
    Health,
    Environmental,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub scores: BTreeMap<FieldKind, f64>,
}

impl Default for SensitivityTable {
    fn default() -> Self {
        Self {
            scores: BTreeMap::from([
                (FieldKind::Location, 1.0),
                (FieldKind::Health, 0.8),
                (FieldKind::Environmental, 0.3),
            ]),
        }
    }
}

impl SensitivityTable {
    pub fn validate(&self) -> Result<()> {
        for kind in [FieldKind::Location, FieldKind::Health, FieldKind::Environmental] {
            match self.scores.get(&kind) {
                Some(s) if (0.0..=1.0).contains(s) => {}
                Some(s) => return Err(invalid(format!("sensitivity {s} for {kind:?} outside [0, 1]"))),
                None => return Err(invalid(format!("sensitivity table misses {kind:?}"))),
            }
        }
        Ok(())
    }

    pub fn score(&self, kind: FieldKind) -> f64 {
        self.scores.get(&kind).copied().unwrap_or(1.0)
    }

    /// Mean sensitivity of the transmitted field kinds; zero when none.
    pub fn semantic_risk(&self, kinds: &[FieldKind]) -> f64 {
        if kinds.is_empty() {
            return 0.0;
        }
        kinds.iter().map(|k| self.score(*k)).sum::<f64>() / kinds.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn appendix_risks() -> RiskVector {
        RiskVector::new(0.22, 0.55, 0.65, 0.33).unwrap()
    }

    #[test]
    fn default_matrix_weights_match_worked_example() {
        let w = anp_weights(&PairwiseMatrix::default()).unwrap();
        for (got, want) in w.weights.iter().zip([0.17, 0.48, 0.27, 0.08]) {
            assert!((got - want).abs() <= 0.01, "{got} vs {want}");
        }
        assert!((w.lambda_max - 4.06).abs() <= 0.02, "{}", w.lambda_max);
        assert!(w.consistency_ratio < 0.1);
    }

    #[test]
    fn all_ones_two_by_two() {
        let m = PairwiseMatrix::new(vec![vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let w = anp_weights(&m).unwrap();
        assert_eq!(w.weights, vec![0.5, 0.5]);
        assert!((w.lambda_max - 2.0).abs() < 1e-12);
        assert_eq!(w.consistency_ratio, 0.0);
    }

    #[test]
    fn consistent_two_by_two_closed_form() {
        let m = PairwiseMatrix::new(vec![vec![1.0, 2.0], vec![0.5, 1.0]]).unwrap();
        let w = anp_weights(&m).unwrap();
        assert!((w.weights[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((w.weights[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(PairwiseMatrix::new(vec![vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
        assert!(PairwiseMatrix::new(vec![vec![1.0, -1.0], vec![-1.0, 1.0]]).is_err());
        assert!(PairwiseMatrix::new(vec![vec![2.0, 1.0], vec![1.0, 2.0]]).is_err());
        assert!(PairwiseMatrix::new(vec![vec![1.0, 1.0]]).is_err());
    }

    #[test]
    fn membership_examples() {
        assert!((triangular_membership(0.22, 0.0, 0.0, 0.4) - 0.45).abs() < 1e-12);
        assert!((triangular_membership(0.65, 0.6, 1.0, 1.0) - 0.125).abs() < 1e-12);
        assert_eq!(triangular_membership(0.3, 0.3, 0.5, 0.7), 0.0);
        assert_eq!(triangular_membership(0.1, 0.3, 0.5, 0.7), 0.0);
        assert_eq!(triangular_membership(0.0, 0.0, 0.0, 0.4), 1.0);
        assert_eq!(triangular_membership(1.0, 0.6, 1.0, 1.0), 1.0);
        assert!((triangular_membership(0.2, 0.0, 0.0, 0.4) - 0.5).abs() < 1e-12);
        assert_eq!(triangular_membership(-0.1, 0.0, 0.0, 0.4), 0.0);
    }

    #[test]
    fn relation_matches_worked_example() {
        let r = fuzzy_relation(&appendix_risks(), &GradeScheme::default());
        let expected = [
            [0.45, 0.0, 0.0],
            [0.0, 0.75, 0.0],
            [0.0, 0.25, 0.125],
            [0.175, 0.15, 0.0],
        ];
        for (row, want) in r.iter().zip(expected) {
            for (a, b) in row.iter().zip(want) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn synthesis_selector_and_mismatch() {
        let r = fuzzy_relation(&appendix_risks(), &GradeScheme::default());
        let one_hot = AnpWeights::from_vector(vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(fuzzy_synthesize(&one_hot, &r).unwrap(), r[2]);
        let short = AnpWeights::from_vector(vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            fuzzy_synthesize(&short, &r),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn defuzzify_examples() {
        let r = defuzzify(&[0.09, 0.44, 0.03], &[0.2, 0.5, 0.8]).unwrap();
        assert!((r - 0.47).abs() <= 0.01);
        assert_eq!(defuzzify(&[0.0, 1.0, 0.0], &[0.2, 0.5, 0.8]).unwrap(), 0.5);
        assert!(matches!(defuzzify(&[0.0; 3], &[0.2, 0.5, 0.8]), Err(Error::ZeroMass)));
    }

    #[test]
    fn fuse_extremes() {
        let w = anp_weights(&PairwiseMatrix::default()).unwrap();
        let s = GradeScheme::default();
        let low = fuse(&RiskVector::new(0.0, 0.0, 0.0, 0.0).unwrap(), &w, &s).unwrap();
        assert!((low.r_risk - 0.2).abs() < 1e-12);
        let high = fuse(&RiskVector::new(1.0, 1.0, 1.0, 1.0).unwrap(), &w, &s).unwrap();
        assert!((high.r_risk - 0.8).abs() < 1e-12);
    }

    #[test]
    fn conservative_fallback_on_zero_mass() {
        let w = AnpWeights::from_vector(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let scheme = GradeScheme::new(vec![
            Grade { label: "a".into(), l: 0.0, m: 0.0, u: 0.1, representative: 0.1 },
            Grade { label: "b".into(), l: 0.9, m: 1.0, u: 1.0, representative: 0.9 },
        ])
        .unwrap();
        let risks = RiskVector::new(0.5, 0.0, 0.0, 0.0).unwrap();
        assert!(matches!(fuse(&risks, &w, &scheme), Err(Error::ZeroMass)));
        assert_eq!(fuse_conservative(&risks, &w, &scheme).unwrap().r_risk, 0.9);
    }

    #[test]
    fn context_risk_examples() {
        let uniform: Vec<f64> = (0..ENTROPY_BINS).map(|i| i as f64 + 0.5).collect();
        let sensitive = ContextField { sensitive: true, samples: uniform.clone() };
        let plain = ContextField { sensitive: false, samples: uniform };
        assert!((context_risk(std::slice::from_ref(&sensitive)).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(context_risk(std::slice::from_ref(&plain)).unwrap(), 0.0);
        assert!((context_risk(&[sensitive, plain]).unwrap() - 0.5).abs() < 1e-12);
        assert!(context_risk(&[]).is_err());
    }

    #[test]
    fn resource_risk_examples() {
        let snap = |mem_usage, cpu_usage| ResourceSnapshot {
            mem_usage,
            cpu_usage,
            mem_normal: 0.4,
            cpu_normal: 0.3,
            mem_max: 0.8,
            cpu_max: 0.9,
        };
        assert_eq!(resource_risk(&snap(0.4, 0.3)).unwrap(), 0.0);
        assert_eq!(resource_risk(&snap(0.8, 0.3)).unwrap(), 1.0);
        assert!((resource_risk(&snap(0.6, 0.5)).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(resource_risk(&snap(0.1, 0.1)).unwrap(), 0.0);
        assert_eq!(resource_risk(&snap(1.0, 1.0)).unwrap(), 1.0);
        let mut bad = snap(0.5, 0.5);
        bad.mem_max = 0.3;
        assert!(resource_risk(&bad).is_err());
    }

    #[test]
    fn semantic_risk_uses_table() {
        let t = SensitivityTable::default();
        t.validate().unwrap();
        assert_eq!(t.semantic_risk(&[FieldKind::Location]), 1.0);
        let mixed = t.semantic_risk(&[FieldKind::Health, FieldKind::Environmental]);
        assert!((mixed - 0.55).abs() < 1e-12);
        assert_eq!(t.semantic_risk(&[]), 0.0);
    }
}
