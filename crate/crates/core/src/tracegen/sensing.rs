//! Synthetic occupancy-sensing task used for utility and attack evaluation.
//!
//! A latent occupancy bit drives all four physical readings; a hidden
//! "service room" property shifts temperature, humidity and voltage. The
//! published label is the occupancy bit with a small flip rate, so a model
//! that memorizes its training rows is distinguishable from one that does not.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::blp::BoundedDomain;
use crate::fusion::FieldKind;

pub const SENSING_FIELDS: usize = 4;

const SPREAD: f64 = 0.08;
const LABEL_FLIP: f64 = 0.05;
const PROPERTY_RATE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    pub domain: BoundedDomain,
}

/// The four transmitted sensing fields with their physical bounds.
pub fn sensing_fields() -> Vec<FieldSpec> {
    let field = |name: &str, lower, upper| FieldSpec {
        name: name.to_string(),
        kind: FieldKind::Environmental,
        domain: BoundedDomain { lower, upper },
    };
    vec![
        field("temperature", 10.0, 40.0),
        field("humidity", 10.0, 70.0),
        field("light", 0.0, 1000.0),
        field("voltage", 2.0, 3.0),
    ]
}

pub fn sensing_domains() -> Vec<BoundedDomain> {
    sensing_fields().into_iter().map(|f| f.domain).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingRow {
    pub values: [f64; SENSING_FIELDS],
    pub label: bool,
    pub property: bool,
}

// Relative shift of each field (in domain units) for occupancy and property.
/// Normalized position of each field in an empty room, and how far occupancy
/// moves it: lights dominate, supply voltage barely reacts.
const VACANT_POSITION: [f64; SENSING_FIELDS] = [0.2, 0.8, 0.1, 0.4];
const OCCUPANCY_SHIFT: [f64; SENSING_FIELDS] = [0.6, -0.6, 0.8, 0.2];
const PROPERTY_SHIFT: [f64; SENSING_FIELDS] = [0.12, 0.15, 0.0, -0.12];

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic row source: the same `(seed, stream, index)` always yields
/// the same row, so the edge can regenerate ground truth for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensingSource {
    pub seed: u64,
}

impl SensingSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn row(&self, stream: u64, index: u64) -> SensingRow {
        let key = splitmix(splitmix(self.seed ^ 0x5EED) ^ stream.wrapping_mul(0x1_0000_0001)) ^ index;
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(key));
        let occupied = rng.random_bool(0.5);
        let property = rng.random_bool(PROPERTY_RATE);
        let noise = Normal::new(0.0, SPREAD).expect("positive sd");
        let domains = sensing_domains();
        let mut values = [0.0; SENSING_FIELDS];
        for (k, v) in values.iter_mut().enumerate() {
            let mut pos = VACANT_POSITION[k] + if occupied { OCCUPANCY_SHIFT[k] } else { 0.0 };
            if property {
                pos += PROPERTY_SHIFT[k];
            }
            pos = (pos + noise.sample(&mut rng)).clamp(0.0, 1.0);
            *v = domains[k].lower + pos * domains[k].sensitivity();
        }
        let label = occupied ^ rng.random_bool(LABEL_FLIP);
        SensingRow {
            values,
            label,
            property,
        }
    }

    pub fn rows(&self, stream: u64, range: std::ops::Range<u64>) -> Vec<SensingRow> {
        range.map(|i| self.row(stream, i)).collect()
    }
}

/// Smooth daily temperature cycle with slow drift, sampled every 15 minutes.
/// Used as the target of reconstruction attacks.
pub fn diurnal_series(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ 0xD1A1));
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let step = Normal::new(0.0, 0.05).expect("positive sd");
    let domain = sensing_domains()[0];
    let mut drift = 0.0_f64;
    (0..len)
        .map(|i| {
            drift = 0.98 * drift + step.sample(&mut rng);
            let t = std::f64::consts::TAU * i as f64 / 96.0 + phase;
            (25.0 + 8.0 * t.sin() + drift).clamp(domain.lower, domain.upper)
        })
        .collect()
}

/// Column-major view convenient for the evaluators.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensingData {
    pub features: Vec<[f64; SENSING_FIELDS]>,
    pub labels: Vec<bool>,
    pub properties: Vec<bool>,
}

impl SensingData {
    pub fn generate(n: usize, seed: u64) -> Self {
        Self::from_rows(&SensingSource::new(seed).rows(0, 0..n as u64))
    }

    pub fn from_rows(rows: &[SensingRow]) -> Self {
        Self {
            features: rows.iter().map(|r| r.values).collect(),
            labels: rows.iter().map(|r| r.label).collect(),
            properties: rows.iter().map(|r| r.property).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> crate::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = sensing_fields().into_iter().map(|f| f.name).collect();
        header.extend(["label".to_string(), "property".to_string()]);
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.features[i].iter().map(f64::to_string).collect();
            rec.push(u8::from(self.labels[i]).to_string());
            rec.push(u8::from(self.properties[i]).to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_deterministic_and_in_domain() {
        let src = SensingSource::new(4);
        let domains = sensing_domains();
        for i in 0..500 {
            let row = src.row(2, i);
            assert_eq!(row, src.row(2, i));
            for (v, d) in row.values.iter().zip(&domains) {
                assert!(d.contains(*v));
            }
        }
        assert_ne!(src.row(0, 0), src.row(1, 0));
    }

    #[test]
    fn labels_are_balanced_and_property_is_minority() {
        let data = SensingData::generate(4000, 1);
        let pos = data.labels.iter().filter(|&&l| l).count() as f64 / 4000.0;
        let prop = data.properties.iter().filter(|&&p| p).count() as f64 / 4000.0;
        assert!((pos - 0.5).abs() < 0.04, "{pos}");
        assert!((prop - 0.3).abs() < 0.04, "{prop}");
    }
}
