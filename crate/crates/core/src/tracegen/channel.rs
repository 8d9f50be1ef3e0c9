//! Synthetic channel telemetry with labeled anomaly bursts.
//!
//! Baselines are reflected Gaussian random walks inside the profile ranges.
//! Each injector rewrites contiguous bursts of still-normal samples, so the
//! four anomaly classes never overlap.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Longest contiguous anomaly burst.
pub const BURST_LEN: usize = 20;

/// Share of the test split taken by each anomaly class.
pub const ANOMALY_FRACTION: f64 = 0.05;

const WALK_STEP: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Profile {
    #[serde(rename = "FD")]
    Fd,
    #[serde(rename = "SD")]
    Sd,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FD" => Ok(Profile::Fd),
            "SD" => Ok(Profile::Sd),
            other => Err(invalid(format!("unknown trace profile {other:?}"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Fd => "FD",
            Profile::Sd => "SD",
        })
    }
}

/// Ranges, sizes and column names of one capture profile.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceProfile {
    pub profile: Profile,
    pub signal: (f64, f64),
    pub quality: (f64, f64),
    pub ping: (f64, f64),
    pub total: usize,
    pub train: usize,
    pub test: usize,
    pub interval_secs: f64,
    pub columns: [&'static str; 3],
}

impl Profile {
    pub fn spec(self) -> TraceProfile {
        match self {
            Profile::Fd => TraceProfile {
                profile: self,
                signal: (-55.0, -45.0),
                quality: (53.0, 57.0),
                ping: (2.0, 10.0),
                total: 9_914,
                train: 4_310,
                test: 5_604,
                interval_secs: 24.0 * 3600.0 / 9_914.0,
                columns: ["rssi", "link_quality", "ping_delay"],
            },
            Profile::Sd => TraceProfile {
                profile: self,
                signal: (80.0, 85.0),
                quality: (115.0, 230.0),
                ping: (2.0, 10.0),
                total: 16_998,
                train: 7_692,
                test: 9_306,
                interval_secs: 40.0 * 3600.0 / 16_998.0,
                columns: ["signal_strength", "transmit_rate", "ping_latency"],
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Physical,
    Network,
    Hardware,
    Adversarial,
}

impl Label {
    pub const ALL: [Label; 5] = [
        Label::Normal,
        Label::Physical,
        Label::Network,
        Label::Hardware,
        Label::Adversarial,
    ];

    pub fn is_anomaly(self) -> bool {
        self != Label::Normal
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Physical => "physical",
            Label::Network => "network",
            Label::Hardware => "hardware",
            Label::Adversarial => "adversarial",
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Label::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Format(format!("unknown label {s:?}")))
    }
}

/// One telemetry reading. `signal` is RSSI (FD) or signal strength (SD),
/// `quality` is link quality (FD) or transmit rate (SD).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSample {
    pub timestamp: f64,
    pub signal: f64,
    pub quality: f64,
    pub ping: f64,
    pub label: Label,
}

impl ChannelSample {
    pub fn features(&self) -> [f64; 3] {
        [self.signal, self.quality, self.ping]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub profile: Profile,
    pub samples: Vec<ChannelSample>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    /// Feature rows as `[signal, quality, ping]`.
    pub fn features(&self) -> Vec<[f64; 3]> {
        self.samples.iter().map(ChannelSample::features).collect()
    }

    pub fn anomaly_flags(&self) -> Vec<bool> {
        self.samples.iter().map(|s| s.label.is_anomaly()).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let spec = self.profile.spec();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["timestamp", spec.columns[0], spec.columns[1], spec.columns[2], "label"])?;
        for s in &self.samples {
            w.write_record([
                s.timestamp.to_string(),
                s.signal.to_string(),
                s.quality.to_string(),
                s.ping.to_string(),
                s.label.as_str().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        crate::codec::write_atomic(path, &buf)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let profile = [Profile::Fd, Profile::Sd]
            .into_iter()
            .find(|p| headers.get(1) == Some(p.spec().columns[0]))
            .ok_or_else(|| Error::Format(format!("unrecognized trace header {headers:?}")))?;
        let mut samples = Vec::new();
        for record in r.records() {
            let record = record?;
            let num = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .ok_or_else(|| Error::Format("short row".into()))?
                    .parse()
                    .map_err(|e| Error::Format(format!("column {i}: {e}")))
            };
            samples.push(ChannelSample {
                timestamp: num(0)?,
                signal: num(1)?,
                quality: num(2)?,
                ping: num(3)?,
                label: record.get(4).unwrap_or("").parse()?,
            });
        }
        Ok(Self { profile, samples })
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

fn reflect(mut x: f64, lo: f64, hi: f64) -> f64 {
    for _ in 0..8 {
        if x > hi {
            x = 2.0 * hi - x;
        } else if x < lo {
            x = 2.0 * lo - x;
        } else {
            return x;
        }
    }
    x.clamp(lo, hi)
}

/// Clean telemetry: each feature walks inside its range with reflection.
pub fn gen_baseline(profile: Profile, count: usize, seed: u64) -> Result<Trace> {
    if count == 0 {
        return Err(invalid("baseline needs at least one sample"));
    }
    let spec = profile.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranges = [spec.signal, spec.quality, spec.ping];
    let mut state: Vec<f64> = ranges.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect();
    let steps: Vec<Normal<f64>> = ranges
        .iter()
        .map(|&(lo, hi)| Normal::new(0.0, WALK_STEP * (hi - lo)).expect("positive sd"))
        .collect();
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        if i > 0 {
            for (k, x) in state.iter_mut().enumerate() {
                let (lo, hi) = ranges[k];
                *x = reflect(*x + steps[k].sample(&mut rng), lo, hi);
            }
        }
        samples.push(ChannelSample {
            timestamp: i as f64 * spec.interval_secs,
            signal: state[0],
            quality: state[1],
            ping: state[2],
            label: Label::Normal,
        });
    }
    Ok(Trace { profile, samples })
}

/// Picks exactly `count` still-normal indices (fewer only if the trace runs
/// out), grouped into contiguous bursts of at most [`BURST_LEN`].
fn select_bursts(trace: &Trace, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let n = trace.len();
    let mut free: Vec<bool> = trace.samples.iter().map(|s| !s.label.is_anomaly()).collect();
    let mut remaining = count.min(free.iter().filter(|&&f| f).count());
    let mut bursts = Vec::new();
    while remaining > 0 {
        let want = remaining.min(BURST_LEN);
        let mut start = rng.random_range(0..n);
        if !free[start] {
            // Slide to the next free slot, wrapping around.
            start = (0..n)
                .map(|k| (start + k) % n)
                .find(|&i| free[i])
                .expect("remaining > 0 implies a free slot");
        }
        let mut burst = Vec::with_capacity(want);
        let mut i = start;
        while i < n && free[i] && burst.len() < want {
            free[i] = false;
            burst.push(i);
            i += 1;
        }
        remaining -= burst.len();
        bursts.push(burst);
    }
    bursts.sort_by_key(|b| b[0]);
    bursts
}

fn check_fraction(fraction: f64) -> Result<()> {
    if (0.0..=1.0).contains(&fraction) {
        Ok(())
    } else {
        Err(invalid(format!("anomaly fraction {fraction} outside [0, 1]")))
    }
}

fn inject<F>(mut trace: Trace, fraction: f64, seed: u64, label: Label, mut edit: F) -> Result<Trace>
where
    F: FnMut(&mut ChannelSample, f64, &mut ChaCha8Rng),
{
    check_fraction(fraction)?;
    let count = (fraction * trace.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for burst in select_bursts(&trace, count, &mut rng) {
        let len = burst.len();
        for (j, &i) in burst.iter().enumerate() {
            let position = if len > 1 { j as f64 / (len - 1) as f64 } else { 0.0 };
            let sample = &mut trace.samples[i];
            edit(sample, position, &mut rng);
            sample.label = label;
        }
    }
    Ok(trace)
}

/// Signal attenuation with short-term fluctuation and degraded link quality.
pub fn inject_physical(trace: Trace, fraction: f64, seed: u64) -> Result<Trace> {
    let profile = trace.profile;
    inject(trace, fraction, seed, Label::Physical, |s, _, rng| {
        let (attenuation, quality_factor) = match profile {
            Profile::Fd => (rng.random_range(30.0..=60.0), 0.5),
            Profile::Sd => (rng.random_range(40.0..=80.0), 0.16),
        };
        s.signal -= attenuation;
        if rng.random_bool(0.5) {
            s.signal += rng.random_range(-60.0..=60.0);
        }
        s.quality *= quality_factor;
    })
}

/// Exponentially growing delay across each burst plus link collapse.
/// The exponent runs from 0 at the burst start to 1 at its end.
pub fn inject_network(trace: Trace, fraction: f64, seed: u64) -> Result<Trace> {
    let profile = trace.profile;
    inject(trace, fraction, seed, Label::Network, |s, t, rng| {
        s.ping *= t.exp();
        s.quality = match profile {
            Profile::Fd => rng.random_range(0..15) as f64,
            Profile::Sd => rng.random_range(0..30) as f64,
        };
    })
}

/// Random ±50 step on the signal; delays above 3 ms are amplified 20×.
pub fn inject_hardware(trace: Trace, fraction: f64, seed: u64) -> Result<Trace> {
    inject(trace, fraction, seed, Label::Hardware, |s, _, rng| {
        s.signal += if rng.random_bool(0.5) { 50.0 } else { -50.0 };
        if s.ping > 3.0 {
            s.ping *= 20.0;
        }
    })
}

/// Spoofing/stealth deception: scaled signal with jitter, compressed link
/// quality and multiplied delay.
pub fn inject_adversarial(trace: Trace, fraction: f64, seed: u64) -> Result<Trace> {
    let profile = trace.profile;
    let jitter = Normal::new(-60.0, 15.0).expect("positive sd");
    inject(trace, fraction, seed, Label::Adversarial, move |s, _, rng| {
        match profile {
            Profile::Fd => {
                s.signal = s.signal * 0.8 + jitter.sample(rng);
                s.quality = s.quality * 0.3 + rng.random_range(-5.0..=5.0);
            }
            Profile::Sd => {
                s.signal *= 0.8;
                s.quality *= 0.2;
            }
        }
        s.ping *= rng.random_range(3.0..=5.0);
    })
}

/// Clean training split plus a test split with all four anomaly classes.
pub fn build_dataset(profile: Profile, seed: u64) -> Result<(Trace, Trace)> {
    let spec = profile.spec();
    let full = gen_baseline(profile, spec.total, seed)?;
    let (train, test) = full.samples.split_at(spec.train);
    let train = Trace {
        profile,
        samples: train.to_vec(),
    };
    let mut test = Trace {
        profile,
        samples: test.to_vec(),
    };
    test = inject_physical(test, ANOMALY_FRACTION, seed.wrapping_add(1))?;
    test = inject_network(test, ANOMALY_FRACTION, seed.wrapping_add(2))?;
    test = inject_hardware(test, ANOMALY_FRACTION, seed.wrapping_add(3))?;
    test = inject_adversarial(test, ANOMALY_FRACTION, seed.wrapping_add(4))?;
    Ok((train, test))
}
