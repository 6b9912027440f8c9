//! Seeded generator of small multi-failure SCADA fixtures.
//!
//! Each life has `n_informative` columns that follow a hidden degradation
//! ramp (flat, then quadratic over the last 30% of life) on top of a slow
//! baseline and Gaussian noise. The other columns are stationary noise.
//! Lives with the same component share column loadings, so a failure can
//! be learned from the others of its kind.

use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ingest::{self, Component, FailureDataset, FailureEvent, ScadaRecord, LOG_MINUTES};
use crate::tensor::Tensor;

/// Component order of the reference failure log, cycled over lives.
pub const COMPONENT_CYCLE: [Component; 8] = [
    Component::Transformer,
    Component::HydraulicGroup,
    Component::Gearbox,
    Component::HydraulicGroup,
    Component::GeneratorBearing,
    Component::Generator,
    Component::HydraulicGroup,
    Component::HydraulicGroup,
];

/// Fraction of life at which degradation begins.
pub const RAMP_ONSET: f64 = 0.7;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_failures: usize,
    /// Inclusive range of logs per life.
    pub n_range: (usize, usize),
    pub m: usize,
    pub n_informative: usize,
    pub noise_sigma: f64,
    pub n_turbines: usize,
    /// RFC 3339 start of every turbine's stream.
    pub start: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_failures: 4,
            n_range: (900, 1100),
            m: 10,
            n_informative: 6,
            noise_sigma: 0.05,
            n_turbines: 4,
            start: "2017-01-01T00:00:00Z".to_string(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<DateTime<Utc>, SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_failures == 0 {
            return bad("n_failures must be at least 1".into());
        }
        if self.m == 0 || self.n_informative == 0 || self.n_informative > self.m {
            return bad(format!("need 1 <= n_informative ({}) <= m ({})", self.n_informative, self.m));
        }
        let (lo, hi) = self.n_range;
        if lo < 2 || lo > hi {
            return bad(format!("n_range ({lo}, {hi}) must satisfy 2 <= min <= max"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be finite and non-negative", self.noise_sigma));
        }
        if self.n_turbines == 0 {
            return bad("n_turbines must be at least 1".into());
        }
        ingest::parse_timestamp(&self.start).ok_or_else(|| SynthError::InvalidConfig(format!("bad start '{}'", self.start)))
    }

    /// Lives must leave at least one pair for window `l` and horizon `f`.
    pub fn validate_for_windows(&self, l: usize, f: usize) -> Result<(), SynthError> {
        if self.n_range.0 < l + f + 1 {
            return Err(SynthError::InvalidConfig(format!(
                "n_range min {} < l + f + 1 = {}",
                self.n_range.0,
                l + f + 1
            )));
        }
        Ok(())
    }
}

/// Generated fixture. `datasets`, `events` and `ramps` are aligned and in
/// failure-tag order, the order ingest assigns.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFixture {
    pub columns: Vec<String>,
    pub records: Vec<ScadaRecord>,
    pub events: Vec<FailureEvent>,
    pub datasets: Vec<FailureDataset>,
    /// Hidden degradation ramp per life, in [0, 1].
    pub ramps: Vec<Vec<f64>>,
}

impl SynthFixture {
    /// Writes `scada.csv` and `failures.csv`.
    pub fn write(&self, dir: &Path) -> Result<(), SynthError> {
        ingest::write_scada(&dir.join("scada.csv"), &self.columns, &self.records)?;
        ingest::write_failures(&dir.join("failures.csv"), &self.events)?;
        Ok(())
    }
}

pub fn ramp(n: usize) -> Vec<f64> {
    let last = (n - 1) as f64;
    let onset = RAMP_ONSET * last;
    (0..n)
        .map(|i| {
            let t = i as f64;
            if t <= onset || last <= onset {
                0.0
            } else {
                ((t - onset) / (last - onset)).powi(2)
            }
        })
        .collect()
}

fn component_index(c: &Component) -> u64 {
    COMPONENT_CYCLE.iter().position(|k| k == c).unwrap_or(COMPONENT_CYCLE.len()) as u64
}

fn stream(seed: u64, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(salt);
    rng
}

struct Life {
    turbine: usize,
    component: Component,
    data: Vec<f64>,
    ramp: Vec<f64>,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthFixture, SynthError> {
    let start = cfg.validate()?;
    let (m, k) = (cfg.m, cfg.n_informative);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    // Sensor offsets and spans shared by every life.
    let mut sensors = stream(cfg.seed, 1);
    let offsets: Vec<f64> = (0..m).map(|_| sensors.gen_range(-50.0..150.0)).collect();
    let spans: Vec<f64> = (0..m).map(|_| sensors.gen_range(1.0..20.0)).collect();

    let mut lives = Vec::with_capacity(cfg.n_failures);
    for d in 0..cfg.n_failures {
        let component = COMPONENT_CYCLE[d % COMPONENT_CYCLE.len()].clone();
        let mut shape = stream(cfg.seed, 100 + component_index(&component));
        let loadings: Vec<f64> = (0..k).map(|_| shape.gen_range(0.5..1.0)).collect();

        let mut rng = stream(cfg.seed, 1000 + d as u64);
        let n = rng.gen_range(cfg.n_range.0..=cfg.n_range.1);
        let amplitude = rng.gen_range(0.8..1.2);
        let periods: Vec<f64> = (0..k).map(|_| rng.gen_range(0.3..1.0) * n as f64).collect();
        let phases: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        let hidden = ramp(n);
        let mut data = Vec::with_capacity(n * m);
        for (i, &r) in hidden.iter().enumerate() {
            for j in 0..m {
                let z: f64 = unit.sample(&mut rng);
                let signal = if j < k {
                    let base = 0.5 * cfg.noise_sigma * (std::f64::consts::TAU * i as f64 / periods[j] + phases[j]).sin();
                    base + amplitude * loadings[j] * r + cfg.noise_sigma * z
                } else {
                    z
                };
                data.push(offsets[j] + spans[j] * signal);
            }
        }
        lives.push(Life {
            turbine: d % cfg.n_turbines,
            component,
            data,
            ramp: hidden,
        });
    }

    let columns: Vec<String> = (1..=m).map(|j| format!("p{j:02}")).collect();
    let turbine_tag = |t: usize| format!("T{:02}", t + 1);
    let step = Duration::minutes(LOG_MINUTES);
    let mut clock = vec![start; cfg.n_turbines];
    let mut records = Vec::new();
    let mut staged = Vec::with_capacity(lives.len());
    for life in lives {
        let n = life.ramp.len();
        let timestamps: Vec<DateTime<Utc>> = (0..n).map(|i| clock[life.turbine] + step * i as i32).collect();
        clock[life.turbine] = timestamps[n - 1] + step;
        for (i, ts) in timestamps.iter().enumerate() {
            records.push(ScadaRecord {
                timestamp: *ts,
                turbine_tag: turbine_tag(life.turbine),
                values: life.data[i * m..(i + 1) * m].to_vec(),
            });
        }
        staged.push((life, timestamps));
    }
    records.sort_by(|a, b| (&a.turbine_tag, a.timestamp).cmp(&(&b.turbine_tag, b.timestamp)));
    staged.sort_by_key(|(life, ts)| (life.turbine, ts[0]));

    let mut events = Vec::new();
    let mut datasets = Vec::new();
    let mut ramps = Vec::new();
    for (i, (life, timestamps)) in staged.into_iter().enumerate() {
        let tag = i as u32 + 1;
        let n = timestamps.len();
        let event = FailureEvent {
            turbine_tag: turbine_tag(life.turbine),
            timestamp: timestamps[n - 1],
            component: life.component.clone(),
            remarks: "synthetic".to_string(),
            failure_tag: tag,
        };
        datasets.push(FailureDataset {
            failure_tag: tag,
            turbine_tag: event.turbine_tag.clone(),
            component: life.component,
            remarks: event.remarks.clone(),
            event_timestamp: event.timestamp,
            columns: columns.clone(),
            matrix: Tensor::new(&[n, m], life.data).expect("life matrix"),
            timestamps,
            valid: true,
        });
        events.push(event);
        ramps.push(life.ramp);
    }
    Ok(SynthFixture {
        columns,
        records,
        events,
        datasets,
        ramps,
    })
}

/// Midnight UTC on the default start date.
pub fn default_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2017, 1, 1, 0, 0, 0).single().expect("valid date")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_is_flat_then_quadratic() {
        let r = ramp(101);
        assert!(r[..=70].iter().all(|&v| v == 0.0));
        assert!((r[85] - 0.25).abs() < 1e-12);
        assert_eq!(r[100], 1.0);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            SynthConfig { n_informative: 11, ..Default::default() },
            SynthConfig { n_informative: 0, ..Default::default() },
            SynthConfig { n_range: (10, 5), ..Default::default() },
            SynthConfig { n_failures: 0, ..Default::default() },
            SynthConfig { start: "soon".into(), ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(generate(&cfg), Err(SynthError::InvalidConfig(_))), "{cfg:?}");
        }
        assert_eq!(SynthConfig::default().validate().unwrap(), default_start());
        assert!(SynthConfig::default().validate_for_windows(24, 2016).is_err());
    }
}
