//! Derivative-labelled state samples from canonical systems.

use std::io::{BufRead, Write};

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::integrate::{fmt_f64, path_rng, IntegratorConfig, Stepper};
use crate::model::SphsModel;
use crate::systems::{make_canonical_system, Params};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub trajectory: usize,
    pub split: Split,
    pub t: f64,
    /// `(q, p)`.
    pub state: Vec<f64>,
    /// `(q̇, ṗ)`.
    pub derivative: Vec<f64>,
}

fn default_n_train() -> usize {
    16
}
fn default_n_test() -> usize {
    25
}
fn default_horizon() -> f64 {
    6.0
}
fn default_sample_dt() -> f64 {
    0.2
}
fn default_substeps() -> usize {
    10
}
fn default_radius() -> [f64; 2] {
    [0.5, 1.5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    /// Length of each generated trajectory.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Spacing of recorded samples.
    #[serde(default = "default_sample_dt")]
    pub sample_dt: f64,
    /// Integrator steps per sample interval.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Initial conditions are uniform on the annulus `r₀ ≤ |(q, p)| ≤ r₁`.
    #[serde(default = "default_radius")]
    pub radius: [f64; 2],
    /// Standard deviation of Gaussian noise added to derivative labels.
    #[serde(default)]
    pub label_noise: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_train: default_n_train(),
            n_test: default_n_test(),
            horizon: default_horizon(),
            sample_dt: default_sample_dt(),
            substeps: default_substeps(),
            radius: default_radius(),
            label_noise: 0.0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 {
            return Err(Error::config("n_train", "at least one training trajectory is required"));
        }
        if !(self.sample_dt > 0.0) || self.substeps == 0 {
            return Err(Error::config("sample_dt", "sample spacing and substeps must be positive"));
        }
        if !(self.horizon >= self.sample_dt) {
            return Err(Error::config("horizon", "horizon must cover at least one sample"));
        }
        let [r0, r1] = self.radius;
        if !(0.0 <= r0 && r0 <= r1 && r1 > 0.0) {
            return Err(Error::config("radius", "need 0 ≤ r₀ ≤ r₁, r₁ > 0"));
        }
        if !(self.label_noise >= 0.0) {
            return Err(Error::config("label_noise", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub system: String,
    pub params: Params,
    pub seed: u64,
    pub dof: usize,
    pub config: DatasetConfig,
    pub records: Vec<Record>,
}

/// Area-uniform sample from the annulus `r₀ ≤ |x| ≤ r₁` in `ℝ²ᵈ`
/// (radius density ∝ r^{2d−1}).
pub fn sample_annulus<R: Rng + ?Sized>(dim: usize, radius: [f64; 2], rng: &mut R) -> DVector<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let dir = loop {
        let v = DVector::from_fn(dim, |_, _| normal.sample(rng));
        let n = v.norm();
        if n > 1e-12 {
            break v / n;
        }
    };
    let [r0, r1] = radius;
    let k = dim as f64;
    let u: f64 = rng.random();
    let r = (r0.powf(k) + u * (r1.powf(k) - r0.powf(k))).powf(1.0 / k);
    dir * r
}

/// Deterministic trajectory of `model` driven by its default input, sampled
/// every `sample_dt`; returns `(t, x)` pairs including `t = 0`.
pub fn sample_trajectory(
    model: &SphsModel,
    x0: &DVector<f64>,
    horizon: f64,
    sample_dt: f64,
    substeps: usize,
) -> Result<Vec<(f64, DVector<f64>)>> {
    let input = model.input_or_zero();
    let config = IntegratorConfig::collocation(sample_dt / substeps as f64, 2);
    let mut stepper = Stepper::new(model, input.as_ref(), &config)?;
    let samples = (horizon / sample_dt + 1e-9).floor() as usize;
    let dw = DVector::zeros(model.k);
    let mut x = x0.clone();
    let mut next = DVector::zeros(model.n);
    let mut out = vec![(0.0, x.clone())];
    for s in 0..samples {
        for j in 0..substeps {
            let t = (s * substeps + j) as f64 * config.h;
            stepper.step(t, &x, &dw, &mut next)?;
            std::mem::swap(&mut x, &mut next);
        }
        out.push(((s + 1) as f64 * sample_dt, x.clone()));
    }
    Ok(out)
}

/// Drift `(J − R)∂ₓH + g u(t, x)` of the deterministic part of `model`.
pub fn true_derivative(model: &SphsModel, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    let mut u = DVector::zeros(model.m);
    if let Some(law) = model.default_input() {
        law.control(t, x, &mut u);
    }
    Ok(model.eval_dynamics(x, &u, t)?.0)
}

/// Generate train and test trajectories of a canonical system. Trajectory `i`
/// uses random stream `i` of `seed`; splits are disjoint by trajectory.
pub fn generate_dataset(system: &str, params: &Params, config: &DatasetConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let model = make_canonical_system(system, params)?;
    if model.n % 2 != 0 {
        return Err(Error::config("system", "state must split into (q, p)"));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut records = Vec::new();
    for traj in 0..config.n_train + config.n_test {
        let split = if traj < config.n_train { Split::Train } else { Split::Test };
        let mut rng = path_rng(seed, traj as u64);
        let x0 = sample_annulus(model.n, config.radius, &mut rng);
        for (t, x) in sample_trajectory(&model, &x0, config.horizon, config.sample_dt, config.substeps)? {
            let mut dx = true_derivative(&model, &x, t)?;
            if config.label_noise > 0.0 {
                dx.apply(|v| *v += config.label_noise * normal.sample(&mut rng));
            }
            records.push(Record {
                trajectory: traj,
                split,
                t,
                state: x.iter().copied().collect(),
                derivative: dx.iter().copied().collect(),
            });
        }
    }
    Ok(Dataset {
        system: system.to_string(),
        params: params.clone(),
        seed,
        dof: model.n / 2,
        config: config.clone(),
        records,
    })
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&Record> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// First state of every test trajectory.
    pub fn test_initial_conditions(&self) -> Vec<DVector<f64>> {
        let mut seen = std::collections::BTreeSet::new();
        self.records
            .iter()
            .filter(|r| r.split == Split::Test && seen.insert(r.trajectory))
            .map(|r| DVector::from_column_slice(&r.state))
            .collect()
    }

    /// CSV with columns `trajectory,split,t,q…,p…,dq…,dp…`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let d = self.dof;
        let mut header = vec!["trajectory".to_string(), "split".into(), "t".into()];
        for prefix in ["q", "p", "dq", "dp"] {
            header.extend((0..d).map(|i| format!("{prefix}{i}")));
        }
        writeln!(w, "{}", header.join(","))?;
        for r in &self.records {
            let split = match r.split {
                Split::Train => "train",
                Split::Test => "test",
            };
            let mut line = format!("{},{},{}", r.trajectory, split, fmt_f64(r.t));
            for v in r.state.iter().chain(&r.derivative) {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Read records written by [`Dataset::write_csv`]; provenance fields are
    /// left at their defaults.
    pub fn read_csv(r: impl BufRead) -> Result<Dataset> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::config("dataset", "empty CSV"))??;
        let cols = header.split(',').count();
        if cols < 7 || (cols - 3) % 4 != 0 {
            return Err(Error::config("dataset", "unexpected CSV header"));
        }
        let d = (cols - 3) / 4;
        let mut records = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let bad = || Error::config("dataset", format!("malformed row {}", n + 2));
            if fields.len() != cols {
                return Err(bad());
            }
            let split = match fields[1] {
                "train" => Split::Train,
                "test" => Split::Test,
                _ => return Err(bad()),
            };
            let nums = fields[2..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            records.push(Record {
                trajectory: fields[0].parse().map_err(|_| bad())?,
                split,
                t: nums[0],
                state: nums[1..1 + 2 * d].to_vec(),
                derivative: nums[1 + 2 * d..].to_vec(),
            });
        }
        Ok(Dataset {
            system: String::new(),
            params: Params::new(),
            seed: 0,
            dof: d,
            config: DatasetConfig::default(),
            records,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            n_train: 3,
            n_test: 2,
            horizon: 2.0,
            ..Default::default()
        }
    }

    #[test]
    fn clean_labels_match_the_model() {
        for (kind, params) in [
            ("simple_spring", Params::new()),
            ("damped_spring", Params::from([("delta", 0.3)])),
            ("duffing", Params::new()),
            ("forced_spring", Params::from([("f0", 0.5), ("omega", 1.0)])),
        ] {
            let ds = generate_dataset(kind, &params, &small(), 1).unwrap();
            let model = make_canonical_system(kind, &params).unwrap();
            for r in &ds.records {
                let x = DVector::from_column_slice(&r.state);
                let dx = true_derivative(&model, &x, r.t).unwrap();
                let diff = (dx - DVector::from_column_slice(&r.derivative)).amax();
                assert!(diff <= 1e-10);
            }
            assert_eq!(ds.records.len(), 5 * 11);
        }
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let cfg = DatasetConfig {
            label_noise: 0.01,
            ..small()
        };
        let a = generate_dataset("simple_spring", &Params::new(), &cfg, 4).unwrap();
        let b = generate_dataset("simple_spring", &Params::new(), &cfg, 4).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset("simple_spring", &Params::new(), &cfg, 5).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn splits_are_disjoint_and_test_ics_lie_on_annulus() {
        let cfg = DatasetConfig {
            n_train: 4,
            n_test: 25,
            horizon: 0.4,
            ..Default::default()
        };
        let ds = generate_dataset("simple_spring", &Params::new(), &cfg, 2).unwrap();
        let train: std::collections::BTreeSet<_> = ds.split(Split::Train).iter().map(|r| r.trajectory).collect();
        let test: std::collections::BTreeSet<_> = ds.split(Split::Test).iter().map(|r| r.trajectory).collect();
        assert!(train.is_disjoint(&test));
        let ics = ds.test_initial_conditions();
        assert_eq!(ics.len(), 25);
        for x in ics {
            assert!(x.norm() >= 0.5 - 1e-12 && x.norm() <= 1.5 + 1e-12);
        }
    }

    #[test]
    fn csv_roundtrip() {
        let ds = generate_dataset("damped_spring", &Params::from([("delta", 0.1)]), &small(), 3).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(&buf[..]).unwrap();
        assert_eq!(back.records, ds.records);
        assert!(Dataset::read_csv(&b"a,b\n1,2\n"[..]).is_err());
    }

    #[test]
    fn annulus_sampling_is_area_uniform() {
        let mut rng = path_rng(0, 0);
        let n = 20_000;
        let inner = (0..n)
            .filter(|_| sample_annulus(2, [1.0, 2.0], &mut rng).norm() < 1.5)
            .count() as f64
            / n as f64;
        // area fraction (1.5² − 1)/(4 − 1)
        let expected = 1.25 / 3.0;
        assert!((inner - expected).abs() < 0.015, "{inner}");
    }
}
