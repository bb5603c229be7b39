//! Excitation signals, trajectory datasets and their on-disk layout.
//!
//! A dataset directory holds `manifest.json` plus one `traj_<k>.csv` per
//! trajectory with header `t,x1..xn,u1..um,y1..yp`. The terminal state row
//! leaves the input and output cells empty.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dynamics::{IntegratorConfig, ModelSpec, SystemModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExcitationSpec {
    pub sigma_u: f64,
    pub hold_steps: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for ExcitationSpec {
    fn default() -> Self {
        ExcitationSpec { sigma_u: 0.2, hold_steps: 20, horizon: 200, seed: 0 }
    }
}

impl ExcitationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_u.is_finite() && self.sigma_u > 0.0) {
            return Err(Error::InvalidInput(format!("sigma_u must be > 0 (got {})", self.sigma_u)));
        }
        if self.hold_steps < 1 || self.horizon < self.hold_steps {
            return Err(Error::InvalidInput(format!(
                "need hold_steps ≥ 1 and horizon ≥ hold_steps (got {}, {})",
                self.hold_steps, self.horizon
            )));
        }
        Ok(())
    }
}

/// Mixes a master seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Piecewise-constant Gaussian excitation: independent `N(0, σ²)` draws per
/// input channel, each held for `hold_steps` samples.
pub fn generate_excitation(spec: &ExcitationSpec, n_u: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, spec.sigma_u).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut out = Vec::with_capacity(spec.horizon);
    let mut current = vec![0.0; n_u];
    for t in 0..spec.horizon {
        if t % spec.hold_steps == 0 {
            for c in current.iter_mut() {
                *c = normal.sample(&mut rng);
            }
        }
        out.push(current.clone());
    }
    Ok(out)
}

/// A simulated run: `T + 1` states, `T` inputs and `T` outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(states: Vec<Vec<f64>>, inputs: Vec<Vec<f64>>, outputs: Vec<Vec<f64>>) -> Result<Self> {
        let t = inputs.len();
        if t == 0 || states.len() != t + 1 || outputs.len() != t {
            return Err(Error::InvalidInput(format!(
                "trajectory needs T+1 states and T inputs/outputs (got {}, {}, {})",
                states.len(),
                inputs.len(),
                outputs.len()
            )));
        }
        let uniform = |rows: &[Vec<f64>]| rows.iter().all(|r| r.len() == rows[0].len());
        if !uniform(&states) || !uniform(&inputs) || !uniform(&outputs) {
            return Err(Error::InvalidInput("trajectory rows have mixed dimensions".into()));
        }
        Ok(Trajectory { states, inputs, outputs })
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn n_x(&self) -> usize {
        self.states[0].len()
    }

    pub fn n_u(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn n_y(&self) -> usize {
        self.outputs[0].len()
    }

    /// `z_t = [y_t; u_t]`.
    pub fn combined(&self, t: usize) -> Vec<f64> {
        let mut z = self.outputs[t].clone();
        z.extend_from_slice(&self.inputs[t]);
        z
    }

    pub fn samples(&self, traj: usize) -> impl Iterator<Item = Sample> + '_ {
        (0..self.horizon()).map(move |t| Sample {
            traj,
            t,
            z: self.combined(t),
            x: self.states[t].clone(),
            x_next: self.states[t + 1].clone(),
            y: self.outputs[t].clone(),
            u: self.inputs[t].clone(),
        })
    }
}

/// One transition `(z_t, x_t, x_{t+1}, y_t, u_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub traj: usize,
    pub t: usize,
    pub z: Vec<f64>,
    pub x: Vec<f64>,
    pub x_next: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Initial state of every trajectory, in deviation variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum X0Policy {
    Equilibrium,
    UniformBox { half_width: f64 },
}

impl Default for X0Policy {
    fn default() -> Self {
        X0Policy::Equilibrium
    }
}

/// Everything needed to rebuild a dataset bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub x0: X0Policy,
    #[serde(default)]
    pub excitation: ExcitationSpec,
    pub m: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            model: ModelSpec::default(),
            integrator: IntegratorConfig::default(),
            x0: X0Policy::Equilibrium,
            excitation: ExcitationSpec::default(),
            m: 20,
            test_fraction: 0.25,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidInput("m must be ≥ 2".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::InvalidInput(format!(
                "test_fraction must lie in [0, 1) (got {})",
                self.test_fraction
            )));
        }
        if let X0Policy::UniformBox { half_width } = self.x0 {
            if !(half_width.is_finite() && half_width >= 0.0) {
                return Err(Error::InvalidInput("x0 half_width must be ≥ 0".into()));
            }
        }
        self.integrator.validate()?;
        self.excitation.validate()
    }

    /// Number of test trajectories, keeping at least one for training.
    pub fn n_test(&self) -> usize {
        ((self.m as f64 * self.test_fraction).round() as usize).min(self.m - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub header: String,
}

impl ColumnSchema {
    pub fn new(n_x: usize, n_u: usize, n_y: usize) -> Self {
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=n_x).map(|i| format!("x{i}")));
        cols.extend((1..=n_u).map(|i| format!("u{i}")));
        cols.extend((1..=n_y).map(|i| format!("y{i}")));
        ColumnSchema { n_x, n_u, n_y, header: cols.join(",") }
    }
}

/// Dataset record written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model_id: String,
    pub spec: DatasetSpec,
    /// Excitation seed of each trajectory.
    pub trajectory_seeds: Vec<u64>,
    /// Operating point the deviation variables are measured from.
    pub equilibrium: Vec<f64>,
    pub columns: ColumnSchema,
    pub split: Vec<Split>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub split: Vec<Split>,
    pub manifest: Manifest,
}

impl Dataset {
    fn samples_of(&self, which: Split) -> Vec<Sample> {
        self.trajectories
            .iter()
            .enumerate()
            .filter(|(k, _)| self.split[*k] == which)
            .flat_map(|(k, tr)| tr.samples(k))
            .collect()
    }

    pub fn test_samples(&self) -> Vec<Sample> {
        self.samples_of(Split::Test)
    }

    pub fn n_train(&self) -> usize {
        self.split.iter().filter(|s| **s == Split::Train).count()
    }
}

/// Per-step training samples, concatenated across training trajectories in
/// trajectory order. `x_next` always comes from the same trajectory.
pub fn flatten_training(dataset: &Dataset) -> Vec<Sample> {
    dataset.samples_of(Split::Train)
}

fn simulate_one(model: &dyn SystemModel, spec: &DatasetSpec, k: usize) -> Result<(u64, Trajectory)> {
    let seed = derive_seed(spec.seed, k as u64);
    let inputs = generate_excitation(&spec.excitation, model.n_u(), seed)?;
    let x0 = match spec.x0 {
        X0Policy::Equilibrium => vec![0.0; model.n_x()],
        X0Policy::UniformBox { half_width } => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5EED));
            if half_width == 0.0 {
                vec![0.0; model.n_x()]
            } else {
                let dist = Uniform::new_inclusive(-half_width, half_width)
                    .map_err(|e| Error::InvalidInput(e.to_string()))?;
                (0..model.n_x()).map(|_| dist.sample(&mut rng)).collect()
            }
        }
    };
    let tr = crate::dynamics::simulate(model, &x0, &inputs).map_err(|e| match e {
        Error::SimulationDiverged { step, .. } => Error::SimulationDiverged { step, trajectory: Some(k) },
        other => other,
    })?;
    Ok((seed, tr))
}

/// Simulates `m` trajectories with independent excitations and assigns the
/// train/test split by a seeded shuffle.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let model = spec.model.build(&spec.integrator)?;
    let equilibrium = match &spec.model {
        ModelSpec::Distillation { params } => {
            crate::dynamics::DistillationColumn::new(*params, spec.integrator)?.equilibrium.to_vec()
        }
        _ => vec![0.0; model.n_x()],
    };
    let model: &dyn SystemModel = model.as_ref();

    #[cfg(feature = "parallel")]
    let runs: Vec<Result<(u64, Trajectory)>> = {
        use rayon::prelude::*;
        (0..spec.m).into_par_iter().map(|k| simulate_one(model, spec, k)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let runs: Vec<Result<(u64, Trajectory)>> = (0..spec.m).map(|k| simulate_one(model, spec, k)).collect();

    let mut trajectories = Vec::with_capacity(spec.m);
    let mut seeds = Vec::with_capacity(spec.m);
    for r in runs {
        let (s, tr) = r?;
        seeds.push(s);
        trajectories.push(tr);
    }

    let mut order: Vec<usize> = (0..spec.m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, u64::MAX));
    order.shuffle(&mut rng);
    let mut split = vec![Split::Train; spec.m];
    for &k in order.iter().take(spec.n_test()) {
        split[k] = Split::Test;
    }

    let manifest = Manifest {
        model_id: spec.model.id().to_string(),
        spec: spec.clone(),
        trajectory_seeds: seeds,
        equilibrium,
        columns: ColumnSchema::new(model.n_x(), model.n_u(), model.n_y()),
        split: split.clone(),
    };
    Ok(Dataset { trajectories, split, manifest })
}

/// Shortest decimal string that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        let mut buf = ryu::Buffer::new();
        let s = buf.format_finite(v);
        s.strip_suffix(".0").unwrap_or(s).to_string()
    } else {
        format!("{v}")
    }
}

fn trajectory_csv(tr: &Trajectory, schema: &ColumnSchema) -> String {
    let mut out = String::new();
    out.push_str(&schema.header);
    out.push('\n');
    for (t, x) in tr.states.iter().enumerate() {
        let mut cells = vec![t.to_string()];
        cells.extend(x.iter().map(|v| fmt_f64(*v)));
        if t < tr.horizon() {
            cells.extend(tr.inputs[t].iter().map(|v| fmt_f64(*v)));
            cells.extend(tr.outputs[t].iter().map(|v| fmt_f64(*v)));
        } else {
            cells.extend(std::iter::repeat_n(String::new(), schema.n_u + schema.n_y));
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_string(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = dataset.manifest.clone();
    manifest.split = dataset.split.clone();
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_string(&dir.join("manifest.json"), &(json + "\n"))?;
    for (k, tr) in dataset.trajectories.iter().enumerate() {
        write_string(&dir.join(format!("traj_{k}.csv")), &trajectory_csv(tr, &manifest.columns))?;
    }
    Ok(())
}

fn parse_trajectory(path: &Path, schema: &ColumnSchema) -> Result<Trajectory> {
    let text = read_string(path)?;
    let err = |line: usize, message: String| Error::Parse { file: path.to_path_buf(), line, message };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == schema.header => {}
        Some(h) => return Err(err(1, format!("expected header `{}`, found `{h}`", schema.header))),
        None => return Err(err(1, "empty file".into())),
    }
    let width = 1 + schema.n_x + schema.n_u + schema.n_y;
    let (mut states, mut inputs, mut outputs) = (Vec::new(), Vec::new(), Vec::new());
    let mut terminal_seen = false;
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        if terminal_seen {
            return Err(err(lineno, "row after the terminal state".into()));
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != width {
            return Err(err(lineno, format!("expected {width} cells, found {}", cells.len())));
        }
        let t: usize = cells[0].parse().map_err(|_| err(lineno, format!("bad time index `{}`", cells[0])))?;
        if t != states.len() {
            return Err(err(lineno, format!("time index {t} out of order")));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| err(lineno, format!("bad number `{s}`")))
        };
        let x = cells[1..1 + schema.n_x].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
        states.push(x);
        let rest = &cells[1 + schema.n_x..];
        if rest.iter().all(|s| s.trim().is_empty()) {
            terminal_seen = true;
            continue;
        }
        inputs.push(rest[..schema.n_u].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?);
        outputs.push(rest[schema.n_u..].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?);
    }
    if !terminal_seen {
        return Err(err(states.len() + 1, "missing terminal state row".into()));
    }
    Trajectory::new(states, inputs, outputs).map_err(|e| err(0, e.to_string()))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join("manifest.json");
    let text = read_string(&mpath)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: mpath.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let m = manifest.split.len();
    if m == 0 || !manifest.split.contains(&Split::Train) {
        return Err(Error::Parse { file: mpath, line: 0, message: "manifest has no training trajectory".into() });
    }
    let trajectories = (0..m)
        .map(|k| parse_trajectory(&dir.join(format!("traj_{k}.csv")), &manifest.columns))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { trajectories, split: manifest.split.clone(), manifest })
}
