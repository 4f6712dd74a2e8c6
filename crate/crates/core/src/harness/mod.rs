//! Fixture generation, encrypted runs with parity reporting, and cost benchmarks.

pub mod fixtures;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ckks::{CkksEngine, CkksParams};
use crate::error::{Error, Result};
use crate::layers::model::{ArchConfig, ModelWeights};
use crate::layers::pipeline::{Block, EncryptedModel};
use crate::layers::Frame;
use crate::reference::{forward_exact, forward_poly, mae_values, r_squared, BlockTrace};
use crate::slot_engine::{Backend, CostCounts, KeySet, NoiseModel, RotSumMode, SimConfig, SimEngine};

pub use fixtures::{fixture_inputs, generate_weights, read_input_dir, write_fixtures};

/// Identifier written into every report.
pub const REPORT_SCHEMA: &str = "parity-report/v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Simulator,
    Ckks,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum NoisePreset {
    #[default]
    Off,
    Preset,
}

/// Pass thresholds for a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Per-block MAE against the polynomial reference.
    pub mae_vs_poly: f64,
    /// Per-block MAE against the exact reference.
    pub mae_vs_exact: f64,
    pub r_squared_min: f64,
}

impl Tolerances {
    pub fn for_backend(backend: BackendKind) -> Self {
        Self {
            mae_vs_poly: match backend {
                BackendKind::Simulator => 1e-4,
                BackendKind::Ckks => 1e-2,
            },
            mae_vs_exact: 0.15,
            r_squared_min: 0.95,
        }
    }
}

/// Everything a run or bench needs besides the output path.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub noise: NoisePreset,
    /// Weights file; generated from `seed` and `arch` when absent.
    pub weights: Option<PathBuf>,
    /// Directory of input text files; generated from `seed` when absent.
    pub inputs: Option<PathBuf>,
    pub arch: ArchConfig,
    pub seed: u64,
    pub n_inputs: usize,
    /// Block names to evaluate; empty means all.
    pub blocks: Vec<String>,
    pub rotsum: RotSumMode,
    /// Simulator level budget; defaults to the deepest chain.
    pub levels: Option<usize>,
    /// Start every block from a fresh encryption instead of chaining.
    pub isolate: bool,
    /// Replace every activation by the identity.
    pub bypass_activations: bool,
    pub ckks: CkksParams,
    pub tolerances: Tolerances,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Simulator,
            noise: NoisePreset::Off,
            weights: None,
            inputs: None,
            arch: ArchConfig::default(),
            seed: 0,
            n_inputs: 20,
            blocks: Vec::new(),
            rotsum: RotSumMode::Naive,
            levels: None,
            isolate: false,
            bypass_activations: false,
            ckks: CkksParams::harness(),
            tolerances: Tolerances::for_backend(BackendKind::Simulator),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub label: String,
    /// Mean over inputs and values of `|encrypted - exact|`.
    pub mae_vs_exact: f64,
    /// Mean over inputs and values of `|encrypted - polynomial|`.
    pub mae_vs_poly: f64,
    pub levels_consumed: usize,
    pub static_depth: usize,
    /// Operation counts for one inference.
    pub cost: CostCounts,
    /// Mean seconds per inference.
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityReport {
    pub schema: String,
    pub backend: BackendKind,
    pub noise: NoisePreset,
    pub rotsum: RotSumMode,
    pub seed: u64,
    pub inputs: usize,
    pub level_budget: usize,
    pub blocks: Vec<BlockReport>,
    /// Encrypted against exact final outputs; present when the head ran on at least two values.
    pub r_squared: Option<f64>,
    pub tolerances: Tolerances,
    pub passed: bool,
    pub failures: Vec<String>,
}

impl ParityReport {
    /// The report with wall times zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.blocks.iter_mut().for_each(|b| b.wall_time_s = 0.0);
        r
    }

    pub fn block(&self, label: &str) -> Option<&BlockReport> {
        self.blocks.iter().find(|b| b.label == label)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Fixed-width table of the per-block columns.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>12} {:>12} {:>6} {:>6} {:>10} {:>10} {:>10}",
            "block", "mae_exact", "mae_poly", "levels", "depth", "mults", "rotations", "seconds"
        );
        for b in &self.blocks {
            let _ = writeln!(
                out,
                "{:<8} {:>12.3e} {:>12.3e} {:>6} {:>6} {:>10} {:>10} {:>10.3}",
                b.label,
                b.mae_vs_exact,
                b.mae_vs_poly,
                b.levels_consumed,
                b.static_depth,
                b.cost.multiplications(),
                b.cost.rotate,
                b.wall_time_s
            );
        }
        if let Some(r2) = self.r_squared {
            let _ = writeln!(out, "r_squared {r2:.6}");
        }
        let _ = writeln!(out, "{}", if self.passed { "PASS" } else { "FAIL" });
        for f in &self.failures {
            let _ = writeln!(out, "  {f}");
        }
        out
    }
}

/// Weights and inputs a run evaluates.
#[derive(Clone, Debug)]
pub struct Workload {
    pub weights: ModelWeights,
    pub inputs: Vec<Vec<Frame>>,
}

impl Workload {
    pub fn load(config: &RunConfig) -> Result<Self> {
        let mut weights = match &config.weights {
            Some(p) => ModelWeights::from_json(&std::fs::read_to_string(p)?)?,
            None => generate_weights(config.seed, &config.arch)?,
        };
        if config.bypass_activations {
            weights = weights.with_identity_activations();
        }
        let arch = weights.arch().clone();
        let inputs = match &config.inputs {
            Some(dir) => read_input_dir(dir, &arch)?,
            None => fixture_inputs(config.seed, &arch, config.n_inputs),
        };
        if inputs.is_empty() {
            return Err(Error::Format("no inputs to evaluate".into()));
        }
        Ok(Self { weights, inputs })
    }
}

/// Selected blocks in pipeline order, split into runs that pass ciphertexts along.
pub fn plan_chains(model: &EncryptedModel, names: &[String], isolate: bool) -> Result<Vec<Vec<Block>>> {
    let all = model.blocks();
    for n in names {
        if !all.iter().any(|b| &b.name == n) {
            return Err(Error::Model(format!("unknown block {n}")));
        }
    }
    let mut chains: Vec<Vec<Block>> = Vec::new();
    let mut prev_selected = false;
    for b in all {
        let selected = names.is_empty() || names.contains(&b.name);
        if selected {
            match chains.last_mut() {
                Some(chain) if prev_selected && !isolate => chain.push(b),
                _ => chains.push(vec![b]),
            }
        }
        prev_selected = selected;
    }
    Ok(chains)
}

fn chain_depth(model: &EncryptedModel, chain: &[Block]) -> Result<usize> {
    chain.iter().map(|b| model.static_depth(b)).sum()
}

struct Accum {
    label: String,
    abs_exact: f64,
    abs_poly: f64,
    count: usize,
    levels: usize,
    cost: CostCounts,
    seconds: f64,
}

fn tag_block(block: &Block, e: Error) -> Error {
    match e {
        Error::DepthExhausted(m) => Error::DepthExhausted(format!("block {}: {m}", block.name)),
        other => other,
    }
}

fn evaluate<B: Backend>(
    engine: &B,
    model: &EncryptedModel,
    chains: &[Vec<Block>],
    exact: &[BlockTrace],
    poly: &[BlockTrace],
) -> Result<(Vec<Accum>, Vec<f64>)> {
    let mut acc: Vec<Accum> = chains
        .iter()
        .flatten()
        .map(|b| Accum {
            label: b.name.clone(),
            abs_exact: 0.0,
            abs_poly: 0.0,
            count: 0,
            levels: 0,
            cost: CostCounts::default(),
            seconds: 0.0,
        })
        .collect();
    let mut finals = Vec::new();
    for (n, (ex, po)) in exact.iter().zip(poly).enumerate() {
        let mut slot = 0;
        for chain in chains {
            let first = &chain[0];
            let mut state = model.encrypt_input(engine, first, po.input_of(&first.name)?)?;
            for block in chain {
                let before_level = state.level();
                let before = engine.meter().snapshot();
                let start = Instant::now();
                state = model.run_block(engine, block, state).map_err(|e| tag_block(block, e))?;
                let seconds = start.elapsed().as_secs_f64();
                let cost = engine.meter().snapshot().since(&before);
                let out = model.decrypt_state(engine, &state)?;
                let a = &mut acc[slot];
                let want_exact = ex.output(&block.name)?;
                let want_poly = po.output(&block.name)?;
                a.abs_exact += mae_values(&out, want_exact)? * out.len() as f64;
                a.abs_poly += mae_values(&out, want_poly)? * out.len() as f64;
                a.count += out.len();
                a.seconds += seconds;
                if n == 0 {
                    a.levels = before_level - state.level();
                    a.cost = cost;
                }
                if block.name == "head" {
                    finals.extend(out);
                }
                slot += 1;
            }
        }
    }
    Ok((acc, finals))
}

/// Encrypts each input, evaluates the selected blocks and compares against both references.
pub fn run(config: &RunConfig) -> Result<ParityReport> {
    run_workload(config, &Workload::load(config)?)
}

pub fn run_workload(config: &RunConfig, work: &Workload) -> Result<ParityReport> {
    let model = EncryptedModel::new(work.weights.clone(), config.rotsum)?;
    let chains = plan_chains(&model, &config.blocks, config.isolate)?;
    let mut deepest = 0;
    for chain in &chains {
        let d = chain_depth(&model, chain)?;
        if config.backend == BackendKind::Ckks && d > config.ckks.levels {
            let names: Vec<&str> = chain.iter().map(|b| b.name.as_str()).collect();
            return Err(Error::DepthExhausted(format!(
                "blocks {} need {d} levels, CKKS parameters provide {}",
                names.join("+"),
                config.ckks.levels
            )));
        }
        deepest = deepest.max(d);
    }
    let rotations: std::collections::BTreeSet<usize> =
        chains.iter().flatten().flat_map(|b| model.rotations(b)).collect();
    let slots = model.arch().row_slots;

    let exact = work.inputs.iter().map(|f| forward_exact(f, &work.weights)).collect::<Result<Vec<_>>>()?;
    let poly = work.inputs.iter().map(|f| forward_poly(f, &work.weights)).collect::<Result<Vec<_>>>()?;

    let (budget, (acc, finals)) = match config.backend {
        BackendKind::Simulator => {
            let noise = match config.noise {
                NoisePreset::Off => NoiseModel::off(),
                NoisePreset::Preset => NoiseModel::preset(config.seed),
            };
            let budget = config.levels.unwrap_or(deepest);
            let engine = SimEngine::new(
                KeySet::generate(config.seed, slots, rotations)?,
                SimConfig { max_level: budget, noise, ..SimConfig::default() },
            );
            (budget, evaluate(&engine, &model, &chains, &exact, &poly)?)
        }
        BackendKind::Ckks => {
            let engine = CkksEngine::new(config.ckks.with_seed(config.seed), slots, rotations)?;
            (config.ckks.levels, evaluate(&engine, &model, &chains, &exact, &poly)?)
        }
    };

    let tol = config.tolerances;
    let mut failures = Vec::new();
    let mut blocks = Vec::new();
    for (a, block) in acc.into_iter().zip(chains.iter().flatten()) {
        let r = BlockReport {
            mae_vs_exact: a.abs_exact / a.count as f64,
            mae_vs_poly: a.abs_poly / a.count as f64,
            levels_consumed: a.levels,
            static_depth: model.static_depth(block)?,
            cost: a.cost,
            wall_time_s: a.seconds / work.inputs.len() as f64,
            label: a.label,
        };
        if !(r.mae_vs_poly <= tol.mae_vs_poly) {
            failures.push(format!("{}: MAE vs polynomial reference {:.3e} > {:.1e}", r.label, r.mae_vs_poly, tol.mae_vs_poly));
        }
        if !(r.mae_vs_exact <= tol.mae_vs_exact) {
            failures.push(format!("{}: MAE vs exact reference {:.3e} > {:.1e}", r.label, r.mae_vs_exact, tol.mae_vs_exact));
        }
        if r.levels_consumed != r.static_depth {
            failures.push(format!("{}: consumed {} levels, static depth {}", r.label, r.levels_consumed, r.static_depth));
        }
        blocks.push(r);
    }
    let r_squared = if finals.len() < 2 {
        None
    } else {
        let truth: Vec<f64> = exact.iter().flat_map(|t| t.final_output().iter().copied()).collect();
        let r2 = r_squared(&finals, &truth)?;
        if !(r2 >= tol.r_squared_min) {
            failures.push(format!("R^2 {r2:.4} < {}", tol.r_squared_min));
        }
        Some(r2)
    };
    Ok(ParityReport {
        schema: REPORT_SCHEMA.into(),
        backend: config.backend,
        noise: config.noise,
        rotsum: config.rotsum,
        seed: config.seed,
        inputs: work.inputs.len(),
        level_budget: budget,
        blocks,
        r_squared,
        tolerances: tol,
        passed: failures.is_empty(),
        failures,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub label: String,
    pub naive: CostCounts,
    pub tree: CostCounts,
    pub naive_time_s: f64,
    pub tree_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub backend: BackendKind,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, label: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "block", "mults", "rot_naive", "rot_tree", "heavy_nv", "sec_naive", "sec_tree"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<8} {:>10} {:>10} {:>10} {:>10} {:>10.3} {:>10.3}",
                r.label,
                r.naive.multiplications(),
                r.naive.rotate,
                r.tree.rotate,
                r.naive.heavy_ops(),
                r.naive_time_s,
                r.tree_time_s
            );
        }
        out
    }
}

/// Per-block operation counts and timings for one input under both rotate-sum modes.
pub fn bench(config: &RunConfig) -> Result<BenchReport> {
    let mut work = Workload::load(config)?;
    work.inputs.truncate(1);
    let naive = run_workload(&RunConfig { rotsum: RotSumMode::Naive, ..config.clone() }, &work)?;
    let tree = run_workload(&RunConfig { rotsum: RotSumMode::Tree, ..config.clone() }, &work)?;
    let rows = naive
        .blocks
        .iter()
        .zip(&tree.blocks)
        .map(|(n, t)| BenchRow {
            label: n.label.clone(),
            naive: n.cost,
            tree: t.cost,
            naive_time_s: n.wall_time_s,
            tree_time_s: t.wall_time_s,
        })
        .collect();
    Ok(BenchReport { backend: config.backend, rows })
}

/// Writes seeded weights and `n_inputs` inputs under `dir`.
pub fn genfix(seed: u64, arch: &ArchConfig, n_inputs: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    let weights = generate_weights(seed, arch)?;
    write_fixtures(dir, &weights, &fixture_inputs(seed, arch, n_inputs))
}
