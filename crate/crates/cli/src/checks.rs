//! `gradcheck` and `decompose`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use weightcell::cells::{CellParams, StepTrace, Variant};
use weightcell::checkpoint::Checkpoint;
use weightcell::decomposition::{
    compute_weights, export, heatmap, heatmap_bidirectional, verify_identity, HeatmapGrid,
};
use weightcell::numerics::{Rng, Vector};
use weightcell::training::gradcheck::{DEFAULT_EPSILON, DEFAULT_THRESHOLD};
use weightcell::training::{grad_check, GradCheckBatch, GradCheckReport};

use crate::error::CliError;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub variants: Vec<Variant>,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub len: usize,
    pub draws: usize,
    pub seed: u64,
    /// Test hook: perturbs the analytic gradient of this block.
    pub inject_fault: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            variants: Variant::ALL.to_vec(),
            input_dim: 3,
            hidden_dim: 4,
            len: 5,
            draws: 10,
            seed: 0,
            inject_fault: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VariantGradCheck {
    pub variant: Variant,
    /// Largest relative error over all draws and blocks.
    pub max_relative_error: f64,
    pub worst_block: String,
    pub failed_draws: usize,
}

/// Runs the finite-difference check; the text summary is returned along
/// with the per-variant results. Fails when any draw fails.
pub fn cmd_gradcheck(opts: &GradCheckOptions) -> Result<(String, Vec<VariantGradCheck>), CliError> {
    if opts.draws == 0 || opts.len == 0 || opts.input_dim == 0 || opts.hidden_dim == 0 {
        return Err(CliError::Usage(
            "gradcheck needs positive dims, length and draws".into(),
        ));
    }
    let mut out = String::new();
    let mut results = Vec::new();
    let mut rng = Rng::new(opts.seed);
    for &variant in &opts.variants {
        let mut summary = VariantGradCheck {
            variant,
            max_relative_error: 0.0,
            worst_block: String::new(),
            failed_draws: 0,
        };
        for _ in 0..opts.draws {
            let params = CellParams::init(variant, opts.input_dim, opts.hidden_dim, &mut rng);
            let batch = GradCheckBatch::random(&params, opts.len, 2, &mut rng);
            let report = check_once(&params, &batch, opts.inject_fault.as_deref())?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            if !report.passed {
                summary.failed_draws += 1;
            }
            if let Some(worst) = report.worst() {
                if !(worst.max_relative_error <= summary.max_relative_error) {
                    summary.max_relative_error = worst.max_relative_error;
                    summary.worst_block = worst.name.clone();
                }
            }
        }
        let _ = writeln!(
            out,
            "{:<17} max relative error {:.3e} (worst block {}) {}/{} draws passed",
            variant.name(),
            summary.max_relative_error,
            summary.worst_block,
            opts.draws - summary.failed_draws,
            opts.draws
        );
        results.push(summary);
    }
    let failing: Vec<String> = results
        .iter()
        .filter(|r| r.failed_draws > 0)
        .map(|r| {
            format!(
                "{} (worst block {}, {:.3e})",
                r.variant.name(),
                r.worst_block,
                r.max_relative_error
            )
        })
        .collect();
    if failing.is_empty() {
        let _ = writeln!(out, "PASSED (threshold {DEFAULT_THRESHOLD:e})");
        Ok((out, results))
    } else {
        Err(CliError::CheckFailed(format!(
            "{out}gradient check FAILED for {}",
            failing.join(", ")
        )))
    }
}

fn check_once(params: &CellParams, batch: &GradCheckBatch, fault: Option<&str>) -> Result<GradCheckReport, CliError> {
    let Some(block) = fault else {
        return Ok(grad_check(params, batch, DEFAULT_EPSILON)?);
    };
    if params.block(block).is_err() {
        return Err(CliError::Usage(format!(
            "--inject-fault: no block `{block}` in {}",
            params.variant().name()
        )));
    }
    let report =
        weightcell::training::gradcheck::grad_check_with(params, batch, DEFAULT_EPSILON, DEFAULT_THRESHOLD, |g| {
            if let Ok(b) = g.params.block_mut(block) {
                b[0] += 1e-3;
            }
        })?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub enum DecomposeInput {
    Text(String),
    File(PathBuf),
}

#[derive(Clone, Debug)]
pub struct DecomposeOptions {
    pub checkpoint: PathBuf,
    pub input: DecomposeInput,
    pub tolerance: f64,
    pub heatmaps: Vec<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct DecomposeOutcome {
    pub text: String,
    pub passed: bool,
    pub max_abs_deviation: f64,
    /// Heatmap of the top layer.
    pub grid: HeatmapGrid,
}

/// Verifies the weighted-sum identity of every cell in a checkpoint on one
/// input and optionally exports the top layer's heatmap.
pub fn cmd_decompose(opts: &DecomposeOptions) -> Result<DecomposeOutcome, CliError> {
    let ck = Checkpoint::load(&opts.checkpoint)?;
    let variant = ck.network.variant();
    if !variant.has_memory_cell() {
        return Err(weightcell::Error::NoMemoryCell(variant).into());
    }
    let (xs, labels) = read_input(&ck, &opts.input)?;
    let trace = ck.network.forward(&ck.network.zero_state(), &xs)?;

    let mut out = String::new();
    let mut worst = 0.0f64;
    let mut passed = true;
    let mut check = |name: String, traces: &[StepTrace], out: &mut String| -> Result<(), CliError> {
        let report = verify_identity(traces, opts.tolerance)?;
        worst = worst.max(report.max_abs_deviation);
        passed &= report.passed;
        let _ = writeln!(
            out,
            "{name}: max deviation {:.3e} (tolerance {:e})",
            report.max_abs_deviation, opts.tolerance
        );
        Ok(())
    };
    for (l, layer) in trace.layers.iter().enumerate() {
        check(format!("layer {l} fwd"), &layer.fwd, &mut out)?;
        if let Some(bwd) = &layer.bwd {
            check(format!("layer {l} bwd"), bwd, &mut out)?;
        }
    }

    let top = trace.layers.last().expect("at least one layer");
    let fwd = compute_weights(&top.fwd)?;
    let grid = match &top.bwd {
        Some(bwd) => heatmap_bidirectional(&fwd, &compute_weights(bwd)?, labels.as_deref())?,
        None => heatmap(&fwd, labels.as_deref())?,
    };
    let _ = writeln!(
        out,
        "diagonal dominance: {:.4} of {} timesteps",
        grid.diagonal_dominance(),
        grid.size()
    );
    for path in &opts.heatmaps {
        export(&grid, path)?;
        let _ = writeln!(out, "wrote {}", path.display());
    }
    let _ = writeln!(
        out,
        "{} (max deviation {worst:.3e})",
        if passed { "PASSED" } else { "FAILED" }
    );
    Ok(DecomposeOutcome {
        text: out,
        passed,
        max_abs_deviation: worst,
        grid,
    })
}

/// Text is one-hot encoded with the checkpoint vocabulary. Without one,
/// a file holds one comma-separated input vector per line.
fn read_input(ck: &Checkpoint, input: &DecomposeInput) -> Result<(Vec<Vector>, Option<Vec<String>>), CliError> {
    let input_dim = ck.network.arch().input_dim;
    let text = match input {
        DecomposeInput::Text(t) => t.clone(),
        DecomposeInput::File(p) => read(p)?,
    };
    let (xs, labels) = match &ck.vocab {
        Some(vocab) => {
            let ids = vocab.encode(&text);
            let labels = ids.iter().map(|&id| vocab.label(id)).collect();
            (
                ids.iter().map(|&id| Vector::one_hot(input_dim, id)).collect(),
                Some(labels),
            )
        }
        None => {
            if let DecomposeInput::Text(_) = input {
                return Err(CliError::Usage(
                    "checkpoint has no vocabulary; pass a sequence file with --input".into(),
                ));
            }
            let mut xs = Vec::new();
            for (n, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let values: Vec<f64> = line
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| CliError::Usage(format!("line {}: {e}", n + 1)))?;
                if values.len() != input_dim {
                    return Err(CliError::Usage(format!(
                        "line {}: expected {input_dim} values, got {}",
                        n + 1,
                        values.len()
                    )));
                }
                xs.push(Vector::from(values));
            }
            (xs, None)
        }
    };
    if xs.is_empty() {
        return Err(CliError::Usage("decompose input is empty".into()));
    }
    Ok((xs, labels))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}
