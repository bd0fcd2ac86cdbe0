//! The memory cell as an element-wise weighted sum of content layers.
//!
//! Unrolling `c_t = i_t ∘ c̃_t + f_t ∘ c_{t-1}` gives
//! `c_t = Σ_{j≤t} w_j^t ∘ c̃_j + (Π_{k≤t} f_k) ∘ c_0` with
//! `w_j^t = i_j ∘ Π_{k=j+1}^t f_k`. The weights are accumulated row by row,
//! `w_t^t = i_t` and `w_j^t = f_t ∘ w_j^{t-1}`, which costs `O(n²·d)`.
//!
//! Positions are 0-based here: `weight(j, t)` is the weight the cell at step
//! `t` places on the content written at step `j ≤ t`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::cells::{StepTrace, Variant};
use crate::error::{Error, Result};
use crate::numerics::Vector;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightTensor {
    len: usize,
    hidden_dim: usize,
    /// Lower triangle, row `t` holds `t + 1` vectors.
    data: Vec<f64>,
    /// `Π_{k≤t} f_k`, the factor applied to the initial cell.
    carry: Vec<f64>,
}

impl WeightTensor {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    fn offset(&self, j: usize, t: usize) -> usize {
        (t * (t + 1) / 2 + j) * self.hidden_dim
    }

    /// `w_j^t`; panics unless `j ≤ t < len`.
    pub fn weight(&self, j: usize, t: usize) -> &[f64] {
        assert!(
            j <= t && t < self.len,
            "weight({j}, {t}) out of range for length {}",
            self.len
        );
        let o = self.offset(j, t);
        &self.data[o..o + self.hidden_dim]
    }

    pub fn carry(&self, t: usize) -> &[f64] {
        let d = self.hidden_dim;
        &self.carry[t * d..(t + 1) * d]
    }

    /// Every stored weight entry, row by row.
    pub fn entries(&self) -> &[f64] {
        &self.data
    }
}

fn memory_of(trace: &StepTrace) -> Result<&crate::cells::MemoryTrace> {
    trace.memory.as_ref().ok_or(Error::NoMemoryCell(Variant::Srnn))
}

pub fn compute_weights(traces: &[StepTrace]) -> Result<WeightTensor> {
    let first = traces.first().ok_or(Error::EmptySequence)?;
    let d = memory_of(first)?.i.len();
    let n = traces.len();
    let mut data = Vec::with_capacity(n * (n + 1) / 2 * d);
    let mut carry = Vec::with_capacity(n * d);
    let mut prev_row_start = 0;
    for (t, trace) in traces.iter().enumerate() {
        let mem = memory_of(trace)?;
        let row_start = data.len();
        for j in 0..t {
            let src = prev_row_start + j * d;
            for k in 0..d {
                data.push(mem.f[k] * data[src + k]);
            }
        }
        data.extend_from_slice(&mem.i);
        for k in 0..d {
            let before = if t == 0 { 1.0 } else { carry[(t - 1) * d + k] };
            carry.push(mem.f[k] * before);
        }
        prev_row_start = row_start;
    }
    Ok(WeightTensor {
        len: n,
        hidden_dim: d,
        data,
        carry,
    })
}

/// `Σ_j w_j^t ∘ c̃_j` for every `t`, plus the initial-cell term when `c_0 ≠ 0`.
pub fn reconstruct_cell(weights: &WeightTensor, traces: &[StepTrace]) -> Result<Vec<Vector>> {
    if weights.len != traces.len() {
        return Err(Error::DimensionMismatch {
            op: "reconstruct_cell",
            expected: weights.len,
            actual: traces.len(),
        });
    }
    let d = weights.hidden_dim;
    let c0 = &memory_of(&traces[0])?.c_prev;
    let has_initial = c0.iter().any(|v| *v != 0.0);
    let mut out = Vec::with_capacity(traces.len());
    for t in 0..weights.len {
        let mut acc = Vector::zeros(d);
        for (j, trace) in traces[..=t].iter().enumerate() {
            let w = weights.weight(j, t);
            for k in 0..d {
                acc[k] += w[k] * trace.c_tilde[k];
            }
        }
        if has_initial {
            let carry = weights.carry(t);
            for k in 0..d {
                acc[k] += carry[k] * c0[k];
            }
        }
        out.push(acc);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionReport {
    pub max_abs_deviation: f64,
    pub per_timestep_deviation: Vec<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares the stored cells against their weighted-sum reconstruction.
/// A zero tolerance demands bit-exact agreement.
pub fn verify_identity(traces: &[StepTrace], tolerance: f64) -> Result<DecompositionReport> {
    if !(tolerance >= 0.0) {
        return Err(Error::Config(format!(
            "tolerance must be non-negative, got {tolerance}"
        )));
    }
    let weights = compute_weights(traces)?;
    let rebuilt = reconstruct_cell(&weights, traces)?;
    let per_timestep_deviation: Vec<f64> = traces
        .iter()
        .zip(&rebuilt)
        .map(|(trace, r)| memory_of(trace).map(|m| m.c.max_abs_diff(r)))
        .collect::<Result<_>>()?;
    let max_abs_deviation = per_timestep_deviation.iter().copied().fold(0.0, f64::max);
    Ok(DecompositionReport {
        max_abs_deviation,
        per_timestep_deviation,
        tolerance,
        passed: max_abs_deviation <= tolerance,
    })
}

/// `Σ_j w_j^t` for every `t`. Bounded by `t + 1` in general and by 1 when
/// the forget gate is `1 − i`.
pub fn weight_sums(weights: &WeightTensor) -> Vec<Vector> {
    let d = weights.hidden_dim;
    (0..weights.len)
        .map(|t| {
            let mut s = Vector::zeros(d);
            for j in 0..=t {
                for (acc, w) in s.iter_mut().zip(weights.weight(j, t)) {
                    *acc += w;
                }
            }
            s
        })
        .collect()
}

/// Summary of the structural weight properties over one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightProperties {
    pub min_weight: f64,
    pub max_weight: f64,
    /// Pairs `(j, t, k)` with `w_j^{t+1}[k] > w_j^t[k]`.
    pub monotonicity_violations: usize,
    pub max_weight_sum: f64,
    pub min_weight_sum: f64,
}

impl WeightProperties {
    pub fn in_open_unit_interval(&self) -> bool {
        self.min_weight > 0.0 && self.max_weight < 1.0
    }
}

pub fn weight_properties(weights: &WeightTensor) -> WeightProperties {
    let (min_weight, max_weight) = weights
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| {
            (lo.min(w), hi.max(w))
        });
    let mut violations = 0;
    for t in 1..weights.len {
        for j in 0..t {
            let older = weights.weight(j, t - 1);
            let newer = weights.weight(j, t);
            violations += older.iter().zip(newer).filter(|(o, n)| n > o).count();
        }
    }
    let sums = weight_sums(weights);
    let all_sums = sums.iter().flat_map(|s| s.iter().copied());
    let (min_weight_sum, max_weight_sum) =
        all_sums.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
    WeightProperties {
        min_weight,
        max_weight,
        monotonicity_violations: violations,
        max_weight_sum,
        min_weight_sum,
    }
}

/// `n × n` grid of weight norms: row `j` is the context position, column `t`
/// the position whose cell is being explained.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapGrid {
    size: usize,
    norms: Vec<f64>,
    labels: Option<Vec<String>>,
}

impl HeatmapGrid {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn norm(&self, j: usize, t: usize) -> f64 {
        self.norms[j * self.size + t]
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn max_norm(&self) -> f64 {
        self.norms.iter().copied().fold(0.0, f64::max)
    }

    /// Fraction of columns whose largest entry sits on the diagonal.
    pub fn diagonal_dominance(&self) -> f64 {
        if self.size == 0 {
            return 0.0;
        }
        let dominant = (0..self.size)
            .filter(|&t| {
                let diag = self.norm(t, t);
                (0..self.size).all(|j| self.norm(j, t) <= diag)
            })
            .count();
        dominant as f64 / self.size as f64
    }

    /// Grayscale level of one cell: larger norms are darker.
    fn pixel(&self, j: usize, t: usize, max: f64) -> u8 {
        if max <= 0.0 {
            return 255;
        }
        let level = (255.0 * self.norm(j, t) / max).round() as u8;
        255 - level
    }

    fn column_labels(&self) -> Vec<String> {
        match &self.labels {
            Some(l) => l.clone(),
            None => (0..self.size).map(|i| i.to_string()).collect(),
        }
    }
}

fn check_labels(labels: Option<&[String]>, n: usize) -> Result<Option<Vec<String>>> {
    match labels {
        Some(l) if l.len() != n => Err(Error::DimensionMismatch {
            op: "heatmap labels",
            expected: n,
            actual: l.len(),
        }),
        other => Ok(other.map(|l| l.to_vec())),
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn heatmap(weights: &WeightTensor, labels: Option<&[String]>) -> Result<HeatmapGrid> {
    let n = weights.len;
    let labels = check_labels(labels, n)?;
    let mut norms = vec![0.0; n * n];
    for t in 0..n {
        for j in 0..=t {
            norms[j * n + t] = l2(weights.weight(j, t));
        }
    }
    Ok(HeatmapGrid { size: n, norms, labels })
}

/// Two-direction layout. `fwd` covers the input in order and fills `j ≤ t`;
/// `bwd` covers it reversed and fills `j ≥ t`. On the diagonal both
/// directions contribute, giving the norm of the concatenated weight vector.
pub fn heatmap_bidirectional(fwd: &WeightTensor, bwd: &WeightTensor, labels: Option<&[String]>) -> Result<HeatmapGrid> {
    let n = fwd.len;
    if bwd.len != n {
        return Err(Error::DimensionMismatch {
            op: "heatmap_bidirectional",
            expected: n,
            actual: bwd.len,
        });
    }
    let labels = check_labels(labels, n)?;
    let mut squared = vec![0.0; n * n];
    for t in 0..n {
        for j in 0..=t {
            squared[j * n + t] += fwd.weight(j, t).iter().map(|w| w * w).sum::<f64>();
        }
    }
    // Reversed coordinates: position p in the backward pass is n-1-p.
    for tb in 0..n {
        for jb in 0..=tb {
            let (j, t) = (n - 1 - jb, n - 1 - tb);
            squared[j * n + t] += bwd.weight(jb, tb).iter().map(|w| w * w).sum::<f64>();
        }
    }
    let norms = squared.into_iter().map(f64::sqrt).collect();
    Ok(HeatmapGrid { size: n, norms, labels })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Header row of labels, then one row per context position; 17 significant
/// digits per value.
pub fn to_csv(grid: &HeatmapGrid) -> String {
    let mut out = String::new();
    let header: Vec<String> = grid.column_labels().iter().map(|l| csv_field(l)).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for j in 0..grid.size {
        let row: Vec<String> = (0..grid.size).map(|t| format!("{:.16e}", grid.norm(j, t))).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Binary PGM (P5), one byte per cell.
pub fn to_pgm(grid: &HeatmapGrid) -> Vec<u8> {
    let n = grid.size;
    let max = grid.max_norm();
    let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
    for j in 0..n {
        for t in 0..n {
            out.push(grid.pixel(j, t, max));
        }
    }
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn to_svg(grid: &HeatmapGrid) -> String {
    const CELL: usize = 12;
    const MARGIN: usize = 40;
    let n = grid.size;
    let max = grid.max_norm();
    let side = MARGIN + n * CELL;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{side}" height="{side}" viewBox="0 0 {side} {side}">"#
    );
    let _ = writeln!(out, r#"<rect width="{side}" height="{side}" fill="white"/>"#);
    let labels = grid.column_labels();
    for (i, label) in labels.iter().enumerate() {
        let pos = MARGIN + i * CELL + CELL / 2;
        let text = xml_escape(label);
        let _ = writeln!(
            out,
            r#"<text x="{pos}" y="{}" font-size="9" text-anchor="middle">{text}</text>"#,
            MARGIN - 6
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="9" text-anchor="end">{text}</text>"#,
            MARGIN - 6,
            pos + 3
        );
    }
    for j in 0..n {
        for t in 0..n {
            let g = grid.pixel(j, t, max);
            let _ = writeln!(
                out,
                r#"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="rgb({g},{g},{g})"/>"#,
                MARGIN + t * CELL,
                MARGIN + j * CELL
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Writes CSV, PGM or SVG according to the file extension.
pub fn export(grid: &HeatmapGrid, path: &Path) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    let bytes = match ext.as_deref() {
        Some("csv") => to_csv(grid).into_bytes(),
        Some("pgm") => to_pgm(grid),
        Some("svg") => to_svg(grid).into_bytes(),
        _ => {
            return Err(Error::Config(format!(
                "cannot infer heatmap format from {} (expected .csv, .pgm or .svg)",
                path.display()
            )))
        }
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{unroll, CellParams, CellState};
    use crate::numerics::Rng;

    fn random_traces(variant: Variant, h: usize, n: usize, seed: u64) -> Vec<StepTrace> {
        let mut rng = Rng::new(seed);
        let p = CellParams::init(variant, 3, h, &mut rng);
        let xs: Vec<Vector> = (0..n)
            .map(|_| (0..3).map(|_| rng.uniform(-1.5, 1.5)).collect::<Vec<_>>().into())
            .collect();
        unroll(&p, &CellState::zeros(&p), &xs).unwrap()
    }

    /// `i_j ∘ Π_{k=j+1}^t f_k`, computed per entry without the recurrence.
    fn closed_form(traces: &[StepTrace], j: usize, t: usize) -> Vec<f64> {
        let d = traces[0].h.len();
        (0..d)
            .map(|k| {
                let mut w = traces[j].memory.as_ref().unwrap().i[k];
                for trace in &traces[j + 1..=t] {
                    w *= trace.memory.as_ref().unwrap().f[k];
                }
                w
            })
            .collect()
    }

    #[test]
    fn single_step_weight_is_input_gate() {
        let traces = random_traces(Variant::Lstm, 4, 1, 3);
        let w = compute_weights(&traces).unwrap();
        assert_eq!(w.weight(0, 0), &traces[0].memory.as_ref().unwrap().i[..]);
        assert_eq!(weight_sums(&w)[0][..], traces[0].memory.as_ref().unwrap().i[..]);
    }

    #[test]
    fn dp_matches_closed_form_on_four_steps() {
        let traces = random_traces(Variant::Lstm, 2, 4, 17);
        let w = compute_weights(&traces).unwrap();
        for t in 0..4 {
            for j in 0..=t {
                let oracle = closed_form(&traces, j, t);
                for (a, b) in w.weight(j, t).iter().zip(&oracle) {
                    assert!((a - b).abs() <= 1e-14, "({j},{t}): {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn saturated_gates_give_unit_weights() {
        let mut p = CellParams::init(Variant::Lstm, 2, 3, &mut Rng::new(1));
        p.block_mut("b_i").unwrap().fill(1e3);
        p.block_mut("b_f").unwrap().fill(1e3);
        let xs = vec![Vector::from(vec![0.2, -0.1]); 6];
        let traces = unroll(&p, &CellState::zeros(&p), &xs).unwrap();
        let w = compute_weights(&traces).unwrap();
        assert!(w.entries().iter().all(|x| (x - 1.0).abs() <= 1e-12));
        let sums = weight_sums(&w);
        for (t, s) in sums.iter().enumerate() {
            assert!(s.iter().all(|v| (v - (t + 1) as f64).abs() < 1e-9));
        }
    }

    #[test]
    fn closed_input_gates_reconstruct_zero() {
        let mut p = CellParams::init(Variant::Lstm, 2, 3, &mut Rng::new(1));
        p.block_mut("b_i").unwrap().fill(-1e3);
        let xs = vec![Vector::from(vec![0.2, -0.1]); 5];
        let traces = unroll(&p, &CellState::zeros(&p), &xs).unwrap();
        let w = compute_weights(&traces).unwrap();
        for c in reconstruct_cell(&w, &traces).unwrap() {
            assert!(c.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn first_step_reconstruction_is_exact() {
        let traces = random_traces(Variant::LstmMinusSrnn, 5, 3, 9);
        let w = compute_weights(&traces).unwrap();
        let rebuilt = reconstruct_cell(&w, &traces).unwrap();
        assert_eq!(rebuilt[0], traces[0].memory.as_ref().unwrap().c);
    }

    #[test]
    fn identity_holds_for_long_lstm_run() {
        let traces = random_traces(Variant::Lstm, 32, 50, 21);
        let report = verify_identity(&traces, 1e-9).unwrap();
        assert!(report.passed, "{}", report.max_abs_deviation);
        assert_eq!(report.per_timestep_deviation.len(), 50);
    }

    #[test]
    fn identity_holds_for_coupled_gate() {
        let traces = random_traces(Variant::CoupledGate, 8, 40, 5);
        assert!(verify_identity(&traces, 1e-8).unwrap().passed);
    }

    #[test]
    fn planted_fault_is_detected() {
        let mut traces = random_traces(Variant::Lstm, 6, 12, 2);
        traces[7].memory.as_mut().unwrap().c[2] += 1e-3;
        let report = verify_identity(&traces, 1e-8).unwrap();
        assert!(!report.passed);
        assert!((report.max_abs_deviation - 1e-3).abs() < 1e-6);
        assert!(report.per_timestep_deviation[7] > 9e-4);
    }

    #[test]
    fn nonzero_initial_cell_adds_boundary_term() {
        let mut rng = Rng::new(31);
        let p = CellParams::init(Variant::Lstm, 2, 4, &mut rng);
        let init = CellState {
            h: Vector::from(vec![0.1, -0.3, 0.2, 0.0]),
            c: Some(Vector::from(vec![2.0, -1.0, 0.5, 3.0])),
        };
        let xs = vec![Vector::from(vec![0.4, -0.2]); 10];
        let traces = unroll(&p, &init, &xs).unwrap();
        assert!(verify_identity(&traces, 1e-12).unwrap().passed);
    }

    #[test]
    fn srnn_has_no_decomposition() {
        let traces = random_traces(Variant::Srnn, 3, 4, 1);
        assert!(matches!(compute_weights(&traces), Err(Error::NoMemoryCell(_))));
    }

    #[test]
    fn reconstruct_rejects_length_mismatch() {
        let traces = random_traces(Variant::Lstm, 3, 4, 1);
        let w = compute_weights(&traces).unwrap();
        assert!(reconstruct_cell(&w, &traces[..3]).is_err());
    }

    fn unit_tensor(n: usize, d: usize) -> WeightTensor {
        WeightTensor {
            len: n,
            hidden_dim: d,
            data: vec![1.0; n * (n + 1) / 2 * d],
            carry: vec![1.0; n * d],
        }
    }

    #[test]
    fn heatmap_of_unit_weights() {
        let grid = heatmap(&unit_tensor(5, 4), None).unwrap();
        for t in 0..5 {
            for j in 0..5 {
                let expected = if j <= t { 2.0 } else { 0.0 };
                assert_eq!(grid.norm(j, t), expected);
            }
        }
        assert_eq!(grid.diagonal_dominance(), 1.0);
    }

    #[test]
    fn heatmap_norms_match_per_cell_sum() {
        let traces = random_traces(Variant::Lstm, 6, 9, 44);
        let w = compute_weights(&traces).unwrap();
        let grid = heatmap(&w, None).unwrap();
        for t in 0..9 {
            for j in 0..9 {
                if j > t {
                    assert_eq!(grid.norm(j, t), 0.0);
                    continue;
                }
                let oracle = closed_form(&traces, j, t);
                let mut sq = 0.0;
                for x in &oracle {
                    sq += x * x;
                }
                assert!((grid.norm(j, t) - sq.sqrt()).abs() <= 1e-12);
                assert!(grid.norm(j, t) <= (6.0f64).sqrt());
            }
        }
    }

    #[test]
    fn heatmap_label_mismatch_is_error() {
        let labels = vec!["a".to_string(); 3];
        assert!(heatmap(&unit_tensor(4, 2), Some(&labels)).is_err());
    }

    #[test]
    fn bidirectional_fills_both_triangles() {
        let n = 6;
        let fwd = random_traces(Variant::Lstm, 3, n, 1);
        let bwd = random_traces(Variant::Lstm, 3, n, 2);
        let (wf, wb) = (compute_weights(&fwd).unwrap(), compute_weights(&bwd).unwrap());
        let grid = heatmap_bidirectional(&wf, &wb, None).unwrap();
        let uni = heatmap(&wf, None).unwrap();
        for t in 0..n {
            for j in 0..n {
                let value = grid.norm(j, t);
                if j < t {
                    assert_eq!(value, uni.norm(j, t));
                } else if j > t {
                    assert_eq!(value, l2(wb.weight(n - 1 - j, n - 1 - t)));
                } else {
                    let f = l2(wf.weight(t, t));
                    let b = l2(wb.weight(n - 1 - t, n - 1 - t));
                    assert!((value - (f * f + b * b).sqrt()).abs() < 1e-15);
                }
                assert!(value > 0.0);
            }
        }
    }

    #[test]
    fn csv_layout() {
        let labels: Vec<String> = ["a", ",", "c"].iter().map(|s| s.to_string()).collect();
        let grid = heatmap(&unit_tensor(3, 1), Some(&labels)).unwrap();
        let csv = to_csv(&grid);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "a,\",\",c");
        assert_eq!(
            lines[1],
            "1.0000000000000000e0,1.0000000000000000e0,1.0000000000000000e0"
        );
        assert_eq!(lines[3].split(',').next().unwrap().parse::<f64>().unwrap(), 0.0);
    }

    #[test]
    fn pgm_layout_and_darkness() {
        let grid = heatmap(&unit_tensor(4, 1), None).unwrap();
        let pgm = to_pgm(&grid);
        let header = b"P5\n4 4\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        let pixels = &pgm[header.len()..];
        assert_eq!(pixels.len(), 16);
        // Full-weight cells are black, empty ones white.
        assert_eq!(pixels[0], 0);
        assert_eq!(pixels[4], 255);
    }

    #[test]
    fn svg_has_one_rect_per_cell() {
        let grid = heatmap(&unit_tensor(3, 2), None).unwrap();
        let svg = to_svg(&grid);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<rect").count(), 9 + 1);
    }

    #[test]
    fn export_by_extension() {
        let dir = tempfile::tempdir().unwrap();
        let grid = heatmap(&unit_tensor(3, 2), None).unwrap();
        for ext in ["csv", "pgm", "svg"] {
            let path = dir.path().join(format!("map.{ext}"));
            export(&grid, &path).unwrap();
            assert!(path.metadata().unwrap().len() > 0);
        }
        assert!(export(&grid, &dir.path().join("map.png")).is_err());
    }

    mod props {
        use super::*;
        use crate::numerics::Rng;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn weights_decay_and_stay_in_unit_interval(
                seed in any::<u64>(), vi in 0usize..5, h in 1usize..10, n in 1usize..40
            ) {
                let traces = random_traces(Variant::GATED[vi], h, n, seed);
                let w = compute_weights(&traces).unwrap();
                let props = weight_properties(&w);
                prop_assert!(props.in_open_unit_interval());
                prop_assert_eq!(props.monotonicity_violations, 0);
                if Variant::GATED[vi] == Variant::CoupledGate {
                    prop_assert!(props.min_weight_sum >= 0.0 && props.max_weight_sum <= 1.0);
                }
                prop_assert!(verify_identity(&traces, 1e-8).unwrap().passed);
            }

            #[test]
            fn coupled_sums_by_brute_force(seed in any::<u64>(), n in 1usize..30) {
                // Random gates with f = 1 - i, summed with explicit products.
                let mut rng = Rng::new(seed);
                let gates: Vec<f64> = (0..n).map(|_| rng.uniform(1e-6, 1.0 - 1e-6)).collect();
                for t in 0..n {
                    let mut total = 0.0;
                    for j in 0..=t {
                        let mut w = gates[j];
                        for g in &gates[j + 1..=t] {
                            w *= 1.0 - g;
                        }
                        total += w;
                    }
                    prop_assert!((0.0..=1.0 + 1e-15).contains(&total));
                }
            }
        }
    }
}
