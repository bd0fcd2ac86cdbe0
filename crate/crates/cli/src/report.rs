//! Ablation sweep summaries.

use std::fmt::Write as _;

use weightcell::cells::Variant;

use crate::config::Task;

#[derive(Clone, Debug, PartialEq)]
pub struct RunEntry {
    pub variant: Variant,
    pub seed: u64,
    pub params: usize,
    pub learning_rate: f64,
    /// Held-out metric at the best epoch.
    pub metric: Option<f64>,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantSummary {
    pub variant: Variant,
    pub runs: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation; only with at least two finished runs.
    pub std: Option<f64>,
    pub params: usize,
    /// `mean / mean(LSTM)`, when both exist.
    pub ratio_to_lstm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub task: Task,
    pub entries: Vec<RunEntry>,
    /// One row per variant in table order.
    pub summaries: Vec<VariantSummary>,
    pub lr_overrides: Vec<(Variant, f64)>,
}

impl AblationReport {
    pub fn new(task: Task, entries: Vec<RunEntry>, lr_overrides: &[(Variant, f64)]) -> Self {
        let mut summaries: Vec<VariantSummary> = Variant::ALL
            .into_iter()
            .filter(|v| entries.iter().any(|e| e.variant == *v))
            .map(|variant| {
                let mine: Vec<&RunEntry> = entries.iter().filter(|e| e.variant == variant).collect();
                let values: Vec<f64> = mine.iter().filter_map(|e| e.metric).filter(|m| m.is_finite()).collect();
                let (mean, std) = mean_std(&values);
                VariantSummary {
                    variant,
                    runs: mine.len(),
                    mean,
                    std,
                    params: mine.iter().map(|e| e.params).max().unwrap_or(0),
                    ratio_to_lstm: None,
                }
            })
            .collect();
        let reference = summaries
            .iter()
            .find(|s| s.variant == Variant::Lstm)
            .and_then(|s| s.mean);
        for s in &mut summaries {
            s.ratio_to_lstm = match (s.mean, reference) {
                (Some(m), Some(r)) if r != 0.0 => Some(m / r),
                _ => None,
            };
        }
        AblationReport {
            task,
            entries,
            summaries,
            lr_overrides: lr_overrides.to_vec(),
        }
    }

    pub fn metric_name(&self) -> &'static str {
        match self.task {
            Task::Lm => "valid_perplexity",
            Task::Synthetic(_) => "test_accuracy",
        }
    }

    pub fn summary(&self, variant: Variant) -> Option<&VariantSummary> {
        self.summaries.iter().find(|s| s.variant == variant)
    }

    /// One row per run.
    pub fn to_csv(&self) -> String {
        let mut s = format!("variant,seed,status,{},params,learning_rate\n", self.metric_name());
        for e in self.ordered_entries() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                e.variant.name(),
                e.seed,
                csv_field(&e.status),
                e.metric.map_or(String::new(), |m| format!("{m:.17e}")),
                e.params,
                e.learning_rate
            );
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = format!(
            "variant,runs,{0}_mean,{0}_std,params,ratio_to_lstm\n",
            self.metric_name()
        );
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.17e}"));
        for r in &self.summaries {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.variant.name(),
                r.runs,
                opt(r.mean),
                opt(r.std),
                r.params,
                opt(r.ratio_to_lstm)
            );
        }
        s
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let header = match self.task {
            Task::Lm => "Valid perplexity",
            Task::Synthetic(_) => "Test accuracy",
        };
        let rows: Vec<[String; 4]> = self
            .summaries
            .iter()
            .map(|r| {
                let value = match (r.mean, r.std) {
                    (Some(m), Some(sd)) => format!("{m:.3} ± {sd:.3}"),
                    (Some(m), None) => format!("{m:.3}"),
                    (None, _) => "n/a".into(),
                };
                [
                    r.variant.label().to_string(),
                    value,
                    r.params.to_string(),
                    r.ratio_to_lstm.map_or("n/a".into(), |x| format!("{x:.3}")),
                ]
            })
            .collect();
        let titles = [
            "Model".to_string(),
            header.to_string(),
            "Params".into(),
            "vs LSTM".into(),
        ];
        let mut widths = titles.clone().map(|t| t.chars().count());
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String; 4]| {
            let mut s = String::new();
            for (k, (cell, w)) in cells.iter().zip(widths).enumerate() {
                let pad = w - cell.chars().count();
                if k == 0 {
                    s.push_str(cell);
                    s.push_str(&" ".repeat(pad));
                } else {
                    s.push_str("  ");
                    s.push_str(&" ".repeat(pad));
                    s.push_str(cell);
                }
            }
            s.trim_end().to_string() + "\n"
        };
        let mut out = line(&titles);
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        out.push('\n');
        for row in &rows {
            out.push_str(&line(row));
        }
        for (v, lr) in &self.lr_overrides {
            let _ = writeln!(out, "note: {} used learning_rate {lr} (override)", v.label());
        }
        for e in self.entries.iter().filter(|e| e.status != "completed") {
            let _ = writeln!(out, "note: {} seed {} {}", e.variant.label(), e.seed, e.status);
        }
        out
    }

    fn ordered_entries(&self) -> Vec<&RunEntry> {
        let mut v: Vec<&RunEntry> = self.entries.iter().collect();
        v.sort_by_key(|e| (e.variant, e.seed));
        v
    }
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
