//! Comparison tables over evaluation reports, with relative-improvement
//! columns against the learned model.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::trainer::EvalReport;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum TableError {
    #[error("improvement baseline must be positive, got {0}")]
    NonPositiveBase(f64),
    #[error("conflicting duplicate entry for ({dataset}, {method}, {metric})")]
    DuplicateKey { dataset: String, method: String, metric: String },
    #[error("no reports provided")]
    Empty,
}

/// Relative reduction of `ours` against `base`, in percent. Negative when
/// `ours` is worse.
pub fn improvement(base: f64, ours: f64) -> Result<f64, TableError> {
    if !(base > 0.0) {
        return Err(TableError::NonPositiveBase(base));
    }
    Ok(100.0 * (base - ours) / base)
}

/// The name the learned model reports under; improvement columns compare the
/// other methods against it.
pub const MODEL_METHOD: &str = "ctin";

/// One `(dataset, metric)` row holding every method's value.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TableRow {
    pub dataset: String,
    pub metric: String,
    /// `(method, value)` in rendering order.
    pub values: Vec<(String, f64)>,
    /// `(baseline method, improvement %)` of the model over that baseline.
    pub improvements: Vec<(String, f64)>,
}

/// Deterministically ordered comparison table.
#[derive(Clone, Debug, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComparisonTable {
    pub rows: Vec<TableRow>,
}

fn method_order(a: &str, b: &str) -> core::cmp::Ordering {
    // Baselines first, the learned model last, anything else alphabetical in
    // between.
    let rank = |m: &str| match m {
        "sins" => 0,
        "pdr" => 1,
        MODEL_METHOD => 3,
        _ => 2,
    };
    rank(a).cmp(&rank(b)).then_with(|| a.cmp(b))
}

const METRIC_ORDER: [&str; 5] = ["ate_m", "t_rte_m", "d_rte_m", "pde", "velocity_mse"];

/// Build the table from evaluation reports. Rows are keyed by
/// `(dataset, metric)`; re-submitting the same `(dataset, method, metric)`
/// cell is an error.
pub fn build_table(reports: &[EvalReport]) -> Result<ComparisonTable, TableError> {
    if reports.is_empty() {
        return Err(TableError::Empty);
    }
    // (dataset, metric) -> method -> value
    let mut cells: BTreeMap<(String, String), BTreeMap<String, f64>> = BTreeMap::new();
    let mut methods: BTreeSet<String> = BTreeSet::new();
    for report in reports {
        methods.insert(report.method.clone());
        let agg = &report.aggregate;
        let entries: [(&str, Option<f64>); 5] = [
            ("ate_m", Some(agg.ate_m)),
            ("t_rte_m", agg.t_rte_m),
            ("d_rte_m", agg.d_rte_m),
            ("pde", Some(agg.pde)),
            ("velocity_mse", agg.velocity_mse),
        ];
        for (metric, value) in entries {
            let Some(value) = value else { continue };
            let key = (report.dataset_kind.clone(), metric.to_string());
            let row = cells.entry(key).or_default();
            if row.insert(report.method.clone(), value).is_some() {
                return Err(TableError::DuplicateKey {
                    dataset: report.dataset_kind.clone(),
                    method: report.method.clone(),
                    metric: metric.to_string(),
                });
            }
        }
    }

    let mut method_list: Vec<String> = methods.into_iter().collect();
    method_list.sort_by(|a, b| method_order(a, b));

    let mut rows = Vec::new();
    let mut keys: Vec<(String, String)> = cells.keys().cloned().collect();
    keys.sort_by(|a, b| {
        let ma = METRIC_ORDER.iter().position(|m| *m == a.1).unwrap_or(usize::MAX);
        let mb = METRIC_ORDER.iter().position(|m| *m == b.1).unwrap_or(usize::MAX);
        a.0.cmp(&b.0).then(ma.cmp(&mb))
    });
    for key in keys {
        let row_cells = &cells[&key];
        let values: Vec<(String, f64)> = method_list
            .iter()
            .filter_map(|m| row_cells.get(m).map(|v| (m.clone(), *v)))
            .collect();
        let mut improvements = Vec::new();
        if let Some(&ours) = row_cells.get(MODEL_METHOD) {
            for (method, &base) in row_cells {
                if method != MODEL_METHOD && base > 0.0 {
                    improvements.push((method.clone(), improvement(base, ours)?));
                }
            }
        }
        rows.push(TableRow { dataset: key.0, metric: key.1, values, improvements });
    }
    Ok(ComparisonTable { rows })
}

impl ComparisonTable {
    /// Markdown rendering; byte-stable for identical inputs.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("| dataset | metric | method | value | improvement over |\n");
        out.push_str("|---|---|---|---|---|\n");
        for row in &self.rows {
            for (method, value) in &row.values {
                let imp = row
                    .improvements
                    .iter()
                    .map(|(b, p)| format!("{b}: {p:.2}%"))
                    .collect::<Vec<_>>()
                    .join(", ");
                let imp_cell = if method == MODEL_METHOD && !imp.is_empty() { imp.as_str() } else { "" };
                out.push_str(&format!(
                    "| {} | {} | {} | {:.6} | {} |\n",
                    row.dataset, row.metric, method, value, imp_cell
                ));
            }
        }
        out
    }

    /// CSV rendering with one line per `(dataset, metric, method)` cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,metric,method,value,improvement_over,improvement_pct\n");
        for row in &self.rows {
            for (method, value) in &row.values {
                if method == MODEL_METHOD && !row.improvements.is_empty() {
                    for (base, pct) in &row.improvements {
                        out.push_str(&format!(
                            "{},{},{},{:.12},{},{:.6}\n",
                            row.dataset, row.metric, method, value, base, pct
                        ));
                    }
                } else {
                    out.push_str(&format!(
                        "{},{},{},{:.12},,\n",
                        row.dataset, row.metric, method, value
                    ));
                }
            }
        }
        out
    }
}
