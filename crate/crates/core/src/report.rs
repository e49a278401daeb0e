//! Result tables as delimited text (full precision) and aligned text
//! (accuracy, precision and recall to 2 decimals, F1 to 4).

use crate::metrics::{Metrics, POSITIVE_CLASS};
use crate::unified::{AblationRow, PhaseOneResult, SweepRow};

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Text(String),
    Int(u64),
    /// Printed with the given number of decimals in aligned text.
    Num(f64, usize),
}

impl Cell {
    fn full(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Num(v, _) => v.to_string(),
        }
    }

    fn rounded(&self) -> String {
        match self {
            Cell::Num(v, d) => format!("{v:.d$}", d = *d),
            other => other.full(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

fn metric_cells(m: &Metrics) -> [Cell; 4] {
    [
        Cell::Num(m.accuracy, 2),
        Cell::Num(m.precision, 2),
        Cell::Num(m.recall, 2),
        Cell::Num(m.f1, 4),
    ]
}

const METRIC_NAMES: [&str; 4] = ["accuracy", "precision", "recall", "f1"];

impl Table {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::full)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    pub fn to_text(&self) -> String {
        let body: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Cell::rounded).collect()).collect();
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|c| {
                body.iter()
                    .map(|r| r[c].len())
                    .chain([self.columns[c].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = format!("{}\npositive class: {POSITIVE_CLASS}\n", self.title);
        out.push_str(&line(&self.columns));
        out.push('\n');
        for r in &body {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }
}

/// Rows of batch sizes, four metric columns per dataset, for one phase-one candidate.
pub fn batch_size_table(result: &PhaseOneResult, candidate: usize) -> Table {
    let cells = result.cells_of(candidate);
    let mut datasets: Vec<&str> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    for c in &cells {
        if !datasets.contains(&c.dataset.as_str()) {
            datasets.push(&c.dataset);
        }
        if !sizes.contains(&c.batch_size) {
            sizes.push(c.batch_size);
        }
    }
    let mut columns = vec!["batch_size".to_string()];
    for d in &datasets {
        columns.extend(METRIC_NAMES.iter().map(|m| format!("{d}.{m}")));
    }
    let rows = sizes
        .iter()
        .map(|&bs| {
            let mut row = vec![Cell::Int(bs as u64)];
            for d in &datasets {
                let cell = cells
                    .iter()
                    .find(|c| c.batch_size == bs && c.dataset == *d)
                    .expect("every dataset trained at every batch size");
                row.extend(metric_cells(&cell.metrics));
            }
            row
        })
        .collect();
    Table {
        title: "Metrics per dataset by batch size".into(),
        columns,
        rows,
    }
}

/// One row per batch size with four metric columns.
pub fn sweep_table(title: &str, rows: &[SweepRow]) -> Table {
    let mut columns = vec!["batch_size".to_string()];
    columns.extend(METRIC_NAMES.iter().map(|s| s.to_string()));
    Table {
        title: title.into(),
        columns,
        rows: rows
            .iter()
            .map(|r| {
                let mut row = vec![Cell::Int(r.batch_size as u64)];
                row.extend(metric_cells(&r.metrics));
                row
            })
            .collect(),
    }
}

/// One row per (block subset, batch size) with the encoder parameter count.
pub fn ablation_table(rows: &[AblationRow]) -> Table {
    let mut columns = vec!["blocks (batch size)".to_string()];
    columns.extend(METRIC_NAMES.iter().map(|s| s.to_string()));
    columns.push("encoder_params".into());
    Table {
        title: "Metrics by retained encoder blocks".into(),
        columns,
        rows: rows
            .iter()
            .map(|r| {
                let mut row = vec![Cell::Text(r.label())];
                row.extend(metric_cells(&r.metrics));
                row.push(Cell::Int(r.param_count as u64));
                row
            })
            .collect(),
    }
}

/// Per-dataset outcome of every phase-one candidate.
pub fn phase_one_table(result: &PhaseOneResult) -> Table {
    let columns = [
        "candidate", "dataset", "batch_size", "accuracy", "baseline", "deficit", "acceptable", "feasible", "selected",
    ]
    .map(String::from)
    .to_vec();
    let mut rows = Vec::new();
    for c in &result.candidates {
        for o in &c.outcomes {
            rows.push(vec![
                Cell::Int(c.index as u64),
                Cell::Text(o.dataset.clone()),
                Cell::Int(o.batch_size as u64),
                Cell::Num(o.metrics.accuracy, 4),
                Cell::Num(o.baseline, 4),
                Cell::Num(o.deficit, 4),
                Cell::Text(o.acceptable.to_string()),
                Cell::Text(c.feasible.to_string()),
                Cell::Text((result.selected == Some(c.index)).to_string()),
            ]);
        }
    }
    Table {
        title: format!(
            "Shared-configuration search (threshold {}): {}",
            result.threshold,
            if result.accepted { "accepted" } else { "infeasible" }
        ),
        columns,
        rows,
    }
}
