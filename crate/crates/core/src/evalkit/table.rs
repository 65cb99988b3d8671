use super::{AblationRow, EvalError, RobustnessRow, SweepRow};
use crate::v2xlink::format_sci3;

/// A header plus string rows, printable as aligned text or CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_text(&self) -> String {
        let cols = self.header.len();
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let parts: Vec<String> = (0..cols)
                .map(|i| {
                    let c = cells.get(i).map(String::as_str).unwrap_or("");
                    format!("{c:<w$}", w = widths[i])
                })
                .collect();
            parts.join("  ").trim_end().to_string()
        };
        let mut out = line(&self.header);
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1)));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }
}

fn f2(v: f64) -> String {
    format!("{v:.2}")
}

fn metric_header(first: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = first.iter().map(|s| s.to_string()).collect();
    for m in ["L2", "Col%"] {
        for t in ["2.5s", "3.5s", "4.5s", "avg"] {
            h.push(format!("{m} {t}"));
        }
    }
    h
}

fn metric_cells(s: &super::EvalSummary) -> Vec<String> {
    s.l2.values
        .iter()
        .chain([&s.l2.avg])
        .chain(s.collision.values.iter())
        .chain([&s.collision.avg])
        .map(|v| f2(*v))
        .collect()
}

pub fn sweep_table(rows: &[SweepRow]) -> Table {
    let mut h = metric_header(&["scale", "bps"]);
    h.extend(["ms/frame".into(), "fps".into()]);
    let mut t = Table::new(h);
    for r in rows {
        let mut row = vec![format!("{}", r.scale), format_sci3(r.bps as f64)];
        row.extend(metric_cells(&r.summary));
        row.extend([f2(r.summary.latency_ms), f2(r.fps)]);
        t.push(row);
    }
    t
}

pub fn robustness_table(rows: &[RobustnessRow]) -> Table {
    let mut t = Table::new(metric_header(&["condition"]));
    for r in rows {
        let mut row = vec![r.condition.clone()];
        row.extend(metric_cells(&r.summary));
        t.push(row);
    }
    t
}

pub fn ablation_table(rows: &[AblationRow]) -> Table {
    let mut h = metric_header(&["variant", "bps"]);
    h.push("held-out L_traj".into());
    let mut t = Table::new(h);
    for r in rows {
        let bps = if r.bps == 0 { "0".into() } else { format_sci3(r.bps as f64) };
        let mut row = vec![r.variant.name().to_string(), bps];
        row.extend(metric_cells(&r.summary));
        row.push(format!("{:.4}", r.held_out_traj));
        t.push(row);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_columns_align_and_csv_quotes() {
        let mut t = Table::new(["a", "long header"]);
        t.push(vec!["x, y".into(), "1".into()]);
        let text = t.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "a     long header");
        assert_eq!(lines[2], "x, y  1");
        assert_eq!(t.to_csv().unwrap(), "a,long header\n\"x, y\",1\n");
    }
}
