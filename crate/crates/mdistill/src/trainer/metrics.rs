//! Training metrics: `stage,epoch,split,domain,loss,frame_acc,lr` rows,
//! kept in memory and optionally appended to a CSV file as they arrive.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub const METRICS_HEADER: &str = "stage,epoch,split,domain,loss,frame_acc,lr";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub stage: String,
    pub epoch: usize,
    pub split: String,
    pub domain: String,
    pub loss: f64,
    pub frame_acc: f64,
    pub lr: f64,
}

impl MetricRow {
    fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.stage, self.epoch, self.split, self.domain, self.loss, self.frame_acc, self.lr
        )
    }
}

pub struct MetricsLog {
    rows: Vec<MetricRow>,
    sink: Option<BufWriter<File>>,
}

impl MetricsLog {
    pub fn in_memory() -> MetricsLog {
        MetricsLog {
            rows: Vec::new(),
            sink: None,
        }
    }

    /// Log that also appends each row to `path` as it is pushed.
    pub fn with_file(path: impl AsRef<Path>) -> std::io::Result<MetricsLog> {
        let mut sink = BufWriter::new(File::create(path)?);
        writeln!(sink, "{METRICS_HEADER}")?;
        sink.flush()?;
        Ok(MetricsLog {
            rows: Vec::new(),
            sink: Some(sink),
        })
    }

    pub fn push(&mut self, row: MetricRow) -> std::io::Result<()> {
        if let Some(sink) = &mut self.sink {
            writeln!(sink, "{}", row.to_csv_line())?;
            sink.flush()?;
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.to_csv_line());
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }

    pub fn parse_csv(text: &str) -> std::io::Result<MetricsLog> {
        let invalid = |msg: String| std::io::Error::new(std::io::ErrorKind::InvalidData, msg);
        let mut lines = text.lines();
        match lines.next() {
            Some(header) if header == METRICS_HEADER => {}
            other => {
                return Err(invalid(format!(
                    "expected metrics header `{METRICS_HEADER}`, got {other:?}"
                )))
            }
        }
        let mut log = MetricsLog::in_memory();
        for (idx, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(invalid(format!("line {}: expected 7 fields", idx + 2)));
            }
            let parse_f64 = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| invalid(format!("line {}: {e}", idx + 2)))
            };
            log.rows.push(MetricRow {
                stage: fields[0].to_string(),
                epoch: fields[1]
                    .parse()
                    .map_err(|e| invalid(format!("line {}: {e}", idx + 2)))?,
                split: fields[2].to_string(),
                domain: fields[3].to_string(),
                loss: parse_f64(fields[4])?,
                frame_acc: parse_f64(fields[5])?,
                lr: parse_f64(fields[6])?,
            });
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(stage: &str, epoch: usize) -> MetricRow {
        MetricRow {
            stage: stage.into(),
            epoch,
            split: "dev".into(),
            domain: "all".into(),
            loss: 1.25,
            frame_acc: 0.5,
            lr: 0.02,
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut log = MetricsLog::in_memory();
        log.push(row("baseline", 1)).unwrap();
        log.push(row("student", 2)).unwrap();
        let parsed = MetricsLog::parse_csv(&log.to_csv()).unwrap();
        assert_eq!(parsed.rows(), log.rows());
    }

    #[test]
    fn incremental_file_matches_in_memory_dump() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let mut log = MetricsLog::with_file(&path).unwrap();
        log.push(row("baseline", 1)).unwrap();
        log.push(row("baseline", 2)).unwrap();
        let on_disk = std::fs::read_to_string(&path).unwrap();
        assert_eq!(on_disk, log.to_csv());
    }

    #[test]
    fn parse_rejects_wrong_header() {
        assert!(MetricsLog::parse_csv("nope\n").is_err());
    }
}
