//! Append-only training log.
//!
//! One line per optimizer step:
//!
//! ```text
//! step=0 lr=0.0001 loss_circle=15.62 loss_triplet=0.21 loss_total=156.2
//! ```
//!
//! and one per finished epoch (`epoch=0 steps=100 mean_loss_total=...`,
//! plus `val_recall@1=...` when a validation split exists). Numbers use
//! the shortest decimal form that parses back to the same value.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use poco_core::train::StepRecord;

use crate::error::{Error, Result};

pub fn format_step(r: &StepRecord) -> String {
    format!(
        "step={} lr={} loss_circle={} loss_triplet={} loss_total={}",
        r.step, r.lr, r.loss_circle, r.loss_triplet, r.loss_total
    )
}

pub fn format_epoch(
    epoch: usize,
    steps: usize,
    mean_loss: f64,
    val_recall1: Option<f64>,
) -> String {
    let mut s = format!("epoch={epoch} steps={steps} mean_loss_total={mean_loss}");
    if let Some(r) = val_recall1 {
        s.push_str(&format!(" val_recall@1={r}"));
    }
    s
}

/// Parses a step line; `None` for epoch lines or malformed input.
pub fn parse_step(line: &str) -> Option<StepRecord> {
    let mut fields = line.split_whitespace().map(|kv| kv.split_once('='));
    let mut next = |key: &str| -> Option<&str> {
        match fields.next()? {
            Some((k, v)) if k == key => Some(v),
            _ => None,
        }
    };
    let step = next("step")?.parse().ok()?;
    let lr = next("lr")?.parse().ok()?;
    let loss_circle = next("loss_circle")?.parse().ok()?;
    let loss_triplet = next("loss_triplet")?.parse().ok()?;
    let loss_total = next("loss_total")?.parse().ok()?;
    if fields.next().is_some() {
        return None;
    }
    Some(StepRecord {
        step,
        lr,
        loss_circle,
        loss_triplet,
        loss_total,
    })
}

pub struct MetricsLog {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl MetricsLog {
    /// Opens for appending; `fresh` truncates first.
    pub fn open(path: &Path, fresh: bool) -> Result<MetricsLog> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(!fresh)
            .write(true)
            .truncate(fresh)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(MetricsLog {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_lines_round_trip() {
        let r = StepRecord {
            step: 42,
            lr: 9.999e-5,
            loss_circle: 15.625,
            loss_triplet: 0.1 + 0.2,
            loss_total: 1.0 / 3.0,
        };
        let line = format_step(&r);
        assert_eq!(parse_step(&line), Some(r));
        assert!(line.starts_with("step=42 lr=0.00009999 "));
    }

    #[test]
    fn epoch_lines_are_not_steps() {
        assert_eq!(parse_step(&format_epoch(0, 10, 1.5, Some(0.25))), None);
        assert_eq!(
            format_epoch(1, 3, 2.0, None),
            "epoch=1 steps=3 mean_loss_total=2"
        );
    }

    #[test]
    fn append_and_truncate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.log");
        let mut log = MetricsLog::open(&p, true).unwrap();
        log.line("a").unwrap();
        log.flush().unwrap();
        drop(log);
        let mut log = MetricsLog::open(&p, false).unwrap();
        log.line("b").unwrap();
        log.flush().unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "a\nb\n");
        drop(MetricsLog::open(&p, true).unwrap());
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "");
    }
}
