//! Line-delimited JSON records for loss curves and evaluation reports, and
//! a small binary container for single predicted fields.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, Reader, Writer};
use crate::components::SplitTag;
use crate::tensor::Tensor;
use crate::train::{EpochRecord, EvalReport, GroupResult, Promotion};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("file holds no {0} records")]
    Empty(&'static str),
}

pub type Result<T> = std::result::Result<T, RecordError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
pub enum CurveLine {
    Epoch(EpochRecord),
    /// Mean relative L2 of the kept checkpoint over the training samples.
    Final { epoch: usize, final_loss: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
pub enum ReportLine {
    Group {
        label: String,
        #[serde(flatten)]
        group: GroupResult,
    },
    SplitMean {
        label: String,
        split: SplitTag,
        rel_l2: f64,
    },
    Overall {
        label: String,
        rel_l2: f64,
    },
    Promotion {
        label: String,
        baseline_label: String,
        #[serde(flatten)]
        promotion: Promotion,
    },
}

fn write_lines<T: Serialize>(mut out: impl Write, lines: &[T]) -> Result<()> {
    for l in lines {
        serde_json::to_writer(&mut out, l)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn read_lines<T: for<'de> Deserialize<'de>>(input: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| RecordError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn write_curve(out: impl Write, curve: &[EpochRecord], final_epoch: usize, final_loss: f64) -> Result<()> {
    let mut lines: Vec<CurveLine> = curve.iter().cloned().map(CurveLine::Epoch).collect();
    lines.push(CurveLine::Final {
        epoch: final_epoch,
        final_loss,
    });
    write_lines(out, &lines)
}

pub fn read_curve(input: impl BufRead) -> Result<Vec<CurveLine>> {
    read_lines(input)
}

/// Report records: groups, split means, overall mean, then any promotions.
pub fn report_lines(report: &EvalReport, baseline: Option<&EvalReport>) -> Vec<ReportLine> {
    let label = &report.label;
    let mut lines: Vec<ReportLine> = report
        .groups
        .iter()
        .map(|g| ReportLine::Group {
            label: label.clone(),
            group: g.clone(),
        })
        .collect();
    lines.extend(report.split_means.iter().map(|(&split, &rel_l2)| ReportLine::SplitMean {
        label: label.clone(),
        split,
        rel_l2,
    }));
    lines.push(ReportLine::Overall {
        label: label.clone(),
        rel_l2: report.mean,
    });
    if let Some(b) = baseline {
        lines.extend(report.compare(b).into_iter().map(|promotion| ReportLine::Promotion {
            label: label.clone(),
            baseline_label: b.label.clone(),
            promotion,
        }));
    }
    lines
}

pub fn write_report(out: impl Write, report: &EvalReport, baseline: Option<&EvalReport>) -> Result<()> {
    write_lines(out, &report_lines(report, baseline))
}

pub fn read_report_lines(input: impl BufRead) -> Result<Vec<ReportLine>> {
    read_lines(input)
}

/// Reassembles the report from its records; promotion records are dropped.
pub fn read_report(input: impl BufRead) -> Result<EvalReport> {
    let mut report = EvalReport {
        label: String::new(),
        groups: Vec::new(),
        split_means: BTreeMap::new(),
        mean: f64::NAN,
    };
    let mut seen = false;
    for line in read_report_lines(input)? {
        match line {
            ReportLine::Group { label, group } => {
                report.label = label;
                report.groups.push(group);
                seen = true;
            }
            ReportLine::SplitMean { split, rel_l2, .. } => {
                report.split_means.insert(split, rel_l2);
            }
            ReportLine::Overall { label, rel_l2 } => {
                report.label = label;
                report.mean = rel_l2;
                seen = true;
            }
            ReportLine::Promotion { .. } => {}
        }
    }
    if !seen {
        return Err(RecordError::Empty("report"));
    }
    Ok(report)
}

pub const FIELD_MAGIC: [u8; 4] = *b"UFLD";
pub const FIELD_VERSION: u16 = 1;

/// Writes one tensor: magic, version, rank, `u64` dims, `f64` values.
pub fn write_field(out: impl Write, t: &Tensor) -> Result<()> {
    let mut w = Writer::new(out);
    w.bytes(&FIELD_MAGIC)?;
    w.u16(FIELD_VERSION)?;
    w.u8(t.rank() as u8)?;
    for &d in t.shape() {
        w.u64(d as u64)?;
    }
    for &v in t.data() {
        w.f64(v)?;
    }
    Ok(())
}

pub fn read_field(input: impl Read) -> Result<Tensor> {
    let mut r = Reader::new(input);
    r.magic(FIELD_MAGIC)?;
    let version = r.u16()?;
    if version != FIELD_VERSION {
        return Err(CodecError::UnsupportedVersion(version).into());
    }
    let rank = r.u8()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u64()? as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(r.f64()?);
    }
    r.finish()?;
    Tensor::new(shape, data).map_err(|e| CodecError::Corrupt(e.to_string()).into())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> EvalReport {
        let g = |nu: f64, split, rel_l2| GroupResult {
            coefficients: [("nu".to_string(), nu)].into_iter().collect(),
            split,
            samples: 2,
            rel_l2,
        };
        EvalReport {
            label: "model".into(),
            groups: vec![g(1e-3, SplitTag::InDistribution, 0.1), g(2e-3, SplitTag::OutOfDistribution, 0.3)],
            split_means: [(SplitTag::InDistribution, 0.1), (SplitTag::OutOfDistribution, 0.3)].into_iter().collect(),
            mean: 0.2,
        }
    }

    #[test]
    fn report_round_trip() {
        let r = report();
        let mut buf = Vec::new();
        write_report(&mut buf, &r, Some(&r)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2 + 2 + 1 + 2);
        assert!(text.lines().next().unwrap().contains("\"record\":\"group\""));
        assert_eq!(read_report(buf.as_slice()).unwrap(), r);
    }

    #[test]
    fn curve_round_trip() {
        let curve = vec![EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            val_loss: Some(0.25),
            lr: 1e-3,
        }];
        let mut buf = Vec::new();
        write_curve(&mut buf, &curve, 1, 0.123456789012345).unwrap();
        let lines = read_curve(buf.as_slice()).unwrap();
        assert_eq!(lines[0], CurveLine::Epoch(curve[0].clone()));
        assert_eq!(lines[1], CurveLine::Final { epoch: 1, final_loss: 0.123456789012345 });
    }

    #[test]
    fn field_round_trip_and_bad_line() {
        let t = Tensor::new(vec![1, 2, 3], (0..6).map(|i| i as f64 * 0.1).collect()).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &t).unwrap();
        assert_eq!(read_field(buf.as_slice()).unwrap(), t);
        let err = read_report_lines("{\"record\":\"overall\"}\n".as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 1"));
    }
}
