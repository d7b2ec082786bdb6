//! Persistence: append-only trial logs, weight checkpoints, and report CSVs.
//!
//! Floats are written in shortest round-trip form, so every value read back
//! is bit-identical to the value written.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::{ArchDocument, ArchitectureSpec};
use crate::error::{Error, Result};
use crate::nn::{LayerParams, NetworkWeights};
use crate::spaces::{DistributionSummary, EdfCurve, PairComparison, RegimeRow, TrialRecord};

pub const SCHEMA_VERSION: u32 = 1;

/// Hex SHA-256 of a value's compact JSON form.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// First line of every trial log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub schema_version: u32,
    pub config_hash: String,
}

/// Writer for an append-only JSONL trial log.
#[derive(Debug)]
pub struct TrialLog {
    path: PathBuf,
    out: BufWriter<File>,
    last_index: Option<u64>,
}

impl TrialLog {
    /// Start a fresh log at `path`, replacing any existing file.
    pub fn create(path: &Path, config_hash: &str) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        let header = LogHeader {
            schema_version: SCHEMA_VERSION,
            config_hash: config_hash.to_string(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(TrialLog {
            path: path.to_path_buf(),
            out,
            last_index: None,
        })
    }

    /// Continue an existing log, returning the records already in it. A
    /// missing file starts a new log.
    pub fn resume(path: &Path, config_hash: &str) -> Result<(Self, Vec<TrialRecord>)> {
        if !path.exists() {
            return Ok((Self::create(path, config_hash)?, Vec::new()));
        }
        let (header, records) = read_trials(path)?;
        if header.config_hash != config_hash {
            return Err(Error::Validation(format!(
                "{} was written by a different configuration (hash {}, expected {config_hash})",
                path.display(),
                header.config_hash
            )));
        }
        let file = OpenOptions::new().append(true).open(path)?;
        Ok((
            TrialLog {
                path: path.to_path_buf(),
                out: BufWriter::new(file),
                last_index: records.last().map(|r| r.index),
            },
            records,
        ))
    }

    /// Append one record and flush it to disk.
    pub fn append(&mut self, record: &TrialRecord) -> Result<()> {
        if self.last_index.is_some_and(|last| record.index <= last) {
            return Err(Error::Validation(format!(
                "trial index {} is not above the last logged index {} in {}",
                record.index,
                self.last_index.unwrap(),
                self.path.display()
            )));
        }
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        self.last_index = Some(record.index);
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Append one record to the log at `path`.
pub fn append_trial(path: &Path, record: &TrialRecord) -> Result<()> {
    let (header, _) = read_trials(path)?;
    let (mut log, _) = TrialLog::resume(path, &header.config_hash)?;
    log.append(record)
}

/// Read a whole trial log. Every line must parse and indices must strictly increase.
pub fn read_trials(path: &Path) -> Result<(LogHeader, Vec<TrialRecord>)> {
    let display = path.display().to_string();
    let corrupt = |line: usize, message: String| Error::Corrupt {
        path: display.clone(),
        line,
        message,
    };
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let first = lines.next().ok_or_else(|| corrupt(1, "empty trial log".into()))??;
    let header: LogHeader =
        serde_json::from_str(&first).map_err(|e| corrupt(1, format!("bad header: {e}")))?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::Validation(format!(
            "{display}: schema version {} is not supported (expected {SCHEMA_VERSION})",
            header.schema_version
        )));
    }
    let mut records: Vec<TrialRecord> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let rec: TrialRecord = serde_json::from_str(&line).map_err(|e| corrupt(line_no, e.to_string()))?;
        if let Some(prev) = records.last() {
            if rec.index <= prev.index {
                return Err(corrupt(line_no, format!("index {} does not increase past {}", rec.index, prev.index)));
            }
        }
        records.push(rec);
    }
    Ok((header, records))
}

/// Like [`read_trials`], warning when the header hash differs from `expected`.
pub fn read_trials_checked(path: &Path, expected_hash: &str) -> Result<Vec<TrialRecord>> {
    let (header, records) = read_trials(path)?;
    if header.config_hash != expected_hash {
        log::warn!(
            "{}: config hash {} differs from expected {expected_hash}",
            path.display(),
            header.config_hash
        );
    }
    Ok(records)
}

/// Checkpoint layer entry: tensors keyed by role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointLayer {
    id: usize,
    #[serde(flatten)]
    params: LayerParams<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    accuracy: Option<f64>,
    arch: ArchDocument,
    layers: Vec<CheckpointLayer>,
}

/// Weights plus the architecture they belong to.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub arch: ArchitectureSpec,
    pub weights: NetworkWeights<f32>,
    pub config_hash: Option<String>,
    /// Validation accuracy recorded at save time.
    pub accuracy: Option<f64>,
}

impl Checkpoint {
    pub fn new(arch: ArchitectureSpec, weights: NetworkWeights<f32>) -> Self {
        Checkpoint {
            arch,
            weights,
            config_hash: None,
            accuracy: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            schema_version: SCHEMA_VERSION,
            config_hash: self.config_hash.clone(),
            accuracy: self.accuracy,
            arch: self.arch.to_document(),
            layers: self
                .weights
                .layers
                .iter()
                .enumerate()
                .map(|(id, p)| CheckpointLayer { id, params: p.clone() })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "checkpoint schema version {} is not supported",
                file.schema_version
            )));
        }
        let arch = ArchitectureSpec::from_document(file.arch)?;
        if file.layers.iter().enumerate().any(|(i, l)| l.id != i) {
            return Err(Error::Validation("checkpoint layers must be listed by ascending id".into()));
        }
        let weights = NetworkWeights {
            layers: file.layers.into_iter().map(|l| l.params).collect(),
        };
        weights.validate(&arch)?;
        Ok(Checkpoint {
            arch,
            weights,
            config_hash: file.config_hash,
            accuracy: file.accuracy,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Write via a sibling temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_string<R: AsRef<[String]>>(header: &[&str], rows: impl IntoIterator<Item = R>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r.as_ref()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// `drop,fraction_below,fraction_at_or_below`, one row per distinct drop.
pub fn edf_csv(curve: &EdfCurve) -> String {
    csv_string(
        &["drop", "fraction_below", "fraction_at_or_below"],
        curve.steps().into_iter().map(|(e, below, at)| [e.to_string(), below.to_string(), at.to_string()]),
    )
}

/// `field,bin,lo,hi,count` for every summary, in order.
pub fn hist_csv(summaries: &[DistributionSummary]) -> String {
    csv_string(
        &["field", "bin", "lo", "hi", "count"],
        summaries.iter().flat_map(|d| {
            d.bins.iter().enumerate().map(|(i, b)| {
                [d.field.name().to_string(), i.to_string(), b.lo.to_string(), b.hi.to_string(), b.count.to_string()]
            })
        }),
    )
}

/// `field,n,min,q1,median,q3,max`
pub fn quantiles_csv(summaries: &[DistributionSummary]) -> String {
    csv_string(
        &["field", "n", "min", "q1", "median", "q3", "max"],
        summaries.iter().map(|d| {
            [
                d.field.name().to_string(),
                d.n.to_string(),
                d.min.to_string(),
                d.q1.to_string(),
                d.median.to_string(),
                d.q3.to_string(),
                d.max.to_string(),
            ]
        }),
    )
}

/// `rank,index,phase,accuracy_drop,accuracy,c_flops,c_params,mcb,recipe_std,schedule,epochs,seed`
pub fn winners_csv(records: &[TrialRecord]) -> String {
    csv_string(
        &[
            "rank", "index", "phase", "accuracy_drop", "accuracy", "c_flops", "c_params", "mcb", "recipe_std", "schedule",
            "epochs", "seed",
        ],
        records.iter().enumerate().map(|(rank, r)| {
            [
                (rank + 1).to_string(),
                r.index.to_string(),
                r.phase.name().to_string(),
                r.accuracy_drop.to_string(),
                r.accuracy.map(|a| a.to_string()).unwrap_or_default(),
                r.cost.c_flops.to_string(),
                r.cost.c_params.to_string(),
                r.cost.mcb.to_string(),
                r.recipe_std.to_string(),
                r.schedule.name().to_string(),
                r.epochs.to_string(),
                r.seed.to_string(),
            ]
        }),
    )
}

/// `target_cflops,flops_reduction,k,mcb_q1,mcb_median,mcb_q3,best_drop,uniform_mcb`
pub fn budget_csv(rows: &[RegimeRow]) -> String {
    csv_string(
        &["target_cflops", "flops_reduction", "k", "mcb_q1", "mcb_median", "mcb_q3", "best_drop", "uniform_mcb"],
        rows.iter().map(|r| {
            [r.target_cflops, r.flops_reduction, r.k as f64, r.mcb_q1, r.mcb_median, r.mcb_q3, r.best_drop, r.uniform_mcb]
                .map(|v| v.to_string())
        }),
    )
}

/// `a,b,threshold,diff`, one row per pooled decile of each pair.
pub fn compare_csv(pairs: &[PairComparison]) -> String {
    csv_string(
        &["a", "b", "threshold", "diff"],
        pairs.iter().flat_map(|p| {
            p.thresholds
                .iter()
                .zip(&p.diffs)
                .map(|(t, d)| [p.a.clone(), p.b.clone(), t.to_string(), d.to_string()])
        }),
    )
}
