//! Metrics log and its JSON Lines encoding.
//!
//! Line 1 is the run manifest; every other line is an `epoch`, `split` or `branch` record.
//! Exact emergence is a decimal string. Non-finite floats are written as the strings
//! `"inf"`, `"-inf"` and `"nan"`.

use std::io::{BufRead, Write};

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::HarnessError;
use crate::instrument::ActiveCounts;

pub(crate) mod float_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other:?}"))),
            },
        }
    }
}

pub(crate) mod decimal {
    use num_bigint::BigUint;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_str_radix(10))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let text = String::deserialize(d)?;
        BigUint::parse_bytes(text.as_bytes(), 10)
            .ok_or_else(|| serde::de::Error::custom(format!("not a decimal integer: {text:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub rng: String,
    /// Seconds since the Unix epoch; the only field that differs between identical runs.
    pub created_unix: u64,
    pub config: ExperimentConfig,
    pub architecture: crate::nn::ArchitectureSpec,
    pub probe_indices_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub branch: String,
    pub epoch: usize,
    #[serde(with = "float_repr")]
    pub train_accuracy: f64,
    #[serde(with = "float_repr")]
    pub test_accuracy: f64,
    #[serde(with = "float_repr")]
    pub mean_loss: f64,
    pub active_counts: ActiveCounts,
    #[serde(with = "decimal")]
    pub emergence_exact: BigUint,
    #[serde(with = "float_repr")]
    pub emergence_log: f64,
    #[serde(with = "float_repr")]
    pub relative_emergence: f64,
    pub param_total: u64,
    pub param_unmasked: u64,
    #[serde(with = "float_repr")]
    pub sparsity: f64,
}

/// Measurement taken right after a branch is created (after pruning, before training).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRecord {
    pub branch: String,
    pub epoch: usize,
    #[serde(with = "float_repr")]
    pub test_accuracy: f64,
    pub active_counts: ActiveCounts,
    #[serde(with = "decimal")]
    pub emergence_exact: BigUint,
    #[serde(with = "float_repr")]
    pub emergence_log: f64,
    #[serde(with = "float_repr")]
    pub relative_emergence: f64,
    pub param_total: u64,
    pub param_unmasked: u64,
    #[serde(with = "float_repr")]
    pub sparsity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case", deny_unknown_fields)]
pub enum BranchOutcome {
    Completed,
    Failed { epoch: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchStatus {
    pub branch: String,
    pub index: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prune_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<crate::nn::ArchitectureSpec>,
    pub outcome: BranchOutcome,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsLog {
    pub manifest: RunManifest,
    /// Sorted by (branch index, epoch).
    pub records: Vec<EpochRecord>,
    pub splits: Vec<SplitRecord>,
    pub branches: Vec<BranchStatus>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Manifest(RunManifest),
    Epoch(EpochRecord),
    Split(SplitRecord),
    Branch(BranchStatus),
}

impl MetricsLog {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn branch_names(&self) -> Vec<&str> {
        self.branches.iter().map(|b| b.branch.as_str()).collect()
    }

    pub fn branch_records<'a>(&'a self, branch: &'a str) -> impl Iterator<Item = &'a EpochRecord> + 'a {
        self.records.iter().filter(move |r| r.branch == branch)
    }

    pub fn split(&self, branch: &str) -> Option<&SplitRecord> {
        self.splits.iter().find(|s| s.branch == branch)
    }

    pub fn failed(&self) -> impl Iterator<Item = &BranchStatus> {
        self.branches.iter().filter(|b| matches!(b.outcome, BranchOutcome::Failed { .. }))
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), HarnessError> {
        let mut put = |line: Line| -> Result<(), HarnessError> {
            let text = serde_json::to_string(&line).map_err(|e| HarnessError::Numeric(e.to_string()))?;
            writeln!(out, "{text}").map_err(|e| HarnessError::Io { path: "<metrics>".into(), source: e })
        };
        put(Line::Manifest(self.manifest.clone()))?;
        for r in &self.records {
            put(Line::Epoch(r.clone()))?;
        }
        for s in &self.splits {
            put(Line::Split(s.clone()))?;
        }
        for b in &self.branches {
            put(Line::Branch(b.clone()))?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String, HarnessError> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, HarnessError> {
        let mut manifest = None;
        let mut records = Vec::new();
        let mut splits = Vec::new();
        let mut branches = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| HarnessError::Io { path: "<metrics>".into(), source: e })?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line)
                .map_err(|e| HarnessError::Config(format!("metrics line {}: {e}", n + 1)))?;
            match parsed {
                Line::Manifest(m) if manifest.is_none() && n == 0 => manifest = Some(m),
                Line::Manifest(_) => {
                    return Err(HarnessError::Config(format!("metrics line {}: manifest must be line 1 only", n + 1)))
                }
                Line::Epoch(r) => records.push(r),
                Line::Split(s) => splits.push(s),
                Line::Branch(b) => branches.push(b),
            }
        }
        let manifest = manifest.ok_or_else(|| HarnessError::Config("metrics log has no manifest".into()))?;
        Ok(Self { manifest, records, splits, branches })
    }

    pub fn from_jsonl(text: &str) -> Result<Self, HarnessError> {
        Self::read_jsonl(text.as_bytes())
    }
}
