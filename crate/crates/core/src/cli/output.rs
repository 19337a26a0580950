//! Run directory layout: snapshot CSVs, `moments.csv`, `free_energy.csv`,
//! `timing.jsonl`, `manifest.json` and, for failed runs, `error.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloud::{snapshot_file_name, write_snapshot};
use crate::prox::ProxLogRecord;

use super::{RunError, RunSummary};

pub const MOMENTS_FILE: &str = "moments.csv";
pub const FREE_ENERGY_FILE: &str = "free_energy.csv";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ERROR_FILE: &str = "error.json";

pub fn latent_snapshot_file_name(k: usize) -> String {
    format!("latent_{}", snapshot_file_name(k))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub seed: u64,
    pub status: String,
    /// The validated configuration, as accepted by `validate`.
    pub config: String,
    /// File name → SHA-256 of the git blob encoding of its contents.
    pub files: BTreeMap<String, String>,
    /// Hash over every file hash except the timing log.
    pub numeric_digest: String,
}

#[derive(Serialize)]
struct TimingLine<'a> {
    #[serde(flatten)]
    record: ProxLogRecord,
    stages: Vec<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub code: String,
    /// Step at which the run stopped; absent for non-numerical failures.
    pub step: Option<usize>,
    pub message: String,
}

/// `sha256("blob <len>\0" ‖ bytes)`, hex encoded.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

fn numeric_digest(files: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (name, hash) in files.iter().filter(|(n, _)| n.as_str() != TIMING_FILE) {
        h.update(format!("{hash}  {name}\n").as_bytes());
    }
    hex::encode(h.finalize())
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// `t,mean_1..mean_d,var_ij` (upper triangle, row-major).
pub fn moments_csv(summary: &RunSummary) -> String {
    let Some(first) = summary.moments.first() else {
        return String::new();
    };
    let d = first.mean.len();
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|i| format!("mean_{i}")));
    for i in 1..=d {
        for j in i..=d {
            header.push(format!("var_{i}{j}"));
        }
    }
    let mut out = header.join(",");
    out.push('\n');
    for row in &summary.moments {
        let mut fields = vec![num(row.t)];
        fields.extend(row.mean.iter().map(|v| num(*v)));
        for i in 0..d {
            for j in i..d {
                fields.push(num(row.covariance[[i, j]]));
            }
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn free_energy_csv(summary: &RunSummary) -> String {
    let mut out = String::from("t,F\n");
    for (t, f) in &summary.free_energy {
        out.push_str(&format!("{},{}\n", num(*t), num(*f)));
    }
    out
}

pub fn timing_jsonl(summary: &RunSummary) -> String {
    let mut out = String::new();
    for s in &summary.steps {
        let line = TimingLine {
            record: s.report.log_record(s.k),
            stages: s.stages.iter().map(|st| st.as_str()).collect(),
        };
        out.push_str(&serde_json::to_string(&line).expect("plain record serializes"));
        out.push('\n');
    }
    out
}

fn is_generated(name: &str) -> bool {
    (name.starts_with("snapshot_k=") || name.starts_with("latent_snapshot_k=")) && name.ends_with(".csv")
        || [MOMENTS_FILE, FREE_ENERGY_FILE, TIMING_FILE, MANIFEST_FILE, ERROR_FILE].contains(&name)
}

/// Writes the run directory, replacing artifacts of an earlier run there.
pub fn write_outputs(dir: &Path, summary: &RunSummary, failure: Option<&RunError>) -> io::Result<Manifest> {
    fs::create_dir_all(dir)?;
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() && is_generated(&entry.file_name().to_string_lossy()) {
            fs::remove_file(entry.path())?;
        }
    }

    let mut files = BTreeMap::new();
    let mut put = |name: String, bytes: &[u8]| -> io::Result<()> {
        fs::write(dir.join(&name), bytes)?;
        files.insert(name, blob_hash(bytes));
        Ok(())
    };

    for (k, cloud) in &summary.snapshots {
        let mut buf = Vec::new();
        write_snapshot(&mut buf, cloud)?;
        put(snapshot_file_name(*k), &buf)?;
    }
    for (k, cloud) in &summary.latent_snapshots {
        let mut buf = Vec::new();
        write_snapshot(&mut buf, cloud)?;
        put(latent_snapshot_file_name(*k), &buf)?;
    }
    if !summary.moments.is_empty() {
        put(MOMENTS_FILE.into(), moments_csv(summary).as_bytes())?;
    }
    if !summary.free_energy.is_empty() {
        put(FREE_ENERGY_FILE.into(), free_energy_csv(summary).as_bytes())?;
    }
    if !summary.steps.is_empty() {
        put(TIMING_FILE.into(), timing_jsonl(summary).as_bytes())?;
    }
    if let Some(e) = failure {
        let record = ErrorRecord {
            code: e.code().to_string(),
            step: e.step(),
            message: e.to_string(),
        };
        let text = serde_json::to_string_pretty(&record).map_err(io::Error::other)?;
        put(ERROR_FILE.into(), text.as_bytes())?;
    }

    let manifest = Manifest {
        scenario: summary.config.scenario.clone(),
        seed: summary.config.seed,
        status: if failure.is_some() { "failed" } else { "ok" }.to_string(),
        config: summary.config.to_toml_string(),
        numeric_digest: numeric_digest(&files),
        files,
    };
    let mut f = fs::File::create(dir.join(MANIFEST_FILE))?;
    f.write_all(serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_of_empty_input() {
        // sha256 of "blob 0\0"
        assert_eq!(
            blob_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }

    #[test]
    fn generated_names() {
        assert!(is_generated("snapshot_k=12.csv"));
        assert!(is_generated("latent_snapshot_k=0.csv"));
        assert!(is_generated("manifest.json"));
        assert!(!is_generated("notes.txt"));
        assert_eq!(latent_snapshot_file_name(3), "latent_snapshot_k=3.csv");
    }
}
