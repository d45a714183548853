//! On-disk formats: `.sol` corpora, label CSVs, manifest JSONL files,
//! dedup reports, metrics CSVs, and the ball/token dumps.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cgbc_core::ball::BallSet;
use cgbc_core::corpus::{DatasetManifest, DedupReport, ManifestRole, VulnKind};
use cgbc_core::lexer::Token;

use crate::{AppError, AppResult};

/// Reads every `.sol` file under `dir` (recursively), sorted by relative
/// path so downstream processing is order-stable. Ids are relative paths
/// with forward slashes.
pub fn read_corpus(dir: &Path) -> AppResult<Vec<(String, String)>> {
    if !dir.is_dir() {
        return Err(AppError::Data(format!("{} is not a directory", dir.display())));
    }
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| AppError::Data(e.to_string()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        if entry.path().extension().and_then(|e| e.to_str()) != Some("sol") {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(dir)
            .expect("walkdir stays under root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        let source = fs::read_to_string(entry.path())
            .map_err(|e| AppError::Data(format!("{}: {e}", entry.path().display())))?;
        out.push((rel, source));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// One manifest line: `{"id":..., "hash":..., "role":...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub hash: String,
    pub role: ManifestRole,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> AppResult<()> {
    let mut f = fs::File::create(path)?;
    for e in entries {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> AppResult<Vec<ManifestEntry>> {
    let f = fs::File::open(path)
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| {
            AppError::Data(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(entry);
    }
    Ok(out)
}

/// Converts manifest lines to the core manifest plus its hash map; every
/// line must carry the same role.
pub fn to_dataset_manifest(
    path: &Path,
    entries: &[ManifestEntry],
) -> AppResult<(DatasetManifest, BTreeMap<String, String>)> {
    let role = entries
        .first()
        .map(|e| e.role)
        .ok_or_else(|| AppError::Data(format!("{}: empty manifest", path.display())))?;
    if entries.iter().any(|e| e.role != role) {
        return Err(AppError::Data(format!(
            "{}: mixed roles within one manifest",
            path.display()
        )));
    }
    let mut hashes = BTreeMap::new();
    for e in entries {
        hashes.insert(e.id.clone(), e.hash.clone());
    }
    Ok((
        DatasetManifest {
            role,
            records: entries.iter().map(|e| e.id.clone()).collect(),
            provenance: path.display().to_string(),
        },
        hashes,
    ))
}

/// Labels CSV: header `id,kind,label`, binary labels only.
pub fn read_labels(path: &Path) -> AppResult<Vec<(String, VulnKind, u8)>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    {
        let headers = reader.headers()?;
        let expect = ["id", "kind", "label"];
        let got: Vec<&str> = headers.iter().collect();
        if got != expect {
            return Err(AppError::Data(format!(
                "{}: bad labels header {:?}, expected {:?}",
                path.display(),
                got,
                expect
            )));
        }
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let kind = rec.get(1).unwrap_or_default();
        let kind = VulnKind::parse(kind)
            .ok_or_else(|| AppError::Data(format!("unknown kind `{kind}` for `{id}`")))?;
        let label = rec.get(2).unwrap_or_default();
        let label: u8 = label
            .parse()
            .ok()
            .filter(|l| *l <= 1)
            .ok_or_else(|| AppError::Data(format!("label `{label}` for `{id}` is not 0/1")))?;
        out.push((id, kind, label));
    }
    Ok(out)
}

pub fn write_labels(path: &Path, rows: &[(String, VulnKind, u8)]) -> AppResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "kind", "label"])?;
    for (id, kind, label) in rows {
        w.write_record([id.as_str(), kind.as_str(), &label.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-kind label map keyed by record id.
pub fn labels_by_kind(
    rows: &[(String, VulnKind, u8)],
) -> BTreeMap<VulnKind, BTreeMap<String, u8>> {
    let mut out: BTreeMap<VulnKind, BTreeMap<String, u8>> = BTreeMap::new();
    for (id, kind, label) in rows {
        out.entry(*kind).or_default().insert(id.clone(), *label);
    }
    out
}

/// Dedup report CSV: `group_hash,kept_id,removed_ids` with `;`-joined ids.
pub fn write_dedup_report(path: &Path, report: &DedupReport) -> AppResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["group_hash", "kept_id", "removed_ids"])?;
    for g in &report.groups {
        w.write_record([g.hash.as_str(), g.kept_id.as_str(), &g.removed_ids.join(";")])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of a sweep results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub kind: String,
    pub noise: f64,
    pub seed: u64,
    pub arm: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub const RESULTS_HEADER: [&str; 7] =
    ["kind", "noise", "seed", "arm", "precision", "recall", "f1"];

pub fn write_results(path: &Path, rows: &[ResultRow]) -> AppResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESULTS_HEADER)?;
    for r in rows {
        w.write_record([
            r.kind.clone(),
            format_float(r.noise),
            r.seed.to_string(),
            r.arm.clone(),
            format_float(r.precision),
            format_float(r.recall),
            format_float(r.f1),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> AppResult<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    {
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        for (got, want) in headers.iter().zip(RESULTS_HEADER) {
            if got != want {
                return Err(AppError::Data(format!(
                    "results header mismatch: found `{got}`, expected `{want}`"
                )));
            }
        }
        if headers.len() != RESULTS_HEADER.len() {
            return Err(AppError::Data(format!(
                "results header has {} columns, expected {}",
                headers.len(),
                RESULTS_HEADER.len()
            )));
        }
    }
    let mut out = Vec::new();
    for rec in reader.deserialize::<ResultRow>() {
        out.push(rec?);
    }
    if out.is_empty() {
        return Err(AppError::Data(format!("{}: no result rows", path.display())));
    }
    Ok(out)
}

/// Evaluation metrics CSV: `kind,noise,seed,precision,recall,f1`.
pub fn write_metrics(
    path: &Path,
    rows: &[(String, f64, u64, f64, f64, f64)],
) -> AppResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["kind", "noise", "seed", "precision", "recall", "f1"])?;
    for (kind, noise, seed, p, r, f) in rows {
        w.write_record([
            kind.clone(),
            format_float(*noise),
            seed.to_string(),
            format_float(*p),
            format_float(*r),
            format_float(*f),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-notation floats keep the CSVs byte-stable and diff-friendly.
pub fn format_float(v: f64) -> String {
    format!("{v:.6}")
}

/// Ball dump JSONL: one line per ball.
#[derive(Debug, Serialize, Deserialize)]
pub struct BallDumpLine {
    pub ball: usize,
    pub members: Vec<usize>,
    pub label: u8,
    pub purity: f64,
    pub center: Vec<f64>,
}

pub fn write_ball_dump(path: &Path, set: &BallSet) -> AppResult<()> {
    let mut f = fs::File::create(path)?;
    for (k, b) in set.balls.iter().enumerate() {
        let line = BallDumpLine {
            ball: k,
            members: b.member_ids.clone(),
            label: b.label,
            purity: b.purity,
            center: b.center.clone(),
        };
        serde_json::to_writer(&mut f, &line)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

/// Token dump JSONL: `{"kind":..., "text":..., "offset":...}` per token.
pub fn write_token_dump<W: Write>(mut w: W, tokens: &[Token]) -> AppResult<()> {
    for t in tokens {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Creates `dir` (and parents) if needed.
pub fn ensure_dir(dir: &Path) -> AppResult<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// `<base>/<rel>` with parent directories created.
pub fn prepared_path(base: &Path, rel: &str) -> AppResult<PathBuf> {
    let p = base.join(rel);
    if let Some(parent) = p.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let entries = vec![
            ManifestEntry { id: "a.sol".into(), hash: "00".into(), role: ManifestRole::Test },
            ManifestEntry { id: "b.sol".into(), hash: "01".into(), role: ManifestRole::Test },
        ];
        write_manifest(&path, &entries).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), entries);
        let (m, hashes) = to_dataset_manifest(&path, &entries).unwrap();
        assert_eq!(m.role, ManifestRole::Test);
        assert_eq!(hashes.len(), 2);
    }

    #[test]
    fn mixed_roles_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let entries = vec![
            ManifestEntry { id: "a".into(), hash: "00".into(), role: ManifestRole::Test },
            ManifestEntry { id: "b".into(), hash: "01".into(), role: ManifestRole::Pretrain },
        ];
        write_manifest(&path, &entries).unwrap();
        let entries = read_manifest(&path).unwrap();
        assert!(to_dataset_manifest(&path, &entries).is_err());
    }

    #[test]
    fn labels_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        let rows = vec![
            ("a.sol".to_string(), VulnKind::RE, 1u8),
            ("b.sol".to_string(), VulnKind::IO, 0u8),
        ];
        write_labels(&path, &rows).unwrap();
        assert_eq!(read_labels(&path).unwrap(), rows);

        std::fs::write(&path, "id,kind,label\nx,RE,7\n").unwrap();
        assert!(read_labels(&path).is_err());
        std::fs::write(&path, "id,type,label\n").unwrap();
        assert!(read_labels(&path).is_err());
    }

    #[test]
    fn corpus_reader_is_sorted_and_recursive() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("b.sol"), "contract B {}").unwrap();
        std::fs::write(dir.path().join("sub/a.sol"), "contract A {}").unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let corpus = read_corpus(dir.path()).unwrap();
        let ids: Vec<&str> = corpus.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, ["b.sol", "sub/a.sol"]);
    }

    #[test]
    fn results_round_trip_and_header_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows = vec![ResultRow {
            kind: "RE".into(),
            noise: 0.2,
            seed: 1,
            arm: "full".into(),
            precision: 0.9,
            recall: 0.8,
            f1: 0.847059,
        }];
        write_results(&path, &rows).unwrap();
        let back = read_results(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].kind, "RE");
        assert!((back[0].f1 - 0.847059).abs() < 1e-9);

        std::fs::write(&path, "kind,noise,seed,arm,precision,recall\n").unwrap();
        assert!(read_results(&path).is_err());
        std::fs::write(&path, "kind,noise,seed,arm,precision,recall,f1\n").unwrap();
        assert!(read_results(&path).is_err()); // empty body
    }
}
