//! Corpus management: source normalization, content hashing, duplicate
//! removal across dataset roles, and seeded label-noise injection.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::lexer::{tokenize, TokenKind};
use crate::rng::seeded_rng;
use crate::{Error, Result};

/// Vulnerability kinds carried by labels. One detector is trained per kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum VulnKind {
    /// Reentrancy
    RE,
    /// Timestamp dependency
    TD,
    /// Integer overflow/underflow
    IO,
}

impl VulnKind {
    pub const ALL: [VulnKind; 3] = [VulnKind::RE, VulnKind::TD, VulnKind::IO];

    pub fn as_str(&self) -> &'static str {
        match self {
            VulnKind::RE => "RE",
            VulnKind::TD => "TD",
            VulnKind::IO => "IO",
        }
    }

    pub fn parse(s: &str) -> Option<VulnKind> {
        match s {
            "RE" => Some(VulnKind::RE),
            "TD" => Some(VulnKind::TD),
            "IO" => Some(VulnKind::IO),
            _ => None,
        }
    }
}

impl core::fmt::Display for VulnKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One contract: source text, normalized content hash, and per-kind binary
/// labels (0 secure, 1 vulnerable). A record may be labeled for some kinds
/// and not others.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractRecord {
    pub id: String,
    pub source: String,
    /// Hex SHA-256 of `normalize_source(source)`.
    pub normalized_hash: String,
    pub labels: BTreeMap<VulnKind, u8>,
}

impl ContractRecord {
    pub fn new(id: impl Into<String>, source: impl Into<String>) -> Self {
        let source = source.into();
        let normalized = normalize_source(&source);
        ContractRecord {
            id: id.into(),
            source,
            normalized_hash: content_hash(&normalized.text),
            labels: BTreeMap::new(),
        }
    }

    pub fn with_label(mut self, kind: VulnKind, label: u8) -> Result<Self> {
        if label > 1 {
            return Err(Error::NonBinaryLabel {
                id: self.id.clone(),
                value: i64::from(label),
            });
        }
        self.labels.insert(kind, label);
        Ok(self)
    }
}

/// Dataset roles in cross-set dedup priority order: the evaluation set is
/// always protected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ManifestRole {
    Pretrain,
    Finetune,
    Test,
}

impl ManifestRole {
    fn priority(self) -> u8 {
        match self {
            ManifestRole::Test => 2,
            ManifestRole::Finetune => 1,
            ManifestRole::Pretrain => 0,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ManifestRole::Pretrain => "pretrain",
            ManifestRole::Finetune => "finetune",
            ManifestRole::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<ManifestRole> {
        match s {
            "pretrain" => Some(ManifestRole::Pretrain),
            "finetune" => Some(ManifestRole::Finetune),
            "test" => Some(ManifestRole::Test),
            _ => None,
        }
    }
}

impl core::fmt::Display for ManifestRole {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An ordered list of record ids playing one dataset role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub role: ManifestRole,
    pub records: Vec<String>,
    pub provenance: String,
}

/// Parameters for synthetic label-noise injection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Fraction of records to flip, in [0, 1].
    pub rate: f64,
    pub seed: u64,
    pub kind: VulnKind,
}

/// Normalization output; `clean` is false when the lexer hit an
/// unterminated string or comment (the text still normalizes).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedSource {
    pub text: String,
    pub clean: bool,
}

/// Strips `//` and `/* */` comments and collapses whitespace runs to a
/// single space (string literals untouched), then trims. Idempotent.
pub fn normalize_source(source: &str) -> NormalizedSource {
    let stream = tokenize(source);
    let mut out = String::with_capacity(source.len());
    for t in &stream.tokens {
        match t.kind {
            // Comments separate tokens the way whitespace does.
            TokenKind::Comment | TokenKind::Whitespace => {
                if !out.ends_with(' ') {
                    out.push(' ');
                }
            }
            _ => out.push_str(&t.text),
        }
    }
    NormalizedSource {
        text: out.trim().to_string(),
        clean: stream.flags.clean(),
    }
}

/// Hex SHA-256 of the UTF-8 bytes. Callers pass already-normalized text.
pub fn content_hash(normalized: &str) -> String {
    let digest = Sha256::digest(normalized.as_bytes());
    hex::encode(digest)
}

/// One group of identical contracts found by [`dedup`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DupGroup {
    pub hash: String,
    pub kept_id: String,
    /// Lexicographically sorted.
    pub removed_ids: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DedupReport {
    /// Sorted by hash.
    pub groups: Vec<DupGroup>,
}

/// Removes duplicate-hash records. Within a role, the lexicographically
/// smallest id survives; across roles, any record whose hash appears in a
/// higher-priority role (test > finetune > pretrain) is removed from the
/// lower-priority one. Record order inside each manifest is preserved.
pub fn dedup(
    manifests: &[DatasetManifest],
    hashes: &BTreeMap<String, String>,
) -> Result<(Vec<DatasetManifest>, DedupReport)> {
    for m in manifests {
        let mut seen = BTreeSet::new();
        for id in &m.records {
            if !hashes.contains_key(id) {
                return Err(Error::DanglingRecord { id: id.clone() });
            }
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateRecordId { id: id.clone() });
            }
        }
    }

    // hash -> role priority -> ids carrying it
    let mut by_hash: BTreeMap<&str, BTreeMap<u8, BTreeSet<&str>>> = BTreeMap::new();
    for m in manifests {
        for id in &m.records {
            by_hash
                .entry(hashes[id].as_str())
                .or_default()
                .entry(m.role.priority())
                .or_default()
                .insert(id.as_str());
        }
    }

    // Survivor per (hash, priority): smallest id in the highest priority
    // that carries the hash; all other carriers are removed.
    let mut removed: BTreeSet<&str> = BTreeSet::new();
    let mut groups = Vec::new();
    for (hash, by_prio) in &by_hash {
        let top_prio = *by_prio.keys().next_back().expect("non-empty");
        let kept = *by_prio[&top_prio].iter().next().expect("non-empty");
        let mut removed_here: Vec<String> = Vec::new();
        for ids in by_prio.values() {
            for &id in ids {
                if id != kept {
                    removed.insert(id);
                    removed_here.push(id.to_string());
                }
            }
        }
        if !removed_here.is_empty() {
            removed_here.sort();
            groups.push(DupGroup {
                hash: (*hash).to_string(),
                kept_id: kept.to_string(),
                removed_ids: removed_here,
            });
        }
    }

    let pruned = manifests
        .iter()
        .map(|m| DatasetManifest {
            role: m.role,
            records: m
                .records
                .iter()
                .filter(|id| !removed.contains(id.as_str()))
                .cloned()
                .collect(),
            provenance: m.provenance.clone(),
        })
        .collect();

    Ok((pruned, DedupReport { groups }))
}

/// Flips exactly `round(rate * n)` distinct labels (round half up), chosen
/// without replacement by the seeded generator. Order is preserved;
/// flipping twice with the same spec restores the input.
pub fn inject_label_noise(
    records: &[(String, u8)],
    spec: &NoiseSpec,
) -> Result<(Vec<(String, u8)>, Vec<String>)> {
    if !(0.0..=1.0).contains(&spec.rate) {
        return Err(Error::InvalidNoiseRate { rate: spec.rate });
    }
    for (id, label) in records {
        if *label > 1 {
            return Err(Error::NonBinaryLabel {
                id: id.clone(),
                value: i64::from(*label),
            });
        }
    }

    let n = records.len();
    let count = flip_count(spec.rate, n);
    let mut rng = seeded_rng(spec.seed);
    let chosen: BTreeSet<usize> = rand::seq::index::sample(&mut rng, n, count)
        .into_iter()
        .collect();

    let mut out = Vec::with_capacity(n);
    let mut flipped = Vec::with_capacity(count);
    for (i, (id, label)) in records.iter().enumerate() {
        if chosen.contains(&i) {
            out.push((id.clone(), 1 - *label));
            flipped.push(id.clone());
        } else {
            out.push((id.clone(), *label));
        }
    }
    Ok((out, flipped))
}

/// Round half up on the f64 product, the exact count contract of
/// [`inject_label_noise`].
pub fn flip_count(rate: f64, n: usize) -> usize {
    (rate * n as f64 + 0.5) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn normalize_fixed_point() {
        let n = normalize_source("contract A {}");
        assert_eq!(n.text, "contract A {}");
        assert!(n.clean);
    }

    #[test]
    fn normalize_strips_comment_and_collapses_whitespace() {
        let n = normalize_source("contract A {\n  // note\n}");
        assert_eq!(n.text, "contract A { }");
    }

    #[test]
    fn normalize_is_idempotent_and_collides_formatting_variants() {
        let a = normalize_source("contract  A{}");
        let b = normalize_source("contract A{}");
        assert_eq!(a.text, b.text);
        assert_eq!(normalize_source(&a.text).text, a.text);
        assert_eq!(content_hash(&a.text), content_hash(&b.text));
    }

    #[test]
    fn normalize_preserves_string_interiors() {
        let n = normalize_source("x = \"a  b // not a comment\";");
        assert_eq!(n.text, "x = \"a  b // not a comment\";");
    }

    #[test]
    fn unterminated_input_is_flagged_but_normalizes() {
        let n = normalize_source("a /* open");
        assert!(!n.clean);
        assert_eq!(n.text, "a");
        assert_eq!(normalize_source(&n.text).text, n.text);
    }

    #[test]
    fn hash_of_empty_string_matches_published_value() {
        assert_eq!(
            content_hash(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn comment_only_difference_hashes_equal() {
        let a = ContractRecord::new("a", "contract A { uint256 x; }");
        let b = ContractRecord::new("b", "contract A { /* note */ uint256 x; }");
        assert_eq!(a.normalized_hash, b.normalized_hash);
    }

    fn manifest(role: ManifestRole, ids: &[&str]) -> DatasetManifest {
        DatasetManifest {
            role,
            records: ids.iter().map(|s| s.to_string()).collect(),
            provenance: String::new(),
        }
    }

    fn hashmap(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn disjoint_manifests_unchanged() {
        let ms = vec![
            manifest(ManifestRole::Test, &["t1"]),
            manifest(ManifestRole::Finetune, &["f1"]),
        ];
        let hs = hashmap(&[("t1", "h1"), ("f1", "h2")]);
        let (pruned, report) = dedup(&ms, &hs).unwrap();
        assert_eq!(pruned, ms);
        assert!(report.groups.is_empty());
    }

    #[test]
    fn cross_set_duplicate_removed_from_lower_priority_only() {
        let ms = vec![
            manifest(ManifestRole::Test, &["t1"]),
            manifest(ManifestRole::Finetune, &["f1", "f2"]),
        ];
        let hs = hashmap(&[("t1", "h1"), ("f1", "h1"), ("f2", "h2")]);
        let (pruned, report) = dedup(&ms, &hs).unwrap();
        assert_eq!(pruned[0].records, vec!["t1".to_string()]);
        assert_eq!(pruned[1].records, vec!["f2".to_string()]);
        assert_eq!(report.groups.len(), 1);
        assert_eq!(report.groups[0].kept_id, "t1");
        assert_eq!(report.groups[0].removed_ids, vec!["f1".to_string()]);
    }

    #[test]
    fn intra_set_triplicate_keeps_lowest_id() {
        let ms = vec![manifest(ManifestRole::Pretrain, &["p3", "p1", "p2"])];
        let hs = hashmap(&[("p1", "h"), ("p2", "h"), ("p3", "h")]);
        let (pruned, report) = dedup(&ms, &hs).unwrap();
        assert_eq!(pruned[0].records, vec!["p1".to_string()]);
        assert_eq!(report.groups.len(), 1);
        assert_eq!(report.groups[0].kept_id, "p1");
        assert_eq!(
            report.groups[0].removed_ids,
            vec!["p2".to_string(), "p3".to_string()]
        );
    }

    #[test]
    fn dangling_id_is_a_hard_error() {
        let ms = vec![manifest(ManifestRole::Test, &["ghost"])];
        let err = dedup(&ms, &BTreeMap::new()).unwrap_err();
        assert_eq!(
            err,
            Error::DanglingRecord {
                id: "ghost".to_string()
            }
        );
    }

    fn labeled(n: usize) -> Vec<(String, u8)> {
        (0..n).map(|i| (alloc::format!("r{i}"), (i % 2) as u8)).collect()
    }

    #[test]
    fn zero_rate_is_identity() {
        let recs = labeled(6);
        let spec = NoiseSpec { rate: 0.0, seed: 1, kind: VulnKind::RE };
        let (out, flipped) = inject_label_noise(&recs, &spec).unwrap();
        assert_eq!(out, recs);
        assert!(flipped.is_empty());
    }

    #[test]
    fn full_rate_flips_everything() {
        let recs = labeled(4);
        let spec = NoiseSpec { rate: 1.0, seed: 9, kind: VulnKind::TD };
        let (out, flipped) = inject_label_noise(&recs, &spec).unwrap();
        assert_eq!(flipped.len(), 4);
        for ((_, a), (_, b)) in recs.iter().zip(&out) {
            assert_eq!(*b, 1 - *a);
        }
    }

    #[test]
    fn rate_point_three_on_ten_flips_exactly_three_deterministically() {
        let recs = labeled(10);
        let spec = NoiseSpec { rate: 0.3, seed: 7, kind: VulnKind::IO };
        let (out1, flipped1) = inject_label_noise(&recs, &spec).unwrap();
        let (out2, flipped2) = inject_label_noise(&recs, &spec).unwrap();
        assert_eq!(flipped1.len(), 3);
        assert_eq!(flipped1, flipped2);
        assert_eq!(out1, out2);
    }

    #[test]
    fn non_binary_label_is_rejected() {
        let recs = vec![("x".to_string(), 2u8)];
        let spec = NoiseSpec { rate: 0.5, seed: 1, kind: VulnKind::RE };
        assert!(inject_label_noise(&recs, &spec).is_err());
    }

    proptest::proptest! {
        #[test]
        fn dedup_is_sound(
            assignments in proptest::collection::vec((0usize..3, 0usize..6), 1..40),
        ) {
            // Records p0..pn spread over the three roles with hashes drawn
            // from a small pool to force collisions.
            let mut manifests = vec![
                manifest(ManifestRole::Pretrain, &[]),
                manifest(ManifestRole::Finetune, &[]),
                manifest(ManifestRole::Test, &[]),
            ];
            let mut hashes = BTreeMap::new();
            for (i, (role, hash)) in assignments.iter().enumerate() {
                let id = alloc::format!("r{i:03}");
                manifests[*role].records.push(id.clone());
                hashes.insert(id, alloc::format!("h{hash}"));
            }
            let (pruned, _) = dedup(&manifests, &hashes).unwrap();

            // No hash survives twice anywhere, and none in two role-sets.
            let mut seen: BTreeMap<&str, ManifestRole> = BTreeMap::new();
            for m in &pruned {
                for id in &m.records {
                    let h = hashes[id].as_str();
                    proptest::prop_assert!(
                        !seen.contains_key(h) || seen[h] == m.role,
                        "hash {h} appears in two role-sets"
                    );
                    proptest::prop_assert!(
                        seen.insert(h, m.role).is_none(),
                        "hash {h} survived twice"
                    );
                }
            }
            // Every hash that went in still has exactly one survivor.
            let distinct: BTreeSet<&String> = hashes.values().collect();
            proptest::prop_assert_eq!(seen.len(), distinct.len());
        }

        #[test]
        fn normalize_is_idempotent(src in "\\PC*") {
            let once = normalize_source(&src);
            let twice = normalize_source(&once.text);
            proptest::prop_assert_eq!(once.text, twice.text);
        }

        #[test]
        fn noise_count_exact_and_involutive(
            n in 1usize..400,
            rate_idx in 0usize..5,
            seed in proptest::prelude::any::<u64>(),
        ) {
            let rate = [0.0, 0.1, 0.2, 0.3, 0.4][rate_idx];
            let recs: Vec<(String, u8)> =
                (0..n).map(|i| (alloc::format!("r{i}"), (i % 2) as u8)).collect();
            let spec = NoiseSpec { rate, seed, kind: VulnKind::RE };
            let (once, flipped) = inject_label_noise(&recs, &spec).unwrap();
            proptest::prop_assert_eq!(flipped.len(), flip_count(rate, n));
            let (twice, _) = inject_label_noise(&once, &spec).unwrap();
            proptest::prop_assert_eq!(twice, recs);
        }
    }
}
