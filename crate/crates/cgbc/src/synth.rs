//! Deterministic synthetic fixtures: a Solidity corpus generator with
//! planted, token-visible vulnerability patterns (ground-truth labels by
//! construction), and labeled Gaussian feature blobs for experiments that
//! bypass the frontend.
//!
//! These exist so the pipeline can be exercised end-to-end without
//! shipping a contract dataset.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use cgbc_core::corpus::VulnKind;
use cgbc_core::rng::{seeded_rng, sub_seed, ChaCha20Rng};

use crate::store;
use crate::AppResult;

pub struct SynthContract {
    pub id: String,
    pub source: String,
    pub labels: BTreeMap<VulnKind, u8>,
}

const NAMES: [&str; 10] = [
    "Vault", "Token", "Wallet", "Escrow", "Auction", "Bank", "Registry", "Crowdsale", "Market",
    "Lottery",
];

const COMMENTS: [&str; 6] = [
    "// accounting state",
    "// guarded by the owner",
    "/* see the audit notes */",
    "// emits on success",
    "// conservative bounds",
    "/* legacy path kept for compatibility */",
];

/// One synthetic contract. Labels are ground truth by construction:
/// RE = external call before the balance update, TD = branching on
/// `block.timestamp`, IO = arithmetic inside `unchecked`.
pub fn synthetic_contract(seed: u64, index: usize) -> SynthContract {
    let mut rng = seeded_rng(sub_seed(seed, "synth-contract", index as u64));
    let name = format!("{}{}", NAMES[index % NAMES.len()], index);

    let vulnerable_re = rng.random_bool(0.5);
    let vulnerable_td = rng.random_bool(0.5);
    let vulnerable_io = rng.random_bool(0.5);

    let mut s = String::new();
    if rng.random_bool(0.5) {
        s.push_str("// SPDX-License-Identifier: MIT\n");
    }
    let version = ["0.8.0", "0.8.4", "0.8.17", "0.8.19"].choose(&mut rng).unwrap();
    let _ = writeln!(s, "pragma solidity ^{version};");
    s.push('\n');
    if rng.random_bool(0.3) {
        let _ = writeln!(s, "{}", COMMENTS.choose(&mut rng).unwrap());
    }
    let _ = writeln!(s, "contract {name} {{");

    // State block.
    s.push_str("    address public owner;\n");
    s.push_str("    mapping(address => uint256) public balances;\n");
    s.push_str("    uint256 public totalDeposits;\n");
    if rng.random_bool(0.6) {
        let _ = writeln!(s, "    uint256 public deadline = {};", rng.random_range(1_000u32..9_999));
    } else {
        s.push_str("    uint256 public deadline;\n");
    }
    if rng.random_bool(0.5) {
        s.push_str("    bool public paused;\n");
    }
    s.push_str("    event Deposit(address indexed from, uint256 amount);\n");
    s.push_str("    event Withdrawal(address indexed to, uint256 amount);\n\n");

    s.push_str("    constructor() {\n        owner = msg.sender;\n    }\n\n");

    // Deposit.
    if rng.random_bool(0.3) {
        let _ = writeln!(s, "    {}", COMMENTS.choose(&mut rng).unwrap());
    }
    s.push_str("    function deposit() public payable {\n");
    s.push_str("        balances[msg.sender] = balances[msg.sender] + msg.value;\n");
    s.push_str("        totalDeposits = totalDeposits + msg.value;\n");
    s.push_str("        emit Deposit(msg.sender, msg.value);\n");
    s.push_str("    }\n\n");

    // Withdraw: the reentrancy site. The vulnerable shape forwards gas
    // through a raw call before the balance update; the safe shape
    // updates first and pays out with a gas-capped transfer.
    s.push_str("    function withdraw(uint256 amount) public {\n");
    s.push_str("        require(balances[msg.sender] >= amount);\n");
    if vulnerable_re {
        s.push_str("        (bool ok, ) = msg.sender.call{value: amount}(\"\");\n");
        s.push_str("        require(ok);\n");
        s.push_str("        balances[msg.sender] = balances[msg.sender] - amount;\n");
    } else {
        s.push_str("        balances[msg.sender] = balances[msg.sender] - amount;\n");
        s.push_str("        payable(msg.sender).transfer(amount);\n");
    }
    s.push_str("        emit Withdrawal(msg.sender, amount);\n");
    s.push_str("    }\n\n");

    // Claim: the timestamp-dependency site. Vulnerable code gates the
    // payout on the block timestamp and records it.
    s.push_str("    function claim() public returns (bool) {\n");
    if vulnerable_td {
        s.push_str("        if (block.timestamp > deadline) {\n");
        s.push_str("            balances[msg.sender] = balances[msg.sender] + 1;\n");
        s.push_str("            deadline = block.timestamp + 1 days;\n");
        s.push_str("            return true;\n");
        s.push_str("        }\n");
        s.push_str("        require(block.timestamp != 0);\n");
        s.push_str("        return false;\n");
    } else {
        s.push_str("        if (totalDeposits > deadline) {\n");
        s.push_str("            balances[msg.sender] = balances[msg.sender] + 1;\n");
        s.push_str("            deadline = deadline + 1;\n");
        s.push_str("            return true;\n");
        s.push_str("        }\n");
        s.push_str("        return false;\n");
    }
    s.push_str("    }\n\n");

    // Accumulate: the overflow site. Vulnerable code wraps its arithmetic
    // in an unchecked block; safe code bounds the operand first.
    let factor = rng.random_range(2u32..9);
    s.push_str("    function accumulate(uint256 amount) public {\n");
    if vulnerable_io {
        s.push_str("        unchecked {\n");
        let _ = writeln!(s, "            uint256 scaled = amount * {factor};");
        s.push_str("            totalDeposits = totalDeposits + scaled * scaled;\n");
        s.push_str("            balances[msg.sender] = balances[msg.sender] + scaled;\n");
        s.push_str("        }\n");
    } else {
        let _ = writeln!(s, "        require(amount < {});", rng.random_range(1_000u32..100_000));
        let _ = writeln!(s, "        totalDeposits = totalDeposits + amount / {factor};");
        s.push_str("        balances[msg.sender] = balances[msg.sender] + amount;\n");
    }
    s.push_str("    }\n\n");

    // Secondary per-kind sites: vulnerable contracts repeat their pattern
    // the way real code does.
    s.push_str("    function refund(address payable to, uint256 amount) public {\n");
    s.push_str("        require(msg.sender == owner);\n");
    if vulnerable_re {
        s.push_str("        (bool sent, ) = to.call{value: amount}(\"\");\n");
        s.push_str("        require(sent);\n");
    } else {
        s.push_str("        to.transfer(amount);\n");
    }
    s.push_str("    }\n\n");
    if vulnerable_td {
        s.push_str("    function timeLeft() public view returns (uint256) {\n");
        s.push_str("        return block.timestamp > deadline ? 0 : deadline - block.timestamp;\n");
        s.push_str("    }\n\n");
    } else {
        s.push_str("    function timeLeft() public view returns (uint256) {\n");
        s.push_str("        return totalDeposits > deadline ? 0 : deadline - totalDeposits;\n");
        s.push_str("    }\n\n");
    }
    let scale = rng.random_range(10u32..50);
    s.push_str("    function compound(uint256 k) public {\n");
    if vulnerable_io {
        s.push_str("        unchecked {\n");
        s.push_str("            totalDeposits = totalDeposits * k;\n");
        s.push_str("        }\n");
    } else {
        let _ = writeln!(s, "        require(k < {scale});");
        let _ = writeln!(s, "        totalDeposits = totalDeposits * k / {scale};");
    }
    s.push_str("    }\n\n");

    // Filler functions for structural variety.
    if rng.random_bool(0.7) {
        s.push_str("    function balanceOf(address who) public view returns (uint256) {\n");
        s.push_str("        return balances[who];\n");
        s.push_str("    }\n\n");
    }
    if rng.random_bool(0.5) {
        let _ = writeln!(s, "    function setDeadline(uint256 value) public {{");
        s.push_str("        require(msg.sender == owner);\n");
        s.push_str("        deadline = value;\n");
        s.push_str("    }\n\n");
    }
    if rng.random_bool(0.5) {
        let bound = rng.random_range(3u32..9);
        s.push_str("    function drip(address to) public {\n");
        let _ = writeln!(s, "        for (uint256 i = 0; i < {bound}; i++) {{");
        s.push_str("            balances[to] = balances[to] + 1;\n");
        s.push_str("        }\n");
        s.push_str("    }\n\n");
    }

    s.push_str("}\n");

    let mut labels = BTreeMap::new();
    labels.insert(VulnKind::RE, u8::from(vulnerable_re));
    labels.insert(VulnKind::TD, u8::from(vulnerable_td));
    labels.insert(VulnKind::IO, u8::from(vulnerable_io));

    SynthContract {
        id: format!("{}.sol", name.to_lowercase()),
        source: s,
        labels,
    }
}

/// Writes `count` synthetic contracts under `dir` plus a `labels.csv`
/// beside them. Returns the generated records.
pub fn write_corpus(dir: &Path, count: usize, seed: u64) -> AppResult<Vec<SynthContract>> {
    store::ensure_dir(dir)?;
    let contracts: Vec<SynthContract> =
        (0..count).map(|i| synthetic_contract(seed, i)).collect();
    let mut label_rows = Vec::new();
    for c in &contracts {
        std::fs::write(dir.join(&c.id), &c.source)?;
        for (kind, label) in &c.labels {
            label_rows.push((c.id.clone(), *kind, *label));
        }
    }
    label_rows.sort();
    store::write_labels(&dir.join("labels.csv"), &label_rows)?;
    Ok(contracts)
}

/// Two Gaussian blobs in feature space, one per class, with a constant
/// bias as the last coordinate. `separation` is the distance between the
/// blob means; `noise` is the per-coordinate standard deviation.
pub fn two_blob_features(
    n: usize,
    dim: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<u8>) {
    assert!(dim >= 2);
    let mut rng = seeded_rng(sub_seed(seed, "blob-centers", 0));
    let gauss = Normal::new(0.0, 1.0).expect("valid normal");

    // A random direction separates the class means.
    let mut dir: Vec<f64> = (0..dim - 1).map(|_| gauss.sample(&mut rng)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    for v in &mut dir {
        *v /= norm;
    }
    let c0: Vec<f64> = dir.iter().map(|v| v * separation / 2.0).collect();
    let c1: Vec<f64> = dir.iter().map(|v| -v * separation / 2.0).collect();

    let mut sample_rng = seeded_rng(sub_seed(seed, "blob-samples", 0));
    let noise_dist = Normal::new(0.0, noise).expect("valid normal");
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        let center = if label == 0 { &c0 } else { &c1 };
        let mut x: Vec<f64> = center
            .iter()
            .map(|c| c + noise_dist.sample(&mut sample_rng))
            .collect();
        x.push(1.0);
        features.push(x);
        labels.push(label);
    }
    (features, labels)
}

/// A perturbed view of a feature vector (the bias coordinate is kept),
/// standing in for augmentation when pretraining on raw features.
pub fn jitter_view(x: &[f64], jitter: f64, rng: &mut ChaCha20Rng) -> Vec<f64> {
    let dist = Normal::new(0.0, jitter).expect("valid normal");
    let mut out: Vec<f64> = x[..x.len() - 1]
        .iter()
        .map(|v| v + dist.sample(rng))
        .collect();
    out.push(x[x.len() - 1]);
    out
}
