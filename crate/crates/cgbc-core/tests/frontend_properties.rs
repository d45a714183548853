//! Frontend and verification properties on adversarial hand-written
//! sources: lossless round-trips, insertion safety at every reported
//! statement boundary, and digest stability under reformatting.

use cgbc_core::lexer::{render, tokenize, TokenKind};
use cgbc_core::semantics::{extract_core_operations, semantic_digest};
use cgbc_core::structure::ContractModel;

const FIXTURES: &[&str] = &[
    // Do-while, else chains, ternary, compound assignment.
    r#"pragma solidity ^0.8.0;
contract Flow {
    uint256 total;
    bool paused;
    function tick(uint256 v) public returns (uint256) {
        if (paused) { return 0; } else { total += v; }
        do { total -= 1; } while (total > 10);
        uint256 q = total > 5 ? total : v;
        return q;
    }
}"#,
    // Assembly with dialect string, unchecked arithmetic, struct literal.
    r#"contract LowLevel {
    struct Pair { uint256 a; uint256 b; }
    uint256 slot0;
    function poke(uint256 x) public {
        assembly ("memory-safe") { let p := add(x, 1) sstore(0, p) }
        unchecked { slot0 = slot0 + x; }
        Pair memory p2 = Pair({a: x, b: slot0});
        slot0 = p2.a;
    }
}"#,
    // For header, nested blocks, modifier with args, named returns.
    r#"contract Loops {
    uint256[] items;
    address owner;
    modifier onlyOwner(address who) { require(who == owner); _; }
    function sum(uint256 n) public view returns (uint256 acc) {
        for (uint256 i = 0; i < n; i++) {
            { acc += items[i]; }
        }
        return acc;
    }
}"#,
    // Strings with tricky interiors, emit, transfer, try/catch.
    r#"contract Strings {
    event Log(string note);
    address payable sink;
    function run() public {
        string memory s = "if (x) { } // not code";
        emit Log(s);
        sink.transfer(1 wei);
        try this.run() { } catch Error(string memory reason) { emit Log(reason); } catch { }
    }
}"#,
    // Interface plus implementation in one file; function-typed variable.
    r#"interface IThing { function f() external; }
contract Thing is IThing {
    function(uint256) internal pure returns (uint256) transform;
    uint256 state;
    function f() public { state = 1; }
    receive() external payable { state += msg.value; }
}"#,
];

#[test]
fn fixtures_round_trip_losslessly() {
    for (i, src) in FIXTURES.iter().enumerate() {
        let stream = tokenize(src);
        assert_eq!(render(&stream.tokens), *src, "fixture {i}");
        assert!(stream.flags.clean(), "fixture {i} should lex cleanly");
    }
}

fn delimiter_counts(src: &str) -> [i64; 3] {
    let mut counts = [0i64; 3];
    for t in tokenize(src).tokens {
        if t.kind != TokenKind::Delimiter {
            continue;
        }
        match t.text.as_str() {
            "{" => counts[0] += 1,
            "}" => counts[0] -= 1,
            "(" => counts[1] += 1,
            ")" => counts[1] -= 1,
            "[" => counts[2] += 1,
            "]" => counts[2] -= 1,
            _ => {}
        }
    }
    counts
}

/// Inserting a balanced probe at any reported boundary must keep the
/// file's lexer-level brace/paren/bracket balance — which fails if a
/// boundary ever lands inside a string, comment, or expression.
#[test]
fn insertion_at_every_boundary_preserves_balance() {
    let probe = " uint256 Vp = 1; if (Vp > 0) { Vp = Vp + 1; } ";
    for (i, src) in FIXTURES.iter().enumerate() {
        assert_eq!(delimiter_counts(src), [0, 0, 0], "fixture {i} balanced");
        let model = ContractModel::from_source(src).unwrap();
        for f in &model.functions {
            for &loc in &f.statement_boundaries {
                let mut patched = src.to_string();
                patched.insert_str(loc, probe);
                assert_eq!(
                    delimiter_counts(&patched),
                    [0, 0, 0],
                    "fixture {i}: boundary {loc} in `{}` broke balance",
                    f.name
                );
                // And the patched file still parses structurally.
                ContractModel::from_source(&patched).unwrap_or_else(|e| {
                    panic!("fixture {i}: boundary {loc} broke parsing: {e}")
                });
            }
        }
    }
}

/// The digest depends on the operation sequence only: comments,
/// whitespace, and formatting do not move it.
#[test]
fn digest_is_stable_under_reformatting() {
    let original = r#"contract Bank {
    uint256 balance;
    function pay(uint256 v) public {
        require(v > 0);
        balance = balance - v;
    }
}"#;
    let reformatted = "contract Bank{uint256 balance; /* ledger */ function pay(uint256 v) public{\n\n  require( v > 0 ) ; // guard\n  balance=balance-v;\n}}";
    let a = ContractModel::from_source(original).unwrap();
    let b = ContractModel::from_source(reformatted).unwrap();
    let da = semantic_digest(&extract_core_operations(&a, "pay").unwrap());
    let db = semantic_digest(&extract_core_operations(&b, "pay").unwrap());
    assert_eq!(da, db);
}

/// Renaming a local variable does not change the digest; renaming a state
/// variable does.
#[test]
fn digest_tracks_state_identifiers_only() {
    let base = "contract C { uint256 x; function f() public { uint256 t = 1; x = t; } }";
    let local_renamed = "contract C { uint256 x; function f() public { uint256 w = 1; x = w; } }";
    let state_renamed = "contract C { uint256 y; function f() public { uint256 t = 1; y = t; } }";
    let d = |src: &str| {
        let m = ContractModel::from_source(src).unwrap();
        semantic_digest(&extract_core_operations(&m, "f").unwrap())
    };
    assert_eq!(d(base), d(local_renamed));
    assert_ne!(d(base), d(state_renamed));
}

#[test]
fn fixture_operations_hit_every_kind() {
    use cgbc_core::semantics::OpKind;
    let mut seen = std::collections::BTreeSet::new();
    for src in FIXTURES {
        let model = ContractModel::from_source(src).unwrap();
        for f in &model.functions {
            for op in extract_core_operations(&model, &f.name).unwrap_or_default() {
                seen.insert(op.kind);
            }
        }
    }
    for kind in [
        OpKind::StateRead,
        OpKind::StateWrite,
        OpKind::ExternalCall,
        OpKind::EventEmit,
        OpKind::Return,
        OpKind::Branch,
        OpKind::Builtin,
    ] {
        assert!(seen.contains(&kind), "no fixture produced {kind:?}");
    }
}
