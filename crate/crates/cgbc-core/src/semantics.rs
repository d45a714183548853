//! Semantic equivalence via core-operation digests, plus k-gram Jaccard
//! diversity scoring.
//!
//! A function's observable behavior is summarized as the ordered sequence
//! of its core operations: state variable reads/writes, external calls,
//! event emissions, returns, conditional branches, and critical builtin
//! invocations. The sequence is extracted by a deterministic token-level
//! scan with an explicit scope model, then hashed into a digest; two
//! functions are equivalent when their digests match.
//!
//! A pruning pass removes operation groups attributable to self-contained
//! inserted code: a maximal run of sibling statements whose defined
//! variables never escape the run, which touches no contract-scope or
//! parameter identifier, and which performs no call/emit/return/builtin,
//! contributes nothing to the digest (its branches included).

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::lexer::{is_type_keyword, Token, TokenKind};
use crate::structure::ContractModel;
use crate::{Error, Result};

/// Core-operation kinds, in canonical-serialization spelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum OpKind {
    StateRead,
    StateWrite,
    ExternalCall,
    EventEmit,
    Return,
    Branch,
    Builtin,
}

impl OpKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OpKind::StateRead => "StateRead",
            OpKind::StateWrite => "StateWrite",
            OpKind::ExternalCall => "ExternalCall",
            OpKind::EventEmit => "EventEmit",
            OpKind::Return => "Return",
            OpKind::Branch => "Branch",
            OpKind::Builtin => "Builtin",
        }
    }
}

/// One core operation; `subject` is empty only for `Return` and `Branch`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoreOperation {
    pub kind: OpKind,
    pub subject: String,
}

impl CoreOperation {
    fn new(kind: OpKind, subject: impl Into<String>) -> Self {
        CoreOperation { kind, subject: subject.into() }
    }
}

impl core::fmt::Display for CoreOperation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.subject)
    }
}

/// SHA-256 over the canonical serialization of an operation sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SemanticDigest(pub [u8; 32]);

impl SemanticDigest {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl core::fmt::Display for SemanticDigest {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Canonical serialization is `kind ":" subject "\n"` per operation,
/// UTF-8, concatenated; the digest is bit-exact across implementations.
pub fn semantic_digest(ops: &[CoreOperation]) -> SemanticDigest {
    let mut hasher = Sha256::new();
    for op in ops {
        hasher.update(op.kind.as_str().as_bytes());
        hasher.update(b":");
        hasher.update(op.subject.as_bytes());
        hasher.update(b"\n");
    }
    SemanticDigest(hasher.finalize().into())
}

/// Critical builtins in non-member position.
const BUILTINS: &[&str] = &["assert", "require", "revert", "selfdestruct"];
/// Critical builtins invoked as members (`addr.transfer(..)`,
/// `target.call{value: v}(..)`).
const MEMBER_BUILTINS: &[&str] = &["call", "delegatecall", "send", "transfer"];

/// Extracts the core-operation sequence of the function named `name`.
pub fn extract_core_operations(model: &ContractModel, name: &str) -> Result<Vec<CoreOperation>> {
    let idx = model
        .functions
        .iter()
        .position(|f| f.name == name)
        .ok_or_else(|| Error::UnknownFunction {
            requested: name.to_string(),
            available: model
                .functions
                .iter()
                .map(|f| f.name.as_str())
                .collect::<Vec<_>>()
                .join(", "),
        })?;
    extract_core_operations_at(model, idx)
}

/// Extracts the core-operation sequence of the function at `index`.
pub fn extract_core_operations_at(model: &ContractModel, index: usize) -> Result<Vec<CoreOperation>> {
    let span = model.functions.get(index).ok_or_else(|| Error::UnknownFunction {
        requested: alloc::format!("#{index}"),
        available: alloc::format!("{} function(s)", model.functions.len()),
    })?;

    let sig: Vec<&Token> = model.tokens.iter().filter(|t| t.is_significant()).collect();
    let state_vars = contract_scope_idents(&sig);
    let params = param_idents(&sig, span.body_start);

    // Body tokens strictly inside the braces.
    let body: Vec<&Token> = sig
        .iter()
        .copied()
        .filter(|t| t.offset > span.body_start && t.offset < span.body_end)
        .collect();

    let mut parser = BodyParser {
        toks: &body,
        pos: 0,
        arena: Vec::new(),
        state_vars: &state_vars,
        params: &params,
        locals: BTreeSet::new(),
    };
    let roots = parser.parse_list();
    let mut arena = parser.arena;

    prune_list(&mut arena, &roots);

    let mut ops = Vec::new();
    for &r in &roots {
        emit(&arena, r, &mut ops);
    }
    ops.dedup();
    Ok(ops)
}

/// `true` iff the two functions have equal digests; returns both digests.
pub fn pair_equivalent(
    original: (&ContractModel, &str),
    augmented: (&ContractModel, &str),
) -> Result<(bool, SemanticDigest, SemanticDigest)> {
    let d1 = semantic_digest(&extract_core_operations(original.0, original.1)?);
    let d2 = semantic_digest(&extract_core_operations(augmented.0, augmented.1)?);
    Ok((d1 == d2, d1, d2))
}

/// Compares every function of `a` to the same-index function of `b`.
/// Equivalent iff the function counts match and all digests agree.
pub fn contract_equivalent(a: &ContractModel, b: &ContractModel) -> Result<bool> {
    if a.functions.len() != b.functions.len() {
        return Ok(false);
    }
    for i in 0..a.functions.len() {
        let d1 = semantic_digest(&extract_core_operations_at(a, i)?);
        let d2 = semantic_digest(&extract_core_operations_at(b, i)?);
        if d1 != d2 {
            return Ok(false);
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// Scope collection
// ---------------------------------------------------------------------------

/// Identifiers declared at contract (or file) scope: state variables and
/// constants. Function, modifier, struct, and enum bodies are skipped.
fn contract_scope_idents(sig: &[&Token]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    collect_container(sig, &mut 0, &mut out);
    out
}

fn collect_container(sig: &[&Token], pos: &mut usize, out: &mut BTreeSet<String>) {
    let mut stmt_start = *pos;
    while *pos < sig.len() {
        let t = sig[*pos];
        match (t.kind, t.text.as_str()) {
            (TokenKind::Delimiter, "}") => {
                *pos += 1;
                return;
            }
            (TokenKind::Delimiter, "{") => {
                let container = sig[stmt_start..*pos].iter().any(|s| {
                    s.kind == TokenKind::Keyword
                        && matches!(s.text.as_str(), "contract" | "library" | "interface")
                });
                *pos += 1;
                if container {
                    collect_container(sig, pos, out);
                } else {
                    skip_block(sig, pos);
                }
                stmt_start = *pos;
            }
            (TokenKind::Delimiter, ";") => {
                classify_container_statement(&sig[stmt_start..*pos], out);
                *pos += 1;
                stmt_start = *pos;
            }
            _ => *pos += 1,
        }
    }
}

/// Cursor sits just past a `{`; advances past the matching `}`.
fn skip_block(sig: &[&Token], pos: &mut usize) {
    let mut depth = 1usize;
    while *pos < sig.len() && depth > 0 {
        match (sig[*pos].kind, sig[*pos].text.as_str()) {
            (TokenKind::Delimiter, "{") => depth += 1,
            (TokenKind::Delimiter, "}") => depth -= 1,
            _ => {}
        }
        *pos += 1;
    }
}

fn classify_container_statement(stmt: &[&Token], out: &mut BTreeSet<String>) {
    let Some(first) = stmt.first() else { return };
    if first.kind == TokenKind::Keyword {
        match first.text.as_str() {
            "pragma" | "import" | "using" | "event" | "error" | "modifier" | "enum" | "struct"
            | "abstract" | "emit" => return,
            // `function (..) .. name;` declares a function-typed variable;
            // `function name(..);` is an abstract declaration.
            "function" => {
                if stmt.get(1).map(|t| t.text.as_str()) != Some("(") {
                    return;
                }
            }
            _ => {}
        }
    }
    // Name: last identifier before the first top-level `=`.
    let mut depth = 0i32;
    let mut name: Option<&str> = None;
    for t in stmt {
        match (t.kind, t.text.as_str()) {
            (TokenKind::Delimiter, "(") | (TokenKind::Delimiter, "[") => depth += 1,
            (TokenKind::Delimiter, ")") | (TokenKind::Delimiter, "]") => depth -= 1,
            (TokenKind::Operator, "=") if depth == 0 => break,
            (TokenKind::Identifier, _) if depth == 0 => name = Some(&t.text),
            _ => {}
        }
    }
    if let Some(n) = name {
        out.insert(n.to_string());
    }
}

/// Parameter and named-return identifiers of the function whose body opens
/// at byte `body_start`.
fn param_idents(sig: &[&Token], body_start: usize) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let open = sig.iter().position(|t| t.offset == body_start);
    let Some(open) = open else { return out };

    // Walk back to the function head.
    let mut head = None;
    for i in (0..open).rev() {
        if sig[i].kind == TokenKind::Keyword
            && matches!(
                sig[i].text.as_str(),
                "function" | "constructor" | "fallback" | "receive" | "modifier"
            )
        {
            head = Some(i);
            break;
        }
    }
    let Some(head) = head else { return out };

    // First paren group = parameters; any group right after `returns` =
    // named returns. Modifier-invocation groups are ignored.
    let mut i = head;
    let mut first_group_done = false;
    let mut after_returns = false;
    while i < open {
        let t = sig[i];
        if t.kind == TokenKind::Keyword && t.text == "returns" {
            after_returns = true;
            i += 1;
            continue;
        }
        if t.kind == TokenKind::Delimiter && t.text == "(" {
            let start = i;
            let mut depth = 0i32;
            while i < open {
                match sig[i].text.as_str() {
                    "(" => depth += 1,
                    ")" => {
                        depth -= 1;
                        if depth == 0 {
                            break;
                        }
                    }
                    _ => {}
                }
                i += 1;
            }
            if !first_group_done || after_returns {
                collect_param_names(&sig[start + 1..i], &mut out);
            }
            first_group_done = true;
            after_returns = false;
        }
        i += 1;
    }
    out
}

/// Within a parameter list: per comma-separated segment, the final token
/// is the name when it is an identifier preceded by type tokens.
fn collect_param_names(toks: &[&Token], out: &mut BTreeSet<String>) {
    let mut depth = 0i32;
    let mut seg: Vec<&Token> = Vec::new();
    let mut flush = |seg: &mut Vec<&Token>| {
        if seg.len() >= 2 {
            if let Some(last) = seg.last() {
                if last.kind == TokenKind::Identifier {
                    out.insert(last.text.clone());
                }
            }
        }
        seg.clear();
    };
    for t in toks {
        match (t.kind, t.text.as_str()) {
            (TokenKind::Delimiter, "(") | (TokenKind::Delimiter, "[") => {
                depth += 1;
                seg.push(t);
            }
            (TokenKind::Delimiter, ")") | (TokenKind::Delimiter, "]") => {
                depth -= 1;
                seg.push(t);
            }
            (TokenKind::Delimiter, ",") if depth == 0 => flush(&mut seg),
            _ => seg.push(t),
        }
    }
    flush(&mut seg);
}

// ---------------------------------------------------------------------------
// Statement tree
// ---------------------------------------------------------------------------

#[derive(Debug, Default)]
struct UnitNode {
    ops: Vec<CoreOperation>,
    /// `do { .. } while (c);` emits its condition ops after the children.
    ops_after_children: bool,
    children: Vec<usize>,
    defs: BTreeSet<String>,
    uses: BTreeSet<String>,
    /// Call/emit/return/builtin present, or opaque assembly: never pruned.
    barrier: bool,
    /// Touches (reads or writes) a contract-scope or parameter identifier.
    touches_sp: bool,
    pruned: bool,
}

struct BodyParser<'a> {
    toks: &'a [&'a Token],
    pos: usize,
    arena: Vec<UnitNode>,
    state_vars: &'a BTreeSet<String>,
    params: &'a BTreeSet<String>,
    /// Grows monotonically; block scoping is not popped, which only makes
    /// the scan more conservative.
    locals: BTreeSet<String>,
}

impl<'a> BodyParser<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.toks.get(self.pos).copied()
    }

    fn peek_is(&self, text: &str) -> bool {
        self.peek().is_some_and(|t| t.text == text)
    }

    fn parse_list(&mut self) -> Vec<usize> {
        let mut units = Vec::new();
        while let Some(t) = self.peek() {
            if t.kind == TokenKind::Delimiter && t.text == "}" {
                break;
            }
            let before = self.pos;
            units.push(self.parse_unit());
            if self.pos == before {
                self.pos += 1; // never stall on malformed input
            }
        }
        units
    }

    fn push(&mut self, node: UnitNode) -> usize {
        self.arena.push(node);
        self.arena.len() - 1
    }

    fn parse_unit(&mut self) -> usize {
        let t = self.peek().expect("caller checked");
        match (t.kind, t.text.as_str()) {
            (TokenKind::Delimiter, "{") => {
                self.pos += 1;
                let children = self.parse_list();
                self.expect_close();
                self.push(UnitNode { children, ..UnitNode::default() })
            }
            (TokenKind::Keyword, "if") => self.parse_header_unit(true),
            (TokenKind::Keyword, "while") => self.parse_header_unit(false),
            (TokenKind::Keyword, "for") => self.parse_for(),
            (TokenKind::Keyword, "do") => self.parse_do(),
            (TokenKind::Keyword, "unchecked") => {
                self.pos += 1;
                if self.peek_is("{") {
                    self.pos += 1;
                    let children = self.parse_list();
                    self.expect_close();
                    self.push(UnitNode { children, ..UnitNode::default() })
                } else {
                    self.parse_simple()
                }
            }
            (TokenKind::Keyword, "assembly") => self.parse_assembly(),
            (TokenKind::Keyword, "try") => self.parse_try(),
            _ => self.parse_simple(),
        }
    }

    fn expect_close(&mut self) {
        if self.peek_is("}") {
            self.pos += 1;
        }
    }

    /// `if (cond) unit [else unit]` and `while (cond) unit`.
    fn parse_header_unit(&mut self, allow_else: bool) -> usize {
        self.pos += 1; // keyword
        let cond = self.take_paren_group();
        let mut node = UnitNode::default();
        self.scan_region(&[&cond], &mut node, false);
        node.ops.push(CoreOperation::new(OpKind::Branch, ""));

        if self.peek().is_some() && !self.peek_is("}") {
            let child = self.parse_unit();
            node.children.push(child);
        }
        if allow_else && self.peek().is_some_and(|t| t.kind == TokenKind::Keyword && t.text == "else") {
            self.pos += 1;
            if self.peek().is_some() && !self.peek_is("}") {
                let child = self.parse_unit();
                node.children.push(child);
            }
        }
        self.push(node)
    }

    /// `for (init; cond; update) unit` — the header parts are scanned as
    /// one expression region; an init declaration defines a local.
    fn parse_for(&mut self) -> usize {
        self.pos += 1;
        let header = self.take_paren_group();
        let mut node = UnitNode::default();

        let parts = split_top_level(&header, ";");
        if let Some(init) = parts.first() {
            if !init.is_empty() && self.is_declaration(init) {
                self.scan_declaration(init, &mut node);
            } else {
                self.scan_statement_tokens(init, &mut node);
            }
        }
        for part in parts.iter().skip(1) {
            self.scan_statement_tokens(part, &mut node);
        }
        node.ops.push(CoreOperation::new(OpKind::Branch, ""));

        if self.peek().is_some() && !self.peek_is("}") {
            let child = self.parse_unit();
            node.children.push(child);
        }
        self.push(node)
    }

    /// `do unit while (cond);` — condition ops come after the children.
    fn parse_do(&mut self) -> usize {
        self.pos += 1;
        let mut node = UnitNode {
            ops_after_children: true,
            ..UnitNode::default()
        };
        if self.peek().is_some() && !self.peek_is("}") {
            let child = self.parse_unit();
            node.children.push(child);
        }
        if self.peek().is_some_and(|t| t.text == "while") {
            self.pos += 1;
            let cond = self.take_paren_group();
            self.scan_region(&[&cond], &mut node, false);
        }
        if self.peek_is(";") {
            self.pos += 1;
        }
        node.ops.push(CoreOperation::new(OpKind::Branch, ""));
        self.push(node)
    }

    /// Assembly blocks are opaque: no operations, conservative uses, and
    /// a barrier against pruning.
    fn parse_assembly(&mut self) -> usize {
        self.pos += 1;
        if self.peek().is_some_and(|t| t.kind == TokenKind::String) {
            self.pos += 1; // dialect marker
        }
        let mut node = UnitNode {
            barrier: true,
            ..UnitNode::default()
        };
        if self.peek_is("{") {
            self.pos += 1;
            let mut depth = 1usize;
            while let Some(t) = self.peek() {
                match (t.kind, t.text.as_str()) {
                    (TokenKind::Delimiter, "{") => depth += 1,
                    (TokenKind::Delimiter, "}") => {
                        depth -= 1;
                        if depth == 0 {
                            self.pos += 1;
                            break;
                        }
                    }
                    (TokenKind::Identifier, _) => {
                        node.uses.insert(t.text.clone());
                        if self.is_state_or_param(&t.text) {
                            node.touches_sp = true;
                        }
                    }
                    _ => {}
                }
                self.pos += 1;
            }
        }
        self.push(node)
    }

    /// `try expr [returns (..)] block (catch [ident] [(..)] block)*`
    fn parse_try(&mut self) -> usize {
        self.pos += 1;
        let mut node = UnitNode::default();
        // Expression region up to the success block.
        let start = self.pos;
        let mut depth = 0i32;
        while let Some(t) = self.peek() {
            match (t.kind, t.text.as_str()) {
                (TokenKind::Delimiter, "(") | (TokenKind::Delimiter, "[") => depth += 1,
                (TokenKind::Delimiter, ")") | (TokenKind::Delimiter, "]") => depth -= 1,
                (TokenKind::Delimiter, "{") if depth == 0 => break,
                _ => {}
            }
            self.pos += 1;
        }
        let region: Vec<&Token> = self.toks[start..self.pos].to_vec();
        // `returns (uint v)` names are definitions, not reads.
        let (expr, rets) = match region.iter().position(|t| t.text == "returns") {
            Some(p) => (region[..p].to_vec(), region[p + 1..].to_vec()),
            None => (region, Vec::new()),
        };
        self.scan_region(&[&expr], &mut node, false);
        let mut names = BTreeSet::new();
        collect_param_names(&rets, &mut names);
        for n in names {
            self.locals.insert(n.clone());
            node.defs.insert(n.clone());
            node.uses.insert(n);
        }

        loop {
            if self.peek_is("{") {
                self.pos += 1;
                let children = self.parse_list();
                self.expect_close();
                let block = self.push(UnitNode { children, ..UnitNode::default() });
                node.children.push(block);
            }
            if self.peek().is_some_and(|t| t.text == "catch") {
                self.pos += 1;
                if self.peek().is_some_and(|t| t.kind == TokenKind::Identifier) {
                    self.pos += 1; // Error / Panic selector
                }
                if self.peek_is("(") {
                    let group = self.take_paren_group();
                    let mut names = BTreeSet::new();
                    collect_param_names(&group, &mut names);
                    for n in names {
                        self.locals.insert(n.clone());
                        node.defs.insert(n.clone());
                        node.uses.insert(n);
                    }
                }
                continue;
            }
            break;
        }
        self.push(node)
    }

    /// A `;`-terminated simple statement: declaration, assignment, call,
    /// `return`, `emit`, `revert`, `delete`, `break`/`continue`.
    fn parse_simple(&mut self) -> usize {
        let start = self.pos;
        let mut depth = 0i32;
        while let Some(t) = self.peek() {
            match (t.kind, t.text.as_str()) {
                (TokenKind::Delimiter, "(")
                | (TokenKind::Delimiter, "[")
                | (TokenKind::Delimiter, "{") => depth += 1,
                (TokenKind::Delimiter, ";") if depth == 0 => {
                    self.pos += 1;
                    break;
                }
                (TokenKind::Delimiter, "}") if depth == 0 => break,
                (TokenKind::Delimiter, ")")
                | (TokenKind::Delimiter, "]")
                | (TokenKind::Delimiter, "}") => depth -= 1,
                _ => {}
            }
            self.pos += 1;
        }
        let mut stmt: Vec<&Token> = self.toks[start..self.pos].to_vec();
        if stmt.last().is_some_and(|t| t.text == ";") {
            stmt.pop();
        }
        let mut node = UnitNode::default();
        if self.is_declaration(&stmt) {
            self.scan_declaration(&stmt, &mut node);
        } else {
            self.scan_statement_tokens(&stmt, &mut node);
        }
        self.push(node)
    }

    /// Consumes a balanced `( .. )` group, returning the interior tokens.
    fn take_paren_group(&mut self) -> Vec<&'a Token> {
        if !self.peek_is("(") {
            return Vec::new();
        }
        self.pos += 1;
        let start = self.pos;
        let mut depth = 1i32;
        while let Some(t) = self.peek() {
            match (t.kind, t.text.as_str()) {
                (TokenKind::Delimiter, "(") => depth += 1,
                (TokenKind::Delimiter, ")") => {
                    depth -= 1;
                    if depth == 0 {
                        break;
                    }
                }
                _ => {}
            }
            self.pos += 1;
        }
        let out = self.toks[start..self.pos].to_vec();
        if self.peek_is(")") {
            self.pos += 1;
        }
        out
    }

    fn is_state_or_param(&self, name: &str) -> bool {
        !self.locals.contains(name) && (self.state_vars.contains(name) || self.params.contains(name))
    }

    fn is_state_var(&self, name: &str) -> bool {
        !self.locals.contains(name) && !self.params.contains(name) && self.state_vars.contains(name)
    }

    /// Local declarations start with an elementary type, a user type
    /// followed by a name (optionally via a data-location keyword), or a
    /// tuple of declarations.
    fn is_declaration(&self, stmt: &[&Token]) -> bool {
        let Some(first) = stmt.first() else { return false };
        match first.kind {
            TokenKind::Keyword if is_type_keyword(&first.text) => true,
            TokenKind::Identifier => match stmt.get(1) {
                Some(t) if t.kind == TokenKind::Identifier => true,
                Some(t)
                    if t.kind == TokenKind::Keyword
                        && matches!(t.text.as_str(), "memory" | "storage" | "calldata") =>
                {
                    stmt.get(2).is_some_and(|n| n.kind == TokenKind::Identifier)
                }
                _ => false,
            },
            TokenKind::Delimiter if first.text == "(" => {
                // Tuple declaration: contains a type keyword at depth 1.
                stmt.iter()
                    .any(|t| t.kind == TokenKind::Keyword && is_type_keyword(&t.text))
                    && stmt.iter().any(|t| t.text == "=")
            }
            _ => false,
        }
    }

    fn scan_declaration(&mut self, stmt: &[&Token], node: &mut UnitNode) {
        let eq = top_level_position(stmt, |t| t.kind == TokenKind::Operator && t.text == "=");
        let (lhs, rhs) = match eq {
            Some(p) => (&stmt[..p], &stmt[p + 1..]),
            None => (stmt, &stmt[stmt.len()..]),
        };

        let mut declared: Vec<String> = Vec::new();
        if lhs.first().is_some_and(|t| t.text == "(") {
            // Tuple: each comma segment declares its final identifier.
            let inner: Vec<&Token> = lhs[1..lhs.len().saturating_sub(1)].to_vec();
            let mut names = BTreeSet::new();
            collect_param_names(&inner, &mut names);
            declared.extend(names);
        } else {
            // The declared name is the identifier directly followed by
            // nothing (end of lhs) in a simple declaration.
            for (i, t) in lhs.iter().enumerate() {
                if t.kind == TokenKind::Identifier && i + 1 == lhs.len() {
                    declared.push(t.text.clone());
                }
            }
        }

        // RHS expression is evaluated in the pre-declaration scope.
        self.scan_region(&[rhs], node, false);
        for name in declared {
            node.defs.insert(name.clone());
            node.uses.insert(name.clone());
            self.locals.insert(name);
        }
    }

    /// Non-declaration statement: classify writes, returns, emits, then
    /// scan the expression parts.
    fn scan_statement_tokens(&mut self, stmt: &[&Token], node: &mut UnitNode) {
        if stmt.is_empty() {
            return;
        }
        let first = stmt[0];

        if first.kind == TokenKind::Keyword {
            match first.text.as_str() {
                "return" => {
                    self.scan_region(&[&stmt[1..]], node, false);
                    node.ops.push(CoreOperation::new(OpKind::Return, ""));
                    node.barrier = true;
                    return;
                }
                "emit" => {
                    let event = stmt.get(1).filter(|t| t.kind == TokenKind::Identifier);
                    if let Some(ev) = event {
                        node.ops.push(CoreOperation::new(OpKind::EventEmit, ev.text.clone()));
                        node.uses.insert(ev.text.clone());
                        node.barrier = true;
                        self.scan_region(&[&stmt[2..]], node, false);
                    } else {
                        self.scan_region(&[&stmt[1..]], node, false);
                    }
                    return;
                }
                "revert" => {
                    node.ops.push(CoreOperation::new(OpKind::Builtin, "revert"));
                    node.barrier = true;
                    // `revert CustomError(args)` vs `revert(args)`: the
                    // error name is neither a call nor a read.
                    let args = if stmt.get(1).is_some_and(|t| t.kind == TokenKind::Identifier) {
                        node.uses.insert(stmt[1].text.clone());
                        &stmt[2..]
                    } else {
                        &stmt[1..]
                    };
                    self.scan_region(&[args], node, false);
                    return;
                }
                "delete" => {
                    // Write-only on the base; index expressions are reads.
                    self.scan_region(&[&stmt[1..]], node, true);
                    self.emit_write_targets(&stmt[1..], node);
                    return;
                }
                "break" | "continue" => return,
                _ => {}
            }
        }

        // Assignment?
        let assign = top_level_position(stmt, |t| {
            t.kind == TokenKind::Operator
                && matches!(
                    t.text.as_str(),
                    "=" | "+=" | "-=" | "*=" | "/=" | "%=" | "|=" | "&=" | "^=" | "<<=" | ">>="
                )
        });

        if let Some(p) = assign {
            let compound = stmt[p].text != "=";
            let (lhs, rhs) = (&stmt[..p], &stmt[p + 1..]);
            // One region so calls stay ahead of reads across the whole
            // statement; the target identifier counts as a read only in
            // compound assignments.
            self.scan_region(&[lhs, rhs], node, !compound);
            self.emit_write_targets(lhs, node);
            return;
        }

        // Increment/decrement statement: a read plus a write.
        if stmt.iter().any(|t| t.kind == TokenKind::Operator && (t.text == "++" || t.text == "--")) {
            self.scan_region(&[stmt], node, false);
            let target: Vec<&Token> = stmt
                .iter()
                .copied()
                .filter(|t| t.kind != TokenKind::Operator)
                .collect();
            self.emit_write_targets(&target, node);
            return;
        }

        self.scan_region(&[stmt], node, false);
    }

    /// StateWrite ops for the assignment target(s) in `lhs`.
    fn emit_write_targets(&mut self, lhs: &[&Token], node: &mut UnitNode) {
        if lhs.first().is_some_and(|t| t.text == "(") {
            // Tuple assignment: every depth-1 identifier that starts a
            // component is a target.
            let mut depth = 0i32;
            let mut component_head = true;
            for t in lhs {
                match (t.kind, t.text.as_str()) {
                    (TokenKind::Delimiter, "(") => {
                        depth += 1;
                        component_head = true;
                    }
                    (TokenKind::Delimiter, ",") if depth == 1 => component_head = true,
                    (TokenKind::Identifier, _) if depth == 1 && component_head => {
                        self.write_target(&t.text, node);
                        component_head = false;
                    }
                    (TokenKind::Delimiter, ")") => depth -= 1,
                    _ => component_head = false,
                }
            }
            return;
        }
        if let Some(base) = lhs.iter().find(|t| t.kind == TokenKind::Identifier) {
            self.write_target(&base.text, node);
        }
    }

    fn write_target(&mut self, name: &str, node: &mut UnitNode) {
        node.uses.insert(name.to_string());
        if self.is_state_var(name) {
            node.ops.push(CoreOperation::new(OpKind::StateWrite, name.to_string()));
            node.touches_sp = true;
        } else if self.is_state_or_param(name) {
            // Writing a parameter is still a scope touch.
            node.touches_sp = true;
        }
    }

    /// Expression scan over one statement's segments, producing its ops in
    /// the fixed intra-statement order: calls (builtin/external/emit) in
    /// source order first, then state reads left-to-right, then one Branch
    /// per ternary. `skip_target` drops the first identifier of the first
    /// segment (a plain assignment's write target).
    fn scan_region(&mut self, segments: &[&[&Token]], node: &mut UnitNode, skip_target: bool) {
        let mut calls: Vec<CoreOperation> = Vec::new();
        let mut reads: Vec<CoreOperation> = Vec::new();
        let mut branches = 0usize;
        let mut skip_first_ident = skip_target;

        for toks in segments {
            for i in 0..toks.len() {
                let t = toks[i];
                match t.kind {
                    TokenKind::Operator if t.text == "?" => branches += 1,
                    TokenKind::Identifier => {
                        node.uses.insert(t.text.clone());
                        let next = toks.get(i + 1).map(|n| n.text.as_str());
                        let prev_dot = i > 0 && toks[i - 1].text == ".";
                        let called =
                            matches!(next, Some("(")) || (prev_dot && matches!(next, Some("{")));

                        if skip_first_ident {
                            skip_first_ident = false;
                            // Write-target base: scope-touch tracking only.
                            if self.is_state_or_param(&t.text) {
                                node.touches_sp = true;
                            }
                            continue;
                        }

                        if called {
                            if prev_dot {
                                if MEMBER_BUILTINS.contains(&t.text.as_str()) {
                                    calls.push(CoreOperation::new(OpKind::Builtin, t.text.clone()));
                                } else {
                                    calls.push(CoreOperation::new(
                                        OpKind::ExternalCall,
                                        t.text.clone(),
                                    ));
                                }
                                node.barrier = true;
                            } else if BUILTINS.contains(&t.text.as_str()) {
                                calls.push(CoreOperation::new(OpKind::Builtin, t.text.clone()));
                                node.barrier = true;
                            } else if self.locals.contains(&t.text) || self.params.contains(&t.text)
                            {
                                // Call through a local function-typed
                                // variable: not external.
                            } else {
                                calls.push(CoreOperation::new(OpKind::ExternalCall, t.text.clone()));
                                node.barrier = true;
                            }
                            if self.is_state_or_param(&t.text) {
                                node.touches_sp = true;
                            }
                        } else if prev_dot {
                            // Plain member access: the base was already
                            // scanned on its own.
                        } else if self.is_state_var(&t.text) {
                            reads.push(CoreOperation::new(OpKind::StateRead, t.text.clone()));
                            node.touches_sp = true;
                        } else if self.is_state_or_param(&t.text) {
                            node.touches_sp = true;
                        }
                    }
                    TokenKind::Keyword if t.text == "revert" => {
                        // `c ? revert X() : y` style; rare but well-formed.
                        calls.push(CoreOperation::new(OpKind::Builtin, "revert"));
                        node.barrier = true;
                    }
                    _ => {}
                }
            }
        }

        node.ops.extend(calls);
        node.ops.extend(reads);
        for _ in 0..branches {
            node.ops.push(CoreOperation::new(OpKind::Branch, ""));
        }
    }
}

fn top_level_position(stmt: &[&Token], pred: impl Fn(&Token) -> bool) -> Option<usize> {
    let mut depth = 0i32;
    for (i, t) in stmt.iter().enumerate() {
        match (t.kind, t.text.as_str()) {
            (TokenKind::Delimiter, "(") | (TokenKind::Delimiter, "[") | (TokenKind::Delimiter, "{") => depth += 1,
            (TokenKind::Delimiter, ")") | (TokenKind::Delimiter, "]") | (TokenKind::Delimiter, "}") => depth -= 1,
            _ if depth == 0 && pred(t) => return Some(i),
            _ => {}
        }
    }
    None
}

fn split_top_level<'t>(toks: &[&'t Token], sep: &str) -> Vec<Vec<&'t Token>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    let mut depth = 0i32;
    for t in toks {
        match (t.kind, t.text.as_str()) {
            (TokenKind::Delimiter, "(") | (TokenKind::Delimiter, "[") => depth += 1,
            (TokenKind::Delimiter, ")") | (TokenKind::Delimiter, "]") => depth -= 1,
            (TokenKind::Delimiter, s) if s == sep && depth == 0 => {
                out.push(core::mem::take(&mut current));
                continue;
            }
            _ => {}
        }
        current.push(*t);
    }
    out.push(current);
    out
}

// ---------------------------------------------------------------------------
// Pruning
// ---------------------------------------------------------------------------

fn subtree(arena: &[UnitNode], root: usize, out: &mut Vec<usize>) {
    out.push(root);
    for &c in &arena[root].children {
        subtree(arena, c, out);
    }
}

/// Greedy maximal contiguous runs at this level, longest first; survivors
/// recurse into their children.
fn prune_list(arena: &mut Vec<UnitNode>, list: &[usize]) {
    let mut i = 0;
    while i < list.len() {
        let mut pruned_here = false;
        for j in (i..list.len()).rev() {
            if run_is_prunable(arena, &list[i..=j]) {
                for &u in &list[i..=j] {
                    let mut sub = Vec::new();
                    subtree(arena, u, &mut sub);
                    for s in sub {
                        arena[s].pruned = true;
                    }
                }
                i = j + 1;
                pruned_here = true;
                break;
            }
        }
        if !pruned_here {
            let children = arena[list[i]].children.clone();
            prune_list(arena, &children);
            i += 1;
        }
    }
}

fn run_is_prunable(arena: &[UnitNode], run: &[usize]) -> bool {
    let mut members = Vec::new();
    for &u in run {
        subtree(arena, u, &mut members);
    }
    let member_set: BTreeSet<usize> = members.iter().copied().collect();

    let mut defs: BTreeSet<&str> = BTreeSet::new();
    for &m in &members {
        let n = &arena[m];
        if n.barrier || n.touches_sp {
            return false;
        }
        defs.extend(n.defs.iter().map(String::as_str));
    }
    if defs.is_empty() {
        // A run with no definitions and no effects holds at most branch
        // markers over local state; still safe to prune only if it has
        // ops at all.
        return members.iter().any(|&m| !arena[m].ops.is_empty());
    }
    // Defined variables must not escape the run.
    for (idx, n) in arena.iter().enumerate() {
        if member_set.contains(&idx) || n.pruned {
            continue;
        }
        if n.uses.iter().any(|u| defs.contains(u.as_str())) {
            return false;
        }
    }
    true
}

fn emit(arena: &[UnitNode], idx: usize, out: &mut Vec<CoreOperation>) {
    let n = &arena[idx];
    if n.pruned {
        return;
    }
    if !n.ops_after_children {
        out.extend(n.ops.iter().cloned());
    }
    for &c in &n.children {
        emit(arena, c, out);
    }
    if n.ops_after_children {
        out.extend(n.ops.iter().cloned());
    }
}

// ---------------------------------------------------------------------------
// k-grams and Jaccard diversity
// ---------------------------------------------------------------------------

/// Set of contiguous k-token windows (whitespace and comments excluded).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KGramSet {
    pub k: usize,
    grams: BTreeSet<Vec<String>>,
}

impl KGramSet {
    pub fn from_tokens(tokens: &[Token], k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidParameter { what: "k must be >= 2" });
        }
        let texts: Vec<&str> = tokens
            .iter()
            .filter(|t| t.is_significant())
            .map(|t| t.text.as_str())
            .collect();
        let mut grams = BTreeSet::new();
        if texts.len() >= k {
            for w in texts.windows(k) {
                grams.insert(w.iter().map(|s| s.to_string()).collect());
            }
        }
        Ok(KGramSet { k, grams })
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }
}

/// |A ∩ B| / |A ∪ B|; two empty sets count as identical (1.0).
pub fn jaccard_similarity(a: &KGramSet, b: &KGramSet) -> Result<f64> {
    if a.k != b.k {
        return Err(Error::MismatchedK { left: a.k, right: b.k });
    }
    if a.grams.is_empty() && b.grams.is_empty() {
        return Ok(1.0);
    }
    let inter = a.grams.intersection(&b.grams).count();
    let union = a.grams.len() + b.grams.len() - inter;
    Ok(inter as f64 / union as f64)
}

/// Pairwise similarities over a family of token streams, plus the fraction
/// of pairs scoring below each threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityReport {
    /// `(index_a, index_b, jaccard)` for every unordered pair, a < b.
    pub pair_similarities: Vec<(usize, usize, f64)>,
    /// `(tau, diverse_fraction)` per requested threshold, ascending tau.
    pub thresholds: Vec<(f64, f64)>,
}

/// Scores all unordered pairs of `streams` and evaluates each threshold.
/// `diverse_fraction` is the fraction of pairs with similarity < tau and
/// is non-decreasing in tau by construction.
pub fn diversity_report(streams: &[Vec<Token>], k: usize, taus: &[f64]) -> Result<DiversityReport> {
    if streams.len() < 2 {
        return Err(Error::TooFewItems { needed: 2, got: streams.len() });
    }
    let sets: Vec<KGramSet> = streams
        .iter()
        .map(|s| KGramSet::from_tokens(s, k))
        .collect::<Result<_>>()?;

    let mut pair_similarities = Vec::new();
    for a in 0..sets.len() {
        for b in (a + 1)..sets.len() {
            pair_similarities.push((a, b, jaccard_similarity(&sets[a], &sets[b])?));
        }
    }

    let mut taus_sorted: Vec<f64> = taus.to_vec();
    taus_sorted.sort_by(|x, y| x.partial_cmp(y).expect("finite taus"));
    let total = pair_similarities.len() as f64;
    let thresholds = taus_sorted
        .into_iter()
        .map(|tau| {
            let diverse = pair_similarities.iter().filter(|(_, _, s)| *s < tau).count();
            (tau, diverse as f64 / total)
        })
        .collect();

    Ok(DiversityReport { pair_similarities, thresholds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexer::tokenize;

    fn ops_of(src: &str, f: &str) -> Vec<String> {
        let model = ContractModel::from_source(src).unwrap();
        extract_core_operations(&model, f)
            .unwrap()
            .iter()
            .map(|o| alloc::format!("{o}"))
            .collect()
    }

    #[test]
    fn state_write_is_detected() {
        let src = "contract C { uint256 x; function f() public { x = 1; } }";
        assert_eq!(ops_of(src, "f"), ["StateWrite:x"]);
    }

    #[test]
    fn local_shadow_group_prunes_to_nothing() {
        let src = "contract C { uint256 x; function f() public { uint256 V1 = 3; if (V1 > 1) { V1 = V1 + 1; } } }";
        assert!(ops_of(src, "f").is_empty());
    }

    #[test]
    fn require_then_return_matches_fixed_order() {
        let src = "contract C { uint256 x; function f() public returns (uint256) { require(x > 0); return x; } }";
        assert_eq!(ops_of(src, "f"), ["Builtin:require", "StateRead:x", "Return:"]);
    }

    #[test]
    fn emit_and_member_builtin() {
        let src = "contract C { event E(); address payable to; function f() public { emit E(); to.transfer(1); } }";
        assert_eq!(
            ops_of(src, "f"),
            ["EventEmit:E", "Builtin:transfer", "StateRead:to"]
        );
    }

    #[test]
    fn call_with_value_braces_is_builtin() {
        let src = "contract C { address target; function f() public { (bool ok, ) = target.call{value: 1}(\"\"); require(ok); } }";
        let got = ops_of(src, "f");
        assert!(got.contains(&"Builtin:call".to_string()), "{got:?}");
        assert!(got.contains(&"StateRead:target".to_string()));
        assert!(got.contains(&"Builtin:require".to_string()));
    }

    #[test]
    fn compound_assignment_reads_then_writes() {
        let src = "contract C { uint256 x; function f() public { x += 2; } }";
        assert_eq!(ops_of(src, "f"), ["StateRead:x", "StateWrite:x"]);
    }

    #[test]
    fn parameters_are_not_state() {
        let src = "contract C { uint256 x; function f(uint256 x2) public { uint256 y = x2 + 1; x = y; } }";
        assert_eq!(ops_of(src, "f"), ["StateWrite:x"]);
    }

    #[test]
    fn branch_over_state_survives() {
        let src = "contract C { uint256 x; function f() public { if (x > 0) { x = 1; } } }";
        assert_eq!(ops_of(src, "f"), ["StateRead:x", "Branch:", "StateWrite:x"]);
    }

    #[test]
    fn digest_of_empty_sequence_is_empty_sha256() {
        assert_eq!(
            semantic_digest(&[]).to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn digest_is_order_sensitive() {
        let a = [
            CoreOperation::new(OpKind::StateRead, "x"),
            CoreOperation::new(OpKind::StateWrite, "y"),
        ];
        let b = [
            CoreOperation::new(OpKind::StateWrite, "y"),
            CoreOperation::new(OpKind::StateRead, "x"),
        ];
        assert_ne!(semantic_digest(&a), semantic_digest(&b));
        assert_eq!(semantic_digest(&a), semantic_digest(&a));
    }

    #[test]
    fn added_emit_breaks_equivalence() {
        let orig = "contract C { event E(); uint256 x; function f() public { x = 1; } }";
        let aug = "contract C { event E(); uint256 x; function f() public { x = 1; emit E(); } }";
        let m1 = ContractModel::from_source(orig).unwrap();
        let m2 = ContractModel::from_source(aug).unwrap();
        let (eq, d1, d2) = pair_equivalent((&m1, "f"), (&m2, "f")).unwrap();
        assert!(!eq);
        assert_ne!(d1, d2);
    }

    #[test]
    fn identical_contracts_are_equivalent() {
        let src = "contract C { uint256 x; function f() public { x = x + 1; } }";
        let m1 = ContractModel::from_source(src).unwrap();
        let m2 = ContractModel::from_source(src).unwrap();
        let (eq, _, _) = pair_equivalent((&m1, "f"), (&m2, "f")).unwrap();
        assert!(eq);
        assert!(contract_equivalent(&m1, &m2).unwrap());
    }

    #[test]
    fn unknown_function_lists_available() {
        let src = "contract C { function g() public {} }";
        let m = ContractModel::from_source(src).unwrap();
        match extract_core_operations(&m, "nope") {
            Err(Error::UnknownFunction { available, .. }) => assert!(available.contains('g')),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inserted_snippet_ops_are_pruned_between_real_ops() {
        let orig = "contract C { uint256 total; function add(uint256 v) public { total = total + v; require(total < 100); } }";
        let aug = "contract C { uint256 total; function add(uint256 v) public { total = total + v; uint256 V1 = 7; while (V1 > 2) { V1 = V1 - 1; } require(total < 100); } }";
        let m1 = ContractModel::from_source(orig).unwrap();
        let m2 = ContractModel::from_source(aug).unwrap();
        assert!(contract_equivalent(&m1, &m2).unwrap());
    }

    fn kset(src: &str, k: usize) -> KGramSet {
        KGramSet::from_tokens(&tokenize(src).tokens, k).unwrap()
    }

    #[test]
    fn jaccard_identical_and_disjoint() {
        let a = kset("a b c", 2);
        assert_eq!(jaccard_similarity(&a, &a).unwrap(), 1.0);
        let b = kset("x y z", 2);
        assert_eq!(jaccard_similarity(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn jaccard_hand_value_one_third() {
        // 2-grams: {ab, bc} vs {bc, cd} -> 1/3.
        let a = kset("a b c", 2);
        let b = kset("b c d", 2);
        let s = jaccard_similarity(&a, &b).unwrap();
        assert!((s - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn jaccard_empty_sets_match() {
        let a = kset("a", 2);
        assert!(a.is_empty());
        assert_eq!(jaccard_similarity(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn mismatched_k_is_an_error() {
        let a = kset("a b c", 2);
        let b = kset("a b c", 3);
        assert!(matches!(jaccard_similarity(&a, &b), Err(Error::MismatchedK { .. })));
    }

    proptest::proptest! {
        #[test]
        fn jaccard_is_symmetric_and_reflexive(
            a in proptest::collection::vec("[abc]{1,2}", 0..12),
            b in proptest::collection::vec("[abc]{1,2}", 0..12),
        ) {
            let ka = kset(&a.join(" "), 2);
            let kb = kset(&b.join(" "), 2);
            let ab = jaccard_similarity(&ka, &kb).unwrap();
            let ba = jaccard_similarity(&kb, &ka).unwrap();
            proptest::prop_assert_eq!(ab, ba);
            proptest::prop_assert!((0.0..=1.0).contains(&ab));
            proptest::prop_assert_eq!(jaccard_similarity(&ka, &ka).unwrap(), 1.0);
        }
    }

    #[test]
    fn diversity_report_is_monotone_in_tau() {
        let streams: Vec<Vec<Token>> = ["a b c d", "a b c e", "q r s t"]
            .iter()
            .map(|s| tokenize(s).tokens)
            .collect();
        let rep = diversity_report(&streams, 2, &[0.95, 0.5, 0.9]).unwrap();
        assert_eq!(rep.pair_similarities.len(), 3);
        let fracs: Vec<f64> = rep.thresholds.iter().map(|(_, f)| *f).collect();
        assert!(fracs.windows(2).all(|w| w[0] <= w[1]));
        // identical-variant pair scores 1.0 -> never "diverse"
        let identical = diversity_report(
            &[tokenize("a b c").tokens, tokenize("a b c").tokens],
            2,
            &[1.0],
        )
        .unwrap();
        assert_eq!(identical.thresholds[0].1, 0.0);
    }
}
