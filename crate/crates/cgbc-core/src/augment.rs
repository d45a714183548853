//! Semantic-preserving contract augmentation.
//!
//! A generated snippet `s = s1 ++ s2` first declares fresh variables (`s1`)
//! and then operates only on them (`s2`), so it never touches the host
//! contract's data or control dependencies. Snippets are inserted at
//! legal statement boundaries of randomly selected functions.
//!
//! Generated code cannot revert: divisors are nonzero literals, every
//! arithmetic statement is screened by interval analysis so uint256
//! overflow/underflow is impossible, and every loop has a constant trip
//! bound of at most [`LOOP_BOUND`].

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::rng::{seeded_rng, sub_seed};
use crate::structure::ContractModel;
use crate::{Error, Result};

/// Hard cap on generated loop iterations.
pub const LOOP_BOUND: u64 = 4;

/// Interval-analysis cap on tracked uint values; far below 2^256, so no
/// generated arithmetic can overflow on chain.
const VALUE_CAP: u128 = 1 << 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SolType {
    Uint256,
    Bool,
}

impl SolType {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolType::Uint256 => "uint256",
            SolType::Bool => "bool",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtrlKind {
    If,
    While,
    For,
}

/// Where declarations land: inside the selected function (no modifier —
/// Solidity locals cannot carry visibility), or as state variables at
/// contract scope with the operations still inside the function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Placement {
    #[default]
    FunctionLocal,
    ContractLevel,
}

/// The snippet grammar: pools and ranges every generation choice draws
/// from.
#[derive(Debug, Clone)]
pub struct SnippetGrammar {
    pub type_pool: Vec<SolType>,
    pub mod_pool: Vec<&'static str>,
    pub ari_ops: Vec<char>,
    pub logi_ops: Vec<&'static str>,
    pub ctrl_pool: Vec<CtrlKind>,
    /// Inclusive range for integer literals.
    pub value_range: (u64, u64),
    /// 1..=max_decls declarations per snippet.
    pub max_decls: usize,
    /// 0..=max_ops operation statements per snippet.
    pub max_ops: usize,
}

impl Default for SnippetGrammar {
    fn default() -> Self {
        SnippetGrammar {
            type_pool: alloc::vec![SolType::Uint256, SolType::Bool],
            mod_pool: alloc::vec!["public", "private", "internal"],
            ari_ops: alloc::vec!['+', '-', '*', '/'],
            logi_ops: alloc::vec!["&&", "||", "!"],
            ctrl_pool: alloc::vec![CtrlKind::If, CtrlKind::While, CtrlKind::For],
            value_range: (0, 255),
            max_decls: 3,
            max_ops: 4,
        }
    }
}

/// A generated contract-free fragment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snippet {
    pub declarations: Vec<String>,
    pub operations: Vec<String>,
    pub introduced_names: BTreeSet<String>,
}

impl Snippet {
    /// Single-line rendering; statements are self-delimiting.
    pub fn render(&self) -> String {
        let mut parts: Vec<&str> = Vec::new();
        parts.extend(self.declarations.iter().map(String::as_str));
        parts.extend(self.operations.iter().map(String::as_str));
        parts.join(" ")
    }

    pub fn render_operations(&self) -> String {
        self.operations
            .iter()
            .map(String::as_str)
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn render_declarations(&self) -> String {
        self.declarations
            .iter()
            .map(String::as_str)
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Where one augmented variant put things.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AugmentationPlan {
    pub contract_id: String,
    /// Indices into the model's function list, ascending.
    pub selected_functions: Vec<usize>,
    /// One insertion offset (original-source coordinates) per selected
    /// function.
    pub insertion_offsets: Vec<usize>,
    /// The per-variant sub-seed all sampling flowed from.
    pub seed: u64,
}

/// One augmented output: final source, the plan, and the raw insertions
/// (original-source offset plus inserted text, ascending).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedVariant {
    pub source: String,
    pub plan: AugmentationPlan,
    pub insertions: Vec<(usize, String)>,
}

/// Allocates `V<k>` names, smallest free index first, never colliding with
/// the reserved set or with names it already issued.
#[derive(Debug, Clone)]
pub struct FreshNames {
    reserved: BTreeSet<String>,
}

impl FreshNames {
    pub fn new<I: IntoIterator<Item = String>>(existing: I) -> Self {
        FreshNames {
            reserved: existing.into_iter().collect(),
        }
    }

    pub fn fresh(&mut self) -> String {
        let mut k = 1usize;
        loop {
            let candidate = format!("V{k}");
            if !self.reserved.contains(&candidate) {
                self.reserved.insert(candidate.clone());
                return candidate;
            }
            k += 1;
        }
    }
}

/// One-shot form: the smallest `V<k>` not in `existing`.
pub fn fresh_name(existing: &BTreeSet<String>) -> String {
    FreshNames::new(existing.iter().cloned()).fresh()
}

/// Exact value interval a generated uint variable can hold at this point
/// in the snippet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ValRange {
    lo: u128,
    hi: u128,
}

impl ValRange {
    fn point(v: u64) -> Self {
        ValRange {
            lo: u128::from(v),
            hi: u128::from(v),
        }
    }

    fn union(self, other: ValRange) -> ValRange {
        ValRange {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    /// Result interval of `self op rhs`, or None when the operation could
    /// revert or exceed the tracked cap.
    fn apply(self, op: char, rhs: ValRange) -> Option<ValRange> {
        match op {
            '+' => {
                let hi = self.hi.checked_add(rhs.hi)?;
                if hi > VALUE_CAP {
                    return None;
                }
                Some(ValRange { lo: self.lo + rhs.lo, hi })
            }
            '-' => {
                if self.lo < rhs.hi {
                    return None; // could underflow
                }
                Some(ValRange {
                    lo: self.lo - rhs.hi,
                    hi: self.hi - rhs.lo,
                })
            }
            '*' => {
                let hi = self.hi.checked_mul(rhs.hi)?;
                if hi > VALUE_CAP {
                    return None;
                }
                Some(ValRange { lo: self.lo * rhs.lo, hi })
            }
            '/' => {
                if rhs.lo == 0 {
                    return None;
                }
                Some(ValRange {
                    lo: self.lo / rhs.hi,
                    hi: self.hi / rhs.lo,
                })
            }
            _ => None,
        }
    }
}

/// Declared variables of one snippet, with tracked uint intervals.
#[derive(Debug, Clone, Default)]
struct Vars {
    names: Vec<(String, SolType)>,
    uints: alloc::collections::BTreeMap<String, ValRange>,
}

impl Vars {
    fn declare(&mut self, name: String, ty: SolType, init: Option<u64>) {
        if let (SolType::Uint256, Some(v)) = (ty, init) {
            self.uints.insert(name.clone(), ValRange::point(v));
        }
        self.names.push((name, ty));
    }

    fn of_type(&self, ty: SolType) -> Vec<&str> {
        self.names
            .iter()
            .filter(|(_, t)| *t == ty)
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

/// Emits `TYPE VAR = VALUE;` declarations (`MOD TYPE VAR = VALUE;` at
/// contract level). Returns the statements and the declared names/types.
pub fn generate_declarations(
    grammar: &SnippetGrammar,
    rng: &mut ChaCha20Rng,
    placement: Placement,
    names: &mut FreshNames,
) -> (Vec<String>, Vec<(String, SolType, Option<u64>)>) {
    let count = rng.random_range(1..=grammar.max_decls.max(1));
    let mut stmts = Vec::with_capacity(count);
    let mut declared = Vec::with_capacity(count);
    for _ in 0..count {
        let ty = *grammar.type_pool.choose(rng).expect("non-empty type pool");
        let name = names.fresh();
        let (init_text, init_val) = match ty {
            SolType::Uint256 => {
                let v = rng.random_range(grammar.value_range.0..=grammar.value_range.1);
                (format!("{v}"), Some(v))
            }
            SolType::Bool => {
                let v: bool = rng.random_bool(0.5);
                (format!("{v}"), None)
            }
        };
        let stmt = match placement {
            Placement::FunctionLocal => format!("{} {} = {};", ty.as_str(), name, init_text),
            Placement::ContractLevel => {
                let m = grammar.mod_pool.choose(rng).expect("non-empty mod pool");
                format!("{} {} {} = {};", ty.as_str(), m, name, init_text)
            }
        };
        stmts.push(stmt);
        declared.push((name, ty, init_val));
    }
    (stmts, declared)
}

/// Statement kinds `s2` draws from.
#[derive(Clone, Copy, PartialEq)]
enum OpChoice {
    Assign,
    Comp,
    Ctrl,
}

/// Emits 0..=max_ops assignment / computation / control statements over
/// the declared names. Control statements need fresh loop counters, hence
/// the `names` allocator.
pub fn generate_operations(
    declared: &[(String, SolType, Option<u64>)],
    grammar: &SnippetGrammar,
    rng: &mut ChaCha20Rng,
    names: &mut FreshNames,
) -> Vec<String> {
    let mut vars = Vars::default();
    for (n, t, init) in declared {
        vars.declare(n.clone(), *t, *init);
    }

    let count = rng.random_range(0..=grammar.max_ops);
    let mut stmts = Vec::new();
    for _ in 0..count {
        // A candidate can be infeasible (no second variable of the type,
        // interval would overflow); resample a few times, then move on.
        let mut emitted = false;
        for _ in 0..16 {
            let choice = match rng.random_range(0..3u8) {
                0 => OpChoice::Assign,
                1 => OpChoice::Comp,
                _ => OpChoice::Ctrl,
            };
            if let Some(stmt) = try_statement(choice, &mut vars, grammar, rng, names) {
                stmts.push(stmt);
                emitted = true;
                break;
            }
        }
        if !emitted {
            // Always-legal fallback keeps the statement budget honest.
            if let Some(stmt) = try_statement(OpChoice::Assign, &mut vars, grammar, rng, names) {
                stmts.push(stmt);
            }
        }
    }
    stmts
}

fn try_statement(
    choice: OpChoice,
    vars: &mut Vars,
    grammar: &SnippetGrammar,
    rng: &mut ChaCha20Rng,
    names: &mut FreshNames,
) -> Option<String> {
    match choice {
        OpChoice::Assign => {
            let ty = *grammar.type_pool.choose(rng)?;
            let pool = vars.of_type(ty);
            if pool.len() < 2 {
                return None;
            }
            let dst = (*pool.choose(rng)?).to_string();
            let src = loop {
                let c = (*pool.choose(rng)?).to_string();
                if c != dst {
                    break c;
                }
            };
            if ty == SolType::Uint256 {
                let r = vars.uints[&src];
                vars.uints.insert(dst.clone(), r);
            }
            Some(format!("{dst} = {src};"))
        }
        OpChoice::Comp => comp_statement(vars, grammar, rng),
        OpChoice::Ctrl => ctrl_statement(vars, grammar, rng, names),
    }
}

/// `dst = src ARI operand;` for uints, `dst = a LOGI b;` / `dst = !a;`
/// for bools. Screened so the arithmetic cannot revert.
fn comp_statement(
    vars: &mut Vars,
    grammar: &SnippetGrammar,
    rng: &mut ChaCha20Rng,
) -> Option<String> {
    let ty = *grammar.type_pool.choose(rng)?;
    match ty {
        SolType::Uint256 => {
            let pool = vars.of_type(SolType::Uint256);
            if pool.is_empty() {
                return None;
            }
            let dst = (*pool.choose(rng)?).to_string();
            let src = (*pool.choose(rng)?).to_string();
            let op = *grammar.ari_ops.choose(rng)?;
            // Divisors are nonzero literals by construction.
            let use_var_rhs = op != '/' && pool.len() >= 2 && rng.random_bool(0.5);
            let (rhs_text, rhs_range) = if use_var_rhs {
                let r = (*pool.choose(rng)?).to_string();
                let range = vars.uints[&r];
                (r, range)
            } else {
                let lo = if op == '/' { grammar.value_range.0.max(1) } else { grammar.value_range.0 };
                let hi = grammar.value_range.1.max(lo);
                let v = rng.random_range(lo..=hi);
                (format!("{v}"), ValRange::point(v))
            };
            let result = vars.uints[&src].apply(op, rhs_range)?;
            vars.uints.insert(dst.clone(), result);
            Some(format!("{dst} = {src} {op} {rhs_text};"))
        }
        SolType::Bool => {
            let pool = vars.of_type(SolType::Bool);
            if pool.is_empty() {
                return None;
            }
            let dst = (*pool.choose(rng)?).to_string();
            let op = *grammar.logi_ops.choose(rng)?;
            if op == "!" {
                let a = (*pool.choose(rng)?).to_string();
                Some(format!("{dst} = !{a};"))
            } else {
                let a = (*pool.choose(rng)?).to_string();
                let b = (*pool.choose(rng)?).to_string();
                Some(format!("{dst} = {a} {op} {b};"))
            }
        }
    }
}

/// `CTRL ( VAR OP VALUE ) { VAR = VAR ARI VALUE; }` with a bounded body:
/// `if` tests a declared variable, `while` counts a fresh counter to
/// K <= 4 with an in-body increment, `for` runs a standard K-bounded
/// header. The body update is checked over every iteration it can run.
fn ctrl_statement(
    vars: &mut Vars,
    grammar: &SnippetGrammar,
    rng: &mut ChaCha20Rng,
    names: &mut FreshNames,
) -> Option<String> {
    let ctrl = *grammar.ctrl_pool.choose(rng)?;
    match ctrl {
        CtrlKind::If => {
            let (body, target, effect) = conditional_body(vars, grammar, rng)?;
            let uints = vars.of_type(SolType::Uint256);
            let bools = vars.of_type(SolType::Bool);
            let cond = if !uints.is_empty() {
                let v = *uints.choose(rng)?;
                let cmp = ["<", ">", "<=", ">=", "==", "!="].choose(rng)?;
                let lit = rng.random_range(grammar.value_range.0..=grammar.value_range.1);
                format!("{v} {cmp} {lit}")
            } else {
                (*bools.choose(rng)?).to_string()
            };
            // The body may or may not run.
            if let (Some(t), Some(range)) = (&target, effect) {
                let pre = vars.uints[t];
                vars.uints.insert(t.clone(), pre.union(range));
            }
            Some(format!("if ({cond}) {{ {body} }}"))
        }
        CtrlKind::While => {
            let k = rng.random_range(1..=LOOP_BOUND);
            let body = iterate_body(vars, grammar, rng, k)?;
            let counter = names.fresh();
            // The counter outlives the loop and holds exactly k afterwards.
            vars.declare(counter.clone(), SolType::Uint256, Some(k));
            Some(format!(
                "uint256 {counter} = 0; while ({counter} < {k}) {{ {body} {counter} = {counter} + 1; }}"
            ))
        }
        CtrlKind::For => {
            let k = rng.random_range(1..=LOOP_BOUND);
            let body = iterate_body(vars, grammar, rng, k)?;
            // Header-declared counters are scoped to the loop; the name
            // stays reserved but is not usable afterwards.
            let counter = names.fresh();
            Some(format!(
                "for (uint256 {counter} = 0; {counter} < {k}; {counter}++) {{ {body} }}"
            ))
        }
    }
}

/// One body statement whose effect is applied at most once (for `if`).
/// Returns the statement plus the touched uint and its post-interval.
fn conditional_body(
    vars: &Vars,
    grammar: &SnippetGrammar,
    rng: &mut ChaCha20Rng,
) -> Option<(String, Option<String>, Option<ValRange>)> {
    let uints = vars.of_type(SolType::Uint256);
    let bools = vars.of_type(SolType::Bool);
    if !uints.is_empty() {
        let dst = (*uints.choose(rng)?).to_string();
        let src = (*uints.choose(rng)?).to_string();
        let op = *grammar.ari_ops.choose(rng)?;
        let lo = if op == '/' { grammar.value_range.0.max(1) } else { grammar.value_range.0 };
        let v = rng.random_range(lo..=grammar.value_range.1.max(lo));
        let result = vars.uints[&src].apply(op, ValRange::point(v))?;
        Some((format!("{dst} = {src} {op} {v};"), Some(dst), Some(result)))
    } else if !bools.is_empty() {
        let dst = (*bools.choose(rng)?).to_string();
        let a = (*bools.choose(rng)?).to_string();
        Some((format!("{dst} = !{a};"), None, None))
    } else {
        None
    }
}

/// A self-update run exactly `k` times; validity is checked at every
/// iteration and the variable ends at the union over all partial runs.
fn iterate_body(
    vars: &mut Vars,
    grammar: &SnippetGrammar,
    rng: &mut ChaCha20Rng,
    k: u64,
) -> Option<String> {
    let uints = vars.of_type(SolType::Uint256);
    let bools = vars.of_type(SolType::Bool);
    if !uints.is_empty() {
        let dst = (*uints.choose(rng)?).to_string();
        let op = *grammar.ari_ops.choose(rng)?;
        let lo = if op == '/' { grammar.value_range.0.max(1) } else { grammar.value_range.0 };
        let v = rng.random_range(lo..=grammar.value_range.1.max(lo));
        let mut current = vars.uints[&dst];
        let mut reach = current;
        for _ in 0..k {
            current = current.apply(op, ValRange::point(v))?;
            reach = reach.union(current);
        }
        vars.uints.insert(dst.clone(), reach);
        Some(format!("{dst} = {dst} {op} {v};"))
    } else if !bools.is_empty() {
        let dst = (*bools.choose(rng)?).to_string();
        Some(format!("{dst} = !{dst};"))
    } else {
        None
    }
}

/// Generates one full snippet with names fresh against `names`.
pub fn generate_snippet(
    grammar: &SnippetGrammar,
    rng: &mut ChaCha20Rng,
    placement: Placement,
    names: &mut FreshNames,
) -> Snippet {
    let before: BTreeSet<String> = names.reserved.clone();
    let (declarations, declared) = generate_declarations(grammar, rng, placement, names);
    let operations = generate_operations(&declared, grammar, rng, names);
    let introduced_names = names
        .reserved
        .difference(&before)
        .cloned()
        .collect();
    Snippet {
        declarations,
        operations,
        introduced_names,
    }
}

/// `m = max(1, ceil(rho * n))` distinct function indices, ascending.
pub fn select_functions(n: usize, rho: f64, rng: &mut ChaCha20Rng) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::NoFunctions);
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidParameter { what: "rho must be in (0, 1]" });
    }
    let m = (crate::math::ceil(rho * n as f64) as usize).clamp(1, n);
    let mut idx: Vec<usize> = rand::seq::index::sample(rng, n, m).into_iter().collect();
    idx.sort_unstable();
    Ok(idx)
}

/// Options for [`augment_contract`].
#[derive(Debug, Clone)]
pub struct AugmentOptions {
    pub grammar: SnippetGrammar,
    /// Fraction of functions to augment.
    pub rho: f64,
    /// How many augmented variants to produce.
    pub count: usize,
    pub seed: u64,
    pub placement: Placement,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        AugmentOptions {
            grammar: SnippetGrammar::default(),
            rho: 0.3,
            count: 5,
            seed: 0,
            placement: Placement::FunctionLocal,
        }
    }
}

/// Produces `count` augmented variants of one contract. Each variant uses
/// an independent sub-seed, selects `m = max(1, ceil(rho*n))` functions,
/// and inserts one fresh snippet per selected function at a uniformly
/// chosen statement boundary. The output re-tokenizes losslessly and every
/// byte outside the insertions is untouched.
pub fn augment_contract(
    model: &ContractModel,
    contract_id: &str,
    opts: &AugmentOptions,
) -> Result<Vec<AugmentedVariant>> {
    if model.functions.is_empty() {
        return Err(Error::NoFunctions);
    }
    let source = model.source();
    let mut out = Vec::with_capacity(opts.count);

    for variant in 0..opts.count {
        let seed = sub_seed(opts.seed, "augment-variant", variant as u64);
        let mut rng = seeded_rng(seed);
        let selected = select_functions(model.functions.len(), opts.rho, &mut rng)?;

        let mut names = FreshNames::new(model.identifiers_in_use.iter().cloned());
        let mut insertions: Vec<(usize, String)> = Vec::new();
        let mut offsets = Vec::with_capacity(selected.len());

        for &fi in &selected {
            let span = &model.functions[fi];
            let snippet = generate_snippet(&opts.grammar, &mut rng, opts.placement, &mut names);
            let loc = *span
                .statement_boundaries
                .get(rng.random_range(0..span.statement_boundaries.len()))
                .expect("non-empty boundary set");
            offsets.push(loc);
            match opts.placement {
                Placement::FunctionLocal => {
                    insertions.push((loc, format!(" {}", snippet.render())));
                }
                Placement::ContractLevel => {
                    let decl_at = contract_scope_insertion_point(model, span.body_start)
                        .ok_or(Error::Internal {
                            what: "function outside any contract block",
                        })?;
                    insertions.push((decl_at, format!(" {}", snippet.render_declarations())));
                    let ops = snippet.render_operations();
                    if !ops.is_empty() {
                        insertions.push((loc, format!(" {ops}")));
                    }
                }
            }
        }

        insertions.sort_by_key(|(off, _)| *off);
        let mut augmented = source.clone();
        for (off, text) in insertions.iter().rev() {
            augmented.insert_str(*off, text);
        }

        // Structural postconditions; violations are bugs, not data errors.
        let restream = crate::lexer::tokenize(&augmented);
        if crate::lexer::render(&restream.tokens) != augmented {
            return Err(Error::Internal { what: "augmented output failed lossless re-lex" });
        }
        crate::structure::locate_functions(&restream.tokens)?;

        out.push(AugmentedVariant {
            source: augmented,
            plan: AugmentationPlan {
                contract_id: contract_id.to_string(),
                selected_functions: selected,
                insertion_offsets: offsets,
                seed,
            },
            insertions,
        });
    }

    Ok(out)
}

/// Byte offset just inside the `{` of the innermost contract-like block
/// containing `pos`, for contract-level declarations.
fn contract_scope_insertion_point(model: &ContractModel, pos: usize) -> Option<usize> {
    use crate::lexer::TokenKind;
    let tokens = &model.tokens;
    let mut stack: Vec<(usize, bool)> = Vec::new(); // (offset after `{`, is contract block)
    let mut pending_contract = false;
    for t in tokens {
        if t.offset >= pos {
            break;
        }
        if !t.is_significant() {
            continue;
        }
        match (t.kind, t.text.as_str()) {
            (TokenKind::Keyword, "contract") | (TokenKind::Keyword, "library") | (TokenKind::Keyword, "interface") => {
                pending_contract = true;
            }
            (TokenKind::Delimiter, "{") => {
                stack.push((t.offset + 1, pending_contract));
                pending_contract = false;
            }
            (TokenKind::Delimiter, "}") => {
                stack.pop();
            }
            (TokenKind::Delimiter, "(") | (TokenKind::Delimiter, ")") => {}
            _ => {}
        }
    }
    stack.iter().rev().find(|(_, c)| *c).map(|(off, _)| *off)
}
