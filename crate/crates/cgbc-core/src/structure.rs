//! Structural skeleton of a Solidity source file: function bodies and the
//! byte offsets at which a new statement may legally begin.
//!
//! No grammar, no type checking. A brace matcher over the token stream is
//! enough to find insertion points and to scope the semantic scan, and it
//! stays robust across compiler versions.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::lexer::{tokenize, Token, TokenKind};
use crate::{Error, Result};

/// One function (or constructor/fallback/receive) with a body.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FunctionSpan {
    /// Identifier text, or `constructor` / `fallback` / `receive`, or the
    /// empty string for an unnamed legacy fallback.
    pub name: String,
    /// Byte offset of the body's opening `{`.
    pub body_start: usize,
    /// Byte offset of the body's closing `}`.
    pub body_end: usize,
    /// Ascending byte offsets at which a statement may legally begin.
    pub statement_boundaries: Vec<usize>,
}

/// Token stream plus recovered structure for one source file.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractModel {
    pub tokens: Vec<Token>,
    pub functions: Vec<FunctionSpan>,
    /// Every identifier text that occurs anywhere in the file; fresh names
    /// must avoid all of them.
    pub identifiers_in_use: BTreeSet<String>,
}

impl ContractModel {
    pub fn from_source(source: &str) -> Result<Self> {
        let stream = tokenize(source);
        Self::from_tokens(stream.tokens)
    }

    pub fn from_tokens(tokens: Vec<Token>) -> Result<Self> {
        let functions = locate_functions(&tokens)?;
        let identifiers_in_use = tokens
            .iter()
            .filter(|t| t.kind == TokenKind::Identifier)
            .map(|t| t.text.clone())
            .collect();
        Ok(ContractModel {
            tokens,
            functions,
            identifiers_in_use,
        })
    }

    pub fn source(&self) -> String {
        crate::lexer::render(&self.tokens)
    }
}

/// Confirms every `{` has a partner; returns the offset of the first
/// unmatched brace otherwise.
fn check_brace_balance(tokens: &[Token]) -> Result<()> {
    let mut stack: Vec<usize> = Vec::new();
    for t in tokens {
        if t.kind != TokenKind::Delimiter {
            continue;
        }
        match t.text.as_str() {
            "{" => stack.push(t.offset),
            "}" => {
                if stack.pop().is_none() {
                    return Err(Error::UnbalancedBrace { offset: t.offset });
                }
            }
            _ => {}
        }
    }
    match stack.first() {
        Some(&offset) => Err(Error::UnbalancedBrace { offset }),
        None => Ok(()),
    }
}

/// Finds `function <name> ... { ... }` plus constructor/fallback/receive.
/// Declarations ending in `;` (interfaces, abstract functions, and
/// function-typed variables) yield no span.
pub fn locate_functions(tokens: &[Token]) -> Result<Vec<FunctionSpan>> {
    check_brace_balance(tokens)?;

    let sig: Vec<usize> = (0..tokens.len())
        .filter(|&i| tokens[i].is_significant())
        .collect();
    let mut spans = Vec::new();
    let mut s = 0;

    while s < sig.len() {
        let tok = &tokens[sig[s]];
        let head = tok.kind == TokenKind::Keyword
            && matches!(
                tok.text.as_str(),
                "function" | "constructor" | "fallback" | "receive"
            );
        if !head {
            s += 1;
            continue;
        }

        let mut name = String::new();
        let mut t = s + 1;
        if tok.text == "function" {
            if t < sig.len() && tokens[sig[t]].kind == TokenKind::Identifier {
                name = tokens[sig[t]].text.clone();
                t += 1;
            }
        } else {
            name = tok.text.clone();
        }
        // `fallback`/`receive`/`constructor` only head a definition when a
        // parameter list follows (older sources use them as identifiers).
        if tok.text != "function" && !(t < sig.len() && tokens[sig[t]].text == "(") {
            s += 1;
            continue;
        }

        // Scan past parameters, modifiers, and returns to the body `{` or
        // the terminating `;` of a declaration.
        let mut depth = 0usize;
        let mut body = None;
        while t < sig.len() {
            let tk = &tokens[sig[t]];
            match (tk.kind, tk.text.as_str()) {
                (TokenKind::Delimiter, "(") | (TokenKind::Delimiter, "[") => depth += 1,
                (TokenKind::Delimiter, ")") | (TokenKind::Delimiter, "]") => {
                    depth = depth.saturating_sub(1)
                }
                (TokenKind::Delimiter, ";") if depth == 0 => break,
                (TokenKind::Delimiter, "{") if depth == 0 => {
                    body = Some(t);
                    break;
                }
                (TokenKind::Delimiter, "}") if depth == 0 => break,
                _ => {}
            }
            t += 1;
        }

        let Some(open) = body else {
            s += 1;
            continue;
        };

        // Matching `}` for the body; balance was checked globally.
        let mut brace = 0usize;
        let mut close = open;
        for u in open..sig.len() {
            match tokens[sig[u]].text.as_str() {
                "{" if tokens[sig[u]].kind == TokenKind::Delimiter => brace += 1,
                "}" if tokens[sig[u]].kind == TokenKind::Delimiter => {
                    brace -= 1;
                    if brace == 0 {
                        close = u;
                        break;
                    }
                }
                _ => {}
            }
        }
        if brace != 0 {
            return Err(Error::UnbalancedBrace {
                offset: tokens[sig[open]].offset,
            });
        }

        let body_start = tokens[sig[open]].offset;
        let body_end = tokens[sig[close]].offset;
        let statement_boundaries = statement_boundaries(tokens, body_start, body_end);
        spans.push(FunctionSpan {
            name,
            body_start,
            body_end,
            statement_boundaries,
        });
        // Nested functions do not exist in Solidity; resume after the body.
        s = close + 1;
    }

    Ok(spans)
}

/// Statement boundaries inside one function body: immediately after the
/// opening `{`, after every statement-level `;`, and after every `}` that
/// closes a nested block. Positions inside parenthesized expressions
/// (`for` headers included), strings, comments, and `assembly`/`unchecked`
/// blocks are never reported, and a position directly before `else`,
/// `catch`, or `while` is dropped so a `do`/`if`/`try` chain is never
/// split.
pub fn statement_boundaries(tokens: &[Token], body_start: usize, body_end: usize) -> Vec<usize> {
    let inside: Vec<usize> = (0..tokens.len())
        .filter(|&i| tokens[i].offset > body_start && tokens[i].offset < body_end)
        .collect();

    let mut boundaries = Vec::new();
    boundaries.push(body_start + 1);

    let mut paren = 0i32;
    let mut bracket = 0i32;
    // One entry per open nested block; `true` marks an opaque
    // (`assembly` / `unchecked`) block.
    let mut blocks: Vec<bool> = Vec::new();
    let mut pending_opaque = false;

    let next_significant = |from: usize| -> Option<&Token> {
        inside[from..]
            .iter()
            .map(|&i| &tokens[i])
            .find(|t| t.is_significant())
    };

    for (pos, &ti) in inside.iter().enumerate() {
        let t = &tokens[ti];
        if !t.is_significant() {
            continue;
        }
        let in_opaque = blocks.iter().any(|&o| o);
        match (t.kind, t.text.as_str()) {
            (TokenKind::Keyword, "assembly") | (TokenKind::Keyword, "unchecked") => {
                pending_opaque = true;
            }
            // An assembly dialect string may sit between the keyword and
            // its block.
            (TokenKind::String, _) => {}
            (TokenKind::Delimiter, "(") => {
                paren += 1;
                pending_opaque = false;
            }
            (TokenKind::Delimiter, ")") => paren -= 1,
            (TokenKind::Delimiter, "[") => {
                bracket += 1;
                pending_opaque = false;
            }
            (TokenKind::Delimiter, "]") => bracket -= 1,
            (TokenKind::Delimiter, "{") => {
                let opaque = pending_opaque;
                pending_opaque = false;
                blocks.push(opaque);
                if !opaque && !in_opaque && paren == 0 && bracket == 0 {
                    boundaries.push(t.offset + 1);
                }
            }
            (TokenKind::Delimiter, "}") => {
                blocks.pop();
                let now_opaque = blocks.iter().any(|&o| o);
                if !now_opaque && paren == 0 && bracket == 0 && !follows_clause(next_significant(pos + 1)) {
                    boundaries.push(t.offset + 1);
                }
            }
            (TokenKind::Delimiter, ";") => {
                if !in_opaque && paren == 0 && bracket == 0 && !follows_clause(next_significant(pos + 1)) {
                    boundaries.push(t.offset + 1);
                }
            }
            _ => pending_opaque = false,
        }
    }

    boundaries
}

fn follows_clause(next: Option<&Token>) -> bool {
    match next {
        Some(t) if t.kind == TokenKind::Keyword => {
            matches!(t.text.as_str(), "else" | "catch" | "while")
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(src: &str) -> ContractModel {
        ContractModel::from_source(src).expect("parse")
    }

    #[test]
    fn single_function_with_empty_body() {
        let src = "contract A { function f() public {} }";
        let m = model(src);
        assert_eq!(m.functions.len(), 1);
        let f = &m.functions[0];
        assert_eq!(f.name, "f");
        assert_eq!(&src[f.body_start..=f.body_end], "{}");
        // Only the position just after `{`.
        assert_eq!(f.statement_boundaries, alloc::vec![f.body_start + 1]);
    }

    #[test]
    fn interface_declaration_yields_no_span() {
        let m = model("interface I { function f() external; }");
        assert!(m.functions.is_empty());
    }

    #[test]
    fn function_typed_variable_yields_no_span() {
        let m = model("contract A { function(uint256) internal returns (uint256) handler; }");
        assert!(m.functions.is_empty());
    }

    #[test]
    fn constructor_fallback_receive() {
        let m = model(
            "contract A { constructor() {} fallback() external payable {} receive() external payable {} }",
        );
        let names: Vec<_> = m.functions.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["constructor", "fallback", "receive"]);
    }

    #[test]
    fn two_statements_three_boundaries() {
        let src = "contract A { function f() public { x = 1; y = 2; } }";
        let m = model(src);
        let f = &m.functions[0];
        assert_eq!(f.statement_boundaries.len(), 3);
        let open = src.find("{ x").unwrap();
        let semi1 = src.find("1;").unwrap() + 1;
        let semi2 = src.find("2;").unwrap() + 1;
        assert_eq!(f.statement_boundaries, alloc::vec![open + 1, semi1 + 1, semi2 + 1]);
    }

    #[test]
    fn for_header_semicolons_are_not_boundaries() {
        let src = "contract A { function f() public { for (uint256 i=0;i<3;i++) { x=1; } } }";
        let m = model(src);
        let f = &m.functions[0];
        let header_semi = src.find("=0;").unwrap() + 2;
        assert!(!f.statement_boundaries.contains(&(header_semi + 1)));
        // after body `{`, after loop `{`, after `x=1;`, after loop `}`
        assert_eq!(f.statement_boundaries.len(), 4);
    }

    #[test]
    fn nested_blocks_report_inner_boundaries() {
        let src = "contract A { function f() public { { } } }";
        let m = model(src);
        let f = &m.functions[0];
        // after body `{`, after inner `{`, after inner `}`
        assert_eq!(f.statement_boundaries.len(), 3);
    }

    #[test]
    fn assembly_and_unchecked_blocks_are_opaque() {
        let src =
            "contract A { function f() public { assembly { let q := 1 } unchecked { x = x + 1; } } }";
        let m = model(src);
        let f = &m.functions[0];
        let asm_open = src.find("assembly {").unwrap() + "assembly ".len();
        let unch_semi = src.find("+ 1;").unwrap() + 3;
        assert!(!f.statement_boundaries.contains(&(asm_open + 1)));
        assert!(!f.statement_boundaries.contains(&(unch_semi + 1)));
        // positions after the two closing braces are fine
        let asm_close = src.find("} unchecked").unwrap();
        assert!(f.statement_boundaries.contains(&(asm_close + 1)));
    }

    #[test]
    fn no_boundary_before_else_or_while() {
        let src = "contract A { function f() public { if (x > 0) { x = 1; } else { x = 2; } do { y = 1; } while (y < 2); } }";
        let m = model(src);
        let f = &m.functions[0];
        let before_else = src.find("} else").unwrap();
        let before_while = src.find("} while").unwrap();
        assert!(!f.statement_boundaries.contains(&(before_else + 1)));
        assert!(!f.statement_boundaries.contains(&(before_while + 1)));
    }

    #[test]
    fn unbalanced_brace_reports_offset() {
        let err = ContractModel::from_source("contract A { function f() public { }").unwrap_err();
        match err {
            Error::UnbalancedBrace { offset } => assert_eq!(offset, 11),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn modifier_invocation_with_args_is_skipped() {
        let src = "contract A { function f() public onlyRole(ADMIN) returns (uint256) { return 1; } }";
        let m = model(src);
        assert_eq!(m.functions.len(), 1);
        assert_eq!(m.functions[0].name, "f");
    }
}
