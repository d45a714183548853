//! Lossless Solidity tokenizer.
//!
//! The lexer is total: every byte of the input lands in exactly one token,
//! so concatenating token texts reproduces the source byte-for-byte. It
//! does maximal-munch lexing with no grammar, which is all the downstream
//! passes (insertion points, k-grams, core-operation scans) need.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

/// Token classes. `Keyword` is only assigned for the pinned Solidity
/// (≤0.8.x) keyword list in [`is_keyword`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TokenKind {
    Identifier,
    Keyword,
    Operator,
    Number,
    String,
    Delimiter,
    Comment,
    Whitespace,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Token {
    pub kind: TokenKind,
    /// Exact source slice.
    pub text: String,
    /// Byte offset of the first byte of `text`.
    pub offset: usize,
}

impl Token {
    /// Significant tokens drive structure and semantics; whitespace and
    /// comments are only kept for lossless round-trips.
    pub fn is_significant(&self) -> bool {
        !matches!(self.kind, TokenKind::Whitespace | TokenKind::Comment)
    }
}

/// Conditions tolerated by the lexer but worth surfacing to callers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LexFlags {
    /// A string literal ran to end of input without a closing quote.
    pub unterminated_string: bool,
    /// A `/* ... */` comment ran to end of input.
    pub unterminated_comment: bool,
}

impl LexFlags {
    pub fn clean(&self) -> bool {
        !self.unterminated_string && !self.unterminated_comment
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenStream {
    pub tokens: Vec<Token>,
    pub flags: LexFlags,
}

const BARE_KEYWORDS: &[&str] = &[
    "abstract",
    "address",
    "anonymous",
    "as",
    "assembly",
    "bool",
    "break",
    "bytes",
    "calldata",
    "catch",
    "constant",
    "constructor",
    "continue",
    "contract",
    "days",
    "delete",
    "do",
    "else",
    "emit",
    "enum",
    "error",
    "ether",
    "event",
    "external",
    "fallback",
    "false",
    "fixed",
    "for",
    "function",
    "gwei",
    "hours",
    "if",
    "immutable",
    "import",
    "indexed",
    "int",
    "interface",
    "internal",
    "is",
    "library",
    "mapping",
    "memory",
    "minutes",
    "modifier",
    "new",
    "override",
    "payable",
    "pragma",
    "private",
    "public",
    "pure",
    "receive",
    "return",
    "returns",
    "revert",
    "seconds",
    "storage",
    "string",
    "struct",
    "true",
    "try",
    "type",
    "ufixed",
    "uint",
    "unchecked",
    "using",
    "view",
    "virtual",
    "weeks",
    "wei",
    "while",
];

/// True for the pinned Solidity ≤0.8.x keyword list, including the sized
/// `uintN` / `intN` / `bytesN` families.
pub fn is_keyword(text: &str) -> bool {
    if BARE_KEYWORDS.binary_search(&text).is_ok() {
        return true;
    }
    sized_family(text, "uint", 8, 256, 8)
        || sized_family(text, "int", 8, 256, 8)
        || sized_family(text, "bytes", 1, 32, 1)
}

fn sized_family(text: &str, prefix: &str, lo: u32, hi: u32, step: u32) -> bool {
    let Some(rest) = text.strip_prefix(prefix) else {
        return false;
    };
    if rest.is_empty() || rest.len() > 3 || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return false;
    }
    // No leading zeros in the canonical spellings.
    if rest.starts_with('0') {
        return false;
    }
    match rest.parse::<u32>() {
        Ok(n) => n >= lo && n <= hi && n % step == 0,
        Err(_) => false,
    }
}

/// Elementary type keywords (used by the semantic scan to recognize local
/// declarations and to keep type conversions out of the call set).
pub fn is_type_keyword(text: &str) -> bool {
    matches!(
        text,
        "address" | "bool" | "string" | "bytes" | "uint" | "int" | "fixed" | "ufixed" | "mapping"
    ) || sized_family(text, "uint", 8, 256, 8)
        || sized_family(text, "int", 8, 256, 8)
        || sized_family(text, "bytes", 1, 32, 1)
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '$'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$'
}

// Multi-character operators, longest first so maximal munch falls out of
// the scan order.
const OPERATORS: &[&str] = &[
    ">>=", "<<=", "**", "==", "!=", "<=", ">=", "&&", "||", "+=", "-=", "*=", "/=", "%=", "&=",
    "|=", "^=", "<<", ">>", "++", "--", "=>", "->",
];

/// Tokenizes `source`. Total: never fails; unterminated strings and block
/// comments become a single token to end of input and set a flag.
pub fn tokenize(source: &str) -> TokenStream {
    let bytes = source.as_bytes();
    let mut tokens = Vec::new();
    let mut flags = LexFlags::default();
    let mut i = 0;

    while i < bytes.len() {
        let rest = &source[i..];
        let c = rest.chars().next().expect("offset on char boundary");
        let start = i;

        let (kind, len) = if c.is_ascii_whitespace() {
            let len = rest
                .find(|ch: char| !ch.is_ascii_whitespace())
                .unwrap_or(rest.len());
            (TokenKind::Whitespace, len)
        } else if rest.starts_with("//") {
            let len = rest.find('\n').unwrap_or(rest.len());
            (TokenKind::Comment, len)
        } else if rest.starts_with("/*") {
            match rest[2..].find("*/") {
                Some(p) => (TokenKind::Comment, 2 + p + 2),
                None => {
                    flags.unterminated_comment = true;
                    (TokenKind::Comment, rest.len())
                }
            }
        } else if c == '"' || c == '\'' {
            let (len, closed) = scan_string(rest, c);
            if !closed {
                flags.unterminated_string = true;
            }
            (TokenKind::String, len)
        } else if c.is_ascii_digit() {
            (TokenKind::Number, scan_number(rest))
        } else if is_ident_start(c) {
            let len = rest.find(|ch: char| !is_ident_continue(ch)).unwrap_or(rest.len());
            let kind = if is_keyword(&rest[..len]) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            };
            (kind, len)
        } else if matches!(c, '(' | ')' | '{' | '}' | '[' | ']' | ';' | ',') {
            (TokenKind::Delimiter, 1)
        } else {
            let len = OPERATORS
                .iter()
                .find(|op| rest.starts_with(**op))
                .map(|op| op.len())
                .unwrap_or_else(|| c.len_utf8());
            (TokenKind::Operator, len)
        };

        tokens.push(Token {
            kind,
            text: rest[..len].to_string(),
            offset: start,
        });
        i += len;
    }

    TokenStream { tokens, flags }
}

fn scan_string(rest: &str, quote: char) -> (usize, bool) {
    let mut chars = rest.char_indices();
    chars.next(); // opening quote
    let mut escaped = false;
    for (idx, ch) in chars {
        if escaped {
            escaped = false;
            continue;
        }
        match ch {
            '\\' => escaped = true,
            '\n' => return (idx, false), // Solidity strings are single-line
            c if c == quote => return (idx + c.len_utf8(), true),
            _ => {}
        }
    }
    (rest.len(), false)
}

fn scan_number(rest: &str) -> usize {
    let bytes = rest.as_bytes();
    let mut i = 1;
    if bytes[0] == b'0' && i < bytes.len() && (bytes[i] == b'x' || bytes[i] == b'X') {
        i += 1;
        while i < bytes.len() && (bytes[i].is_ascii_hexdigit() || bytes[i] == b'_') {
            i += 1;
        }
        return i;
    }
    while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'_') {
        i += 1;
    }
    if i < bytes.len() && bytes[i] == b'.' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit()) {
        i += 1;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'_') {
            i += 1;
        }
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        if j < bytes.len() && bytes[j].is_ascii_digit() {
            i = j;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
        }
    }
    i
}

/// Inverse of [`tokenize`]: concatenates token texts.
pub fn render(tokens: &[Token]) -> String {
    let mut out = String::with_capacity(tokens.iter().map(|t| t.text.len()).sum());
    for t in tokens {
        out.push_str(&t.text);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<(TokenKind, String)> {
        tokenize(src)
            .tokens
            .into_iter()
            .map(|t| (t.kind, t.text))
            .collect()
    }

    #[test]
    fn hand_lex_assignment() {
        let got = kinds("a=1;");
        assert_eq!(
            got,
            alloc::vec![
                (TokenKind::Identifier, "a".to_string()),
                (TokenKind::Operator, "=".to_string()),
                (TokenKind::Number, "1".to_string()),
                (TokenKind::Delimiter, ";".to_string()),
            ]
        );
    }

    #[test]
    fn empty_source_yields_empty_stream() {
        let ts = tokenize("");
        assert!(ts.tokens.is_empty());
        assert!(ts.flags.clean());
    }

    #[test]
    fn comments_are_single_tokens() {
        let ts = tokenize("a // line\nb /* block\nstill */ c");
        let comments: Vec<_> = ts
            .tokens
            .iter()
            .filter(|t| t.kind == TokenKind::Comment)
            .map(|t| t.text.as_str())
            .collect();
        assert_eq!(comments, ["// line", "/* block\nstill */"]);
    }

    #[test]
    fn unterminated_constructs_are_flagged() {
        let ts = tokenize("x = \"abc");
        assert!(ts.flags.unterminated_string);
        assert_eq!(render(&ts.tokens), "x = \"abc");

        let ts = tokenize("/* never closed");
        assert!(ts.flags.unterminated_comment);
        assert_eq!(ts.tokens.len(), 1);
    }

    #[test]
    fn keyword_families() {
        assert!(is_keyword("uint256"));
        assert!(is_keyword("bytes32"));
        assert!(is_keyword("int8"));
        assert!(!is_keyword("uint257"));
        assert!(!is_keyword("uint0"));
        assert!(!is_keyword("bytes33"));
        assert!(!is_keyword("myvar"));
        assert!(is_keyword("unchecked"));
    }

    #[test]
    fn maximal_munch_operators() {
        let got = kinds("a>>=b==c=>d");
        let ops: Vec<_> = got
            .iter()
            .filter(|(k, _)| *k == TokenKind::Operator)
            .map(|(_, t)| t.as_str())
            .collect();
        assert_eq!(ops, [">>=", "==", "=>"]);
    }

    #[test]
    fn numbers_with_exponents_and_hex() {
        let got = kinds("1e18 0xFF_AA 1.5 10");
        let nums: Vec<_> = got
            .iter()
            .filter(|(k, _)| *k == TokenKind::Number)
            .map(|(_, t)| t.as_str())
            .collect();
        assert_eq!(nums, ["1e18", "0xFF_AA", "1.5", "10"]);
    }

    #[test]
    fn round_trip_on_awkward_input() {
        let src = "pragma solidity ^0.8.0;\ncontract A { /* c */ function f() public { x = \"s;{}\"; } }\n\u{00e9}";
        let ts = tokenize(src);
        assert_eq!(render(&ts.tokens), src);
    }

    proptest::proptest! {
        #[test]
        fn round_trip_is_lossless(src in "\\PC*") {
            let ts = tokenize(&src);
            proptest::prop_assert_eq!(render(&ts.tokens), src);
        }

        #[test]
        fn determinism(src in "[a-zA-Z0-9{}();=+*/ \n\"']*") {
            let a = tokenize(&src);
            let b = tokenize(&src);
            proptest::prop_assert_eq!(a, b);
        }
    }
}
