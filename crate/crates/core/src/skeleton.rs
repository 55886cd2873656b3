//! SQL tokenization and skeleton extraction.
//!
//! A skeleton keeps SQL keywords and replaces every maximal run of other
//! tokens with `_`, so
//! `SELECT movie_title FROM movies WHERE movie_release_year = 1945` becomes
//! `SELECT _ FROM _ WHERE _`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SqlError {
    #[error("empty SQL text")]
    Empty,
    #[error("unterminated string or quoted identifier starting at byte {0}")]
    UnterminatedString(usize),
    #[error("unterminated block comment starting at byte {0}")]
    UnterminatedComment(usize),
}

/// Words treated as keywords. Matching is case-insensitive.
pub const KEYWORDS: &[&str] = &[
    "SELECT", "FROM", "WHERE", "ORDER", "BY", "GROUP", "HAVING", "JOIN", "INNER", "LEFT", "ON",
    "AS", "DESC", "ASC", "LIMIT", "DISTINCT", "UNION", "INTERSECT", "EXCEPT", "AND", "OR", "NOT",
    "IN", "EXISTS", "BETWEEN", "LIKE", "CASE", "WHEN", "THEN", "ELSE", "END", "CAST", "NULL", "IS",
    "COUNT", "SUM", "AVG", "MIN", "MAX",
    // join and clause words outside the core list
    "OUTER", "CROSS", "NATURAL", "RIGHT", "FULL", "USING", "ALL", "OFFSET", "WITH",
];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(word))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Keyword,
    Identifier,
    Literal,
    Operator,
    Punctuation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlToken {
    pub text: String,
    pub kind: TokenKind,
}

impl SqlToken {
    fn new(text: impl Into<String>, kind: TokenKind) -> Self {
        SqlToken {
            text: text.into(),
            kind,
        }
    }

    pub fn is_keyword(&self, word: &str) -> bool {
        self.kind == TokenKind::Keyword && self.text.eq_ignore_ascii_case(word)
    }

    pub fn is_punct(&self, p: &str) -> bool {
        self.kind == TokenKind::Punctuation && self.text == p
    }

    /// Whether the token is a quoted identifier (`"x"`, `` `x` `` or `[x]`).
    pub fn is_quoted_identifier(&self) -> bool {
        self.kind == TokenKind::Identifier
            && matches!(self.text.chars().next(), Some('"' | '`' | '['))
    }

    /// Identifier text with any quoting removed.
    pub fn unquoted(&self) -> String {
        unquote_identifier(&self.text)
    }
}

pub fn unquote_identifier(text: &str) -> String {
    let mut chars = text.chars();
    match (chars.next(), text.chars().last()) {
        (Some('"'), Some('"')) if text.len() >= 2 => text[1..text.len() - 1].replace("\"\"", "\""),
        (Some('`'), Some('`')) if text.len() >= 2 => text[1..text.len() - 1].replace("``", "`"),
        (Some('['), Some(']')) if text.len() >= 2 => text[1..text.len() - 1].to_string(),
        _ => text.to_string(),
    }
}

const MULTI_CHAR_OPERATORS: &[&str] = &["<=", ">=", "<>", "!=", "==", "||", "<<", ">>", "->>", "->"];

fn is_word_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

/// Splits SQL into tokens. Comments are dropped; quoted strings stay whole.
pub fn tokenize(sql: &str) -> Result<Vec<SqlToken>, SqlError> {
    if sql.trim().is_empty() {
        return Err(SqlError::Empty);
    }
    let bytes = sql.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0usize;
    while pos < sql.len() {
        let rest = &sql[pos..];
        let c = rest.chars().next().expect("non-empty remainder");
        if c.is_whitespace() {
            pos += c.len_utf8();
            continue;
        }
        if rest.starts_with("--") {
            pos = rest.find('\n').map_or(sql.len(), |nl| pos + nl + 1);
            continue;
        }
        if rest.starts_with("/*") {
            let end = rest[2..].find("*/").ok_or(SqlError::UnterminatedComment(pos))?;
            pos += end + 4;
            continue;
        }
        match c {
            '\'' | '"' | '`' => {
                let end = scan_quoted(sql, pos, c)?;
                let kind = if c == '\'' {
                    TokenKind::Literal
                } else {
                    TokenKind::Identifier
                };
                tokens.push(SqlToken::new(&sql[pos..end], kind));
                pos = end;
            }
            '[' => {
                let close = rest.find(']').ok_or(SqlError::UnterminatedString(pos))?;
                tokens.push(SqlToken::new(&rest[..=close], TokenKind::Identifier));
                pos += close + 1;
            }
            c if c.is_ascii_digit()
                || (c == '.' && bytes.get(pos + 1).map_or(false, u8::is_ascii_digit)) =>
            {
                let end = scan_number(sql, pos);
                tokens.push(SqlToken::new(&sql[pos..end], TokenKind::Literal));
                pos = end;
            }
            c if is_word_start(c) => {
                let len = rest
                    .char_indices()
                    .find(|&(_, ch)| !is_word_char(ch))
                    .map_or(rest.len(), |(i, _)| i);
                let word = &rest[..len];
                let kind = if is_keyword(word) {
                    TokenKind::Keyword
                } else {
                    TokenKind::Identifier
                };
                tokens.push(SqlToken::new(word, kind));
                pos += len;
            }
            '(' | ')' | ',' | ';' | '.' => {
                tokens.push(SqlToken::new(c.to_string(), TokenKind::Punctuation));
                pos += 1;
            }
            _ => {
                if let Some(op) = MULTI_CHAR_OPERATORS.iter().find(|op| rest.starts_with(**op)) {
                    tokens.push(SqlToken::new(*op, TokenKind::Operator));
                    pos += op.len();
                } else if "=<>+-*/%&|~!".contains(c) {
                    tokens.push(SqlToken::new(c.to_string(), TokenKind::Operator));
                    pos += 1;
                } else {
                    // parameters and stray characters
                    tokens.push(SqlToken::new(c.to_string(), TokenKind::Punctuation));
                    pos += c.len_utf8();
                }
            }
        }
    }
    Ok(tokens)
}

/// Returns the byte offset just past the closing quote; doubled quotes escape.
fn scan_quoted(sql: &str, start: usize, quote: char) -> Result<usize, SqlError> {
    let bytes = sql.as_bytes();
    let q = quote as u8;
    let mut i = start + 1;
    while i < bytes.len() {
        if bytes[i] == q {
            if bytes.get(i + 1) == Some(&q) {
                i += 2;
                continue;
            }
            return Ok(i + 1);
        }
        i += 1;
    }
    Err(SqlError::UnterminatedString(start))
}

fn scan_number(sql: &str, start: usize) -> usize {
    let bytes = sql.as_bytes();
    let mut i = start;
    if sql[start..].starts_with("0x") || sql[start..].starts_with("0X") {
        i += 2;
        while i < bytes.len() && bytes[i].is_ascii_hexdigit() {
            i += 1;
        }
        return i;
    }
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        if j < bytes.len() && bytes[j].is_ascii_digit() {
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            i = j;
        }
    }
    i
}

/// Placeholder standing in for every run of non-keyword tokens.
pub const PLACEHOLDER: &str = "_";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SqlSkeleton(String);

impl SqlSkeleton {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn keyword_count(&self) -> usize {
        self.0.split(' ').filter(|w| *w != PLACEHOLDER && !w.is_empty()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for SqlSkeleton {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Builds the skeleton from an already tokenized statement.
pub fn skeleton_of(tokens: &[SqlToken]) -> SqlSkeleton {
    let mut parts: Vec<String> = Vec::new();
    for token in tokens {
        if token.kind == TokenKind::Keyword {
            parts.push(token.text.to_ascii_uppercase());
        } else if parts.last().map(String::as_str) != Some(PLACEHOLDER) {
            parts.push(PLACEHOLDER.to_string());
        }
    }
    SqlSkeleton(parts.join(" "))
}

pub fn extract_skeleton(sql: &str) -> Result<SqlSkeleton, SqlError> {
    Ok(skeleton_of(&tokenize(sql)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kinds(sql: &str) -> Vec<(String, TokenKind)> {
        tokenize(sql)
            .unwrap()
            .into_iter()
            .map(|t| (t.text, t.kind))
            .collect()
    }

    #[test]
    fn select_one() {
        assert_eq!(
            kinds("SELECT 1"),
            vec![
                ("SELECT".to_string(), TokenKind::Keyword),
                ("1".to_string(), TokenKind::Literal)
            ]
        );
    }

    #[test]
    fn string_literal_is_one_token() {
        let tokens = tokenize("WHERE name = 'a b'").unwrap();
        assert_eq!(tokens.len(), 4);
        assert_eq!(tokens[3], SqlToken::new("'a b'", TokenKind::Literal));
        let tokens = tokenize("WHERE name = 'it''s'").unwrap();
        assert_eq!(tokens[3].text, "'it''s'");
    }

    #[test]
    fn comments_are_dropped() {
        assert_eq!(tokenize("SELECT * FROM t -- c").unwrap().len(), 4);
        assert_eq!(tokenize("SELECT /* x */ a FROM t").unwrap().len(), 4);
    }

    #[test]
    fn unterminated_inputs_error() {
        assert_eq!(tokenize("SELECT 'abc"), Err(SqlError::UnterminatedString(7)));
        assert_eq!(tokenize("SELECT /* abc"), Err(SqlError::UnterminatedComment(7)));
        assert_eq!(tokenize("SELECT \"abc"), Err(SqlError::UnterminatedString(7)));
        assert_eq!(tokenize("   "), Err(SqlError::Empty));
    }

    #[test]
    fn quoted_identifiers_and_operators() {
        let tokens = tokenize("SELECT `movie title`, T1.\"x\" FROM [t] WHERE a <> 2.5e3").unwrap();
        assert_eq!(tokens[1].kind, TokenKind::Identifier);
        assert_eq!(tokens[1].unquoted(), "movie title");
        assert!(tokens.iter().any(|t| t.text == "<>" && t.kind == TokenKind::Operator));
        assert!(tokens.iter().any(|t| t.text == "2.5e3" && t.kind == TokenKind::Literal));
        assert!(tokens.iter().any(|t| t.text == "[t]" && t.is_quoted_identifier()));
    }

    #[test]
    fn worked_skeleton() {
        let sk = extract_skeleton(
            "SELECT movie_title FROM movies WHERE movie_release_year = 1945 ORDER BY movie_popularity DESC LIMIT 1",
        )
        .unwrap();
        assert_eq!(sk.as_str(), "SELECT _ FROM _ WHERE _ ORDER BY _ DESC LIMIT _");
    }

    #[test]
    fn small_skeletons() {
        assert_eq!(extract_skeleton("SELECT *").unwrap().as_str(), "SELECT _");
        assert_eq!(
            extract_skeleton("SELECT a, b FROM t JOIN u ON a = b").unwrap().as_str(),
            "SELECT _ FROM _ JOIN _ ON _"
        );
        assert_eq!(
            extract_skeleton("select count(*) from t").unwrap().as_str(),
            "SELECT COUNT _ FROM _"
        );
    }

    /// Brute-force run collapsing: map each token to keyword or placeholder,
    /// then drop any placeholder whose predecessor is also a placeholder.
    fn brute_force(tokens: &[SqlToken]) -> String {
        let mapped: Vec<String> = tokens
            .iter()
            .map(|t| {
                if is_keyword(&t.text) && t.kind == TokenKind::Keyword {
                    t.text.to_uppercase()
                } else {
                    "_".to_string()
                }
            })
            .collect();
        let mut kept = Vec::new();
        for (i, word) in mapped.iter().enumerate() {
            if word == "_" && i > 0 && mapped[i - 1] == "_" {
                continue;
            }
            kept.push(word.clone());
        }
        kept.join(" ")
    }

    proptest! {
        #[test]
        fn skeleton_matches_brute_force_and_is_idempotent(
            words in proptest::collection::vec(
                prop_oneof![
                    Just("SELECT"), Just("from"), Just("WHERE"), Just("a"), Just("t1"),
                    Just("="), Just("'x y'"), Just("("), Just(")"), Just(","), Just("42"),
                    Just("order"), Just("BY"), Just("count"), Just("_"), Just("T1.col"),
                ],
                1..30,
            )
        ) {
            let sql = words.join(" ");
            let tokens = tokenize(&sql).unwrap();
            let sk = skeleton_of(&tokens);
            prop_assert_eq!(sk.as_str(), brute_force(&tokens));
            prop_assert!(!sk.as_str().contains("_ _"));
            let again = extract_skeleton(sk.as_str()).unwrap();
            prop_assert_eq!(again, sk);
        }
    }
}
