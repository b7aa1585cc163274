//! Text processing: tokenization, comment stripping, stack-trace detection,
//! and the report/file token-overlap similarity ratio.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;

use crate::corpus::{BugReport, SourceFile};
use crate::error::{Error, Result};

/// Ordered stream of lowercase tokens. Every token is at least two
/// characters long and drawn from `[a-z0-9]`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenStream {
    tokens: Vec<String>,
}

impl TokenStream {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Distinct tokens, sorted.
    pub fn unique(&self) -> BTreeSet<&str> {
        self.tokens.iter().map(String::as_str).collect()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.tokens.iter()
    }
}

/// Tokenize free text or source code.
///
/// Words are maximal runs of `[A-Za-z0-9_]`. Each word is split on
/// underscores and camelCase boundaries; the split parts are emitted after
/// the joined lowercase identifier (underscores removed), so exact
/// identifier matches still score. Tokens shorter than two characters are
/// dropped.
pub fn tokenize(text: &str) -> TokenStream {
    let mut tokens = Vec::new();
    for word in text
        .split(|c: char| !c.is_ascii_alphanumeric() && c != '_')
        .filter(|w| !w.is_empty())
    {
        let joined: String = word
            .chars()
            .filter(|&c| c != '_')
            .map(|c| c.to_ascii_lowercase())
            .collect();
        let parts: Vec<String> = word
            .split('_')
            .flat_map(split_camel)
            .map(|p| p.to_ascii_lowercase())
            .filter(|p| p.len() >= 2)
            .collect();
        if parts.len() == 1 && parts[0] == joined {
            tokens.push(joined);
            continue;
        }
        if joined.len() >= 2 {
            tokens.push(joined);
        }
        tokens.extend(parts);
    }
    TokenStream { tokens }
}

/// Split on lower→upper transitions and at the end of uppercase acronyms
/// ("parseHTTPResponse" → ["parse", "HTTP", "Response"]).
fn split_camel(s: &str) -> Vec<&str> {
    let bytes = s.as_bytes();
    let mut parts = Vec::new();
    let mut start = 0;
    for i in 1..bytes.len() {
        let prev_upper = bytes[i - 1].is_ascii_uppercase();
        let curr_upper = bytes[i].is_ascii_uppercase();
        let curr_lower = bytes[i].is_ascii_lowercase();
        let camel = !prev_upper && curr_upper;
        let acronym = prev_upper && curr_lower && i >= 2 && bytes[i - 2].is_ascii_uppercase();
        if camel {
            parts.push(&s[start..i]);
            start = i;
        } else if acronym {
            if start < i - 1 {
                parts.push(&s[start..i - 1]);
            }
            start = i - 1;
        }
    }
    if start < s.len() {
        parts.push(&s[start..]);
    }
    parts
}

/// Remove `//…`, `/*…*/`, and `#…` comment spans outside string literals.
/// All other bytes, including newlines that terminate line comments, are
/// preserved. An unterminated block comment strips to end of input.
pub fn strip_comments(source: &str) -> String {
    #[derive(PartialEq)]
    enum State {
        Code,
        Line,
        Block,
        Str(u8),
    }
    let bytes = source.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut state = State::Code;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match state {
            State::Code => match b {
                b'/' if bytes.get(i + 1) == Some(&b'/') => {
                    state = State::Line;
                    i += 2;
                }
                b'/' if bytes.get(i + 1) == Some(&b'*') => {
                    state = State::Block;
                    i += 2;
                }
                b'#' => {
                    state = State::Line;
                    i += 1;
                }
                b'"' | b'\'' => {
                    state = State::Str(b);
                    out.push(b);
                    i += 1;
                }
                _ => {
                    out.push(b);
                    i += 1;
                }
            },
            State::Line => {
                if b == b'\n' {
                    out.push(b);
                    state = State::Code;
                }
                i += 1;
            }
            State::Block => {
                if b == b'*' && bytes.get(i + 1) == Some(&b'/') {
                    state = State::Code;
                    i += 2;
                } else {
                    i += 1;
                }
            }
            State::Str(quote) => {
                out.push(b);
                if b == b'\\' {
                    if let Some(&next) = bytes.get(i + 1) {
                        out.push(next);
                        i += 2;
                        continue;
                    }
                } else if b == quote {
                    state = State::Code;
                }
                i += 1;
            }
        }
    }
    // Comment delimiters are ASCII, so spans are removed at character
    // boundaries and the output stays valid UTF-8.
    String::from_utf8(out).expect("comment stripping preserves UTF-8")
}

fn frame_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*at\s+[A-Za-z_$][A-Za-z0-9_$]*(\.[A-Za-z0-9_$<>]+)+\s*\(.*\)").unwrap()
    })
}

/// Heuristic stack-trace detector over summary + description.
///
/// Fires on a `at pkg.Class.method(...)` frame line, on the token
/// "exception" followed by an `at ` line within three lines, or on a
/// Python `Traceback (most recent call last)` header.
pub fn has_stack_trace(report: &BugReport) -> bool {
    let text = report.full_text();
    if text.contains("Traceback (most recent call last)") {
        return true;
    }
    let lines: Vec<&str> = text.lines().collect();
    let mut exception_at: Option<usize> = None;
    for (i, line) in lines.iter().enumerate() {
        if frame_regex().is_match(line) {
            return true;
        }
        if line.to_ascii_lowercase().contains("exception") {
            exception_at = Some(i);
        }
        if let Some(e) = exception_at {
            if i > e && i - e <= 3 && line.trim_start().starts_with("at ") {
                return true;
            }
        }
    }
    false
}

/// Fraction of the report's unique tokens that also occur in the file,
/// with the file comment-stripped first.
pub fn similarity(report: &BugReport, file: &SourceFile) -> Result<f64> {
    let report_tokens = tokenize(&report.full_text());
    let report_unique = report_tokens.unique();
    if report_unique.is_empty() {
        return Err(Error::UndefinedSimilarity {
            report_id: report.id.clone(),
        });
    }
    let file_tokens = tokenize(&strip_comments(&file.content));
    let file_unique = file_tokens.unique();
    let shared = report_unique.intersection(&file_unique).count();
    Ok(shared as f64 / report_unique.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BugReport;
    use proptest::prelude::*;

    fn report(summary: &str, description: &str) -> BugReport {
        BugReport {
            id: "r1".into(),
            summary: summary.into(),
            description: description.into(),
            report_time: 1,
            version_id: "v1".into(),
            fixed_files: vec!["a".into()],
        }
    }

    fn file(content: &str) -> SourceFile {
        SourceFile {
            path: "f".into(),
            content: content.into(),
        }
    }

    #[test]
    fn tokenize_splits_camel_case_and_keeps_identifier() {
        let ts = tokenize("openFileDialog fails");
        assert_eq!(
            ts.tokens(),
            ["openfiledialog", "open", "file", "dialog", "fails"]
        );
    }

    #[test]
    fn tokenize_empty_input() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("  \t\n").is_empty());
    }

    #[test]
    fn tokenize_snake_case_with_digits() {
        // Identifier emitted first (underscores removed), then the parts.
        let ts = tokenize("err_code2 NULL");
        assert_eq!(ts.tokens(), ["errcode2", "err", "code2", "null"]);
    }

    #[test]
    fn tokenize_acronym_boundary() {
        let ts = tokenize("parseHTTPResponse");
        assert_eq!(ts.tokens(), ["parsehttpresponse", "parse", "http", "response"]);
    }

    #[test]
    fn tokenize_drops_short_tokens() {
        let ts = tokenize("a_b x");
        assert_eq!(ts.tokens(), ["ab"]);
    }

    #[test]
    fn strip_line_comment() {
        assert_eq!(strip_comments("int x; // note"), "int x; ");
    }

    #[test]
    fn strip_preserves_string_literals() {
        let src = "s = \"/*not a comment*/\";";
        assert_eq!(strip_comments(src), src);
    }

    #[test]
    fn strip_unterminated_block() {
        assert_eq!(strip_comments("a /* b */ c /* d"), "a  c ");
    }

    #[test]
    fn strip_hash_comment_keeps_newline() {
        assert_eq!(strip_comments("x = 1 # note\ny = 2"), "x = 1 \ny = 2");
    }

    #[test]
    fn strip_escaped_quote_in_string() {
        let src = r#"s = "a\"//b"; // tail"#;
        assert_eq!(strip_comments(src), r#"s = "a\"//b"; "#);
    }

    #[test]
    fn stack_trace_frame_line() {
        let r = report(
            "crash",
            "at org.eclipse.ui.internal.Workbench.run(Workbench.java:214)",
        );
        assert!(has_stack_trace(&r));
    }

    #[test]
    fn stack_trace_absent() {
        assert!(!has_stack_trace(&report("ui", "button is misaligned")));
    }

    #[test]
    fn stack_trace_exception_then_frame() {
        let r = report("crash", "NullPointerException\n at a.b.C.d(C.java:1)");
        assert!(has_stack_trace(&r));
    }

    #[test]
    fn stack_trace_python_traceback() {
        let r = report("boom", "Traceback (most recent call last)\n  ...");
        assert!(has_stack_trace(&r));
    }

    #[test]
    fn similarity_worked_examples() {
        // report tokens {aa,bb,cc,dd}, file tokens {bb,dd,zz} → 2/4
        let r = report("aa bb", "cc dd");
        assert_eq!(similarity(&r, &file("bb dd zz")).unwrap(), 0.5);
        // identical texts → 1.0
        let r = report("alpha beta", "gamma");
        assert_eq!(similarity(&r, &file("alpha beta gamma")).unwrap(), 1.0);
        // disjoint → 0.0
        assert_eq!(similarity(&r, &file("delta epsilon")).unwrap(), 0.0);
    }

    #[test]
    fn similarity_undefined_for_empty_report() {
        let r = report("", "");
        assert!(matches!(
            similarity(&r, &file("alpha")),
            Err(Error::UndefinedSimilarity { .. })
        ));
    }

    proptest! {
        // Re-tokenizing a stream's space-join yields the same multiset.
        #[test]
        fn tokenize_idempotent(text in "[ -~]{0,200}") {
            let first = tokenize(&text);
            let joined = first.tokens().join(" ");
            let second = tokenize(&joined);
            let mut a = first.tokens().to_vec();
            let mut b = second.tokens().to_vec();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn tokenize_charset_and_length(text in "\\PC{0,200}") {
            for tok in tokenize(&text).iter() {
                prop_assert!(tok.len() >= 2);
                prop_assert!(tok.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit()));
            }
        }

        // String literal contents survive comment stripping around them.
        #[test]
        fn strip_comments_keeps_literals(
            lit in "[a-z/*# ]{0,20}",
            pre in "[a-z ;=]{0,10}",
            post in "[a-z ;=]{0,10}",
        ) {
            let src = format!("{pre}/* lead */\"{lit}\"{post}// tail");
            let out = strip_comments(&src);
            let quoted = format!("\"{lit}\"");
            prop_assert!(out.contains(&quoted));
            prop_assert!(!out.contains("lead"));
            prop_assert!(!out.contains("tail"));
        }
    }
}
