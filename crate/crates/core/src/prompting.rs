//! Class-aware prompt construction with re-weighted class tokens.
//!
//! A [`PromptSpec`] is an ordered list of `(text, weight)` segments. Class
//! names get their own segments carrying the class weight (default
//! `1.1² = 1.21`, written `(name)++` in emphasis syntax); everything else has
//! weight 1.0.
//!
//! Segments are joined with a single space, except that no space is inserted
//! before a segment starting with punctuation such as `,` or after one ending
//! in an opening bracket, quote or hyphen. Captions are whitespace-normalised
//! before splitting.

use serde::{Deserialize, Serialize};

pub const DEFAULT_CLASS_WEIGHT: f64 = 1.21;
const EMPHASIS_STEP: f64 = 1.1;
const WEIGHT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSegment {
    pub text: String,
    pub weight: f64,
}

impl PromptSegment {
    pub fn new(text: impl Into<String>, weight: f64) -> Self {
        Self {
            text: text.into(),
            weight,
        }
    }

    pub fn plain(text: impl Into<String>) -> Self {
        Self::new(text, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PromptSpec {
    pub segments: Vec<PromptSegment>,
    #[serde(default)]
    pub negative: Option<String>,
}

impl PromptSpec {
    pub fn new(segments: Vec<PromptSegment>) -> Self {
        Self {
            segments,
            negative: None,
        }
    }

    pub fn with_negative(mut self, negative: Option<String>) -> Self {
        self.negative = negative.filter(|n| !n.trim().is_empty());
        self
    }

    /// Segment texts joined under the spacing rule.
    pub fn plain_text(&self) -> String {
        join_segments(
            self.segments.iter().map(|s| s.text.as_str()),
            self.segments.iter().map(|s| s.text.clone()),
        )
    }

    /// Emphasis-syntax rendering, see [`render_weighted_syntax`].
    pub fn rendered(&self) -> String {
        render_weighted_syntax(self)
    }
}

fn needs_space(prev: &str, next: &str) -> bool {
    let Some(first) = next.chars().next() else {
        return false;
    };
    let Some(last) = prev.chars().last() else {
        return false;
    };
    (first.is_alphanumeric() || first == '(' || first == '[' || first == '"')
        && !matches!(last, '(' | '[' | '{' | '-' | '/' | '\'' | '"')
}

/// Joins `rendered` pieces using spacing decided on the plain `texts`.
fn join_segments<'a>(
    texts: impl Iterator<Item = &'a str>,
    rendered: impl Iterator<Item = String>,
) -> String {
    let mut out = String::new();
    let mut prev: Option<&str> = None;
    for (text, piece) in texts.zip(rendered) {
        if let Some(p) = prev {
            if needs_space(p, text) {
                out.push(' ');
            }
        }
        out.push_str(&piece);
        prev = Some(text);
    }
    out
}

fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// `A photograph of c1, c2, …` with every class segment weighted.
pub fn build_simple_prompt(class_names: &[&str], class_weight: f64) -> PromptSpec {
    if class_names.is_empty() {
        return PromptSpec::new(vec![PromptSegment::plain("A photograph")]);
    }
    let mut segments = vec![PromptSegment::plain("A photograph of")];
    for (i, name) in class_names.iter().enumerate() {
        if i > 0 {
            segments.push(PromptSegment::plain(","));
        }
        segments.push(PromptSegment::new(*name, class_weight));
    }
    PromptSpec::new(segments)
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(char::is_alphanumeric)
}

/// Byte span of the first whole-word, ASCII-case-insensitive match of
/// `needle` in `haystack` that does not intersect any of `taken`.
fn find_whole_word(haystack: &str, needle: &str, taken: &[(usize, usize)]) -> Option<(usize, usize)> {
    let needle = needle.trim();
    if needle.is_empty() {
        return None;
    }
    let hay = haystack.to_ascii_lowercase();
    let pat = needle.to_ascii_lowercase();
    let mut from = 0;
    while let Some(rel) = hay[from..].find(&pat) {
        let start = from + rel;
        let end = start + pat.len();
        let before = haystack[..start].chars().next_back();
        let after = haystack[end..].chars().next();
        let free = taken.iter().all(|&(s, e)| end <= s || start >= e);
        if !is_word_char(before) && !is_word_char(after) && free {
            return Some((start, end));
        }
        from = start + hay[start..].chars().next().map_or(1, char::len_utf8);
    }
    None
}

/// Splits `caption` so the first whole-word occurrence of each class name is
/// its own weighted segment, appending `, name` for classes the caption
/// never mentions. An empty caption falls back to [`build_simple_prompt`].
pub fn build_class_aware_prompt(caption: &str, class_names: &[&str], class_weight: f64) -> PromptSpec {
    let caption = normalize_whitespace(caption);
    if caption.is_empty() {
        return build_simple_prompt(class_names, class_weight);
    }
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut missing: Vec<&str> = Vec::new();
    for name in class_names {
        match find_whole_word(&caption, name, &spans) {
            Some(span) => spans.push(span),
            None => missing.push(name.trim()),
        }
    }
    spans.sort_unstable();

    let mut segments = Vec::new();
    let mut cursor = 0;
    for &(start, end) in &spans {
        let between = caption[cursor..start].trim();
        if !between.is_empty() {
            segments.push(PromptSegment::plain(between));
        }
        segments.push(PromptSegment::new(&caption[start..end], class_weight));
        cursor = end;
    }
    let tail = caption[cursor..].trim();
    if !tail.is_empty() {
        segments.push(PromptSegment::plain(tail));
    }
    for name in missing {
        segments.push(PromptSegment::plain(","));
        segments.push(PromptSegment::new(name, class_weight));
    }
    PromptSpec::new(segments)
}

/// `A photograph of <class>, <caption>`; the caption clause is dropped when
/// absent or blank.
pub fn build_inpaint_prompt(class_name: &str, caption: Option<&str>, class_weight: f64) -> PromptSpec {
    let mut segments = vec![
        PromptSegment::plain("A photograph of"),
        PromptSegment::new(class_name.trim(), class_weight),
    ];
    if let Some(c) = caption.map(normalize_whitespace).filter(|c| !c.is_empty()) {
        segments.push(PromptSegment::plain(","));
        segments.push(PromptSegment::plain(c));
    }
    PromptSpec::new(segments)
}

fn emphasis_count(weight: f64) -> Option<usize> {
    (1..=4).find(|&k| (weight - EMPHASIS_STEP.powi(k as i32)).abs() <= WEIGHT_EPS)
}

fn render_segment(seg: &PromptSegment) -> String {
    if (seg.weight - 1.0).abs() <= WEIGHT_EPS {
        seg.text.clone()
    } else if let Some(k) = emphasis_count(seg.weight) {
        format!("({}){}", seg.text, "+".repeat(k))
    } else {
        format!("({}:{:.2})", seg.text, seg.weight)
    }
}

/// Emphasis syntax where each `+` multiplies a group's weight by 1.1:
/// `(dog)++` for 1.21, `(cat:1.50)` for weights that are not a power of 1.1,
/// bare text for weight 1.0.
pub fn render_weighted_syntax(spec: &PromptSpec) -> String {
    join_segments(
        spec.segments.iter().map(|s| s.text.as_str()),
        spec.segments.iter().map(render_segment),
    )
}

/// Inverse of [`render_weighted_syntax`] for text that contains no literal
/// weight groups. Adjacent unweighted text comes back as one segment.
pub fn parse_weighted_syntax(s: &str) -> Vec<PromptSegment> {
    let mut out = Vec::new();
    let mut literal = String::new();
    let mut rest = s;
    let flush = |literal: &mut String, out: &mut Vec<PromptSegment>| {
        let t = literal.trim();
        if !t.is_empty() {
            out.push(PromptSegment::plain(t));
        }
        literal.clear();
    };
    while let Some(open) = rest.find('(') {
        let Some(close_rel) = rest[open..].find(')') else {
            break;
        };
        let close = open + close_rel;
        let inner = &rest[open + 1..close];
        let after = &rest[close + 1..];
        let pluses = after.chars().take_while(|&c| c == '+').count();
        let explicit = inner
            .rsplit_once(':')
            .and_then(|(t, w)| w.trim().parse::<f64>().ok().map(|w| (t, w)));
        let group = match (explicit, pluses) {
            (Some((text, w)), 0) => Some((text, w, 0)),
            (None, k) if k > 0 => Some((inner, EMPHASIS_STEP.powi(k as i32), k)),
            _ => None,
        };
        match group {
            Some((text, weight, consumed)) => {
                literal.push_str(&rest[..open]);
                flush(&mut literal, &mut out);
                out.push(PromptSegment::new(text, weight));
                rest = &after[consumed..];
            }
            None => {
                literal.push_str(&rest[..=close]);
                rest = after;
            }
        }
    }
    literal.push_str(rest);
    flush(&mut literal, &mut out);
    out
}

/// Whole-word, case-insensitive containment.
pub fn contains_word(text: &str, word: &str) -> bool {
    find_whole_word(text, word, &[]).is_some()
}
