//! Review-text normalization: seven ordered steps, each reporting how many
//! edits it made.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};

const DEFAULT_DICT: &str = include_str!("../data/vi_dict.tsv");

/// Unaccented Vietnamese function words, chosen to avoid English spellings.
const STOPWORDS: &[&str] = &[
    "khong", "ko", "la", "va", "cua", "nhung", "duoc", "dc", "mot", "nay", "thi", "voi", "roi", "minh", "toi",
    "rat", "cung", "nhe", "qua", "lam", "nhieu", "nen", "vay", "chua", "hay", "giao", "nhanh", "tot", "dep",
    "san", "pham", "mua", "nhu", "ma", "cho", "khi", "se", "da", "dung", "gia",
];

const VIETNAMESE_LETTERS: &str =
    "àáảãạăằắẳẵặâầấẩẫậèéẻẽẹêềếểễệìíỉĩịòóỏõọôồốổỗộơờớởỡợùúủũụưừứửữựỳýỷỹỵđ";

fn word_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{L}\p{M}\p{N}]+").unwrap())
}

fn punct_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{P}\p{S}]").unwrap())
}

fn foreign_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{Han}\p{Hiragana}\p{Katakana}\p{Hangul}]").unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Step {
    Lowercase = 1,
    Elongation = 2,
    Urls = 3,
    Translate = 4,
    Punctuation = 5,
    LanguageFilter = 6,
    Acronyms = 7,
}

impl Step {
    pub const ALL: [Step; 7] = [
        Step::Lowercase,
        Step::Elongation,
        Step::Urls,
        Step::Translate,
        Step::Punctuation,
        Step::LanguageFilter,
        Step::Acronyms,
    ];

    pub fn number(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Step::Lowercase => "lowercase",
            Step::Elongation => "elongation",
            Step::Urls => "urls",
            Step::Translate => "translate",
            Step::Punctuation => "punctuation",
            Step::LanguageFilter => "language_filter",
            Step::Acronyms => "acronyms",
        }
    }

    /// Accepts either the step number or its name.
    pub fn parse(s: &str) -> Option<Step> {
        Step::ALL
            .into_iter()
            .find(|step| step.name() == s || step.number().to_string() == s)
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Lowercase whole-word substitutions.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dictionary {
    map: HashMap<String, String>,
}

impl Dictionary {
    pub fn new(map: HashMap<String, String>) -> Result<Self> {
        for (k, v) in &map {
            let whole_word = word_re().find(k).is_some_and(|m| m.as_str() == k);
            if !whole_word || k.to_lowercase() != *k {
                return Err(Error::InvalidArgument(format!("dictionary key {k:?} must be a single lowercase word")));
            }
            if v.trim().is_empty() {
                return Err(Error::InvalidArgument(format!("dictionary key {k:?} has an empty replacement")));
            }
        }
        Ok(Dictionary { map })
    }

    pub fn get(&self, word: &str) -> Option<&str> {
        self.map.get(word).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn sorted_entries(&self) -> Vec<(&str, &str)> {
        let mut v: Vec<_> = self.map.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        v.sort_unstable();
        v
    }
}

/// Parses `source<TAB>replacement` lines; `#` starts a comment line.
pub fn parse_dictionary(text: &str, path: &Path) -> Result<Dictionary> {
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `source<TAB>replacement`"))?;
        let single = Dictionary::new(HashMap::from([(k.to_string(), v.to_string())]));
        single.map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        map.insert(k.to_string(), v.to_string());
    }
    Dictionary::new(map)
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<Dictionary> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dictionary(&text, path)
}

pub fn default_dictionary() -> Dictionary {
    parse_dictionary(DEFAULT_DICT, Path::new("vi_dict.tsv")).expect("shipped dictionary is valid")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreprocessConfig {
    pub dictionary: Dictionary,
    pub steps: BTreeSet<Step>,
    pub elongation_threshold: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            dictionary: default_dictionary(),
            steps: Step::ALL.into_iter().collect(),
            elongation_threshold: 3,
        }
    }
}

impl PreprocessConfig {
    pub fn only(steps: &[Step]) -> Self {
        PreprocessConfig {
            steps: steps.iter().copied().collect(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.elongation_threshold < 2 {
            return Err(Error::InvalidArgument(format!(
                "elongation threshold must be at least 2, got {}",
                self.elongation_threshold
            )));
        }
        Ok(())
    }
}

/// Output of a single text-to-text step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edit {
    pub text: String,
    pub changes: usize,
}

impl Edit {
    fn unchanged(text: &str) -> Self {
        Edit {
            text: text.to_string(),
            changes: 0,
        }
    }
}

fn normalize_spaces(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Per-character lowercasing; a character whose lowercase form expands to
/// several characters keeps only the first so length never grows.
pub fn lowercase(text: &str) -> Edit {
    let mut changes = 0;
    let out = text
        .chars()
        .map(|c| {
            let l = c.to_lowercase().next().unwrap_or(c);
            if l != c {
                changes += 1;
            }
            l
        })
        .collect();
    Edit { text: out, changes }
}

/// Byte offset where a URL starts inside `token`: at the start or right
/// after a non-alphanumeric character.
fn url_start(token: &str) -> Option<usize> {
    let mut prev_alnum = false;
    for (i, c) in token.char_indices() {
        if !prev_alnum {
            let rest = &token.as_bytes()[i..];
            let starts = |p: &str| rest.len() >= p.len() && rest[..p.len()].eq_ignore_ascii_case(p.as_bytes());
            if starts("http://") || starts("https://") || starts("www.") {
                return Some(i);
            }
        }
        prev_alnum = c.is_alphanumeric();
    }
    None
}

/// Collapses runs of at least `threshold` identical letters to one letter.
/// Tokens holding a URL are left alone.
pub fn collapse_elongations(text: &str, threshold: usize) -> Result<Edit> {
    if threshold < 2 {
        return Err(Error::InvalidArgument(format!("elongation threshold must be at least 2, got {threshold}")));
    }
    let mut changes = 0;
    let mut out = String::with_capacity(text.len());
    let mut token_start = true;
    let mut in_url = false;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c.is_whitespace() {
            token_start = true;
            out.push(c);
            continue;
        }
        if token_start {
            let end = text[i..].find(char::is_whitespace).map_or(text.len(), |e| i + e);
            in_url = url_start(&text[i..end]).is_some();
            token_start = false;
        }
        let mut run = 1;
        while chars.peek().is_some_and(|&(_, n)| n == c) {
            chars.next();
            run += 1;
        }
        if c.is_alphabetic() && run >= threshold && !in_url {
            out.push(c);
            changes += 1;
        } else {
            out.extend(std::iter::repeat_n(c, run));
        }
    }
    Ok(Edit { text: out, changes })
}

/// Removes each URL up to the end of its whitespace-delimited token.
pub fn strip_urls(text: &str) -> Edit {
    let mut changes = 0;
    let kept: Vec<&str> = text
        .split_whitespace()
        .filter_map(|tok| match url_start(tok) {
            Some(at) => {
                changes += 1;
                Some(&tok[..at]).filter(|s| !s.is_empty())
            }
            None => Some(tok),
        })
        .collect();
    if changes == 0 {
        return Edit::unchanged(text);
    }
    Edit {
        text: kept.join(" "),
        changes,
    }
}

/// Replaces whole words found in `dict`; punctuation around a word stays.
pub fn apply_dictionary(text: &str, dict: &Dictionary) -> Edit {
    let mut changes = 0;
    let out = word_re().replace_all(text, |caps: &regex::Captures<'_>| {
        let w = &caps[0];
        match dict.get(w) {
            Some(r) => {
                changes += 1;
                r.to_string()
            }
            None => w.to_string(),
        }
    });
    Edit {
        text: out.into_owned(),
        changes,
    }
}

/// Removes Unicode punctuation and symbols, then collapses whitespace.
pub fn strip_punct(text: &str) -> Edit {
    let changes = punct_re().find_iter(text).count();
    if changes == 0 {
        return Edit::unchanged(text);
    }
    Edit {
        text: normalize_spaces(&punct_re().replace_all(text, " ")),
        changes,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    ForeignScript,
    NotVietnamese,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::ForeignScript => "foreign script",
            DropReason::NotVietnamese => "no Vietnamese diacritics or stopwords",
        })
    }
}

fn is_vietnamese_mark(c: char) -> bool {
    let l = c.to_lowercase().next().unwrap_or(c);
    VIETNAMESE_LETTERS.contains(l) || ('\u{0300}'..='\u{036F}').contains(&c)
}

/// Share of words that are unaccented Vietnamese stopwords; `None` when the
/// text holds no words.
pub fn stopword_rate(text: &str) -> Option<f64> {
    let words: Vec<String> = word_re().find_iter(text).map(|m| m.as_str().to_lowercase()).collect();
    if words.is_empty() {
        return None;
    }
    let hits = words.iter().filter(|w| STOPWORDS.contains(&w.as_str())).count();
    Some(hits as f64 / words.len() as f64)
}

/// `None` keeps the text.
pub fn foreign_script_filter(text: &str) -> Option<DropReason> {
    if foreign_re().is_match(text) {
        return Some(DropReason::ForeignScript);
    }
    if text.chars().any(is_vietnamese_mark) {
        return None;
    }
    match stopword_rate(text) {
        Some(rate) if rate < 0.05 => Some(DropReason::NotVietnamese),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepReport {
    pub step: Step,
    pub input: String,
    pub output: String,
    pub changes: usize,
    pub drop: Option<DropReason>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineOutput {
    /// `None` when the language filter dropped the text.
    pub text: Option<String>,
    pub drop: Option<DropReason>,
    pub reports: Vec<StepReport>,
}

pub fn run_pipeline(text: &str, config: &PreprocessConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let mut current = text.to_string();
    let mut reports = Vec::new();
    for &step in &config.steps {
        let edit = match step {
            Step::Lowercase => lowercase(&current),
            Step::Elongation => collapse_elongations(&current, config.elongation_threshold)?,
            Step::Urls => strip_urls(&current),
            Step::Translate | Step::Acronyms => apply_dictionary(&current, &config.dictionary),
            Step::Punctuation => strip_punct(&current),
            Step::LanguageFilter => {
                if let Some(reason) = foreign_script_filter(&current) {
                    reports.push(StepReport {
                        step,
                        input: current,
                        output: String::new(),
                        changes: 1,
                        drop: Some(reason),
                    });
                    return Ok(PipelineOutput {
                        text: None,
                        drop: Some(reason),
                        reports,
                    });
                }
                Edit::unchanged(&current)
            }
        };
        reports.push(StepReport {
            step,
            input: std::mem::take(&mut current),
            output: edit.text.clone(),
            changes: edit.changes,
            drop: None,
        });
        current = edit.text;
    }
    Ok(PipelineOutput {
        text: Some(current),
        drop: None,
        reports,
    })
}
