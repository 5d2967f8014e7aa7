//! Sentence, word and syllable statistics and the Flesch reading-ease score.
//!
//! Reading ease is `206.835 - 1.015 * (words / sentences) - 84.6 * (syllables / words)`.
//! Scores are never clamped: very short, simple text can score above 100 and dense
//! text can go negative.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Responses at or above this score count as conversational.
pub const CONVERSATIONAL_THRESHOLD: f64 = 60.0;

/// Upper bound of the score, reached by one one-syllable word in one sentence.
pub const MAX_FLESCH_SCORE: f64 = 206.835 - 1.015 - 84.6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TextError {
    #[error("token {0:?} has no alphabetic characters")]
    NoLetters(String),
    #[error("unscorable text: {sentences} sentence(s), {words} word(s)")]
    Unscorable { sentences: usize, words: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextStats {
    pub sentence_count: usize,
    pub word_count: usize,
    pub syllable_count: usize,
    pub flesch_score: f64,
}

impl TextStats {
    /// Builds stats from raw counts. Fails when there are no sentences or no words.
    pub fn from_counts(
        sentence_count: usize,
        word_count: usize,
        syllable_count: usize,
    ) -> Result<Self, TextError> {
        if sentence_count == 0 || word_count == 0 {
            return Err(TextError::Unscorable {
                sentences: sentence_count,
                words: word_count,
            });
        }
        Ok(Self {
            sentence_count,
            word_count,
            syllable_count,
            flesch_score: reading_ease(sentence_count, word_count, syllable_count),
        })
    }

    pub fn words_per_sentence(&self) -> f64 {
        self.word_count as f64 / self.sentence_count as f64
    }

    pub fn syllables_per_word(&self) -> f64 {
        self.syllable_count as f64 / self.word_count as f64
    }
}

fn reading_ease(sentences: usize, words: usize, syllables: usize) -> f64 {
    206.835 - 1.015 * (words as f64 / sentences as f64) - 84.6 * (syllables as f64 / words as f64)
}

/// Scores a passage.
pub fn flesch_reading_ease(text: &str) -> Result<TextStats, TextError> {
    let sentence_count = segment_sentences(text)
        .into_iter()
        .filter(|s| words(s).next().is_some())
        .count();
    let mut word_count = 0;
    let mut syllable_count = 0;
    for word in words(text) {
        word_count += 1;
        syllable_count += token_syllables(word);
    }
    TextStats::from_counts(sentence_count, word_count, syllable_count)
}

/// The one comparison behind every readability gate: reaching the threshold passes.
pub fn meets_threshold(score: f64, threshold: f64) -> bool {
    score >= threshold
}

pub fn is_conversational(stats: &TextStats, threshold: f64) -> bool {
    meets_threshold(stats.flesch_score, threshold)
}

// ---------------------------------------------------------------------------
// Sentences
// ---------------------------------------------------------------------------

/// Titles that precede a name and never end a sentence.
const TITLE_ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "rev", "gen", "col", "lt", "sgt", "capt", "cmdr", "adm",
    "gov", "sen", "rep", "hon", "pres", "st", "mt", "ft", "messrs", "mme", "mlle",
];

/// Abbreviations that close a name or a list ("Jr.", "Inc.", "etc."). They sit at the
/// end of a phrase so often that a following space is always treated as a boundary.
const CLOSING_ABBREVIATIONS: &[&str] = &["jr", "sr", "inc", "ltd", "co", "corp", "bros", "etc"];

/// Abbreviations that end a sentence only when the next word is capitalised.
const OTHER_ABBREVIATIONS: &[&str] = &[
    "vs", "approx", "no", "nos", "vol", "vols", "fig", "figs", "dept", "est", "al", "ca", "cf",
    "ed", "eds", "pp", "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct",
    "nov", "dec", "ave", "blvd", "rd",
];

/// Function words that commonly open a sentence. A single capital letter followed by
/// one of these is a numeral or pronoun ending the sentence ("Mark I. The"), not an
/// initial.
const SENTENCE_STARTERS: &[&str] = &[
    "a", "an", "the", "it", "its", "he", "she", "they", "we", "you", "i", "this", "that", "these",
    "those", "there", "his", "her", "their", "in", "on", "at", "after", "before", "when", "while",
    "but", "and", "so", "then", "however", "during", "since", "because", "if", "as", "for", "many",
    "most", "some", "today", "later", "one",
];

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '…')
}

fn is_closing(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '}' | '»' | '”' | '’')
}

/// Splits text into sentences.
///
/// A sentence ends at a run of `.`, `!` or `?` (plus any closing quotes or brackets)
/// followed by whitespace or the end of the text. A lone `.` after a known
/// abbreviation, a single-letter initial or a dotted acronym is not a boundary
/// unless the abbreviation can close a sentence and the next word is capitalised.
/// Decimal points are never followed by whitespace, so they never split.
///
/// Returned slices are trimmed; trailing text without terminal punctuation is
/// returned as a final sentence.
pub fn segment_sentences(text: &str) -> Vec<&str> {
    let mut sentences = Vec::new();
    let mut start: Option<usize> = None;
    let mut iter = text.char_indices().peekable();

    while let Some((i, c)) = iter.next() {
        if start.is_none() {
            if c.is_whitespace() {
                continue;
            }
            start = Some(i);
        }
        if !is_terminal(c) {
            continue;
        }
        let run_start = i;
        let mut end = i + c.len_utf8();
        while let Some(&(j, d)) = iter.peek() {
            if is_terminal(d) || is_closing(d) {
                end = j + d.len_utf8();
                iter.next();
            } else {
                break;
            }
        }
        let at_end = end == text.len();
        let followed_by_space = text[end..].chars().next().is_some_and(char::is_whitespace);
        if !(at_end || followed_by_space) {
            continue;
        }
        // Only a single period is subject to abbreviation guards; "..." is not.
        let single_period = text[run_start..end].trim_end_matches(is_closing) == ".";
        if single_period && !at_end {
            let sentence_start = start.unwrap_or(0);
            let token = preceding_token(&text[sentence_start..run_start]);
            let next_word = text[end..].trim_start();
            if !abbreviation_allows_break(token, next_word) {
                continue;
            }
        }
        let s = start.take().unwrap_or(0);
        sentences.push(text[s..end].trim());
    }
    if let Some(s) = start {
        let rest = text[s..].trim();
        if !rest.is_empty() {
            sentences.push(rest);
        }
    }
    sentences
}

fn preceding_token(before_period: &str) -> &str {
    let token = before_period
        .rsplit(char::is_whitespace)
        .next()
        .unwrap_or("");
    token.trim_start_matches(|c: char| !c.is_alphanumeric())
}

fn abbreviation_allows_break(token: &str, next_word: &str) -> bool {
    if token.is_empty() {
        return true;
    }
    let next_word = next_word.split_whitespace().next().unwrap_or("");
    let next_capitalised = next_word
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .next()
        .is_some_and(|c| c.is_uppercase() || c.is_numeric());
    let lower = token.to_lowercase();
    let next_lower = next_word
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();

    // Single-letter initial, e.g. "Claiborne H. Kinnard".
    let mut chars = token.chars();
    if let (Some(first), None) = (chars.next(), chars.next()) {
        if first.is_alphabetic() {
            return first == 'I' || SENTENCE_STARTERS.contains(&next_lower.as_str());
        }
    }
    // Dotted acronym such as "U.S" or "e.g" (the final period is the terminal).
    if token.contains('.')
        && token
            .split('.')
            .all(|part| part.chars().count() <= 2 && part.chars().all(char::is_alphabetic))
    {
        return next_capitalised;
    }
    if TITLE_ABBREVIATIONS.contains(&lower.as_str()) {
        return false;
    }
    if CLOSING_ABBREVIATIONS.contains(&lower.as_str()) {
        return true;
    }
    if OTHER_ABBREVIATIONS.contains(&lower.as_str()) {
        return next_capitalised;
    }
    true
}

// ---------------------------------------------------------------------------
// Words
// ---------------------------------------------------------------------------

/// Whitespace-separated tokens with leading and trailing punctuation removed.
/// Internal apostrophes, hyphens and slashes stay inside the word. Tokens made only
/// of punctuation are dropped.
pub fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
}

// ---------------------------------------------------------------------------
// Syllables
// ---------------------------------------------------------------------------

/// Syllables in one word. Case-insensitive; surrounding punctuation is ignored.
/// Hyphenated and slashed compounds are counted part by part.
pub fn count_syllables(word: &str) -> Result<usize, TextError> {
    if !word.chars().any(char::is_alphabetic) {
        return Err(TextError::NoLetters(word.to_string()));
    }
    Ok(token_syllables(word))
}

/// Like [`count_syllables`] but total: tokens without vowels (numbers, symbols,
/// non-Latin script) count as one syllable.
fn token_syllables(token: &str) -> usize {
    let total: usize = token
        .split(['-', '/', '–', '—'])
        .map(|part| {
            let letters = fold_letters(part);
            if letters.is_empty() {
                0
            } else {
                heuristic_syllables(&letters)
            }
        })
        .sum();
    total.max(1)
}

/// Lowercase ASCII letters of `part`, with common accented vowels folded to their
/// base letter. Other scripts are kept as opaque consonants.
fn fold_letters(part: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(part.len());
    for c in part.chars().flat_map(char::to_lowercase) {
        let folded = match c {
            'a'..='z' => c,
            'à' | 'á' | 'â' | 'ã' | 'ä' | 'å' | 'ā' => 'a',
            'è' | 'é' | 'ê' | 'ë' | 'ē' => 'e',
            'ì' | 'í' | 'î' | 'ï' | 'ī' => 'i',
            'ò' | 'ó' | 'ô' | 'õ' | 'ö' | 'ø' | 'ō' => 'o',
            'ù' | 'ú' | 'û' | 'ü' | 'ū' => 'u',
            'ý' | 'ÿ' => 'y',
            'ç' => 'c',
            'ñ' => 'n',
            // Letters outside the Latin script cannot be analysed; each run of them
            // reads as a single vowel group.
            c if c.is_alphabetic() => 'a',
            _ => continue,
        };
        out.push(folded as u8);
    }
    out
}

/// Words whose pronunciation defeats the vowel-group rules. A trailing plural `s`
/// is stripped before lookup when the plural itself is not listed.
const SYLLABLE_EXCEPTIONS: &[(&str, usize)] = &[
    ("admire", 2),
    ("anyone", 3),
    ("area", 3),
    ("being", 2),
    ("business", 2),
    ("businessman", 3),
    ("businesses", 3),
    ("catholic", 2),
    ("chocolate", 2),
    ("client", 2),
    ("create", 2),
    ("created", 3),
    ("creating", 3),
    ("diet", 2),
    ("every", 3),
    ("everyone", 3),
    ("everything", 3),
    ("eye", 1),
    ("forever", 3),
    ("hour", 2),
    ("idea", 3),
    ("iron", 2),
    ("lion", 2),
    ("our", 2),
    ("people", 2),
    ("piano", 3),
    ("poem", 2),
    ("poet", 2),
    ("quiet", 2),
    ("react", 2),
    ("real", 1),
    ("really", 2),
    ("recipe", 3),
    ("reality", 4),
    ("several", 2),
    ("giant", 2),
    ("st", 1),
    ("society", 4),
    ("theater", 3),
    ("theory", 2),
    ("variety", 4),
    ("whereas", 2),
];

/// Common words ending in a silent `e` that open compounds ("lifetime",
/// "notebook", "spacecraft").
const SILENT_E_HEADS: &[&str] = &[
    "base", "case", "fire", "game", "home", "house", "ice", "life", "love", "make", "name", "nine",
    "note", "safe", "side", "some", "space", "state", "stone", "time", "use", "where", "there",
    "here", "whole", "wide", "wise", "like", "more", "care", "hope", "pipe",
];

fn exception(letters: &[u8]) -> Option<usize> {
    let word = std::str::from_utf8(letters).ok()?;
    let lookup = |w: &str| {
        SYLLABLE_EXCEPTIONS
            .iter()
            .find(|(e, _)| *e == w)
            .map(|&(_, n)| n)
    };
    lookup(word).or_else(|| {
        let stem = word.strip_suffix('s')?;
        let extra = ["ce", "se", "ge", "ze"].iter().any(|e| stem.ends_with(e));
        lookup(stem).map(|n| n + usize::from(extra))
    })
}

fn is_vowel_letter(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u' | b'y')
}

fn is_plain_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

/// Vowel-group syllable estimate over lowercase letters.
fn heuristic_syllables(w: &[u8]) -> usize {
    if let Some(n) = exception(w) {
        return n;
    }
    // Initialisms without vowels are spelled out: "bc", "gps", "tv".
    if !w.iter().copied().any(is_vowel_letter) {
        let spelled: usize = w
            .iter()
            .map(|&c| match c {
                b'w' => 3,
                b'a'..=b'z' => 1,
                _ => 0,
            })
            .sum();
        return spelled.max(1);
    }
    for head in SILENT_E_HEADS {
        let head = head.as_bytes();
        if w.len() > head.len() + 2 && w.starts_with(head) && !is_vowel_letter(w[head.len()]) {
            let rest = &w[head.len()..];
            let rest_count = if rest.iter().copied().any(is_vowel_letter) {
                heuristic_syllables(rest)
            } else {
                0
            };
            return heuristic_syllables(head) + rest_count;
        }
    }

    let n = w.len();
    let vowel: Vec<bool> = (0..n).map(|i| acts_as_vowel(w, i)).collect();

    let mut count = 0usize;
    let mut i = 0;
    while i < n {
        if vowel[i] {
            count += 1;
            let mut j = i + 1;
            while j < n && vowel[j] {
                if splits_hiatus(w, j) {
                    count += 1;
                }
                j += 1;
            }
            i = j;
        } else {
            i += 1;
        }
    }
    if count == 0 {
        return 1;
    }

    let ends = |s: &[u8]| w.ends_with(s);
    let cons = |k: usize| !vowel[k];

    // Silent final -e, but keep consonant + "le" ("table", not "ville").
    if n >= 3 && w[n - 1] == b'e' && cons(n - 2) && count > 1 {
        let consonant_le = w[n - 2] == b'l' && cons(n - 3) && w[n - 3] != b'l';
        if !consonant_le {
            count -= 1;
        }
    }
    // Silent e in "-es" / "-ed" after a consonant ("makes", "passed"), except where the
    // ending is pronounced ("closes", "decided", "tables", "hundred").
    if n >= 4 && (ends(b"es") || ends(b"ed")) && cons(n - 3) && count > 1 {
        let before = w[n - 3];
        let pronounced = if ends(b"es") {
            matches!(before, b's' | b'x' | b'z' | b'c' | b'g')
                || (before == b'h' && matches!(w[n - 4], b'c' | b's'))
        } else {
            matches!(before, b't' | b'd') || (before == b'r' && cons(n - 4))
        };
        let consonant_le =
            before == b'l' && n >= 5 && cons(n - 4) && !matches!(w[n - 4], b'l' | b'r');
        if !pronounced && !consonant_le {
            count -= 1;
        }
    }
    // Silent e before a suffix: "lately", "movement", "carefully", "largely".
    let mut stem = w;
    for suffix in [
        &b"fully"[..],
        b"ments",
        b"ment",
        b"less",
        b"ness",
        b"ful",
        b"ly",
        b"ty",
    ] {
        if n >= suffix.len() + 4 && ends(suffix) {
            stem = &w[..n - suffix.len()];
            let e = n - suffix.len() - 1;
            let soft = matches!(w[e - 1], b'c' | b'g');
            if w[e] == b'e' && cons(e - 1) && (vowel[e - 2] || soft) && count > 1 {
                count -= 1;
            }
            break;
        }
    }
    // "-ically" is said "-ik-lee": "basically", "automatically".
    if n >= 8 && ends(b"ically") {
        count -= 1;
    }
    // Endings whose extra syllable the vowel groups miss.
    if ends(b"ism") || ends(b"isms") || ends(b"thm") || ends(b"thms") {
        count += 1;
    }
    let ier = if ends(b"ier") {
        Some(n.checked_sub(4))
    } else if ends(b"iers") || ends(b"iest") {
        Some(n.checked_sub(5))
    } else {
        None
    };
    if let Some(Some(k)) = ier {
        // "drier", "happiest" but not "soldier", "frontier", "glacier", "cashier".
        if n >= 5 && cons(k) && !matches!(w[k], b'c' | b'd' | b't' | b'h') {
            count += 1;
        }
    }
    if ["ire", "ires", "ired"]
        .iter()
        .any(|e| stem.ends_with(e.as_bytes()))
    {
        count += 1;
    }
    // "cycling", "rippling": consonant + "ling" after a vowel.
    if n >= 6 && ends(b"ling") && cons(n - 5) && !matches!(w[n - 5], b'l' | b'r') && vowel[n - 6] {
        count += 1;
    }
    count.max(1)
}

fn acts_as_vowel(w: &[u8], i: usize) -> bool {
    let n = w.len();
    match w[i] {
        b'y' => {
            // Consonant at the start and before another vowel ("beyond"), except in
            // "-ying" after a consonant ("flying").
            if i == 0 {
                return false;
            }
            if i + 1 < n && is_plain_vowel(w[i + 1]) {
                return &w[i..] == b"ying" && !is_vowel_letter(w[i - 1]);
            }
            true
        }
        b'u' => {
            // "qu" and "gu" + vowel behave as consonant clusters.
            let after_q = i > 0 && w[i - 1] == b'q';
            let after_g = i > 0 && w[i - 1] == b'g' && i + 1 < n && is_vowel_letter(w[i + 1]);
            !(after_q || after_g)
        }
        c => is_plain_vowel(c),
    }
}

/// True when the vowel at `j` starts a new syllable although it follows another
/// vowel ("ra-di-o", "me-di-a", "ac-tu-al", "go-ing").
fn splits_hiatus(w: &[u8], j: usize) -> bool {
    let prev = w[j - 1];
    let cur = w[j];
    let before = if j >= 2 { w[j - 2] } else { 0 };
    let after = &w[j + 1..];
    match (prev, cur) {
        (b'i', b'a') | (b'i', b'o') => {
            // Word-final "io" always splits ("radio", "ratio"). Otherwise "-tion", "-sion",
            // "-cial", "-gion", "-llion", "-lian", "-vior", "-nior" and a final consonant + "-nia"
            // stay together.
            if cur == b'o' && after.is_empty() {
                return true;
            }
            let double_l = before == b'l' && j >= 3 && w[j - 3] == b'l';
            !matches!(before, b't' | b's' | b'c' | b'g' | b'x')
                && !double_l
                && !(before == b'l' && after == b"n")
                && !(cur == b'a'
                    && after.is_empty()
                    && before == b'n'
                    && j >= 3
                    && !is_vowel_letter(w[j - 3]))
                && !(cur == b'o' && after.first() == Some(&b'r') && matches!(before, b'v' | b'n'))
        }
        (b'i', b'u') => true,
        (b'i', b'e') => after.starts_with(b"th") || w[..j].ends_with(b"sci"),
        (b'e', b'o') => before != b'c' && !(before == b'g' && after.starts_with(b"r")),
        (b'e', b'u') => after.first() == Some(&b'm'),
        // "european", "korean" but not "clean" or "ocean".
        (b'e', b'a') => {
            after == b"n"
                && !matches!(before, b'c' | b'g')
                && j >= 3
                && !is_vowel_letter(before)
                && is_vowel_letter(w[j - 3])
        }
        (b'u', b'a') | (b'u', b'o') => true,
        (b'o', b'a') => before == b'i',
        (b'u', b'e') => matches!(after.first(), Some(b'n' | b'l')),
        (b'u', b'i') => matches!(after.first(), Some(b'n' | b'd')),
        (_, b'i') => after.starts_with(b"ng"),
        _ => {
            // Prefix "re" before another vowel: "reuse", "reopen".
            j == 2 && w.starts_with(b"re") && matches!(cur, b'o' | b'u')
        }
    }
}
