use convsynth::textmetrics::{count_syllables, flesch_reading_ease, segment_sentences, TextStats};
use proptest::prelude::*;

const VOCABULARY: &[&str] = &[
    "river",
    "stone",
    "garden",
    "people",
    "walked",
    "quietly",
    "across",
    "morning",
    "bridge",
    "history",
    "museum",
    "bright",
    "window",
    "children",
    "played",
    "music",
    "island",
    "harbor",
    "beautiful",
    "yesterday",
    "coffee",
    "market",
    "opened",
    "village",
    "painted",
    "yellow",
];

fn sentence() -> impl Strategy<Value = String> {
    (
        prop::collection::vec(prop::sample::select(VOCABULARY), 1..12),
        prop::sample::select(&[".", "!", "?"][..]),
    )
        .prop_map(|(words, end)| {
            let mut s = words.join(" ");
            s[..1].make_ascii_uppercase();
            s.push_str(end);
            s
        })
}

fn passage() -> impl Strategy<Value = String> {
    prop::collection::vec(sentence(), 1..6).prop_map(|v| v.join(" "))
}

fn strip_ws(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

proptest! {
    #[test]
    fn segmentation_preserves_content(text in "\\PC{0,200}") {
        let joined: String = segment_sentences(&text).concat();
        prop_assert_eq!(strip_ws(&joined), strip_ws(&text));
    }

    #[test]
    fn segmentation_preserves_content_of_prose(text in passage()) {
        let joined: String = segment_sentences(&text).concat();
        prop_assert_eq!(strip_ws(&joined), strip_ws(&text));
    }

    #[test]
    fn scoring_is_idempotent(text in "\\PC{0,200}") {
        let a = flesch_reading_ease(&text);
        let b = flesch_reading_ease(&text);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.flesch_score.to_bits(), b.flesch_score.to_bits());
                prop_assert_eq!(a, b);
            }
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn sentence_counts_add_under_concatenation(a in passage(), b in passage()) {
        let joined = format!("{a} {b}");
        prop_assert_eq!(
            segment_sentences(&joined).len(),
            segment_sentences(&a).len() + segment_sentences(&b).len()
        );
    }

    #[test]
    fn count_invariants(text in "\\PC{0,300}") {
        if let Ok(stats) = flesch_reading_ease(&text) {
            prop_assert!(stats.sentence_count > 0);
            prop_assert!(stats.word_count >= stats.sentence_count);
            prop_assert!(stats.syllable_count >= stats.word_count);
            prop_assert!(stats.flesch_score.is_finite());
            prop_assert!(stats.flesch_score <= convsynth::textmetrics::MAX_FLESCH_SCORE + 1e-9);
        }
    }

    #[test]
    fn more_syllables_lower_the_score(
        sentences in 1usize..50,
        words in 1usize..500,
        syllables in 1usize..2000,
    ) {
        let base = TextStats::from_counts(sentences, words, syllables).unwrap();
        let more = TextStats::from_counts(sentences, words, syllables + 1).unwrap();
        prop_assert!(more.flesch_score < base.flesch_score);
        let drop = base.flesch_score - more.flesch_score;
        prop_assert!((drop - 84.6 / words as f64).abs() < 1e-9);
    }

    #[test]
    fn syllables_are_positive_and_case_insensitive(word in "[A-Za-z][A-Za-z'-]{0,15}") {
        let n = count_syllables(&word).unwrap();
        prop_assert!(n >= 1);
        prop_assert_eq!(n, count_syllables(&word.to_uppercase()).unwrap());
        prop_assert_eq!(n, count_syllables(&word.to_lowercase()).unwrap());
    }
}
