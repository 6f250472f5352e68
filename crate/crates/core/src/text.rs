//! Answer normalization shared by preference mining and evaluation.
//!
//! Normalization lowercases, strips ASCII punctuation, drops the articles
//! "a", "an" and "the" and collapses whitespace.

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Normalized tokens of `s`.
pub fn normalized_tokens(s: &str) -> Vec<String> {
    let cleaned: String = s.chars().flat_map(char::to_lowercase).filter(|c| !c.is_ascii_punctuation()).collect();
    cleaned.split_whitespace().filter(|t| !ARTICLES.contains(t)).map(str::to_string).collect()
}

pub fn normalize_answer(s: &str) -> String {
    normalized_tokens(s).join(" ")
}

/// True iff some non-empty normalized gold answer occurs inside the normalized reply.
pub fn judge_answer(reply: &str, gold_answers: &[String]) -> bool {
    let reply = normalize_answer(reply);
    gold_answers.iter().any(|g| {
        let g = normalize_answer(g);
        !g.is_empty() && reply.contains(&g)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn golds(g: &[&str]) -> Vec<String> {
        g.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn containment_cases() {
        assert!(judge_answer("It was filmed in Vancouver.", &golds(&["Vancouver"])));
        assert!(!judge_answer("New Westminster", &golds(&["Vancouver"])));
        assert!(judge_answer("THE   CAT", &golds(&["cat"])));
        assert!(judge_answer("x", &golds(&["nope", "X!"])));
    }

    #[test]
    fn normalization_by_hand() {
        assert_eq!(normalize_answer("THE   CAT"), "cat");
        assert_eq!(normalize_answer("  An apple, a Pear; the end. "), "apple pear end");
        assert_eq!(normalize_answer("Théâtre"), "théâtre");
    }

    #[test]
    fn empty_gold_never_matches() {
        assert!(!judge_answer("anything", &golds(&["the", "..."])));
    }

    proptest! {
        #[test]
        fn appending_never_falsifies(reply in "[A-Za-z ,.]{0,30}", gold in "[A-Za-z]{1,8}", tail in "[A-Za-z .!]{0,20}") {
            let gs = vec![gold.clone()];
            let base = format!("{reply} {gold}");
            prop_assume!(judge_answer(&base, &gs));
            let appended = format!("{base}{tail}");
            prop_assert!(judge_answer(&appended, &gs));
        }
    }
}
