use std::collections::HashSet;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::Result;

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords_fr.txt");

fn token_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{L}\p{N}]+").expect("valid token pattern"))
}

/// Text normalization applied before indexing or TF-IDF.
///
/// Tokens are maximal runs of Unicode letters and digits; punctuation never
/// survives. Everything else is configurable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenPipeline {
    pub lowercase: bool,
    pub drop_numbers: bool,
    pub stem: bool,
    pub stopwords: HashSet<String>,
}

impl Default for TokenPipeline {
    fn default() -> Self {
        TokenPipeline {
            lowercase: true,
            drop_numbers: true,
            stem: false,
            stopwords: HashSet::new(),
        }
    }
}

impl TokenPipeline {
    /// Lowercasing, number removal and the bundled French stopword list.
    pub fn french() -> Self {
        TokenPipeline {
            stopwords: parse_stopwords(DEFAULT_STOPWORDS),
            ..Default::default()
        }
    }

    pub fn with_stopword_file(mut self, path: &Path) -> Result<Self> {
        self.stopwords = parse_stopwords(&std::fs::read_to_string(path)?);
        Ok(self)
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        token_pattern()
            .find_iter(text)
            .filter_map(|m| {
                let raw = m.as_str();
                if self.drop_numbers && raw.chars().all(|c| c.is_numeric()) {
                    return None;
                }
                let tok = if self.lowercase {
                    raw.to_lowercase()
                } else {
                    raw.to_string()
                };
                if self.stopwords.contains(&tok) {
                    return None;
                }
                Some(if self.stem { light_stem(&tok) } else { tok })
            })
            .collect()
    }
}

pub fn tokenize(text: &str, pipeline: &TokenPipeline) -> Vec<String> {
    pipeline.tokenize(text)
}

fn parse_stopwords(src: &str) -> HashSet<String> {
    src.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

/// Strips a few common French inflectional endings. Words of five characters
/// or fewer are left alone.
pub fn light_stem(word: &str) -> String {
    const SUFFIXES: [&str; 9] = ["ements", "ement", "ations", "ation", "euses", "euse", "es", "s", "x"];
    let n = word.chars().count();
    if n <= 5 {
        return word.to_string();
    }
    for suf in SUFFIXES {
        let sn = suf.chars().count();
        if word.ends_with(suf) && n - sn >= 4 {
            return word[..word.len() - suf.len()].to_string();
        }
    }
    word.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn french_example_sentence() {
        let p = TokenPipeline::french();
        assert_eq!(
            p.tokenize("Le mur mitoyen, 2 mètres."),
            ["mur", "mitoyen", "mètres"]
        );
    }

    #[test]
    fn empty_text() {
        assert!(TokenPipeline::french().tokenize("").is_empty());
    }

    #[test]
    fn case_folding() {
        let p = TokenPipeline::default();
        assert_eq!(p.tokenize("AAA aaa"), ["aaa", "aaa"]);
        let keep = TokenPipeline {
            lowercase: false,
            ..Default::default()
        };
        assert_eq!(keep.tokenize("AAA aaa"), ["AAA", "aaa"]);
    }

    #[test]
    fn numbers_kept_when_configured() {
        let p = TokenPipeline {
            drop_numbers: false,
            ..Default::default()
        };
        assert_eq!(p.tokenize("article 544bis, 12"), ["article", "544bis", "12"]);
        assert_eq!(TokenPipeline::default().tokenize("article 544bis, 12"), ["article", "544bis"]);
    }

    #[test]
    fn stemming_is_light() {
        assert_eq!(light_stem("propriétaires"), "propriétair");
        assert_eq!(light_stem("murs"), "murs");
        assert_eq!(light_stem("conditions"), "condition");
        assert_eq!(light_stem("mitoyennement"), "mitoyenn");
    }

    #[test]
    fn stopword_file_overrides_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sw.txt");
        std::fs::write(&path, "# comment\nmur\n").unwrap();
        let p = TokenPipeline::french().with_stopword_file(&path).unwrap();
        assert_eq!(p.tokenize("le mur"), ["le"]);
    }
}
