//! Word-to-phoneme lexicon: plain text "WORD PH1 PH2 ...", ';' comments.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{CorpusError, Result};

#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
    /// Later entries for an already-seen word, ignored on parse.
    pub duplicate_count: usize,
}

impl Lexicon {
    pub fn from_entries<I, W, P>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (W, Vec<P>)>,
        W: Into<String>,
        P: Into<String>,
    {
        let mut lex = Lexicon::default();
        for (word, phones) in pairs {
            let word = word.into().to_uppercase();
            let phones: Vec<String> = phones.into_iter().map(Into::into).collect();
            if lex.entries.contains_key(&word) {
                lex.duplicate_count += 1;
            } else {
                lex.entries.insert(word, phones);
            }
        }
        lex
    }

    /// Phoneme sequence for a word; lookup is case-folded to uppercase.
    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.entries.get(&word.to_uppercase()).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(w, p)| (w.as_str(), p.as_slice()))
    }

    /// Set union of all phonemes appearing in any entry.
    pub fn inventory(&self) -> BTreeSet<String> {
        self.entries.values().flatten().cloned().collect()
    }
}

pub fn parse_lexicon(path: &Path) -> Result<Lexicon> {
    let text = std::fs::read_to_string(path)?;
    let p = path.display().to_string();
    let mut lex = Lexicon::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().expect("non-empty line has a first field");
        let phones: Vec<String> = fields.map(str::to_owned).collect();
        if phones.is_empty() {
            return Err(CorpusError::Parse {
                path: p,
                line: i + 1,
                msg: format!("word {word:?} has no phonemes"),
            });
        }
        let word = word.to_uppercase();
        if lex.entries.contains_key(&word) {
            lex.duplicate_count += 1;
        } else {
            lex.entries.insert(word, phones);
        }
    }
    Ok(lex)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lexicon(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lexicon.txt");
        std::fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn basic_entry_parses() {
        let (_d, path) = write_lexicon("HELLO HH AH L OW\n");
        let lex = parse_lexicon(&path).unwrap();
        assert_eq!(
            lex.get("HELLO").unwrap(),
            ["HH", "AH", "L", "OW"].map(String::from)
        );
        assert_eq!(lex.get("hello").unwrap().len(), 4);
    }

    #[test]
    fn first_entry_wins_and_duplicates_are_counted() {
        let (_d, path) = write_lexicon("A AH\nA EY\n");
        let lex = parse_lexicon(&path).unwrap();
        assert_eq!(lex.get("A").unwrap(), ["AH".to_string()]);
        assert_eq!(lex.duplicate_count, 1);
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let (_d, path) = write_lexicon(";; header\n\nTO T UW\n");
        let lex = parse_lexicon(&path).unwrap();
        assert_eq!(lex.len(), 1);
    }

    #[test]
    fn word_without_phonemes_reports_line() {
        let (_d, path) = write_lexicon("GOOD G UH D\nBAD\n");
        match parse_lexicon(&path) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn inventory_is_the_union_of_entries() {
        let mut content = String::new();
        let mut expected = BTreeSet::new();
        for i in 0..200 {
            let a = format!("P{}", i % 17);
            let b = format!("P{}", (i * 7) % 23);
            content.push_str(&format!("W{i} {a} {b}\n"));
            expected.insert(a);
            expected.insert(b);
        }
        let (_d, path) = write_lexicon(&content);
        let lex = parse_lexicon(&path).unwrap();
        assert_eq!(lex.len(), 200);
        assert_eq!(lex.inventory(), expected);
    }

    #[test]
    fn parsing_is_deterministic() {
        let (_d, path) = write_lexicon("B B IY\nA AH\nC S IY\n");
        let lex1 = parse_lexicon(&path).unwrap();
        let lex2 = parse_lexicon(&path).unwrap();
        let w1: Vec<_> = lex1.words().collect();
        let w2: Vec<_> = lex2.words().collect();
        assert_eq!(w1, w2);
    }
}
