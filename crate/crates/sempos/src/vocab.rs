//! Token vocabulary with reserved begin/end markers.
//!
//! Ids are assigned deterministically: BOS and EOS first, then the unique
//! lower-cased corpus tokens in sorted order, so the same caption set always
//! produces the same mapping regardless of iteration order upstream.

use std::collections::HashMap;

/// Id of the begin-of-sequence marker.
pub const BOS: usize = 0;
/// Id of the end-of-sequence marker.
pub const EOS: usize = 1;

pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("token {token:?} is not in the vocabulary")]
    UnknownToken { token: String },
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from all caption token lists; input casing is ignored.
    pub fn build<'a, I, S>(captions: I) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut unique: Vec<String> = captions
            .into_iter()
            .flatten()
            .map(|t| t.as_ref().to_lowercase())
            .filter(|t| t != BOS_TOKEN && t != EOS_TOKEN)
            .collect();
        unique.sort();
        unique.dedup();

        let mut tokens = vec![BOS_TOKEN.to_string(), EOS_TOKEN.to_string()];
        tokens.extend(unique);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // BOS and EOS are always present
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(&token.to_lowercase()).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    /// Token ids for a caption, without BOS/EOS framing.
    pub fn encode(&self, tokens: &[String]) -> Result<Vec<usize>, VocabError> {
        tokens
            .iter()
            .map(|t| {
                self.id(t).ok_or_else(|| VocabError::UnknownToken {
                    token: t.clone(),
                })
            })
            .collect()
    }

    /// Tokens for a sequence of ids, skipping BOS/EOS markers and unknown
    /// ids.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id != BOS && id != EOS)
            .filter_map(|&id| self.token(id))
            .map(str::to_string)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ids_are_sorted_and_stable() {
        let a = toks(&["the", "Cat", "sat"]);
        let b = toks(&["a", "cat", "ran"]);
        let v1 = Vocabulary::build([a.as_slice(), b.as_slice()]);
        let v2 = Vocabulary::build([b.as_slice(), a.as_slice()]);
        assert_eq!(v1.len(), v2.len());
        for id in 0..v1.len() {
            assert_eq!(v1.token(id), v2.token(id));
        }
        assert_eq!(v1.token(BOS), Some(BOS_TOKEN));
        assert_eq!(v1.token(EOS), Some(EOS_TOKEN));
        // "a" sorts first among the words, landing right after the markers.
        assert_eq!(v1.id("a"), Some(2));
    }

    #[test]
    fn lookup_is_case_insensitive() {
        let a = toks(&["Cat"]);
        let v = Vocabulary::build([a.as_slice()]);
        assert_eq!(v.id("cat"), v.id("CAT"));
        assert!(v.id("dog").is_none());
    }

    #[test]
    fn encode_decode_round_trip() {
        let a = toks(&["the", "cat", "sat"]);
        let v = Vocabulary::build([a.as_slice()]);
        let ids = v.encode(&a).unwrap();
        assert_eq!(v.decode(&ids), a);
        assert!(matches!(
            v.encode(&toks(&["dog"])),
            Err(VocabError::UnknownToken { .. })
        ));
    }

    #[test]
    fn decode_strips_markers() {
        let a = toks(&["hi"]);
        let v = Vocabulary::build([a.as_slice()]);
        let id = v.id("hi").unwrap();
        assert_eq!(v.decode(&[BOS, id, EOS]), toks(&["hi"]));
    }
}
