//! Character vocabulary and token sequences.

use std::collections::{BTreeSet, HashMap};
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = usize;

/// Sequence-start marker. Rendered as the ASCII STX control character.
pub const BOS_CHAR: char = '\u{2}';
/// Sequence-end marker. Rendered as the ASCII ETX control character.
pub const EOS_CHAR: char = '\u{3}';

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;

/// Dense character vocabulary. Ids `0` and `1` are always BOS and EOS; the
/// remaining ids follow code-point order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Vec<char>", into = "Vec<char>")]
pub struct Vocab {
    tokens: Vec<char>,
    index: HashMap<char, TokenId>,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl Eq for Vocab {}

impl Vocab {
    /// Builds a vocabulary from every distinct character of `corpus`.
    pub fn build(corpus: &str) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let distinct: BTreeSet<char> = corpus
            .chars()
            .filter(|&c| c != BOS_CHAR && c != EOS_CHAR)
            .collect();
        let mut tokens = vec![BOS_CHAR, EOS_CHAR];
        tokens.extend(distinct);
        Self::from_tokens(tokens)
    }

    /// Reassembles a vocabulary from its ordered token list (checkpoint form).
    pub fn from_tokens(tokens: Vec<char>) -> Result<Self> {
        if tokens.len() < 2 || tokens[BOS] != BOS_CHAR || tokens[EOS] != EOS_CHAR {
            return Err(Error::Checkpoint(
                "vocabulary must start with the BOS and EOS markers".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, &c) in tokens.iter().enumerate() {
            if index.insert(c, id).is_some() {
                return Err(Error::Checkpoint(format!("duplicate token {c:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[char] {
        &self.tokens
    }

    pub fn id_of(&self, c: char) -> Option<TokenId> {
        self.index.get(&c).copied()
    }

    pub fn char_of(&self, id: TokenId) -> Option<char> {
        self.tokens.get(id).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Sequence> {
        text.chars()
            .map(|c| self.id_of(c).ok_or(Error::UnknownChar(c)))
            .collect::<Result<Vec<_>>>()
            .map(Sequence)
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        ids.iter()
            .map(|&id| {
                self.char_of(id).ok_or(Error::TokenOutOfVocab {
                    id,
                    vocab_size: self.len(),
                })
            })
            .collect()
    }

    /// Fails if any id falls outside the vocabulary.
    pub fn check(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().find(|&&id| id >= self.len()) {
            Some(&id) => Err(Error::TokenOutOfVocab {
                id,
                vocab_size: self.len(),
            }),
            None => Ok(()),
        }
    }
}

impl TryFrom<Vec<char>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<char>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<char> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

/// Convenience wrapper for [`Vocab::build`].
pub fn build_vocab(corpus: &str) -> Result<Vocab> {
    Vocab::build(corpus)
}

/// An owned list of token ids: a prompt, a response, or a prefix of either.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sequence(Vec<TokenId>);

impl Sequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn into_ids(self) -> Vec<TokenId> {
        self.0
    }

    pub fn push(&mut self, id: TokenId) {
        self.0.push(id);
    }

    /// True when the final token is EOS.
    pub fn is_terminated(&self) -> bool {
        self.0.last() == Some(&EOS)
    }

    /// Number of content tokens, i.e. excluding a trailing EOS.
    pub fn content_len(&self) -> usize {
        if self.is_terminated() {
            self.0.len() - 1
        } else {
            self.0.len()
        }
    }

    pub fn concat(&self, other: &[TokenId]) -> Sequence {
        let mut ids = Vec::with_capacity(self.0.len() + other.len());
        ids.extend_from_slice(&self.0);
        ids.extend_from_slice(other);
        Sequence(ids)
    }
}

impl Deref for Sequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for Sequence {
    fn from(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn abba_has_four_tokens() {
        let v = build_vocab("abba").unwrap();
        assert_eq!(v.tokens(), &[BOS_CHAR, EOS_CHAR, 'a', 'b']);
        assert_eq!(v.len(), 4);
        assert_eq!(v.id_of('a'), Some(2));
    }

    #[test]
    fn single_character_corpus() {
        assert_eq!(build_vocab("aaaa").unwrap().len(), 3);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let err = build_vocab("").unwrap_err();
        assert_eq!(err.to_string(), "empty corpus");
    }

    #[test]
    fn ordering_is_by_code_point() {
        let v = build_vocab("zyx|a").unwrap();
        assert_eq!(&v.tokens()[2..], &['a', 'x', 'y', 'z', '|']);
    }

    #[test]
    fn unknown_characters_fail_to_encode() {
        let v = build_vocab("ab").unwrap();
        assert!(matches!(v.encode("abc"), Err(Error::UnknownChar('c'))));
        assert!(v.decode(&[7]).is_err());
        assert!(v.check(&[0, 1, 3]).is_ok());
        assert!(v.check(&[4]).is_err());
    }

    #[test]
    fn content_length_ignores_trailing_eos() {
        let s = Sequence::new(vec![2, 3, EOS]);
        assert!(s.is_terminated());
        assert_eq!(s.content_len(), 2);
        assert_eq!(Sequence::new(vec![2, 3]).content_len(), 2);
    }

    #[test]
    fn vocab_serializes_as_token_list() {
        let v = build_vocab("ab").unwrap();
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"["\u0002","\u0003","a","b"]"#);
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id_of('b'), Some(3));
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(text in "[a-z|. ]{1,40}") {
            let v = build_vocab(&text).unwrap();
            let ids = v.encode(&text).unwrap();
            prop_assert_eq!(v.decode(&ids).unwrap(), text);
            prop_assert!(ids.iter().all(|&id| id >= 2 && id < v.len()));
        }
    }
}
