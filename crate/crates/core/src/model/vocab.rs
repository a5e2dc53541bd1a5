use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TokenId;

pub const BOS_STR: &str = "<bos>";
pub const THINK_END_STR: &str = "</think>";
pub const EOS_STR: &str = "<eos>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecialTokens {
    pub bos: TokenId,
    pub think_end: TokenId,
    pub eos: TokenId,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        Self {
            bos: 0,
            think_end: 1,
            eos: 2,
        }
    }
}

impl SpecialTokens {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        for id in [self.bos, self.think_end, self.eos] {
            if id >= vocab_size {
                return Err(Error::VocabMismatch { id, vocab_size });
            }
        }
        if self.bos == self.think_end || self.bos == self.eos || self.think_end == self.eos {
            return Err(Error::InvalidConfig("special token ids must be distinct".into()));
        }
        Ok(())
    }
}

/// Synthetic vocabulary: `tokNN` strings plus the named specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn synthetic(vocab_size: usize, specials: SpecialTokens) -> Result<Self> {
        specials.validate(vocab_size)?;
        let width = if vocab_size > 100 { 3 } else { 2 };
        let tokens = (0..vocab_size)
            .map(|id| {
                if id == specials.bos {
                    BOS_STR.to_string()
                } else if id == specials.think_end {
                    THINK_END_STR.to_string()
                } else if id == specials.eos {
                    EOS_STR.to_string()
                } else {
                    format!("tok{id:0width$}")
                }
            })
            .collect();
        Ok(Self { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens.get(id).map_or("<unk>", String::as_str)
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.tokens.iter().position(|t| t == token)
    }

    /// Resolves whitespace-separated tokens; bare integers are taken as ids.
    pub fn parse(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace()
            .map(|piece| {
                if let Some(id) = self.id_of(piece) {
                    return Ok(id);
                }
                match piece.parse::<TokenId>() {
                    Ok(id) if id < self.len() => Ok(id),
                    Ok(id) => Err(Error::VocabMismatch {
                        id,
                        vocab_size: self.len(),
                    }),
                    Err(_) => Err(Error::InvalidConfig(format!("unknown token {piece:?}"))),
                }
            })
            .collect()
    }

    /// Resolves a think-end string to a single id.
    pub fn resolve_single(&self, token: &str) -> Result<TokenId> {
        match self.parse(token)?.as_slice() {
            [id] => Ok(*id),
            [] => Err(Error::InvalidConfig("empty token string".into())),
            _ => Err(Error::InvalidConfig(format!(
                "{token:?} spans several tokens; only single-token markers are supported"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_names_and_lookup() {
        let v = Vocabulary::synthetic(16, SpecialTokens::default()).unwrap();
        assert_eq!(v.token(0), "<bos>");
        assert_eq!(v.token(1), "</think>");
        assert_eq!(v.token(2), "<eos>");
        assert_eq!(v.token(3), "tok03");
        assert_eq!(v.token(15), "tok15");
        assert_eq!(v.id_of("</think>"), Some(1));
        assert_eq!(v.parse("<bos> tok05 7").unwrap(), vec![0, 5, 7]);
        assert!(v.parse("tok99").is_err());
        assert!(v.parse("16").is_err());
        assert_eq!(v.resolve_single("</think>").unwrap(), 1);
        assert!(v.resolve_single("tok03 tok04").is_err());
    }

    #[test]
    fn specials_must_be_distinct_and_in_range() {
        assert!(Vocabulary::synthetic(2, SpecialTokens::default()).is_err());
        let same = SpecialTokens {
            bos: 0,
            think_end: 0,
            eos: 2,
        };
        assert!(same.validate(4).is_err());
    }
}
