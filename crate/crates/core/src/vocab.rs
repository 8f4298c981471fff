//! Token vocabulary shared by training and evaluation: specials, every tag
//! surface as a single atomic token, and a closed character set. Tokenization
//! is greedy longest-match over registered tags with character fallback.

use std::collections::HashMap;

use thiserror::Error;

use crate::grammar::{attribute_registry, TaskTag};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";

/// Characters every corpus draws from: lowercase letters, digits, space,
/// period, comma, hyphen, pipe, question mark.
pub const DEFAULT_CHARSET: &str = "abcdefghijklmnopqrstuvwxyz0123456789 .,-|?";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("character {0:?} is not representable in this vocabulary")]
    Unrepresentable(char),
    #[error("token id {0} out of range")]
    BadId(u32),
    #[error("malformed vocabulary file: {0}")]
    BadFile(String),
}

pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    /// Tag surfaces sorted longest-first for greedy matching.
    tag_surfaces: Vec<String>,
    is_task_tag: Vec<bool>,
}

impl Vocabulary {
    /// Standard vocabulary: PAD, BOS, EOS, task tags, attribute tags,
    /// then one token per charset character.
    pub fn build() -> Vocabulary {
        Vocabulary::with_charset(DEFAULT_CHARSET)
    }

    pub fn with_charset(charset: &str) -> Vocabulary {
        let mut tokens: Vec<String> = vec![PAD.into(), BOS.into(), EOS.into()];
        for t in TaskTag::ALL {
            tokens.push(t.surface().into());
        }
        for a in attribute_registry() {
            tokens.push(a.surface().into());
        }
        for c in charset.chars() {
            tokens.push(c.to_string());
        }
        Vocabulary::from_tokens(tokens).expect("builtin vocabulary is well formed")
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Vocabulary, VocabError> {
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(VocabError::BadFile(format!("empty token at line {i}")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(VocabError::BadFile(format!("duplicate token {t:?}")));
            }
        }
        let mut tag_surfaces: Vec<String> = tokens
            .iter()
            .filter(|t| t.len() > 1 && t.starts_with('<') && t.ends_with('>'))
            .cloned()
            .collect();
        tag_surfaces.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        let is_task_tag = tokens
            .iter()
            .map(|t| TaskTag::ALL.iter().any(|tt| tt.surface() == t))
            .collect();
        Ok(Vocabulary {
            tokens,
            index,
            tag_surfaces,
            is_task_tag,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad_id(&self) -> u32 {
        self.index[PAD]
    }

    pub fn bos_id(&self) -> u32 {
        self.index[BOS]
    }

    pub fn eos_id(&self) -> u32 {
        self.index[EOS]
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn is_task_tag_id(&self, id: u32) -> bool {
        self.is_task_tag.get(id as usize).copied().unwrap_or(false)
    }

    /// Greedy longest-match over tag surfaces, single characters otherwise.
    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>, VocabError> {
        let mut out = Vec::new();
        let mut rest = text;
        'outer: while !rest.is_empty() {
            if rest.starts_with('<') {
                for tag in &self.tag_surfaces {
                    if let Some(tail) = rest.strip_prefix(tag.as_str()) {
                        out.push(self.index[tag]);
                        rest = tail;
                        continue 'outer;
                    }
                }
            }
            let c = rest.chars().next().unwrap();
            let Some(&id) = self.index.get(c.to_string().as_str()) else {
                return Err(VocabError::Unrepresentable(c));
            };
            out.push(id);
            rest = &rest[c.len_utf8()..];
        }
        Ok(out)
    }

    pub fn detokenize(&self, ids: &[u32]) -> Result<String, VocabError> {
        let mut out = String::new();
        for &id in ids {
            let t = self.token(id).ok_or(VocabError::BadId(id))?;
            out.push_str(t);
        }
        Ok(out)
    }

    /// True exactly at task-tag token positions; attribute tags and
    /// content characters are false.
    pub fn task_identifier_positions(&self, ids: &[u32]) -> Vec<bool> {
        ids.iter().map(|&id| self.is_task_tag_id(id)).collect()
    }

    /// One token per line; the line number is the id.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_file_string(s: &str) -> Result<Vocabulary, VocabError> {
        let mut lines: Vec<&str> = s.split('\n').collect();
        if lines.last() == Some(&"") {
            lines.pop();
        }
        Vocabulary::from_tokens(lines.into_iter().map(String::from).collect())
    }
}
