use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;

/// Token table with reserved PAD (0) and UNK (1). Ordering is stable:
/// frequency descending, then lexicographic.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, index }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_vec_pretty(&self.tokens)?;
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = serde_json::from_slice(&body)?;
        if tokens.len() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>" {
            return Err(Error::Dataset(format!(
                "{}: malformed vocab file",
                path.display()
            )));
        }
        Ok(Vocab::from_tokens(tokens))
    }
}

/// Build a vocabulary from an iterator of sentences.
pub fn build_vocab<'a>(corpus: impl Iterator<Item = &'a str>) -> Result<Vocab> {
    let mut freq: HashMap<String, u64> = HashMap::new();
    let mut any = false;
    for sentence in corpus {
        for token in sentence.split_whitespace() {
            any = true;
            *freq.entry(token.to_string()).or_default() += 1;
        }
    }
    if !any {
        return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut entries: Vec<(String, u64)> = freq.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
    tokens.extend(entries.into_iter().map(|(t, _)| t));
    Ok(Vocab::from_tokens(tokens))
}

/// Tokenize into a fixed-length id row plus validity mask, right-padded.
pub fn tokenize(sentence: &str, vocab: &Vocab, max_tokens: usize) -> Result<(Vec<u32>, Vec<f64>)> {
    let words: Vec<&str> = sentence.split_whitespace().collect();
    if words.len() > max_tokens {
        return Err(Error::Config(format!(
            "sentence has {} tokens, limit is {max_tokens}: `{sentence}`",
            words.len()
        )));
    }
    let mut ids = vec![PAD; max_tokens];
    let mut mask = vec![0.0; max_tokens];
    for (i, w) in words.iter().enumerate() {
        ids[i] = vocab.id(w);
        mask[i] = 1.0;
    }
    Ok((ids, mask))
}

/// Inverse of `tokenize` for real tokens.
pub fn detokenize(ids: &[u32], mask: &[f64], vocab: &Vocab) -> String {
    ids.iter()
        .zip(mask)
        .filter(|(_, &m)| m != 0.0)
        .map(|(&id, _)| vocab.token(id))
        .collect::<Vec<_>>()
        .join(" ")
}
