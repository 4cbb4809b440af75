use std::collections::HashMap;

use crate::corpus::Sentence;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Index map over subword units with four reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary ordered by descending frequency, ties broken
    /// lexicographically. `max_size` counts the reserved entries.
    pub fn build<'a, I>(sentences: I, max_size: Option<usize>) -> Self
    where
        I: IntoIterator<Item = &'a Sentence>,
    {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for t in s {
                *freq.entry(t.as_str()).or_insert(0) += 1;
            }
        }
        let mut entries: Vec<(&str, usize)> = freq
            .into_iter()
            .filter(|(t, _)| !RESERVED.contains(t))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let limit = max_size.map_or(usize::MAX, |m| m.saturating_sub(RESERVED.len()));
        Self::from_tokens(entries.into_iter().take(limit).map(|(t, _)| t.to_owned()))
    }

    /// Reserved entries followed by `tokens` in the given order.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> =
            all.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        for t in tokens {
            if !index.contains_key(&t) {
                index.insert(t.clone(), all.len() as u32);
                all.push(t);
            }
        }
        Vocab { tokens: all, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, s: &Sentence) -> Vec<u32> {
        s.iter().map(|t| self.id(t)).collect()
    }

    /// Maps ids back to units, stopping at `</s>` and skipping other reserved
    /// ids except `<unk>`.
    pub fn decode(&self, ids: &[u32]) -> Sentence {
        let units = ids
            .iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.tokens[i as usize].clone());
        Sentence::new(units).expect("vocabulary entries are valid tokens")
    }
}
