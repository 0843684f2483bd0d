use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::annotated::hex_sha256;

pub const UNK: usize = 0;
pub const UNK_TOKEN: &str = "<unk>";

/// Word and tag indices built from training data. Id 0 is UNK in both.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<usize>,
    tags: Vec<String>,
    #[serde(skip)]
    word_index: HashMap<String, usize>,
    #[serde(skip)]
    tag_index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_parts(vec![UNK_TOKEN.into()], vec![0], vec![UNK_TOKEN.into()])
    }
}

impl Vocabulary {
    fn from_parts(words: Vec<String>, counts: Vec<usize>, tags: Vec<String>) -> Self {
        let word_index = words
            .iter()
            .enumerate()
            .map(|(k, w)| (w.clone(), k))
            .collect();
        let tag_index = tags
            .iter()
            .enumerate()
            .map(|(k, t)| (t.clone(), k))
            .collect();
        Self {
            words,
            counts,
            tags,
            word_index,
            tag_index,
        }
    }

    /// Ids follow first appearance.
    pub fn build<'a>(sentences: impl IntoIterator<Item = (&'a [String], &'a [String])>) -> Self {
        let mut v = Self::default();
        for (tokens, tags) in sentences {
            for w in tokens {
                match v.word_index.get(w) {
                    Some(&id) => v.counts[id] += 1,
                    None => {
                        v.word_index.insert(w.clone(), v.words.len());
                        v.words.push(w.clone());
                        v.counts.push(1);
                    }
                }
            }
            for t in tags {
                if !v.tag_index.contains_key(t) {
                    v.tag_index.insert(t.clone(), v.tags.len());
                    v.tags.push(t.clone());
                }
            }
        }
        v
    }

    /// Restores the lookup maps after deserialization.
    pub fn reindex(self) -> Self {
        Self::from_parts(self.words, self.counts, self.tags)
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn count(&self, word: &str) -> usize {
        self.word_index.get(word).map_or(0, |&id| self.counts[id])
    }

    pub fn word_id(&self, word: &str) -> usize {
        self.word_index.get(word).copied().unwrap_or(UNK)
    }

    pub fn tag_id(&self, tag: &str) -> usize {
        self.tag_index.get(tag).copied().unwrap_or(UNK)
    }

    pub fn hash(&self) -> String {
        hex_sha256(
            serde_json::to_string(self)
                .expect("vocabulary serializes")
                .as_bytes(),
        )
    }
}

/// Maps tokens to word ids. With an rng (training), each occurrence of a
/// word seen once in training becomes UNK with probability `p`; unseen
/// words are always UNK.
pub fn apply_unk_policy<R: Rng + ?Sized>(
    vocab: &Vocabulary,
    tokens: &[String],
    p: f64,
    mut rng: Option<&mut R>,
) -> Vec<usize> {
    tokens
        .iter()
        .map(|w| {
            let id = vocab.word_id(w);
            if id != UNK && vocab.counts[id] == 1 {
                if let Some(r) = rng.as_deref_mut() {
                    if r.gen::<f64>() < p {
                        return UNK;
                    }
                }
            }
            id
        })
        .collect()
}
