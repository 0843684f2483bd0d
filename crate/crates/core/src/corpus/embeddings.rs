use std::collections::HashMap;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Fixed word vectors. Row 0 of [`Self::table`] is the all-zero row used
/// for absent words; word `k` of the file sits at row `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedEmbeddings {
    words: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    vectors: Vec<f64>,
}

impl PretrainedEmbeddings {
    pub fn from_parts(words: Vec<String>, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if dim == 0 || vectors.len() != words.len() * dim {
            return Err(Error::invalid(format!(
                "{} vectors of dimension {dim} need {} values, got {}",
                words.len(),
                words.len() * dim,
                vectors.len()
            )));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (k, w) in words.iter().enumerate() {
            if index.insert(w.clone(), k + 1).is_some() {
                return Err(Error::invalid(format!("duplicate pretrained word `{w}`")));
            }
        }
        Ok(Self {
            words,
            index,
            dim,
            vectors,
        })
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut words: Vec<String> = Vec::new();
        let mut index = HashMap::new();
        let mut vectors = Vec::new();
        let mut dim = None;
        for (k, line) in text.lines().enumerate() {
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else { continue };
            let err = |message: String| Error::Data {
                source_name: source_name.to_string(),
                line: k + 1,
                message,
            };
            let values = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| err(format!("bad value `{f}`: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            match dim {
                None if values.is_empty() => return Err(err(format!("`{word}` has no values"))),
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(err(format!(
                        "`{word}` has {} values, expected {d}",
                        values.len()
                    )))
                }
                Some(_) => {}
            }
            if index.contains_key(word) {
                log::warn!("{source_name}:{}: duplicate `{word}` ignored", k + 1);
                continue;
            }
            index.insert(word.to_string(), words.len() + 1);
            words.push(word.to_string());
            vectors.extend(values);
        }
        let dim = dim.ok_or_else(|| Error::Data {
            source_name: source_name.to_string(),
            line: 0,
            message: "no vectors".into(),
        })?;
        Ok(Self {
            words,
            index,
            dim,
            vectors,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn raw_vectors(&self) -> &[f64] {
        &self.vectors
    }

    /// Table row of `word`: an exact match, then its lowercase form, then 0.
    pub fn row(&self, word: &str) -> usize {
        self.index
            .get(word)
            .or_else(|| self.index.get(&word.to_lowercase()))
            .copied()
            .unwrap_or(0)
    }

    pub fn vector(&self, word: &str) -> Vec<f64> {
        match self.row(word) {
            0 => vec![0.0; self.dim],
            r => self.vectors[(r - 1) * self.dim..r * self.dim].to_vec(),
        }
    }

    /// `[num_words + 1, dim]` with a leading zero row.
    pub fn table(&self) -> Tensor<f64> {
        let mut data = vec![0.0; self.dim];
        data.extend_from_slice(&self.vectors);
        Tensor::new(vec![self.words.len() + 1, self.dim], data).expect("consistent table")
    }
}
