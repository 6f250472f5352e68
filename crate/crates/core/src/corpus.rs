//! In-memory document collection keyed by id.

use std::collections::HashMap;

use crate::model::Document;
use crate::prompts::DocView;
use crate::store::{EmbeddingStore, StoreError};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("duplicate doc_id {0}")]
    Duplicate(String),
    #[error("unknown doc_id {0}")]
    Unknown(String),
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if index.insert(d.doc_id.clone(), i).is_some() {
                return Err(CorpusError::Duplicate(d.doc_id.clone()));
            }
        }
        Ok(Self { docs, index })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, id: &str) -> Result<&Document, CorpusError> {
        self.index.get(id).map(|&i| &self.docs[i]).ok_or_else(|| CorpusError::Unknown(id.to_string()))
    }

    pub fn view(&self, id: &str) -> Result<DocView<'_>, CorpusError> {
        self.get(id).map(DocView::from)
    }

    pub fn views<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<DocView<'_>>, CorpusError> {
        ids.iter().map(|id| self.view(id.as_ref())).collect()
    }

    pub fn to_store(&self, dim: usize) -> Result<EmbeddingStore, StoreError> {
        EmbeddingStore::from_documents(dim, &self.docs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_and_duplicates() {
        let c = Corpus::new(vec![Document::new("a", "A", "text a", vec![1.0])]).unwrap();
        assert_eq!(c.view("a").unwrap().title, "A");
        assert_eq!(c.get("b").unwrap_err(), CorpusError::Unknown("b".into()));
        let dup = Corpus::new(vec![Document::new("a", "", "", vec![]), Document::new("a", "", "", vec![])]);
        assert_eq!(dup.unwrap_err(), CorpusError::Duplicate("a".into()));
    }
}
