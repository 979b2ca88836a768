//! Knowledge base loading and indexing: legal documents partitioned by
//! domain, plus the statute index used for local reference correction.
//!
//! Both structures are immutable after load and safe to share across
//! pipeline workers.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::CorpusError;
use crate::jsonl;
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Criminal,
    Civil,
}

impl Domain {
    pub const ALL: [Domain; 2] = [Domain::Criminal, Domain::Civil];

    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::Criminal => "criminal",
            Domain::Civil => "civil",
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "criminal" => Ok(Domain::Criminal),
            "civil" => Ok(Domain::Civil),
            other => Err(format!("unknown domain {other:?}")),
        }
    }
}

/// One legal document: the unit sampled from the knowledge base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeDocument {
    pub id: String,
    pub domain: Domain,
    pub facts: String,
    pub reasons: String,
    pub results: String,
    pub relevant_laws: Vec<String>,
}

/// The loaded knowledge base with a per-domain index.
#[derive(Debug, Clone)]
pub struct Corpus {
    documents: Vec<KnowledgeDocument>,
    by_id: HashMap<String, usize>,
    by_domain: HashMap<Domain, Vec<usize>>,
}

impl Corpus {
    /// Build a corpus from documents already in memory. Rejects duplicate
    /// ids and documents with empty facts.
    pub fn from_documents(documents: Vec<KnowledgeDocument>) -> Result<Self, CorpusError> {
        let mut corpus = Corpus {
            documents: Vec::with_capacity(documents.len()),
            by_id: HashMap::new(),
            by_domain: HashMap::new(),
        };
        for (i, doc) in documents.into_iter().enumerate() {
            corpus.push(doc, i + 1)?;
        }
        Ok(corpus)
    }

    /// Load a JSONL corpus file. Each line must carry the full document
    /// schema; errors report the offending line number.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let lines: Vec<(usize, KnowledgeDocument)> = jsonl::read_lines(
            path,
            |source| CorpusError::Io {
                path: path.to_path_buf(),
                source,
            },
            |line, reason| CorpusError::MalformedLine { line, reason },
        )?;
        if lines.is_empty() {
            return Err(CorpusError::Empty {
                path: path.to_path_buf(),
            });
        }
        let mut corpus = Corpus {
            documents: Vec::with_capacity(lines.len()),
            by_id: HashMap::new(),
            by_domain: HashMap::new(),
        };
        for (lineno, doc) in lines {
            corpus.push(doc, lineno)?;
        }
        Ok(corpus)
    }

    fn push(&mut self, doc: KnowledgeDocument, lineno: usize) -> Result<(), CorpusError> {
        if doc.facts.trim().is_empty() {
            return Err(CorpusError::MalformedLine {
                line: lineno,
                reason: format!("field facts: must be non-empty (id {:?})", doc.id),
            });
        }
        if self.by_id.contains_key(&doc.id) {
            return Err(CorpusError::DuplicateId {
                id: doc.id,
                line: lineno,
            });
        }
        let idx = self.documents.len();
        self.by_id.insert(doc.id.clone(), idx);
        self.by_domain.entry(doc.domain).or_default().push(idx);
        self.documents.push(doc);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[KnowledgeDocument] {
        &self.documents
    }

    pub fn get(&self, id: &str) -> Option<&KnowledgeDocument> {
        self.by_id.get(id).map(|&i| &self.documents[i])
    }

    pub fn domain_count(&self, domain: Domain) -> usize {
        self.by_domain.get(&domain).map_or(0, Vec::len)
    }

    /// Uniform draw from one domain partition.
    pub fn sample_document<R: Rng + ?Sized>(
        &self,
        domain: Domain,
        rng: &mut R,
    ) -> Result<&KnowledgeDocument, CorpusError> {
        let ids = self
            .by_domain
            .get(&domain)
            .filter(|v| !v.is_empty())
            .ok_or(CorpusError::EmptyPartition { domain })?;
        let pick = ids[rng.gen_range(0..ids.len())];
        Ok(&self.documents[pick])
    }

    /// Order-insensitive equality over the document set.
    pub fn same_documents(&self, other: &Corpus) -> bool {
        if self.len() != other.len() {
            return false;
        }
        self.documents
            .iter()
            .all(|doc| other.get(&doc.id) == Some(doc))
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct StatuteEntry {
    citation: String,
    content: String,
}

/// Citation key to statute text. Keys are NFC-normalized at load and at
/// lookup; no other normalization (in particular no trimming) is applied.
#[derive(Debug, Clone, Default)]
pub struct StatuteIndex {
    entries: HashMap<String, String>,
}

impl StatuteIndex {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let lines: Vec<(usize, StatuteEntry)> = jsonl::read_lines(
            path,
            |source| CorpusError::Io {
                path: path.to_path_buf(),
                source,
            },
            |line, reason| CorpusError::MalformedLine { line, reason },
        )?;
        let mut index = StatuteIndex::default();
        for (lineno, entry) in lines {
            if entry.content.trim().is_empty() {
                return Err(CorpusError::MalformedLine {
                    line: lineno,
                    reason: format!("field content: must be non-empty ({:?})", entry.citation),
                });
            }
            let key = text::nfc(&entry.citation);
            if index.entries.contains_key(&key) {
                return Err(CorpusError::DuplicateCitation {
                    citation: key,
                    line: lineno,
                });
            }
            index.entries.insert(key, entry.content);
        }
        Ok(index)
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (String, String)>) -> Self {
        StatuteIndex {
            entries: entries
                .into_iter()
                .map(|(k, v)| (text::nfc(&k), v))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact-key lookup after NFC normalization of the query.
    pub fn lookup(&self, citation: &str) -> Option<&str> {
        self.entries.get(&text::nfc(citation)).map(String::as_str)
    }
}
