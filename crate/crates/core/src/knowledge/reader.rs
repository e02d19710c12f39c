//! Literature ingestion into the knowledge store and banded retrieval from it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::embed::EmbeddingProvider;
use super::store::{StoreEntry, VectorStore};
use super::KnowledgeError;
use crate::agents::{ask_parsed, render, response_marker, tagged_spans, LlmClient, TemplateId, Usage};

pub const DEFAULT_BANDS: [(f64, f64); 3] = [(0.75, 1.0), (0.5, 0.75), (0.0, 0.5)];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paper {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_: String,
    #[serde(default)]
    pub body: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeItem {
    /// Store entry id, `<paper id>#<k>`.
    pub id: String,
    pub text: String,
    pub paper_id: String,
    pub embedding: Vec<f32>,
}

impl KnowledgeItem {
    fn from_entry(entry: &StoreEntry) -> KnowledgeItem {
        KnowledgeItem {
            id: entry.id.clone(),
            text: entry.payload.clone(),
            paper_id: entry.metadata.get("paper_id").cloned().unwrap_or_default(),
            embedding: entry.vector.clone(),
        }
    }

    fn into_entry(self, title: &str) -> StoreEntry {
        let mut metadata = BTreeMap::new();
        metadata.insert("paper_id".to_string(), self.paper_id);
        metadata.insert("title".to_string(), title.to_string());
        StoreEntry { id: self.id, vector: self.embedding, payload: self.text, metadata }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaperIngest {
    pub relevant: bool,
    pub items: Vec<KnowledgeItem>,
    pub usage: Usage,
}

/// Asks for relevance, then extracts and embeds inspirations. Nothing is stored.
pub fn read_paper(paper: &Paper, llm: &dyn LlmClient, embedder: &dyn EmbeddingProvider) -> Result<PaperIngest, KnowledgeError> {
    if paper.title.trim().is_empty() || paper.abstract_.trim().is_empty() {
        return Err(KnowledgeError::InvalidInput(format!("paper {} needs a title and an abstract", paper.id)));
    }
    let prompt = render(TemplateId::ReaderRelevance, &[("title", &paper.title), ("abstract", &paper.abstract_)])?;
    let (relevant, dialogue) = ask_parsed(
        llm,
        TemplateId::ReaderRelevance,
        prompt,
        "End your answer with ##response## followed by yes or no.",
        response_marker,
    )?;
    let mut usage = dialogue.usage;
    if !relevant {
        return Ok(PaperIngest { relevant, items: Vec::new(), usage });
    }
    let prompt = render(TemplateId::ReaderExtract, &[("paper", &paper.body)])?;
    let (spans, dialogue) = ask_parsed(
        llm,
        TemplateId::ReaderExtract,
        prompt,
        "Wrap each inspiration with <inspiration> and </inspiration>.",
        |reply| {
            let spans: Vec<String> =
                tagged_spans(reply, "inspiration").into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            (!spans.is_empty()).then_some(spans)
        },
    )?;
    usage += dialogue.usage;
    let mut items = Vec::with_capacity(spans.len());
    for (k, text) in spans.into_iter().enumerate() {
        let embedding = embedder.embed(&text)?;
        items.push(KnowledgeItem { id: format!("{}#{k}", paper.id), text, paper_id: paper.id.clone(), embedding });
    }
    Ok(PaperIngest { relevant, items, usage })
}

/// Reads one paper and stores its inspirations.
pub fn ingest_paper(
    paper: &Paper,
    llm: &dyn LlmClient,
    embedder: &dyn EmbeddingProvider,
    store: &mut VectorStore,
) -> Result<PaperIngest, KnowledgeError> {
    let result = read_paper(paper, llm, embedder)?;
    for item in &result.items {
        store.add(item.clone().into_entry(&paper.title))?;
    }
    Ok(result)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusReport {
    pub papers: usize,
    /// Ids already present in the store, not re-read.
    pub skipped: Vec<String>,
    pub irrelevant: Vec<String>,
    pub items_added: usize,
    pub failures: Vec<(String, String)>,
    pub usage: Usage,
}

#[derive(Deserialize)]
struct Meta {
    title: String,
    #[serde(rename = "abstract")]
    abstract_: String,
}

/// Loads every `<id>.meta.json` with its `<id>.body.txt`, sorted by id.
pub fn load_corpus(dir: &Path) -> Result<Vec<Paper>, KnowledgeError> {
    let mut papers = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(id) = name.strip_suffix(".meta.json") else { continue };
        let meta: Meta = serde_json::from_str(&fs::read_to_string(&path)?)
            .map_err(|e| KnowledgeError::InvalidInput(format!("{name}: {e}")))?;
        let body = match fs::read_to_string(dir.join(format!("{id}.body.txt"))) {
            Ok(body) => body,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e.into()),
        };
        papers.push(Paper { id: id.to_string(), title: meta.title, abstract_: meta.abstract_, body });
    }
    papers.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(papers)
}

/// Ingests a corpus directory. Papers are read concurrently; items are stored in paper id
/// order so the resulting store does not depend on scheduling.
pub fn ingest_corpus(
    dir: &Path,
    llm: &dyn LlmClient,
    embedder: &dyn EmbeddingProvider,
    store: &mut VectorStore,
) -> Result<CorpusReport, KnowledgeError> {
    let papers = load_corpus(dir)?;
    let mut report = CorpusReport { papers: papers.len(), ..CorpusReport::default() };
    let (seen, fresh): (Vec<&Paper>, Vec<&Paper>) =
        papers.iter().partition(|p| store.contains_metadata("paper_id", &p.id));
    report.skipped = seen.iter().map(|p| p.id.clone()).collect();
    let results: Vec<_> = fresh.par_iter().map(|p| (*p, read_paper(p, llm, embedder))).collect();
    for (paper, result) in results {
        match result {
            Ok(ingest) => {
                report.usage += ingest.usage;
                if !ingest.relevant {
                    report.irrelevant.push(paper.id.clone());
                }
                for item in ingest.items {
                    store.add(item.into_entry(&paper.title))?;
                    report.items_added += 1;
                }
            }
            Err(e) => {
                log::warn!("paper {} skipped: {e}", paper.id);
                report.failures.push((paper.id.clone(), e.to_string()));
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved {
    pub item: KnowledgeItem,
    pub similarity: f64,
    /// Index into the band list.
    pub band: usize,
}

pub fn check_bands(bands: &[(f64, f64)]) -> Result<(), KnowledgeError> {
    let mut sorted = bands.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    for &(lo, hi) in &sorted {
        if !(-1.0..=1.0).contains(&lo) || !(-1.0..=1.0).contains(&hi) || lo >= hi {
            return Err(KnowledgeError::InvalidBands(format!("band ({lo}, {hi}) is not a subrange of [-1, 1]")));
        }
    }
    for pair in sorted.windows(2) {
        if pair[0].1 > pair[1].0 {
            return Err(KnowledgeError::InvalidBands(format!("bands {:?} and {:?} overlap", pair[0], pair[1])));
        }
    }
    Ok(())
}

/// Whether `s` falls in `[lo, hi)`. A band reaching 1 also takes anything above it, since
/// rounding can push a self-similarity past 1. A band starting at 0 also takes negative
/// similarities, which signed embedders produce for unrelated text.
pub fn in_band(s: f64, (lo, hi): (f64, f64)) -> bool {
    (s >= lo || lo == 0.0) && (s < hi || hi >= 1.0)
}

/// Up to `per_band` items per similarity band, most similar first, concatenated in band order.
pub fn retrieve_inspirations(
    store: &VectorStore,
    embedder: &dyn EmbeddingProvider,
    query: &str,
    per_band: usize,
    bands: &[(f64, f64)],
) -> Result<Vec<Retrieved>, KnowledgeError> {
    check_bands(bands)?;
    if store.is_empty() {
        return Err(KnowledgeError::EmptyStore);
    }
    let q = embedder.embed(query)?;
    let ranked = store.top_k(&q, store.len());
    let mut out = Vec::new();
    for (band, &range) in bands.iter().enumerate() {
        out.extend(ranked.iter().filter(|(_, s)| in_band(*s, range)).take(per_band).map(|&(i, similarity)| Retrieved {
            item: KnowledgeItem::from_entry(&store.entries()[i]),
            similarity,
            band,
        }));
    }
    Ok(out)
}
