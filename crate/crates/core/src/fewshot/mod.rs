//! Example question/query pairs and similarity retrieval over them.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{similarity_rank, Embedder, EmbeddingVector, LlmError};
use crate::sql::{validate_sql, SchemaCatalog, ValidationReport};

pub const STARTER_EXAMPLES: &str = include_str!("../../assets/fewshot.jsonl");
pub const DEFAULT_K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioTag {
    RealTimeAdvisory,
    HistoricalStats,
    Emissions,
    LaneBased,
    Counting,
    Pattern,
}

impl ScenarioTag {
    pub const ALL: [ScenarioTag; 6] = [
        ScenarioTag::RealTimeAdvisory,
        ScenarioTag::HistoricalStats,
        ScenarioTag::Emissions,
        ScenarioTag::LaneBased,
        ScenarioTag::Counting,
        ScenarioTag::Pattern,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioTag::RealTimeAdvisory => "real_time_advisory",
            ScenarioTag::HistoricalStats => "historical_stats",
            ScenarioTag::Emissions => "emissions",
            ScenarioTag::LaneBased => "lane_based",
            ScenarioTag::Counting => "counting",
            ScenarioTag::Pattern => "pattern",
        }
    }
}

impl fmt::Display for ScenarioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioTag::ALL.into_iter().find(|t| t.as_str() == s).ok_or_else(|| format!("unknown scenario tag '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub example_id: String,
    pub question: String,
    pub sql: String,
    pub scenario_tag: ScenarioTag,
    /// Filled in when the example is added to a repository.
    #[serde(skip)]
    pub embedding: Option<EmbeddingVector>,
}

impl FewShotExample {
    pub fn new(
        example_id: impl Into<String>,
        question: impl Into<String>,
        sql: impl Into<String>,
        scenario_tag: ScenarioTag,
    ) -> Self {
        FewShotExample {
            example_id: example_id.into(),
            question: question.into(),
            sql: sql.into(),
            scenario_tag,
            embedding: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub example_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub hits: Vec<RetrievalHit>,
    pub k: usize,
}

#[derive(Debug, Error)]
pub enum FewShotError {
    #[error("duplicate example id '{0}'")]
    DuplicateId(String),
    #[error("example '{example_id}' has invalid SQL: {}", report.summary())]
    InvalidExampleSql { example_id: String, report: ValidationReport },
    #[error("cannot embed example: {0}")]
    Embedding(#[from] LlmError),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// In-memory example store. Wrap in a lock for concurrent use; retrieval
/// takes `&self` and additions `&mut self`.
pub struct FewShotRepository {
    catalog: SchemaCatalog,
    embedder: Arc<dyn Embedder>,
    examples: Vec<FewShotExample>,
    ids: HashSet<String>,
}

impl FewShotRepository {
    pub fn new(catalog: SchemaCatalog, embedder: Arc<dyn Embedder>) -> Self {
        FewShotRepository { catalog, embedder, examples: Vec::new(), ids: HashSet::new() }
    }

    /// Repository seeded with the bundled examples.
    pub fn starter(catalog: SchemaCatalog, embedder: Arc<dyn Embedder>) -> Result<Self, FewShotError> {
        let mut repo = Self::new(catalog, embedder);
        repo.extend_jsonl(STARTER_EXAMPLES)?;
        Ok(repo)
    }

    pub fn load_jsonl(path: &Path, catalog: SchemaCatalog, embedder: Arc<dyn Embedder>) -> Result<Self, FewShotError> {
        let mut repo = Self::new(catalog, embedder);
        repo.extend_jsonl(&std::fs::read_to_string(path)?)?;
        Ok(repo)
    }

    pub fn extend_jsonl(&mut self, text: &str) -> Result<usize, FewShotError> {
        let mut added = 0;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let example: FewShotExample =
                serde_json::from_str(line).map_err(|source| FewShotError::Json { line: i + 1, source })?;
            self.add_example(example)?;
            added += 1;
        }
        Ok(added)
    }

    pub fn to_jsonl(&self) -> String {
        self.examples
            .iter()
            .map(|e| serde_json::to_string(e).expect("example serializes") + "\n")
            .collect()
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<(), FewShotError> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn add_example(&mut self, mut example: FewShotExample) -> Result<(), FewShotError> {
        if self.ids.contains(&example.example_id) {
            return Err(FewShotError::DuplicateId(example.example_id));
        }
        let report = validate_sql(&example.sql, &self.catalog);
        if !report.is_ok() {
            return Err(FewShotError::InvalidExampleSql { example_id: example.example_id, report });
        }
        example.embedding = Some(self.embedder.embed(&example.question)?);
        self.ids.insert(example.example_id.clone());
        self.examples.push(example);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[FewShotExample] {
        &self.examples
    }

    pub fn get(&self, example_id: &str) -> Option<&FewShotExample> {
        self.examples.iter().find(|e| e.example_id == example_id)
    }

    /// Top `k` examples by cosine similarity, ties by id ascending.
    pub fn retrieve(&self, question: &str, k: usize) -> Result<RetrievalResult, LlmError> {
        if k == 0 || self.examples.is_empty() || question.trim().is_empty() {
            return Ok(RetrievalResult { hits: Vec::new(), k });
        }
        let query = self.embedder.embed(question)?;
        let mut scored: Vec<(f64, &str)> = self
            .examples
            .iter()
            .map(|e| (e.embedding.as_ref().expect("embedded on add").cosine(&query), e.example_id.as_str()))
            .collect();
        scored.sort_by(|a, b| similarity_rank(b.0).cmp(&similarity_rank(a.0)).then_with(|| a.1.cmp(b.1)));
        let hits = scored
            .into_iter()
            .take(k)
            .map(|(score, id)| RetrievalHit { example_id: id.to_string(), score })
            .collect();
        Ok(RetrievalResult { hits, k })
    }

    /// Retrieval resolved to full examples, most similar first.
    pub fn retrieve_examples(&self, question: &str, k: usize) -> Result<Vec<FewShotExample>, LlmError> {
        Ok(self
            .retrieve(question, k)?
            .hits
            .iter()
            .filter_map(|h| self.get(&h.example_id).cloned())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::LocalHashEmbedder;
    use crate::sql::Verdict;

    fn repo() -> FewShotRepository {
        FewShotRepository::starter(SchemaCatalog::traffic(), Arc::new(LocalHashEmbedder::default())).unwrap()
    }

    #[test]
    fn starter_covers_all_tags() {
        let repo = repo();
        assert!(repo.len() >= 12);
        for tag in ScenarioTag::ALL {
            assert!(repo.examples().iter().any(|e| e.scenario_tag == tag), "{tag}");
        }
        for e in repo.examples() {
            assert_eq!(validate_sql(&e.sql, &SchemaCatalog::traffic()).verdict, Verdict::Ok, "{}", e.example_id);
        }
    }

    #[test]
    fn self_retrieval_ranks_first() {
        let repo = repo();
        for e in repo.examples() {
            let result = repo.retrieve(&e.question, 1).unwrap();
            assert_eq!(result.hits.len(), 1);
            assert_eq!(result.hits[0].example_id, e.example_id);
            assert!((result.hits[0].score - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn k_zero_and_empty_repo() {
        let repo = repo();
        assert!(repo.retrieve("traffic on I-5", 0).unwrap().hits.is_empty());
        let empty = FewShotRepository::new(SchemaCatalog::traffic(), Arc::new(LocalHashEmbedder::default()));
        assert!(empty.retrieve("traffic on I-5", 3).unwrap().hits.is_empty());
        assert_eq!(repo.retrieve("traffic", 100).unwrap().hits.len(), repo.len());
    }

    #[test]
    fn add_rules() {
        let mut repo = repo();
        let n = repo.len();
        let drop = FewShotExample::new("bad", "drop it", "DROP TABLE dbo.cabinets", ScenarioTag::Counting);
        assert!(matches!(repo.add_example(drop), Err(FewShotError::InvalidExampleSql { .. })));
        let dup = FewShotExample::new("ex01", "q", "SELECT 1", ScenarioTag::Counting);
        assert!(matches!(repo.add_example(dup), Err(FewShotError::DuplicateId(_))));
        let risky = FewShotExample::new("r", "all rows", "SELECT * FROM dbo.MinuteDataNW", ScenarioTag::Counting);
        assert!(matches!(repo.add_example(risky), Err(FewShotError::InvalidExampleSql { .. })));
        repo.add_example(FewShotExample::new("new", "how many segments", "SELECT COUNT(*) FROM dbo.Segments", ScenarioTag::Counting))
            .unwrap();
        assert_eq!(repo.len(), n + 1);
        assert_eq!(repo.retrieve("how many segments", 1).unwrap().hits[0].example_id, "new");
    }

    #[test]
    fn jsonl_round_trip() {
        let repo = repo();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("examples.jsonl");
        repo.save_jsonl(&path).unwrap();
        let loaded =
            FewShotRepository::load_jsonl(&path, SchemaCatalog::traffic(), Arc::new(LocalHashEmbedder::default())).unwrap();
        assert_eq!(loaded.examples(), repo.examples());
        let line: serde_json::Value = serde_json::from_str(repo.to_jsonl().lines().next().unwrap()).unwrap();
        let mut keys: Vec<_> = line.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["example_id", "question", "scenario_tag", "sql"]);
    }
}
