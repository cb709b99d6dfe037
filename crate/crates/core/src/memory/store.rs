//! Session persistence.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use rusqlite::{params, Connection, OptionalExtension};

use super::{ChatSession, ChatTurn, MemoryError, Speaker};
use crate::llm::EmbeddingVector;

pub trait SessionStore: Send + Sync {
    fn create(&self, session: &ChatSession) -> Result<(), MemoryError>;
    fn load(&self, session_id: &str) -> Result<Option<ChatSession>, MemoryError>;
    /// Replaces the stored session with `session`.
    fn save(&self, session: &ChatSession) -> Result<(), MemoryError>;
    fn list(&self) -> Result<Vec<String>, MemoryError>;
}

#[derive(Default)]
pub struct InMemorySessionStore {
    sessions: Mutex<BTreeMap<String, ChatSession>>,
}

impl InMemorySessionStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl SessionStore for InMemorySessionStore {
    fn create(&self, session: &ChatSession) -> Result<(), MemoryError> {
        let mut sessions = self.sessions.lock().unwrap_or_else(|p| p.into_inner());
        if sessions.contains_key(&session.session_id) {
            return Err(MemoryError::DuplicateSession(session.session_id.clone()));
        }
        sessions.insert(session.session_id.clone(), session.clone());
        Ok(())
    }

    fn load(&self, session_id: &str) -> Result<Option<ChatSession>, MemoryError> {
        Ok(self.sessions.lock().unwrap_or_else(|p| p.into_inner()).get(session_id).cloned())
    }

    fn save(&self, session: &ChatSession) -> Result<(), MemoryError> {
        let mut sessions = self.sessions.lock().unwrap_or_else(|p| p.into_inner());
        match sessions.get_mut(&session.session_id) {
            Some(slot) => {
                *slot = session.clone();
                Ok(())
            }
            None => Err(MemoryError::UnknownSession(session.session_id.clone())),
        }
    }

    fn list(&self) -> Result<Vec<String>, MemoryError> {
        Ok(self.sessions.lock().unwrap_or_else(|p| p.into_inner()).keys().cloned().collect())
    }
}

/// Sessions in their own SQLite file, separate from the traffic store.
pub struct SqliteSessionStore {
    conn: Mutex<Connection>,
}

impl SqliteSessionStore {
    pub fn open(path: &Path) -> Result<Self, MemoryError> {
        Self::init(Connection::open(path)?)
    }

    pub fn in_memory() -> Result<Self, MemoryError> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self, MemoryError> {
        conn.execute_batch(
            "CREATE TABLE IF NOT EXISTS sessions (session_id TEXT PRIMARY KEY, created_at TEXT NOT NULL);
             CREATE TABLE IF NOT EXISTS turns (
                 session_id TEXT NOT NULL REFERENCES sessions(session_id),
                 turn_id INTEGER NOT NULL,
                 speaker TEXT NOT NULL,
                 text TEXT NOT NULL,
                 embedding TEXT,
                 instant TEXT NOT NULL,
                 PRIMARY KEY (session_id, turn_id));",
        )?;
        Ok(SqliteSessionStore { conn: Mutex::new(conn) })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|p| p.into_inner())
    }
}

fn parse_instant(raw: &str) -> Result<DateTime<Utc>, MemoryError> {
    DateTime::parse_from_rfc3339(raw)
        .map(|d| d.with_timezone(&Utc))
        .map_err(|e| MemoryError::Storage(format!("bad instant '{raw}': {e}")))
}

impl SessionStore for SqliteSessionStore {
    fn create(&self, session: &ChatSession) -> Result<(), MemoryError> {
        let conn = self.lock();
        let exists: Option<i64> = conn
            .query_row("SELECT 1 FROM sessions WHERE session_id = ?1", [&session.session_id], |r| r.get(0))
            .optional()?;
        if exists.is_some() {
            return Err(MemoryError::DuplicateSession(session.session_id.clone()));
        }
        conn.execute(
            "INSERT INTO sessions (session_id, created_at) VALUES (?1, ?2)",
            params![session.session_id, session.created_at.to_rfc3339()],
        )?;
        drop(conn);
        self.save(session)
    }

    fn load(&self, session_id: &str) -> Result<Option<ChatSession>, MemoryError> {
        let conn = self.lock();
        let created: Option<String> = conn
            .query_row("SELECT created_at FROM sessions WHERE session_id = ?1", [session_id], |r| r.get(0))
            .optional()?;
        let Some(created) = created else {
            return Ok(None);
        };
        let mut stmt = conn.prepare(
            "SELECT turn_id, speaker, text, embedding, instant FROM turns WHERE session_id = ?1 ORDER BY turn_id",
        )?;
        let rows = stmt.query_map([session_id], |r| {
            Ok((r.get::<_, i64>(0)?, r.get::<_, String>(1)?, r.get::<_, String>(2)?, r.get::<_, Option<String>>(3)?, r.get::<_, String>(4)?))
        })?;
        let mut turns = Vec::new();
        for row in rows {
            let (turn_id, speaker, text, embedding, instant) = row?;
            let embedding = match embedding {
                Some(raw) => Some(
                    serde_json::from_str::<EmbeddingVector>(&raw).map_err(|e| MemoryError::Storage(e.to_string()))?,
                ),
                None => None,
            };
            turns.push(ChatTurn {
                turn_id: turn_id as u64,
                speaker: if speaker == "user" { Speaker::User } else { Speaker::Assistant },
                text,
                embedding,
                instant: parse_instant(&instant)?,
            });
        }
        Ok(Some(ChatSession { session_id: session_id.to_string(), created_at: parse_instant(&created)?, turns }))
    }

    fn save(&self, session: &ChatSession) -> Result<(), MemoryError> {
        let conn = self.lock();
        let known: Option<i64> = conn
            .query_row("SELECT 1 FROM sessions WHERE session_id = ?1", [&session.session_id], |r| r.get(0))
            .optional()?;
        if known.is_none() {
            return Err(MemoryError::UnknownSession(session.session_id.clone()));
        }
        let tx = conn.unchecked_transaction()?;
        tx.execute("DELETE FROM turns WHERE session_id = ?1", [&session.session_id])?;
        {
            let mut insert = tx.prepare(
                "INSERT INTO turns (session_id, turn_id, speaker, text, embedding, instant) VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
            )?;
            for turn in &session.turns {
                let embedding = turn.embedding.as_ref().map(|e| serde_json::to_string(e).expect("embedding serializes"));
                insert.execute(params![
                    session.session_id,
                    turn.turn_id as i64,
                    turn.speaker.as_str(),
                    turn.text,
                    embedding,
                    turn.instant.to_rfc3339(),
                ])?;
            }
        }
        tx.commit()?;
        Ok(())
    }

    fn list(&self) -> Result<Vec<String>, MemoryError> {
        let conn = self.lock();
        let mut stmt = conn.prepare("SELECT session_id FROM sessions ORDER BY session_id")?;
        let ids = stmt.query_map([], |r| r.get(0))?.collect::<Result<Vec<String>, _>>()?;
        Ok(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{Clock, StepClock};
    use crate::llm::LocalHashEmbedder;

    fn exercise(store: &dyn SessionStore) {
        let clock = StepClock::default();
        let mut a = ChatSession::new("a", clock.now());
        let b = ChatSession::new("b", clock.now());
        store.create(&a).unwrap();
        store.create(&b).unwrap();
        assert!(matches!(store.create(&a), Err(MemoryError::DuplicateSession(_))));
        a.commit("speed on I-5?", "about 55 mph", &LocalHashEmbedder::default(), clock.now()).unwrap();
        store.save(&a).unwrap();
        assert_eq!(store.load("a").unwrap().unwrap(), a);
        assert!(store.load("b").unwrap().unwrap().turns.is_empty());
        assert!(store.load("zzz").unwrap().is_none());
        assert!(matches!(store.save(&ChatSession::new("zzz", clock.now())), Err(MemoryError::UnknownSession(_))));
        assert_eq!(store.list().unwrap(), vec!["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn in_memory_store() {
        exercise(&InMemorySessionStore::new());
    }

    #[test]
    fn sqlite_store_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sessions.db");
        exercise(&SqliteSessionStore::open(&path).unwrap());
        let reopened = SqliteSessionStore::open(&path).unwrap();
        let a = reopened.load("a").unwrap().unwrap();
        assert_eq!(a.turns.len(), 2);
        assert!(a.turns[0].embedding.is_some());
    }
}
