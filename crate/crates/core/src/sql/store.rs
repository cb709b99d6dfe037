//! Embedded read-only store over the six traffic tables, backed by SQLite.
//!
//! Tables live in an attached schema named `dbo`, so `dbo.MinuteDataNW`
//! resolves natively and unqualified names still work. The connection is
//! kept in `query_only` mode except while a load is in progress.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use log::debug;
use rusqlite::types::ValueRef;
use rusqlite::{params_from_iter, Connection, ErrorCode, OpenFlags};
use serde::{Deserialize, Serialize};
use sqlparser::ast::{LimitClause, SetExpr, Statement, TopQuantity};
use sqlparser::dialect::GenericDialect;
use sqlparser::parser::Parser;
use thiserror::Error;

use super::catalog::{SchemaCatalog, SemanticType, TableSchema};
use super::validate::{validate_sql, ValidationReport};
use crate::traffic::{table_file_name, Dataset};

pub const DEFAULT_MAX_ROWS: usize = 1000;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// A single result cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r}"),
            Value::Text(t) => f.write_str(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub row_count: usize,
    pub truncated: bool,
    pub execution_log: String,
}

impl QueryResult {
    /// Plain-text table of at most `limit` rows, for prompts and the CLI.
    pub fn render(&self, limit: usize) -> String {
        let mut out = self.columns.join(" | ");
        for row in self.rows.iter().take(limit) {
            out.push('\n');
            out.push_str(&row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" | "));
        }
        if self.rows.len() > limit {
            out.push_str(&format!("\n... {} more row(s)", self.rows.len() - limit));
        }
        if self.truncated {
            out.push_str("\n(result truncated at the row limit)");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecutionErrorKind {
    Engine,
    Timeout,
    NotReadOnly,
}

/// Failure to execute a query. `log` always carries the engine's message.
#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("{kind:?}: {log}")]
pub struct ExecutionError {
    pub kind: ExecutionErrorKind,
    pub log: String,
}

impl ExecutionError {
    fn engine(message: impl std::fmt::Display) -> Self {
        ExecutionError { kind: ExecutionErrorKind::Engine, log: format!("error: {message}") }
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("schema mismatch in {table}: unexpected columns {extra:?}, missing columns {missing:?}")]
    SchemaMismatch { table: String, extra: Vec<String>, missing: Vec<String> },
    #[error("missing CSV file for table {table} at {path}")]
    MissingTable { table: String, path: String },
    #[error("{table} line {line}: column {column}: cannot parse '{value}' as {expected:?}")]
    InvalidValue { table: String, line: u64, column: String, value: String, expected: SemanticType },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("engine error: {0}")]
    Engine(#[from] rusqlite::Error),
}

/// Row counts per table after a load.
pub type TableCounts = BTreeMap<String, u64>;

pub struct SqlGateway {
    catalog: SchemaCatalog,
    conn: Mutex<Connection>,
}

impl SqlGateway {
    /// Empty in-memory store with the catalog's tables created.
    pub fn in_memory(catalog: SchemaCatalog) -> Result<Self, LoadError> {
        let conn = Connection::open_in_memory()?;
        conn.execute_batch("ATTACH DATABASE ':memory:' AS dbo;")?;
        let gateway = SqlGateway { catalog, conn: Mutex::new(conn) };
        gateway.with_writes(|conn, catalog| create_tables(conn, catalog))?;
        Ok(gateway)
    }

    /// Opens a store previously written with [`SqlGateway::save_to`], read-only.
    pub fn open_file(path: &Path, catalog: SchemaCatalog) -> Result<Self, LoadError> {
        if !path.exists() {
            return Err(LoadError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("store file {} not found", path.display()),
            )));
        }
        let conn = Connection::open_in_memory_with_flags(OpenFlags::default())?;
        conn.execute("ATTACH DATABASE ?1 AS dbo", [format!("file:{}?mode=ro", path.display())])?;
        conn.execute_batch("PRAGMA query_only = 1;")?;
        Ok(SqlGateway { catalog, conn: Mutex::new(conn) })
    }

    pub fn catalog(&self) -> &SchemaCatalog {
        &self.catalog
    }

    fn lock(&self) -> MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    fn with_writes<T>(
        &self,
        f: impl FnOnce(&Connection, &SchemaCatalog) -> Result<T, LoadError>,
    ) -> Result<T, LoadError> {
        let conn = self.lock();
        conn.execute_batch("PRAGMA query_only = 0;")?;
        let result = f(&conn, &self.catalog);
        conn.execute_batch("PRAGMA query_only = 1;")?;
        result
    }

    /// Replaces the store contents with `dataset`.
    pub fn load_dataset(&self, dataset: &Dataset) -> Result<TableCounts, LoadError> {
        self.with_writes(|conn, catalog| {
            let tx = conn.unchecked_transaction()?;
            create_tables(&tx, catalog)?;
            insert_rows(&tx, "dbo.cabinets", dataset.detectors.iter().map(|d| {
                vec![
                    d.detector_id.clone().into(),
                    d.unit_name.clone().into(),
                    d.cabinet_id.clone().into(),
                    d.route.clone().into(),
                    d.direction.as_str().to_string().into(),
                    d.milepost.into(),
                    d.latitude.into(),
                    d.longitude.into(),
                    d.lane_class.as_str().to_string().into(),
                    d.segment_id.clone().into(),
                ]
            }))?;
            insert_rows(&tx, "dbo.cabinfo", dataset.cabinets.iter().map(|c| {
                vec![
                    c.cabinet_id.clone().into(),
                    c.station_name.clone().into(),
                    c.district.clone().into(),
                    c.county.clone().into(),
                    c.route.clone().into(),
                    c.milepost.into(),
                ]
            }))?;
            insert_rows(&tx, "dbo.MinuteDataNW", dataset.observations.iter().map(|o| {
                vec![
                    o.detector_id.clone().into(),
                    o.timestamp.to_string().into(),
                    o.local_time.clone().into(),
                    o.speed.into(),
                    i64::from(o.volume).into(),
                    o.occupancy.into(),
                ]
            }))?;
            insert_rows(&tx, "dbo.Segments", dataset.segments.iter().map(|s| {
                vec![
                    s.segment_id.clone().into(),
                    s.route.clone().into(),
                    s.direction.as_str().to_string().into(),
                    s.begin_milepost.into(),
                    s.end_milepost.into(),
                    s.length_miles.into(),
                ]
            }))?;
            insert_rows(&tx, "dbo.SegmentTrafficIndex", dataset.segment_index.iter().map(|r| {
                vec![
                    r.segment_id.clone().into(),
                    r.route.clone().into(),
                    r.timestamp.to_string().into(),
                    r.local_time.clone().into(),
                    r.lane_class.as_str().to_string().into(),
                    r.avg_speed.into(),
                    i64::from(r.total_volume).into(),
                    r.tps.into(),
                ]
            }))?;
            insert_rows(&tx, "dbo.TrafficIndex", dataset.daily_stats.iter().map(|r| {
                vec![
                    r.segment_id.clone().into(),
                    r.local_date.clone().into(),
                    r.day_of_week.clone().into(),
                    r.lane_class.as_str().to_string().into(),
                    r.avg_tps.into(),
                    r.min_tps.into(),
                    r.max_tps.into(),
                    r.avg_speed.into(),
                    r.vmt.into(),
                ]
            }))?;
            tx.commit()?;
            Ok(())
        })?;
        self.table_counts()
    }

    /// Replaces the store contents with the CSV files in `dir`, one per
    /// table, headers matching the catalog.
    pub fn load_csv_dir(&self, dir: &Path) -> Result<TableCounts, LoadError> {
        // Check every header before touching the store.
        let mut readers = Vec::new();
        for table in &self.catalog.tables {
            let path = dir.join(table_file_name(&table.name));
            if !path.exists() {
                return Err(LoadError::MissingTable { table: table.name.clone(), path: path.display().to_string() });
            }
            let mut reader = csv::Reader::from_reader(File::open(&path)?);
            let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
            let extra: Vec<String> =
                header.iter().filter(|h| table.column(h).is_none()).cloned().collect();
            let missing: Vec<String> = table
                .columns
                .iter()
                .filter(|c| !header.iter().any(|h| h.eq_ignore_ascii_case(&c.name)))
                .map(|c| c.name.clone())
                .collect();
            if !extra.is_empty() || !missing.is_empty() {
                return Err(LoadError::SchemaMismatch { table: table.name.clone(), extra, missing });
            }
            let order: Vec<usize> = table
                .columns
                .iter()
                .map(|c| header.iter().position(|h| h.eq_ignore_ascii_case(&c.name)).unwrap())
                .collect();
            readers.push((table.clone(), reader, order));
        }
        self.with_writes(|conn, catalog| {
            let tx = conn.unchecked_transaction()?;
            create_tables(&tx, catalog)?;
            for (table, mut reader, order) in readers {
                let mut stmt = tx.prepare(&insert_sql(&table))?;
                for record in reader.records() {
                    let record = record?;
                    let line = record.position().map_or(0, |p| p.line());
                    let mut values = Vec::with_capacity(order.len());
                    for (column, idx) in table.columns.iter().zip(&order) {
                        let raw = record.get(*idx).unwrap_or("");
                        values.push(parse_cell(raw, column.ty).ok_or_else(|| LoadError::InvalidValue {
                            table: table.name.clone(),
                            line,
                            column: column.name.clone(),
                            value: raw.to_string(),
                            expected: column.ty,
                        })?);
                    }
                    stmt.execute(params_from_iter(values))?;
                }
            }
            tx.commit()?;
            Ok(())
        })?;
        self.table_counts()
    }

    /// Writes the loaded tables to a standalone SQLite file.
    pub fn save_to(&self, path: &Path) -> Result<(), LoadError> {
        if path.exists() {
            std::fs::remove_file(path)?;
        }
        self.with_writes(|conn, _| {
            conn.execute("VACUUM dbo INTO ?1", [path.display().to_string()])?;
            Ok(())
        })
    }

    pub fn table_counts(&self) -> Result<TableCounts, LoadError> {
        let conn = self.lock();
        let mut counts = TableCounts::new();
        for table in &self.catalog.tables {
            let n: i64 = conn.query_row(&format!("SELECT COUNT(*) FROM {}", table.name), [], |r| r.get(0))?;
            counts.insert(table.name.clone(), n as u64);
        }
        Ok(counts)
    }

    pub fn validate(&self, query: &str) -> ValidationReport {
        validate_sql(query, &self.catalog)
    }

    /// Executes a read-only query, truncating to `max_rows` and interrupting
    /// the engine after `timeout`.
    pub fn execute(&self, query: &str, max_rows: usize, timeout: Duration) -> Result<QueryResult, ExecutionError> {
        if !starts_like_query(query) {
            return Err(ExecutionError {
                kind: ExecutionErrorKind::NotReadOnly,
                log: "error: only SELECT / WITH queries may be executed".into(),
            });
        }
        let sql = rewrite_top(query).unwrap_or_else(|| query.to_string());
        let conn = self.lock();
        let deadline = Instant::now() + timeout;
        conn.progress_handler(1000, Some(move || Instant::now() > deadline))
            .map_err(ExecutionError::engine)?;
        let started = Instant::now();
        let outcome = run_query(&conn, &sql, max_rows);
        let _ = conn.progress_handler(1000, None::<fn() -> bool>);
        debug!("query finished in {:?}: {}", started.elapsed(), sql);
        outcome.map_err(|err| match err {
            RunError::Engine(e) if is_interrupt(&e) => ExecutionError {
                kind: ExecutionErrorKind::Timeout,
                log: format!("error: query interrupted after exceeding the {} ms timeout", timeout.as_millis()),
            },
            RunError::Engine(e) => ExecutionError::engine(e),
            RunError::NotReadOnly => ExecutionError {
                kind: ExecutionErrorKind::NotReadOnly,
                log: "error: statement would modify the database".into(),
            },
        })
    }
}

enum RunError {
    Engine(rusqlite::Error),
    NotReadOnly,
}

impl From<rusqlite::Error> for RunError {
    fn from(e: rusqlite::Error) -> Self {
        RunError::Engine(e)
    }
}

fn run_query(conn: &Connection, sql: &str, max_rows: usize) -> Result<QueryResult, RunError> {
    let mut stmt = conn.prepare(sql)?;
    if !stmt.readonly() {
        return Err(RunError::NotReadOnly);
    }
    let columns: Vec<String> = stmt.column_names().iter().map(|c| c.to_string()).collect();
    let width = columns.len();
    let mut rows = stmt.query([])?;
    let mut out = Vec::new();
    let mut truncated = false;
    while let Some(row) = rows.next()? {
        if out.len() == max_rows {
            truncated = true;
            break;
        }
        let mut values = Vec::with_capacity(width);
        for i in 0..width {
            values.push(match row.get_ref(i)? {
                ValueRef::Null => Value::Null,
                ValueRef::Integer(v) => Value::Integer(v),
                ValueRef::Real(v) => Value::Real(v),
                ValueRef::Text(t) => Value::Text(String::from_utf8_lossy(t).into_owned()),
                ValueRef::Blob(b) => Value::Text(hex::encode(b)),
            });
        }
        out.push(values);
    }
    let mut execution_log = format!("query executed; {} row(s) returned", out.len());
    if truncated {
        execution_log.push_str(&format!("; result truncated at max_rows={max_rows}"));
    }
    Ok(QueryResult { columns, row_count: out.len(), rows: out, truncated, execution_log })
}

fn is_interrupt(e: &rusqlite::Error) -> bool {
    matches!(e, rusqlite::Error::SqliteFailure(f, _) if f.code == ErrorCode::OperationInterrupted)
}

fn starts_like_query(sql: &str) -> bool {
    let mut rest = sql.trim_start();
    loop {
        if let Some(after) = rest.strip_prefix("--") {
            rest = after.split_once('\n').map_or("", |(_, tail)| tail).trim_start();
        } else if let Some(after) = rest.strip_prefix("/*") {
            rest = after.split_once("*/").map_or("", |(_, tail)| tail).trim_start();
        } else if let Some(after) = rest.strip_prefix('(') {
            rest = after.trim_start();
        } else {
            break;
        }
    }
    let keyword: String = rest.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
    matches!(keyword.to_ascii_uppercase().as_str(), "SELECT" | "WITH" | "VALUES")
}

/// `SELECT TOP n ...` is accepted by the validator; SQLite wants `LIMIT n`.
fn rewrite_top(sql: &str) -> Option<String> {
    let mut statements = Parser::parse_sql(&GenericDialect {}, sql).ok()?;
    if statements.len() != 1 {
        return None;
    }
    let Statement::Query(query) = &mut statements[0] else {
        return None;
    };
    if query.limit_clause.is_some() {
        return None;
    }
    let SetExpr::Select(select) = query.body.as_mut() else {
        return None;
    };
    let top = select.top.take()?;
    if top.percent || top.with_ties {
        return None;
    }
    let limit = match top.quantity? {
        TopQuantity::Expr(expr) => expr,
        TopQuantity::Constant(n) => sqlparser::ast::Expr::value(sqlparser::ast::Value::Number(n.to_string(), false)),
    };
    query.limit_clause = Some(LimitClause::LimitOffset { limit: Some(limit), offset: None, limit_by: Vec::new() });
    Some(statements[0].to_string())
}

fn create_tables(conn: &Connection, catalog: &SchemaCatalog) -> Result<(), LoadError> {
    for table in &catalog.tables {
        let columns = table
            .columns
            .iter()
            .map(|c| format!("\"{}\" {}", c.name, c.ty.sqlite_type()))
            .collect::<Vec<_>>()
            .join(", ");
        conn.execute_batch(&format!("DROP TABLE IF EXISTS {name}; CREATE TABLE {name} ({columns});", name = table.name))?;
        let schema = table.schema_name().map(|s| format!("{s}.")).unwrap_or_default();
        let bare = table.bare_name();
        for key in ["timestamp", "detector_id", "segment_id"] {
            if table.column(key).is_some() {
                conn.execute_batch(&format!("CREATE INDEX {schema}idx_{bare}_{key} ON {bare} (\"{key}\");"))?;
            }
        }
    }
    Ok(())
}

fn insert_sql(table: &TableSchema) -> String {
    let placeholders = (1..=table.columns.len()).map(|i| format!("?{i}")).collect::<Vec<_>>().join(", ");
    format!("INSERT INTO {} VALUES ({placeholders})", table.name)
}

fn insert_rows(
    conn: &Connection,
    table: &str,
    rows: impl Iterator<Item = Vec<rusqlite::types::Value>>,
) -> Result<(), LoadError> {
    let schema = SchemaCatalog::traffic();
    let table = schema.table(table).expect("known table");
    let mut stmt = conn.prepare(&insert_sql(table))?;
    for row in rows {
        stmt.execute(params_from_iter(row))?;
    }
    Ok(())
}

fn parse_cell(raw: &str, ty: SemanticType) -> Option<rusqlite::types::Value> {
    use rusqlite::types::Value as V;
    if raw.is_empty() && !matches!(ty, SemanticType::Text) {
        return Some(V::Null);
    }
    match ty {
        SemanticType::Text | SemanticType::Timestamp => Some(V::Text(raw.to_string())),
        SemanticType::Integer => raw.parse().ok().map(V::Integer),
        SemanticType::Real => raw.parse().ok().map(V::Real),
    }
}
