//! Schema catalog, SQL validation and the embedded query store.

mod catalog;
mod store;
mod validate;

pub use catalog::{ColumnSchema, SchemaCatalog, SemanticType, TableSchema};
pub use store::{
    ExecutionError, ExecutionErrorKind, LoadError, QueryResult, SqlGateway, TableCounts, Value, DEFAULT_MAX_ROWS,
    DEFAULT_TIMEOUT,
};
pub use validate::{validate_sql, Diagnostic, SourceSpan, ValidationReport, Verdict};
