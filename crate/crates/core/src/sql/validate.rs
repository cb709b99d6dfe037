//! Pre-execution checks for generated SQL: a single read-only SELECT whose
//! every table and column reference resolves in the catalog, with an
//! advisory flag for unbounded scans of minute-resolution tables.

use std::fmt;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use sqlparser::ast::{
    Expr, GroupByExpr, Ident, JoinConstraint, JoinOperator, LimitClause, ObjectName, ObjectNamePart, OrderBy,
    OrderByKind, Query, Select, SelectItem, SelectItemQualifiedWildcardKind, SetExpr, Statement, TableFactor,
    TableWithJoins, Visit, Visitor,
};
use sqlparser::dialect::GenericDialect;
use sqlparser::parser::Parser;
use sqlparser::keywords::Keyword;
use sqlparser::tokenizer::{Span, Token, TokenWithSpan, Tokenizer};

use super::catalog::SchemaCatalog;

const AGGREGATES: &[&str] = &["count", "sum", "avg", "min", "max", "total", "group_concat", "string_agg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Ok,
    SyntaxError,
    ForbiddenStatement,
    UnknownTable,
    UnknownColumn,
    RowLimitRisk,
}

impl Verdict {
    fn severity(self) -> u8 {
        match self {
            Verdict::Ok => 0,
            Verdict::RowLimitRisk => 1,
            Verdict::UnknownColumn => 2,
            Verdict::UnknownTable => 3,
            Verdict::ForbiddenStatement => 4,
            Verdict::SyntaxError => 5,
        }
    }

    /// Whether the verdict stops a query from reaching the engine.
    /// `RowLimitRisk` is advisory only.
    pub fn is_blocking(self) -> bool {
        !matches!(self, Verdict::Ok | Verdict::RowLimitRisk)
    }

    pub fn allows_execution(self) -> bool {
        !self.is_blocking()
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// 1-based line/column range in the query text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpan {
    pub line: u64,
    pub column: u64,
    pub end_line: u64,
    pub end_column: u64,
}

impl SourceSpan {
    fn from_span(span: Span) -> Option<Self> {
        (span.start.line > 0).then_some(SourceSpan {
            line: span.start.line,
            column: span.start.column,
            end_line: span.end.line,
            end_column: span.end.column,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: Verdict,
    pub message: String,
    pub span: Option<SourceSpan>,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.span {
            Some(s) => write!(f, "{} at line {}, column {}: {}", self.code, s.line, s.column, self.message),
            None => write!(f, "{}: {}", self.code, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub verdict: Verdict,
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationReport {
    fn from_diagnostics(diagnostics: Vec<Diagnostic>) -> Self {
        let verdict = diagnostics
            .iter()
            .map(|d| d.code)
            .max_by_key(|v| v.severity())
            .unwrap_or(Verdict::Ok);
        ValidationReport { verdict, diagnostics }
    }

    pub fn is_ok(&self) -> bool {
        self.verdict == Verdict::Ok
    }

    /// Diagnostics rendered one per line.
    pub fn summary(&self) -> String {
        if self.diagnostics.is_empty() {
            return "Ok".to_string();
        }
        self.diagnostics.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n")
    }
}

/// Validates `query` against `catalog`. Every failure is reported as a
/// verdict; this never errors.
pub fn validate_sql(query: &str, catalog: &SchemaCatalog) -> ValidationReport {
    if query.trim().is_empty() {
        return ValidationReport::from_diagnostics(vec![Diagnostic {
            code: Verdict::SyntaxError,
            message: "empty query".into(),
            span: None,
        }]);
    }
    if let Some(span) = trailing_comma(query) {
        return ValidationReport::from_diagnostics(vec![Diagnostic {
            code: Verdict::SyntaxError,
            message: "trailing comma before end of list".into(),
            span: Some(span),
        }]);
    }
    let statements = match Parser::parse_sql(&GenericDialect {}, query) {
        Ok(statements) => statements,
        Err(err) => {
            let message = err.to_string();
            let span = parse_error_location(&message);
            return ValidationReport::from_diagnostics(vec![Diagnostic { code: Verdict::SyntaxError, message, span }]);
        }
    };
    if statements.is_empty() {
        return ValidationReport::from_diagnostics(vec![Diagnostic {
            code: Verdict::SyntaxError,
            message: "no statement found".into(),
            span: None,
        }]);
    }

    let mut resolver = Resolver { catalog, diagnostics: Vec::new(), ctes: Vec::new() };
    if statements.len() > 1 {
        resolver.push(Verdict::ForbiddenStatement, "only a single SELECT statement is allowed", None);
    }
    for statement in &statements {
        match statement {
            Statement::Query(query) => {
                if let Some(reason) = forbidden_in_query(query) {
                    resolver.push(Verdict::ForbiddenStatement, reason, None);
                    continue;
                }
                resolver.check_query(query, None);
                if let Some((message, span)) = row_limit_risk(query, catalog) {
                    resolver.push(Verdict::RowLimitRisk, message, span);
                }
            }
            other => {
                let keyword = other.to_string().split_whitespace().take(2).collect::<Vec<_>>().join(" ");
                resolver.push(
                    Verdict::ForbiddenStatement,
                    format!("only read-only SELECT statements are allowed, found '{keyword}'"),
                    None,
                );
            }
        }
    }
    ValidationReport::from_diagnostics(resolver.diagnostics)
}

/// The generic dialect accepts `SELECT a, FROM t`; SQLite does not.
fn trailing_comma(query: &str) -> Option<SourceSpan> {
    let tokens = Tokenizer::new(&GenericDialect {}, query).tokenize_with_location().ok()?;
    let mut significant = tokens.iter().filter(|t| !matches!(t.token, Token::Whitespace(_)));
    let mut prev = significant.next()?;
    for next in significant.chain(std::iter::once(&TokenWithSpan::wrap(Token::EOF))) {
        let closes = match &next.token {
            Token::RParen | Token::EOF | Token::SemiColon => true,
            Token::Word(w) => matches!(w.keyword, Keyword::FROM | Keyword::WHERE | Keyword::GROUP | Keyword::ORDER | Keyword::LIMIT),
            _ => false,
        };
        if prev.token == Token::Comma && closes {
            return SourceSpan::from_span(prev.span);
        }
        prev = next;
    }
    None
}

fn parse_error_location(message: &str) -> Option<SourceSpan> {
    let rest = &message[message.rfind("Line: ")? + "Line: ".len()..];
    let (line, rest) = rest.split_once(", Column: ")?;
    let column: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    let line = line.trim().parse().ok()?;
    let column = column.parse().ok()?;
    Some(SourceSpan { line, column, end_line: line, end_column: column })
}

fn forbidden_in_query(query: &Query) -> Option<String> {
    fn body(set: &SetExpr) -> Option<String> {
        match set {
            SetExpr::Insert(_) | SetExpr::Update(_) | SetExpr::Delete(_) | SetExpr::Merge(_) => {
                Some("data-modifying statement inside a query".into())
            }
            SetExpr::Select(select) if select.into.is_some() => Some("SELECT INTO writes a table".into()),
            SetExpr::SetOperation { left, right, .. } => body(left).or_else(|| body(right)),
            SetExpr::Query(q) => forbidden_in_query(q),
            _ => None,
        }
    }
    if !query.locks.is_empty() {
        return Some("locking clauses are not allowed".into());
    }
    body(&query.body)
}

fn ident_key(ident: &Ident) -> String {
    ident.value.to_lowercase()
}

fn object_name_parts(name: &ObjectName) -> Vec<&Ident> {
    name.0
        .iter()
        .filter_map(|part| match part {
            ObjectNamePart::Identifier(ident) => Some(ident),
            _ => None,
        })
        .collect()
}

fn object_name_span(name: &ObjectName) -> Option<SourceSpan> {
    let parts = object_name_parts(name);
    let first = parts.first()?;
    let last = parts.last()?;
    SourceSpan::from_span(Span::new(first.span.start, last.span.end))
}

fn object_name_key(name: &ObjectName) -> String {
    object_name_parts(name).iter().map(|i| ident_key(i)).collect::<Vec<_>>().join(".")
}

/// Something a column reference can resolve against.
#[derive(Debug, Clone)]
struct Source {
    qualifiers: Vec<String>,
    /// `None` when the column set is unknown; matches anything.
    columns: Option<Vec<String>>,
}

struct Scope<'p> {
    sources: Vec<Source>,
    aliases: Vec<String>,
    parent: Option<&'p Scope<'p>>,
}

impl Scope<'_> {
    fn source_named(&self, qualifier: &str) -> Option<&Source> {
        let mut scope = Some(self);
        while let Some(s) = scope {
            if let Some(found) = s.sources.iter().find(|src| src.qualifiers.iter().any(|q| q == qualifier)) {
                return Some(found);
            }
            scope = s.parent;
        }
        None
    }

    fn resolves(&self, column: &str, allow_aliases: bool) -> bool {
        if allow_aliases && self.aliases.iter().any(|a| a == column) {
            return true;
        }
        let mut scope = Some(self);
        while let Some(s) = scope {
            if s.sources.iter().any(|src| match &src.columns {
                None => true,
                Some(cols) => cols.iter().any(|c| c == column),
            }) {
                return true;
            }
            scope = s.parent;
        }
        false
    }

    fn known_columns(&self) -> Vec<&str> {
        let mut out = Vec::new();
        let mut scope = Some(self);
        while let Some(s) = scope {
            for src in &s.sources {
                if let Some(cols) = &src.columns {
                    out.extend(cols.iter().map(String::as_str));
                }
            }
            scope = s.parent;
        }
        out
    }
}

struct Resolver<'c> {
    catalog: &'c SchemaCatalog,
    diagnostics: Vec<Diagnostic>,
    /// Stack of visible common table expressions: (name, columns).
    ctes: Vec<(String, Option<Vec<String>>)>,
}

impl Resolver<'_> {
    fn push(&mut self, code: Verdict, message: impl Into<String>, span: Option<SourceSpan>) {
        self.diagnostics.push(Diagnostic { code, message: message.into(), span });
    }

    /// Returns the query's output column names when they are knowable.
    fn check_query(&mut self, query: &Query, outer: Option<&Scope<'_>>) -> Option<Vec<String>> {
        let frame = self.ctes.len();
        if let Some(with) = &query.with {
            for cte in &with.cte_tables {
                let columns = self.check_query(&cte.query, outer);
                let columns = if cte.alias.columns.is_empty() {
                    columns
                } else {
                    Some(cte.alias.columns.iter().map(|c| ident_key(&c.name)).collect())
                };
                self.ctes.push((ident_key(&cte.alias.name), columns));
            }
        }
        let output = self.check_set_expr(&query.body, outer, query.order_by.as_ref());
        if let Some(limit) = &query.limit_clause {
            let empty = Scope { sources: Vec::new(), aliases: Vec::new(), parent: outer };
            match limit {
                LimitClause::LimitOffset { limit, offset, .. } => {
                    if let Some(expr) = limit {
                        self.check_expr(expr, &empty, false);
                    }
                    if let Some(offset) = offset {
                        self.check_expr(&offset.value, &empty, false);
                    }
                }
                LimitClause::OffsetCommaLimit { offset, limit } => {
                    self.check_expr(offset, &empty, false);
                    self.check_expr(limit, &empty, false);
                }
            }
        }
        self.ctes.truncate(frame);
        output
    }

    fn check_set_expr(
        &mut self,
        body: &SetExpr,
        outer: Option<&Scope<'_>>,
        order_by: Option<&OrderBy>,
    ) -> Option<Vec<String>> {
        match body {
            SetExpr::Select(select) => self.check_select(select, outer, order_by),
            SetExpr::Query(query) => {
                let output = self.check_query(query, outer);
                self.check_order_by_output(order_by, output.as_deref(), outer);
                output
            }
            SetExpr::SetOperation { left, right, .. } => {
                let output = self.check_set_expr(left, outer, None);
                self.check_set_expr(right, outer, None);
                self.check_order_by_output(order_by, output.as_deref(), outer);
                output
            }
            SetExpr::Values(values) => {
                let empty = Scope { sources: Vec::new(), aliases: Vec::new(), parent: outer };
                for row in &values.rows {
                    for expr in &row.content {
                        self.check_expr(expr, &empty, false);
                    }
                }
                let width = values.rows.first().map_or(0, |r| r.content.len());
                Some((1..=width).map(|i| format!("column{i}")).collect())
            }
            _ => None,
        }
    }

    fn check_order_by_output(&mut self, order_by: Option<&OrderBy>, output: Option<&[String]>, outer: Option<&Scope<'_>>) {
        let Some(OrderBy { kind: OrderByKind::Expressions(exprs), .. }) = order_by else {
            return;
        };
        let scope = Scope {
            sources: vec![Source { qualifiers: Vec::new(), columns: output.map(|o| o.to_vec()) }],
            aliases: Vec::new(),
            parent: outer,
        };
        for item in exprs {
            self.check_expr(&item.expr, &scope, false);
        }
    }

    fn add_table_factor(&mut self, factor: &TableFactor, outer: Option<&Scope<'_>>, sources: &mut Vec<Source>) {
        match factor {
            TableFactor::Table { name, alias, .. } => {
                let key = object_name_key(name);
                let alias_key = alias.as_ref().map(|a| ident_key(&a.name));
                let cte = if key.contains('.') {
                    None
                } else {
                    self.ctes.iter().rev().find(|(cte, _)| *cte == key).map(|(_, cols)| cols.clone())
                };
                let (mut qualifiers, columns) = if let Some(columns) = cte {
                    (vec![key.clone()], columns)
                } else if let Some(table) = self.catalog.table(&key) {
                    let bare = table.bare_name().to_lowercase();
                    let full = table.name.to_lowercase();
                    let cols = table.columns.iter().map(|c| c.name.to_lowercase()).collect();
                    (vec![bare, full], Some(cols))
                } else {
                    let known = self.catalog.table_names().join(", ");
                    self.push(
                        Verdict::UnknownTable,
                        format!("unknown table '{name}'; known tables: {known}"),
                        object_name_span(name),
                    );
                    (vec![key.clone()], None)
                };
                if let Some(alias) = alias_key {
                    qualifiers = vec![alias];
                }
                let columns = match alias {
                    Some(a) if !a.columns.is_empty() => Some(a.columns.iter().map(|c| ident_key(&c.name)).collect()),
                    _ => columns,
                };
                sources.push(Source { qualifiers, columns });
            }
            TableFactor::Derived { subquery, alias, .. } => {
                let output = self.check_query(subquery, outer);
                let qualifiers = alias.iter().map(|a| ident_key(&a.name)).collect();
                let columns = match alias {
                    Some(a) if !a.columns.is_empty() => Some(a.columns.iter().map(|c| ident_key(&c.name)).collect()),
                    _ => output,
                };
                sources.push(Source { qualifiers, columns });
            }
            TableFactor::NestedJoin { table_with_joins, alias } => {
                let mut nested = Vec::new();
                self.add_table_with_joins(table_with_joins, outer, &mut nested);
                if let Some(alias) = alias {
                    let columns = nested
                        .iter()
                        .map(|s| s.columns.clone())
                        .collect::<Option<Vec<_>>>()
                        .map(|cols| cols.concat());
                    sources.push(Source { qualifiers: vec![ident_key(&alias.name)], columns });
                } else {
                    sources.extend(nested);
                }
            }
            other => {
                // Table-valued functions and dialect extensions: columns unknown.
                let qualifiers = match other {
                    TableFactor::TableFunction { alias, .. }
                    | TableFactor::Function { alias, .. }
                    | TableFactor::UNNEST { alias, .. } => alias.iter().map(|a| ident_key(&a.name)).collect(),
                    _ => Vec::new(),
                };
                sources.push(Source { qualifiers, columns: None });
            }
        }
    }

    fn add_table_with_joins(&mut self, twj: &TableWithJoins, outer: Option<&Scope<'_>>, sources: &mut Vec<Source>) {
        self.add_table_factor(&twj.relation, outer, sources);
        for join in &twj.joins {
            self.add_table_factor(&join.relation, outer, sources);
        }
    }

    fn join_constraints(twj: &TableWithJoins) -> impl Iterator<Item = &JoinConstraint> {
        twj.joins.iter().filter_map(|join| match &join.join_operator {
            JoinOperator::Join(c)
            | JoinOperator::Inner(c)
            | JoinOperator::Left(c)
            | JoinOperator::LeftOuter(c)
            | JoinOperator::Right(c)
            | JoinOperator::RightOuter(c)
            | JoinOperator::FullOuter(c)
            | JoinOperator::CrossJoin(c)
            | JoinOperator::Semi(c)
            | JoinOperator::LeftSemi(c)
            | JoinOperator::RightSemi(c)
            | JoinOperator::Anti(c)
            | JoinOperator::LeftAnti(c)
            | JoinOperator::RightAnti(c)
            | JoinOperator::StraightJoin(c) => Some(c),
            _ => None,
        })
    }

    fn check_select(&mut self, select: &Select, outer: Option<&Scope<'_>>, order_by: Option<&OrderBy>) -> Option<Vec<String>> {
        let mut sources = Vec::new();
        for twj in &select.from {
            self.add_table_with_joins(twj, outer, &mut sources);
        }
        let aliases = select
            .projection
            .iter()
            .filter_map(|item| match item {
                SelectItem::ExprWithAlias { alias, .. } => Some(ident_key(alias)),
                _ => None,
            })
            .collect();
        let scope = Scope { sources, aliases, parent: outer };

        for twj in &select.from {
            for constraint in Self::join_constraints(twj) {
                match constraint {
                    JoinConstraint::On(expr) => self.check_expr(expr, &scope, false),
                    JoinConstraint::Using(columns) => {
                        for column in columns {
                            let key = object_name_key(column);
                            if !scope.resolves(&key, false) {
                                self.unknown_column(&key, &scope, object_name_span(column));
                            }
                        }
                    }
                    _ => {}
                }
            }
        }

        let mut output = Some(Vec::new());
        for item in &select.projection {
            match item {
                SelectItem::UnnamedExpr(expr) => {
                    self.check_expr(expr, &scope, false);
                    let name = match expr {
                        Expr::Identifier(ident) => ident_key(ident),
                        Expr::CompoundIdentifier(parts) => parts.last().map(ident_key).unwrap_or_default(),
                        other => other.to_string().to_lowercase(),
                    };
                    if let Some(out) = output.as_mut() {
                        out.push(name);
                    }
                }
                SelectItem::ExprWithAlias { expr, alias } => {
                    self.check_expr(expr, &scope, false);
                    if let Some(out) = output.as_mut() {
                        out.push(ident_key(alias));
                    }
                }
                SelectItem::ExprWithAliases { expr, aliases } => {
                    self.check_expr(expr, &scope, false);
                    if let Some(out) = output.as_mut() {
                        out.extend(aliases.iter().map(ident_key));
                    }
                }
                SelectItem::Wildcard(_) => {
                    let all = scope
                        .sources
                        .iter()
                        .map(|s| s.columns.clone())
                        .collect::<Option<Vec<_>>>()
                        .map(|cols| cols.concat());
                    match (output.as_mut(), all) {
                        (Some(out), Some(cols)) => out.extend(cols),
                        _ => output = None,
                    }
                }
                SelectItem::QualifiedWildcard(kind, _) => match kind {
                    SelectItemQualifiedWildcardKind::ObjectName(name) => {
                        let key = object_name_key(name);
                        match scope.source_named(&key).map(|s| s.columns.clone()) {
                            Some(cols) => match (output.as_mut(), cols) {
                                (Some(out), Some(cols)) => out.extend(cols),
                                _ => output = None,
                            },
                            None => {
                                self.push(
                                    Verdict::UnknownTable,
                                    format!("unknown table or alias '{name}' in '{name}.*'"),
                                    object_name_span(name),
                                );
                                output = None;
                            }
                        }
                    }
                    SelectItemQualifiedWildcardKind::Expr(expr) => {
                        self.check_expr(expr, &scope, false);
                        output = None;
                    }
                },
            }
        }

        if let Some(selection) = &select.selection {
            self.check_expr(selection, &scope, true);
        }
        if let GroupByExpr::Expressions(exprs, _) = &select.group_by {
            for expr in exprs {
                self.check_expr(expr, &scope, true);
            }
        }
        if let Some(having) = &select.having {
            self.check_expr(having, &scope, true);
        }
        if let Some(OrderBy { kind: OrderByKind::Expressions(exprs), .. }) = order_by {
            for item in exprs {
                self.check_expr(&item.expr, &scope, true);
            }
        }
        output
    }

    fn check_expr(&mut self, expr: &Expr, scope: &Scope<'_>, allow_aliases: bool) {
        let mut walker = ExprWalker { resolver: self, scope, allow_aliases, depth: 0 };
        let _ = expr.visit(&mut walker);
    }

    fn unknown_column(&mut self, column: &str, scope: &Scope<'_>, span: Option<SourceSpan>) {
        let mut message = format!("unknown column '{column}'");
        if let Some(suggestion) = closest(column, &scope.known_columns()) {
            message.push_str(&format!("; did you mean '{suggestion}'?"));
        }
        self.push(Verdict::UnknownColumn, message, span);
    }

    fn resolve_identifier(&mut self, ident: &Ident, scope: &Scope<'_>, allow_aliases: bool) {
        let key = ident_key(ident);
        if !scope.resolves(&key, allow_aliases) {
            self.unknown_column(&key, scope, SourceSpan::from_span(ident.span));
        }
    }

    fn resolve_compound(&mut self, parts: &[Ident], scope: &Scope<'_>) {
        let Some((column, qualifier)) = parts.split_last() else {
            return;
        };
        if qualifier.is_empty() {
            return self.resolve_identifier(column, scope, false);
        }
        let qualifier_key = qualifier.iter().map(ident_key).collect::<Vec<_>>().join(".");
        let span = SourceSpan::from_span(Span::new(parts[0].span.start, column.span.end));
        match scope.source_named(&qualifier_key) {
            None => self.push(Verdict::UnknownTable, format!("unknown table or alias '{qualifier_key}'"), span),
            Some(Source { columns: None, .. }) => {}
            Some(Source { columns: Some(columns), .. }) => {
                let key = ident_key(column);
                if !columns.contains(&key) {
                    let mut message = format!("unknown column '{key}' in '{qualifier_key}'");
                    let known: Vec<&str> = columns.iter().map(String::as_str).collect();
                    if let Some(suggestion) = closest(&key, &known) {
                        message.push_str(&format!("; did you mean '{suggestion}'?"));
                    }
                    self.push(Verdict::UnknownColumn, message, span);
                }
            }
        }
    }
}

struct ExprWalker<'r, 'c, 's, 'p> {
    resolver: &'r mut Resolver<'c>,
    scope: &'s Scope<'p>,
    allow_aliases: bool,
    /// Nesting depth of subqueries; identifiers inside them are checked by
    /// the recursive `check_query` call with their own scope.
    depth: usize,
}

impl Visitor for ExprWalker<'_, '_, '_, '_> {
    type Break = ();

    fn pre_visit_query(&mut self, query: &Query) -> ControlFlow<()> {
        if self.depth == 0 {
            self.resolver.check_query(query, Some(self.scope));
        }
        self.depth += 1;
        ControlFlow::Continue(())
    }

    fn post_visit_query(&mut self, _query: &Query) -> ControlFlow<()> {
        self.depth -= 1;
        ControlFlow::Continue(())
    }

    fn pre_visit_expr(&mut self, expr: &Expr) -> ControlFlow<()> {
        if self.depth > 0 {
            return ControlFlow::Continue(());
        }
        match expr {
            Expr::Identifier(ident) => self.resolver.resolve_identifier(ident, self.scope, self.allow_aliases),
            Expr::CompoundIdentifier(parts) => self.resolver.resolve_compound(parts, self.scope),
            _ => {}
        }
        ControlFlow::Continue(())
    }
}

/// Whether an expression contains an aggregate call outside subqueries.
fn has_aggregate(expr: &Expr) -> bool {
    struct Finder {
        depth: usize,
        found: bool,
    }
    impl Visitor for Finder {
        type Break = ();
        fn pre_visit_query(&mut self, _: &Query) -> ControlFlow<()> {
            self.depth += 1;
            ControlFlow::Continue(())
        }
        fn post_visit_query(&mut self, _: &Query) -> ControlFlow<()> {
            self.depth -= 1;
            ControlFlow::Continue(())
        }
        fn pre_visit_expr(&mut self, expr: &Expr) -> ControlFlow<()> {
            if let Expr::Function(function) = expr {
                let name = object_name_parts(&function.name).last().map(|i| ident_key(i)).unwrap_or_default();
                if self.depth == 0 && AGGREGATES.contains(&name.as_str()) {
                    self.found = true;
                    return ControlFlow::Break(());
                }
            }
            ControlFlow::Continue(())
        }
    }
    let mut finder = Finder { depth: 0, found: false };
    let _ = expr.visit(&mut finder);
    finder.found
}

fn row_limit_risk(query: &Query, catalog: &SchemaCatalog) -> Option<(String, Option<SourceSpan>)> {
    let limited = match &query.limit_clause {
        Some(LimitClause::LimitOffset { limit, .. }) => limit.is_some(),
        Some(LimitClause::OffsetCommaLimit { .. }) => true,
        None => false,
    };
    if limited || query.fetch.is_some() {
        return None;
    }
    set_expr_risk(&query.body, catalog)
}

fn set_expr_risk(body: &SetExpr, catalog: &SchemaCatalog) -> Option<(String, Option<SourceSpan>)> {
    match body {
        SetExpr::Select(select) => select_risk(select, catalog),
        SetExpr::Query(query) => row_limit_risk(query, catalog),
        SetExpr::SetOperation { left, right, .. } => {
            set_expr_risk(left, catalog).or_else(|| set_expr_risk(right, catalog))
        }
        _ => None,
    }
}

fn select_risk(select: &Select, catalog: &SchemaCatalog) -> Option<(String, Option<SourceSpan>)> {
    if select.top.is_some() {
        return None;
    }
    let grouped = match &select.group_by {
        GroupByExpr::Expressions(exprs, _) => !exprs.is_empty(),
        GroupByExpr::All(_) => true,
    };
    let aggregated = grouped
        || select.projection.iter().any(|item| match item {
            SelectItem::UnnamedExpr(expr) | SelectItem::ExprWithAlias { expr, .. } => has_aggregate(expr),
            _ => false,
        });
    if aggregated {
        return None;
    }
    fn minute_table<'a>(factor: &'a TableFactor, catalog: &SchemaCatalog) -> Option<&'a ObjectName> {
        match factor {
            TableFactor::Table { name, .. } => {
                catalog.table(&object_name_key(name)).filter(|t| t.minute_resolution).map(|_| name)
            }
            TableFactor::NestedJoin { table_with_joins, .. } => std::iter::once(&table_with_joins.relation)
                .chain(table_with_joins.joins.iter().map(|j| &j.relation))
                .find_map(|f| minute_table(f, catalog)),
            _ => None,
        }
    }
    let name = select
        .from
        .iter()
        .flat_map(|twj| std::iter::once(&twj.relation).chain(twj.joins.iter().map(|j| &j.relation)))
        .find_map(|factor| minute_table(factor, catalog))?;
    Some((
        format!("unbounded scan of minute-resolution table '{name}': add an aggregate, GROUP BY or LIMIT"),
        object_name_span(name),
    ))
}

/// Closest candidate by edit distance, if reasonably close.
fn closest<'a>(target: &str, candidates: &[&'a str]) -> Option<&'a str> {
    candidates
        .iter()
        .map(|c| (levenshtein(target, c), *c))
        .filter(|(d, c)| *d <= (c.len().max(target.len()) / 2).max(1))
        .min()
        .map(|(_, c)| c)
}

fn levenshtein(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut prev = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let cur = row[j + 1];
            row[j + 1] = if ca == *cb { prev } else { 1 + prev.min(cur).min(row[j]) };
            prev = cur;
        }
    }
    row[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verdict(sql: &str) -> Verdict {
        validate_sql(sql, &SchemaCatalog::traffic()).verdict
    }

    #[test]
    fn read_only_guard() {
        assert_eq!(verdict("DROP TABLE dbo.cabinets"), Verdict::ForbiddenStatement);
        assert_eq!(verdict("DELETE FROM dbo.cabinets"), Verdict::ForbiddenStatement);
        assert_eq!(verdict("SELECT 1; DROP TABLE dbo.cabinets"), Verdict::ForbiddenStatement);
        assert_eq!(verdict("SELECT 1; SELECT 2"), Verdict::ForbiddenStatement);
    }

    #[test]
    fn unbounded_minute_scan_is_risky() {
        let report = validate_sql("SELECT speed FROM dbo.MinuteDataNW WHERE detector_id='x'", &SchemaCatalog::traffic());
        assert_eq!(report.verdict, Verdict::RowLimitRisk);
        assert_eq!(report.diagnostics.len(), 1);
        assert!(report.diagnostics[0].span.is_some());
        assert_eq!(verdict("SELECT speed FROM dbo.MinuteDataNW LIMIT 10"), Verdict::Ok);
        assert_eq!(verdict("SELECT TOP 10 speed FROM dbo.MinuteDataNW"), Verdict::Ok);
        assert_eq!(verdict("SELECT detector_id, AVG(speed) FROM dbo.MinuteDataNW GROUP BY detector_id"), Verdict::Ok);
        assert_eq!(verdict("SELECT segment_id FROM dbo.Segments"), Verdict::Ok);
    }

    #[test]
    fn aggregate_over_index_is_ok() {
        let report = validate_sql("SELECT AVG(tps) FROM dbo.SegmentTrafficIndex", &SchemaCatalog::traffic());
        assert!(report.is_ok());
        assert!(report.diagnostics.is_empty());
    }

    #[test]
    fn unknown_names() {
        assert_eq!(verdict("SELECT AVG(tps) FROM dbo.Nope"), Verdict::UnknownTable);
        let report = validate_sql("SELECT AVG(spead) FROM dbo.MinuteDataNW", &SchemaCatalog::traffic());
        assert_eq!(report.verdict, Verdict::UnknownColumn);
        assert!(report.diagnostics[0].message.contains("did you mean 'speed'"));
        let span = report.diagnostics[0].span.unwrap();
        assert_eq!((span.line, span.column), (1, 12));
        assert_eq!(verdict("SELECT m.speed FROM dbo.MinuteDataNW LIMIT 1"), Verdict::UnknownTable);
        assert_eq!(verdict("SELECT m.spd FROM dbo.MinuteDataNW m LIMIT 1"), Verdict::UnknownColumn);
    }

    #[test]
    fn syntax_error_has_span() {
        let report = validate_sql("SELEC speed FROM dbo.MinuteDataNW", &SchemaCatalog::traffic());
        assert_eq!(report.verdict, Verdict::SyntaxError);
        assert!(report.diagnostics[0].span.is_some());
        assert_eq!(verdict("   "), Verdict::SyntaxError);
        assert_eq!(verdict("SELECT speed FROM dbo.MinuteDataNW WHERE"), Verdict::SyntaxError);
    }

    #[test]
    fn scopes_aliases_and_subqueries() {
        let ok = [
            "SELECT c.route, AVG(m.speed) AS s FROM dbo.MinuteDataNW m JOIN dbo.cabinets c ON c.detector_id = m.detector_id GROUP BY c.route ORDER BY s",
            "SELECT segment_id, AVG(vol) FROM (SELECT segment_id, timestamp, SUM(total_volume) AS vol FROM dbo.SegmentTrafficIndex GROUP BY segment_id, timestamp) t GROUP BY segment_id",
            "WITH latest AS (SELECT MAX(timestamp) AS ts FROM dbo.MinuteDataNW) SELECT COUNT(*) FROM dbo.MinuteDataNW, latest WHERE timestamp = latest.ts",
            "SELECT s.segment_id FROM dbo.Segments s WHERE EXISTS (SELECT 1 FROM dbo.cabinets c WHERE c.segment_id = s.segment_id)",
            "SELECT dbo.Segments.length_miles FROM dbo.Segments",
            "SELECT lane_class, COUNT(*) AS n FROM dbo.cabinets GROUP BY lane_class HAVING n > 1",
            "SELECT route FROM dbo.cabinets UNION SELECT route FROM dbo.Segments ORDER BY route",
            "SELECT 1",
        ];
        for sql in ok {
            let report = validate_sql(sql, &SchemaCatalog::traffic());
            assert!(report.is_ok(), "{sql}: {}", report.summary());
        }
        assert_eq!(
            verdict("SELECT segment_id FROM (SELECT route FROM dbo.Segments) t"),
            Verdict::UnknownColumn
        );
        assert_eq!(
            verdict("SELECT s.segment_id FROM dbo.Segments s WHERE EXISTS (SELECT 1 FROM dbo.cabinets c WHERE c.sgment_id = s.segment_id)"),
            Verdict::UnknownColumn
        );
    }

    #[test]
    fn verdict_is_most_severe_diagnostic() {
        let report = validate_sql("SELECT nope FROM dbo.Missing", &SchemaCatalog::traffic());
        assert_eq!(report.verdict, Verdict::UnknownTable);
        assert!(!report.diagnostics.is_empty());
    }

    #[test]
    fn levenshtein_basics() {
        assert_eq!(levenshtein("speed", "spead"), 1);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(closest("spead", &["speed", "volume"]), Some("speed"));
        assert_eq!(closest("zzzzzz", &["speed"]), None);
    }
}
