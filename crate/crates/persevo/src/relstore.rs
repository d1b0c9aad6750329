//! In-memory relational algebra and the schema-modification operations it
//! supports, plus the store dump format.
//!
//! Relation sets are immutable snapshots: every operation returns a new set
//! and leaves relations other than its operands untouched.

use crate::syntax::{ClassName, Ident};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cell {
    Value(Ident),
    /// Missing value, introduced by outer joins and as the initial
    /// time-series timestamp.
    Bottom,
    Time(u64),
}

impl Cell {
    pub fn value(name: impl Into<String>) -> Cell {
        Cell::Value(Ident::new(name))
    }

    pub fn as_value(&self) -> Option<&Ident> {
        match self {
            Cell::Value(v) => Some(v),
            _ => None,
        }
    }

    /// Timestamp ordering key; ⊥ sorts below every concrete time.
    pub fn time_key(&self) -> Option<u64> {
        match self {
            Cell::Time(t) => Some(*t + 1),
            Cell::Bottom => Some(0),
            Cell::Value(_) => None,
        }
    }

    pub fn render(&self) -> String {
        match self {
            Cell::Value(v) => v.0.clone(),
            Cell::Bottom => "_".to_string(),
            Cell::Time(t) => t.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ForeignKey {
    pub column: String,
    pub target_relation: String,
    pub target_column: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub primary_key: Option<String>,
    pub foreign_keys: Vec<ForeignKey>,
    /// Set when the relation is a time series; the timestamp column is
    /// always literally named `time`.
    pub time_column: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RelError {
    UnknownRelation(String),
    DuplicateRelation(String),
    UnknownColumn { relation: String, column: String },
    DuplicateColumn { relation: String, column: String },
    ProtectedColumn { relation: String, column: String },
    NoSharedColumns(String, String),
    BadDump { line: usize, message: String },
}

impl fmt::Display for RelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RelError::UnknownRelation(n) => write!(f, "unknown relation `{n}`"),
            RelError::DuplicateRelation(n) => write!(f, "relation `{n}` already exists"),
            RelError::UnknownColumn { relation, column } => {
                write!(f, "relation `{relation}` has no column `{column}`")
            }
            RelError::DuplicateColumn { relation, column } => {
                write!(f, "column `{column}` already exists in relation `{relation}`")
            }
            RelError::ProtectedColumn { relation, column } => {
                write!(f, "column `{column}` of relation `{relation}` cannot be dropped or renamed")
            }
            RelError::NoSharedColumns(a, b) => {
                write!(f, "relations `{a}` and `{b}` share no columns")
            }
            RelError::BadDump { line, message } => write!(f, "dump line {line}: {message}"),
        }
    }
}

impl std::error::Error for RelError {}

impl Relation {
    pub fn new(name: impl Into<String>, columns: Vec<String>) -> Relation {
        Relation {
            name: name.into(),
            columns,
            rows: Vec::new(),
            primary_key: None,
            foreign_keys: Vec::new(),
            time_column: false,
        }
    }

    pub fn with_primary_key(mut self, pk: impl Into<String>) -> Relation {
        self.primary_key = Some(pk.into());
        self
    }

    pub fn with_time_column(mut self) -> Relation {
        self.time_column = true;
        self
    }

    pub fn col_index(&self, column: &str) -> Result<usize, RelError> {
        self.columns
            .iter()
            .position(|c| c == column)
            .ok_or_else(|| RelError::UnknownColumn {
                relation: self.name.clone(),
                column: column.to_string(),
            })
    }

    pub fn cell<'a>(&self, row: &'a [Cell], column: &str) -> Result<&'a Cell, RelError> {
        Ok(&row[self.col_index(column)?])
    }

    fn push_row_dedup(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        if !self.rows.contains(&row) {
            self.rows.push(row);
        }
    }

    /// Canonical form for comparisons: columns sorted by name, rows sorted
    /// and deduplicated, foreign keys sorted.
    pub fn canonical(&self) -> Relation {
        let mut order: Vec<usize> = (0..self.columns.len()).collect();
        order.sort_by(|&a, &b| self.columns[a].cmp(&self.columns[b]));
        let columns: Vec<String> = order.iter().map(|&i| self.columns[i].clone()).collect();
        let mut rows: Vec<Vec<Cell>> = self
            .rows
            .iter()
            .map(|r| order.iter().map(|&i| r[i].clone()).collect())
            .collect();
        rows.sort();
        rows.dedup();
        let mut foreign_keys = self.foreign_keys.clone();
        foreign_keys.sort();
        foreign_keys.dedup();
        Relation {
            name: self.name.clone(),
            columns,
            rows,
            primary_key: self.primary_key.clone(),
            foreign_keys,
            time_column: self.time_column,
        }
    }
}

/// Named relations in insertion order; `insert` replaces in place, matching
/// the destructive-update reading of schema modification.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RelationSet {
    relations: Vec<Relation>,
}

impl RelationSet {
    pub fn new() -> RelationSet {
        RelationSet::default()
    }

    pub fn get(&self, name: &str) -> Option<&Relation> {
        self.relations.iter().find(|r| r.name == name)
    }

    pub fn expect(&self, name: &str) -> Result<&Relation, RelError> {
        self.get(name)
            .ok_or_else(|| RelError::UnknownRelation(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn insert(&mut self, rel: Relation) {
        match self.relations.iter_mut().find(|r| r.name == rel.name) {
            Some(slot) => *slot = rel,
            None => self.relations.push(rel),
        }
    }

    pub fn remove(&mut self, name: &str) -> Option<Relation> {
        let pos = self.relations.iter().position(|r| r.name == name)?;
        Some(self.relations.remove(pos))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Relation> {
        self.relations.iter()
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Relational algebra
// ---------------------------------------------------------------------------

/// Projection with set semantics; duplicate result rows collapse.
pub fn project(r: &Relation, cols: &[String]) -> Result<Relation, RelError> {
    let idx: Vec<usize> = cols
        .iter()
        .map(|c| r.col_index(c))
        .collect::<Result<_, _>>()?;
    let mut out = Relation::new(r.name.clone(), cols.to_vec());
    out.primary_key = r
        .primary_key
        .clone()
        .filter(|pk| cols.iter().any(|c| c == pk));
    out.time_column = r.time_column && cols.iter().any(|c| c == "time");
    out.foreign_keys = r
        .foreign_keys
        .iter()
        .filter(|fk| cols.contains(&fk.column))
        .cloned()
        .collect();
    for row in &r.rows {
        let projected = idx.iter().map(|&i| row[i].clone()).collect();
        out.push_row_dedup(projected);
    }
    Ok(out)
}

pub fn select_where(r: &Relation, pred: impl Fn(&Relation, &[Cell]) -> bool) -> Relation {
    let mut out = r.clone();
    out.rows = r.rows.iter().filter(|row| pred(r, row)).cloned().collect();
    out
}

pub fn rename_attrs(r: &Relation, olds: &[String], news: &[String]) -> Result<Relation, RelError> {
    assert_eq!(olds.len(), news.len());
    let mut out = r.clone();
    for (o, n) in olds.iter().zip(news) {
        let i = out.col_index(o)?;
        if out.columns.iter().any(|c| c == n) {
            return Err(RelError::DuplicateColumn {
                relation: out.name.clone(),
                column: n.clone(),
            });
        }
        out.columns[i] = n.clone();
        for fk in &mut out.foreign_keys {
            if fk.column == *o {
                fk.column = n.clone();
            }
        }
    }
    Ok(out)
}

/// Adds fresh columns, initialized per row; `init` returns one cell per new
/// column.
pub fn add_columns(
    r: &Relation,
    cols: &[String],
    init: &dyn Fn(usize, &[Cell]) -> Vec<Cell>,
) -> Result<Relation, RelError> {
    for c in cols {
        if r.columns.iter().any(|x| x == c) {
            return Err(RelError::DuplicateColumn {
                relation: r.name.clone(),
                column: c.clone(),
            });
        }
    }
    let mut out = r.clone();
    out.columns.extend(cols.iter().cloned());
    for (i, row) in out.rows.iter_mut().enumerate() {
        let fresh = init(i, row);
        assert_eq!(fresh.len(), cols.len());
        row.extend(fresh);
    }
    Ok(out)
}

pub fn drop_columns(r: &Relation, cols: &[String]) -> Result<Relation, RelError> {
    let drop_idx: Vec<usize> = cols
        .iter()
        .map(|c| r.col_index(c))
        .collect::<Result<_, _>>()?;
    let keep: Vec<usize> = (0..r.columns.len())
        .filter(|i| !drop_idx.contains(i))
        .collect();
    let mut out = Relation::new(
        r.name.clone(),
        keep.iter().map(|&i| r.columns[i].clone()).collect(),
    );
    out.primary_key = r
        .primary_key
        .clone()
        .filter(|pk| !cols.iter().any(|c| c == pk));
    out.time_column = r.time_column && !cols.iter().any(|c| c == "time");
    out.foreign_keys = r
        .foreign_keys
        .iter()
        .filter(|fk| !cols.contains(&fk.column))
        .cloned()
        .collect();
    for row in &r.rows {
        out.push_row_dedup(keep.iter().map(|&i| row[i].clone()).collect());
    }
    Ok(out)
}

fn shared_columns(r1: &Relation, r2: &Relation) -> Vec<String> {
    r1.columns
        .iter()
        .filter(|c| r2.columns.iter().any(|d| d == *c))
        .cloned()
        .collect()
}

fn join_metadata(out: &mut Relation, r1: &Relation, r2: &Relation) {
    out.primary_key = r1
        .primary_key
        .clone()
        .or_else(|| r2.primary_key.clone())
        .filter(|pk| out.columns.iter().any(|c| c == pk));
    out.time_column = (r1.time_column || r2.time_column) && out.columns.iter().any(|c| c == "time");
    let mut fks = r1.foreign_keys.clone();
    fks.extend(r2.foreign_keys.iter().cloned());
    fks.retain(|fk| fk.target_relation != r1.name && fk.target_relation != r2.name);
    fks.dedup();
    out.foreign_keys = fks;
}

/// Natural join over all shared column names. Cells match structurally, so ⊥
/// matches ⊥; this keeps decompose-then-join an identity on time series.
pub fn natural_join(r1: &Relation, r2: &Relation) -> Result<Relation, RelError> {
    let shared = shared_columns(r1, r2);
    if shared.is_empty() {
        return Err(RelError::NoSharedColumns(r1.name.clone(), r2.name.clone()));
    }
    let extra: Vec<String> = r2
        .columns
        .iter()
        .filter(|c| !shared.contains(c))
        .cloned()
        .collect();
    let mut columns = r1.columns.clone();
    columns.extend(extra.iter().cloned());
    let mut out = Relation::new(r1.name.clone(), columns);
    join_metadata(&mut out, r1, r2);
    let shared_1: Vec<usize> = shared.iter().map(|c| r1.col_index(c).unwrap()).collect();
    let shared_2: Vec<usize> = shared.iter().map(|c| r2.col_index(c).unwrap()).collect();
    let extra_2: Vec<usize> = extra.iter().map(|c| r2.col_index(c).unwrap()).collect();
    for l in &r1.rows {
        for r in &r2.rows {
            if shared_1
                .iter()
                .zip(&shared_2)
                .all(|(&i, &j)| l[i] == r[j])
            {
                let mut row = l.clone();
                row.extend(extra_2.iter().map(|&j| r[j].clone()));
                out.push_row_dedup(row);
            }
        }
    }
    Ok(out)
}

/// Full outer join: non-matching rows of either side survive, padded with ⊥.
pub fn natural_outer_join(r1: &Relation, r2: &Relation) -> Result<Relation, RelError> {
    let shared = shared_columns(r1, r2);
    if shared.is_empty() {
        return Err(RelError::NoSharedColumns(r1.name.clone(), r2.name.clone()));
    }
    let extra: Vec<String> = r2
        .columns
        .iter()
        .filter(|c| !shared.contains(c))
        .cloned()
        .collect();
    let mut columns = r1.columns.clone();
    columns.extend(extra.iter().cloned());
    let mut out = Relation::new(r1.name.clone(), columns.clone());
    join_metadata(&mut out, r1, r2);
    let shared_1: Vec<usize> = shared.iter().map(|c| r1.col_index(c).unwrap()).collect();
    let shared_2: Vec<usize> = shared.iter().map(|c| r2.col_index(c).unwrap()).collect();
    let extra_2: Vec<usize> = extra.iter().map(|c| r2.col_index(c).unwrap()).collect();
    let mut matched_right = vec![false; r2.rows.len()];
    for l in &r1.rows {
        let mut matched_left = false;
        for (ri, r) in r2.rows.iter().enumerate() {
            if shared_1
                .iter()
                .zip(&shared_2)
                .all(|(&i, &j)| l[i] == r[j])
            {
                matched_left = true;
                matched_right[ri] = true;
                let mut row = l.clone();
                row.extend(extra_2.iter().map(|&j| r[j].clone()));
                out.push_row_dedup(row);
            }
        }
        if !matched_left {
            let mut row = l.clone();
            row.extend(extra_2.iter().map(|_| Cell::Bottom));
            out.push_row_dedup(row);
        }
    }
    for (ri, r) in r2.rows.iter().enumerate() {
        if matched_right[ri] {
            continue;
        }
        let row = columns
            .iter()
            .map(|c| match r2.col_index(c) {
                Ok(j) => r[j].clone(),
                Err(_) => Cell::Bottom,
            })
            .collect();
        out.push_row_dedup(row);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Schema-modification operations
// ---------------------------------------------------------------------------

/// Per-row snapshot of dropped columns, keyed by the relation's primary key
/// (or timestamp) so that older schema versions can reconstruct the data.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RecordedDefault {
    pub relation: String,
    pub columns: Vec<String>,
    pub rows: BTreeMap<String, Vec<Cell>>,
}

pub fn smo_create_table(rs: &RelationSet, rel: Relation) -> Result<RelationSet, RelError> {
    if rs.contains(&rel.name) {
        return Err(RelError::DuplicateRelation(rel.name));
    }
    debug_assert!(rel.rows.is_empty());
    let mut out = rs.clone();
    out.insert(rel);
    Ok(out)
}

pub fn smo_rename_table(rs: &RelationSet, from: &str, to: &str) -> Result<RelationSet, RelError> {
    if rs.contains(to) {
        return Err(RelError::DuplicateRelation(to.to_string()));
    }
    rs.expect(from)?;
    let mut out = rs.clone();
    for r in &mut out.relations {
        if r.name == from {
            r.name = to.to_string();
        }
        for fk in &mut r.foreign_keys {
            if fk.target_relation == from {
                fk.target_relation = to.to_string();
            }
        }
    }
    Ok(out)
}

pub fn smo_rename_column(
    rs: &RelationSet,
    name: &str,
    olds: &[String],
    news: &[String],
) -> Result<RelationSet, RelError> {
    let r = rs.expect(name)?;
    for o in olds {
        if r.primary_key.as_deref() == Some(o) || (r.time_column && o == "time") {
            return Err(RelError::ProtectedColumn {
                relation: name.to_string(),
                column: o.clone(),
            });
        }
    }
    let renamed = rename_attrs(r, olds, news)?;
    let mut out = rs.clone();
    out.insert(renamed);
    for other in &mut out.relations {
        for fk in &mut other.foreign_keys {
            if fk.target_relation == name {
                if let Some(i) = olds.iter().position(|o| *o == fk.target_column) {
                    fk.target_column = news[i].clone();
                }
            }
        }
    }
    Ok(out)
}

pub fn smo_add_column(
    rs: &RelationSet,
    name: &str,
    cols: &[String],
    init: &dyn Fn(usize, &[Cell]) -> Vec<Cell>,
) -> Result<RelationSet, RelError> {
    let r = rs.expect(name)?;
    let added = add_columns(r, cols, init)?;
    let mut out = rs.clone();
    out.insert(added);
    Ok(out)
}

/// Drops columns and records their values (through `default_fn`) for
/// backward propagation.
pub fn smo_drop_column(
    rs: &RelationSet,
    name: &str,
    cols: &[String],
    default_fn: &dyn Fn(&[Cell]) -> Vec<Cell>,
) -> Result<(RelationSet, RecordedDefault), RelError> {
    let r = rs.expect(name)?;
    for c in cols {
        if r.primary_key.as_deref() == Some(c.as_str()) || (r.time_column && c == "time") {
            return Err(RelError::ProtectedColumn {
                relation: name.to_string(),
                column: c.clone(),
            });
        }
    }
    let idx: Vec<usize> = cols
        .iter()
        .map(|c| r.col_index(c))
        .collect::<Result<_, _>>()?;
    let mut recorded = RecordedDefault {
        relation: name.to_string(),
        columns: cols.to_vec(),
        rows: BTreeMap::new(),
    };
    for (i, row) in r.rows.iter().enumerate() {
        let dropped: Vec<Cell> = idx.iter().map(|&j| row[j].clone()).collect();
        recorded
            .rows
            .insert(row_key(r, i, row), default_fn(&dropped));
    }
    let dropped = drop_columns(r, cols)?;
    let mut out = rs.clone();
    out.insert(dropped);
    Ok((out, recorded))
}

/// Key that identifies a row for recorded defaults: the primary-key cell,
/// the timestamp, or the row position as a last resort.
pub fn row_key(r: &Relation, idx: usize, row: &[Cell]) -> String {
    if let Some(pk) = &r.primary_key {
        if let Ok(i) = r.col_index(pk) {
            return row[i].render();
        }
    }
    if r.time_column {
        if let Ok(i) = r.col_index("time") {
            return row[i].render();
        }
    }
    format!("#{idx}")
}

/// Vertically splits `name` into two projections; `fk_cols` become foreign
/// keys from the first output to the second. When an output reuses the
/// source name it replaces it in place.
pub fn smo_decompose(
    rs: &RelationSet,
    name: &str,
    out1: (&str, &[String]),
    out2: (&str, &[String]),
    fk_cols: &[String],
) -> Result<RelationSet, RelError> {
    let src = rs.expect(name)?;
    let mut first = project(src, out1.1)?;
    first.name = out1.0.to_string();
    let mut second = project(src, out2.1)?;
    second.name = out2.0.to_string();
    for c in fk_cols {
        first.col_index(c)?;
        second.col_index(c)?;
        first.foreign_keys.push(ForeignKey {
            column: c.clone(),
            target_relation: out2.0.to_string(),
            target_column: c.clone(),
        });
    }
    if out1.0 != name && rs.contains(out1.0) {
        return Err(RelError::DuplicateRelation(out1.0.to_string()));
    }
    if out2.0 != name && rs.contains(out2.0) {
        return Err(RelError::DuplicateRelation(out2.0.to_string()));
    }
    let mut out = rs.clone();
    if out1.0 == name {
        out.insert(first); // replaces the source slot
    } else {
        out.remove(name);
        out.insert(first);
    }
    out.insert(second);
    Ok(out)
}

/// Joins `c1` and `c2` into `out_name`, removing both inputs. The outer
/// variant pads non-matching rows with ⊥.
pub fn smo_join(
    rs: &RelationSet,
    c1: &str,
    c2: &str,
    out_name: &str,
    outer: bool,
) -> Result<RelationSet, RelError> {
    let r1 = rs.expect(c1)?;
    let r2 = rs.expect(c2)?;
    let mut joined = if outer {
        natural_outer_join(r1, r2)?
    } else {
        natural_join(r1, r2)?
    };
    joined.name = out_name.to_string();
    let mut out = RelationSet::new();
    for r in rs.iter() {
        if r.name == c2 {
            continue;
        }
        if r.name == c1 {
            if out_name == c1 {
                out.insert(joined.clone());
            }
            continue;
        }
        let mut kept = r.clone();
        kept.foreign_keys.retain(|fk| {
            fk.target_relation == out_name
                || (fk.target_relation != c1 && fk.target_relation != c2)
        });
        out.insert(kept);
    }
    if out_name != c1 {
        if out.contains(out_name) {
            return Err(RelError::DuplicateRelation(out_name.to_string()));
        }
        out.insert(joined);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Store: relations plus identifier bindings
// ---------------------------------------------------------------------------

/// The runtime database: named relations plus bindings from class-annotated
/// identifiers to the relation that holds their data.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Store {
    pub relations: RelationSet,
    pub bindings: BTreeMap<(Ident, ClassName), String>,
}

impl Store {
    pub fn new() -> Store {
        Store::default()
    }

    pub fn binding_target(&self, id: &Ident, class: &ClassName) -> Option<&str> {
        self.bindings
            .get(&(id.clone(), class.clone()))
            .map(|s| s.as_str())
    }

    /// Annotation classes recorded for `id`, in name order.
    pub fn classes_of(&self, id: &Ident) -> Vec<&ClassName> {
        self.bindings
            .keys()
            .filter(|(i, _)| i == id)
            .map(|(_, c)| c)
            .collect()
    }

    /// Largest timestamp stored anywhere; ⊥ counts as zero.
    pub fn max_time(&self) -> u64 {
        self.relations
            .iter()
            .flat_map(|r| r.rows.iter().flatten())
            .filter_map(|c| match c {
                Cell::Time(t) => Some(*t),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn render_dump(&self) -> String {
        let mut out = String::new();
        for r in self.relations.iter() {
            out.push_str(&format!("relation {}\n", r.name));
            out.push_str(&format!("  columns: {}\n", r.columns.join(", ")));
            if let Some(pk) = &r.primary_key {
                out.push_str(&format!("  pk: {pk}\n"));
            }
            for fk in &r.foreign_keys {
                out.push_str(&format!(
                    "  fk: {} -> {}.{}\n",
                    fk.column, fk.target_relation, fk.target_column
                ));
            }
            for row in &r.rows {
                let cells = row.iter().map(Cell::render).collect::<Vec<_>>().join(", ");
                out.push_str(&format!("  row: {cells}\n"));
            }
        }
        for ((id, class), target) in &self.bindings {
            out.push_str(&format!("binding: {id}@{class} -> {target}\n"));
        }
        out
    }

    pub fn parse_dump(text: &str) -> Result<Store, RelError> {
        let mut store = Store::new();
        let mut current: Option<Relation> = None;
        let bad = |line: usize, message: &str| RelError::BadDump {
            line,
            message: message.to_string(),
        };
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end();
            if line.trim().is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix("relation ") {
                if let Some(rel) = current.take() {
                    store.relations.insert(rel);
                }
                current = Some(Relation::new(name.trim(), Vec::new()));
                continue;
            }
            if let Some(rest) = line.strip_prefix("binding: ") {
                if let Some(rel) = current.take() {
                    store.relations.insert(rel);
                }
                let (lhs, target) = rest
                    .split_once(" -> ")
                    .ok_or_else(|| bad(line_no, "expected `id@Class -> relation`"))?;
                let (id, class) = lhs
                    .split_once('@')
                    .ok_or_else(|| bad(line_no, "expected `id@Class`"))?;
                store.bindings.insert(
                    (Ident::new(id.trim()), ClassName::new(class.trim())),
                    target.trim().to_string(),
                );
                continue;
            }
            let rel = current
                .as_mut()
                .ok_or_else(|| bad(line_no, "expected `relation <name>`"))?;
            let body = line.trim_start();
            if let Some(cols) = body.strip_prefix("columns: ") {
                rel.columns = cols
                    .split(',')
                    .map(|c| c.trim().to_string())
                    .filter(|c| !c.is_empty())
                    .collect();
                rel.time_column = rel.columns.iter().any(|c| c == "time");
                continue;
            }
            if let Some(pk) = body.strip_prefix("pk: ") {
                rel.primary_key = Some(pk.trim().to_string());
                continue;
            }
            if let Some(fk) = body.strip_prefix("fk: ") {
                let (col, target) = fk
                    .split_once(" -> ")
                    .ok_or_else(|| bad(line_no, "expected `fk: col -> Rel.col`"))?;
                let (trel, tcol) = target
                    .split_once('.')
                    .ok_or_else(|| bad(line_no, "expected `Rel.col`"))?;
                rel.foreign_keys.push(ForeignKey {
                    column: col.trim().to_string(),
                    target_relation: trel.trim().to_string(),
                    target_column: tcol.trim().to_string(),
                });
                continue;
            }
            if let Some(cells) = body.strip_prefix("row: ") {
                let time_idx = rel.columns.iter().position(|c| c == "time");
                let row: Vec<Cell> = cells
                    .split(',')
                    .enumerate()
                    .map(|(i, c)| {
                        let c = c.trim();
                        if c == "_" {
                            Ok(Cell::Bottom)
                        } else if Some(i) == time_idx {
                            c.parse::<u64>()
                                .map(Cell::Time)
                                .map_err(|_| bad(line_no, "bad timestamp"))
                        } else {
                            Ok(Cell::value(c))
                        }
                    })
                    .collect::<Result<_, _>>()?;
                if row.len() != rel.columns.len() {
                    return Err(bad(line_no, "row width does not match columns"));
                }
                rel.rows.push(row);
                continue;
            }
            return Err(bad(line_no, "unrecognized line"));
        }
        if let Some(rel) = current.take() {
            store.relations.insert(rel);
        }
        Ok(store)
    }

    /// Order-insensitive rendering used by tests and store comparisons.
    pub fn canonical_dump(&self) -> String {
        let mut rels: Vec<Relation> = self.relations.iter().map(Relation::canonical).collect();
        rels.sort_by(|a, b| a.name.cmp(&b.name));
        let mut canon = Store {
            relations: RelationSet::new(),
            bindings: self.bindings.clone(),
        };
        for r in rels {
            canon.relations.insert(r);
        }
        canon.render_dump()
    }
}
