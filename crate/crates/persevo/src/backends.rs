//! The two object-to-relation mapping mechanisms.
//!
//! The tuple-per-object mapping keys one table per class by `id`; the signal
//! mapping gives every instance its own append-only time-series table. The
//! interpreter and the evolution engine only go through [`Backend`].

use crate::relstore::{
    smo_add_column, smo_create_table, smo_decompose, smo_drop_column, smo_join,
    smo_rename_column, smo_rename_table, Cell, RecordedDefault, RelError, Relation, RelationSet,
    Store,
};
use crate::syntax::{AnnotatedIdent, ClassName, ClassTable, EvolutionOp, FieldName, Ident};
use crate::typing::{fields, most_specific, TypeError};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryError {
    NoBinding(Ident),
    Ambiguous(String),
    MissingRow { relation: String, id: Ident },
    MissingValue { relation: String, column: String },
    ArityMismatch { class: ClassName, expected: usize, got: usize },
    Type(TypeError),
    Rel(RelError),
    Premise(String),
}

impl fmt::Display for QueryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryError::NoBinding(id) => write!(f, "identifier `{id}` is not bound in the store"),
            QueryError::Ambiguous(m) => write!(f, "{m}"),
            QueryError::MissingRow { relation, id } => {
                write!(f, "relation `{relation}` has no row for `{id}`")
            }
            QueryError::MissingValue { relation, column } => {
                write!(f, "no value available in `{relation}.{column}`")
            }
            QueryError::ArityMismatch { class, expected, got } => {
                write!(f, "class `{class}` takes {expected} field values, got {got}")
            }
            QueryError::Type(e) => write!(f, "{e}"),
            QueryError::Rel(e) => write!(f, "{e}"),
            QueryError::Premise(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for QueryError {}

impl From<RelError> for QueryError {
    fn from(e: RelError) -> Self {
        QueryError::Rel(e)
    }
}

impl From<TypeError> for QueryError {
    fn from(e: TypeError) -> Self {
        QueryError::Type(e)
    }
}

/// Everything an older schema version needs to read data that a forward
/// step discarded.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BackwardPayload {
    pub recorded: Vec<RecordedDefault>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    Jpa,
    Signal,
}

impl Backend {
    pub fn from_flag(s: &str) -> Option<Backend> {
        match s {
            "jpa" => Some(Backend::Jpa),
            "signal" => Some(Backend::Signal),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Backend::Jpa => "jpa",
            Backend::Signal => "signal",
        }
    }

    /// The relation that holds the data of object `id` at class `class`.
    pub fn relation_name(&self, class: &ClassName, id: &Ident) -> String {
        match self {
            Backend::Jpa => class.0.clone(),
            Backend::Signal => format!("{}_{}", class.0, id.0),
        }
    }

    pub fn select(&self, store: &Store, l: &AnnotatedIdent, field: &str) -> Result<Ident, QueryError> {
        match self {
            Backend::Jpa => jpa_select(store, l, field),
            Backend::Signal => sig_select(store, l, field),
        }
    }

    pub fn insert(
        &self,
        ct: &ClassTable,
        store: &Store,
        class: &ClassName,
        id: &Ident,
        values: &[Ident],
    ) -> Result<Store, QueryError> {
        match self {
            Backend::Jpa => jpa_insert(ct, store, class, id, values),
            Backend::Signal => sig_insert(ct, store, class, id, values),
        }
    }

    pub fn update(
        &self,
        ct: &ClassTable,
        store: &Store,
        l: &AnnotatedIdent,
        values: &[Ident],
    ) -> Result<Store, QueryError> {
        match self {
            Backend::Jpa => jpa_update(ct, store, l, values),
            Backend::Signal => sig_update(ct, store, l, values),
        }
    }

    /// Applies an evolution operation to the schema, returning the new
    /// relation set plus whatever backward reads will need.
    pub fn evolve_schema(
        &self,
        op: &EvolutionOp,
        store: &Store,
        ct: &ClassTable,
    ) -> Result<(RelationSet, BackwardPayload), QueryError> {
        match self {
            Backend::Jpa => jpa_evolve_schema(op, store, ct),
            Backend::Signal => sig_evolve_schema(op, store, ct),
        }
    }
}

/// Recovers the class annotation of a stored identifier: the most specific
/// class among its bindings.
pub fn annotate(ct: &ClassTable, store: &Store, id: &Ident) -> Result<AnnotatedIdent, QueryError> {
    let candidates: Vec<ClassName> = store.classes_of(id).into_iter().cloned().collect();
    if candidates.is_empty() {
        return Err(QueryError::NoBinding(id.clone()));
    }
    let class = most_specific(ct, &candidates, &format!("identifier `{id}`"), "annotate")
        .map_err(|e| QueryError::Ambiguous(e.message))?;
    Ok(AnnotatedIdent { id: id.clone(), class })
}

fn arity_check(class: &ClassName, expected: usize, got: usize) -> Result<(), QueryError> {
    if expected != got {
        return Err(QueryError::ArityMismatch {
            class: class.clone(),
            expected,
            got,
        });
    }
    Ok(())
}

fn bound_relation<'a>(store: &'a Store, l: &AnnotatedIdent) -> Result<&'a Relation, QueryError> {
    let target = store
        .binding_target(&l.id, &l.class)
        .ok_or_else(|| QueryError::NoBinding(l.id.clone()))?;
    Ok(store.relations.expect(target)?)
}

/// Builds a row for a relation whose columns are the key column plus one
/// column per field; cells are matched by column name so that column order
/// is irrelevant.
fn row_by_name(
    rel: &Relation,
    key_col: &str,
    key_cell: Cell,
    flds: &[(ClassName, FieldName)],
    values: &[Ident],
) -> Result<Vec<Cell>, QueryError> {
    let mut row = Vec::with_capacity(rel.columns.len());
    for col in &rel.columns {
        if col == key_col {
            row.push(key_cell.clone());
            continue;
        }
        match flds.iter().position(|(_, f)| f == col) {
            Some(i) => row.push(Cell::Value(values[i].clone())),
            None => {
                return Err(QueryError::Rel(RelError::UnknownColumn {
                    relation: rel.name.clone(),
                    column: col.clone(),
                }))
            }
        }
    }
    for (_, f) in flds {
        if !rel.columns.iter().any(|c| c == f) {
            return Err(QueryError::MissingValue {
                relation: rel.name.clone(),
                column: f.clone(),
            });
        }
    }
    Ok(row)
}

// ---------------------------------------------------------------------------
// Tuple-per-object mapping
// ---------------------------------------------------------------------------

fn jpa_find_row<'a>(rel: &'a Relation, id: &Ident) -> Result<Option<&'a Vec<Cell>>, QueryError> {
    let idx = rel.col_index("id")?;
    Ok(rel
        .rows
        .iter()
        .find(|row| row[idx] == Cell::Value(id.clone())))
}

fn jpa_select(store: &Store, l: &AnnotatedIdent, field: &str) -> Result<Ident, QueryError> {
    let rel = bound_relation(store, l)?;
    let row = jpa_find_row(rel, &l.id)?.ok_or_else(|| QueryError::MissingRow {
        relation: rel.name.clone(),
        id: l.id.clone(),
    })?;
    match rel.cell(row, field)? {
        Cell::Value(v) => Ok(v.clone()),
        _ => Err(QueryError::MissingValue {
            relation: rel.name.clone(),
            column: field.to_string(),
        }),
    }
}

fn jpa_insert(
    ct: &ClassTable,
    store: &Store,
    class: &ClassName,
    id: &Ident,
    values: &[Ident],
) -> Result<Store, QueryError> {
    let flds = fields(ct, class)?;
    arity_check(class, flds.len(), values.len())?;
    let mut store = store.clone();
    let name = class.0.clone();
    if !store.relations.contains(&name) {
        let mut columns = vec!["id".to_string()];
        columns.extend(flds.iter().map(|(_, f)| f.clone()));
        store
            .relations
            .insert(Relation::new(name.clone(), columns).with_primary_key("id"));
    }
    let rel = store.relations.get(&name).unwrap();
    if jpa_find_row(rel, id)?.is_none() {
        let row = row_by_name(rel, "id", Cell::Value(id.clone()), &flds, values)?;
        let mut rel = rel.clone();
        rel.rows.push(row);
        store.relations.insert(rel);
    }
    store.bindings.insert((id.clone(), class.clone()), name);
    Ok(store)
}

fn jpa_update(
    ct: &ClassTable,
    store: &Store,
    l: &AnnotatedIdent,
    values: &[Ident],
) -> Result<Store, QueryError> {
    let flds = fields(ct, &l.class)?;
    arity_check(&l.class, flds.len(), values.len())?;
    let rel = bound_relation(store, l)?;
    let idx = rel.col_index("id")?;
    let pos = rel
        .rows
        .iter()
        .position(|row| row[idx] == Cell::Value(l.id.clone()))
        .ok_or_else(|| QueryError::MissingRow {
            relation: rel.name.clone(),
            id: l.id.clone(),
        })?;
    let row = row_by_name(rel, "id", Cell::Value(l.id.clone()), &flds, values)?;
    let mut rel = rel.clone();
    rel.rows[pos] = row;
    let mut store = store.clone();
    store.relations.insert(rel);
    Ok(store)
}

// ---------------------------------------------------------------------------
// Signal mapping
// ---------------------------------------------------------------------------

fn sig_select(store: &Store, l: &AnnotatedIdent, field: &str) -> Result<Ident, QueryError> {
    let rel = bound_relation(store, l)?;
    let col = rel.col_index(field)?;
    let time_idx = rel.col_index("time")?;
    // latest row whose cell is present; outer joins may leave ⊥ holes in
    // newer rows
    let mut best: Option<(u64, &Cell)> = None;
    for row in &rel.rows {
        let t = row[time_idx].time_key().ok_or_else(|| QueryError::MissingValue {
            relation: rel.name.clone(),
            column: "time".to_string(),
        })?;
        if matches!(row[col], Cell::Bottom) {
            continue;
        }
        if best.is_none_or(|(bt, _)| t >= bt) {
            best = Some((t, &row[col]));
        }
    }
    match best {
        Some((_, Cell::Value(v))) => Ok(v.clone()),
        _ => Err(QueryError::MissingValue {
            relation: rel.name.clone(),
            column: field.to_string(),
        }),
    }
}

fn sig_insert(
    ct: &ClassTable,
    store: &Store,
    class: &ClassName,
    id: &Ident,
    values: &[Ident],
) -> Result<Store, QueryError> {
    let flds = fields(ct, class)?;
    arity_check(class, flds.len(), values.len())?;
    let name = Backend::Signal.relation_name(class, id);
    let mut store = store.clone();
    if !store.relations.contains(&name) {
        let mut columns = vec!["time".to_string()];
        columns.extend(flds.iter().map(|(_, f)| f.clone()));
        let mut rel = Relation::new(name.clone(), columns).with_time_column();
        let mut row = vec![Cell::Bottom];
        row.extend(values.iter().map(|v| Cell::Value(v.clone())));
        rel.rows.push(row);
        store.relations.insert(rel);
    }
    store.bindings.insert((id.clone(), class.clone()), name);
    Ok(store)
}

fn sig_update(
    ct: &ClassTable,
    store: &Store,
    l: &AnnotatedIdent,
    values: &[Ident],
) -> Result<Store, QueryError> {
    let flds = fields(ct, &l.class)?;
    arity_check(&l.class, flds.len(), values.len())?;
    let rel = bound_relation(store, l)?;
    // fresh timestamp, strictly above everything stored so far
    let t = store.max_time() + 1;
    let named: Vec<(ClassName, FieldName)> = flds;
    let row = row_by_name(rel, "time", Cell::Time(t), &named, values)?;
    let mut rel = rel.clone();
    rel.rows.push(row);
    let mut store = store.clone();
    store.relations.insert(rel);
    Ok(store)
}

// ---------------------------------------------------------------------------
// Schema evolution, tuple-per-object
// ---------------------------------------------------------------------------

fn constant_defaults(defaults: &[AnnotatedIdent]) -> Vec<Cell> {
    defaults.iter().map(|d| Cell::Value(d.id.clone())).collect()
}

fn jpa_evolve_schema(
    op: &EvolutionOp,
    store: &Store,
    ct: &ClassTable,
) -> Result<(RelationSet, BackwardPayload), QueryError> {
    let rs = &store.relations;
    let mut payload = BackwardPayload::default();
    let out = match op {
        EvolutionOp::NewClass { class, superclass, fields: own } => {
            let mut columns = vec!["id".to_string()];
            columns.extend(fields(ct, superclass)?.iter().map(|(_, f)| f.clone()));
            columns.extend(own.iter().map(|(_, f)| f.clone()));
            smo_create_table(rs, Relation::new(class.0.clone(), columns).with_primary_key("id"))?
        }
        EvolutionOp::RenameClass { from, to } => {
            if rs.contains(&from.0) {
                smo_rename_table(rs, &from.0, &to.0)?
            } else {
                rs.clone()
            }
        }
        EvolutionOp::RenameField { class, olds, news } => {
            if rs.contains(&class.0) {
                smo_rename_column(rs, &class.0, olds, news)?
            } else {
                rs.clone()
            }
        }
        EvolutionOp::AddField { class, fields: new_fields, defaults } => {
            if rs.contains(&class.0) {
                let names: Vec<String> = new_fields.iter().map(|(_, f)| f.clone()).collect();
                let cells = constant_defaults(defaults);
                smo_add_column(rs, &class.0, &names, &|_, _| cells.clone())?
            } else {
                rs.clone()
            }
        }
        EvolutionOp::DeleteField { class, names } => {
            if rs.contains(&class.0) {
                let (out, recorded) = smo_drop_column(rs, &class.0, names, &|d| d.to_vec())?;
                payload.recorded.push(recorded);
                out
            } else {
                rs.clone()
            }
        }
        EvolutionOp::ChangeFieldType { class, names, .. } => {
            if rs.contains(&class.0) {
                change_field_type_on(rs, &class.0, names, &mut payload)?
            } else {
                rs.clone()
            }
        }
        EvolutionOp::NewSupClass { class, superclass, extracted } => {
            if rs.contains(&class.0) {
                let decl = ct
                    .get(class)
                    .ok_or_else(|| QueryError::Premise(format!("unknown class `{class}`")))?;
                let inherited: Vec<String> =
                    fields(ct, &decl.superclass)?.iter().map(|(_, f)| f.clone()).collect();
                let all = rs.expect(&class.0)?.columns.clone();
                let mut sub_cols = vec!["id".to_string()];
                sub_cols.extend(inherited.iter().cloned());
                sub_cols.extend(extracted.iter().cloned());
                let mut fk_cols = inherited;
                fk_cols.extend(extracted.iter().cloned());
                smo_decompose(
                    rs,
                    &class.0,
                    (&class.0, &all),
                    (&superclass.0, &sub_cols),
                    &fk_cols,
                )?
            } else {
                rs.clone()
            }
        }
        EvolutionOp::MergeClass { class, merged } => {
            match (rs.contains(&class.0), rs.contains(&merged.0)) {
                (false, false) => rs.clone(),
                (true, true) => {
                    check_merge_fk_premise(rs, &class.0, &merged.0)?;
                    smo_join(rs, &class.0, &merged.0, &class.0, false)?
                }
                _ => {
                    return Err(QueryError::Premise(format!(
                        "MergeClass: relations `{class}` and `{merged}` must both exist"
                    )))
                }
            }
        }
        EvolutionOp::DeleteClass { .. } => rs.clone(),
    };
    Ok((out, payload))
}

fn change_field_type_on(
    rs: &RelationSet,
    name: &str,
    cols: &[String],
    payload: &mut BackwardPayload,
) -> Result<RelationSet, QueryError> {
    // drop with carry, then re-add the same values: the data survives a
    // type change untouched
    let rel = rs.expect(name)?;
    let idx: Vec<usize> = cols
        .iter()
        .map(|c| rel.col_index(c))
        .collect::<Result<_, _>>()?;
    let carried: Vec<Vec<Cell>> = rel
        .rows
        .iter()
        .map(|row| idx.iter().map(|&i| row[i].clone()).collect())
        .collect();
    let (dropped, recorded) = smo_drop_column(rs, name, cols, &|d| d.to_vec())?;
    payload.recorded.push(recorded);
    Ok(smo_add_column(&dropped, name, cols, &|i, _| carried[i].clone())?)
}

/// The merge premise: every column shared with the merged relation (other
/// than the key) must be a recorded foreign key pointing at it.
fn check_merge_fk_premise(rs: &RelationSet, class: &str, merged: &str) -> Result<(), QueryError> {
    let c = rs.expect(class)?;
    let d = rs.expect(merged)?;
    let shared: Vec<&String> = c
        .columns
        .iter()
        .filter(|col| d.columns.iter().any(|x| x == *col))
        .collect();
    if shared.is_empty() {
        return Err(QueryError::Premise(format!(
            "MergeClass: `{class}` and `{merged}` share no columns"
        )));
    }
    for col in shared {
        if c.primary_key.as_deref() == Some(col.as_str()) || (c.time_column && col == "time") {
            continue;
        }
        let ok = c.foreign_keys.iter().any(|fk| {
            fk.column == *col && fk.target_relation == merged && fk.target_column == *col
        });
        if !ok {
            return Err(QueryError::Premise(format!(
                "MergeClass: shared column `{col}` of `{class}` is not a foreign key into `{merged}`"
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Schema evolution, signal
// ---------------------------------------------------------------------------

/// Tables of a signal class, one per bound instance, in identifier order.
fn signal_tables(store: &Store, class: &ClassName) -> Vec<(Ident, String)> {
    store
        .bindings
        .iter()
        .filter(|((_, c), _)| c == class)
        .map(|((id, _), target)| (id.clone(), target.clone()))
        .collect()
}

fn sig_evolve_schema(
    op: &EvolutionOp,
    store: &Store,
    ct: &ClassTable,
) -> Result<(RelationSet, BackwardPayload), QueryError> {
    let mut rs = store.relations.clone();
    let mut payload = BackwardPayload::default();
    match op {
        EvolutionOp::NewClass { .. } | EvolutionOp::DeleteClass { .. } => {}
        EvolutionOp::RenameClass { from, to } => {
            for (id, table) in signal_tables(store, from) {
                rs = smo_rename_table(&rs, &table, &Backend::Signal.relation_name(to, &id))?;
            }
        }
        EvolutionOp::RenameField { class, olds, news } => {
            for (_, table) in signal_tables(store, class) {
                rs = smo_rename_column(&rs, &table, olds, news)?;
            }
        }
        EvolutionOp::AddField { class, fields: new_fields, defaults } => {
            let names: Vec<String> = new_fields.iter().map(|(_, f)| f.clone()).collect();
            let cells = constant_defaults(defaults);
            for (_, table) in signal_tables(store, class) {
                rs = smo_add_column(&rs, &table, &names, &|_, _| cells.clone())?;
            }
        }
        EvolutionOp::DeleteField { class, names } => {
            for (_, table) in signal_tables(store, class) {
                let (next, recorded) = smo_drop_column(&rs, &table, names, &|d| d.to_vec())?;
                payload.recorded.push(recorded);
                rs = next;
            }
        }
        EvolutionOp::ChangeFieldType { class, names, .. } => {
            for (_, table) in signal_tables(store, class) {
                rs = change_field_type_on(&rs, &table, names, &mut payload)?;
            }
        }
        EvolutionOp::NewSupClass { class, superclass, extracted } => {
            let decl = ct
                .get(class)
                .ok_or_else(|| QueryError::Premise(format!("unknown class `{class}`")))?;
            let inherited: Vec<String> =
                fields(ct, &decl.superclass)?.iter().map(|(_, f)| f.clone()).collect();
            for (id, table) in signal_tables(store, class) {
                let all = rs.expect(&table)?.columns.clone();
                // the extracted table keeps the time column; a time series
                // is unreadable without one
                let mut sub_cols = vec!["time".to_string()];
                sub_cols.extend(inherited.iter().cloned());
                sub_cols.extend(extracted.iter().cloned());
                let mut fk_cols = inherited.clone();
                fk_cols.extend(extracted.iter().cloned());
                let sub_name = Backend::Signal.relation_name(superclass, &id);
                rs = smo_decompose(&rs, &table, (&table, &all), (&sub_name, &sub_cols), &fk_cols)?;
            }
        }
        EvolutionOp::MergeClass { class, merged } => {
            let class_tables = signal_tables(store, class);
            let merged_tables = signal_tables(store, merged);
            let class_ids: Vec<&Ident> = class_tables.iter().map(|(id, _)| id).collect();
            for (id, _) in &merged_tables {
                if !class_ids.contains(&id) {
                    return Err(QueryError::Premise(format!(
                        "MergeClass: `{merged}` table for `{id}` has no `{class}` partner"
                    )));
                }
            }
            for (id, table) in &class_tables {
                let partner = merged_tables
                    .iter()
                    .find(|(mid, _)| mid == id)
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| {
                        QueryError::Premise(format!(
                            "MergeClass: `{class}` table for `{id}` has no `{merged}` partner"
                        ))
                    })?;
                rs = smo_join(&rs, table, &partner, table, true)?;
            }
        }
    }
    Ok((rs, payload))
}
