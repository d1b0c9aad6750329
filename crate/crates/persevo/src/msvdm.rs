//! Multi-schema-version coexistence. The store is materialized only at the
//! latest version; older versions read through backward-derived views and
//! write through forward-translated updates, so every version sees one
//! shared database.

use crate::backends::{Backend, BackwardPayload, QueryError};
use crate::relstore::{
    drop_columns, natural_join, natural_outer_join, project, rename_attrs, smo_rename_table, Cell,
    ForeignKey, RecordedDefault, RelError, Relation, Store,
};
use crate::syntax::{
    AnnotatedIdent, ClassName, ClassTable, EvolutionOp, FieldName, Ident,
};
use crate::typing::{fields, StoreEnv, TypeError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionEntry {
    pub version: u64,
    pub class_table: ClassTable,
    pub store_env: StoreEnv,
    /// The operation that produced this version; `None` only for version 0.
    pub op: Option<EvolutionOp>,
    pub payload: BackwardPayload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionCatalog {
    pub entries: Vec<VersionEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MsvdmError {
    VersionOutOfRange { version: u64, latest: u64 },
    VersionGap { expected: u64, got: u64 },
    Untranslatable(String),
    Unrecoverable(String),
    Query(QueryError),
}

impl fmt::Display for MsvdmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MsvdmError::VersionOutOfRange { version, latest } => {
                write!(f, "version {version} does not exist (latest is {latest})")
            }
            MsvdmError::VersionGap { expected, got } => {
                write!(f, "catalog version gap: expected {expected}, got {got}")
            }
            MsvdmError::Untranslatable(m) => write!(f, "untranslatable write: {m}"),
            MsvdmError::Unrecoverable(m) => write!(f, "unrecoverable value: {m}"),
            MsvdmError::Query(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for MsvdmError {}

impl From<QueryError> for MsvdmError {
    fn from(e: QueryError) -> Self {
        MsvdmError::Query(e)
    }
}

impl From<RelError> for MsvdmError {
    fn from(e: RelError) -> Self {
        MsvdmError::Query(QueryError::Rel(e))
    }
}

impl From<TypeError> for MsvdmError {
    fn from(e: TypeError) -> Self {
        MsvdmError::Query(QueryError::Type(e))
    }
}

impl VersionCatalog {
    /// Catalog for a program that has never evolved.
    pub fn initial(class_table: ClassTable, store_env: StoreEnv) -> VersionCatalog {
        VersionCatalog {
            entries: vec![VersionEntry {
                version: 0,
                class_table,
                store_env,
                op: None,
                payload: BackwardPayload::default(),
            }],
        }
    }

    pub fn latest(&self) -> &VersionEntry {
        self.entries.last().expect("catalog never empty")
    }

    pub fn entry(&self, version: u64) -> Result<&VersionEntry, MsvdmError> {
        self.entries
            .get(version as usize)
            .ok_or(MsvdmError::VersionOutOfRange {
                version,
                latest: self.latest().version,
            })
    }

    /// Appends the outcome of a successfully applied operation.
    pub fn register_version(
        &mut self,
        op: EvolutionOp,
        class_table: ClassTable,
        store_env: StoreEnv,
        payload: BackwardPayload,
        version: u64,
    ) -> Result<(), MsvdmError> {
        let expected = self.latest().version + 1;
        if version != expected {
            return Err(MsvdmError::VersionGap { expected, got: version });
        }
        self.entries.push(VersionEntry {
            version,
            class_table,
            store_env,
            op: Some(op),
            payload,
        });
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn from_json(text: &str) -> Result<VersionCatalog, serde_json::Error> {
        serde_json::from_str(text)
    }
}

// ---------------------------------------------------------------------------
// Backward views
// ---------------------------------------------------------------------------

/// Derives the store as version `k` sees it by inverting every operation
/// applied after `k`, newest first.
pub fn view_at_version(
    catalog: &VersionCatalog,
    store: &Store,
    k: u64,
    backend: Backend,
) -> Result<Store, MsvdmError> {
    catalog.entry(k)?;
    let mut view = store.clone();
    for i in (k as usize + 1..catalog.entries.len()).rev() {
        let entry = &catalog.entries[i];
        let prev_ct = &catalog.entries[i - 1].class_table;
        let op = entry.op.as_ref().expect("non-initial entries carry an op");
        view = invert_op(op, &entry.payload, prev_ct, backend, &view)?;
    }
    Ok(view)
}

fn tables_of_class(store: &Store, class: &ClassName) -> Vec<(Ident, String)> {
    store
        .bindings
        .iter()
        .filter(|((_, c), _)| c == class)
        .map(|((id, _), t)| (id.clone(), t.clone()))
        .collect()
}

fn invert_op(
    op: &EvolutionOp,
    payload: &BackwardPayload,
    prev_ct: &ClassTable,
    backend: Backend,
    store: &Store,
) -> Result<Store, MsvdmError> {
    let mut view = store.clone();
    match op {
        EvolutionOp::NewClass { class, .. } => {
            // the class does not exist at the older version
            match backend {
                Backend::Jpa => {
                    view.relations.remove(&class.0);
                }
                Backend::Signal => {
                    for (_, table) in tables_of_class(&view, class) {
                        view.relations.remove(&table);
                    }
                }
            }
            view.bindings.retain(|(_, c), _| c != class);
        }
        EvolutionOp::RenameClass { from, to } => {
            match backend {
                Backend::Jpa => {
                    if view.relations.contains(&to.0) {
                        view.relations = smo_rename_table(&view.relations, &to.0, &from.0)?;
                    }
                }
                Backend::Signal => {
                    for (id, table) in tables_of_class(&view, to) {
                        view.relations = smo_rename_table(
                            &view.relations,
                            &table,
                            &backend.relation_name(from, &id),
                        )?;
                    }
                }
            }
            let bindings = std::mem::take(&mut view.bindings);
            for ((id, class), target) in bindings {
                if class == *to {
                    view.bindings
                        .insert((id.clone(), from.clone()), backend.relation_name(from, &id));
                } else {
                    view.bindings.insert((id, class), target);
                }
            }
        }
        EvolutionOp::RenameField { class, olds, news } => {
            for table in class_relations(&view, class, backend) {
                let rel = view.relations.expect(&table)?.clone();
                view.relations.insert(rename_attrs(&rel, news, olds)?);
            }
        }
        EvolutionOp::AddField { class, fields: new_fields, .. } => {
            let names: Vec<String> = new_fields.iter().map(|(_, f)| f.clone()).collect();
            for table in class_relations(&view, class, backend) {
                let rel = view.relations.expect(&table)?.clone();
                view.relations.insert(drop_columns(&rel, &names)?);
            }
        }
        EvolutionOp::DeleteField { class, names } => {
            // re-add the dropped columns from the recorded defaults; rows
            // born after the drop get ⊥
            for table in class_relations(&view, class, backend) {
                let recorded = payload.recorded.iter().find(|r| r.relation == table);
                let rel = view.relations.expect(&table)?.clone();
                let restored = restore_columns(&rel, names, recorded)?;
                view.relations.insert(restored);
            }
        }
        EvolutionOp::ChangeFieldType { .. } => {
            // values are identifiers either way; the data is unchanged
        }
        EvolutionOp::NewSupClass { class, superclass, .. } => match backend {
            Backend::Jpa => {
                if let (Some(c), Some(d)) = (
                    view.relations.get(&class.0).cloned(),
                    view.relations.get(&superclass.0).cloned(),
                ) {
                    let joined = natural_join(&c, &d)?;
                    view.relations.insert(joined);
                    view.relations.remove(&superclass.0);
                }
                view.bindings.retain(|(_, c), _| c != superclass);
            }
            Backend::Signal => {
                for (id, table) in tables_of_class(&view, class) {
                    let partner = backend.relation_name(superclass, &id);
                    if let (Some(c), Some(d)) = (
                        view.relations.get(&table).cloned(),
                        view.relations.get(&partner).cloned(),
                    ) {
                        // outer join keeps timestamps that only the
                        // extracted table received
                        let joined = natural_outer_join(&c, &d)?;
                        view.relations.insert(joined);
                        view.relations.remove(&partner);
                    }
                }
                view.bindings.retain(|(_, c), _| c != superclass);
            }
        },
        EvolutionOp::MergeClass { class, merged } => {
            let merged_fields: Vec<String> = fields(prev_ct, merged)?
                .iter()
                .map(|(_, f)| f.clone())
                .collect();
            match backend {
                Backend::Jpa => {
                    if let Some(c) = view.relations.get(&class.0).cloned() {
                        let mut cols = vec!["id".to_string()];
                        cols.extend(merged_fields.iter().cloned());
                        let mut part = project(&c, &cols)?;
                        part.name = merged.0.clone();
                        let mut c = c;
                        for f in &merged_fields {
                            c.foreign_keys.push(ForeignKey {
                                column: f.clone(),
                                target_relation: merged.0.clone(),
                                target_column: f.clone(),
                            });
                        }
                        c.foreign_keys.dedup();
                        view.relations.insert(c);
                        view.relations.insert(part);
                        for (id, _) in tables_of_class(store, class) {
                            view.bindings
                                .insert((id.clone(), merged.clone()), merged.0.clone());
                        }
                    }
                }
                Backend::Signal => {
                    for (id, table) in tables_of_class(store, class) {
                        if let Some(c) = view.relations.get(&table).cloned() {
                            let mut cols = vec!["time".to_string()];
                            cols.extend(merged_fields.iter().cloned());
                            let partner = backend.relation_name(merged, &id);
                            let mut part = project(&c, &cols)?;
                            part.name = partner.clone();
                            let mut c = c;
                            for f in &merged_fields {
                                c.foreign_keys.push(ForeignKey {
                                    column: f.clone(),
                                    target_relation: partner.clone(),
                                    target_column: f.clone(),
                                });
                            }
                            c.foreign_keys.dedup();
                            view.relations.insert(c);
                            view.relations.insert(part);
                            view.bindings.insert((id.clone(), merged.clone()), partner);
                        }
                    }
                }
            }
        }
        EvolutionOp::DeleteClass { .. } => {}
    }
    Ok(view)
}

/// Relations that hold data of `class`: its table for the tuple mapping, one
/// table per bound instance for the signal mapping.
fn class_relations(store: &Store, class: &ClassName, backend: Backend) -> Vec<String> {
    match backend {
        Backend::Jpa => {
            if store.relations.contains(&class.0) {
                vec![class.0.clone()]
            } else {
                Vec::new()
            }
        }
        Backend::Signal => tables_of_class(store, class).into_iter().map(|(_, t)| t).collect(),
    }
}

fn restore_columns(
    rel: &Relation,
    names: &[FieldName],
    recorded: Option<&RecordedDefault>,
) -> Result<Relation, RelError> {
    let mut out = rel.clone();
    for name in names {
        if out.columns.iter().any(|c| c == name) {
            return Err(RelError::DuplicateColumn {
                relation: out.name.clone(),
                column: name.clone(),
            });
        }
        out.columns.push(name.clone());
    }
    for (i, row) in out.rows.iter_mut().enumerate() {
        let key = crate::relstore::row_key(rel, i, &row[..rel.columns.len()]);
        for name in names {
            let cell = recorded
                .and_then(|r| {
                    let j = r.columns.iter().position(|c| c == name)?;
                    r.rows.get(&key).and_then(|cells| cells.get(j).cloned())
                })
                .unwrap_or(Cell::Bottom);
            row.push(cell);
        }
    }
    Ok(out)
}

/// Reads a field as version `k` would see it.
pub fn read_at_version(
    catalog: &VersionCatalog,
    store: &Store,
    k: u64,
    backend: Backend,
    l: &AnnotatedIdent,
    field: &str,
) -> Result<Ident, MsvdmError> {
    let view = view_at_version(catalog, store, k, backend)?;
    backend.select(&view, l, field).map_err(MsvdmError::Query)
}

// ---------------------------------------------------------------------------
// Forward writes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WriteRequest {
    Insert {
        class: ClassName,
        id: Ident,
        values: Vec<Ident>,
    },
    Update {
        target: AnnotatedIdent,
        values: Vec<Ident>,
    },
}

#[derive(Debug, Clone)]
struct PendingWrite {
    is_insert: bool,
    class: ClassName,
    id: Ident,
    values: BTreeMap<FieldName, Ident>,
    /// Split off by a superclass extraction; its values ride along with the
    /// primary write, so a later merge simply drops it.
    secondary: bool,
}

/// Translates a write phrased against version `k`'s schema forward through
/// every later operation and executes it at the latest schema. Lossy steps
/// (values for dropped columns) are logged, not errored.
pub fn write_at_version(
    catalog: &VersionCatalog,
    store: &Store,
    k: u64,
    backend: Backend,
    request: WriteRequest,
) -> Result<(Store, Vec<String>), MsvdmError> {
    let entry_k = catalog.entry(k)?;
    let ct_k = &entry_k.class_table;
    let (is_insert, class, id, values) = match &request {
        WriteRequest::Insert { class, id, values } => (true, class, id, values),
        WriteRequest::Update { target, values } => (false, &target.class, &target.id, values),
    };
    let flds = fields(ct_k, class)?;
    if flds.len() != values.len() {
        return Err(MsvdmError::Query(QueryError::ArityMismatch {
            class: class.clone(),
            expected: flds.len(),
            got: values.len(),
        }));
    }
    let named: BTreeMap<FieldName, Ident> = flds
        .iter()
        .map(|(_, f)| f.clone())
        .zip(values.iter().cloned())
        .collect();
    let mut pending = vec![PendingWrite {
        is_insert,
        class: class.clone(),
        id: id.clone(),
        values: named,
        secondary: false,
    }];
    let mut log = Vec::new();

    for i in k as usize + 1..catalog.entries.len() {
        let entry = &catalog.entries[i];
        let op = entry.op.as_ref().expect("non-initial entries carry an op");
        let mut next = Vec::new();
        for mut w in pending {
            match op {
                EvolutionOp::NewClass { .. } | EvolutionOp::ChangeFieldType { .. } => {
                    next.push(w);
                }
                EvolutionOp::DeleteClass { .. } => next.push(w),
                EvolutionOp::RenameClass { from, to } => {
                    if w.class == *from {
                        w.class = to.clone();
                    }
                    next.push(w);
                }
                EvolutionOp::RenameField { class, olds, news } => {
                    if w.class == *class {
                        let mut renamed = BTreeMap::new();
                        for (f, v) in std::mem::take(&mut w.values) {
                            match olds.iter().position(|o| *o == f) {
                                Some(i) => renamed.insert(news[i].clone(), v),
                                None => renamed.insert(f, v),
                            };
                        }
                        w.values = renamed;
                    }
                    next.push(w);
                }
                EvolutionOp::AddField { class, fields: new_fields, defaults } => {
                    if w.class == *class && w.is_insert {
                        for ((_, f), d) in new_fields.iter().zip(defaults) {
                            w.values.insert(f.clone(), d.id.clone());
                        }
                    }
                    next.push(w);
                }
                EvolutionOp::DeleteField { class, names } => {
                    if w.class == *class {
                        for n in names {
                            if let Some(v) = w.values.remove(n) {
                                log.push(format!(
                                    "dropping value `{v}` written for `{class}.{n}`: the column no longer exists"
                                ));
                            }
                        }
                    }
                    next.push(w);
                }
                EvolutionOp::NewSupClass { class, superclass, .. } => {
                    if w.class == *class {
                        let sub_fields = fields(&entry.class_table, superclass)?;
                        let sub_values: BTreeMap<FieldName, Ident> = sub_fields
                            .iter()
                            .filter_map(|(_, f)| {
                                w.values.get(f).map(|v| (f.clone(), v.clone()))
                            })
                            .collect();
                        next.push(w.clone());
                        next.push(PendingWrite {
                            is_insert: w.is_insert,
                            class: superclass.clone(),
                            id: w.id.clone(),
                            values: sub_values,
                            secondary: true,
                        });
                    } else {
                        next.push(w);
                    }
                }
                EvolutionOp::MergeClass { class, merged } => {
                    if w.class == *merged {
                        if w.secondary {
                            // its values already ride with the subclass write
                            continue;
                        }
                        if w.is_insert {
                            return Err(MsvdmError::Untranslatable(format!(
                                "cannot insert `{merged}`: its declaration was merged into `{class}`"
                            )));
                        }
                        w.class = class.clone();
                    }
                    next.push(w);
                }
            }
        }
        pending = next;
    }

    let latest_ct = &catalog.latest().class_table;
    let mut out = store.clone();
    for w in pending {
        if w.is_insert {
            let flds = fields(latest_ct, &w.class)?;
            let mut positional = Vec::with_capacity(flds.len());
            for (_, f) in &flds {
                let v = w.values.get(f).ok_or_else(|| {
                    MsvdmError::Untranslatable(format!(
                        "no value or default for field `{f}` of `{}`",
                        w.class
                    ))
                })?;
                positional.push(v.clone());
            }
            out = backend
                .insert(latest_ct, &out, &w.class, &w.id, &positional)
                .map_err(MsvdmError::Query)?;
        } else {
            let target = AnnotatedIdent {
                id: w.id.clone(),
                class: w.class.clone(),
            };
            out = partial_update(backend, &out, &target, &w.values)?;
        }
    }
    Ok((out, log))
}

/// Updates only the named columns. The tuple mapping edits cells in place;
/// the signal mapping appends a row with ⊥ for columns the writer does not
/// know about, which the latest-value read semantics skips.
fn partial_update(
    backend: Backend,
    store: &Store,
    l: &AnnotatedIdent,
    values: &BTreeMap<FieldName, Ident>,
) -> Result<Store, MsvdmError> {
    let target = store
        .binding_target(&l.id, &l.class)
        .ok_or_else(|| MsvdmError::Query(QueryError::NoBinding(l.id.clone())))?
        .to_string();
    let rel = store.relations.expect(&target)?;
    let mut rel = rel.clone();
    match backend {
        Backend::Jpa => {
            let id_idx = rel.col_index("id")?;
            let pos = rel
                .rows
                .iter()
                .position(|row| row[id_idx] == Cell::Value(l.id.clone()))
                .ok_or_else(|| {
                    MsvdmError::Query(QueryError::MissingRow {
                        relation: target.clone(),
                        id: l.id.clone(),
                    })
                })?;
            for (f, v) in values {
                let i = rel.col_index(f)?;
                rel.rows[pos][i] = Cell::Value(v.clone());
            }
        }
        Backend::Signal => {
            let t = store.max_time() + 1;
            let row: Vec<Cell> = rel
                .columns
                .iter()
                .map(|c| {
                    if c == "time" {
                        Cell::Time(t)
                    } else {
                        match values.get(c) {
                            Some(v) => Cell::Value(v.clone()),
                            None => Cell::Bottom,
                        }
                    }
                })
                .collect();
            rel.rows.push(row);
        }
    }
    let mut out = store.clone();
    out.relations.insert(rel);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::annotate;
    use crate::interpreter::{apply_evolution, EvolutionState};
    use crate::syntax::{parse_evolution_script, parse_program, VersionedProgram};
    use crate::typing::build_store_env;

    fn setup(backend: Backend) -> (EvolutionState, VersionCatalog) {
        let (ct, main) = parse_program(
            "class V extends Object {} \
             class LoginStatus extends Object { V status; } \
             main { new LoginStatus(#kamina, new V(#t)) }",
        )
        .unwrap();
        let state = EvolutionState {
            store: Store::new(),
            program: VersionedProgram { version: 0, class_table: ct.clone(), main },
        };
        // materialize the object so version 0 has data
        let engine = crate::interpreter::Engine::Direct(backend);
        let out = crate::interpreter::run(
            &ct,
            &engine,
            state.store.clone(),
            state.program.main.clone(),
            100,
            None,
        );
        let store = match out {
            crate::interpreter::RunOutcome::Done { store, .. } => store,
            other => panic!("setup failed: {other:?}"),
        };
        let state = EvolutionState { store, program: state.program };
        let sigma = build_store_env(
            &state.program.class_table,
            &state.program.main,
            &state.store,
        )
        .unwrap();
        let catalog = VersionCatalog::initial(state.program.class_table.clone(), sigma);
        (state, catalog)
    }

    fn evolve(
        state: &EvolutionState,
        catalog: &mut VersionCatalog,
        backend: Backend,
        script: &str,
    ) -> EvolutionState {
        let ops = parse_evolution_script(script).unwrap();
        let mut cur = state.clone();
        for op in ops {
            let (next, art) = apply_evolution(&cur, &op, backend).unwrap();
            catalog
                .register_version(
                    op,
                    next.program.class_table.clone(),
                    art.sigma_after.clone(),
                    art.payload.clone(),
                    next.program.version,
                )
                .unwrap();
            cur = next;
        }
        cur
    }

    #[test]
    fn rename_field_read_back_at_version_zero() {
        for backend in [Backend::Jpa, Backend::Signal] {
            let (state, mut catalog) = setup(backend);
            let evolved = evolve(&state, &mut catalog, backend, "RenameField LoginStatus { status -> active }");
            let l = AnnotatedIdent::new("kamina", "LoginStatus");
            // version-0 read still uses the old field name
            let got = read_at_version(&catalog, &evolved.store, 0, backend, &l, "status").unwrap();
            assert_eq!(got, Ident::new("t"));
            // and the latest read uses the new one
            let got = read_at_version(&catalog, &evolved.store, 1, backend, &l, "active").unwrap();
            assert_eq!(got, Ident::new("t"));
        }
    }

    #[test]
    fn add_field_is_invisible_at_version_zero() {
        for backend in [Backend::Jpa, Backend::Signal] {
            let (mut state, mut catalog) = setup(backend);
            // make a default object available
            state.store = backend
                .insert(
                    &state.program.class_table,
                    &state.store,
                    &ClassName::new("V"),
                    &Ident::new("d"),
                    &[],
                )
                .unwrap();
            let evolved = evolve(&state, &mut catalog, backend, "AddField LoginStatus { V extra = #d }");
            let view = view_at_version(&catalog, &evolved.store, 0, backend).unwrap();
            let rel_name = match backend {
                Backend::Jpa => "LoginStatus".to_string(),
                Backend::Signal => "LoginStatus_kamina".to_string(),
            };
            let rel = view.relations.get(&rel_name).unwrap();
            assert!(!rel.columns.iter().any(|c| c == "extra"));
            // the latest still sees it
            let rel = evolved.store.relations.get(&rel_name).unwrap();
            assert!(rel.columns.iter().any(|c| c == "extra"));
        }
    }

    #[test]
    fn version_zero_insert_fills_added_column_with_default() {
        for backend in [Backend::Jpa, Backend::Signal] {
            let (mut state, mut catalog) = setup(backend);
            state.store = backend
                .insert(
                    &state.program.class_table,
                    &state.store,
                    &ClassName::new("V"),
                    &Ident::new("d"),
                    &[],
                )
                .unwrap();
            let evolved = evolve(&state, &mut catalog, backend, "AddField LoginStatus { V extra = #d }");
            let req = WriteRequest::Insert {
                class: ClassName::new("LoginStatus"),
                id: Ident::new("rossiu"),
                values: vec![Ident::new("t")],
            };
            let (store, log) = write_at_version(&catalog, &evolved.store, 0, backend, req).unwrap();
            assert!(log.is_empty());
            let l = AnnotatedIdent::new("rossiu", "LoginStatus");
            assert_eq!(
                backend.select(&store, &l, "extra").unwrap(),
                Ident::new("d")
            );
            assert_eq!(
                read_at_version(&catalog, &store, 0, backend, &l, "status").unwrap(),
                Ident::new("t")
            );
        }
    }

    #[test]
    fn deleted_field_write_is_lossy_and_logged() {
        for backend in [Backend::Jpa, Backend::Signal] {
            let (state, mut catalog) = setup(backend);
            let evolved = evolve(&state, &mut catalog, backend, "DeleteField LoginStatus { status }");
            let req = WriteRequest::Update {
                target: AnnotatedIdent::new("kamina", "LoginStatus"),
                values: vec![Ident::new("t9")],
            };
            let (store, log) = write_at_version(&catalog, &evolved.store, 0, backend, req).unwrap();
            assert_eq!(log.len(), 1, "{log:?}");
            // the recorded default still serves the old value backward
            let got = read_at_version(
                &catalog,
                &store,
                0,
                backend,
                &AnnotatedIdent::new("kamina", "LoginStatus"),
                "status",
            )
            .unwrap();
            assert_eq!(got, Ident::new("t"));
        }
    }

    #[test]
    fn annotate_through_view_after_rename_class() {
        for backend in [Backend::Jpa, Backend::Signal] {
            let (state, mut catalog) = setup(backend);
            let evolved = evolve(&state, &mut catalog, backend, "RenameClass LoginStatus -> Session");
            let view = view_at_version(&catalog, &evolved.store, 0, backend).unwrap();
            let ct0 = &catalog.entry(0).unwrap().class_table;
            let a = annotate(ct0, &view, &Ident::new("kamina")).unwrap();
            assert_eq!(a.class, ClassName::new("LoginStatus"));
            // latest annotation uses the new name
            let ct1 = &catalog.latest().class_table;
            let a = annotate(ct1, &evolved.store, &Ident::new("kamina")).unwrap();
            assert_eq!(a.class, ClassName::new("Session"));
        }
    }

    #[test]
    fn version_gap_is_rejected() {
        let (state, _) = setup(Backend::Jpa);
        let sigma = StoreEnv::new();
        let mut catalog = VersionCatalog::initial(state.program.class_table.clone(), sigma.clone());
        let err = catalog
            .register_version(
                EvolutionOp::RenameClass {
                    from: ClassName::new("A"),
                    to: ClassName::new("B"),
                },
                state.program.class_table.clone(),
                sigma,
                BackwardPayload::default(),
                5,
            )
            .unwrap_err();
        assert!(matches!(err, MsvdmError::VersionGap { .. }));
    }

    #[test]
    fn two_op_script_yields_three_entries() {
        let backend = Backend::Jpa;
        let (state, mut catalog) = setup(backend);
        evolve(
            &state,
            &mut catalog,
            backend,
            "RenameField LoginStatus { status -> active }\nDeleteField LoginStatus { active }",
        );
        assert_eq!(catalog.entries.len(), 3);
        assert!(catalog.entries[0].op.is_none());
        assert!(catalog.entries[0].payload.recorded.is_empty());
        // the drop recorded its column values for backward reads
        let recorded = &catalog.entries[2].payload.recorded;
        assert_eq!(recorded.len(), 1);
        assert_eq!(recorded[0].columns, vec!["active".to_string()]);
        assert_eq!(recorded[0].rows["kamina"], vec![crate::relstore::Cell::value("t")]);
    }

    #[test]
    fn catalog_json_round_trip() {
        let (state, mut catalog) = setup(Backend::Jpa);
        evolve(&state, &mut catalog, Backend::Jpa, "RenameField LoginStatus { status -> active }");
        let json = catalog.to_json();
        let back = VersionCatalog::from_json(&json).unwrap();
        assert_eq!(back, catalog);
        assert_eq!(back.to_json(), json);
    }
}
