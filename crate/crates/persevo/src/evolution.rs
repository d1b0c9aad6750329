//! The evolution operations: class-table rewriting, expression rewriting,
//! store-environment evolution, and store evolution.
//!
//! Each operation carries premises that are checked by name before anything
//! is rewritten; a violation leaves every input untouched.

use crate::backends::{Backend, BackwardPayload, QueryError};
use crate::relstore::{RelError, Store};
use crate::syntax::{
    AnnotatedIdent, ClassDecl, ClassName, ClassTable, EvolutionOp, Expr, FieldName, Ident,
    MethodDecl,
};
use crate::typing::{fields, type_expr_at, StoreEnv, TypeEnv, TypeError};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvolveError {
    Premise { rule: &'static str, message: String },
    Type(TypeError),
    Query(QueryError),
}

impl EvolveError {
    fn premise(rule: &'static str, message: impl Into<String>) -> EvolveError {
        EvolveError::Premise {
            rule,
            message: message.into(),
        }
    }
}

impl fmt::Display for EvolveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvolveError::Premise { rule, message } => write!(f, "{rule}: {message}"),
            EvolveError::Type(e) => write!(f, "{e}"),
            EvolveError::Query(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for EvolveError {}

impl From<TypeError> for EvolveError {
    fn from(e: TypeError) -> Self {
        EvolveError::Type(e)
    }
}

impl From<QueryError> for EvolveError {
    fn from(e: QueryError) -> Self {
        EvolveError::Query(e)
    }
}

impl From<RelError> for EvolveError {
    fn from(e: RelError) -> Self {
        EvolveError::Query(QueryError::Rel(e))
    }
}

const RESERVED_FIELDS: &[&str] = &["id", "time", "set"];

fn class_exists(ct: &ClassTable, c: &ClassName) -> bool {
    c.is_object() || ct.contains(c)
}

fn own_field_names(decl: &ClassDecl) -> Vec<&FieldName> {
    decl.field_names().collect()
}

/// Checks the rule-specific premises of `op` against the class table, the
/// store environment, and the main expression.
pub fn check_premises(
    op: &EvolutionOp,
    ct: &ClassTable,
    sigma: &StoreEnv,
    main: &Expr,
) -> Result<(), EvolveError> {
    match op {
        EvolutionOp::NewClass { class, superclass, fields: own } => {
            if class.is_object() || ct.contains(class) {
                return Err(EvolveError::premise(
                    "E-NEWCLASS",
                    format!("class `{class}` already exists"),
                ));
            }
            if !class_exists(ct, superclass) {
                return Err(EvolveError::premise(
                    "E-NEWCLASS",
                    format!("unknown superclass `{superclass}`"),
                ));
            }
            check_new_fields(ct, "E-NEWCLASS", own, &[])?;
        }
        EvolutionOp::RenameClass { from, to } => {
            if !ct.contains(from) {
                return Err(EvolveError::premise(
                    "E-RENAMECLASS",
                    format!("unknown class `{from}`"),
                ));
            }
            if to.is_object() || ct.contains(to) {
                return Err(EvolveError::premise(
                    "E-RENAMECLASS",
                    format!("class `{to}` already exists"),
                ));
            }
        }
        EvolutionOp::RenameField { class, olds, news } => {
            let decl = known_class(ct, class, "E-RENAMEFIELD")?;
            if olds.len() != news.len() {
                return Err(EvolveError::premise("E-RENAMEFIELD", "old/new name lists differ in length"));
            }
            distinct("E-RENAMEFIELD", olds)?;
            distinct("E-RENAMEFIELD", news)?;
            let own = own_field_names(decl);
            for o in olds {
                if !own.contains(&o) {
                    return Err(EvolveError::premise(
                        "E-RENAMEFIELD",
                        format!("field `{o}` is not declared in `{class}`"),
                    ));
                }
            }
            let all = fields(ct, class)?;
            for n in news {
                if RESERVED_FIELDS.contains(&n.as_str()) {
                    return Err(EvolveError::premise(
                        "E-RENAMEFIELD",
                        format!("`{n}` is a reserved column name"),
                    ));
                }
                if all.iter().any(|(_, f)| f == n) {
                    return Err(EvolveError::premise(
                        "E-RENAMEFIELD",
                        format!("field `{n}` already exists on `{class}`"),
                    ));
                }
            }
        }
        EvolutionOp::AddField { class, fields: new_fields, defaults } => {
            known_class(ct, class, "E-ADDFIELD")?;
            if new_fields.len() != defaults.len() {
                return Err(EvolveError::premise("E-ADDFIELD", "field/default lists differ in length"));
            }
            let existing = fields(ct, class)?;
            check_new_fields(ct, "E-ADDFIELD", new_fields, &existing)?;
            // defaults must already be well-typed in Σ: ∅ | Σ ⊢ l̄ : D̄
            for d in defaults {
                if !sigma.contains(&d.id, &d.class) {
                    return Err(EvolveError::premise(
                        "E-ADDFIELD",
                        format!("default `#{}` is not known at class `{}`", d.id, d.class),
                    ));
                }
            }
        }
        EvolutionOp::DeleteField { class, names } => {
            let decl = known_class(ct, class, "E-DELFIELD")?;
            distinct("E-DELFIELD", names)?;
            let own = own_field_names(decl);
            for n in names {
                if !own.contains(&n) {
                    return Err(EvolveError::premise(
                        "E-DELFIELD",
                        format!("field `{n}` is not declared in `{class}`"),
                    ));
                }
            }
        }
        EvolutionOp::ChangeFieldType { class, names, new_types } => {
            let decl = known_class(ct, class, "E-CHNGFLDTYPE")?;
            if names.len() != new_types.len() {
                return Err(EvolveError::premise("E-CHNGFLDTYPE", "name/type lists differ in length"));
            }
            distinct("E-CHNGFLDTYPE", names)?;
            let own = own_field_names(decl);
            for n in names {
                if !own.contains(&n) {
                    return Err(EvolveError::premise(
                        "E-CHNGFLDTYPE",
                        format!("field `{n}` is not declared in `{class}`"),
                    ));
                }
            }
            for t in new_types {
                if !class_exists(ct, t) {
                    return Err(EvolveError::premise(
                        "E-CHNGFLDTYPE",
                        format!("unknown type `{t}`"),
                    ));
                }
            }
        }
        EvolutionOp::NewSupClass { class, superclass, extracted } => {
            let decl = known_class(ct, class, "E-NEWSUPCLASS")?;
            if superclass.is_object() || ct.contains(superclass) {
                return Err(EvolveError::premise(
                    "E-NEWSUPCLASS",
                    format!("class `{superclass}` already exists"),
                ));
            }
            distinct("E-NEWSUPCLASS", extracted)?;
            let own = own_field_names(decl);
            for g in extracted {
                if !own.contains(&g) {
                    return Err(EvolveError::premise(
                        "E-NEWSUPCLASS",
                        format!("field `{g}` is not declared in `{class}`"),
                    ));
                }
            }
        }
        EvolutionOp::MergeClass { class, merged } => {
            let decl = known_class(ct, class, "E-MERGECLASS")?;
            let merged_decl = known_class(ct, merged, "E-MERGECLASS")?;
            if &decl.superclass != merged {
                return Err(EvolveError::premise(
                    "E-MERGECLASS",
                    format!("`{merged}` is not the direct superclass of `{class}`"),
                ));
            }
            let names: Vec<&String> = decl.methods.iter().map(|m| &m.name).collect();
            for m in &merged_decl.methods {
                if names.contains(&&m.name) {
                    return Err(EvolveError::premise(
                        "E-MERGECLASS",
                        format!("method `{}` is declared in both classes", m.name),
                    ));
                }
            }
            if ct.contains_new_of(merged) || main.contains_new_of(merged) {
                return Err(EvolveError::premise(
                    "E-MERGECLASS",
                    format!("`new {merged}(...)` still appears in the program"),
                ));
            }
            for other in ct.iter() {
                if other.name != *class && other.superclass == *merged {
                    return Err(EvolveError::premise(
                        "E-MERGECLASS",
                        format!("class `{}` also extends `{merged}`", other.name),
                    ));
                }
            }
        }
        EvolutionOp::DeleteClass { .. } => {
            return Err(EvolveError::premise(
                "E-DELCLASS",
                "DeleteClass is internal and cannot be applied directly",
            ));
        }
    }
    Ok(())
}

fn known_class<'a>(
    ct: &'a ClassTable,
    c: &ClassName,
    rule: &'static str,
) -> Result<&'a ClassDecl, EvolveError> {
    ct.get(c)
        .ok_or_else(|| EvolveError::premise(rule, format!("unknown class `{c}`")))
}

fn distinct(rule: &'static str, names: &[FieldName]) -> Result<(), EvolveError> {
    for (i, n) in names.iter().enumerate() {
        if names[i + 1..].contains(n) {
            return Err(EvolveError::premise(rule, format!("duplicate name `{n}`")));
        }
    }
    Ok(())
}

fn check_new_fields(
    ct: &ClassTable,
    rule: &'static str,
    new_fields: &[(ClassName, FieldName)],
    existing: &[(ClassName, FieldName)],
) -> Result<(), EvolveError> {
    let names: Vec<FieldName> = new_fields.iter().map(|(_, f)| f.clone()).collect();
    distinct(rule, &names)?;
    for (ty, f) in new_fields {
        if RESERVED_FIELDS.contains(&f.as_str()) {
            return Err(EvolveError::premise(rule, format!("`{f}` is a reserved column name")));
        }
        if existing.iter().any(|(_, e)| e == f) {
            return Err(EvolveError::premise(rule, format!("field `{f}` already exists")));
        }
        if !class_exists(ct, ty) {
            return Err(EvolveError::premise(rule, format!("unknown field type `{ty}`")));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Class-table evolution
// ---------------------------------------------------------------------------

/// Applies `op` to the class table. Premises must have been checked.
pub fn evolve_class_table(
    op: &EvolutionOp,
    ct: &ClassTable,
    sigma: &StoreEnv,
) -> Result<ClassTable, EvolveError> {
    match op {
        EvolutionOp::NewClass { class, superclass, fields: own } => {
            let mut out = ct.clone();
            out.insert(ClassDecl {
                name: class.clone(),
                superclass: superclass.clone(),
                fields: own.clone(),
                methods: Vec::new(),
            });
            Ok(out)
        }
        EvolutionOp::DeleteClass { class } => {
            let mut out = ct.clone();
            out.remove(class);
            Ok(out)
        }
        EvolutionOp::RenameClass { from, to } => Ok(rename_class_in_table(ct, from, to)),
        EvolutionOp::RenameField { class, olds, news } => {
            rename_field_in_table(ct, sigma, class, olds, news)
        }
        EvolutionOp::AddField { class, fields: new_fields, defaults } => {
            // receivers are typed against the pre-evolution table: the
            // sites being expanded still carry their old arities
            let mut expanded = expand_in_table(ct, sigma, class, defaults)?;
            let mut decl = expanded.get(class).expect("premises checked").clone();
            decl.fields.extend(new_fields.iter().cloned());
            expanded.insert(decl);
            Ok(expanded)
        }
        EvolutionOp::DeleteField { class, names } => {
            let mut decl = ct.get(class).expect("premises checked").clone();
            decl.fields.retain(|(_, f)| !names.contains(f));
            let mut out = ct.clone();
            out.insert(decl);
            Ok(out)
        }
        EvolutionOp::ChangeFieldType { class, names, new_types } => {
            let mut decl = ct.get(class).expect("premises checked").clone();
            for (ty, f) in &mut decl.fields {
                if let Some(i) = names.iter().position(|n| n == f) {
                    *ty = new_types[i].clone();
                }
            }
            let mut out = ct.clone();
            out.insert(decl);
            Ok(out)
        }
        EvolutionOp::NewSupClass { class, superclass, extracted } => {
            // The composition of DeleteField, NewClass, DeleteClass and a
            // re-added declaration; the re-added class keeps its methods.
            let decl = ct.get(class).expect("premises checked").clone();
            let old_super = decl.superclass.clone();
            let extracted_fields: Vec<(ClassName, FieldName)> = decl
                .fields
                .iter()
                .filter(|(_, f)| extracted.contains(f))
                .cloned()
                .collect();
            let remaining: Vec<(ClassName, FieldName)> = decl
                .fields
                .iter()
                .filter(|(_, f)| !extracted.contains(f))
                .cloned()
                .collect();
            let mut out = ct.clone();
            out.remove(class);
            out.insert(ClassDecl {
                name: superclass.clone(),
                superclass: old_super,
                fields: extracted_fields,
                methods: Vec::new(),
            });
            out.insert(ClassDecl {
                name: class.clone(),
                superclass: superclass.clone(),
                fields: remaining,
                methods: decl.methods,
            });
            Ok(out)
        }
        EvolutionOp::MergeClass { class, merged } => {
            let decl = ct.get(class).expect("premises checked").clone();
            let merged_decl = ct.get(merged).expect("premises checked").clone();
            let mut fields = merged_decl.fields.clone();
            fields.extend(decl.fields.iter().cloned());
            let mut methods = merged_decl.methods.clone();
            methods.extend(decl.methods.iter().cloned());
            let combined = ClassDecl {
                name: class.clone(),
                superclass: merged_decl.superclass.clone(),
                fields,
                methods,
            };
            let mut out = ct.clone();
            out.remove(merged);
            out.insert(combined);
            Ok(out)
        }
    }
}

/// Main-expression evolution: renames rewrite, field additions expand
/// constructor and `set` sites, and everything else leaves the expression
/// alone (unsafe deletions surface later as type errors).
pub fn evolve_expr(
    op: &EvolutionOp,
    e: &Expr,
    ct: &ClassTable,
    sigma: &StoreEnv,
) -> Result<Expr, EvolveError> {
    match op {
        EvolutionOp::RenameClass { from, to } => Ok(rename_class_in_expr(e, from, to)),
        EvolutionOp::RenameField { class, olds, news } => {
            rename_field_in_expr(e, ct, &TypeEnv::new(), sigma, class, olds, news, "main")
        }
        EvolutionOp::AddField { class, defaults, .. } => {
            expand_in_expr(e, ct, &TypeEnv::new(), sigma, class, defaults, "main")
        }
        _ => Ok(e.clone()),
    }
}

// --- class renaming -------------------------------------------------------

fn rename_class_name(c: &ClassName, from: &ClassName, to: &ClassName) -> ClassName {
    if c == from {
        to.clone()
    } else {
        c.clone()
    }
}

pub fn rename_class_in_table(ct: &ClassTable, from: &ClassName, to: &ClassName) -> ClassTable {
    let mut out = ClassTable::new();
    for decl in ct.iter() {
        out.insert(ClassDecl {
            name: rename_class_name(&decl.name, from, to),
            superclass: rename_class_name(&decl.superclass, from, to),
            fields: decl
                .fields
                .iter()
                .map(|(ty, f)| (rename_class_name(ty, from, to), f.clone()))
                .collect(),
            methods: decl
                .methods
                .iter()
                .map(|m| MethodDecl {
                    return_type: rename_class_name(&m.return_type, from, to),
                    name: m.name.clone(),
                    params: m
                        .params
                        .iter()
                        .map(|(ty, x)| (rename_class_name(ty, from, to), x.clone()))
                        .collect(),
                    body: rename_class_in_expr(&m.body, from, to),
                })
                .collect(),
        });
    }
    out
}

pub fn rename_class_in_expr(e: &Expr, from: &ClassName, to: &ClassName) -> Expr {
    match e {
        Expr::Var(_) | Expr::Raw(_) => e.clone(),
        // runtime annotations follow the store relabeling
        Expr::Ann(a) => Expr::Ann(AnnotatedIdent {
            id: a.id.clone(),
            class: rename_class_name(&a.class, from, to),
        }),
        Expr::Field(r, f) => Expr::Field(Box::new(rename_class_in_expr(r, from, to)), f.clone()),
        Expr::Set(r, args) => Expr::Set(
            Box::new(rename_class_in_expr(r, from, to)),
            args.iter().map(|a| rename_class_in_expr(a, from, to)).collect(),
        ),
        Expr::Call(r, m, args) => Expr::Call(
            Box::new(rename_class_in_expr(r, from, to)),
            m.clone(),
            args.iter().map(|a| rename_class_in_expr(a, from, to)).collect(),
        ),
        Expr::New(c, key, args) => Expr::New(
            rename_class_name(c, from, to),
            key.clone(),
            args.iter().map(|a| rename_class_in_expr(a, from, to)).collect(),
        ),
    }
}

// --- field renaming -------------------------------------------------------

pub fn rename_field_in_table(
    ct: &ClassTable,
    sigma: &StoreEnv,
    class: &ClassName,
    olds: &[FieldName],
    news: &[FieldName],
) -> Result<ClassTable, EvolveError> {
    let mut out = ClassTable::new();
    for decl in ct.iter() {
        let fields = if &decl.name == class {
            decl.fields
                .iter()
                .map(|(ty, f)| match olds.iter().position(|o| o == f) {
                    Some(i) => (ty.clone(), news[i].clone()),
                    None => (ty.clone(), f.clone()),
                })
                .collect()
        } else {
            decl.fields.clone()
        };
        let mut methods = Vec::new();
        for m in &decl.methods {
            let mut gamma = TypeEnv::new().bind("this", decl.name.clone());
            for (ty, x) in &m.params {
                gamma = gamma.bind(x.clone(), ty.clone());
            }
            let path = format!("{}.{}", decl.name, m.name);
            methods.push(MethodDecl {
                return_type: m.return_type.clone(),
                name: m.name.clone(),
                params: m.params.clone(),
                body: rename_field_in_expr(&m.body, ct, &gamma, sigma, class, olds, news, &path)?,
            });
        }
        out.insert(ClassDecl {
            name: decl.name.clone(),
            superclass: decl.superclass.clone(),
            fields,
            methods,
        });
    }
    Ok(out)
}

/// Rewrites `e.f_i` to `e.g_i` only when the receiver types to exactly the
/// renamed class; accesses through other classes are left alone.
#[allow(clippy::too_many_arguments)]
pub fn rename_field_in_expr(
    e: &Expr,
    ct: &ClassTable,
    gamma: &TypeEnv,
    sigma: &StoreEnv,
    class: &ClassName,
    olds: &[FieldName],
    news: &[FieldName],
    path: &str,
) -> Result<Expr, EvolveError> {
    let rw = |e: &Expr| rename_field_in_expr(e, ct, gamma, sigma, class, olds, news, path);
    Ok(match e {
        Expr::Var(_) | Expr::Raw(_) | Expr::Ann(_) => e.clone(),
        Expr::Field(recv, f) => {
            let recv_ty = type_expr_at(ct, gamma, sigma, recv, path)?;
            let new_name = if &recv_ty == class {
                match olds.iter().position(|o| o == f) {
                    Some(i) => news[i].clone(),
                    None => f.clone(),
                }
            } else {
                f.clone()
            };
            Expr::Field(Box::new(rw(recv)?), new_name)
        }
        Expr::Set(recv, args) => Expr::Set(
            Box::new(rw(recv)?),
            args.iter().map(&rw).collect::<Result<_, _>>()?,
        ),
        Expr::Call(recv, m, args) => Expr::Call(
            Box::new(rw(recv)?),
            m.clone(),
            args.iter().map(&rw).collect::<Result<_, _>>()?,
        ),
        Expr::New(c, key, args) => Expr::New(
            c.clone(),
            key.clone(),
            args.iter().map(&rw).collect::<Result<_, _>>()?,
        ),
    })
}

// --- expansion at constructor and set sites --------------------------------

pub fn expand_in_table(
    ct: &ClassTable,
    sigma: &StoreEnv,
    class: &ClassName,
    defaults: &[AnnotatedIdent],
) -> Result<ClassTable, EvolveError> {
    let mut out = ClassTable::new();
    for decl in ct.iter() {
        let mut methods = Vec::new();
        for m in &decl.methods {
            let mut gamma = TypeEnv::new().bind("this", decl.name.clone());
            for (ty, x) in &m.params {
                gamma = gamma.bind(x.clone(), ty.clone());
            }
            let path = format!("{}.{}", decl.name, m.name);
            methods.push(MethodDecl {
                return_type: m.return_type.clone(),
                name: m.name.clone(),
                params: m.params.clone(),
                body: expand_in_expr(&m.body, ct, &gamma, sigma, class, defaults, &path)?,
            });
        }
        out.insert(ClassDecl {
            name: decl.name.clone(),
            superclass: decl.superclass.clone(),
            fields: decl.fields.clone(),
            methods,
        });
    }
    Ok(out)
}

/// Appends the default identifiers to every `new C(...)` and to every
/// `set` whose receiver types to exactly `C`.
pub fn expand_in_expr(
    e: &Expr,
    ct: &ClassTable,
    gamma: &TypeEnv,
    sigma: &StoreEnv,
    class: &ClassName,
    defaults: &[AnnotatedIdent],
    path: &str,
) -> Result<Expr, EvolveError> {
    let rw = |e: &Expr| expand_in_expr(e, ct, gamma, sigma, class, defaults, path);
    let default_args = || defaults.iter().map(|d| Expr::Raw(d.id.clone()));
    Ok(match e {
        Expr::Var(_) | Expr::Raw(_) | Expr::Ann(_) => e.clone(),
        Expr::Field(recv, f) => Expr::Field(Box::new(rw(recv)?), f.clone()),
        Expr::Set(recv, args) => {
            // the receiver is typed before it is itself expanded
            let recv_ty = type_expr_at(ct, gamma, sigma, recv, path)?;
            let mut new_args: Vec<Expr> = args.iter().map(&rw).collect::<Result<_, _>>()?;
            if &recv_ty == class {
                new_args.extend(default_args());
            }
            Expr::Set(Box::new(rw(recv)?), new_args)
        }
        Expr::Call(recv, m, args) => Expr::Call(
            Box::new(rw(recv)?),
            m.clone(),
            args.iter().map(&rw).collect::<Result<_, _>>()?,
        ),
        Expr::New(c, key, args) => {
            let mut new_args: Vec<Expr> = args.iter().map(&rw).collect::<Result<_, _>>()?;
            if c == class {
                new_args.extend(default_args());
            }
            Expr::New(c.clone(), key.clone(), new_args)
        }
    })
}

// ---------------------------------------------------------------------------
// Store-environment and store evolution
// ---------------------------------------------------------------------------

/// Evolves Σ: class renames relabel annotations, superclass extraction
/// duplicates the entries of bound identifiers, and merging drops entries of
/// the merged-away class.
pub fn evolve_store_env(
    op: &EvolutionOp,
    sigma: &StoreEnv,
    pre_bindings: &BTreeMap<(Ident, ClassName), String>,
) -> StoreEnv {
    let mut out = StoreEnv::new();
    match op {
        EvolutionOp::RenameClass { from, to } => {
            for (id, class) in sigma.iter() {
                out.insert(id.clone(), rename_class_name(class, from, to));
            }
        }
        EvolutionOp::NewSupClass { class, superclass, .. } => {
            for (id, c) in sigma.iter() {
                out.insert(id.clone(), c.clone());
            }
            for (id, c) in pre_bindings.keys() {
                if c == class {
                    out.insert(id.clone(), superclass.clone());
                }
            }
        }
        EvolutionOp::MergeClass { merged, .. } => {
            for (id, c) in sigma.iter() {
                if c != merged {
                    out.insert(id.clone(), c.clone());
                }
            }
        }
        _ => {
            for (id, c) in sigma.iter() {
                out.insert(id.clone(), c.clone());
            }
        }
    }
    out
}

/// Evolves the store: the backend restructures the relations, and the
/// bindings follow the per-operation case split (rename relabels, superclass
/// extraction duplicates, merging removes the superclass entries).
pub fn evolve_store(
    op: &EvolutionOp,
    store: &Store,
    ct: &ClassTable,
    backend: Backend,
) -> Result<(Store, BackwardPayload), EvolveError> {
    let (relations, payload) = backend.evolve_schema(op, store, ct)?;
    let mut bindings = BTreeMap::new();
    for ((id, class), target) in &store.bindings {
        match op {
            EvolutionOp::RenameClass { from, to } if class == from => {
                bindings.insert((id.clone(), to.clone()), backend.relation_name(to, id));
            }
            EvolutionOp::NewSupClass { class: c, superclass, .. } if class == c => {
                bindings.insert((id.clone(), class.clone()), target.clone());
                bindings.insert(
                    (id.clone(), superclass.clone()),
                    backend.relation_name(superclass, id),
                );
            }
            EvolutionOp::MergeClass { merged, .. } if class == merged => {}
            _ => {
                bindings.insert((id.clone(), class.clone()), target.clone());
            }
        }
    }
    let out = Store { relations, bindings };
    debug_assert!(out
        .bindings
        .values()
        .all(|target| out.relations.contains(target)));
    Ok((out, payload))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{parse_evolution_script, parse_program, print_program};
    use crate::typing::build_store_env;

    fn hierarchy_table() -> (ClassTable, Expr) {
        parse_program(
            "class V extends Object {} \
             class P extends Object { V h; } \
             class C extends P { V a; V b; } \
             main { #t }",
        )
        .unwrap()
    }

    fn op(src: &str) -> EvolutionOp {
        parse_evolution_script(src).unwrap().remove(0)
    }

    #[test]
    fn new_sup_class_reshapes_table() {
        let (ct, main) = hierarchy_table();
        let sigma = build_store_env(&ct, &main, &Store::new()).unwrap();
        let o = op("NewSupClass C -> D { b }");
        check_premises(&o, &ct, &sigma, &main).unwrap();
        let out = evolve_class_table(&o, &ct, &sigma).unwrap();
        let d = out.get(&ClassName::new("D")).unwrap();
        assert_eq!(d.superclass, ClassName::new("P"));
        assert_eq!(d.fields, vec![(ClassName::new("V"), "b".to_string())]);
        assert!(d.methods.is_empty());
        let c = out.get(&ClassName::new("C")).unwrap();
        assert_eq!(c.superclass, ClassName::new("D"));
        assert_eq!(c.fields, vec![(ClassName::new("V"), "a".to_string())]);
        // declaration order matches the composition: P, then D, then C
        let names: Vec<&str> = out.names().map(|n| n.as_str()).collect();
        assert_eq!(names, vec!["V", "P", "D", "C"]);
    }

    #[test]
    fn new_sup_class_keeps_methods() {
        let (ct, main) = parse_program(
            "class V extends Object {} \
             class C extends Object { V a; V b; C me() { return this; } } \
             main { #t }",
        )
        .unwrap();
        let sigma = build_store_env(&ct, &main, &Store::new()).unwrap();
        let out = evolve_class_table(&op("NewSupClass C -> D { b }"), &ct, &sigma).unwrap();
        assert!(out.get(&ClassName::new("C")).unwrap().method("me").is_some());
    }

    #[test]
    fn merge_class_restores_original_shape() {
        let (ct, main) = hierarchy_table();
        let sigma = build_store_env(&ct, &main, &Store::new()).unwrap();
        let split = evolve_class_table(&op("NewSupClass C -> D { b }"), &ct, &sigma).unwrap();
        let o = op("MergeClass C <- D");
        check_premises(&o, &split, &sigma, &main).unwrap();
        let merged = evolve_class_table(&o, &split, &sigma).unwrap();
        let c = merged.get(&ClassName::new("C")).unwrap();
        assert_eq!(c.superclass, ClassName::new("P"));
        // merged fields come superclass-first: b then a
        let names: Vec<&str> = c.fields.iter().map(|(_, f)| f.as_str()).collect();
        assert_eq!(names, vec!["b", "a"]);
        assert!(!merged.contains(&ClassName::new("D")));
    }

    #[test]
    fn merge_class_rejects_remaining_constructions() {
        let (ct, _) = parse_program(
            "class D extends Object {} \
             class C extends D { C m() { return new D(#z).m(); } } \
             main { #t }",
        )
        .unwrap();
        // method body constructs D, so the merge premise fails
        let o = op("MergeClass C <- D");
        let err = check_premises(&o, &ct, &StoreEnv::new(), &Expr::raw("t")).unwrap_err();
        assert!(matches!(err, EvolveError::Premise { rule: "E-MERGECLASS", .. }));
        // likewise when only the main expression constructs D
        let (ct2, _) = parse_program(
            "class D extends Object {} class C extends D {} main { new D(#z) }",
        )
        .unwrap();
        let main2 = Expr::new_obj("D", "z", vec![]);
        let err2 = check_premises(&o, &ct2, &StoreEnv::new(), &main2).unwrap_err();
        assert!(matches!(err2, EvolveError::Premise { rule: "E-MERGECLASS", .. }));
    }

    #[test]
    fn merge_class_rejects_other_subclasses() {
        let (ct, main) = parse_program(
            "class D extends Object {} class C extends D {} class X extends D {} main { #t }",
        )
        .unwrap();
        let err = check_premises(&op("MergeClass C <- D"), &ct, &StoreEnv::new(), &main)
            .unwrap_err();
        assert!(matches!(err, EvolveError::Premise { rule: "E-MERGECLASS", .. }));
    }

    #[test]
    fn rename_class_rewrites_everywhere() {
        let (ct, main) = parse_program(
            "class V extends Object {} \
             class C extends Object { V f; C me(C other) { return new C(#x, other.f); } } \
             class User extends Object { C status; } \
             main { new C(#y, #v).f }",
        )
        .unwrap();
        let from = ClassName::new("C");
        let to = ClassName::new("Status");
        let out = rename_class_in_table(&ct, &from, &to);
        let renamed = out.get(&to).unwrap();
        assert_eq!(renamed.method("me").unwrap().return_type, to);
        assert_eq!(renamed.method("me").unwrap().params[0].0, to);
        assert!(out.get(&ClassName::new("User")).unwrap().fields[0].0 == to);
        assert!(!out.contains(&from));
        let main2 = rename_class_in_expr(&main, &from, &to);
        assert_eq!(main2, Expr::new_obj("Status", "y", vec![Expr::raw("v")]).field("f"));
        // untouched class names stay
        assert!(out.contains(&ClassName::new("User")));
    }

    #[test]
    fn rename_class_round_trip_is_identity() {
        let (ct, main) = hierarchy_table();
        let c = ClassName::new("C");
        let z = ClassName::new("Z");
        let there = rename_class_in_table(&ct, &c, &z);
        let back = rename_class_in_table(&there, &z, &c);
        assert_eq!(print_program(&back, &main), print_program(&ct, &main));
    }

    #[test]
    fn rename_field_rewrites_exact_class_only() {
        // C.read accesses f at C; D.read accesses the same field name at D.
        // Renaming f in C must rewrite only the former.
        let (ct2, _) = parse_program(
            "class V extends Object {} \
             class C extends Object { V f; V read() { return this.f; } } \
             class D extends Object { V f; V read() { return this.f; } } \
             main { #t }",
        )
        .unwrap();
        let sigma = StoreEnv::new();
        let out = rename_field_in_table(
            &ct2,
            &sigma,
            &ClassName::new("C"),
            &["f".to_string()],
            &["g".to_string()],
        )
        .unwrap();
        let c_body = &out.get(&ClassName::new("C")).unwrap().method("read").unwrap().body;
        assert_eq!(*c_body, Expr::var("this").field("g"));
        let d_body = &out.get(&ClassName::new("D")).unwrap().method("read").unwrap().body;
        assert_eq!(*d_body, Expr::var("this").field("f"));
    }

    #[test]
    fn rename_field_leaves_subclass_receivers_alone() {
        let (ct, _) = parse_program(
            "class V extends Object {} \
             class C extends Object { V f; } \
             class Sub extends C { V read() { return this.f; } } \
             main { #t }",
        )
        .unwrap();
        let out = rename_field_in_table(
            &ct,
            &StoreEnv::new(),
            &ClassName::new("C"),
            &["f".to_string()],
            &["g".to_string()],
        )
        .unwrap();
        // the receiver types to Sub, not C, so the access is untouched
        let body = &out.get(&ClassName::new("Sub")).unwrap().method("read").unwrap().body;
        assert_eq!(*body, Expr::var("this").field("f"));
    }

    #[test]
    fn expand_rewrites_constructors_and_exact_sets() {
        let (ct, _) = parse_program(
            "class V extends Object {} \
             class C extends Object { V f; } \
             class D extends Object { V f; } \
             main { #t }",
        )
        .unwrap();
        let mut sigma = StoreEnv::new();
        sigma.insert(Ident::new("d"), ClassName::new("V"));
        sigma.insert(Ident::new("x"), ClassName::new("C"));
        sigma.insert(Ident::new("y"), ClassName::new("D"));
        let defaults = vec![AnnotatedIdent::new("d", "V")];
        let class = ClassName::new("C");
        // new C gains the default
        let e = Expr::new_obj("C", "x", vec![Expr::raw("d")]);
        let out = expand_in_expr(&e, &ct, &TypeEnv::new(), &sigma, &class, &defaults, "main").unwrap();
        assert_eq!(
            out,
            Expr::new_obj("C", "x", vec![Expr::raw("d"), Expr::raw("d")])
        );
        // set on a C-typed receiver gains the default
        let e = Expr::new_obj("C", "x", vec![Expr::raw("d")]).set_call(vec![Expr::raw("d")]);
        let out = expand_in_expr(&e, &ct, &TypeEnv::new(), &sigma, &class, &defaults, "main").unwrap();
        match out {
            Expr::Set(_, args) => assert_eq!(args.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
        // set on another class is untouched
        let e = Expr::new_obj("D", "y", vec![Expr::raw("d")]).set_call(vec![Expr::raw("d")]);
        let out = expand_in_expr(&e, &ct, &TypeEnv::new(), &sigma, &class, &defaults, "main").unwrap();
        match out {
            Expr::Set(_, args) => assert_eq!(args.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn delete_field_leaves_expressions_alone() {
        let (ct, main) = parse_program(
            "class V extends Object {} class C extends Object { V f; } main { new C(#x, #v).f }",
        )
        .unwrap();
        let mut sigma = StoreEnv::new();
        sigma.insert(Ident::new("x"), ClassName::new("C"));
        sigma.insert(Ident::new("v"), ClassName::new("V"));
        let o = op("DeleteField C { f }");
        let out = evolve_expr(&o, &main, &ct, &sigma).unwrap();
        assert_eq!(out, main);
    }

    #[test]
    fn evolve_store_env_cases() {
        let (ct, _) = hierarchy_table();
        let _ = ct;
        let mut sigma = StoreEnv::new();
        sigma.insert(Ident::new("x"), ClassName::new("C"));
        let empty = BTreeMap::new();

        // RenameClass relabels
        let out = evolve_store_env(&op("RenameClass C -> Z"), &sigma, &empty);
        assert!(out.contains(&Ident::new("x"), &ClassName::new("Z")));
        assert!(!out.contains(&Ident::new("x"), &ClassName::new("C")));

        // RenameField leaves Σ unchanged
        let out = evolve_store_env(&op("RenameField C { a -> a2 }"), &sigma, &empty);
        assert_eq!(out, sigma);

        // empty Σ is a fixed point
        let out = evolve_store_env(&op("RenameClass C -> Z"), &StoreEnv::new(), &empty);
        assert!(out.is_empty());

        // NewSupClass duplicates entries of bound identifiers
        let mut bindings = BTreeMap::new();
        bindings.insert((Ident::new("x"), ClassName::new("C")), "C".to_string());
        let out = evolve_store_env(&op("NewSupClass C -> D { b }"), &sigma, &bindings);
        assert!(out.contains(&Ident::new("x"), &ClassName::new("C")));
        assert!(out.contains(&Ident::new("x"), &ClassName::new("D")));

        // MergeClass drops the merged-away annotations
        let mut sigma2 = StoreEnv::new();
        sigma2.insert(Ident::new("x"), ClassName::new("C"));
        sigma2.insert(Ident::new("x"), ClassName::new("D"));
        let out = evolve_store_env(&op("MergeClass C <- D"), &sigma2, &empty);
        assert!(out.contains(&Ident::new("x"), &ClassName::new("C")));
        assert!(!out.contains(&Ident::new("x"), &ClassName::new("D")));
    }

    #[test]
    fn delete_class_is_rejected_as_premise() {
        let (ct, main) = hierarchy_table();
        let o = EvolutionOp::DeleteClass { class: ClassName::new("C") };
        assert!(check_premises(&o, &ct, &StoreEnv::new(), &main).is_err());
    }
}
