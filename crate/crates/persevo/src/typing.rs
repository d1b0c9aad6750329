//! Subtyping, field/method lookup, expression and class typing, store
//! environments, and store wellformedness.

use crate::relstore::{Cell, Store};
use crate::syntax::{
    ClassName, ClassTable, Expr, FieldName, Ident, MethodDecl, VarName,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeError {
    pub rule: &'static str,
    pub message: String,
    pub path: String,
}

impl TypeError {
    pub fn new(rule: &'static str, message: impl Into<String>, path: impl Into<String>) -> Self {
        TypeError {
            rule,
            message: message.into(),
            path: path.into(),
        }
    }
}

impl fmt::Display for TypeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} @ {}", self.rule, self.message, self.path)
    }
}

impl std::error::Error for TypeError {}

/// Variable typing context Γ.
#[derive(Debug, Clone, Default)]
pub struct TypeEnv {
    entries: Vec<(VarName, ClassName)>,
}

impl TypeEnv {
    pub fn new() -> TypeEnv {
        TypeEnv::default()
    }

    pub fn bind(mut self, var: impl Into<String>, class: ClassName) -> TypeEnv {
        self.entries.push((var.into(), class));
        self
    }

    pub fn lookup(&self, var: &str) -> Option<&ClassName> {
        self.entries
            .iter()
            .rev()
            .find(|(v, _)| v == var)
            .map(|(_, c)| c)
    }
}

/// Store environment Σ: which classes each identifier is known at. An
/// identifier may carry several annotations (superclass extraction
/// duplicates entries), but they must lie on one inheritance chain.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StoreEnv {
    entries: BTreeMap<Ident, BTreeSet<ClassName>>,
}

impl StoreEnv {
    pub fn new() -> StoreEnv {
        StoreEnv::default()
    }

    pub fn insert(&mut self, id: Ident, class: ClassName) {
        self.entries.entry(id).or_default().insert(class);
    }

    pub fn remove_class(&mut self, class: &ClassName) {
        for set in self.entries.values_mut() {
            set.remove(class);
        }
        self.entries.retain(|_, set| !set.is_empty());
    }

    pub fn contains(&self, id: &Ident, class: &ClassName) -> bool {
        self.entries.get(id).is_some_and(|s| s.contains(class))
    }

    pub fn classes_of(&self, id: &Ident) -> impl Iterator<Item = &ClassName> {
        self.entries.get(id).into_iter().flatten()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Ident, &ClassName)> {
        self.entries
            .iter()
            .flat_map(|(id, set)| set.iter().map(move |c| (id, c)))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn unknown_class(c: &ClassName, path: &str) -> TypeError {
    TypeError::new("SUBTYPE", format!("unknown class `{c}`"), path)
}

/// Reflexive-transitive closure of the immediate subclass relation.
pub fn subtype(ct: &ClassTable, c: &ClassName, d: &ClassName) -> Result<bool, TypeError> {
    if !c.is_object() && !ct.contains(c) {
        return Err(unknown_class(c, "subtype"));
    }
    if !d.is_object() && !ct.contains(d) {
        return Err(unknown_class(d, "subtype"));
    }
    let mut cur = c.clone();
    loop {
        if &cur == d {
            return Ok(true);
        }
        if cur.is_object() {
            return Ok(false);
        }
        match ct.get(&cur) {
            Some(decl) => cur = decl.superclass.clone(),
            None => return Err(unknown_class(&cur, "subtype")),
        }
    }
}

/// Superclass fields first, then own fields, in declaration order.
pub fn fields(ct: &ClassTable, c: &ClassName) -> Result<Vec<(ClassName, FieldName)>, TypeError> {
    if c.is_object() {
        return Ok(Vec::new());
    }
    let decl = ct.get(c).ok_or_else(|| unknown_class(c, "fields"))?;
    let mut out = fields(ct, &decl.superclass)?;
    out.extend(decl.fields.iter().cloned());
    Ok(out)
}

fn lookup_method<'a>(
    ct: &'a ClassTable,
    m: &str,
    c: &ClassName,
) -> Result<Option<&'a MethodDecl>, TypeError> {
    if c.is_object() {
        return Ok(None);
    }
    let decl = ct.get(c).ok_or_else(|| unknown_class(c, "mbody"))?;
    match decl.method(m) {
        Some(found) => Ok(Some(found)),
        None => lookup_method(ct, m, &decl.superclass),
    }
}

/// Parameters and body of a resolved method.
pub type ResolvedBody<'a> = (&'a [(ClassName, VarName)], &'a Expr);

/// Nearest declaration walking up the hierarchy; `None` at `Object`.
pub fn mbody<'a>(
    ct: &'a ClassTable,
    m: &str,
    c: &ClassName,
) -> Result<Option<ResolvedBody<'a>>, TypeError> {
    Ok(lookup_method(ct, m, c)?.map(|d| (d.params.as_slice(), &d.body)))
}

pub fn mtype(
    ct: &ClassTable,
    m: &str,
    c: &ClassName,
) -> Result<Option<(Vec<ClassName>, ClassName)>, TypeError> {
    Ok(lookup_method(ct, m, c)?.map(|d| {
        (
            d.params.iter().map(|(t, _)| t.clone()).collect(),
            d.return_type.clone(),
        )
    }))
}

/// Most specific class among `candidates`; errors when they are not on a
/// single inheritance chain.
pub fn most_specific(
    ct: &ClassTable,
    candidates: &[ClassName],
    what: &str,
    path: &str,
) -> Result<ClassName, TypeError> {
    let mut best: Option<&ClassName> = None;
    for c in candidates {
        match best {
            None => best = Some(c),
            Some(b) => {
                if subtype(ct, c, b)? {
                    best = Some(c);
                } else if !subtype(ct, b, c)? {
                    return Err(TypeError::new(
                        "T-ID1",
                        format!("{what}: classes `{b}` and `{c}` are incomparable"),
                        path,
                    ));
                }
            }
        }
    }
    best.cloned()
        .ok_or_else(|| TypeError::new("T-ID1", format!("{what}: no candidate class"), path))
}

fn type_raw(ct: &ClassTable, sigma: &StoreEnv, id: &Ident, path: &str) -> Result<ClassName, TypeError> {
    let candidates: Vec<ClassName> = sigma.classes_of(id).cloned().collect();
    if candidates.is_empty() {
        return Err(TypeError::new(
            "T-ID1",
            format!("identifier `{id}` not in the store environment"),
            path,
        ));
    }
    most_specific(ct, &candidates, &format!("identifier `{id}`"), path)
}

pub fn type_expr(
    ct: &ClassTable,
    gamma: &TypeEnv,
    sigma: &StoreEnv,
    e: &Expr,
) -> Result<ClassName, TypeError> {
    type_expr_at(ct, gamma, sigma, e, "main")
}

pub fn type_expr_at(
    ct: &ClassTable,
    gamma: &TypeEnv,
    sigma: &StoreEnv,
    e: &Expr,
    path: &str,
) -> Result<ClassName, TypeError> {
    match e {
        Expr::Var(x) => gamma.lookup(x).cloned().ok_or_else(|| {
            TypeError::new("T-VAR", format!("unbound variable `{x}`"), path)
        }),
        Expr::Ann(a) => {
            if sigma.contains(&a.id, &a.class) {
                Ok(a.class.clone())
            } else {
                Err(TypeError::new(
                    "T-ID",
                    format!("`{a}` not in the store environment"),
                    path,
                ))
            }
        }
        Expr::Raw(l) => type_raw(ct, sigma, l, path),
        Expr::Field(recv, f) => {
            let c0 = type_expr_at(ct, gamma, sigma, recv, &format!("{path}.recv"))?;
            let flds = fields(ct, &c0).map_err(|e| TypeError::new("T-FIELD", e.message, path))?;
            flds.iter()
                .find(|(_, name)| name == f)
                .map(|(ty, _)| ty.clone())
                .ok_or_else(|| {
                    TypeError::new(
                        "T-FIELD",
                        format!("class `{c0}` has no field `{f}`"),
                        path,
                    )
                })
        }
        Expr::New(class, key, args) => {
            let flds = fields(ct, class).map_err(|e| TypeError::new("T-NEW", e.message, path))?;
            if args.len() != flds.len() {
                return Err(TypeError::new(
                    "T-NEW",
                    format!(
                        "`new {class}` expects {} arguments, got {}",
                        flds.len(),
                        args.len()
                    ),
                    path,
                ));
            }
            if !sigma.contains(key, class) {
                return Err(TypeError::new(
                    "T-NEW",
                    format!("key `{key}` is not known at class `{class}`"),
                    path,
                ));
            }
            for (i, (arg, (want, fname))) in args.iter().zip(&flds).enumerate() {
                let got = type_expr_at(ct, gamma, sigma, arg, &format!("{path}.arg{i}"))?;
                if !subtype(ct, &got, want)? {
                    return Err(TypeError::new(
                        "T-NEW",
                        format!("argument for field `{fname}`: `{got}` is not a subtype of `{want}`"),
                        format!("{path}.arg{i}"),
                    ));
                }
            }
            Ok(class.clone())
        }
        Expr::Set(recv, args) => {
            let c0 = type_expr_at(ct, gamma, sigma, recv, &format!("{path}.recv"))?;
            let flds = fields(ct, &c0).map_err(|e| TypeError::new("T-SET", e.message, path))?;
            if args.len() != flds.len() {
                return Err(TypeError::new(
                    "T-SET",
                    format!(
                        "`set` on `{c0}` expects {} arguments, got {}",
                        flds.len(),
                        args.len()
                    ),
                    path,
                ));
            }
            for (i, (arg, (want, fname))) in args.iter().zip(&flds).enumerate() {
                let got = type_expr_at(ct, gamma, sigma, arg, &format!("{path}.arg{i}"))?;
                if !subtype(ct, &got, want)? {
                    return Err(TypeError::new(
                        "T-SET",
                        format!("argument for field `{fname}`: `{got}` is not a subtype of `{want}`"),
                        format!("{path}.arg{i}"),
                    ));
                }
            }
            Ok(c0)
        }
        Expr::Call(recv, m, args) => {
            let c0 = type_expr_at(ct, gamma, sigma, recv, &format!("{path}.recv"))?;
            let (params, ret) = mtype(ct, m, &c0)?.ok_or_else(|| {
                TypeError::new(
                    "T-INVK",
                    format!("class `{c0}` has no method `{m}`"),
                    path,
                )
            })?;
            if args.len() != params.len() {
                return Err(TypeError::new(
                    "T-INVK",
                    format!("`{m}` expects {} arguments, got {}", params.len(), args.len()),
                    path,
                ));
            }
            for (i, (arg, want)) in args.iter().zip(&params).enumerate() {
                let got = type_expr_at(ct, gamma, sigma, arg, &format!("{path}.arg{i}"))?;
                if !subtype(ct, &got, want)? {
                    return Err(TypeError::new(
                        "T-INVK",
                        format!("argument {i}: `{got}` is not a subtype of `{want}`"),
                        format!("{path}.arg{i}"),
                    ));
                }
            }
            Ok(ret)
        }
    }
}

/// Structural validity of a class table: known superclasses, acyclic
/// inheritance, resolvable type references, distinct member names.
fn check_structure(ct: &ClassTable) -> Vec<TypeError> {
    let mut errors = Vec::new();
    let known = |c: &ClassName| c.is_object() || ct.contains(c);
    for decl in ct.iter() {
        let path = decl.name.to_string();
        if decl.name.is_object() {
            errors.push(TypeError::new("T-CLASS", "`Object` cannot be declared", path.clone()));
        }
        if !known(&decl.superclass) {
            errors.push(TypeError::new(
                "T-CLASS",
                format!("unknown superclass `{}`", decl.superclass),
                path.clone(),
            ));
            continue;
        }
        let mut cur = decl.superclass.clone();
        let mut hops = 0;
        while !cur.is_object() {
            hops += 1;
            if hops > ct.len() {
                errors.push(TypeError::new(
                    "T-CLASS",
                    format!("inheritance cycle through `{}`", decl.name),
                    path.clone(),
                ));
                break;
            }
            match ct.get(&cur) {
                Some(d) => cur = d.superclass.clone(),
                None => break,
            }
        }
        let mut seen = Vec::new();
        for (ty, f) in &decl.fields {
            if !known(ty) {
                errors.push(TypeError::new(
                    "T-CLASS",
                    format!("field `{f}` has unknown type `{ty}`"),
                    path.clone(),
                ));
            }
            if seen.contains(&f) {
                errors.push(TypeError::new(
                    "T-CLASS",
                    format!("duplicate field `{f}`"),
                    path.clone(),
                ));
            }
            seen.push(f);
        }
        let mut seen = Vec::new();
        for m in &decl.methods {
            if seen.contains(&&m.name) {
                errors.push(TypeError::new(
                    "T-CLASS",
                    format!("duplicate method `{}`", m.name),
                    path.clone(),
                ));
            }
            seen.push(&m.name);
            if !known(&m.return_type) {
                errors.push(TypeError::new(
                    "T-METHOD",
                    format!("unknown return type `{}`", m.return_type),
                    format!("{path}.{}", m.name),
                ));
            }
            for (ty, x) in &m.params {
                if !known(ty) {
                    errors.push(TypeError::new(
                        "T-METHOD",
                        format!("parameter `{x}` has unknown type `{ty}`"),
                        format!("{path}.{}", m.name),
                    ));
                }
            }
        }
    }
    errors
}

/// Class-table typing: every method body must type to a subtype of its
/// declared return type, and no method may override one from a superclass.
/// Method bodies are typed under the ambient store environment so that
/// constructor keys and default objects resolve.
pub fn check_class_table(ct: &ClassTable, sigma: &StoreEnv) -> Result<(), Vec<TypeError>> {
    let errors = check_structure(ct);
    if !errors.is_empty() {
        // fields/mtype may diverge on a malformed hierarchy
        return Err(errors);
    }
    let mut errors = Vec::new();
    for decl in ct.iter() {
        for m in &decl.methods {
            let path = format!("{}.{}", decl.name, m.name);
            match mtype(ct, &m.name, &decl.superclass) {
                Ok(None) => {}
                Ok(Some(_)) => {
                    errors.push(TypeError::new(
                        "T-CLASS",
                        format!("method `{}` overrides a superclass method", m.name),
                        path.clone(),
                    ));
                    continue;
                }
                Err(e) => {
                    errors.push(e);
                    continue;
                }
            }
            let mut gamma = TypeEnv::new().bind("this", decl.name.clone());
            for (ty, x) in &m.params {
                gamma = gamma.bind(x.clone(), ty.clone());
            }
            match type_expr_at(ct, &gamma, sigma, &m.body, &path) {
                Ok(body_ty) => match subtype(ct, &body_ty, &m.return_type) {
                    Ok(true) => {}
                    Ok(false) => errors.push(TypeError::new(
                        "T-METHOD",
                        format!(
                            "body types to `{body_ty}`, not a subtype of `{}`",
                            m.return_type
                        ),
                        path,
                    )),
                    Err(e) => errors.push(e),
                },
                Err(e) => errors.push(e),
            }
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

/// Builds Σ from the store bindings plus every constructor key occurring in
/// the main expression or a method body.
pub fn build_store_env(ct: &ClassTable, main: &Expr, store: &Store) -> Result<StoreEnv, TypeError> {
    let mut sigma = StoreEnv::new();
    for (id, class) in store.bindings.keys() {
        sigma.insert(id.clone(), class.clone());
    }
    let mut keys = Vec::new();
    main.collect_new_keys(&mut keys);
    for decl in ct.iter() {
        for m in &decl.methods {
            m.body.collect_new_keys(&mut keys);
        }
    }
    for (class, id) in keys {
        sigma.insert(id, class);
    }
    // every identifier's annotations must lie on one inheritance chain
    for (id, set) in &sigma.entries {
        let classes: Vec<&ClassName> = set.iter().collect();
        for (i, a) in classes.iter().enumerate() {
            for b in &classes[i + 1..] {
                let ab = subtype(ct, a, b)?;
                let ba = subtype(ct, b, a)?;
                if !ab && !ba {
                    return Err(TypeError::new(
                        "T-ID1",
                        format!("identifier `{id}` is claimed at incomparable classes `{a}` and `{b}`"),
                        "store-env",
                    ));
                }
            }
        }
    }
    Ok(sigma)
}

/// T-STORE: every binding's relation has a column for each declared field,
/// and every stored value types to a subtype of the field type. ⊥ cells are
/// exempt.
pub fn check_store_wellformed(
    ct: &ClassTable,
    sigma: &StoreEnv,
    store: &Store,
) -> Result<(), Vec<TypeError>> {
    let mut errors = Vec::new();
    for ((id, class), target) in &store.bindings {
        let path = format!("{id}@{class}");
        let rel = match store.relations.get(target) {
            Some(r) => r,
            None => {
                errors.push(TypeError::new(
                    "T-STORE",
                    format!("binding targets missing relation `{target}`"),
                    path,
                ));
                continue;
            }
        };
        let flds = match fields(ct, class) {
            Ok(f) => f,
            Err(e) => {
                errors.push(TypeError::new("T-STORE", e.message, path));
                continue;
            }
        };
        for (want, fname) in &flds {
            let col = match rel.col_index(fname) {
                Ok(i) => i,
                Err(_) => {
                    errors.push(TypeError::new(
                        "T-STORE",
                        format!("relation `{target}` is missing a column for field `{fname}`"),
                        path.clone(),
                    ));
                    continue;
                }
            };
            for row in &rel.rows {
                match &row[col] {
                    Cell::Bottom => {}
                    Cell::Time(_) => errors.push(TypeError::new(
                        "T-STORE",
                        format!("timestamp stored in field column `{fname}` of `{target}`"),
                        path.clone(),
                    )),
                    Cell::Value(v) => {
                        match type_raw(ct, sigma, v, &path) {
                            Ok(got) => match subtype(ct, &got, want) {
                                Ok(true) => {}
                                Ok(false) => errors.push(TypeError::new(
                                    "T-STORE",
                                    format!(
                                        "cell `{v}` in `{target}.{fname}` types to `{got}`, not a subtype of `{want}`"
                                    ),
                                    path.clone(),
                                )),
                                Err(e) => errors.push(e),
                            },
                            Err(e) => errors.push(TypeError::new(
                                "T-STORE",
                                format!("cell `{v}` in `{target}.{fname}`: {}", e.message),
                                path.clone(),
                            )),
                        }
                    }
                }
            }
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relstore::Relation;
    use crate::syntax::parse_program;

    fn table(src: &str) -> (ClassTable, Expr) {
        parse_program(src).unwrap()
    }

    const HIERARCHY: &str = "class V extends Object {} \
         class E extends Object { V h; } \
         class D extends E { V b; } \
         class C extends D { V a; } \
         main { #t }";

    #[test]
    fn subtype_reflexive_transitive() {
        let (ct, _) = table(HIERARCHY);
        let c = ClassName::new("C");
        let d = ClassName::new("D");
        let e = ClassName::new("E");
        assert!(subtype(&ct, &c, &c).unwrap());
        assert!(subtype(&ct, &c, &d).unwrap());
        assert!(subtype(&ct, &c, &e).unwrap());
        assert!(subtype(&ct, &c, &ClassName::object()).unwrap());
        assert!(!subtype(&ct, &d, &c).unwrap());
        assert!(subtype(&ct, &ClassName::new("Missing"), &c).is_err());
    }

    #[test]
    fn fields_of_object_is_empty() {
        let (ct, _) = table(HIERARCHY);
        assert!(fields(&ct, &ClassName::object()).unwrap().is_empty());
    }

    // the superclass provides h, the class itself provides a and b
    #[test]
    fn fields_prefix_extension() {
        let (ct, _) = table(
            "class V extends Object {} class P extends Object { V h; } \
             class C extends P { V a; V b; } main { #t }",
        );
        let fs = fields(&ct, &ClassName::new("C")).unwrap();
        let names: Vec<&str> = fs.iter().map(|(_, f)| f.as_str()).collect();
        assert_eq!(names, vec!["h", "a", "b"]);
        let sup = fields(&ct, &ClassName::new("P")).unwrap();
        assert_eq!(&fs[..sup.len()], &sup[..]);
    }

    #[test]
    fn mbody_walks_hierarchy() {
        let (ct, _) = table(
            "class A extends Object { A m() { return this; } } \
             class B extends A {} main { #t }",
        );
        let (params, body) = mbody(&ct, "m", &ClassName::new("B")).unwrap().unwrap();
        assert!(params.is_empty());
        assert_eq!(body, &Expr::var("this"));
        assert!(mbody(&ct, "absent", &ClassName::new("B")).unwrap().is_none());
        let (ps, ret) = mtype(&ct, "m", &ClassName::new("B")).unwrap().unwrap();
        assert!(ps.is_empty());
        assert_eq!(ret, ClassName::new("A"));
    }

    #[test]
    fn typing_var_and_raw() {
        let (ct, _) = table(HIERARCHY);
        let gamma = TypeEnv::new().bind("x", ClassName::new("C"));
        let sigma = {
            let mut s = StoreEnv::new();
            s.insert(Ident::new("kamina"), ClassName::new("C"));
            s
        };
        assert_eq!(
            type_expr(&ct, &gamma, &sigma, &Expr::var("x")).unwrap(),
            ClassName::new("C")
        );
        assert_eq!(
            type_expr(&ct, &gamma, &sigma, &Expr::raw("kamina")).unwrap(),
            ClassName::new("C")
        );
        assert!(type_expr(&ct, &gamma, &sigma, &Expr::raw("ghost")).is_err());
    }

    #[test]
    fn raw_id_most_specific_and_ambiguity() {
        let (ct, _) = table(HIERARCHY);
        let mut sigma = StoreEnv::new();
        sigma.insert(Ident::new("x"), ClassName::new("C"));
        sigma.insert(Ident::new("x"), ClassName::new("D"));
        assert_eq!(
            type_expr(&ct, &TypeEnv::new(), &sigma, &Expr::raw("x")).unwrap(),
            ClassName::new("C")
        );
        let mut sigma = StoreEnv::new();
        sigma.insert(Ident::new("y"), ClassName::new("V"));
        sigma.insert(Ident::new("y"), ClassName::new("D"));
        assert!(type_expr(&ct, &TypeEnv::new(), &sigma, &Expr::raw("y")).is_err());
    }

    #[test]
    fn set_arity_mismatch_rejected() {
        let (ct, _) = table(HIERARCHY);
        let mut sigma = StoreEnv::new();
        sigma.insert(Ident::new("x"), ClassName::new("C"));
        // C has fields h, b, a: three of them
        let e = Expr::ann("x", "C").set_call(vec![Expr::raw("x")]);
        let err = type_expr(&ct, &TypeEnv::new(), &sigma, &e).unwrap_err();
        assert_eq!(err.rule, "T-SET");
    }

    #[test]
    fn empty_class_table_is_ok() {
        assert!(check_class_table(&ClassTable::new(), &StoreEnv::new()).is_ok());
    }

    #[test]
    fn overriding_rejected() {
        let (ct, _) = table(
            "class A extends Object { A m() { return this; } } \
             class B extends A { B m() { return this; } } main { #t }",
        );
        let errs = check_class_table(&ct, &StoreEnv::new()).unwrap_err();
        assert!(errs.iter().any(|e| e.rule == "T-CLASS" && e.message.contains("overrides")));
    }

    #[test]
    fn body_supertype_of_return_rejected() {
        let (ct, _) = table(
            "class A extends Object {} \
             class B extends A { B m(A x) { return x; } } main { #t }",
        );
        let errs = check_class_table(&ct, &StoreEnv::new()).unwrap_err();
        assert!(errs.iter().any(|e| e.rule == "T-METHOD"));
    }

    #[test]
    fn build_store_env_collects_news_and_bindings() {
        let (ct, main) = table("class C extends Object {} main { new C(#x) }");
        let sigma = build_store_env(&ct, &main, &Store::new()).unwrap();
        assert!(sigma.contains(&Ident::new("x"), &ClassName::new("C")));

        let mut store = Store::new();
        store.relations.insert(
            Relation::new("LoginStatus", vec!["id".into(), "status".into()])
                .with_primary_key("id"),
        );
        store.bindings.insert(
            (Ident::new("kamina"), ClassName::new("LoginStatus")),
            "LoginStatus".into(),
        );
        let (ct, main) = table(
            "class Bool extends Object {} \
             class LoginStatus extends Object { Bool status; } main { #kamina }",
        );
        let sigma = build_store_env(&ct, &main, &store).unwrap();
        assert!(sigma.contains(&Ident::new("kamina"), &ClassName::new("LoginStatus")));
    }

    // Two unrelated classes claiming one identifier must be rejected.
    #[test]
    fn build_store_env_conflict() {
        let (ct, _) = table("class C extends Object {} class D extends Object {} main { #t }");
        let main =
            Expr::new_obj("C", "x", vec![]).set_call(vec![Expr::new_obj("D", "x", vec![])]);
        let err = build_store_env(&ct, &main, &Store::new()).unwrap_err();
        assert!(err.message.contains("incomparable"));
    }

    #[test]
    fn store_wellformed_checks_columns_and_cells() {
        let (ct, main) = table(
            "class Bool extends Object {} \
             class LoginStatus extends Object { Bool status; } main { #kamina }",
        );
        let mut store = Store::new();
        let mut rel = Relation::new("LoginStatus", vec!["id".into(), "status".into()])
            .with_primary_key("id");
        rel.rows.push(vec![Cell::value("kamina"), Cell::value("t")]);
        store.relations.insert(rel);
        store.bindings.insert(
            (Ident::new("kamina"), ClassName::new("LoginStatus")),
            "LoginStatus".into(),
        );
        let mut bool_rel = Relation::new("Bool", vec!["id".into()]).with_primary_key("id");
        bool_rel.rows.push(vec![Cell::value("t")]);
        store.relations.insert(bool_rel);
        store
            .bindings
            .insert((Ident::new("t"), ClassName::new("Bool")), "Bool".into());
        let sigma = build_store_env(&ct, &main, &store).unwrap();
        assert!(check_store_wellformed(&ct, &sigma, &store).is_ok());

        // missing column
        let mut broken = store.clone();
        let rel = broken.relations.get("LoginStatus").unwrap().clone();
        let narrowed = crate::relstore::drop_columns(&rel, &["status".to_string()]).unwrap();
        broken.relations.insert(narrowed);
        assert!(check_store_wellformed(&ct, &sigma, &broken).is_err());

        // ill-typed cell: status points at an unrelated class
        let mut broken = store.clone();
        let mut other = Relation::new("LoginStatus2", vec!["id".into()]).with_primary_key("id");
        other.rows.push(vec![Cell::value("zz")]);
        broken.relations.insert(other);
        broken.bindings.insert(
            (Ident::new("zz"), ClassName::new("LoginStatus")),
            "LoginStatus2".into(),
        );
        let mut rel = broken.relations.get("LoginStatus").unwrap().clone();
        rel.rows[0][1] = Cell::value("zz");
        broken.relations.insert(rel);
        let sigma2 = build_store_env(&ct, &main, &broken).unwrap();
        let errs = check_store_wellformed(&ct, &sigma2, &broken).unwrap_err();
        assert!(errs.iter().any(|e| e.rule == "T-STORE"));
    }

    #[test]
    fn bottom_cells_are_exempt() {
        let (ct, main) = table(
            "class Bool extends Object {} \
             class LoginStatus extends Object { Bool status; } main { #kamina }",
        );
        let mut store = Store::new();
        let mut rel = Relation::new("LoginStatus", vec!["id".into(), "status".into()])
            .with_primary_key("id");
        rel.rows.push(vec![Cell::value("kamina"), Cell::Bottom]);
        store.relations.insert(rel);
        store.bindings.insert(
            (Ident::new("kamina"), ClassName::new("LoginStatus")),
            "LoginStatus".into(),
        );
        let sigma = build_store_env(&ct, &main, &store).unwrap();
        assert!(check_store_wellformed(&ct, &sigma, &store).is_ok());
    }
}
