//! Small-step evaluation of expressions against a store, and the sequencing
//! of evolution operations over versioned programs.
//!
//! Evaluation is call-by-value, receiver first, then arguments left to
//! right. A raw identifier promotes to its most specific annotation in a
//! dedicated micro-step, so the only normal forms are annotated identifiers.

use crate::backends::{annotate, Backend, BackwardPayload, QueryError};
use crate::evolution::{
    check_premises, evolve_class_table, evolve_expr, evolve_store, evolve_store_env, EvolveError,
};
use crate::msvdm::{read_at_version, view_at_version, write_at_version, VersionCatalog, WriteRequest};
use crate::relstore::Store;
use crate::syntax::{
    print_expr, AnnotatedIdent, ClassName, ClassTable, Expr, Ident, VarName, VersionedProgram,
};
use crate::typing::{build_store_env, check_class_table, mbody, type_expr, StoreEnv, TypeEnv};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineState {
    pub store: Store,
    pub expr: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Done(AnnotatedIdent),
    Next { state: MachineState, rule: &'static str },
    Stuck { rule: &'static str, message: String },
}

/// Where queries go: straight to a backend, or through the version views of
/// a catalog so an older program runs against the latest store.
pub enum Engine<'a> {
    Direct(Backend),
    AtVersion {
        backend: Backend,
        catalog: &'a VersionCatalog,
        version: u64,
    },
}

impl<'a> Engine<'a> {
    pub fn backend(&self) -> Backend {
        match self {
            Engine::Direct(b) => *b,
            Engine::AtVersion { backend, .. } => *backend,
        }
    }

    fn select(&self, store: &Store, l: &AnnotatedIdent, field: &str) -> Result<Ident, String> {
        match self {
            Engine::Direct(b) => b.select(store, l, field).map_err(|e| e.to_string()),
            Engine::AtVersion { backend, catalog, version } => {
                read_at_version(catalog, store, *version, *backend, l, field)
                    .map_err(|e| e.to_string())
            }
        }
    }

    fn insert(
        &self,
        ct: &ClassTable,
        store: &Store,
        class: &ClassName,
        id: &Ident,
        values: &[Ident],
        lossy: &mut Vec<String>,
    ) -> Result<Store, String> {
        match self {
            Engine::Direct(b) => b.insert(ct, store, class, id, values).map_err(|e| e.to_string()),
            Engine::AtVersion { backend, catalog, version } => {
                let req = WriteRequest::Insert {
                    class: class.clone(),
                    id: id.clone(),
                    values: values.to_vec(),
                };
                let (out, log) = write_at_version(catalog, store, *version, *backend, req)
                    .map_err(|e| e.to_string())?;
                lossy.extend(log);
                Ok(out)
            }
        }
    }

    fn update(
        &self,
        ct: &ClassTable,
        store: &Store,
        l: &AnnotatedIdent,
        values: &[Ident],
        lossy: &mut Vec<String>,
    ) -> Result<Store, String> {
        match self {
            Engine::Direct(b) => b.update(ct, store, l, values).map_err(|e| e.to_string()),
            Engine::AtVersion { backend, catalog, version } => {
                let req = WriteRequest::Update {
                    target: l.clone(),
                    values: values.to_vec(),
                };
                let (out, log) = write_at_version(catalog, store, *version, *backend, req)
                    .map_err(|e| e.to_string())?;
                lossy.extend(log);
                Ok(out)
            }
        }
    }

    fn annotate(&self, ct: &ClassTable, store: &Store, id: &Ident) -> Result<AnnotatedIdent, QueryError> {
        match self {
            Engine::Direct(_) => annotate(ct, store, id),
            Engine::AtVersion { backend, catalog, version } => {
                let view = view_at_version(catalog, store, *version, *backend)
                    .map_err(|e| QueryError::Premise(e.to_string()))?;
                annotate(ct, &view, id)
            }
        }
    }
}

enum Reduced {
    Value,
    Next(Store, Expr, &'static str),
}

type StuckInfo = (&'static str, String);
type ArgStep = Option<(Store, Vec<Expr>, &'static str)>;

/// One small step. `Done` when the expression is already a value.
pub fn step(ct: &ClassTable, engine: &Engine, state: &MachineState) -> StepOutcome {
    let mut lossy = Vec::new();
    let out = step_logged(ct, engine, state, &mut lossy);
    debug_assert!(lossy.is_empty() || !matches!(out, StepOutcome::Stuck { .. }));
    out
}

fn step_logged(
    ct: &ClassTable,
    engine: &Engine,
    state: &MachineState,
    lossy: &mut Vec<String>,
) -> StepOutcome {
    if let Expr::Ann(a) = &state.expr {
        return StepOutcome::Done(a.clone());
    }
    match reduce(ct, engine, &state.store, &state.expr, lossy) {
        Ok(Reduced::Next(store, expr, rule)) => StepOutcome::Next {
            state: MachineState { store, expr },
            rule,
        },
        Ok(Reduced::Value) => unreachable!("values are handled above"),
        Err((rule, message)) => StepOutcome::Stuck { rule, message },
    }
}

fn reduce(
    ct: &ClassTable,
    engine: &Engine,
    store: &Store,
    e: &Expr,
    lossy: &mut Vec<String>,
) -> Result<Reduced, StuckInfo> {
    match e {
        Expr::Ann(_) => Ok(Reduced::Value),
        Expr::Raw(id) => {
            let tagged = engine
                .annotate(ct, store, id)
                .map_err(|err| ("R-ANN", err.to_string()))?;
            Ok(Reduced::Next(store.clone(), Expr::Ann(tagged), "R-ANN"))
        }
        Expr::Var(x) => Err(("R-VAR", format!("free variable `{x}`"))),
        Expr::Field(recv, f) => {
            match reduce(ct, engine, store, recv, lossy)? {
                Reduced::Next(s, r, rule) => {
                    return Ok(Reduced::Next(s, Expr::Field(Box::new(r), f.clone()), rule))
                }
                Reduced::Value => {}
            }
            let l = as_value(recv);
            let raw = engine.select(store, l, f).map_err(|m| ("R-FIELD", m))?;
            let tagged = engine
                .annotate(ct, store, &raw)
                .map_err(|err| ("R-FIELD", format!("selected `{raw}` has no binding: {err}")))?;
            Ok(Reduced::Next(store.clone(), Expr::Ann(tagged), "R-FIELD"))
        }
        Expr::Set(recv, args) => {
            match reduce(ct, engine, store, recv, lossy)? {
                Reduced::Next(s, r, rule) => {
                    return Ok(Reduced::Next(s, Expr::Set(Box::new(r), args.clone()), rule))
                }
                Reduced::Value => {}
            }
            if let Some((s, new_args, rule)) = reduce_args(ct, engine, store, args, lossy)? {
                return Ok(Reduced::Next(s, Expr::Set(recv.clone(), new_args), rule));
            }
            let l = as_value(recv);
            let values: Vec<Ident> = args.iter().map(|a| as_value(a).id.clone()).collect();
            let next = engine
                .update(ct, store, l, &values, lossy)
                .map_err(|m| ("R-SET", m))?;
            Ok(Reduced::Next(next, Expr::Ann(l.clone()), "R-SET"))
        }
        Expr::Call(recv, m, args) => {
            match reduce(ct, engine, store, recv, lossy)? {
                Reduced::Next(s, r, rule) => {
                    return Ok(Reduced::Next(
                        s,
                        Expr::Call(Box::new(r), m.clone(), args.clone()),
                        rule,
                    ))
                }
                Reduced::Value => {}
            }
            if let Some((s, new_args, rule)) = reduce_args(ct, engine, store, args, lossy)? {
                return Ok(Reduced::Next(s, Expr::Call(recv.clone(), m.clone(), new_args), rule));
            }
            let l = as_value(recv);
            let (params, body) = mbody(ct, m, &l.class)
                .map_err(|err| ("R-INVK", err.to_string()))?
                .ok_or_else(|| ("R-INVK", format!("class `{}` has no method `{m}`", l.class)))?;
            let mut subst: BTreeMap<VarName, Expr> = BTreeMap::new();
            subst.insert("this".to_string(), Expr::Ann(l.clone()));
            for ((_, x), arg) in params.iter().zip(args) {
                subst.insert(x.clone(), arg.clone());
            }
            Ok(Reduced::Next(store.clone(), substitute(body, &subst), "R-INVK"))
        }
        Expr::New(class, key, args) => {
            if let Some((s, new_args, rule)) = reduce_args(ct, engine, store, args, lossy)? {
                return Ok(Reduced::Next(
                    s,
                    Expr::New(class.clone(), key.clone(), new_args),
                    rule,
                ));
            }
            let values: Vec<Ident> = args.iter().map(|a| as_value(a).id.clone()).collect();
            let next = engine
                .insert(ct, store, class, key, &values, lossy)
                .map_err(|m| ("R-NEW", m))?;
            let result = AnnotatedIdent {
                id: key.clone(),
                class: class.clone(),
            };
            Ok(Reduced::Next(next, Expr::Ann(result), "R-NEW"))
        }
    }
}

/// Reduces the leftmost non-value argument, if any.
fn reduce_args(
    ct: &ClassTable,
    engine: &Engine,
    store: &Store,
    args: &[Expr],
    lossy: &mut Vec<String>,
) -> Result<ArgStep, StuckInfo> {
    for (i, a) in args.iter().enumerate() {
        match reduce(ct, engine, store, a, lossy)? {
            Reduced::Value => continue,
            Reduced::Next(s, e, rule) => {
                let mut out = args.to_vec();
                out[i] = e;
                return Ok(Some((s, out, rule)));
            }
        }
    }
    Ok(None)
}

fn as_value(e: &Expr) -> &AnnotatedIdent {
    match e {
        Expr::Ann(a) => a,
        other => panic!("expected a value, got {other:?}"),
    }
}

fn substitute(e: &Expr, subst: &BTreeMap<VarName, Expr>) -> Expr {
    match e {
        Expr::Var(x) => subst.get(x).cloned().unwrap_or_else(|| e.clone()),
        Expr::Raw(_) | Expr::Ann(_) => e.clone(),
        Expr::Field(r, f) => Expr::Field(Box::new(substitute(r, subst)), f.clone()),
        Expr::Set(r, args) => Expr::Set(
            Box::new(substitute(r, subst)),
            args.iter().map(|a| substitute(a, subst)).collect(),
        ),
        Expr::Call(r, m, args) => Expr::Call(
            Box::new(substitute(r, subst)),
            m.clone(),
            args.iter().map(|a| substitute(a, subst)).collect(),
        ),
        Expr::New(c, k, args) => Expr::New(
            c.clone(),
            k.clone(),
            args.iter().map(|a| substitute(a, subst)).collect(),
        ),
    }
}

pub const DEFAULT_FUEL: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome {
    Done {
        store: Store,
        value: AnnotatedIdent,
        steps: usize,
    },
    Stuck {
        store: Store,
        expr: Expr,
        rule: &'static str,
        message: String,
        steps: usize,
    },
    OutOfFuel {
        store: Store,
        expr: Expr,
        steps: usize,
    },
}

#[derive(Debug, Clone, Default)]
pub struct RunLog {
    /// One line per applied step: `n: RULE  expr  |store-hash|`.
    pub trace: Vec<String>,
    /// Writes that lost information while being translated across versions.
    pub lossy: Vec<String>,
}

/// Iterates `step` until a normal form, a stuck state, or fuel exhaustion.
pub fn run(
    ct: &ClassTable,
    engine: &Engine,
    store: Store,
    main: Expr,
    fuel: usize,
    log: Option<&mut RunLog>,
) -> RunOutcome {
    let mut sink = RunLog::default();
    let log = match log {
        Some(l) => l,
        None => &mut sink,
    };
    let mut state = MachineState { store, expr: main };
    for n in 0..fuel {
        if let Expr::Ann(a) = &state.expr {
            return RunOutcome::Done {
                store: state.store,
                value: a.clone(),
                steps: n,
            };
        }
        match step_logged(ct, engine, &state, &mut log.lossy) {
            StepOutcome::Done(_) => unreachable!("values are handled above"),
            StepOutcome::Next { state: next, rule } => {
                log.trace.push(format!(
                    "{}: {rule}  {}  |{:016x}|",
                    n + 1,
                    print_expr(&next.expr),
                    fnv1a(next.store.canonical_dump().as_bytes())
                ));
                state = next;
            }
            StepOutcome::Stuck { rule, message } => {
                return RunOutcome::Stuck {
                    store: state.store,
                    expr: state.expr,
                    rule,
                    message,
                    steps: n,
                }
            }
        }
    }
    match state.expr {
        Expr::Ann(a) => RunOutcome::Done {
            store: state.store,
            value: a,
            steps: fuel,
        },
        expr => RunOutcome::OutOfFuel {
            store: state.store,
            expr,
            steps: fuel,
        },
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

// ---------------------------------------------------------------------------
// Program evolution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvolutionState {
    pub store: Store,
    pub program: VersionedProgram,
}

/// What a successful step leaves behind for the version catalog.
#[derive(Debug, Clone)]
pub struct EvolveArtifacts {
    pub payload: BackwardPayload,
    pub sigma_after: StoreEnv,
}

#[derive(Debug)]
pub struct ScriptError {
    pub index: usize,
    pub op: crate::syntax::EvolutionOp,
    pub error: EvolveError,
}

impl fmt::Display for ScriptError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "op {} (`{}`): {}", self.index + 1, self.op, self.error)
    }
}

impl std::error::Error for ScriptError {}

/// Applies one operation: checks that the current program is well formed and
/// well typed, checks the operation's premises, then rewrites the class
/// table, the main expression, and the store together.
pub fn apply_evolution(
    state: &EvolutionState,
    op: &crate::syntax::EvolutionOp,
    backend: Backend,
) -> Result<(EvolutionState, EvolveArtifacts), EvolveError> {
    let ct = &state.program.class_table;
    let main = &state.program.main;
    let sigma = build_store_env(ct, main, &state.store)?;
    if let Err(errs) = check_class_table(ct, &sigma) {
        return Err(EvolveError::Type(errs.into_iter().next().expect("nonempty")));
    }
    type_expr(ct, &TypeEnv::new(), &sigma, main)?;
    check_premises(op, ct, &sigma, main)?;

    let evolved_ct = evolve_class_table(op, ct, &sigma)?;
    let evolved_main = evolve_expr(op, main, ct, &sigma)?;
    let (evolved_store, payload) = evolve_store(op, &state.store, ct, backend)?;
    let sigma_after = evolve_store_env(op, &sigma, &state.store.bindings);

    Ok((
        EvolutionState {
            store: evolved_store,
            program: VersionedProgram {
                version: state.program.version + 1,
                class_table: evolved_ct,
                main: evolved_main,
            },
        },
        EvolveArtifacts { payload, sigma_after },
    ))
}

/// Left-to-right fold of `apply_evolution`; the first failure reports its
/// position and leaves the prior state intact.
pub fn run_script(
    state: &EvolutionState,
    ops: &[crate::syntax::EvolutionOp],
    backend: Backend,
) -> Result<(EvolutionState, Vec<EvolveArtifacts>), Box<ScriptError>> {
    let mut cur = state.clone();
    let mut artifacts = Vec::new();
    for (index, op) in ops.iter().enumerate() {
        match apply_evolution(&cur, op, backend) {
            Ok((next, art)) => {
                cur = next;
                artifacts.push(art);
            }
            Err(error) => {
                return Err(Box::new(ScriptError {
                    index,
                    op: op.clone(),
                    error,
                }))
            }
        }
    }
    Ok((cur, artifacts))
}
