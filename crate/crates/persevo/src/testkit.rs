//! Deterministic generators and independent oracles for the test suites.
//! Not part of the public API.

use crate::backends::Backend;
use crate::relstore::{Cell, Relation, Store};
use crate::syntax::{ClassDecl, ClassName, ClassTable, Expr, Ident, MethodDecl};
use crate::typing::{fields, subtype};
use std::collections::{BTreeMap, BTreeSet};

/// Splitmix64: small, seedable, and stable across runs.
#[derive(Debug, Clone)]
pub struct Rng(u64);

impl Rng {
    pub fn new(seed: u64) -> Rng {
        Rng(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    pub fn range(&mut self, lo: usize, hi_inclusive: usize) -> usize {
        lo + self.below(hi_inclusive - lo + 1)
    }

    pub fn chance(&mut self, percent: u64) -> bool {
        self.next_u64() % 100 < percent
    }

    pub fn pick<'a, T>(&mut self, xs: &'a [T]) -> &'a T {
        &xs[self.below(xs.len())]
    }
}

/// A generated configuration: class table, object population, main
/// expression. Objects carry positional field values.
#[derive(Debug, Clone)]
pub struct World {
    pub ct: ClassTable,
    pub objects: Vec<WorldObject>,
    pub main: Expr,
    fresh_keys: u64,
}

#[derive(Debug, Clone)]
pub struct WorldObject {
    pub id: Ident,
    pub class: ClassName,
    pub values: Vec<Ident>,
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub max_classes: usize,
    pub max_fields: usize,
    pub max_methods: usize,
    pub max_depth: usize,
    /// When false, generated expressions never construct or set objects;
    /// useful for operations that do not rewrite such sites.
    pub allow_writes: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_classes: 4,
            max_fields: 3,
            max_methods: 3,
            max_depth: 5,
            allow_writes: true,
        }
    }
}

pub fn gen_world(rng: &mut Rng, cfg: &GenConfig) -> World {
    let n_classes = rng.range(1, cfg.max_classes);
    let mut decls: Vec<ClassDecl> = Vec::new();
    for i in 0..n_classes {
        let name = ClassName::new(format!("K{i}"));
        let superclass = if i == 0 || rng.chance(50) {
            ClassName::object()
        } else {
            ClassName::new(format!("K{}", rng.below(i)))
        };
        // field types come from strictly earlier classes so that the
        // object population can be built in declaration order
        let n_fields = if i == 0 { 0 } else { rng.below(cfg.max_fields + 1) };
        let mut fields = Vec::new();
        for k in 0..n_fields {
            let ty = ClassName::new(format!("K{}", rng.below(i)));
            fields.push((ty, format!("f{i}{k}")));
        }
        decls.push(ClassDecl {
            name,
            superclass,
            fields,
            methods: Vec::new(),
        });
    }
    let ct = ClassTable::from_decls(decls);

    // at least one object per class, so every field type is satisfiable
    let mut objects = Vec::new();
    let mut obj_counter = 0;
    for decl in ct.iter() {
        for _ in 0..rng.range(1, 2) {
            objects.push(WorldObject {
                id: Ident::new(format!("o{obj_counter}")),
                class: decl.name.clone(),
                values: Vec::new(),
            });
            obj_counter += 1;
        }
    }
    let classes: Vec<ClassName> = ct.names().cloned().collect();
    let pool: Vec<(Ident, ClassName)> = objects
        .iter()
        .map(|o| (o.id.clone(), o.class.clone()))
        .collect();
    for obj in &mut objects {
        let flds = fields(&ct, &obj.class).expect("generated tables are closed");
        obj.values = flds
            .iter()
            .map(|(want, _)| pick_value(rng, &ct, &pool, want))
            .collect();
    }

    let mut world = World {
        ct,
        objects,
        main: Expr::raw("placeholder"),
        fresh_keys: 0,
    };

    // methods, generated type-directed against the object pool
    let mut table = world.ct.clone();
    for i in 0..n_classes {
        let class = ClassName::new(format!("K{i}"));
        let n_methods = rng.below(cfg.max_methods + 1);
        let mut methods = Vec::new();
        for k in 0..n_methods {
            let return_type = rng.pick(&classes).clone();
            let n_params = rng.below(3);
            let params: Vec<(ClassName, String)> = (0..n_params)
                .map(|p| (rng.pick(&classes).clone(), format!("x{p}")))
                .collect();
            let mut gamma: Vec<(String, ClassName)> =
                vec![("this".to_string(), class.clone())];
            gamma.extend(params.iter().map(|(t, x)| (x.clone(), t.clone())));
            let body = world.gen_expr(rng, cfg, &gamma, &return_type, cfg.max_depth);
            methods.push(MethodDecl {
                return_type,
                name: format!("m{i}{k}"),
                params,
                body,
            });
        }
        let mut decl = table.get(&class).unwrap().clone();
        decl.methods = methods;
        table.insert(decl);
    }
    world.ct = table;

    let target = rng.pick(&classes).clone();
    world.main = world.gen_expr(rng, cfg, &[], &target, cfg.max_depth);
    world
}

fn pick_value(
    rng: &mut Rng,
    ct: &ClassTable,
    pool: &[(Ident, ClassName)],
    want: &ClassName,
) -> Ident {
    let fits: Vec<&(Ident, ClassName)> = pool
        .iter()
        .filter(|(_, c)| subtype(ct, c, want).unwrap_or(false))
        .collect();
    rng.pick(&fits).0.clone()
}

impl World {
    /// Objects whose class is exactly `class`.
    pub fn objects_of(&self, class: &ClassName) -> Vec<&WorldObject> {
        self.objects.iter().filter(|o| &o.class == class).collect()
    }

    pub fn fresh_key(&mut self) -> Ident {
        self.fresh_keys += 1;
        Ident::new(format!("n{}", self.fresh_keys))
    }

    /// An expression whose static type is exactly `want`.
    fn gen_expr(
        &mut self,
        rng: &mut Rng,
        cfg: &GenConfig,
        gamma: &[(String, ClassName)],
        want: &ClassName,
        depth: usize,
    ) -> Expr {
        let atom = |world: &World, rng: &mut Rng| -> Expr {
            let vars: Vec<&(String, ClassName)> =
                gamma.iter().filter(|(_, c)| c == want).collect();
            let objs = world.objects_of(want);
            let total = vars.len() + objs.len();
            if total == 0 {
                // the population guarantees at least one object per class
                panic!("no atom of class {want}");
            }
            let i = rng.below(total);
            if i < vars.len() {
                Expr::Var(vars[i].0.clone())
            } else {
                Expr::Raw(objs[i - vars.len()].id.clone())
            }
        };
        if depth == 0 {
            return atom(self, rng);
        }
        for _ in 0..4 {
            match rng.below(5) {
                0 => return atom(self, rng),
                1 if cfg.allow_writes => {
                    // new want(fresh, args)
                    let flds = fields(&self.ct, want).unwrap();
                    let key = self.fresh_key();
                    let args = flds
                        .iter()
                        .map(|(t, _)| t.clone())
                        .collect::<Vec<_>>()
                        .into_iter()
                        .map(|t| self.gen_sub(rng, cfg, gamma, &t, depth - 1))
                        .collect();
                    return Expr::New(want.clone(), key, args);
                }
                2 => {
                    // a field access that yields exactly `want`
                    let mut sites: Vec<(ClassName, String)> = Vec::new();
                    for d in self.ct.iter() {
                        for (t, f) in fields(&self.ct, &d.name).unwrap() {
                            if &t == want {
                                sites.push((d.name.clone(), f));
                            }
                        }
                    }
                    if !sites.is_empty() {
                        let (owner, field) = rng.pick(&sites).clone();
                        let recv = self.gen_expr(rng, cfg, gamma, &owner, depth - 1);
                        return Expr::Field(Box::new(recv), field);
                    }
                }
                3 if cfg.allow_writes => {
                    // set returns its receiver's type; the receiver must
                    // evaluate to exactly its static class, because the
                    // setter's arity follows the receiver's runtime class
                    let flds = fields(&self.ct, want).unwrap();
                    let recv = self.gen_stable(rng, cfg, want, depth - 1);
                    let args = flds
                        .iter()
                        .map(|(t, _)| t.clone())
                        .collect::<Vec<_>>()
                        .into_iter()
                        .map(|t| self.gen_sub(rng, cfg, gamma, &t, depth - 1))
                        .collect();
                    return Expr::Set(Box::new(recv), args);
                }
                4 => {
                    // a method returning exactly `want`
                    let mut sites: Vec<(ClassName, String)> = Vec::new();
                    for d in self.ct.iter() {
                        for m in &d.methods {
                            if &m.return_type == want {
                                sites.push((d.name.clone(), m.name.clone()));
                            }
                        }
                    }
                    if !sites.is_empty() {
                        let (owner, method) = rng.pick(&sites).clone();
                        let params = self
                            .ct
                            .get(&owner)
                            .unwrap()
                            .method(&method)
                            .unwrap()
                            .params
                            .clone();
                        let recv = self.gen_expr(rng, cfg, gamma, &owner, depth - 1);
                        let args = params
                            .iter()
                            .map(|(t, _)| t.clone())
                            .collect::<Vec<_>>()
                            .into_iter()
                            .map(|t| self.gen_sub(rng, cfg, gamma, &t, depth - 1))
                            .collect();
                        return Expr::Call(Box::new(recv), method, args);
                    }
                }
                _ => {}
            }
        }
        atom(self, rng)
    }

    /// An expression of static class `want` whose value is also annotated
    /// exactly `want`: a directly named object, a construction, or a setter
    /// chain on one.
    fn gen_stable(
        &mut self,
        rng: &mut Rng,
        cfg: &GenConfig,
        want: &ClassName,
        depth: usize,
    ) -> Expr {
        let objs = self.objects_of(want);
        let atom = Expr::Raw(rng.pick(&objs).id.clone());
        if depth == 0 {
            return atom;
        }
        match rng.below(3) {
            0 => atom,
            _ => {
                let flds = fields(&self.ct, want).unwrap();
                let key = self.fresh_key();
                let args: Vec<Expr> = flds
                    .iter()
                    .map(|(t, _)| t.clone())
                    .collect::<Vec<_>>()
                    .into_iter()
                    .map(|t| self.gen_sub(rng, cfg, &[], &t, 0))
                    .collect();
                Expr::New(want.clone(), key, args)
            }
        }
    }

    /// An expression typing to some subtype of `want`.
    fn gen_sub(
        &mut self,
        rng: &mut Rng,
        cfg: &GenConfig,
        gamma: &[(String, ClassName)],
        want: &ClassName,
        depth: usize,
    ) -> Expr {
        let subs: Vec<ClassName> = self
            .ct
            .names()
            .filter(|c| subtype(&self.ct, c, want).unwrap_or(false))
            .cloned()
            .collect();
        let target = if subs.is_empty() || rng.chance(70) {
            want.clone()
        } else {
            rng.pick(&subs).clone()
        };
        self.gen_expr(rng, cfg, gamma, &target, depth)
    }

    /// Materializes the object population into a store.
    pub fn materialize(&self, backend: Backend) -> Store {
        let mut store = Store::new();
        for obj in &self.objects {
            store = backend
                .insert(&self.ct, &store, &obj.class, &obj.id, &obj.values)
                .expect("generated objects insert cleanly");
        }
        store
    }

    /// Classes with no strict subclass in the table.
    pub fn leaf_classes(&self) -> Vec<ClassName> {
        self.ct
            .names()
            .filter(|c| !self.ct.iter().any(|d| &d.superclass == *c))
            .cloned()
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Independent relational oracle
// ---------------------------------------------------------------------------

pub type RowMap = BTreeMap<String, Cell>;

/// A relation as a set of column-name-to-cell maps; order-insensitive.
pub fn relation_as_maps(r: &Relation) -> BTreeSet<RowMap> {
    r.rows
        .iter()
        .map(|row| {
            r.columns
                .iter()
                .cloned()
                .zip(row.iter().cloned())
                .collect()
        })
        .collect()
}

/// Brute-force natural join: cross product filtered on shared columns.
/// Written against row maps, independently of the algebra implementation.
pub fn oracle_join(r1: &Relation, r2: &Relation) -> BTreeSet<RowMap> {
    let left = relation_as_maps(r1);
    let right = relation_as_maps(r2);
    let mut out = BTreeSet::new();
    for l in &left {
        for r in &right {
            let mut merged = l.clone();
            let mut ok = false; // at least one shared column must exist
            let mut consistent = true;
            for (c, v) in r {
                match merged.get(c) {
                    Some(existing) => {
                        ok = true;
                        if existing != v {
                            consistent = false;
                            break;
                        }
                    }
                    None => {
                        merged.insert(c.clone(), v.clone());
                    }
                }
            }
            if ok && consistent {
                out.insert(merged);
            }
        }
    }
    out
}

/// Brute-force full outer join over row maps.
pub fn oracle_outer_join(r1: &Relation, r2: &Relation) -> BTreeSet<RowMap> {
    let shared: Vec<&String> = r1
        .columns
        .iter()
        .filter(|c| r2.columns.iter().any(|d| &d == c))
        .collect();
    let all_cols: BTreeSet<String> = r1
        .columns
        .iter()
        .chain(r2.columns.iter())
        .cloned()
        .collect();
    let pad = |m: &RowMap| -> RowMap {
        let mut out = m.clone();
        for c in &all_cols {
            out.entry(c.clone()).or_insert(Cell::Bottom);
        }
        out
    };
    let matches = |l: &RowMap, r: &RowMap| shared.iter().all(|c| l.get(*c) == r.get(*c));
    let left = relation_as_maps(r1);
    let right = relation_as_maps(r2);
    let mut out = BTreeSet::new();
    for l in &left {
        let mut hit = false;
        for r in &right {
            if matches(l, r) {
                hit = true;
                let mut merged = l.clone();
                merged.extend(r.clone());
                out.insert(merged);
            }
        }
        if !hit {
            out.insert(pad(l));
        }
    }
    for r in &right {
        if !left.iter().any(|l| matches(l, r)) {
            out.insert(pad(r));
        }
    }
    out
}

/// Canonical equality on stores: relations compared as sets of rows with
/// sorted columns, bindings exactly.
pub fn stores_equal(a: &Store, b: &Store) -> bool {
    a.canonical_dump() == b.canonical_dump()
}
