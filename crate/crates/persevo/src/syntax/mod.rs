//! Abstract syntax of the core object language and the evolution language.
//!
//! Programs are a class table plus a main expression. The only values are
//! database identifiers; at runtime they carry a class annotation, in source
//! they never do.

mod parser;
mod printer;

pub use parser::{parse_evolution_script, parse_program, ParseError};
pub use printer::{print_expr, print_program};

use serde::{Deserialize, Serialize};
use std::fmt;

/// The implicit root of every class hierarchy. Never declared in a class table.
pub const OBJECT: &str = "Object";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClassName(pub String);

impl ClassName {
    pub fn new(name: impl Into<String>) -> Self {
        ClassName(name.into())
    }

    pub fn object() -> Self {
        ClassName(OBJECT.to_string())
    }

    pub fn is_object(&self) -> bool {
        self.0 == OBJECT
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ClassName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A database entity identifier, written `#name` in source.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Ident(pub String);

impl Ident {
    pub fn new(name: impl Into<String>) -> Self {
        Ident(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Ident {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// An identifier tagged with its class. Only created at runtime or when
/// loading a store; parsed programs never contain one.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AnnotatedIdent {
    pub id: Ident,
    pub class: ClassName,
}

impl AnnotatedIdent {
    pub fn new(id: impl Into<String>, class: impl Into<String>) -> Self {
        AnnotatedIdent {
            id: Ident::new(id),
            class: ClassName::new(class),
        }
    }
}

impl fmt::Display for AnnotatedIdent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.id, self.class)
    }
}

pub type FieldName = String;
pub type MethodName = String;
pub type VarName = String;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expr {
    Var(VarName),
    Field(Box<Expr>, FieldName),
    /// `e.set(args)`; arity must match the receiver's full field list.
    Set(Box<Expr>, Vec<Expr>),
    Call(Box<Expr>, MethodName, Vec<Expr>),
    /// `new C(#key, args)`; the key identifier is never evaluated.
    New(ClassName, Ident, Vec<Expr>),
    Raw(Ident),
    Ann(AnnotatedIdent),
}

impl Expr {
    /// Normal forms are exactly class-annotated identifiers.
    pub fn is_value(&self) -> bool {
        matches!(self, Expr::Ann(_))
    }

    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn raw(name: impl Into<String>) -> Expr {
        Expr::Raw(Ident::new(name))
    }

    pub fn ann(id: impl Into<String>, class: impl Into<String>) -> Expr {
        Expr::Ann(AnnotatedIdent::new(id, class))
    }

    pub fn field(self, name: impl Into<String>) -> Expr {
        Expr::Field(Box::new(self), name.into())
    }

    pub fn set_call(self, args: Vec<Expr>) -> Expr {
        Expr::Set(Box::new(self), args)
    }

    pub fn call(self, method: impl Into<String>, args: Vec<Expr>) -> Expr {
        Expr::Call(Box::new(self), method.into(), args)
    }

    pub fn new_obj(class: impl Into<String>, key: impl Into<String>, args: Vec<Expr>) -> Expr {
        Expr::New(ClassName::new(class), Ident::new(key), args)
    }

    pub fn contains_annotated(&self) -> bool {
        match self {
            Expr::Ann(_) => true,
            Expr::Var(_) | Expr::Raw(_) => false,
            Expr::Field(e, _) => e.contains_annotated(),
            Expr::Set(e, args) | Expr::Call(e, _, args) => {
                e.contains_annotated() || args.iter().any(Expr::contains_annotated)
            }
            Expr::New(_, _, args) => args.iter().any(Expr::contains_annotated),
        }
    }

    /// True when `new c(...)` occurs anywhere in this expression.
    pub fn contains_new_of(&self, c: &ClassName) -> bool {
        match self {
            Expr::Var(_) | Expr::Raw(_) | Expr::Ann(_) => false,
            Expr::Field(e, _) => e.contains_new_of(c),
            Expr::Set(e, args) | Expr::Call(e, _, args) => {
                e.contains_new_of(c) || args.iter().any(|a| a.contains_new_of(c))
            }
            Expr::New(class, _, args) => class == c || args.iter().any(|a| a.contains_new_of(c)),
        }
    }

    /// Collects every `(class, key)` pair of a constructor invocation.
    pub fn collect_new_keys(&self, out: &mut Vec<(ClassName, Ident)>) {
        match self {
            Expr::Var(_) | Expr::Raw(_) | Expr::Ann(_) => {}
            Expr::Field(e, _) => e.collect_new_keys(out),
            Expr::Set(e, args) | Expr::Call(e, _, args) => {
                e.collect_new_keys(out);
                for a in args {
                    a.collect_new_keys(out);
                }
            }
            Expr::New(class, key, args) => {
                out.push((class.clone(), key.clone()));
                for a in args {
                    a.collect_new_keys(out);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodDecl {
    pub return_type: ClassName,
    pub name: MethodName,
    pub params: Vec<(ClassName, VarName)>,
    pub body: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDecl {
    pub name: ClassName,
    pub superclass: ClassName,
    /// Declaration order is significant: it fixes constructor and `set`
    /// argument order and the column order of mapped tables.
    pub fields: Vec<(ClassName, FieldName)>,
    pub methods: Vec<MethodDecl>,
}

impl ClassDecl {
    pub fn field_names(&self) -> impl Iterator<Item = &FieldName> {
        self.fields.iter().map(|(_, f)| f)
    }

    pub fn method(&self, name: &str) -> Option<&MethodDecl> {
        self.methods.iter().find(|m| m.name == name)
    }
}

/// Map from class name to declaration, preserving declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassTable {
    classes: Vec<ClassDecl>,
}

impl ClassTable {
    pub fn new() -> Self {
        ClassTable::default()
    }

    pub fn from_decls(classes: Vec<ClassDecl>) -> Self {
        ClassTable { classes }
    }

    pub fn get(&self, name: &ClassName) -> Option<&ClassDecl> {
        self.classes.iter().find(|d| &d.name == name)
    }

    pub fn contains(&self, name: &ClassName) -> bool {
        self.get(name).is_some()
    }

    /// Inserts or replaces in place, preserving positions of other entries.
    pub fn insert(&mut self, decl: ClassDecl) {
        match self.classes.iter_mut().find(|d| d.name == decl.name) {
            Some(slot) => *slot = decl,
            None => self.classes.push(decl),
        }
    }

    pub fn remove(&mut self, name: &ClassName) -> Option<ClassDecl> {
        let pos = self.classes.iter().position(|d| &d.name == name)?;
        Some(self.classes.remove(pos))
    }

    pub fn iter(&self) -> impl Iterator<Item = &ClassDecl> {
        self.classes.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &ClassName> {
        self.classes.iter().map(|d| &d.name)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// True when `new c(...)` occurs in any method body.
    pub fn contains_new_of(&self, c: &ClassName) -> bool {
        self.classes
            .iter()
            .flat_map(|d| d.methods.iter())
            .any(|m| m.body.contains_new_of(c))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionedProgram {
    pub version: u64,
    pub class_table: ClassTable,
    pub main: Expr,
}

/// The eight user-facing schema-modification operations, plus the internal
/// `DeleteClass` used to define superclass extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvolutionOp {
    NewClass {
        class: ClassName,
        superclass: ClassName,
        fields: Vec<(ClassName, FieldName)>,
    },
    RenameClass {
        from: ClassName,
        to: ClassName,
    },
    RenameField {
        class: ClassName,
        olds: Vec<FieldName>,
        news: Vec<FieldName>,
    },
    AddField {
        class: ClassName,
        fields: Vec<(ClassName, FieldName)>,
        /// Default objects, one per added field; the annotation is the
        /// declared field type and must hold in the store environment.
        defaults: Vec<AnnotatedIdent>,
    },
    DeleteField {
        class: ClassName,
        names: Vec<FieldName>,
    },
    ChangeFieldType {
        class: ClassName,
        names: Vec<FieldName>,
        new_types: Vec<ClassName>,
    },
    NewSupClass {
        class: ClassName,
        superclass: ClassName,
        extracted: Vec<FieldName>,
    },
    MergeClass {
        /// The direct subclass that absorbs the declaration.
        class: ClassName,
        /// The superclass whose declaration disappears.
        merged: ClassName,
    },
    /// Internal only; rejected by the script parser.
    DeleteClass { class: ClassName },
}

impl fmt::Display for EvolutionOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvolutionOp::NewClass {
                class,
                superclass,
                fields,
            } => {
                let list = fields
                    .iter()
                    .map(|(t, n)| format!("{t} {n}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                write!(f, "NewClass {class} extends {superclass} {{ {list} }}")
            }
            EvolutionOp::RenameClass { from, to } => write!(f, "RenameClass {from} -> {to}"),
            EvolutionOp::RenameField { class, olds, news } => {
                let list = olds
                    .iter()
                    .zip(news)
                    .map(|(o, n)| format!("{o} -> {n}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                write!(f, "RenameField {class} {{ {list} }}")
            }
            EvolutionOp::AddField {
                class,
                fields,
                defaults,
            } => {
                let list = fields
                    .iter()
                    .zip(defaults)
                    .map(|((t, n), d)| format!("{t} {n} = #{}", d.id))
                    .collect::<Vec<_>>()
                    .join(", ");
                write!(f, "AddField {class} {{ {list} }}")
            }
            EvolutionOp::DeleteField { class, names } => {
                write!(f, "DeleteField {class} {{ {} }}", names.join(", "))
            }
            EvolutionOp::ChangeFieldType {
                class,
                names,
                new_types,
            } => {
                let list = names
                    .iter()
                    .zip(new_types)
                    .map(|(n, t)| format!("{n} : {t}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                write!(f, "ChangeFieldType {class} {{ {list} }}")
            }
            EvolutionOp::NewSupClass {
                class,
                superclass,
                extracted,
            } => {
                write!(
                    f,
                    "NewSupClass {class} -> {superclass} {{ {} }}",
                    extracted.join(", ")
                )
            }
            EvolutionOp::MergeClass { class, merged } => {
                write!(f, "MergeClass {class} <- {merged}")
            }
            EvolutionOp::DeleteClass { class } => write!(f, "DeleteClass {class}"),
        }
    }
}
