//! Canonical program rendering. Printing is deterministic and parses back to
//! a structurally equal program.

use super::{ClassTable, Expr};
use std::fmt::Write;

pub fn print_expr(e: &Expr) -> String {
    let mut out = String::new();
    write_expr(&mut out, e);
    out
}

fn write_expr(out: &mut String, e: &Expr) {
    match e {
        Expr::Var(x) => out.push_str(x),
        Expr::Raw(l) => {
            out.push('#');
            out.push_str(l.as_str());
        }
        Expr::Ann(a) => {
            // Only reachable from traces and diagnostics; programs never
            // contain annotated identifiers.
            let _ = write!(out, "{a}");
        }
        Expr::Field(recv, f) => {
            write_expr(out, recv);
            out.push('.');
            out.push_str(f);
        }
        Expr::Set(recv, args) => {
            write_expr(out, recv);
            out.push_str(".set(");
            write_args(out, args);
            out.push(')');
        }
        Expr::Call(recv, m, args) => {
            write_expr(out, recv);
            out.push('.');
            out.push_str(m);
            out.push('(');
            write_args(out, args);
            out.push(')');
        }
        Expr::New(class, key, args) => {
            let _ = write!(out, "new {class}(#{key}");
            for a in args {
                out.push_str(", ");
                write_expr(out, a);
            }
            out.push(')');
        }
    }
}

fn write_args(out: &mut String, args: &[Expr]) {
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_expr(out, a);
    }
}

pub fn print_program(ct: &ClassTable, main: &Expr) -> String {
    let mut out = String::new();
    for decl in ct.iter() {
        if decl.fields.is_empty() && decl.methods.is_empty() {
            let _ = writeln!(out, "class {} extends {} {{}}", decl.name, decl.superclass);
        } else {
            let _ = writeln!(out, "class {} extends {} {{", decl.name, decl.superclass);
            for (ty, name) in &decl.fields {
                let _ = writeln!(out, "  {ty} {name};");
            }
            for m in &decl.methods {
                let params = m
                    .params
                    .iter()
                    .map(|(t, x)| format!("{t} {x}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                let _ = writeln!(
                    out,
                    "  {} {}({params}) {{ return {}; }}",
                    m.return_type,
                    m.name,
                    print_expr(&m.body)
                );
            }
            out.push_str("}\n");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "main {{ {} }}", print_expr(main));
    out
}

#[cfg(test)]
mod tests {
    use super::super::parse_program;
    use super::*;
    use crate::syntax::ClassTable;

    #[test]
    fn empty_table_prints() {
        let printed = print_program(&ClassTable::new(), &Expr::raw("t"));
        assert_eq!(printed, "main { #t }\n");
    }

    #[test]
    fn one_field_class_is_deterministic() {
        let src = "class LoginStatus extends Object { Bool status; } main { #t }";
        let (ct, main) = parse_program(src).unwrap();
        let printed = print_program(&ct, &main);
        assert_eq!(
            printed,
            "class LoginStatus extends Object {\n  Bool status;\n}\n\nmain { #t }\n"
        );
        assert_eq!(printed, print_program(&ct, &main));
    }

    // Round trip: parse . print . parse = parse, over a corpus of programs.
    #[test]
    fn round_trip_corpus() {
        let corpus = [
            "class Bool extends Object {} main { #t }",
            "class V extends Object {} class C extends Object { V f; V g; } main { new C(#x, #a, #b).f }",
            concat!(
                "class V extends Object {} ",
                "class P extends Object { V h; } ",
                "class C extends P { V a; V b; C touch(V v) { return this.set(this.h, v, this.b); } } ",
                "main { new C(#l1, #hv, #av, #bv).touch(#av).a }"
            ),
            "class A extends Object { A m() { return this; } } main { new A(#x).m().m() }",
        ];
        for src in corpus {
            let parsed = parse_program(src).unwrap();
            let printed = print_program(&parsed.0, &parsed.1);
            let reparsed = parse_program(&printed).unwrap();
            assert_eq!(parsed, reparsed, "round trip failed for {src}");
            // Printing a printed program is a fixed point.
            assert_eq!(printed, print_program(&reparsed.0, &reparsed.1));
        }
    }

    #[test]
    fn parsed_programs_have_no_annotated_ids() {
        let (_, main) =
            parse_program("main { new C(#x, #y).set(#z).f }").unwrap();
        assert!(!main.contains_annotated());
    }
}
