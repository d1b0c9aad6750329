//! Hand-written tokenizer and recursive-descent parser for programs and
//! evolution scripts.

use super::{
    AnnotatedIdent, ClassDecl, ClassName, ClassTable, EvolutionOp, Expr, Ident, MethodDecl,
};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl ParseError {
    fn new(line: usize, col: usize, message: impl Into<String>) -> Self {
        ParseError {
            line,
            col,
            message: message.into(),
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TokKind {
    Name,
    Hash,
    LBrace,
    RBrace,
    LParen,
    RParen,
    Semi,
    Comma,
    Dot,
    Arrow,     // ->
    BackArrow, // <-
    Colon,
    Eq,
}

#[derive(Debug, Clone)]
struct Tok {
    kind: TokKind,
    text: String,
    line: usize,
    col: usize,
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn tokenize(text: &str, start_line: usize) -> Result<Vec<Tok>, ParseError> {
    let mut toks = Vec::new();
    let mut line = start_line;
    let mut col = 1usize;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        let (tl, tc) = (line, col);
        let mut bump = |chars: &mut std::iter::Peekable<std::str::Chars>| {
            let c = chars.next().unwrap();
            if c == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            c
        };
        if c.is_whitespace() {
            bump(&mut chars);
            continue;
        }
        if is_name_char(c) {
            let mut name = String::new();
            while let Some(&c) = chars.peek() {
                if is_name_char(c) {
                    name.push(bump(&mut chars));
                } else {
                    break;
                }
            }
            toks.push(Tok {
                kind: TokKind::Name,
                text: name,
                line: tl,
                col: tc,
            });
            continue;
        }
        let kind = match c {
            '#' => TokKind::Hash,
            '{' => TokKind::LBrace,
            '}' => TokKind::RBrace,
            '(' => TokKind::LParen,
            ')' => TokKind::RParen,
            ';' => TokKind::Semi,
            ',' => TokKind::Comma,
            '.' => TokKind::Dot,
            ':' => TokKind::Colon,
            '=' => TokKind::Eq,
            '-' => {
                bump(&mut chars);
                if chars.peek() == Some(&'>') {
                    bump(&mut chars);
                    toks.push(Tok {
                        kind: TokKind::Arrow,
                        text: "->".into(),
                        line: tl,
                        col: tc,
                    });
                    continue;
                }
                return Err(ParseError::new(tl, tc, "expected `->`"));
            }
            '<' => {
                bump(&mut chars);
                if chars.peek() == Some(&'-') {
                    bump(&mut chars);
                    toks.push(Tok {
                        kind: TokKind::BackArrow,
                        text: "<-".into(),
                        line: tl,
                        col: tc,
                    });
                    continue;
                }
                return Err(ParseError::new(tl, tc, "expected `<-`"));
            }
            other => {
                return Err(ParseError::new(tl, tc, format!("unexpected character `{other}`")));
            }
        };
        let text = bump(&mut chars).to_string();
        toks.push(Tok {
            kind,
            text,
            line: tl,
            col: tc,
        });
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn at_name(&self, text: &str) -> bool {
        matches!(self.peek(), Some(t) if t.kind == TokKind::Name && t.text == text)
    }

    fn err_here(&self, message: impl Into<String>) -> ParseError {
        match self.peek() {
            Some(t) => ParseError::new(t.line, t.col, message),
            None => {
                let (l, c) = self
                    .toks
                    .last()
                    .map(|t| (t.line, t.col + t.text.len()))
                    .unwrap_or((1, 1));
                ParseError::new(l, c, message)
            }
        }
    }

    fn next(&mut self) -> Result<Tok, ParseError> {
        let t = self
            .peek()
            .cloned()
            .ok_or_else(|| self.err_here("unexpected end of input"))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, kind: TokKind, what: &str) -> Result<Tok, ParseError> {
        match self.peek() {
            Some(t) if t.kind == kind => self.next(),
            _ => Err(self.err_here(format!("expected {what}"))),
        }
    }

    fn expect_keyword(&mut self, word: &str) -> Result<(), ParseError> {
        if self.at_name(word) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err_here(format!("expected `{word}`")))
        }
    }

    fn name(&mut self, what: &str) -> Result<Tok, ParseError> {
        self.expect(TokKind::Name, what)
    }

    fn eat(&mut self, kind: TokKind) -> bool {
        if matches!(self.peek(), Some(t) if t.kind == kind) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn done(&self) -> bool {
        self.pos >= self.toks.len()
    }
}

const KEYWORDS: &[&str] = &["class", "extends", "main", "new", "return"];
/// Column names claimed by the two mapping mechanisms, plus the predefined
/// setter; none may be used as a field name.
const RESERVED_FIELDS: &[&str] = &["id", "time", "set"];

fn check_decl_name(tok: &Tok, what: &str) -> Result<(), ParseError> {
    if KEYWORDS.contains(&tok.text.as_str()) {
        return Err(ParseError::new(
            tok.line,
            tok.col,
            format!("keyword `{}` cannot be used as a {what}", tok.text),
        ));
    }
    Ok(())
}

/// Parses a program: class declarations followed by a `main { e }` block.
pub fn parse_program(text: &str) -> Result<(ClassTable, Expr), ParseError> {
    let toks = tokenize(text, 1)?;
    let mut p = Parser { toks, pos: 0 };
    let mut classes: Vec<ClassDecl> = Vec::new();
    while p.at_name("class") {
        classes.push(parse_class(&mut p)?);
    }
    p.expect_keyword("main")?;
    p.expect(TokKind::LBrace, "`{`")?;
    let main = parse_expr(&mut p)?;
    p.expect(TokKind::RBrace, "`}`")?;
    if !p.done() {
        return Err(p.err_here("trailing input after `main` block"));
    }
    let ct = ClassTable::from_decls(classes);
    validate_class_table(&ct)?;
    Ok((ct, main))
}

fn parse_class(p: &mut Parser) -> Result<ClassDecl, ParseError> {
    p.expect_keyword("class")?;
    let name_tok = p.name("class name")?;
    check_decl_name(&name_tok, "class name")?;
    p.expect_keyword("extends")?;
    let super_tok = p.name("superclass name")?;
    check_decl_name(&super_tok, "class name")?;
    p.expect(TokKind::LBrace, "`{`")?;
    let mut fields = Vec::new();
    let mut methods = Vec::new();
    loop {
        if p.eat(TokKind::RBrace) {
            break;
        }
        let ty = p.name("field or method declaration")?;
        check_decl_name(&ty, "type name")?;
        let name = p.name("declaration name")?;
        check_decl_name(&name, "member name")?;
        if p.eat(TokKind::Semi) {
            if RESERVED_FIELDS.contains(&name.text.as_str()) {
                return Err(ParseError::new(
                    name.line,
                    name.col,
                    format!("`{}` is reserved and cannot be a field name", name.text),
                ));
            }
            if !methods.is_empty() {
                return Err(ParseError::new(
                    name.line,
                    name.col,
                    "fields must be declared before methods",
                ));
            }
            fields.push((ClassName(ty.text), name.text));
            continue;
        }
        if name.text == "set" {
            return Err(ParseError::new(
                name.line,
                name.col,
                "`set` is predefined and cannot be declared",
            ));
        }
        p.expect(TokKind::LParen, "`(`")?;
        let mut params = Vec::new();
        if !p.eat(TokKind::RParen) {
            loop {
                let pt = p.name("parameter type")?;
                check_decl_name(&pt, "type name")?;
                let pn = p.name("parameter name")?;
                check_decl_name(&pn, "parameter name")?;
                params.push((ClassName(pt.text), pn.text));
                if p.eat(TokKind::RParen) {
                    break;
                }
                p.expect(TokKind::Comma, "`,` or `)`")?;
            }
        }
        p.expect(TokKind::LBrace, "`{`")?;
        p.expect_keyword("return")?;
        let body = parse_expr(p)?;
        p.expect(TokKind::Semi, "`;`")?;
        p.expect(TokKind::RBrace, "`}`")?;
        {
            let mut seen = Vec::new();
            for (_, pn) in &params {
                if seen.contains(&pn) {
                    return Err(ParseError::new(
                        name.line,
                        name.col,
                        format!("duplicate parameter `{pn}` in method `{}`", name.text),
                    ));
                }
                seen.push(pn);
            }
        }
        methods.push(MethodDecl {
            return_type: ClassName(ty.text),
            name: name.text,
            params,
            body,
        });
    }
    let decl = ClassDecl {
        name: ClassName(name_tok.text.clone()),
        superclass: ClassName(super_tok.text),
        fields,
        methods,
    };
    let mut seen = Vec::new();
    for f in decl.field_names() {
        if seen.contains(&f) {
            return Err(ParseError::new(
                name_tok.line,
                name_tok.col,
                format!("duplicate field `{f}` in class `{}`", decl.name),
            ));
        }
        seen.push(f);
    }
    let mut seen = Vec::new();
    for m in &decl.methods {
        if seen.contains(&&m.name) {
            return Err(ParseError::new(
                name_tok.line,
                name_tok.col,
                format!("duplicate method `{}` in class `{}`", m.name, decl.name),
            ));
        }
        seen.push(&m.name);
    }
    Ok(decl)
}

fn parse_expr(p: &mut Parser) -> Result<Expr, ParseError> {
    let mut e = parse_primary(p)?;
    while p.eat(TokKind::Dot) {
        let name = p.name("field or method name")?;
        if p.eat(TokKind::LParen) {
            let mut args = Vec::new();
            if !p.eat(TokKind::RParen) {
                loop {
                    args.push(parse_expr(p)?);
                    if p.eat(TokKind::RParen) {
                        break;
                    }
                    p.expect(TokKind::Comma, "`,` or `)`")?;
                }
            }
            e = if name.text == "set" {
                Expr::Set(Box::new(e), args)
            } else {
                Expr::Call(Box::new(e), name.text, args)
            };
        } else {
            if name.text == "set" {
                return Err(ParseError::new(name.line, name.col, "`set` requires arguments"));
            }
            e = Expr::Field(Box::new(e), name.text);
        }
    }
    Ok(e)
}

fn parse_primary(p: &mut Parser) -> Result<Expr, ParseError> {
    if p.eat(TokKind::Hash) {
        let id = p.name("identifier")?;
        return Ok(Expr::Raw(Ident(id.text)));
    }
    if p.at_name("new") {
        p.pos += 1;
        let class = p.name("class name")?;
        check_decl_name(&class, "class name")?;
        p.expect(TokKind::LParen, "`(`")?;
        p.expect(TokKind::Hash, "`#` identifier key")?;
        let key = p.name("identifier")?;
        let mut args = Vec::new();
        while !p.eat(TokKind::RParen) {
            p.expect(TokKind::Comma, "`,` or `)`")?;
            args.push(parse_expr(p)?);
        }
        return Ok(Expr::New(ClassName(class.text), Ident(key.text), args));
    }
    let t = p.name("expression")?;
    check_decl_name(&t, "variable")?;
    Ok(Expr::Var(t.text))
}

fn validate_class_table(ct: &ClassTable) -> Result<(), ParseError> {
    let mut seen: Vec<&ClassName> = Vec::new();
    for decl in ct.iter() {
        if decl.name.is_object() {
            return Err(ParseError::new(1, 1, "`Object` cannot be declared"));
        }
        if seen.contains(&&decl.name) {
            return Err(ParseError::new(
                1,
                1,
                format!("duplicate class `{}`", decl.name),
            ));
        }
        seen.push(&decl.name);
    }
    for decl in ct.iter() {
        if !decl.superclass.is_object() && !ct.contains(&decl.superclass) {
            return Err(ParseError::new(
                1,
                1,
                format!(
                    "class `{}` extends unknown class `{}`",
                    decl.name, decl.superclass
                ),
            ));
        }
    }
    // Walk each inheritance chain; a chain longer than the table is a cycle.
    for decl in ct.iter() {
        let mut cur = &decl.superclass;
        let mut hops = 0;
        while !cur.is_object() {
            hops += 1;
            if hops > ct.len() {
                return Err(ParseError::new(
                    1,
                    1,
                    format!("inheritance cycle through class `{}`", decl.name),
                ));
            }
            cur = &ct.get(cur).expect("superclass checked above").superclass;
        }
    }
    Ok(())
}

/// Parses an evolution script, one operation per nonempty line.
pub fn parse_evolution_script(text: &str) -> Result<Vec<EvolutionOp>, ParseError> {
    let mut ops = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let toks = tokenize(raw_line, line_no)?;
        let mut p = Parser { toks, pos: 0 };
        let op_tok = p.name("operation name")?;
        let op = match op_tok.text.as_str() {
            "NewClass" => parse_new_class(&mut p)?,
            "RenameClass" => {
                let from = p.name("class name")?;
                p.expect(TokKind::Arrow, "`->`")?;
                let to = p.name("class name")?;
                EvolutionOp::RenameClass {
                    from: ClassName(from.text),
                    to: ClassName(to.text),
                }
            }
            "RenameField" => {
                let class = p.name("class name")?;
                p.expect(TokKind::LBrace, "`{`")?;
                let mut olds = Vec::new();
                let mut news = Vec::new();
                loop {
                    let o = p.name("field name")?;
                    p.expect(TokKind::Arrow, "`->`")?;
                    let n = p.name("field name")?;
                    olds.push(o.text);
                    news.push(n.text);
                    if p.eat(TokKind::RBrace) {
                        break;
                    }
                    p.expect(TokKind::Comma, "`,` or `}`")?;
                }
                EvolutionOp::RenameField {
                    class: ClassName(class.text),
                    olds,
                    news,
                }
            }
            "AddField" => {
                let class = p.name("class name")?;
                p.expect(TokKind::LBrace, "`{`")?;
                let mut fields = Vec::new();
                let mut defaults = Vec::new();
                loop {
                    let ty = p.name("field type")?;
                    let name = p.name("field name")?;
                    p.expect(TokKind::Eq, "`=`")?;
                    p.expect(TokKind::Hash, "`#` default identifier")?;
                    let d = p.name("identifier")?;
                    defaults.push(AnnotatedIdent {
                        id: Ident(d.text),
                        class: ClassName(ty.text.clone()),
                    });
                    fields.push((ClassName(ty.text), name.text));
                    if p.eat(TokKind::RBrace) {
                        break;
                    }
                    p.expect(TokKind::Comma, "`,` or `}`")?;
                }
                EvolutionOp::AddField {
                    class: ClassName(class.text),
                    fields,
                    defaults,
                }
            }
            "DeleteField" => {
                let class = p.name("class name")?;
                p.expect(TokKind::LBrace, "`{`")?;
                let mut names = Vec::new();
                loop {
                    names.push(p.name("field name")?.text);
                    if p.eat(TokKind::RBrace) {
                        break;
                    }
                    p.expect(TokKind::Comma, "`,` or `}`")?;
                }
                EvolutionOp::DeleteField {
                    class: ClassName(class.text),
                    names,
                }
            }
            "ChangeFieldType" => {
                let class = p.name("class name")?;
                p.expect(TokKind::LBrace, "`{`")?;
                let mut names = Vec::new();
                let mut new_types = Vec::new();
                loop {
                    let n = p.name("field name")?;
                    p.expect(TokKind::Colon, "`:`")?;
                    let t = p.name("type name")?;
                    names.push(n.text);
                    new_types.push(ClassName(t.text));
                    if p.eat(TokKind::RBrace) {
                        break;
                    }
                    p.expect(TokKind::Comma, "`,` or `}`")?;
                }
                EvolutionOp::ChangeFieldType {
                    class: ClassName(class.text),
                    names,
                    new_types,
                }
            }
            "NewSupClass" => {
                let class = p.name("class name")?;
                p.expect(TokKind::Arrow, "`->`")?;
                let superclass = p.name("class name")?;
                p.expect(TokKind::LBrace, "`{`")?;
                let mut extracted = Vec::new();
                loop {
                    extracted.push(p.name("field name")?.text);
                    if p.eat(TokKind::RBrace) {
                        break;
                    }
                    p.expect(TokKind::Comma, "`,` or `}`")?;
                }
                EvolutionOp::NewSupClass {
                    class: ClassName(class.text),
                    superclass: ClassName(superclass.text),
                    extracted,
                }
            }
            "MergeClass" => {
                let class = p.name("class name")?;
                p.expect(TokKind::BackArrow, "`<-`")?;
                let merged = p.name("class name")?;
                EvolutionOp::MergeClass {
                    class: ClassName(class.text),
                    merged: ClassName(merged.text),
                }
            }
            "DeleteClass" => {
                return Err(ParseError::new(
                    op_tok.line,
                    op_tok.col,
                    "DeleteClass is internal and cannot appear in a script",
                ));
            }
            other => {
                return Err(ParseError::new(
                    op_tok.line,
                    op_tok.col,
                    format!("unknown operation `{other}`"),
                ));
            }
        };
        if !p.done() {
            return Err(p.err_here("trailing input after operation"));
        }
        ops.push(op);
    }
    Ok(ops)
}

fn parse_new_class(p: &mut Parser) -> Result<EvolutionOp, ParseError> {
    let class = p.name("class name")?;
    p.expect_keyword("extends")?;
    let superclass = p.name("class name")?;
    p.expect(TokKind::LBrace, "`{`")?;
    let mut fields = Vec::new();
    if !p.eat(TokKind::RBrace) {
        loop {
            let ty = p.name("field type")?;
            let name = p.name("field name")?;
            fields.push((ClassName(ty.text), name.text));
            if p.eat(TokKind::RBrace) {
                break;
            }
            p.expect(TokKind::Comma, "`,` or `}`")?;
        }
    }
    Ok(EvolutionOp::NewClass {
        class: ClassName(class.text),
        superclass: ClassName(superclass.text),
        fields,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let (ct, main) = parse_program("class Bool extends Object {} main { #t }").unwrap();
        assert_eq!(ct.len(), 1);
        assert!(ct.contains(&ClassName::new("Bool")));
        assert_eq!(main, Expr::raw("t"));
    }

    #[test]
    fn login_status_class() {
        let src = "class LoginStatus extends Object { Bool status; } main { #t }";
        let (ct, _) = parse_program(src).unwrap();
        let decl = ct.get(&ClassName::new("LoginStatus")).unwrap();
        assert_eq!(decl.fields, vec![(ClassName::new("Bool"), "status".to_string())]);
    }

    #[test]
    fn self_cycle_rejected() {
        let err = parse_program("class C extends C {} main { #t }").unwrap_err();
        assert!(err.message.contains("cycle"), "{err}");
    }

    #[test]
    fn mutual_cycle_rejected() {
        let err =
            parse_program("class C extends D {} class D extends C {} main { #t }").unwrap_err();
        assert!(err.message.contains("cycle"), "{err}");
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(parse_program("class C extends Object {} class C extends Object {} main { #t }")
            .is_err());
        assert!(parse_program("class C extends Object { V f; V f; } main { #t }").is_err());
        assert!(parse_program(
            "class C extends Object { C m() { return this; } C m() { return this; } } main { #t }"
        )
        .is_err());
    }

    #[test]
    fn expressions_parse() {
        let (_, main) = parse_program(
            "main { new LoginStatus(#kamina, #t).set(#t2).status }",
        )
        .unwrap();
        let expected = Expr::new_obj("LoginStatus", "kamina", vec![Expr::raw("t")])
            .set_call(vec![Expr::raw("t2")])
            .field("status");
        assert_eq!(main, expected);
    }

    #[test]
    fn method_call_vs_field() {
        let (_, main) = parse_program("main { #x.m(#y).f }").unwrap();
        assert_eq!(
            main,
            Expr::raw("x").call("m", vec![Expr::raw("y")]).field("f")
        );
    }

    #[test]
    fn reserved_field_names_rejected() {
        assert!(parse_program("class C extends Object { V id; } main { #t }").is_err());
        assert!(parse_program("class C extends Object { V time; } main { #t }").is_err());
    }

    #[test]
    fn set_method_declaration_rejected() {
        assert!(
            parse_program("class C extends Object { C set() { return this; } } main { #t }")
                .is_err()
        );
    }

    #[test]
    fn script_rename_field() {
        let ops = parse_evolution_script("RenameField LoginStatus { status -> active }").unwrap();
        assert_eq!(
            ops,
            vec![EvolutionOp::RenameField {
                class: ClassName::new("LoginStatus"),
                olds: vec!["status".into()],
                news: vec!["active".into()],
            }]
        );
    }

    #[test]
    fn script_new_sup_class() {
        let ops = parse_evolution_script("NewSupClass C -> D { b }").unwrap();
        assert_eq!(
            ops,
            vec![EvolutionOp::NewSupClass {
                class: ClassName::new("C"),
                superclass: ClassName::new("D"),
                extracted: vec!["b".into()],
            }]
        );
    }

    #[test]
    fn script_delete_class_rejected() {
        let err = parse_evolution_script("DeleteClass C").unwrap_err();
        assert!(err.message.contains("internal"), "{err}");
    }

    #[test]
    fn script_unknown_op() {
        assert!(parse_evolution_script("Frobnicate C").is_err());
    }

    #[test]
    fn script_multi_line() {
        let ops = parse_evolution_script(
            "RenameClass C -> D\n\nAddField D { V g = #d }\nMergeClass X <- Y\n",
        )
        .unwrap();
        assert_eq!(ops.len(), 3);
        assert_eq!(
            ops[1],
            EvolutionOp::AddField {
                class: ClassName::new("D"),
                fields: vec![(ClassName::new("V"), "g".into())],
                defaults: vec![AnnotatedIdent::new("d", "V")],
            }
        );
    }

    #[test]
    fn script_round_trips_through_display() {
        let text = "NewClass C extends Object { V a, V b }\nRenameClass C -> D\nRenameField D { a -> x }\nAddField D { V g = #d }\nDeleteField D { x }\nChangeFieldType D { b : W }\nNewSupClass D -> E { b }\nMergeClass D <- E";
        let ops = parse_evolution_script(text).unwrap();
        let printed = ops
            .iter()
            .map(|o| o.to_string())
            .collect::<Vec<_>>()
            .join("\n");
        assert_eq!(parse_evolution_script(&printed).unwrap(), ops);
    }
}
