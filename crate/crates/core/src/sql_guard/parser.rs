//! Recursive-descent parser for the admitted subset.
//!
//! Operator precedence follows SQLite's: OR < AND < NOT < equality-class
//! (`=`, `!=`, `IS`, `IN`, `LIKE`, `BETWEEN`) < relational < additive <
//! multiplicative < `||` < unary.

use super::ast::{Expr, FuncArgs, Ident, OrderTerm, Select, SelectItem, Statement, Update};
use super::lexer::{Tok, Token};
use super::GuardError;
use crate::label::ProgramLabel;

const TABLE: &str = "pub";
const UPDATABLE_COLUMN: &str = "prog";

const RESERVED: &[&str] = &[
    "ALL", "ALTER", "AND", "AS", "ASC", "ATTACH", "BETWEEN", "BY", "CASE", "CAST", "COLLATE",
    "CREATE", "CROSS", "DELETE", "DESC", "DETACH", "DISTINCT", "DROP", "ELSE", "END", "ESCAPE",
    "EXCEPT", "EXISTS", "FROM", "FULL", "GLOB", "GROUP", "HAVING", "IN", "INNER", "INSERT",
    "INTERSECT", "INTO", "IS", "JOIN", "LEFT", "LIKE", "LIMIT", "MATCH", "NATURAL", "NOT", "NULL",
    "OFFSET", "ON", "OR", "ORDER", "OUTER", "PRAGMA", "REGEXP", "REPLACE", "RETURNING", "RIGHT",
    "SELECT", "SET", "THEN", "UNION", "UPDATE", "USING", "VALUES", "WHEN", "WHERE", "WITH",
];

/// Functions that may appear in a guarded statement, with (min, max) arity.
const FUNCTIONS: &[(&str, usize, usize)] = &[
    ("COUNT", 1, 1),
    ("SUM", 1, 1),
    ("AVG", 1, 1),
    ("MIN", 1, usize::MAX),
    ("MAX", 1, usize::MAX),
    ("LOWER", 1, 1),
    ("UPPER", 1, 1),
    ("LENGTH", 1, 1),
];

fn is_reserved(word: &str) -> bool {
    RESERVED.iter().any(|r| r.eq_ignore_ascii_case(word))
}

type PResult<T> = Result<T, GuardError>;

pub(crate) struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    end: usize,
    qualifiers: Vec<(String, usize)>,
}

impl<'a> Parser<'a> {
    /// `end` is the character offset reported for errors at end of input.
    pub fn new(tokens: &'a [Token], end: usize) -> Self {
        Self {
            tokens,
            pos: 0,
            end,
            qualifiers: Vec::new(),
        }
    }

    pub fn parse_statement(mut self) -> PResult<Statement> {
        let statement = if self.at_word("SELECT") {
            let select = self.select()?;
            self.check_qualifiers(select.alias.as_ref())?;
            Statement::Select(select)
        } else if self.at_word("UPDATE") {
            let update = self.update()?;
            self.check_qualifiers(None)?;
            Statement::Update(update)
        } else {
            return Err(self.error("expected SELECT or UPDATE"));
        };
        if self.peek().is_some() {
            return Err(self.error("unexpected trailing input"));
        }
        Ok(statement)
    }

    fn check_qualifiers(&self, alias: Option<&Ident>) -> PResult<()> {
        let alias = alias.map(Ident::lower);
        for (qualifier, _) in &self.qualifiers {
            if qualifier != TABLE && Some(qualifier) != alias.as_ref() {
                return Err(GuardError::ForbiddenTable(qualifier.clone()));
            }
        }
        Ok(())
    }

    // -- token helpers ------------------------------------------------------

    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, offset: usize) -> Option<&'a Token> {
        self.tokens.get(self.pos + offset)
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.end, |t| t.pos)
    }

    fn error(&self, message: impl Into<String>) -> GuardError {
        let message = message.into();
        match self.peek() {
            Some(tok) => GuardError::syntax(tok.pos, format!("{message} near {}", describe(&tok.tok))),
            None => GuardError::syntax(self.end, format!("{message} at end of input")),
        }
    }

    fn at_word(&self, kw: &str) -> bool {
        self.peek().is_some_and(|t| t.is_word(kw))
    }

    fn at_sym(&self, sym: &str) -> bool {
        self.peek().is_some_and(|t| t.is_sym(sym))
    }

    fn eat_word(&mut self, kw: &str) -> bool {
        let hit = self.at_word(kw);
        if hit {
            self.pos += 1;
        }
        hit
    }

    fn eat_sym(&mut self, sym: &str) -> bool {
        let hit = self.at_sym(sym);
        if hit {
            self.pos += 1;
        }
        hit
    }

    fn expect_word(&mut self, kw: &str) -> PResult<()> {
        if self.eat_word(kw) {
            Ok(())
        } else {
            Err(self.error(format!("expected {kw}")))
        }
    }

    fn expect_sym(&mut self, sym: &str) -> PResult<()> {
        if self.eat_sym(sym) {
            Ok(())
        } else {
            Err(self.error(format!("expected '{sym}'")))
        }
    }

    fn ident(&mut self) -> PResult<Ident> {
        match self.peek().map(|t| &t.tok) {
            Some(Tok::Word(w)) if !is_reserved(w) => {
                self.pos += 1;
                Ok(Ident::Bare(w.clone()))
            }
            Some(Tok::QuotedIdent(q)) => {
                self.pos += 1;
                Ok(Ident::Quoted(q.clone()))
            }
            _ => Err(self.error("expected identifier")),
        }
    }

    /// An alias introduced by `AS`, or a bare non-reserved word.
    fn optional_alias(&mut self) -> PResult<Option<Ident>> {
        if self.eat_word("AS") {
            return self.ident().map(Some);
        }
        match self.peek().map(|t| &t.tok) {
            Some(Tok::Word(w)) if !is_reserved(w) => {
                self.pos += 1;
                Ok(Some(Ident::Bare(w.clone())))
            }
            _ => Ok(None),
        }
    }

    fn table_name(&mut self) -> PResult<Ident> {
        let table = self.ident()?;
        if self.at_sym(".") {
            let mut qualified = table.lower();
            while self.eat_sym(".") {
                qualified.push('.');
                qualified.push_str(&self.ident()?.lower());
            }
            return Err(GuardError::ForbiddenTable(qualified));
        }
        if table.lower() != TABLE {
            return Err(GuardError::ForbiddenTable(table.lower()));
        }
        Ok(table)
    }

    // -- statements ---------------------------------------------------------

    fn select(&mut self) -> PResult<Select> {
        self.expect_word("SELECT")?;
        let distinct = self.eat_word("DISTINCT");
        if !distinct {
            self.eat_word("ALL");
        }
        let mut items = vec![self.select_item()?];
        while self.eat_sym(",") {
            items.push(self.select_item()?);
        }
        self.expect_word("FROM")?;
        let table = self.table_name()?;
        let alias = self.optional_alias()?;
        if self.eat_sym(",") {
            let other = self.ident()?;
            if other.lower() != TABLE {
                return Err(GuardError::ForbiddenTable(other.lower()));
            }
            return Err(self.error("joins are not supported"));
        }
        for join_word in ["JOIN", "INNER", "LEFT", "RIGHT", "FULL", "CROSS", "NATURAL"] {
            if self.at_word(join_word) {
                return Err(self.error("joins are not supported"));
            }
        }
        let filter = if self.eat_word("WHERE") {
            Some(self.expr()?)
        } else {
            None
        };
        let mut group_by = Vec::new();
        let mut having = None;
        if self.eat_word("GROUP") {
            self.expect_word("BY")?;
            group_by.push(self.expr()?);
            while self.eat_sym(",") {
                group_by.push(self.expr()?);
            }
            if self.eat_word("HAVING") {
                having = Some(self.expr()?);
            }
        }
        let mut order_by = Vec::new();
        if self.eat_word("ORDER") {
            self.expect_word("BY")?;
            loop {
                let expr = self.expr()?;
                let descending = if self.eat_word("DESC") {
                    Some(true)
                } else if self.eat_word("ASC") {
                    Some(false)
                } else {
                    None
                };
                order_by.push(OrderTerm { expr, descending });
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        let mut limit = None;
        let mut offset = None;
        if self.eat_word("LIMIT") {
            limit = Some(self.integer_literal()?);
            if self.eat_word("OFFSET") {
                offset = Some(self.integer_literal()?);
            }
        }
        Ok(Select {
            distinct,
            items,
            table,
            alias,
            filter,
            group_by,
            having,
            order_by,
            limit,
            offset,
        })
    }

    fn select_item(&mut self) -> PResult<SelectItem> {
        if self.eat_sym("*") {
            return Ok(SelectItem::Star);
        }
        let expr = self.expr()?;
        let alias = self.optional_alias()?;
        Ok(SelectItem::Expr { expr, alias })
    }

    fn integer_literal(&mut self) -> PResult<Expr> {
        match self.peek().map(|t| &t.tok) {
            Some(Tok::Number(n)) if n.bytes().all(|b| b.is_ascii_digit()) => {
                self.pos += 1;
                Ok(Expr::Number(n.clone()))
            }
            _ => Err(self.error("expected a non-negative integer")),
        }
    }

    fn update(&mut self) -> PResult<Update> {
        self.expect_word("UPDATE")?;
        if self.at_word("OR") {
            return Err(self.error("conflict clauses are not supported"));
        }
        let table = self.table_name()?;
        self.expect_word("SET")?;
        let mut assignments = Vec::new();
        loop {
            let column = self.ident()?;
            if self.at_sym(".") {
                return Err(self.error("qualified assignment targets are not supported"));
            }
            self.expect_sym("=")?;
            let value = self.expr()?;
            assignments.push((column, value));
            if !self.eat_sym(",") {
                break;
            }
        }
        if let Some((column, _)) = assignments
            .iter()
            .find(|(c, _)| c.lower() != UPDATABLE_COLUMN)
        {
            return Err(GuardError::ForbiddenColumn(column.lower()));
        }
        if assignments.len() > 1 {
            return Err(GuardError::syntax(
                self.here(),
                "prog is assigned more than once",
            ));
        }
        let (column, value) = assignments.remove(0);
        match &value {
            Expr::Str(s) if s.parse::<ProgramLabel>().is_ok() => {}
            Expr::Str(s) => return Err(GuardError::InvalidLabel(s.clone())),
            other => return Err(GuardError::InvalidLabel(other.to_string())),
        }
        if self.peek().is_none() {
            return Err(self.error("UPDATE requires a WHERE clause"));
        }
        self.expect_word("WHERE")?;
        let filter = self.expr()?;
        Ok(Update {
            table,
            column,
            value,
            filter,
        })
    }

    // -- expressions --------------------------------------------------------

    pub fn expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.and_expr()?;
        while self.eat_word("OR") {
            let rhs = self.and_expr()?;
            lhs = binary("OR", lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.not_expr()?;
        while self.eat_word("AND") {
            let rhs = self.not_expr()?;
            lhs = binary("AND", lhs, rhs);
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> PResult<Expr> {
        if self.eat_word("NOT") {
            let expr = self.not_expr()?;
            return Ok(Expr::Unary {
                op: "NOT",
                expr: Box::new(expr),
            });
        }
        self.equality()
    }

    fn equality(&mut self) -> PResult<Expr> {
        let mut lhs = self.relational()?;
        loop {
            if let Some(op) = ["=", "==", "!=", "<>"].into_iter().find(|s| self.at_sym(s)) {
                self.pos += 1;
                let rhs = self.relational()?;
                lhs = binary(op, lhs, rhs);
                continue;
            }
            if self.eat_word("IS") {
                let negated = self.eat_word("NOT");
                self.expect_word("NULL")?;
                lhs = Expr::IsNull {
                    expr: Box::new(lhs),
                    negated,
                };
                continue;
            }
            let negated = self.at_word("NOT")
                && self
                    .peek_at(1)
                    .is_some_and(|t| t.is_word("LIKE") || t.is_word("IN") || t.is_word("BETWEEN"));
            if negated {
                self.pos += 1;
            }
            if self.eat_word("LIKE") {
                let pattern = self.relational()?;
                if self.at_word("ESCAPE") {
                    return Err(self.error("ESCAPE is not supported"));
                }
                lhs = Expr::Like {
                    expr: Box::new(lhs),
                    pattern: Box::new(pattern),
                    negated,
                };
            } else if self.eat_word("IN") {
                self.expect_sym("(")?;
                if self.at_word("SELECT") {
                    return Err(self.error("subqueries are not supported"));
                }
                let mut list = vec![self.expr()?];
                while self.eat_sym(",") {
                    list.push(self.expr()?);
                }
                self.expect_sym(")")?;
                lhs = Expr::InList {
                    expr: Box::new(lhs),
                    list,
                    negated,
                };
            } else if self.eat_word("BETWEEN") {
                let low = self.relational()?;
                self.expect_word("AND")?;
                let high = self.relational()?;
                lhs = Expr::Between {
                    expr: Box::new(lhs),
                    low: Box::new(low),
                    high: Box::new(high),
                    negated,
                };
            } else {
                return Ok(lhs);
            }
        }
    }

    fn relational(&mut self) -> PResult<Expr> {
        let mut lhs = self.additive()?;
        while let Some(op) = ["<=", ">=", "<", ">"].into_iter().find(|s| self.at_sym(s)) {
            self.pos += 1;
            let rhs = self.additive()?;
            lhs = binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn additive(&mut self) -> PResult<Expr> {
        let mut lhs = self.multiplicative()?;
        while let Some(op) = ["+", "-"].into_iter().find(|s| self.at_sym(s)) {
            self.pos += 1;
            let rhs = self.multiplicative()?;
            lhs = binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn multiplicative(&mut self) -> PResult<Expr> {
        let mut lhs = self.concat()?;
        while let Some(op) = ["*", "/", "%"].into_iter().find(|s| self.at_sym(s)) {
            self.pos += 1;
            let rhs = self.concat()?;
            lhs = binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn concat(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        while self.eat_sym("||") {
            let rhs = self.unary()?;
            lhs = binary("||", lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        for op in ["-", "+"] {
            if self.eat_sym(op) {
                let expr = self.unary()?;
                return Ok(Expr::Unary {
                    op,
                    expr: Box::new(expr),
                });
            }
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        let Some(token) = self.peek() else {
            return Err(self.error("expected expression"));
        };
        match &token.tok {
            Tok::Number(n) => {
                self.pos += 1;
                Ok(Expr::Number(n.clone()))
            }
            Tok::Str(s) => {
                self.pos += 1;
                Ok(Expr::Str(s.clone()))
            }
            Tok::Sym("(") => {
                self.pos += 1;
                if self.at_word("SELECT") {
                    return Err(self.error("subqueries are not supported"));
                }
                let inner = self.expr()?;
                self.expect_sym(")")?;
                Ok(Expr::Nested(Box::new(inner)))
            }
            Tok::Word(w) if w.eq_ignore_ascii_case("NULL") => {
                self.pos += 1;
                Ok(Expr::Null)
            }
            Tok::Word(w) if self.peek_at(1).is_some_and(|t| t.is_sym("(")) => {
                let name = w.clone();
                self.function(&name, token.pos)
            }
            Tok::Word(_) | Tok::QuotedIdent(_) => self.column(),
            _ => Err(self.error("expected expression")),
        }
    }

    fn column(&mut self) -> PResult<Expr> {
        let first_pos = self.here();
        let first = self.ident()?;
        if self.eat_sym(".") {
            let name = self.ident()?;
            self.qualifiers.push((first.lower(), first_pos));
            return Ok(Expr::Column {
                qualifier: Some(first),
                name,
            });
        }
        Ok(Expr::Column {
            qualifier: None,
            name: first,
        })
    }

    fn function(&mut self, name: &str, pos: usize) -> PResult<Expr> {
        let Some(&(canonical, min, max)) = FUNCTIONS
            .iter()
            .find(|(f, _, _)| f.eq_ignore_ascii_case(name))
        else {
            return Err(GuardError::syntax(
                pos,
                format!("function {name} is not allowed"),
            ));
        };
        self.pos += 1;
        self.expect_sym("(")?;
        if canonical == "COUNT" && self.eat_sym("*") {
            self.expect_sym(")")?;
            return Ok(Expr::Func {
                name: canonical,
                args: FuncArgs::Star,
            });
        }
        let distinct = self.eat_word("DISTINCT");
        let mut args = Vec::new();
        if !self.at_sym(")") {
            args.push(self.expr()?);
            while self.eat_sym(",") {
                args.push(self.expr()?);
            }
        }
        self.expect_sym(")")?;
        if args.len() < min || args.len() > max || (distinct && args.len() != 1) {
            return Err(GuardError::syntax(
                pos,
                format!("wrong number of arguments to {canonical}"),
            ));
        }
        Ok(Expr::Func {
            name: canonical,
            args: FuncArgs::List { distinct, args },
        })
    }
}

fn binary(op: &'static str, lhs: Expr, rhs: Expr) -> Expr {
    Expr::Binary {
        op,
        lhs: Box::new(lhs),
        rhs: Box::new(rhs),
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Word(w) => format!("'{w}'"),
        Tok::QuotedIdent(q) => format!("\"{q}\""),
        Tok::Str(_) => "string literal".to_string(),
        Tok::Number(n) => format!("'{n}'"),
        Tok::Sym(s) => format!("'{s}'"),
    }
}
