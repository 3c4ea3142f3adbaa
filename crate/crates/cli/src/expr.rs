//! Coefficient expressions in `x` (and `y` for kernels).
//!
//! Grammar, loosest first: `+ -`, `* /`, unary `-`, `^` (right
//! associative, so `-x^2 = -(x^2)` and `2^-1 = 0.5`), then numbers,
//! variables, `pi`, `e`, parentheses and `exp ln sqrt sin cos abs`.

use crate::error::CliError;

#[derive(Debug, Clone)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(fn(f64) -> f64, Box<Node>),
}

#[derive(Debug, Clone)]
pub struct Expr {
    source: String,
    root: Node,
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    vars: &'a [&'a str],
}

const FUNCTIONS: [(&str, fn(f64) -> f64); 6] = [
    ("exp", f64::exp),
    ("ln", f64::ln),
    ("sqrt", f64::sqrt),
    ("sin", f64::sin),
    ("cos", f64::cos),
    ("abs", f64::abs),
];

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn fail<T>(&self, what: &str) -> Result<T, String> {
        Err(format!("{what} at column {}", self.pos + 1))
    }

    fn expr(&mut self) -> Result<Node, String> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek() {
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, String> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek() {
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, String> {
        match self.peek() {
            Some('-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, String> {
        let base = self.atom()?;
        if self.peek() == Some('^') {
            self.pos += 1;
            return Ok(Node::Bin('^', Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, String> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(')') {
                    return self.fail("expected ')'");
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_alphabetic() => self.word(),
            Some(c) => self.fail(&format!("unexpected {c:?}")),
            None => self.fail("unexpected end of expression"),
        }
    }

    fn number(&mut self) -> Result<Node, String> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.chars.get(p.pos).is_some_and(|c| c.is_ascii_digit() || *c == '.') {
                p.pos += 1;
            }
        };
        digits(self);
        if self.chars.get(self.pos).is_some_and(|c| *c == 'e' || *c == 'E') {
            let mark = self.pos;
            self.pos += 1;
            if self.chars.get(self.pos).is_some_and(|c| *c == '+' || *c == '-') {
                self.pos += 1;
            }
            if self.chars.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
                digits(self);
            } else {
                self.pos = mark;
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        match text.parse() {
            Ok(v) => Ok(Node::Num(v)),
            Err(_) => {
                self.pos = start;
                self.fail(&format!("bad number {text:?}"))
            }
        }
    }

    fn word(&mut self) -> Result<Node, String> {
        let start = self.pos;
        while self.chars.get(self.pos).is_some_and(|c| c.is_alphanumeric() || *c == '_') {
            self.pos += 1;
        }
        let name: String = self.chars[start..self.pos].iter().collect();
        if let Some(&(_, f)) = FUNCTIONS.iter().find(|(n, _)| *n == name) {
            if self.peek() != Some('(') {
                return self.fail(&format!("expected '(' after {name}"));
            }
            return Ok(Node::Call(f, Box::new(self.atom()?)));
        }
        if let Some(slot) = self.vars.iter().position(|v| *v == name) {
            return Ok(Node::Var(slot));
        }
        match name.as_str() {
            "pi" => Ok(Node::Num(std::f64::consts::PI)),
            "e" => Ok(Node::Num(std::f64::consts::E)),
            _ => {
                self.pos = start;
                self.fail(&format!("unknown name {name:?} (variables: {:?})", self.vars))
            }
        }
    }
}

fn eval(node: &Node, vars: &[f64]) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::Var(k) => vars[*k],
        Node::Neg(a) => -eval(a, vars),
        Node::Call(f, a) => f(eval(a, vars)),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, vars), eval(b, vars));
            match op {
                '+' => a + b,
                '-' => a - b,
                '*' => a * b,
                '/' => a / b,
                _ => a.powf(b),
            }
        }
    }
}

impl Expr {
    /// Parses `source`; `vars` lists the variable names in slot order.
    pub fn parse(source: &str, vars: &[&str], key: &str) -> Result<Self, CliError> {
        let mut p = Parser {
            chars: source.chars().collect(),
            pos: 0,
            vars,
        };
        let root = p.expr().and_then(|n| match p.peek() {
            None => Ok(n),
            Some(c) => p.fail(&format!("unexpected {c:?}")),
        });
        let root = root.map_err(|e| CliError::input(format!("{key}: cannot parse {source:?}: {e}")))?;
        Ok(Self {
            source: source.to_string(),
            root,
        })
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<f64, CliError> {
        let v = eval(&self.root, &[x, y]);
        if !v.is_finite() {
            return Err(CliError::input(format!("{:?} is not finite at x = {x}, y = {y}", self.source)));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(src: &str, x: f64, y: f64) -> f64 {
        Expr::parse(src, &["x", "y"], "k").unwrap().eval(x, y).unwrap()
    }

    #[test]
    fn precedence() {
        assert_eq!(at("-2^2", 0.0, 0.0), -4.0);
        assert_eq!(at("-(x - 1)^2", 0.0, 0.0), -1.0);
        assert_eq!(at("2^-1", 0.0, 0.0), 0.5);
        assert_eq!(at("2^3^2", 0.0, 0.0), 512.0);
        assert_eq!(at("1 - 2 - 3", 0.0, 0.0), -4.0);
        assert_eq!(at("8 / 4 / 2", 0.0, 0.0), 1.0);
        assert_eq!(at("2 * -x", 3.0, 0.0), -6.0);
        assert_eq!(at("(1 + 2) * 3", 0.0, 0.0), 9.0);
    }

    #[test]
    fn functions_constants_numbers() {
        let v = at("exp(y)/sqrt(4) - ln(1) + abs(-1) + sin(0)*cos(0)", 3.0, 0.0);
        assert!((v - 1.5).abs() < 1e-15);
        assert_eq!(at("y - x", 1.0, 5.0), 4.0);
        assert_eq!(at("1.5e-3 * 2E2", 0.0, 0.0), 0.3);
        assert_eq!(at("2*e", 0.0, 0.0), 2.0 * std::f64::consts::E);
        assert!(Expr::parse("2e", &["x"], "k").is_err());
        assert!((at("cos(pi)", 0.0, 0.0) + 1.0).abs() < 1e-15);
        assert!((at("exp(-(x - 1)^2 / 0.1)", 1.0, 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Expr::parse("z + 1", &["x"], "alpha").is_err());
        assert!(Expr::parse("y", &["x"], "alpha").is_err());
        assert!(Expr::parse("2 *", &["x"], "alpha").is_err());
        assert!(Expr::parse("(1 + x", &["x"], "alpha").is_err());
        assert!(Expr::parse("1 x", &["x"], "alpha").is_err());
        assert!(Expr::parse("exp 1", &["x"], "alpha").is_err());
        assert!(Expr::parse("1/x", &["x"], "alpha").unwrap().eval(0.0, 0.0).is_err());
        match Expr::parse("1 + $", &["x"], "alpha") {
            Err(CliError::Input { message, .. }) => assert!(message.contains("column 5"), "{message}"),
            other => panic!("{other:?}"),
        }
    }
}
