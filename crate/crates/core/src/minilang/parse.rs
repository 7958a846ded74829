use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstructionKind {
    Move,
    Turn,
    Pen,
    Dot,
    Speed,
    Comment,
    FunctionDef,
    Call,
    Await,
    Forever,
    Stop,
    /// Whitespace-only line; a no-op that keeps the one-instruction-per-line
    /// correspondence.
    Blank,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Arg {
    Number(f64),
    Word(String),
    Str(String),
    Symbol(String),
}

impl Arg {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Arg::Number(n) => Some(*n),
            _ => None,
        }
    }
}

/// One parsed source line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub kind: InstructionKind,
    /// Leading-space count; tabs count as two.
    pub indent: usize,
    /// Head word: `fd`, `pen`, the called or defined function name, ...
    pub head: String,
    /// Arguments, or parameter names for a function definition. Comments
    /// carry their text as a single `Str`, unknown lines their raw text.
    pub args: Vec<Arg>,
    /// The source line exactly as written.
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub lines: Vec<Instruction>,
    pub source: String,
}

impl Program {
    /// Renders the instruction lines back into source text.
    pub fn render(&self) -> String {
        let mut out = String::with_capacity(self.source.len());
        for (i, line) in self.lines.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&line.text);
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

/// Lexical tokens of a single line.
#[derive(Clone, Debug, PartialEq)]
pub enum LineToken {
    Ident(String),
    Number(f64),
    Str(String),
    Punct(String),
}

/// Splits a line into tokens. Returns `None` for lexically broken lines
/// (unterminated strings, stray characters).
pub fn tokenize_line(line: &str) -> Option<Vec<LineToken>> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphabetic() || c == '_' || c == '$' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '$')
            {
                i += 1;
            }
            out.push(LineToken::Ident(chars[start..i].iter().collect()));
        } else if c.is_ascii_digit()
            || (c == '-' && i + 1 < chars.len() && chars[i + 1].is_ascii_digit() && number_allowed(&out))
            || (c == '.' && i + 1 < chars.len() && chars[i + 1].is_ascii_digit())
        {
            let start = i;
            i += 1;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            out.push(LineToken::Number(text.parse().ok()?));
        } else if c == '"' || c == '\'' {
            let start = i + 1;
            i += 1;
            while i < chars.len() && chars[i] != c {
                i += 1;
            }
            if i >= chars.len() {
                return None;
            }
            out.push(LineToken::Str(chars[start..i].iter().collect()));
            i += 1;
        } else if c == '-' && i + 1 < chars.len() && chars[i + 1] == '>' {
            out.push(LineToken::Punct("->".into()));
            i += 2;
        } else if "(),=+*/-<>:[]{}".contains(c) {
            out.push(LineToken::Punct(c.to_string()));
            i += 1;
        } else {
            return None;
        }
    }
    Some(out)
}

// A leading '-' is a sign only where a value can start.
fn number_allowed(prev: &[LineToken]) -> bool {
    match prev.last() {
        None => true,
        Some(LineToken::Punct(p)) => p != ")",
        Some(LineToken::Ident(_)) => true,
        _ => false,
    }
}

fn measure_indent(line: &str) -> usize {
    line.chars()
        .take_while(|c| c.is_whitespace())
        .map(|c| if c == '\t' { 2 } else { 1 })
        .sum()
}

fn head_kind(head: &str) -> Option<InstructionKind> {
    Some(match head {
        "fd" | "bk" => InstructionKind::Move,
        "rt" | "lt" => InstructionKind::Turn,
        "pen" => InstructionKind::Pen,
        "dot" => InstructionKind::Dot,
        "speed" => InstructionKind::Speed,
        "await" => InstructionKind::Await,
        "forever" => InstructionKind::Forever,
        "stop" => InstructionKind::Stop,
        _ => return None,
    })
}

fn to_args(tokens: &[LineToken]) -> Vec<Arg> {
    tokens
        .iter()
        .filter_map(|t| match t {
            LineToken::Number(n) => Some(Arg::Number(*n)),
            LineToken::Ident(w) => Some(Arg::Word(w.clone())),
            LineToken::Str(s) => Some(Arg::Str(s.clone())),
            LineToken::Punct(p) if p == "," || p == "(" || p == ")" => None,
            LineToken::Punct(p) => Some(Arg::Symbol(p.clone())),
        })
        .collect()
}

/// `name = (a, b) ->` or `name = ->`; returns the parameter names.
fn function_params(rest: &[LineToken]) -> Option<Vec<Arg>> {
    match rest {
        [LineToken::Punct(eq), LineToken::Punct(arrow)] if eq == "=" && arrow == "->" => Some(vec![]),
        [LineToken::Punct(eq), LineToken::Punct(open), inner @ .., LineToken::Punct(close), LineToken::Punct(arrow)]
            if eq == "=" && open == "(" && close == ")" && arrow == "->" =>
        {
            let mut params = Vec::new();
            for (i, tok) in inner.iter().enumerate() {
                match (i % 2, tok) {
                    (0, LineToken::Ident(name)) => params.push(Arg::Word(name.clone())),
                    (1, LineToken::Punct(p)) if p == "," => {}
                    _ => return None,
                }
            }
            if !inner.is_empty() && inner.len() % 2 == 0 {
                return None;
            }
            Some(params)
        }
        _ => None,
    }
}

fn parse_line(line: &str) -> Instruction {
    let indent = measure_indent(line);
    let body = line.trim();
    let unknown = || Instruction {
        kind: InstructionKind::Unknown,
        indent,
        head: String::new(),
        args: vec![Arg::Str(body.to_string())],
        text: line.to_string(),
    };
    if body.is_empty() {
        return Instruction {
            kind: InstructionKind::Blank,
            indent,
            head: String::new(),
            args: vec![],
            text: line.to_string(),
        };
    }
    if let Some(comment) = body.strip_prefix('#') {
        return Instruction {
            kind: InstructionKind::Comment,
            indent,
            head: "#".into(),
            args: vec![Arg::Str(comment.trim().to_string())],
            text: line.to_string(),
        };
    }
    let Some(tokens) = tokenize_line(body) else {
        return unknown();
    };
    let Some(LineToken::Ident(head)) = tokens.first() else {
        return unknown();
    };
    let rest = &tokens[1..];
    let (kind, args) = if let Some(kind) = head_kind(head) {
        (kind, to_args(rest))
    } else if matches!(rest.first(), Some(LineToken::Punct(p)) if p == "=") {
        match function_params(rest) {
            Some(params) => (InstructionKind::FunctionDef, params),
            None => return unknown(),
        }
    } else {
        (InstructionKind::Call, to_args(rest))
    };
    Instruction {
        kind,
        indent,
        head: head.clone(),
        args,
        text: line.to_string(),
    }
}

/// Parses program source. Never fails: each newline-delimited line yields
/// exactly one instruction.
pub fn parse(text: &str) -> Program {
    Program {
        lines: text.lines().map(parse_line).collect(),
        source: text.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_move() {
        let p = parse("fd 20");
        assert_eq!(p.lines.len(), 1);
        assert_eq!(p.lines[0].kind, InstructionKind::Move);
        assert_eq!(p.lines[0].args, vec![Arg::Number(20.0)]);
    }

    #[test]
    fn empty_source_has_no_lines() {
        assert!(parse("").lines.is_empty());
    }

    #[test]
    fn comment_then_pen() {
        let p = parse("# snowman body\npen red");
        assert_eq!(p.lines[0].kind, InstructionKind::Comment);
        assert_eq!(p.lines[0].args, vec![Arg::Str("snowman body".into())]);
        assert_eq!(p.lines[1].kind, InstructionKind::Pen);
        assert_eq!(p.lines[1].args, vec![Arg::Word("red".into())]);
    }

    #[test]
    fn indented_comment_is_comment() {
        let p = parse("   # note");
        assert_eq!(p.lines[0].kind, InstructionKind::Comment);
        assert_eq!(p.lines[0].indent, 3);
    }

    #[test]
    fn function_definitions() {
        let p = parse("petal = (c, n) ->\nhop = ->\nbad = (c n) ->\nx = 5");
        assert_eq!(p.lines[0].kind, InstructionKind::FunctionDef);
        assert_eq!(p.lines[0].head, "petal");
        assert_eq!(p.lines[0].args, vec![Arg::Word("c".into()), Arg::Word("n".into())]);
        assert_eq!(p.lines[1].kind, InstructionKind::FunctionDef);
        assert!(p.lines[1].args.is_empty());
        assert_eq!(p.lines[2].kind, InstructionKind::Unknown);
        assert_eq!(p.lines[3].kind, InstructionKind::Unknown);
    }

    #[test]
    fn calls_awaits_and_unknowns() {
        let p = parse("petal red, 3\nawait read 'x'\n@@ fd\n20 fd\nwrite \"hi");
        assert_eq!(p.lines[0].kind, InstructionKind::Call);
        assert_eq!(p.lines[0].args, vec![Arg::Word("red".into()), Arg::Number(3.0)]);
        assert_eq!(p.lines[1].kind, InstructionKind::Await);
        assert_eq!(p.lines[1].args, vec![Arg::Word("read".into()), Arg::Str("x".into())]);
        assert_eq!(p.lines[2].kind, InstructionKind::Unknown);
        assert_eq!(p.lines[3].kind, InstructionKind::Unknown);
        assert_eq!(p.lines[4].kind, InstructionKind::Unknown);
    }

    #[test]
    fn negative_numbers_and_arrows() {
        let p = parse("fd -20\nforever ->\nstop()");
        assert_eq!(p.lines[0].args, vec![Arg::Number(-20.0)]);
        assert_eq!(p.lines[1].args, vec![Arg::Symbol("->".into())]);
        assert!(p.lines[2].args.is_empty());
    }

    #[test]
    fn blank_lines_are_kept() {
        let p = parse("fd 1\n\n  \nrt 2");
        assert_eq!(p.lines.len(), 4);
        assert_eq!(p.lines[1].kind, InstructionKind::Blank);
        assert_eq!(p.render(), "fd 1\n\n  \nrt 2");
    }
}
