use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::lexicon::is_color;
use super::parse::{Arg, Instruction, InstructionKind, Program};

pub const DEFAULT_STEP_BUDGET: usize = 10_000;

/// Calls that are accepted without a definition.
const BUILTINS: [&str; 9] = ["write", "label", "home", "cs", "ht", "st", "pu", "pd", "wait"];

const MAX_CALL_DEPTH: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecError {
    UndefinedColor,
    UnknownInstruction,
    Nontermination,
    ArityError,
}

impl std::fmt::Display for ExecError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExecError::UndefinedColor => "undefined-color",
            ExecError::UnknownInstruction => "unknown-instruction",
            ExecError::Nontermination => "nontermination",
            ExecError::ArityError => "arity-error",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub success: bool,
    pub error: Option<ExecError>,
    pub steps: usize,
}

/// A statement with the indented block it owns (function and loop bodies).
#[derive(Debug)]
struct Node<'p> {
    inst: &'p Instruction,
    body: Vec<Node<'p>>,
}

fn owns_block(kind: InstructionKind) -> bool {
    matches!(kind, InstructionKind::FunctionDef | InstructionKind::Forever)
}

fn build_block<'p>(lines: &[&'p Instruction], pos: &mut usize, min_indent: usize) -> Vec<Node<'p>> {
    let mut nodes = Vec::new();
    while *pos < lines.len() {
        let inst = lines[*pos];
        if inst.indent < min_indent {
            break;
        }
        *pos += 1;
        let body = if owns_block(inst.kind) {
            match lines.get(*pos) {
                Some(next) if next.indent > inst.indent => build_block(lines, pos, inst.indent + 1),
                _ => Vec::new(),
            }
        } else {
            Vec::new()
        };
        nodes.push(Node { inst, body });
    }
    nodes
}

#[derive(Clone, Debug)]
enum Value {
    Number(f64),
    Word(String),
}

enum Flow {
    Next,
    Stop,
}

struct Machine<'p> {
    budget: usize,
    steps: usize,
    functions: HashMap<&'p str, (&'p Instruction, &'p [Node<'p>])>,
    depth: usize,
}

type Env = HashMap<String, Value>;

impl<'p> Machine<'p> {
    fn tick(&mut self) -> Result<(), ExecError> {
        if self.steps >= self.budget {
            return Err(ExecError::Nontermination);
        }
        self.steps += 1;
        Ok(())
    }

    fn resolve(&self, arg: &Arg, env: &Env) -> Option<Value> {
        match arg {
            Arg::Number(n) => Some(Value::Number(*n)),
            Arg::Word(w) => Some(env.get(w).cloned().unwrap_or_else(|| Value::Word(w.clone()))),
            Arg::Str(s) => Some(Value::Word(s.clone())),
            Arg::Symbol(_) => None,
        }
    }

    fn number(&self, arg: &Arg, env: &Env) -> Result<f64, ExecError> {
        match self.resolve(arg, env) {
            Some(Value::Number(n)) => Ok(n),
            _ => Err(ExecError::ArityError),
        }
    }

    fn color(&self, arg: &Arg, env: &Env) -> Result<(), ExecError> {
        match self.resolve(arg, env) {
            Some(Value::Word(w)) if is_color(&w) => Ok(()),
            Some(Value::Word(_)) => Err(ExecError::UndefinedColor),
            _ => Err(ExecError::ArityError),
        }
    }

    fn run_block(&mut self, nodes: &'p [Node<'p>], env: &Env) -> Result<Flow, ExecError> {
        for node in nodes {
            if let Flow::Stop = self.run_node(node, env)? {
                return Ok(Flow::Stop);
            }
        }
        Ok(Flow::Next)
    }

    fn run_node(&mut self, node: &'p Node<'p>, env: &Env) -> Result<Flow, ExecError> {
        let inst = node.inst;
        let args = &inst.args;
        match inst.kind {
            InstructionKind::Comment | InstructionKind::Blank => return Ok(Flow::Next),
            _ => self.tick()?,
        }
        match inst.kind {
            InstructionKind::Comment | InstructionKind::Blank => {}
            InstructionKind::Move | InstructionKind::Turn | InstructionKind::Speed => {
                let [arg] = args.as_slice() else {
                    return Err(ExecError::ArityError);
                };
                self.number(arg, env)?;
            }
            InstructionKind::Pen => {
                let [arg] = args.as_slice() else {
                    return Err(ExecError::ArityError);
                };
                self.color(arg, env)?;
            }
            InstructionKind::Dot => match args.as_slice() {
                [size @ Arg::Number(_)] => {
                    self.number(size, env)?;
                }
                [color] => self.color(color, env)?,
                [color, size] => {
                    self.color(color, env)?;
                    self.number(size, env)?;
                }
                _ => return Err(ExecError::ArityError),
            },
            InstructionKind::Await => {
                if args.is_empty() {
                    return Err(ExecError::ArityError);
                }
            }
            InstructionKind::Stop => {
                if !args.is_empty() {
                    return Err(ExecError::ArityError);
                }
                return Ok(Flow::Stop);
            }
            InstructionKind::Forever => {
                let counts_ok = match args.split_last() {
                    Some((Arg::Symbol(s), before)) if s == "->" => {
                        before.iter().all(|a| matches!(a, Arg::Number(_)))
                    }
                    _ => false,
                };
                if !counts_ok {
                    return Err(ExecError::ArityError);
                }
                loop {
                    if let Flow::Stop = self.run_block(&node.body, env)? {
                        break;
                    }
                    self.tick()?;
                }
            }
            InstructionKind::FunctionDef => {
                self.functions.insert(inst.head.as_str(), (inst, node.body.as_slice()));
            }
            InstructionKind::Call => return self.call(inst, env),
            InstructionKind::Unknown => return Err(ExecError::UnknownInstruction),
        }
        Ok(Flow::Next)
    }

    fn call(&mut self, inst: &'p Instruction, env: &Env) -> Result<Flow, ExecError> {
        let Some(&(def, body)) = self.functions.get(inst.head.as_str()) else {
            if BUILTINS.contains(&inst.head.as_str()) {
                return Ok(Flow::Next);
            }
            return Err(ExecError::UnknownInstruction);
        };
        if def.args.len() != inst.args.len() {
            return Err(ExecError::ArityError);
        }
        let mut frame = Env::new();
        for (param, arg) in def.args.iter().zip(&inst.args) {
            let (Arg::Word(name), Some(value)) = (param, self.resolve(arg, env)) else {
                return Err(ExecError::ArityError);
            };
            frame.insert(name.clone(), value);
        }
        if self.depth >= MAX_CALL_DEPTH {
            return Err(ExecError::Nontermination);
        }
        self.depth += 1;
        let flow = self.run_block(body, &frame);
        self.depth -= 1;
        flow
    }
}

/// Runs a program until it ends, fails, or exhausts `budget` steps.
///
/// Comment and blank lines cost nothing. Every other executed line costs
/// one step, as does each repetition of a `forever` loop. `stop` leaves the
/// innermost `forever`, or ends the program when no loop is active.
pub fn execute(program: &Program, budget: usize) -> ExecutionResult {
    // Comments and blank lines never shape blocks.
    let lines: Vec<&Instruction> = program
        .lines
        .iter()
        .filter(|l| !matches!(l.kind, InstructionKind::Comment | InstructionKind::Blank))
        .collect();
    let mut pos = 0;
    let mut roots = Vec::new();
    while pos < lines.len() {
        // A dedent below the first line's indent still continues the top level.
        let indent = lines[pos].indent;
        roots.extend(build_block(&lines, &mut pos, indent));
    }
    let mut machine = Machine {
        budget,
        steps: 0,
        functions: HashMap::new(),
        depth: 0,
    };
    let outcome = machine.run_block(&roots, &Env::new());
    match outcome {
        Ok(_) => ExecutionResult {
            success: true,
            error: None,
            steps: machine.steps,
        },
        Err(e) => ExecutionResult {
            success: false,
            error: Some(e),
            steps: machine.steps,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse::parse;
    use super::*;

    fn run(src: &str) -> ExecutionResult {
        execute(&parse(src), 1000)
    }

    #[test]
    fn babyblue_is_undefined() {
        let r = run("pen babyblue");
        assert!(!r.success);
        assert_eq!(r.error, Some(ExecError::UndefinedColor));
    }

    #[test]
    fn empty_program_succeeds() {
        assert_eq!(
            run(""),
            ExecutionResult {
                success: true,
                error: None,
                steps: 0
            }
        );
    }

    #[test]
    fn forever_without_stop_never_ends() {
        let r = run("forever ->\n  fd 1");
        assert_eq!(r.error, Some(ExecError::Nontermination));
        assert_eq!(r.steps, 1000);
    }

    #[test]
    fn forever_with_stop_ends() {
        let r = run("forever ->\n  fd 1\n  stop\nrt 90");
        assert!(r.success, "{r:?}");
        assert_eq!(r.steps, 4);
    }

    #[test]
    fn arity_errors() {
        assert_eq!(run("fd").error, Some(ExecError::ArityError));
        assert_eq!(run("fd red").error, Some(ExecError::ArityError));
        assert_eq!(run("pen").error, Some(ExecError::ArityError));
        assert_eq!(run("stop 3").error, Some(ExecError::ArityError));
        assert_eq!(run("forever").error, Some(ExecError::ArityError));
        assert_eq!(run("f = (a) ->\n  fd a\nf").error, Some(ExecError::ArityError));
    }

    #[test]
    fn functions_bind_parameters() {
        let ok = run("petal = (c, n) ->\n  dot c, n\n  fd n\npetal red, 30");
        assert!(ok.success, "{ok:?}");
        assert_eq!(ok.steps, 4);
        let bad = run("petal = (c) ->\n  pen c\npetal babyblue");
        assert_eq!(bad.error, Some(ExecError::UndefinedColor));
    }

    #[test]
    fn undefined_calls_and_unknown_lines() {
        assert_eq!(run("fdd 20").error, Some(ExecError::UnknownInstruction));
        assert_eq!(run("@@@").error, Some(ExecError::UnknownInstruction));
        assert!(run("write 'hello'").success);
    }

    #[test]
    fn unexecuted_bad_color_is_not_reported() {
        let r = run("fdd 1\npen babyblue");
        assert_eq!(r.error, Some(ExecError::UnknownInstruction));
        let r = run("f = ->\n  pen babyblue\nfd 1");
        assert!(r.success);
    }

    #[test]
    fn runaway_recursion_is_nontermination() {
        let r = run("f = ->\n  f\nf");
        assert_eq!(r.error, Some(ExecError::Nontermination));
    }

    #[test]
    fn straight_line_program_beyond_budget() {
        let src = vec!["fd 1"; 20].join("\n");
        let r = execute(&parse(&src), 10);
        assert_eq!(r.error, Some(ExecError::Nontermination));
        assert_eq!(r.steps, 10);
    }
}
