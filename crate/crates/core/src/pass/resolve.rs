//! Baseptr resolution: find, for a pointer value, the register-only tagged
//! base pointer its checks decode.

use std::collections::{HashMap, HashSet};

use super::PassError;
use crate::ir::{value_types, IrFunction, IrProgram, Op, Operand, Type};

/// Where the base pointer of a value comes from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BaseptrExpr {
    /// The value is its own base: allocations, parameters, loaded pointers,
    /// `inttoptr` and call results carry their tag inside themselves.
    SelfValue(String),
    /// Load the tagged base from the shadow of a program global.
    ShadowGlobalLoad(String),
    /// One base per incoming edge of the phi `phi`.
    PhiOfBases {
        phi: String,
        arms: Vec<(String, BaseptrExpr)>,
    },
    /// Same base as the (phi) value named here; used for cycles.
    Inherit(String),
}

impl BaseptrExpr {
    /// The single expression every arm agrees on, if any.
    pub fn uniform(&self) -> Option<&BaseptrExpr> {
        match self {
            BaseptrExpr::PhiOfBases { arms, .. } => {
                let first = &arms.first()?.1;
                arms.iter().all(|(_, a)| a == first).then_some(first)
            }
            _ => None,
        }
    }

    fn collapse(self) -> BaseptrExpr {
        match self.uniform() {
            Some(u) => u.clone(),
            None => self,
        }
    }
}

/// Memoizing resolver for the values of one function.
pub struct BaseResolver<'a> {
    defs: HashMap<&'a str, &'a Op>,
    types: HashMap<String, Type>,
    memo: HashMap<String, BaseptrExpr>,
    in_progress: HashSet<String>,
}

impl<'a> BaseResolver<'a> {
    pub fn new(program: &'a IrProgram, func: &'a IrFunction) -> Self {
        let defs = func
            .blocks
            .iter()
            .flat_map(|b| b.instrs.iter())
            .filter_map(|i| i.result.as_deref().map(|r| (r, &i.op)))
            .collect();
        BaseResolver {
            defs,
            types: value_types(program, func),
            memo: HashMap::new(),
            in_progress: HashSet::new(),
        }
    }

    pub fn value_type(&self, value: &str) -> Option<Type> {
        self.types.get(value).copied()
    }

    pub fn resolve_operand(&mut self, operand: &Operand) -> Result<BaseptrExpr, PassError> {
        match operand {
            Operand::Value(v) => self.resolve(v),
            Operand::Const(c) => Err(PassError::NotAPointer(c.to_string())),
        }
    }

    pub fn resolve(&mut self, value: &str) -> Result<BaseptrExpr, PassError> {
        if let Some(done) = self.memo.get(value) {
            return Ok(done.clone());
        }
        match self.types.get(value) {
            Some(Type::Ptr) => {}
            Some(Type::I64) => return Err(PassError::NotAPointer(value.to_owned())),
            None => return Err(PassError::UnknownValue(value.to_owned())),
        }
        let expr = match self.defs.get(value).copied() {
            // parameters
            None => BaseptrExpr::SelfValue(value.to_owned()),
            Some(Op::GlobalAddr { global }) => BaseptrExpr::ShadowGlobalLoad(global.clone()),
            Some(Op::PtrAdd { ptr, .. } | Op::Cast { ptr }) => self.resolve_operand(ptr)?,
            Some(Op::Phi { incoming, .. }) => {
                if !self.in_progress.insert(value.to_owned()) {
                    return Ok(BaseptrExpr::Inherit(value.to_owned()));
                }
                let mut arms = Vec::with_capacity(incoming.len());
                for (block, v) in incoming {
                    let arm = self.resolve_operand(v);
                    if arm.is_err() {
                        self.in_progress.remove(value);
                    }
                    arms.push((block.clone(), arm?.collapse()));
                }
                self.in_progress.remove(value);
                let me = BaseptrExpr::Inherit(value.to_owned());
                let mut others = arms.iter().map(|(_, a)| a).filter(|a| **a != me);
                if let Some(first) = others.next() {
                    if others.all(|a| a == first) {
                        let fixed = first.clone();
                        for (_, arm) in &mut arms {
                            *arm = fixed.clone();
                        }
                    }
                }
                BaseptrExpr::PhiOfBases {
                    phi: value.to_owned(),
                    arms,
                }
            }
            Some(_) => BaseptrExpr::SelfValue(value.to_owned()),
        };
        self.memo.insert(value.to_owned(), expr.clone());
        Ok(expr)
    }
}

/// Resolves the base pointer of `value` in `function`.
pub fn resolve_baseptr(program: &IrProgram, function: &str, value: &str) -> Result<BaseptrExpr, PassError> {
    let func = program
        .function(function)
        .ok_or_else(|| PassError::UnknownFunction(function.to_owned()))?;
    BaseResolver::new(program, func).resolve(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse;

    fn sv(v: &str) -> BaseptrExpr {
        BaseptrExpr::SelfValue(v.into())
    }

    #[test]
    fn ptradd_inherits_from_malloc() {
        let p = parse("func @main() {\nentry:\n  %p = malloc 24\n  %q = ptradd %p, 8\n  %r = cast %q\n  ret\n}\n").unwrap();
        assert_eq!(resolve_baseptr(&p, "main", "q").unwrap(), sv("p"));
        assert_eq!(resolve_baseptr(&p, "main", "r").unwrap(), sv("p"));
    }

    #[test]
    fn loop_phi_reaches_a_fixed_point() {
        // Hand simulation: %p2's arms are %p (entry) and %q = %p2 + 8 (body),
        // so the body arm is the phi itself and the only other base is %p.
        let src = "func @main() {\nentry:\n  %p = malloc 24\n  br body\nbody:\n  %p2 = phi ptr [entry, %p], [body, %q]\n  %q = ptradd %p2, 8\n  %c = icmp eq %q, %p\n  brcond %c, body, exit\nexit:\n  ret\n}\n";
        let p = parse(src).unwrap();
        let expr = resolve_baseptr(&p, "main", "p2").unwrap();
        assert_eq!(
            expr,
            BaseptrExpr::PhiOfBases {
                phi: "p2".into(),
                arms: vec![("entry".into(), sv("p")), ("body".into(), sv("p"))],
            }
        );
        assert_eq!(expr.uniform(), Some(&sv("p")));
    }

    #[test]
    fn diverging_phi_keeps_both_bases() {
        let src = "func @main() {\nentry:\n  %a = malloc 8\n  %b = alloca 8\n  brcond 1, x, y\nx:\n  br j\ny:\n  br j\nj:\n  %p = phi ptr [x, %a], [y, %b]\n  ret\n}\n";
        let p = parse(src).unwrap();
        let expr = resolve_baseptr(&p, "main", "p").unwrap();
        assert_eq!(expr.uniform(), None);
    }

    #[test]
    fn globals_params_loads_and_inttoptr() {
        let src = "global @g 24\nfunc @f(ptr %arg) {\nentry:\n  %x = ptradd %arg, 4\n  %l = load ptr 8, %x\n  %i = ptrtoint %l\n  %r = inttoptr %i\n  %h = gaddr @g\n  %h2 = ptradd %h, 16\n  ret\n}\nfunc @main() {\nentry:\n  ret\n}\n";
        let p = parse(src).unwrap();
        assert_eq!(resolve_baseptr(&p, "f", "x").unwrap(), sv("arg"));
        assert_eq!(resolve_baseptr(&p, "f", "l").unwrap(), sv("l"));
        assert_eq!(resolve_baseptr(&p, "f", "r").unwrap(), sv("r"));
        assert_eq!(
            resolve_baseptr(&p, "f", "h2").unwrap(),
            BaseptrExpr::ShadowGlobalLoad("g".into())
        );
        assert!(matches!(resolve_baseptr(&p, "f", "i"), Err(PassError::NotAPointer(_))));
    }

    #[test]
    fn nested_loops_collapse() {
        let src = "func @main() {\nentry:\n  %p = malloc 64\n  br outer\nouter:\n  %o = phi ptr [entry, %p], [olatch, %in2]\n  br inner\ninner:\n  %in = phi ptr [outer, %o], [inner, %in2]\n  %in2 = ptradd %in, 1\n  %c = icmp eq %in2, %p\n  brcond %c, inner, olatch\nolatch:\n  brcond 0, outer, exit\nexit:\n  ret\n}\n";
        let p = parse(src).unwrap();
        let f = p.function("main").unwrap();
        let mut r = BaseResolver::new(&p, f);
        let o = r.resolve("o").unwrap();
        assert_eq!(o.uniform(), Some(&sv("p")));
        let inner = r.resolve("in2").unwrap();
        // resolved while %o was in progress, so it defers to %o's base
        match inner {
            BaseptrExpr::PhiOfBases { ref arms, .. } => {
                assert!(arms.iter().all(|(_, a)| *a == BaseptrExpr::Inherit("o".into())))
            }
            other => panic!("{other:?}"),
        }
    }
}
