use super::{guarded_exp, protected_div, saturate, BinaryOp, EvalError, Expr, UnaryOp};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Instr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp),
    Binary(BinaryOp),
}

/// Postfix program for fast repeated evaluation of one [`Expr`].
///
/// Variables are resolved to column indices at compile time. Constant slots
/// follow the pre-order constant order of the source tree, so
/// [`CompiledExpr::set_constants`] accepts the same vector as
/// [`Expr::with_constants`].
#[derive(Clone, Debug)]
pub struct CompiledExpr {
    code: Vec<Instr>,
    const_slots: Vec<usize>,
    max_stack: usize,
    n_vars: usize,
}

impl CompiledExpr {
    pub fn compile(expr: &Expr, variables: &[&str]) -> Result<Self, EvalError> {
        let mut code = Vec::with_capacity(expr.node_count());
        emit(expr, variables, &mut code)?;
        // Leaves are visited in the same relative order in pre- and
        // post-order, so postfix constant order is pre-order constant order.
        let const_slots = code
            .iter()
            .enumerate()
            .filter(|(_, i)| matches!(i, Instr::Const(_)))
            .map(|(k, _)| k)
            .collect();
        let mut depth = 0usize;
        let mut max_stack = 0usize;
        for i in &code {
            match i {
                Instr::Const(_) | Instr::Var(_) => depth += 1,
                Instr::Unary(_) => {}
                Instr::Binary(_) => depth -= 1,
            }
            max_stack = max_stack.max(depth);
        }
        Ok(CompiledExpr {
            code,
            const_slots,
            max_stack,
            n_vars: variables.len(),
        })
    }

    pub fn constant_count(&self) -> usize {
        self.const_slots.len()
    }

    /// Overwrite constants in pre-order.
    pub fn set_constants(&mut self, values: &[f64]) {
        for (slot, v) in self.const_slots.iter().zip(values) {
            self.code[*slot] = Instr::Const(*v);
        }
    }

    /// Evaluate at one point; `values` is indexed like the compile-time
    /// variable list.
    pub fn eval(&self, values: &[f64]) -> f64 {
        debug_assert!(values.len() >= self.n_vars);
        let mut stack: Vec<f64> = Vec::with_capacity(self.max_stack);
        for i in &self.code {
            match *i {
                Instr::Const(v) => stack.push(v),
                Instr::Var(k) => stack.push(values[k]),
                Instr::Unary(op) => {
                    let top = stack.last_mut().expect("stack underflow");
                    *top = op.apply(*top);
                }
                Instr::Binary(op) => {
                    let b = stack.pop().expect("stack underflow");
                    let top = stack.last_mut().expect("stack underflow");
                    *top = op.apply(*top, b);
                }
            }
        }
        stack[0]
    }

    /// Evaluate over whole columns at once. `columns[k]` holds the values of
    /// variable `k`; all columns must have the same length.
    pub fn eval_columns(&self, columns: &[&[f64]]) -> Vec<f64> {
        let n = columns.first().map_or(0, |c| c.len());
        if n == 0 && self.n_vars > 0 {
            return Vec::new();
        }
        let n = if self.n_vars == 0 { n.max(1) } else { n };
        let mut stack: Vec<Vec<f64>> = Vec::with_capacity(self.max_stack);
        for i in &self.code {
            match *i {
                Instr::Const(v) => stack.push(vec![v; n]),
                Instr::Var(k) => stack.push(columns[k].to_vec()),
                Instr::Unary(op) => {
                    let top = stack.last_mut().expect("stack underflow");
                    match op {
                        UnaryOp::Neg => top.iter_mut().for_each(|x| *x = -*x),
                        UnaryOp::Exp => top.iter_mut().for_each(|x| *x = guarded_exp(*x)),
                    }
                }
                Instr::Binary(op) => {
                    let b = stack.pop().expect("stack underflow");
                    let a = stack.last_mut().expect("stack underflow");
                    match op {
                        BinaryOp::Add => a.iter_mut().zip(&b).for_each(|(x, y)| *x = saturate(*x + y)),
                        BinaryOp::Sub => a.iter_mut().zip(&b).for_each(|(x, y)| *x = saturate(*x - y)),
                        BinaryOp::Mul => a.iter_mut().zip(&b).for_each(|(x, y)| *x = saturate(*x * y)),
                        BinaryOp::Div => a.iter_mut().zip(&b).for_each(|(x, y)| *x = protected_div(*x, *y)),
                    }
                }
            }
        }
        stack.pop().expect("empty program")
    }
}

fn emit(e: &Expr, variables: &[&str], code: &mut Vec<Instr>) -> Result<(), EvalError> {
    match e {
        Expr::Const(v) => code.push(Instr::Const(*v)),
        Expr::Var(name) => {
            let k = variables
                .iter()
                .position(|v| *v == name.as_ref())
                .ok_or_else(|| EvalError::UnboundVariable(name.to_string()))?;
            code.push(Instr::Var(k));
        }
        Expr::Unary(op, c) => {
            emit(c, variables, code)?;
            code.push(Instr::Unary(*op));
        }
        Expr::Binary(op, a, b) => {
            emit(a, variables, code)?;
            emit(b, variables, code)?;
            code.push(Instr::Binary(*op));
        }
    }
    Ok(())
}
