//! Nested `(op, children, value)` serialization for machine-readable reports.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{BinaryOp, Expr, UnaryOp};

#[derive(Serialize, Deserialize)]
struct Node {
    op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    children: Vec<Node>,
}

fn to_node(e: &Expr) -> Node {
    let leaf = |op: &str| Node {
        op: op.to_string(),
        value: None,
        name: None,
        children: Vec::new(),
    };
    match e {
        Expr::Const(v) => Node {
            value: Some(*v),
            ..leaf("const")
        },
        Expr::Var(n) => Node {
            name: Some(n.to_string()),
            ..leaf("var")
        },
        Expr::Unary(op, c) => Node {
            children: vec![to_node(c)],
            ..leaf(op.name())
        },
        Expr::Binary(op, a, b) => Node {
            children: vec![to_node(a), to_node(b)],
            ..leaf(op.name())
        },
    }
}

fn from_node(n: Node) -> Result<Expr, String> {
    let arity = n.children.len();
    let mut kids = n.children.into_iter();
    let mut next = || from_node(kids.next().expect("arity checked"));
    let want = |k: usize| {
        if arity == k {
            Ok(())
        } else {
            Err(format!("`{}` expects {k} children, found {arity}", n.op))
        }
    };
    match n.op.as_str() {
        "const" => {
            want(0)?;
            let v = n.value.ok_or("const node without value")?;
            if !v.is_finite() {
                return Err(format!("non-finite constant {v}"));
            }
            Ok(Expr::Const(v))
        }
        "var" => {
            want(0)?;
            Ok(Expr::var(&n.name.ok_or("var node without name")?))
        }
        "neg" | "exp" => {
            want(1)?;
            let op = if n.op == "neg" { UnaryOp::Neg } else { UnaryOp::Exp };
            Ok(Expr::unary(op, next()?))
        }
        "add" | "sub" | "mul" | "div" => {
            want(2)?;
            let op = match n.op.as_str() {
                "add" => BinaryOp::Add,
                "sub" => BinaryOp::Sub,
                "mul" => BinaryOp::Mul,
                _ => BinaryOp::Div,
            };
            let a = next()?;
            let b = next()?;
            Ok(Expr::binary(op, a, b))
        }
        other => Err(format!("unknown op `{other}`")),
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        to_node(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let node = Node::deserialize(d)?;
        from_node(node).map_err(serde::de::Error::custom)
    }
}
