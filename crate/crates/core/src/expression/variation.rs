//! Koza-style tree generation and the genetic variation operators.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{BinaryOp, Expr, ExprConfig, UnaryOp};

/// Mutation kinds selectable by [`mutate_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mutation {
    /// Replace a random subtree with a freshly generated tree.
    Subtree,
    /// Swap an operator for a different one of the same arity.
    Point,
    /// Gaussian jitter of one constant, sigma = 10% of the constant range width.
    Constant,
}

fn random_terminal<R: Rng + ?Sized>(config: &ExprConfig, rng: &mut R) -> Expr {
    let use_const = config.variables.is_empty() || rng.random_bool(config.constant_probability);
    if use_const {
        let (lo, hi) = config.constant_range;
        Expr::Const(rng.random_range(lo..=hi))
    } else {
        let k = rng.random_range(0..config.variables.len());
        Expr::var(&config.variables[k])
    }
}

fn random_function<R: Rng + ?Sized>(config: &ExprConfig, rng: &mut R, depth_left: usize, full: bool) -> Expr {
    let unary = config.unary_ops();
    let binary = config.binary_ops();
    let k = rng.random_range(0..unary.len() + binary.len());
    if k < unary.len() {
        Expr::unary(unary[k], grow(config, rng, depth_left - 1, full))
    } else {
        let op = binary[k - unary.len()];
        let a = grow(config, rng, depth_left - 1, full);
        let b = grow(config, rng, depth_left - 1, full);
        Expr::binary(op, a, b)
    }
}

fn grow<R: Rng + ?Sized>(config: &ExprConfig, rng: &mut R, depth_left: usize, full: bool) -> Expr {
    if depth_left <= 1 || config.functions.is_empty() {
        return random_terminal(config, rng);
    }
    if full {
        return random_function(config, rng, depth_left, full);
    }
    let n_functions = config.functions.len() as f64;
    let n_terminals = config.variables.len() as f64 + 1.0;
    if rng.random_bool(n_functions / (n_functions + n_terminals)) {
        random_function(config, rng, depth_left, full)
    } else {
        random_terminal(config, rng)
    }
}

/// Ramped half-and-half: depth drawn uniformly from `init_depth`, then either
/// the full or the grow method with equal probability.
pub fn random_tree<R: Rng + ?Sized>(config: &ExprConfig, rng: &mut R) -> Expr {
    let (lo, hi) = config.init_depth;
    let depth = rng.random_range(lo..=hi.max(lo));
    let full = rng.random_bool(0.5);
    grow(config, rng, depth, full)
}

/// Exchange the subtree at pre-order index `i` of `a` with the one at `j` of
/// `b`. An offspring deeper than `max_depth` is replaced by its parent.
pub fn crossover_at(a: &Expr, b: &Expr, i: usize, j: usize, max_depth: usize) -> (Expr, Expr) {
    let (Some(sa), Some(sb)) = (a.subtree(i), b.subtree(j)) else {
        return (a.clone(), b.clone());
    };
    let c1 = a.replace_subtree(i, sb);
    let c2 = b.replace_subtree(j, sa);
    let c1 = if c1.depth() > max_depth { a.clone() } else { c1 };
    let c2 = if c2.depth() > max_depth { b.clone() } else { c2 };
    (c1, c2)
}

/// One-point subtree crossover at uniformly chosen nodes.
pub fn crossover<R: Rng + ?Sized>(a: &Expr, b: &Expr, max_depth: usize, rng: &mut R) -> (Expr, Expr) {
    let i = rng.random_range(0..a.node_count());
    let j = rng.random_range(0..b.node_count());
    crossover_at(a, b, i, j, max_depth)
}

fn pick_kind<R: Rng + ?Sized>(config: &ExprConfig, rng: &mut R) -> Mutation {
    let w = config.mutation;
    let total = w.subtree + w.point + w.constant;
    let r = rng.random::<f64>() * total;
    if r < w.subtree {
        Mutation::Subtree
    } else if r < w.subtree + w.point {
        Mutation::Point
    } else {
        Mutation::Constant
    }
}

/// Mutate with a kind drawn from the configured weights.
pub fn mutate<R: Rng + ?Sized>(a: &Expr, config: &ExprConfig, rng: &mut R) -> Expr {
    let kind = pick_kind(config, rng);
    mutate_with(a, kind, config, rng)
}

/// Apply a specific mutation kind. Point mutation falls back to constant
/// jitter when no operator has an alternative, and constant jitter falls back
/// to subtree replacement on trees without constants.
pub fn mutate_with<R: Rng + ?Sized>(a: &Expr, kind: Mutation, config: &ExprConfig, rng: &mut R) -> Expr {
    match kind {
        Mutation::Subtree => subtree_mutation(a, config, rng),
        Mutation::Point => {
            point_mutation(a, config, rng).unwrap_or_else(|| mutate_with(a, Mutation::Constant, config, rng))
        }
        Mutation::Constant => constant_mutation(a, config, rng).unwrap_or_else(|| subtree_mutation(a, config, rng)),
    }
}

fn subtree_mutation<R: Rng + ?Sized>(a: &Expr, config: &ExprConfig, rng: &mut R) -> Expr {
    let i = rng.random_range(0..a.node_count());
    let level = a.node_depth(i).unwrap_or(1);
    let room = config.max_depth.saturating_sub(level) + 1;
    let mut local = config.clone();
    let hi = config.init_depth.1.min(room).max(1);
    let lo = config.init_depth.0.min(hi);
    local.init_depth = (lo, hi);
    let fresh = random_tree(&local, rng);
    a.replace_subtree(i, &fresh)
}

fn point_mutation<R: Rng + ?Sized>(a: &Expr, config: &ExprConfig, rng: &mut R) -> Option<Expr> {
    let unary = config.unary_ops();
    let binary = config.binary_ops();
    // Internal nodes that have at least one alternative operator.
    let mut candidates = Vec::new();
    let mut index = 0usize;
    a.visit(&mut |e| {
        let ok = match e {
            Expr::Unary(op, _) => unary.iter().any(|o| o != op),
            Expr::Binary(op, _, _) => binary.iter().any(|o| o != op),
            _ => false,
        };
        if ok {
            candidates.push(index);
        }
        index += 1;
    });
    if candidates.is_empty() {
        return None;
    }
    let i = candidates[rng.random_range(0..candidates.len())];
    let node = a.subtree(i)?;
    let replacement = match node {
        Expr::Unary(op, c) => {
            let alts: Vec<UnaryOp> = unary.iter().copied().filter(|o| o != op).collect();
            Expr::Unary(alts[rng.random_range(0..alts.len())], c.clone())
        }
        Expr::Binary(op, l, r) => {
            let alts: Vec<BinaryOp> = binary.iter().copied().filter(|o| o != op).collect();
            Expr::Binary(alts[rng.random_range(0..alts.len())], l.clone(), r.clone())
        }
        _ => return None,
    };
    Some(a.replace_subtree(i, &replacement))
}

fn constant_mutation<R: Rng + ?Sized>(a: &Expr, config: &ExprConfig, rng: &mut R) -> Option<Expr> {
    let mut slots = Vec::new();
    let mut index = 0usize;
    a.visit(&mut |e| {
        if let Expr::Const(v) = e {
            slots.push((index, *v));
        }
        index += 1;
    });
    if slots.is_empty() {
        return None;
    }
    let (i, v) = slots[rng.random_range(0..slots.len())];
    let (lo, hi) = config.constant_range;
    let sigma = 0.1 * (hi - lo);
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    let mut jittered = v + normal.sample(rng);
    if !jittered.is_finite() {
        jittered = v;
    }
    Some(a.replace_subtree(i, &Expr::Const(jittered)))
}
