use std::fmt;

/// Comparison used by edge propositions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Gt,
    Ge,
    Lt,
    Le,
}

impl CmpOp {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
        }
    }
}

/// Boolean predicate over edge labels gating the neighbor operator.
#[derive(Debug, Clone, PartialEq)]
pub enum EdgeProp {
    True,
    Compare {
        feature: String,
        op: CmpOp,
        value: f64,
    },
}

impl fmt::Display for EdgeProp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeProp::True => f.write_str("true"),
            EdgeProp::Compare { feature, op, value } => {
                write!(f, "{feature}{}{value}", op.symbol())
            }
        }
    }
}

/// GTL formula over node propositions `feature >= threshold` with bounded
/// eventually/always operators and the counting neighbor operator.
#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    Atomic {
        feature: String,
        threshold: f64,
    },
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    /// At least `n` nodes reachable along edges satisfying `edge_props` satisfy `inner`.
    ExistsN {
        n: usize,
        edge_props: Vec<EdgeProp>,
        inner: Box<Formula>,
    },
    Eventually {
        a: usize,
        b: usize,
        inner: Box<Formula>,
    },
    Always {
        a: usize,
        b: usize,
        inner: Box<Formula>,
    },
}

impl Formula {
    pub fn atomic(feature: impl Into<String>, threshold: f64) -> Self {
        Formula::Atomic {
            feature: feature.into(),
            threshold,
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(inner: Formula) -> Self {
        Formula::Not(Box::new(inner))
    }

    pub fn and(left: Formula, right: Formula) -> Self {
        Formula::And(Box::new(left), Box::new(right))
    }

    pub fn or(left: Formula, right: Formula) -> Self {
        Formula::Or(Box::new(left), Box::new(right))
    }

    pub fn eventually(a: usize, b: usize, inner: Formula) -> Self {
        Formula::Eventually {
            a,
            b,
            inner: Box::new(inner),
        }
    }

    pub fn always(a: usize, b: usize, inner: Formula) -> Self {
        Formula::Always {
            a,
            b,
            inner: Box::new(inner),
        }
    }

    pub fn exists(n: usize, edge_props: Vec<EdgeProp>, inner: Formula) -> Self {
        Formula::ExistsN {
            n,
            edge_props,
            inner: Box::new(inner),
        }
    }

    /// Maximum look-ahead in steps.
    pub fn horizon(&self) -> usize {
        match self {
            Formula::Atomic { .. } => 0,
            Formula::Not(inner) => inner.horizon(),
            Formula::ExistsN { inner, .. } => inner.horizon(),
            Formula::And(l, r) | Formula::Or(l, r) => l.horizon().max(r.horizon()),
            Formula::Eventually { b, inner, .. } | Formula::Always { b, inner, .. } => {
                b + inner.horizon()
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Formula::Atomic { .. } => 0,
            Formula::Not(i) => 1 + i.depth(),
            Formula::ExistsN { inner, .. }
            | Formula::Eventually { inner, .. }
            | Formula::Always { inner, .. } => 1 + inner.depth(),
            Formula::And(l, r) | Formula::Or(l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    /// Flattens a left- or right-nested chain of conjunctions.
    pub fn conjuncts(&self) -> Vec<&Formula> {
        let mut out = Vec::new();
        fn walk<'a>(f: &'a Formula, out: &mut Vec<&'a Formula>) {
            match f {
                Formula::And(l, r) => {
                    walk(l, out);
                    walk(r, out);
                }
                other => out.push(other),
            }
        }
        walk(self, &mut out);
        out
    }

    /// Node feature names referenced by atomic propositions.
    pub fn features(&self) -> Vec<&str> {
        let mut out = Vec::new();
        fn walk<'a>(f: &'a Formula, out: &mut Vec<&'a str>) {
            match f {
                Formula::Atomic { feature, .. } => {
                    if !out.contains(&feature.as_str()) {
                        out.push(feature);
                    }
                }
                Formula::Not(i) => walk(i, out),
                Formula::ExistsN { inner, .. }
                | Formula::Eventually { inner, .. }
                | Formula::Always { inner, .. } => walk(inner, out),
                Formula::And(l, r) | Formula::Or(l, r) => {
                    walk(l, out);
                    walk(r, out);
                }
            }
        }
        walk(self, &mut out);
        out
    }

    fn is_binary(&self) -> bool {
        matches!(self, Formula::And(..) | Formula::Or(..))
    }

    fn fmt_operand(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_binary() {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Atomic { feature, threshold } => write!(f, "({feature} >= {threshold})"),
            Formula::Not(inner) => {
                f.write_str("!")?;
                inner.fmt_operand(f)
            }
            Formula::And(l, r) => {
                // `&` binds tighter than `|` and both associate to the left
                if matches!(**l, Formula::Or(..)) {
                    write!(f, "({l})")?;
                } else {
                    write!(f, "{l}")?;
                }
                f.write_str(" & ")?;
                r.fmt_operand(f)
            }
            Formula::Or(l, r) => {
                write!(f, "{l} | ")?;
                r.fmt_operand(f)
            }
            Formula::ExistsN {
                n,
                edge_props,
                inner,
            } => {
                write!(f, "E{n}{{")?;
                for (i, p) in edge_props.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{p}")?;
                }
                f.write_str("}")?;
                inner.fmt_operand(f)
            }
            Formula::Eventually { a, b, inner } => {
                write!(f, "F[{a},{b}]")?;
                inner.fmt_operand(f)
            }
            Formula::Always { a, b, inner } => {
                write!(f, "G[{a},{b}]")?;
                inner.fmt_operand(f)
            }
        }
    }
}
