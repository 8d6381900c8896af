//! Formula skeletons with `${slot}` placeholders.
//!
//! A placeholder may carry an integer offset, `${w+3}` or `${w-1}`. Window
//! slots are rounded to whole steps before the offset is applied; inverted
//! windows produced by an instantiation collapse to their lower bound.

use serde::{Deserialize, Serialize};

use super::CausalError;
use crate::gp::Bounds;
use crate::gtl::{parse_formula_with, Formula, ParseOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Threshold,
    WindowLo,
    WindowHi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Slot {
    pub name: String,
    pub kind: SlotKind,
    pub lower: f64,
    pub upper: f64,
    #[serde(default)]
    pub init: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum Piece {
    Text(String),
    Hole { slot: usize, offset: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CauseTemplate {
    skeleton: String,
    slots: Vec<Slot>,
    pieces: Vec<Piece>,
}

impl CauseTemplate {
    pub fn new(skeleton: impl Into<String>, slots: Vec<Slot>) -> Result<Self, CausalError> {
        let skeleton = skeleton.into();
        if slots.is_empty() {
            return Err(CausalError::Template("template has no slots".into()));
        }
        for s in &slots {
            if !(s.lower.is_finite() && s.upper.is_finite() && s.lower <= s.upper) {
                return Err(CausalError::Template(format!(
                    "slot `{}` has bad bounds",
                    s.name
                )));
            }
            if let Some(i) = s.init {
                if !(s.lower..=s.upper).contains(&i) {
                    return Err(CausalError::Template(format!(
                        "initial value of `{}` is outside its bounds",
                        s.name
                    )));
                }
            }
        }
        let pieces = split(&skeleton, &slots)?;
        for (i, s) in slots.iter().enumerate() {
            if !pieces
                .iter()
                .any(|p| matches!(p, Piece::Hole { slot, .. } if *slot == i))
            {
                return Err(CausalError::Template(format!(
                    "slot `{}` is never used",
                    s.name
                )));
            }
        }
        let t = Self {
            skeleton,
            slots,
            pieces,
        };
        // both corners of the box must produce formulas
        t.instantiate(&t.slots.iter().map(|s| s.lower).collect::<Vec<_>>())?;
        t.instantiate(&t.slots.iter().map(|s| s.upper).collect::<Vec<_>>())?;
        Ok(t)
    }

    pub fn skeleton(&self) -> &str {
        &self.skeleton
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn dim(&self) -> usize {
        self.slots.len()
    }

    pub fn bounds(&self) -> Bounds {
        Bounds::new(self.slots.iter().map(|s| (s.lower, s.upper)).collect())
            .expect("validated at construction")
    }

    /// Declared initial values, defaulting to the middle of each range.
    pub fn initial(&self) -> Vec<f64> {
        self.slots
            .iter()
            .map(|s| s.init.unwrap_or((s.lower + s.upper) / 2.0))
            .collect()
    }

    /// Slot values as they enter the formula (window slots rounded).
    pub fn effective(&self, theta: &[f64]) -> Vec<f64> {
        self.slots
            .iter()
            .zip(theta)
            .map(|(s, &x)| match s.kind {
                SlotKind::Threshold => x,
                SlotKind::WindowLo | SlotKind::WindowHi => x.round(),
            })
            .collect()
    }

    pub fn render(&self, theta: &[f64]) -> Result<String, CausalError> {
        if theta.len() != self.slots.len() {
            return Err(CausalError::Theta(format!(
                "expected {} values, got {}",
                self.slots.len(),
                theta.len()
            )));
        }
        let values = self.effective(theta);
        let mut out = String::new();
        for p in &self.pieces {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Hole { slot, offset } => {
                    let v = values[*slot] + offset;
                    if !v.is_finite() {
                        return Err(CausalError::Theta(format!(
                            "non-finite value for `{}`",
                            self.slots[*slot].name
                        )));
                    }
                    match self.slots[*slot].kind {
                        SlotKind::Threshold => out.push_str(&format!("{v}")),
                        _ => {
                            if v < 0.0 {
                                return Err(CausalError::Theta(format!(
                                    "window bound for `{}` is negative",
                                    self.slots[*slot].name
                                )));
                            }
                            out.push_str(&format!("{}", v as u64));
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn instantiate(&self, theta: &[f64]) -> Result<Formula, CausalError> {
        let text = self.render(theta)?;
        parse_formula_with(
            &text,
            ParseOptions {
                clamp_inverted: true,
            },
        )
        .map_err(|e| CausalError::Template(format!("`{text}`: {e}")))
    }
}

fn split(skeleton: &str, slots: &[Slot]) -> Result<Vec<Piece>, CausalError> {
    let mut pieces = Vec::new();
    let mut rest = skeleton;
    while let Some(start) = rest.find("${") {
        if start > 0 {
            pieces.push(Piece::Text(rest[..start].to_string()));
        }
        let after = &rest[start + 2..];
        let end = after
            .find('}')
            .ok_or_else(|| CausalError::Template("unterminated `${`".into()))?;
        let inner: String = after[..end]
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect();
        let (name, offset) = match inner.find(['+', '-']) {
            Some(i) => {
                let off: f64 = inner[i + 1..]
                    .parse()
                    .map_err(|_| CausalError::Template(format!("bad offset in `${{{inner}}}`")))?;
                (
                    &inner[..i],
                    if &inner[i..i + 1] == "-" { -off } else { off },
                )
            }
            None => (&inner[..], 0.0),
        };
        let slot = slots
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| CausalError::Template(format!("unknown slot `{name}`")))?;
        pieces.push(Piece::Hole { slot, offset });
        rest = &after[end + 1..];
    }
    if !rest.is_empty() {
        pieces.push(Piece::Text(rest.to_string()));
    }
    Ok(pieces)
}
