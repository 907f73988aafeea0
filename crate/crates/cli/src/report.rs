//! Serializable ladder reports.

use std::fmt::Write as _;

use dirac_core::reduction::ConstraintLadder;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub label: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub expression: String,
    /// Level that produced the constraint; `None` for imposed constraints.
    pub level: Option<usize>,
    pub provenance: Vec<Term>,
    /// Whether fiber independence was confirmed symbolically.
    pub symbolic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub index: usize,
    pub active: usize,
    pub fiber_rank: usize,
    pub determining: Vec<String>,
    pub newly_determined: Vec<String>,
    pub new_constraints: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    pub name: String,
    pub classification: String,
    pub morse_rank: usize,
    pub fiber_dim: usize,
    pub levels: Vec<LevelReport>,
    pub base_constraints: Vec<ConstraintReport>,
    pub determining: Vec<String>,
    pub determined_fibers: Vec<String>,
    pub gauge_fibers: Vec<String>,
    pub stabilized_at: usize,
    pub final_dimension: usize,
    pub seed: Vec<NamedValue>,
    pub tangency_residual: f64,
}

impl LadderReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        classification: String,
        morse_rank: usize,
        base_names: &[String],
        fiber_names: &[String],
        ladder: &ConstraintLadder,
        tangency_residual: f64,
    ) -> Self {
        let fibers = |idx: &[usize]| idx.iter().map(|&i| fiber_names[i].clone()).collect::<Vec<_>>();
        let base_constraints: Vec<ConstraintReport> = ladder
            .base_constraints
            .iter()
            .map(|c| ConstraintReport {
                expression: c.field.to_string(),
                level: c.level,
                provenance: c
                    .provenance
                    .terms
                    .iter()
                    .map(|(label, coefficient)| Term {
                        label: label.clone(),
                        coefficient: *coefficient,
                    })
                    .collect(),
                symbolic: c.provenance.symbolic,
            })
            .collect();
        let levels = ladder
            .levels
            .iter()
            .map(|l| LevelReport {
                index: l.index,
                active: l.active,
                fiber_rank: l.fiber_rank,
                determining: l.determining.clone(),
                newly_determined: fibers(&l.newly_determined),
                new_constraints: l
                    .new_constraints
                    .iter()
                    .map(|&i| base_constraints[i].expression.clone())
                    .collect(),
            })
            .collect();
        LadderReport {
            name: name.to_string(),
            classification,
            morse_rank,
            fiber_dim: fiber_names.len(),
            levels,
            base_constraints,
            determining: ladder.determining_labels.clone(),
            determined_fibers: fibers(&ladder.determined_fibers),
            gauge_fibers: fibers(&ladder.gauge_fibers),
            stabilized_at: ladder.stabilized_at,
            final_dimension: ladder.final_dimension,
            seed: base_names
                .iter()
                .chain(fiber_names)
                .zip(&ladder.seed)
                .map(|(n, v)| NamedValue {
                    name: n.clone(),
                    value: *v,
                })
                .collect(),
            tangency_residual,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Human-readable form printed by `reduce`.
    pub fn to_text(&self) -> String {
        let list = |v: &[String]| if v.is_empty() { "none".to_string() } else { v.join(", ") };
        let mut out = String::new();
        let _ = writeln!(out, "model: {}", self.name);
        let _ = writeln!(out, "classification: {}", classification_line(&self.classification, self.morse_rank, self.fiber_dim));
        for l in &self.levels {
            let _ = writeln!(
                out,
                "level {}: {} active, fiber rank {}, determined [{}], new constraints [{}]",
                l.index,
                l.active,
                l.fiber_rank,
                l.newly_determined.join(", "),
                l.new_constraints.join(", ")
            );
        }
        let _ = writeln!(out, "base constraints:");
        if self.base_constraints.is_empty() {
            let _ = writeln!(out, "  none");
        }
        for c in &self.base_constraints {
            let from: Vec<String> = c.provenance.iter().map(|t| format!("{}*{}", t.coefficient, t.label)).collect();
            let level = c.level.map_or("imposed".to_string(), |l| format!("level {}", l));
            let _ = writeln!(out, "  {}  ({}; from {})", c.expression, level, from.join(" + "));
        }
        let _ = writeln!(out, "determined fibers: {}", list(&self.determined_fibers));
        let _ = writeln!(out, "gauge fibers: {}", list(&self.gauge_fibers));
        let _ = writeln!(out, "stabilized at level {}", self.stabilized_at);
        let _ = writeln!(out, "final manifold dimension: {}", self.final_dimension);
        let _ = writeln!(out, "tangency residual: {:.6e}", self.tangency_residual);
        out
    }
}

/// `Morse, rank 1/1`, `WeakMorse(0), rank 0/1`.
pub fn classification_line(classification: &str, rank: usize, k: usize) -> String {
    format!("{}, rank {}/{}", classification, rank, k)
}
