//! Deterministic linear gate policies.

/// A policy taking action 1 iff `g₁x₁ + g₂x₂ > 0`. Ties resolve to action 0,
/// so the zero gate always acts 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearPolicy {
    pub gate: [f64; 2],
}

impl LinearPolicy {
    pub fn new(g1: f64, g2: f64) -> Self {
        LinearPolicy { gate: [g1, g2] }
    }

    pub fn from_gate(gate: [f64; 2]) -> Self {
        LinearPolicy { gate }
    }

    pub fn act(&self, x1: f64, x2: f64) -> bool {
        self.gate[0] * x1 + self.gate[1] * x2 > 0.0
    }

    pub fn is_degenerate(&self) -> bool {
        self.gate == [0.0, 0.0]
    }

    /// True if both policies choose the same action at every given context.
    pub fn same_decisions_on<'a>(
        &self,
        other: &LinearPolicy,
        contexts: impl IntoIterator<Item = &'a (f64, f64)>,
    ) -> bool {
        contexts
            .into_iter()
            .all(|&(x1, x2)| self.act(x1, x2) == other.act(x1, x2))
    }
}
