use crate::numerics::DenseVector;

#[derive(Debug, Clone, PartialEq)]
pub struct SafeguardOutcome {
    pub x: DenseVector,
    /// Whether the tentative update was kept.
    pub accepted: bool,
}

/// Keeps `tentative` if it does not raise `energy` above its value at
/// `current`; otherwise returns `fallback(current)`.
pub fn safeguarded_step(
    tentative: DenseVector,
    fallback: impl FnOnce(&DenseVector) -> DenseVector,
    energy: impl Fn(&[f64]) -> f64,
    current: &DenseVector,
) -> SafeguardOutcome {
    if energy(&tentative) <= energy(current) {
        SafeguardOutcome {
            x: tentative,
            accepted: true,
        }
    } else {
        SafeguardOutcome {
            x: fallback(current),
            accepted: false,
        }
    }
}
