//! Per-layer attention cost. One FLOP is one multiply-accumulate; only the
//! projections and the two attention products are counted.
//!
//! The closed forms count the query and output projections (`2·N_q·d²`) and
//! one attention product (`N_q·N_kv·d`). The instrumented counter tallies the
//! Q/O projection products and averages the score and mixing products, which
//! is the same quantity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::tape::{MacCategory, MacCounter, Tape};
use crate::model::{attention_apply, attention_kv, GraphMode, ParamStore};
use crate::numerics::{RngSeed, SplitMix64, Tensor2D};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FlopError {
    #[error("hidden size {d} is not divisible by {heads} heads")]
    HeadMismatch { d: u64, heads: u64 },
    #[error("rank {rank} must lie in (0, {d})")]
    InvalidRank { rank: u64, d: u64 },
    #[error("hidden size and head count must be positive")]
    ZeroWidth,
    #[error("low-rank count needs a rank")]
    RankMissing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopSpec {
    pub n_v: u64,
    pub n_t: u64,
    pub d: u64,
    pub heads: u64,
    pub rank: Option<u64>,
}

impl FlopSpec {
    pub fn new(n_v: u64, n_t: u64, d: u64, heads: u64, rank: Option<u64>) -> Result<Self, FlopError> {
        if d == 0 || heads == 0 {
            return Err(FlopError::ZeroWidth);
        }
        if !d.is_multiple_of(heads) {
            return Err(FlopError::HeadMismatch { d, heads });
        }
        if let Some(r) = rank {
            if r == 0 || r >= d {
                return Err(FlopError::InvalidRank { rank: r, d });
            }
        }
        Ok(Self { n_v, n_t, d, heads, rank })
    }

    pub fn head_dim(&self) -> u64 {
        self.d / self.heads
    }
}

pub fn flops_vis(s: &FlopSpec) -> u64 {
    2 * s.n_v * s.d * s.d + s.n_v * s.n_v * s.d
}

pub fn flops_text(s: &FlopSpec) -> u64 {
    2 * s.n_t * s.d * s.d + s.n_t * s.n_t * s.d
}

/// Vision tokens query the text tokens.
pub fn flops_cross(s: &FlopSpec) -> u64 {
    2 * s.n_v * s.d * s.d + s.n_v * s.n_t * s.d
}

/// How the low-rank substitution applies to the two projection terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LowRankReading {
    /// The pair `2d²` becomes `2dr`.
    #[default]
    Literal,
    /// Each `d²` becomes `2dr`, giving `4dr` per token.
    PerProjection,
}

pub fn flops_cross_lowrank(s: &FlopSpec, reading: LowRankReading) -> Result<u64, FlopError> {
    let r = s.rank.ok_or(FlopError::RankMissing)?;
    let per_token = match reading {
        LowRankReading::Literal => 2 * s.d * r,
        LowRankReading::PerProjection => 4 * s.d * r,
    };
    Ok(s.n_v * per_token + s.n_v * s.n_t * s.d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DominantTerm {
    VisionQuadratic,
    TextQuadratic,
    CrossModal,
    Projection,
}

impl DominantTerm {
    pub fn label(self) -> &'static str {
        match self {
            DominantTerm::VisionQuadratic => "vision-quadratic",
            DominantTerm::TextQuadratic => "text-quadratic",
            DominantTerm::CrossModal => "cross-modal",
            DominantTerm::Projection => "projection",
        }
    }
}

/// The largest term of the three layers at this spec. Ties among the
/// token-quadratic terms go to the cross-modal one.
pub fn dominant_term(s: &FlopSpec) -> DominantTerm {
    let proj = 4 * s.n_v * s.d * s.d + 2 * s.n_t * s.d * s.d;
    let cross = s.n_v * s.n_t * s.d;
    let vis = s.n_v * s.n_v * s.d;
    let text = s.n_t * s.n_t * s.d;
    let (best, term) = if cross >= vis && cross >= text {
        (cross, DominantTerm::CrossModal)
    } else if vis >= text {
        (vis, DominantTerm::VisionQuadratic)
    } else {
        (text, DominantTerm::TextQuadratic)
    };
    if proj > best {
        DominantTerm::Projection
    } else {
        term
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRow {
    pub layer: String,
    pub projection: u64,
    pub attention: u64,
    pub total: u64,
}

/// Per-layer closed-form rows, plus the low-rank cross layer when a rank is set.
pub fn layer_report(s: &FlopSpec, reading: LowRankReading) -> Vec<LayerRow> {
    let row = |layer: &str, projection: u64, attention: u64| LayerRow {
        layer: layer.into(),
        projection,
        attention,
        total: projection + attention,
    };
    let d2 = s.d * s.d;
    let mut rows = vec![
        row("vision self-attention", 2 * s.n_v * d2, s.n_v * s.n_v * s.d),
        row("text self-attention", 2 * s.n_t * d2, s.n_t * s.n_t * s.d),
        row("cross-modal attention", 2 * s.n_v * d2, s.n_v * s.n_t * s.d),
    ];
    if let Ok(total) = flops_cross_lowrank(s, reading) {
        let attention = s.n_v * s.n_t * s.d;
        rows.push(row("cross-modal low-rank", total - attention, attention));
    }
    rows
}

/// Counted cost of one attention block under the closed-form convention.
pub fn convention_count(c: &MacCounter) -> u64 {
    let attn = c.get(MacCategory::Scores) + c.get(MacCategory::Mix);
    c.get(MacCategory::QProj) + c.get(MacCategory::OProj) + attn / 2
}

fn noise(rng: &mut SplitMix64, rows: usize, cols: usize, std: f64) -> Tensor2D {
    let data = (0..rows * cols).map(|_| std * rng.normal()).collect();
    Tensor2D::from_vec(rows, cols, data).expect("shape matches data")
}

fn random_block(d: usize, seed: RngSeed) -> ParamStore {
    let mut rng = SplitMix64::new(seed);
    let mut rand = |r: usize, c: usize| noise(&mut rng, r, c, 0.1);
    let mut store = ParamStore::default();
    for part in ["q", "k", "v", "o"] {
        store.insert(&format!("blk.{part}.w"), rand(d, d));
        store.insert(&format!("blk.{part}.b"), rand(1, d));
    }
    store
}

/// Runs the model's attention block with `n_q` query rows against `n_kv`
/// memory rows on a counting tape.
pub fn instrumented_attention(n_q: usize, n_kv: usize, d: usize, heads: usize, seed: RngSeed) -> MacCounter {
    let store = random_block(d, seed);
    let mut rng = SplitMix64::new(seed.derive(1));
    let mut tape = Tape::with_mac_counter();
    let x = tape.leaf(noise(&mut rng, n_q, d, 1.0));
    let mem = if n_q == n_kv {
        x
    } else {
        tape.leaf(noise(&mut rng, n_kv, d, 1.0))
    };
    let kv = attention_kv(&mut tape, &store, GraphMode::Infer, mem, "blk");
    attention_apply(&mut tape, &store, GraphMode::Infer, x, kv, "blk", heads, false);
    tape.mac_counter().cloned().unwrap_or_default()
}

/// Counted `(vis, text, cross)` at the given sizes, comparable to the closed forms.
pub fn counted_flops(s: &FlopSpec, seed: RngSeed) -> (u64, u64, u64) {
    let (nv, nt, d, h) = (s.n_v as usize, s.n_t as usize, s.d as usize, s.heads as usize);
    let count = |q, kv, i| convention_count(&instrumented_attention(q, kv, d, h, seed.derive(i)));
    (count(nv, nv, 0), count(nt, nt, 1), count(nv, nt, 2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(n_v: u64, n_t: u64, d: u64) -> FlopSpec {
        FlopSpec::new(n_v, n_t, d, 1, None).unwrap()
    }

    #[test]
    fn worked_values() {
        let s = FlopSpec::new(16, 8, 64, 4, Some(4)).unwrap();
        assert_eq!(flops_vis(&s), 147_456);
        assert_eq!(flops_text(&s), 69_632);
        assert_eq!(flops_cross(&s), 139_264);
        assert_eq!(flops_cross_lowrank(&s, LowRankReading::Literal), Ok(16_384));
        assert_eq!(flops_cross_lowrank(&s, LowRankReading::PerProjection), Ok(24_576));
    }

    #[test]
    fn degenerate_and_limit_cases() {
        let d = 64;
        assert_eq!(flops_vis(&spec(1, 1, d)), 2 * d * d + d);
        assert_eq!(flops_text(&spec(1, 1, d)), 2 * d * d + d);
        assert_eq!(flops_cross(&spec(16, 0, d)), 2 * 16 * d * d);
        let a = spec(16, 8, d);
        let b = spec(32, 8, d);
        assert_eq!(b.n_v * b.n_v * d, 4 * (a.n_v * a.n_v * d));
        // Full rank reproduces the dense projection term under the literal reading.
        let full = FlopSpec { rank: Some(d), ..a };
        assert_eq!(flops_cross_lowrank(&full, LowRankReading::Literal).unwrap(), flops_cross(&a));
        assert_eq!(flops_cross_lowrank(&a, LowRankReading::Literal), Err(FlopError::RankMissing));
    }

    #[test]
    fn spec_validation() {
        assert_eq!(FlopSpec::new(1, 1, 10, 3, None), Err(FlopError::HeadMismatch { d: 10, heads: 3 }));
        assert_eq!(FlopSpec::new(1, 1, 8, 2, Some(8)), Err(FlopError::InvalidRank { rank: 8, d: 8 }));
        assert_eq!(FlopSpec::new(1, 1, 0, 1, None), Err(FlopError::ZeroWidth));
    }

    #[test]
    fn dominant_term_regimes() {
        assert_eq!(dominant_term(&spec(4096, 4096, 16)), DominantTerm::CrossModal);
        assert_eq!(dominant_term(&spec(4096, 1, 16)), DominantTerm::VisionQuadratic);
        assert_eq!(dominant_term(&spec(1, 4096, 16)), DominantTerm::TextQuadratic);
        assert_eq!(dominant_term(&spec(2, 2, 4096)), DominantTerm::Projection);
    }

    #[test]
    fn counter_matches_formulas_at_worked_point() {
        let s = FlopSpec::new(16, 8, 64, 4, None).unwrap();
        assert_eq!(counted_flops(&s, RngSeed(0)), (flops_vis(&s), flops_text(&s), flops_cross(&s)));
    }

    #[test]
    fn report_rows_sum() {
        let s = FlopSpec::new(16, 8, 64, 4, Some(4)).unwrap();
        let rows = layer_report(&s, LowRankReading::Literal);
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[2].total, flops_cross(&s));
        assert_eq!(rows[3].total, 16_384);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn counter_matches_formulas(n_v in 1u64..12, n_t in 1u64..12, dh in 1u64..5, heads in 1u64..4) {
            let s = FlopSpec::new(n_v, n_t, dh * heads, heads, None).unwrap();
            prop_assert_eq!(counted_flops(&s, RngSeed(n_v)), (flops_vis(&s), flops_text(&s), flops_cross(&s)));
        }

        #[test]
        fn monotone_in_each_argument(n_v in 1u64..200, n_t in 1u64..200, d in 1u64..200) {
            let base = spec(n_v, n_t, d);
            for bigger in [spec(n_v + 1, n_t, d), spec(n_v, n_t + 1, d), spec(n_v, n_t, d + 1)] {
                prop_assert!(flops_vis(&bigger) >= flops_vis(&base));
                prop_assert!(flops_text(&bigger) >= flops_text(&base));
                prop_assert!(flops_cross(&bigger) >= flops_cross(&base));
            }
            prop_assert!(flops_vis(&base) > 0 && flops_text(&base) > 0 && flops_cross(&base) > 0);
        }
    }
}
