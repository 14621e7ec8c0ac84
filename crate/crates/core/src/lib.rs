//! Cross-modal modulator (CMM) fusion block.
//!
//! Text tokens are correlated against a handful of grid-level visual
//! embeddings, each token keeps its top-k grids, and the resulting per-token
//! visual context drives gated FiLM conditioning around a linear-time
//! state-space mixer. Two attention connectors (prepend and cross-attention)
//! are provided for comparison, along with seeded fixtures and a binary
//! weight bundle format.
//!
//! ```
//! use cmm_core::{cmm_forward, generate_inputs, generate_weights, CmmConfig};
//!
//! let cfg = CmmConfig::new(16, 5, 32);
//! let weights = generate_weights(&cfg, 42).unwrap();
//! let inputs = generate_inputs(16, 5, 32, 32, 42).unwrap();
//! let out = cmm_forward(&inputs.xt, &inputs.xv, &weights, &cfg).unwrap();
//! assert_eq!(out.pooled.len(), 32);
//! ```

pub mod baseline;
pub mod cmm;
pub mod correlation;
pub mod error;
pub mod film;
pub mod fixtures;
pub mod layers;
pub mod numeric;
pub mod ssm;

pub use baseline::{
    cross_attention_forward, multi_head_attention, prepend_forward, AttentionWeights,
    BaselineWeights,
};
pub use cmm::{cmm_forward, cmm_forward_traced, CmmConfig, CmmTrace, CmmWeights, FusionOutput};
pub use correlation::{
    CorrelationConfig, CorrelationScores, CorrelationWeights, GridEmbeddings, TokenEmbeddings,
};
pub use error::{CmmError, Result};
pub use film::{FilmWeights, Modulation};
pub use fixtures::{
    generate_baseline_weights, generate_inputs, generate_weights, load_bundle, save_bundle,
    Bundle, SyntheticInputs,
};
pub use layers::{FeedForward, LayerNormParams};
pub use numeric::{Matrix, Tensor3};
pub use ssm::{DiagonalSsmParams, SelectiveScanParams, SsmBackendChoice, SsmParams};
