use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("alpha = {alpha} with d_feature = {d_feature} leaves an empty subspace ({d_domain}, {d_point})")]
    DegenerateSplit {
        alpha: f64,
        d_feature: usize,
        d_domain: usize,
        d_point: usize,
    },
    #[error("alpha must lie in (0, 1), got {0}")]
    Alpha(f64),
    #[error("grid {dim} size {size} is not divisible by patch size {patch}")]
    Indivisible {
        dim: &'static str,
        size: usize,
        patch: usize,
    },
    #[error("{0} must be positive")]
    Zero(&'static str),
}

/// How the network reads its input and lays out its output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskMode {
    /// `[C_in, H, W]` frames in, `[C_out, H, W]` frames out.
    Frames,
    /// A 1D initial state `[C_in, n_x]` is tiled along time and the whole
    /// `[C_out, n_t, n_x]` space-time field is emitted at once.
    FullField,
}

/// Where PDE components enter the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conditioning {
    /// Embedded components modulate every block.
    Full,
    /// All conditions are zero; the network never sees the components.
    Ablated,
    /// Coefficients and point fields are appended to the input as extra
    /// channels; conditions are zero.
    ConcatInput,
}

/// Source of the equation-symbol vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SymbolSource {
    Hashed,
    Precomputed { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_feature: usize,
    /// Fraction of the feature axis given to domain-wise conditions.
    pub alpha: f64,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_head: usize,
    /// Patch height and width on the model grid.
    pub patch: [usize; 2],
    /// Model grid `[H, W]`: `[n_t, n_x]` in full-field mode.
    pub grid: [usize; 2],
    pub in_channels: usize,
    pub out_channels: usize,
    pub task_mode: TaskMode,
    pub conditioning: Conditioning,
    /// Width of the deep conditions.
    pub d_cond: usize,
    /// Hidden width of every two-layer condition MLP.
    pub cond_hidden: usize,
    pub symbols: SymbolSource,
    pub symbol_dim: usize,
    /// Coefficient names the coefficient adapter reads, in input order.
    pub coefficient_keys: Vec<String>,
    /// Coefficients fed to the network as `log10(value)`.
    pub log_coefficients: Vec<String>,
    /// Component kinds whose adapters start at zero (see `ComponentKind`).
    pub zero_init_adapters: Vec<String>,
    pub ln_eps: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_feature: 64,
            alpha: 0.5,
            n_layers: 4,
            n_heads: 4,
            d_head: 16,
            patch: [4, 4],
            grid: [16, 64],
            in_channels: 1,
            out_channels: 1,
            task_mode: TaskMode::FullField,
            conditioning: Conditioning::Full,
            d_cond: 64,
            cond_hidden: 64,
            symbols: SymbolSource::Hashed,
            symbol_dim: 64,
            coefficient_keys: Vec::new(),
            log_coefficients: Vec::new(),
            zero_init_adapters: Vec::new(),
            ln_eps: 1e-5,
            seed: 0,
        }
    }
}

/// `(⌊α·d⌋, d − ⌊α·d⌋)`, rejecting an empty part.
pub fn split_subspace(alpha: f64, d_feature: usize) -> Result<(usize, usize), ConfigError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ConfigError::Alpha(alpha));
    }
    let d_domain = (alpha * d_feature as f64).floor() as usize;
    let d_point = d_feature - d_domain;
    if d_domain == 0 || d_point == 0 {
        return Err(ConfigError::DegenerateSplit {
            alpha,
            d_feature,
            d_domain,
            d_point,
        });
    }
    Ok((d_domain, d_point))
}

impl ModelConfig {
    pub fn split(&self) -> Result<(usize, usize), ConfigError> {
        split_subspace(self.alpha, self.d_feature)
    }

    /// Input channels after any appended condition channels.
    pub fn effective_in_channels(&self) -> usize {
        match self.conditioning {
            Conditioning::ConcatInput => self.in_channels + self.coefficient_keys.len() + 4,
            _ => self.in_channels,
        }
    }

    pub fn n_tokens(&self) -> usize {
        (self.grid[0] / self.patch[0]) * (self.grid[1] / self.patch[1])
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("d_feature", self.d_feature),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_head", self.d_head),
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("d_cond", self.d_cond),
            ("cond_hidden", self.cond_hidden),
            ("symbol_dim", self.symbol_dim),
            ("patch height", self.patch[0]),
            ("patch width", self.patch[1]),
        ] {
            if v == 0 {
                return Err(ConfigError::Zero(name));
            }
        }
        self.split()?;
        for (dim, size, patch) in [("height", self.grid[0], self.patch[0]), ("width", self.grid[1], self.patch[1])] {
            if size == 0 || size % patch != 0 {
                return Err(ConfigError::Indivisible { dim, size, patch });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_examples() {
        assert_eq!(split_subspace(0.5, 256), Ok((128, 128)));
        assert_eq!(split_subspace(0.75, 256), Ok((192, 64)));
        assert_eq!(split_subspace(0.5, 255), Ok((127, 128)));
        assert!(matches!(split_subspace(0.1, 4), Err(ConfigError::DegenerateSplit { .. })));
        assert!(matches!(split_subspace(1.0, 4), Err(ConfigError::Alpha(_))));
    }

    #[test]
    fn indivisible_grid_names_both_sizes() {
        let cfg = ModelConfig {
            grid: [16, 30],
            patch: [4, 4],
            ..ModelConfig::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("30") && msg.contains('4'), "{msg}");
    }

    #[test]
    fn token_count_for_square_grid() {
        let cfg = ModelConfig {
            grid: [64, 64],
            patch: [4, 4],
            ..ModelConfig::default()
        };
        assert_eq!(cfg.n_tokens(), 256);
    }
}
