use serde::{Deserialize, Serialize};

use crate::data::DistanceMetric;
use crate::error::{Error, Result};
use crate::scalar::DType;

/// Which parts of the flow update are kept (`true`) or removed (`false`).
///
/// At most one part may be removed at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    pub retained: bool,
    pub allocation: bool,
    pub conservation: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self { retained: true, allocation: true, conservation: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMode {
    /// `Φ_o − Φ_a + Λᵀ Φ_a`
    Full,
    /// `Λᵀ Φ_a`
    WithoutRetained,
    /// `Φ_o`
    WithoutAllocation,
    /// `Φ_o + Λᵀ Φ_a`
    WithoutConservation,
}

impl FlowMode {
    pub const ALL: [FlowMode; 4] =
        [FlowMode::Full, FlowMode::WithoutRetained, FlowMode::WithoutAllocation, FlowMode::WithoutConservation];

    pub fn flags(self) -> AblationFlags {
        let mut f = AblationFlags::default();
        match self {
            FlowMode::Full => {}
            FlowMode::WithoutRetained => f.retained = false,
            FlowMode::WithoutAllocation => f.allocation = false,
            FlowMode::WithoutConservation => f.conservation = false,
        }
        f
    }

    pub fn name(self) -> &'static str {
        match self {
            FlowMode::Full => "full",
            FlowMode::WithoutRetained => "w/o retained",
            FlowMode::WithoutAllocation => "w/o allocation",
            FlowMode::WithoutConservation => "w/o conservation",
        }
    }
}

impl AblationFlags {
    pub fn mode(self) -> Result<FlowMode> {
        match (self.retained, self.allocation, self.conservation) {
            (true, true, true) => Ok(FlowMode::Full),
            (false, true, true) => Ok(FlowMode::WithoutRetained),
            (true, false, true) => Ok(FlowMode::WithoutAllocation),
            (true, true, false) => Ok(FlowMode::WithoutConservation),
            _ => Err(Error::Config(format!("unsupported ablation combination {self:?}; remove at most one part"))),
        }
    }
}

/// Hyperparameters of one network instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Token width.
    pub d: usize,
    pub heads: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub input_len: usize,
    pub horizon: usize,
    pub fam_layers: usize,
    pub experts: usize,
    /// Number of hyper-connection streams.
    pub expansion: usize,
    pub mmlp_hidden_mult: usize,
    pub distance_metric: DistanceMetric,
    pub ablation: AblationFlags,
    pub dtype: DType,
    pub seed: u64,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            heads: 4,
            patch_len: 4,
            stride: 4,
            input_len: 12,
            horizon: 12,
            fam_layers: 2,
            experts: 16,
            expansion: 2,
            mmlp_hidden_mult: 2,
            distance_metric: DistanceMetric::Euclidean,
            ablation: AblationFlags::default(),
            dtype: DType::Fp32,
            seed: 0,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn patches(&self) -> usize {
        (self.input_len - self.patch_len) / self.stride + 1
    }

    pub fn hidden(&self) -> usize {
        self.mmlp_hidden_mult * self.d
    }

    pub fn mode(&self) -> Result<FlowMode> {
        self.ablation.mode()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        let positive = [
            ("d", self.d),
            ("heads", self.heads),
            ("patch_len", self.patch_len),
            ("stride", self.stride),
            ("input_len", self.input_len),
            ("horizon", self.horizon),
            ("fam_layers", self.fam_layers),
            ("experts", self.experts),
            ("expansion", self.expansion),
            ("mmlp_hidden_mult", self.mmlp_hidden_mult),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return err(format!("`{name}` must be positive"));
        }
        if self.d % self.heads != 0 {
            return err(format!("d = {} is not divisible by heads = {}", self.d, self.heads));
        }
        if self.patch_len > self.input_len {
            return err(format!("patch_len {} exceeds input_len {}", self.patch_len, self.input_len));
        }
        if (self.input_len - self.patch_len) % self.stride != 0 {
            return err(format!(
                "(input_len − patch_len) = {} is not a multiple of stride {}",
                self.input_len - self.patch_len,
                self.stride
            ));
        }
        if !(self.layer_norm_eps > 0.0) {
            return err("layer_norm_eps must be positive".into());
        }
        self.mode()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!((c.d, c.heads, c.fam_layers, c.experts, c.head_dim()), (64, 4, 2, 16, 16));
        assert_eq!(c.patches(), 3);
    }

    #[test]
    fn rejects_bad_geometry() {
        let c = ModelConfig { d: 10, heads: 4, ..Default::default() };
        assert!(c.validate().is_err());
        let c = ModelConfig { patch_len: 5, stride: 2, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn ablation_combinations() {
        for m in FlowMode::ALL {
            assert_eq!(m.flags().mode().unwrap(), m);
        }
        let two = AblationFlags { retained: false, allocation: false, conservation: true };
        assert!(matches!(two.mode(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let r: std::result::Result<ModelConfig, _> = serde_json_like();
        assert!(r.is_err());
    }

    fn serde_json_like() -> std::result::Result<ModelConfig, String> {
        // the core crate has no JSON dependency; exercise deny_unknown_fields via the CSV-free
        // `serde::de::value` map deserializer
        use serde::de::value::{Error as DeError, MapDeserializer};
        let entries = vec![("d", 8usize), ("bogus", 1)];
        ModelConfig::deserialize(MapDeserializer::<_, DeError>::new(entries.into_iter())).map_err(|e| e.to_string())
    }
}
