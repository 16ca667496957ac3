//! Pipeline configuration shared by the lowering, simulator and reports.

use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    /// Shell m_axi port budget.
    pub port_limit: u32,
    /// External memory bank count.
    pub hbm_banks: u32,
    /// Default FIFO depth for scalar inter-stage streams.
    pub stream_depth: u32,
    /// Constant arrays at or below this element count are copied to local
    /// memory.
    pub small_data_threshold: usize,
    /// Override the 512-bit packing lane count (testing hook).
    pub lanes_override: Option<u32>,
    /// When false, computes are fused where legal, left unpipelined and the
    /// simulator runs the stage-sequential schedule.
    pub pipeline: bool,
    /// Simulator cycle budget.
    pub max_cycles: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            port_limit: 32,
            hbm_banks: 32,
            stream_depth: 2,
            small_data_threshold: 4096,
            lanes_override: None,
            pipeline: true,
            max_cycles: 200_000_000,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, String> {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        serde_json::from_str(&text).map_err(|e| e.to_string())
    }

    /// 512-bit packing lanes for an element bit width.
    pub fn lanes_for(&self, bit_width: u32) -> Result<u32, String> {
        if let Some(l) = self.lanes_override {
            return Ok(l);
        }
        if bit_width == 0 || 512 % bit_width != 0 {
            return Err(format!(
                "element width {bit_width} does not divide the 512-bit interface"
            ));
        }
        Ok(512 / bit_width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lanes_from_width() {
        let c = Config::default();
        assert_eq!(c.lanes_for(64).unwrap(), 8);
        assert_eq!(c.lanes_for(32).unwrap(), 16);
        assert!(c.lanes_for(48).is_err());
    }
}
