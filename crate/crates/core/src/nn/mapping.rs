//! Weight-to-conductance mapping.
//!
//! A weighted layer is flattened to a `[fan_in, fan_out]` matrix (inputs on
//! wordlines, outputs on bitlines) and cut into crossbar-sized tiles. Signed
//! weights use differential column pairs: logical output `j` of a tile owns
//! physical columns `2j` (positive part) and `2j + 1` (negative part), so
//!
//! ```text
//! g_plus - g_minus = w / s * (g_on - g_off)
//! ```
//!
//! with the inactive side of the pair left at `g_off` and `s = max |w|` over
//! the layer. Pairs never straddle two tiles.

use serde::{Deserialize, Serialize};

use crate::adc::{AdcSpec, DigitalCode};
use crate::crossbar::{Crossbar, DeviceParams};
use crate::error::{Error, Result};
use crate::guard::SignatureStore;
use crate::nn::layer::LayerSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MappingConfig {
    pub device: DeviceParams,
    pub xbar_rows: usize,
    pub xbar_cols: usize,
    pub adc_bits: u32,
    /// Fixed ADC full scale. `None` uses each tile's physical maximum,
    /// `rows * v_max * g_on`.
    pub adc_full_scale: Option<f64>,
    /// Signature width programmed alongside the weights.
    pub k: u32,
}

impl Default for MappingConfig {
    fn default() -> Self {
        MappingConfig {
            device: DeviceParams::default(),
            xbar_rows: 128,
            xbar_cols: 128,
            adc_bits: 8,
            adc_full_scale: None,
            k: 4,
        }
    }
}

impl MappingConfig {
    pub fn validate(&self) -> Result<()> {
        self.device.validate()?;
        if self.xbar_rows == 0 || self.xbar_cols < 2 {
            return Err(Error::InvalidParameter(format!(
                "crossbar must have at least 1 row and 2 columns, got {}x{}",
                self.xbar_rows, self.xbar_cols
            )));
        }
        if let Some(fs) = self.adc_full_scale {
            AdcSpec::new(self.adc_bits, fs)?;
        } else {
            AdcSpec::physical_max(self.adc_bits, self.xbar_rows, &self.device)?;
        }
        if self.k == 0 || self.k > self.adc_bits {
            return Err(Error::InvalidParameter(format!(
                "k must lie in 1..={}, got {}",
                self.adc_bits, self.k
            )));
        }
        Ok(())
    }

    /// Logical (signed) outputs that fit one crossbar.
    pub fn pairs_per_tile(&self) -> usize {
        self.xbar_cols / 2
    }

    fn adc_for(&self, rows: usize) -> Result<AdcSpec> {
        match self.adc_full_scale {
            Some(fs) => AdcSpec::new(self.adc_bits, fs),
            None => AdcSpec::physical_max(self.adc_bits, rows, &self.device),
        }
    }
}

/// One crossbar of a mapped layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    /// First weight-matrix row (layer input) held by this tile.
    pub row_offset: usize,
    /// First logical output held by this tile.
    pub col_offset: usize,
    /// Logical outputs held; the crossbar has twice as many columns.
    pub pairs: usize,
    pub xbar: Crossbar,
    pub adc: AdcSpec,
    pub signatures: SignatureStore,
    /// MVMs issued so far; drives sampled checking.
    pub(crate) invocations: u64,
}

impl Tile {
    /// Physical column pair `(positive, negative)` of local logical output `j`.
    pub fn pair(j: usize) -> (usize, usize) {
        (2 * j, 2 * j + 1)
    }

    /// Test-vector codes of the programmed (fault-free) array.
    pub fn golden_codes(&self) -> Vec<DigitalCode> {
        self.xbar
            .nominal_mvm_unchecked(&self.xbar.test_vector())
            .into_iter()
            .map(|i| self.adc.quantize_unchecked(i))
            .collect()
    }
}

/// A weighted layer realized on a grid of tiles, stored row-tile major.
#[derive(Debug, Clone, PartialEq)]
pub struct MappedLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Weight normalization: `max |w|`, or 1 for an all-zero layer.
    pub scale: f64,
    pub row_tiles: usize,
    pub col_tiles: usize,
    pub tiles: Vec<Tile>,
    pub bias: Vec<f32>,
}

impl MappedLayer {
    pub fn tile(&self, row_tile: usize, col_tile: usize) -> &Tile {
        &self.tiles[row_tile * self.col_tiles + col_tile]
    }

    pub fn physical_columns(&self) -> usize {
        self.tiles
            .iter()
            .take(self.col_tiles)
            .map(|t| t.xbar.cols())
            .sum()
    }
}

/// Conductances `(g_plus, g_minus)` for weight `w` under scale `s`.
pub fn differential_pair(w: f64, s: f64, device: &DeviceParams) -> (f64, f64) {
    let r = (w.abs() / s).min(1.0);
    let g = device.clamp(device.g_on * r + device.g_off * (1.0 - r));
    if w > 0.0 {
        (g, device.g_off)
    } else if w < 0.0 {
        (device.g_off, g)
    } else {
        (device.g_off, device.g_off)
    }
}

/// Programs a Linear or Conv2d layer onto crossbars.
pub fn map_layer(layer: &LayerSpec, cfg: &MappingConfig) -> Result<MappedLayer> {
    cfg.validate()?;
    let (fan_in, fan_out, w, bias) = layer.weight_matrix().ok_or_else(|| {
        Error::InvalidParameter(format!("{} layers have no weights to map", layer.kind()))
    })?;
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidParameter(format!(
            "cannot map a zero-size {fan_in}x{fan_out} layer"
        )));
    }
    if w.len() != fan_in * fan_out {
        return Err(Error::Shape(format!(
            "weight buffer holds {} values, layer needs {}",
            w.len(),
            fan_in * fan_out
        )));
    }
    if let Some(bad) = w.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "non-finite weight {bad} cannot be mapped"
        )));
    }
    let max_abs = w.iter().fold(0.0f64, |m, v| m.max((*v as f64).abs()));
    let scale = if max_abs > 0.0 { max_abs } else { 1.0 };

    let pairs_per_tile = cfg.pairs_per_tile();
    let row_tiles = fan_in.div_ceil(cfg.xbar_rows);
    let col_tiles = fan_out.div_ceil(pairs_per_tile);
    let device = cfg.device;
    let mut tiles = Vec::with_capacity(row_tiles * col_tiles);
    for rt in 0..row_tiles {
        let row_offset = rt * cfg.xbar_rows;
        let rows = cfg.xbar_rows.min(fan_in - row_offset);
        for ct in 0..col_tiles {
            let col_offset = ct * pairs_per_tile;
            let pairs = pairs_per_tile.min(fan_out - col_offset);
            let cols = 2 * pairs;
            let mut g = vec![device.g_off; rows * cols];
            for r in 0..rows {
                let i = row_offset + r;
                for l in 0..pairs {
                    let j = col_offset + l;
                    let (gp, gm) = differential_pair(w[j * fan_in + i] as f64, scale, &device);
                    let (cp, cm) = Tile::pair(l);
                    g[r * cols + cp] = gp;
                    g[r * cols + cm] = gm;
                }
            }
            let xbar = Crossbar::new(rows, cols, g, device)?;
            let adc = cfg.adc_for(rows)?;
            let signatures = SignatureStore::compute(&xbar, &adc, cfg.k)?;
            tiles.push(Tile {
                row_offset,
                col_offset,
                pairs,
                xbar,
                adc,
                signatures,
                invocations: 0,
            });
        }
    }
    Ok(MappedLayer {
        fan_in,
        fan_out,
        scale,
        row_tiles,
        col_tiles,
        tiles,
        bias: bias.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;

    fn linear(fan_in: usize, fan_out: usize, f: impl Fn(usize, usize) -> f32) -> LayerSpec {
        let mut w = Vec::with_capacity(fan_in * fan_out);
        for j in 0..fan_out {
            for i in 0..fan_in {
                w.push(f(i, j));
            }
        }
        LayerSpec::Linear {
            in_features: fan_in,
            out_features: fan_out,
            weights: Tensor::new(vec![fan_out, fan_in], w).unwrap(),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }

    #[test]
    fn extreme_and_zero_weights() {
        let dev = DeviceParams::default();
        assert_eq!(differential_pair(2.0, 2.0, &dev), (dev.g_on, dev.g_off));
        assert_eq!(differential_pair(-2.0, 2.0, &dev), (dev.g_off, dev.g_on));
        assert_eq!(differential_pair(0.0, 2.0, &dev), (dev.g_off, dev.g_off));

        let cfg = MappingConfig::default();
        let one = map_layer(&linear(1, 1, |_, _| 0.7), &cfg).unwrap();
        let t = &one.tiles[0];
        assert_eq!(one.scale, 0.7f32 as f64);
        assert_eq!(t.xbar.nominal(0, 0), dev.g_on);
        assert_eq!(t.xbar.nominal(0, 1), dev.g_off);
    }

    #[test]
    fn all_zero_layer_maps_to_g_off() {
        let cfg = MappingConfig::default();
        let m = map_layer(&linear(5, 3, |_, _| 0.0), &cfg).unwrap();
        assert_eq!(m.scale, 1.0);
        assert!(m.tiles[0]
            .xbar
            .nominal_g()
            .iter()
            .all(|g| *g == cfg.device.g_off));
    }

    #[test]
    fn zero_size_and_non_weighted_rejected() {
        let cfg = MappingConfig::default();
        assert!(map_layer(&LayerSpec::Relu, &cfg).is_err());
        assert!(map_layer(&linear(0, 3, |_, _| 1.0), &cfg).is_err());
        assert!(map_layer(&linear(3, 1, |_, _| f32::NAN), &cfg).is_err());
    }

    #[test]
    fn tiling_bookkeeping_200_by_300() {
        // 200 inputs over 128-row tiles -> 2 row tiles; 300 outputs need 600
        // physical columns, 64 pairs per 128-column tile -> 5 column tiles.
        let cfg = MappingConfig::default();
        let m = map_layer(
            &linear(200, 300, |i, j| (i as f32 - j as f32) / 500.0),
            &cfg,
        )
        .unwrap();
        assert_eq!((m.row_tiles, m.col_tiles), (2, 5));
        assert_eq!(m.tiles.len(), 10);
        assert_eq!(m.physical_columns(), 600);
        assert_eq!(m.tile(0, 0).xbar.rows(), 128);
        assert_eq!(m.tile(1, 0).xbar.rows(), 72);
        assert_eq!(m.tile(0, 4).xbar.cols(), 2 * (300 - 4 * 64));
        for t in &m.tiles {
            assert!(t.xbar.rows() <= 128 && t.xbar.cols() <= 128);
            assert_eq!(t.xbar.cols(), 2 * t.pairs);
        }
    }

    #[test]
    fn conductance_difference_recovers_weights() {
        let cfg = MappingConfig {
            xbar_rows: 7,
            xbar_cols: 6,
            ..Default::default()
        };
        let f = |i: usize, j: usize| ((i * 31 + j * 17) % 23) as f32 / 11.0 - 1.0;
        let m = map_layer(&linear(20, 9, f), &cfg).unwrap();
        let range = cfg.device.g_range();
        for t in &m.tiles {
            for r in 0..t.xbar.rows() {
                for l in 0..t.pairs {
                    let (cp, cm) = Tile::pair(l);
                    let gp = t.xbar.nominal(r, cp);
                    let gm = t.xbar.nominal(r, cm);
                    assert!(gp == cfg.device.g_off || gm == cfg.device.g_off);
                    let w = f(t.row_offset + r, t.col_offset + l) as f64;
                    assert!(((gp - gm) - w / m.scale * range).abs() <= 1e-12 * range);
                }
            }
        }
    }

    #[test]
    fn signatures_match_golden_codes() {
        let cfg = MappingConfig::default();
        let m = map_layer(&linear(40, 10, |i, j| ((i + j) % 5) as f32 - 2.0), &cfg).unwrap();
        let t = &m.tiles[0];
        let golden: Vec<u32> = t.golden_codes().iter().map(|c| c.lsbs(cfg.k)).collect();
        assert_eq!(golden, t.signatures.signatures());
    }
}
