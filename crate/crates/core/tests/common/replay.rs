//! Hand-driven guarded inference of a single-tile linear model, written from
//! the defining formulas only. It takes the programmed conductances and a
//! fault map, and replays test / reprogram / re-test / payload per image.

use std::collections::BTreeSet;

use xbar_guard::fault::{CellFault, FaultMap};
use xbar_guard::io::mnist::MnistSet;
use xbar_guard::DeviceParams;

pub struct ToyTile<'a> {
    pub rows: usize,
    pub cols: usize,
    /// Programmed conductances, row-major.
    pub nominal: &'a [f64],
    pub device: DeviceParams,
    pub bits: u32,
    pub k: u32,
    /// Weight normalization of the layer.
    pub scale: f64,
    pub bias: &'a [f32],
}

#[derive(Debug, Default, PartialEq)]
pub struct Replay {
    pub correct: usize,
    pub detected: BTreeSet<usize>,
    pub permanent: BTreeSet<usize>,
    pub reprogram_events: u64,
    pub test_cycles: u64,
    pub payload_cycles: u64,
    pub logits: Vec<Vec<f32>>,
}

fn currents(g: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    (0..cols)
        .map(|j| (0..rows).fold(0.0, |acc, i| acc + v[i] * g[i * cols + j]))
        .collect()
}

fn code(current: f64, full_scale: f64, bits: u32) -> u32 {
    let top = ((1u64 << bits) - 1) as f64;
    (current / full_scale * top + 0.5).floor().clamp(0.0, top) as u32
}

impl ToyTile<'_> {
    /// Guarded inference with a check before every MVM.
    pub fn replay(&self, faults: &FaultMap, data: &MnistSet, retry_budget: u32) -> Replay {
        let (rows, cols, d) = (self.rows, self.cols, self.device);
        let fs = rows as f64 * d.v_max * d.g_on;
        let top = ((1u64 << self.bits) - 1) as f64;
        let mask = (1u32 << self.k) - 1;

        let mut g = self.nominal.to_vec();
        let mut stuck = vec![false; rows * cols];
        for e in faults.entries() {
            let at = e.row * cols + e.col;
            g[at] = match e.fault {
                CellFault::Sa0(level) | CellFault::Sa1(level) => {
                    stuck[at] = true;
                    level
                }
                CellFault::Gaussian(eps) => (self.nominal[at] * (1.0 + eps)).clamp(d.g_off, d.g_on),
                CellFault::Redraw(level) => level,
            };
        }
        let probe = vec![d.v_max; rows];
        let golden: Vec<u32> = currents(self.nominal, rows, cols, &probe)
            .into_iter()
            .map(|i| code(i, fs, self.bits) & mask)
            .collect();
        let flagged = |g: &[f64]| -> BTreeSet<usize> {
            currents(g, rows, cols, &probe)
                .into_iter()
                .enumerate()
                .filter(|(j, i)| code(*i, fs, self.bits) & mask != golden[*j])
                .map(|(j, _)| j)
                .collect()
        };

        let mut out = Replay::default();
        for n in 0..data.len() {
            let x = data.pixels(n);
            // test, then up to retry_budget rewrite + re-test rounds
            out.test_cycles += 1;
            let mut bad = flagged(&g);
            out.detected.extend(&bad);
            let mut round = 0;
            while !bad.is_empty() && round < retry_budget {
                for &j in &bad {
                    for i in 0..rows {
                        if !stuck[i * cols + j] {
                            g[i * cols + j] = self.nominal[i * cols + j];
                        }
                    }
                    out.reprogram_events += 1;
                }
                out.test_cycles += 1;
                round += 1;
                bad = flagged(&g);
            }
            out.permanent.extend(&bad);

            out.payload_cycles += 1;
            let x_max = x.iter().fold(0.0f32, |m, v| m.max(*v)) as f64;
            let v: Vec<f64> = x
                .iter()
                .map(|xi| {
                    if x_max > 0.0 {
                        (*xi as f64 / x_max).clamp(0.0, 1.0) * d.v_max
                    } else {
                        0.0
                    }
                })
                .collect();
            let codes: Vec<u32> = currents(&g, rows, cols, &v)
                .into_iter()
                .map(|i| code(i, fs, self.bits))
                .collect();
            let deq = |c: u32| c as f64 / top * fs;
            let rescale = self.scale / (d.g_on - d.g_off) * (x_max / d.v_max);
            let logits: Vec<f32> = (0..cols / 2)
                .map(|l| {
                    ((deq(codes[2 * l]) - deq(codes[2 * l + 1])) * rescale) as f32 + self.bias[l]
                })
                .collect();
            let best = logits
                .iter()
                .enumerate()
                .fold(0, |b, (i, v)| if *v > logits[b] { i } else { b });
            if best == data.label(n) as usize {
                out.correct += 1;
            }
            out.logits.push(logits);
        }
        out
    }
}
