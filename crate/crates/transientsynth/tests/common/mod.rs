#![allow(dead_code)]

use transientsynth::core::{NetConfig, NetworkParams};

/// A hand-wired network that emits code 128 while volume is 0 and code 255
/// as soon as volume is high: unit 0 of every layer copies `tanh(volume)`
/// upward with the update gate held shut, so the response is immediate.
pub fn volume_gate() -> NetworkParams {
    let cfg = NetConfig::default();
    let h = cfg.hidden;
    let mut p = NetworkParams::zeros(cfg);
    let w = p.as_mut_slice();
    w[cfg.input_w() + 2] = 2.0; // unit 0 <- volume
    for l in 0..cfg.n_layers {
        let off = cfg.layer(l);
        w[off.w + 2 * h * h] = 2.0; // candidate unit 0 <- input unit 0
        w[off.b] = -30.0; // update gate closed
    }
    w[cfg.output_w() + 255 * h] = 20.0;
    w[cfg.output_b() + 128] = 1.0;
    p
}

pub fn tiny_config() -> NetConfig {
    NetConfig { n_layers: 1, hidden: 2, ..NetConfig::default() }
}
