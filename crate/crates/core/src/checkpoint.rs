//! Self-describing binary checkpoint for a network and, optionally, the
//! optimizer state that trained it.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic          8 bytes  "OSGDCKPT"
//! version        u32      = 1
//! metadata_len   u32      followed by that many bytes of UTF-8 text
//! n_layers       u32      number of weight layers K
//! dims           (K+1) x u32
//! activations    K x u8   0 = ReLU, 1 = Sigmoid
//! per layer      weight d_out*d_in f64 row-major, then bias d_out f64
//! optimizer tag  u8       0 = none, 1 = SGD, 2 = Adam, 3 = O-SGD
//! if tag != 0:   eta_i, eta_l, lambda, beta, beta1, beta2, epsilon,
//!                sgd_learning_rate (8 x f64), t (u64)
//!   Adam/O-SGD, per layer: weight_m, weight_v, bias_m, bias_v (f64, row-major)
//!   O-SGD, per layer, after the moments: Ψ (d_in*d_in f64, row-major)
//! ```
//!
//! Trailing bytes after the last section are rejected.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::nn::{Activation, LayerParams, Network, NetworkSpec};
use crate::optim::{LayerStates, Moments, Optimizer, OptimizerConfig, OsgdLayerState};

pub const MAGIC: &[u8; 8] = b"OSGDCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub optimizer: Option<Optimizer>,
    /// Free-form text, by convention the effective run configuration.
    pub metadata: String,
}

pub fn save_model(net: &Network, path: &Path) -> Result<()> {
    save_checkpoint(
        &Checkpoint {
            network: net.clone(),
            optimizer: None,
            metadata: String::new(),
        },
        path,
    )
}

pub fn load_model(path: &Path) -> Result<Network> {
    Ok(load_checkpoint(path)?.network)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, encode(ckpt))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let net = &ckpt.network;
    let spec = net.spec();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, ckpt.metadata.len() as u32);
    out.extend_from_slice(ckpt.metadata.as_bytes());
    put_u32(&mut out, spec.num_layers() as u32);
    for &d in spec.layer_dims() {
        put_u32(&mut out, d as u32);
    }
    for k in 0..spec.num_layers() {
        out.push(spec.activation(k).tag());
    }
    for layer in net.layers() {
        put_f64s(&mut out, layer.weight.iter());
        put_f64s(&mut out, layer.bias.iter());
    }
    match &ckpt.optimizer {
        None => out.push(0),
        Some(opt) => {
            out.push(match opt.states {
                LayerStates::Sgd => 1,
                LayerStates::Adam(_) => 2,
                LayerStates::Osgd(_) => 3,
            });
            let c = &opt.cfg;
            put_f64s(
                &mut out,
                [
                    c.eta_i,
                    c.eta_l,
                    c.lambda,
                    c.beta,
                    c.beta1,
                    c.beta2,
                    c.epsilon,
                    opt.sgd_learning_rate,
                ]
                .iter(),
            );
            out.extend_from_slice(&opt.t.to_le_bytes());
            let put_moments = |out: &mut Vec<u8>, m: &Moments| {
                put_f64s(out, m.weight_m.iter());
                put_f64s(out, m.weight_v.iter());
                put_f64s(out, m.bias_m.iter());
                put_f64s(out, m.bias_v.iter());
            };
            match &opt.states {
                LayerStates::Sgd => {}
                LayerStates::Adam(moments) => moments.iter().for_each(|m| put_moments(&mut out, m)),
                LayerStates::Osgd(states) => {
                    for s in states {
                        put_moments(&mut out, &s.moments);
                        put_f64s(&mut out, s.psi.iter());
                    }
                }
            }
        }
    }
    out
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s<'a>(out: &mut Vec<u8>, values: impl Iterator<Item = &'a f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format(format!("{what}: size overflow")))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Array2<f64>> {
        let v = self.f64s(rows * cols, what)?;
        Ok(Array2::from_shape_vec((rows, cols), v).expect("exact length"))
    }

    fn vector(&mut self, len: usize, what: &str) -> Result<Array1<f64>> {
        Ok(Array1::from(self.f64s(len, what)?))
    }
}

pub fn decode(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, not a checkpoint file".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let meta_len = r.u32("metadata length")? as usize;
    let metadata = String::from_utf8(r.take(meta_len, "metadata")?.to_vec())
        .map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
    let n_layers = r.u32("layer count")? as usize;
    if n_layers == 0 || n_layers > 1024 {
        return Err(Error::Format(format!("implausible layer count {n_layers}")));
    }
    let dims = (0..=n_layers)
        .map(|_| r.u32("layer width").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut acts = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let tag = r.u8("activation")?;
        acts.push(
            Activation::from_tag(tag)
                .ok_or_else(|| Error::Format(format!("unknown activation tag {tag}")))?,
        );
    }
    let hidden = if n_layers > 1 { acts[0] } else { Activation::Relu };
    if acts[..n_layers - 1].iter().any(|&a| a != hidden) {
        return Err(Error::Format("hidden layers use mixed activations".into()));
    }
    let spec = NetworkSpec::new(dims.clone(), hidden, acts[n_layers - 1])
        .map_err(|e| Error::Format(e.to_string()))?;
    let mut layers = Vec::with_capacity(n_layers);
    for w in dims.windows(2) {
        let weight = r.matrix(w[1], w[0], "weights")?;
        let bias = r.vector(w[1], "bias")?;
        layers.push(LayerParams { weight, bias });
    }
    let network = Network::from_layers(spec, layers).map_err(|e| Error::Format(e.to_string()))?;

    let tag = r.u8("optimizer tag")?;
    let optimizer = if tag == 0 {
        None
    } else {
        let f = r.f64s(8, "optimizer config")?;
        let cfg = OptimizerConfig {
            eta_i: f[0],
            eta_l: f[1],
            lambda: f[2],
            beta: f[3],
            beta1: f[4],
            beta2: f[5],
            epsilon: f[6],
        };
        let sgd_learning_rate = f[7];
        let t = r.u64("step counter")?;
        let read_moments = |r: &mut Reader, l: &LayerParams| -> Result<Moments> {
            Ok(Moments {
                weight_m: r.matrix(l.d_out(), l.d_in(), "first moments")?,
                weight_v: r.matrix(l.d_out(), l.d_in(), "second moments")?,
                bias_m: r.vector(l.d_out(), "bias first moments")?,
                bias_v: r.vector(l.d_out(), "bias second moments")?,
            })
        };
        let states = match tag {
            1 => LayerStates::Sgd,
            2 => LayerStates::Adam(
                network
                    .layers()
                    .iter()
                    .map(|l| read_moments(&mut r, l))
                    .collect::<Result<_>>()?,
            ),
            3 => {
                let mut states = Vec::with_capacity(n_layers);
                for l in network.layers() {
                    let moments = read_moments(&mut r, l)?;
                    let psi = r.matrix(l.d_in(), l.d_in(), "projection matrix")?;
                    states.push(OsgdLayerState { psi, moments });
                }
                LayerStates::Osgd(states)
            }
            other => return Err(Error::Format(format!("unknown optimizer tag {other}"))),
        };
        Some(Optimizer {
            cfg,
            sgd_learning_rate,
            t,
            states,
        })
    };
    if r.pos != buf.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            buf.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        network,
        optimizer,
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let spec = NetworkSpec::new(vec![6, 5, 4, 2], Activation::Relu, Activation::Sigmoid).unwrap();
        let network = Network::init(spec, &mut rng);
        let mut opt = Optimizer::new(OptimizerKind::Osgd, OptimizerConfig::default(), &network);
        opt.t = 42;
        if let LayerStates::Osgd(states) = &mut opt.states {
            for s in states {
                s.psi.mapv_inplace(|v| v + rng.random::<f64>());
                s.moments.weight_v.fill(0.25);
            }
        }
        Checkpoint {
            network,
            optimizer: Some(opt),
            metadata: "seed = 7\n".into(),
        }
    }

    #[test]
    fn round_trip_in_memory() {
        let c = sample();
        assert_eq!(decode(&encode(&c)).unwrap(), c);
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut c2 = c.clone();
            c2.optimizer = Some(Optimizer::new(kind, OptimizerConfig::default(), &c.network));
            assert_eq!(decode(&encode(&c2)).unwrap(), c2);
        }
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = encode(&sample());
        for cut in [0, 4, 8, 11, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
    }

    #[test]
    fn version_and_magic_checks() {
        let mut bytes = encode(&sample());
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Version { found: 7, supported: 1 })));
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
        let mut bytes = encode(&sample());
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }
}
