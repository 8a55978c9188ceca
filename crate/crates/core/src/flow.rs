//! Affine coupling flow `G_θ`.
//!
//! Layer `ℓ` updates the coordinates selected by its mask `r` and conditions
//! on the complement `r̄ = 1 - r`:
//!
//! ```text
//! v = u ⊙ exp(r ⊙ s(r̄ ⊙ u)) + r ⊙ t(r̄ ⊙ u),    log|det| = Σ r ⊙ s(r̄ ⊙ u)
//! ```
//!
//! Even layers update odd (0-based) coordinates, odd layers the even ones.
//! `s` and `t` are dense nets `d → h → … → h → d` with leaky-ReLU hidden
//! activations; `s` ends in `tanh`, `t` is linear. All weights live in one flat
//! vector θ, which is what the optimizer sees.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var, LEAKY_SLOPE};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SLTVFLW1";

/// Architecture of the flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowSpec {
    pub d: usize,
    pub coupling_pairs: usize,
    pub hidden: usize,
    /// Hidden layers per `s`/`t` net.
    pub hidden_layers: usize,
}

impl FlowSpec {
    /// Three hidden layers per subnetwork, as in the reference architecture.
    pub fn new(d: usize, coupling_pairs: usize, hidden: usize) -> Result<Self> {
        Self::with_hidden_layers(d, coupling_pairs, hidden, 3)
    }

    pub fn with_hidden_layers(d: usize, coupling_pairs: usize, hidden: usize, hidden_layers: usize) -> Result<Self> {
        if d == 0 || coupling_pairs == 0 || hidden == 0 || hidden_layers == 0 {
            return Err(Error::Invalid(format!(
                "flow spec fields must be positive: d={d}, coupling_pairs={coupling_pairs}, hidden={hidden}, hidden_layers={hidden_layers}"
            )));
        }
        Ok(Self {
            d,
            coupling_pairs,
            hidden,
            hidden_layers,
        })
    }

    pub fn layers(&self) -> usize {
        2 * self.coupling_pairs
    }

    /// `(in, out)` of each linear map in one subnetwork.
    fn net_shapes(&self) -> Vec<(usize, usize)> {
        let mut v = vec![(self.d, self.hidden)];
        for _ in 1..self.hidden_layers {
            v.push((self.hidden, self.hidden));
        }
        v.push((self.hidden, self.d));
        v
    }

    fn net_len(&self) -> usize {
        self.net_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn param_count(&self) -> usize {
        self.layers() * 2 * self.net_len()
    }

    /// Whether layer `layer` updates coordinate `j`.
    pub fn updates(&self, layer: usize, j: usize) -> bool {
        (j % 2 == 1) == layer.is_multiple_of(2)
    }

    fn mask(&self, layer: usize) -> Vec<f64> {
        (0..self.d)
            .map(|j| if self.updates(layer, j) { 1.0 } else { 0.0 })
            .collect()
    }

    /// Offsets of each linear map: `[layer][net][linear] = (w_off, b_off, out, in)`,
    /// with net 0 = `s` and net 1 = `t`. Weights are stored row-major
    /// (`out × in`) and followed by the `out` biases.
    fn slots(&self) -> Vec<[Vec<Slot>; 2]> {
        let shapes = self.net_shapes();
        let mut off = 0;
        let mut out = Vec::with_capacity(self.layers());
        for _ in 0..self.layers() {
            let mut nets: [Vec<Slot>; 2] = [Vec::new(), Vec::new()];
            for net in nets.iter_mut() {
                for &(i, o) in &shapes {
                    net.push(Slot {
                        w: off,
                        b: off + i * o,
                        rows: o,
                        cols: i,
                    });
                    off += i * o + o;
                }
            }
            out.push(nets);
        }
        out
    }

    /// Label used in experiment keys, e.g. `2_4`.
    pub fn label(&self) -> String {
        format!("{}_{}", self.coupling_pairs, self.hidden)
    }
}

#[derive(Clone, Copy, Debug)]
struct Slot {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

/// Flow weights θ with the spec they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowParams {
    pub spec: FlowSpec,
    pub theta: Vec<f64>,
    /// Seed the weights were initialised from (kept for the file header).
    pub seed: u64,
}

impl FlowParams {
    /// Fan-in uniform hidden weights; the last linear map of every subnetwork
    /// is zero, so a fresh flow is the identity.
    pub fn init(spec: FlowSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; spec.param_count()];
        for layer in spec.slots() {
            for net in layer.iter() {
                let last = net.len() - 1;
                for slot in &net[..last] {
                    let bound = 1.0 / (slot.cols as f64).sqrt();
                    for x in &mut theta[slot.w..slot.b + slot.rows] {
                        *x = rng.random_range(-bound..bound);
                    }
                }
            }
        }
        Self { spec, theta, seed }
    }

    pub fn from_theta(spec: FlowSpec, theta: Vec<f64>, seed: u64) -> Result<Self> {
        if theta.len() != spec.param_count() {
            return Err(Error::Dimension {
                expected: spec.param_count(),
                got: theta.len(),
            });
        }
        Ok(Self { spec, theta, seed })
    }

    /// Runs both subnetworks of `layer` on the conditioning input.
    fn nets(&self, slots: &[Vec<Slot>; 2], cond: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let run = |net: &[Slot], tanh_out: bool| {
            let mut h = cond.to_vec();
            for (i, s) in net.iter().enumerate() {
                let mut z = vec![0.0; s.rows];
                for (r, zr) in z.iter_mut().enumerate() {
                    let row = &self.theta[s.w + r * s.cols..s.w + (r + 1) * s.cols];
                    *zr = self.theta[s.b + r] + row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
                }
                let last = i + 1 == net.len();
                for x in z.iter_mut() {
                    *x = if !last {
                        if *x >= 0.0 {
                            *x
                        } else {
                            LEAKY_SLOPE * *x
                        }
                    } else if tanh_out {
                        x.tanh()
                    } else {
                        *x
                    };
                }
                h = z;
            }
            h
        };
        (run(&slots[0], true), run(&slots[1], false))
    }

    fn conditioning(&self, layer: usize, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(j, &x)| if self.spec.updates(layer, j) { 0.0 } else { x })
            .collect()
    }

    /// Applies coupling layer `layer` alone, returning its log-determinant.
    pub fn apply_layer(&self, layer: usize, u: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_input(u)?;
        let slots = self.spec.slots();
        self.layer_forward(&slots[layer], layer, u)
    }

    fn layer_forward(&self, slots: &[Vec<Slot>; 2], layer: usize, u: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (s, t) = self.nets(slots, &self.conditioning(layer, u));
        let mut v = u.to_vec();
        let mut log_det = 0.0;
        for j in 0..self.spec.d {
            if self.spec.updates(layer, j) {
                v[j] = u[j] * s[j].exp() + t[j];
                log_det += s[j];
            }
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "flow layer {layer} produced a non-finite output"
            )));
        }
        Ok((v, log_det))
    }

    /// `G_θ(ξ)` and `log|det G_θ'(ξ)|`.
    pub fn forward(&self, xi: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_input(xi)?;
        let slots = self.spec.slots();
        let mut u = xi.to_vec();
        let mut log_det = 0.0;
        for (layer, sl) in slots.iter().enumerate() {
            let (v, ld) = self.layer_forward(sl, layer, &u)?;
            u = v;
            log_det += ld;
        }
        Ok((u, log_det))
    }

    /// `G_θ^{-1}(w)`, undoing the layers in reverse order.
    pub fn inverse(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check_input(w)?;
        let slots = self.spec.slots();
        let mut v = w.to_vec();
        for layer in (0..self.spec.layers()).rev() {
            // the conditioning half passes through unchanged, so it can be read off v
            let (s, t) = self.nets(&slots[layer], &self.conditioning(layer, &v));
            for j in 0..self.spec.d {
                if self.spec.updates(layer, j) {
                    v[j] = (v[j] - t[j]) * (-s[j]).exp();
                }
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "inverse of flow layer {layer} produced a non-finite value"
                )));
            }
        }
        Ok(v)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.d {
            return Err(Error::Dimension {
                expected: self.spec.d,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Little-endian binary: magic, `d`, `coupling_pairs`, `hidden`,
    /// `hidden_layers`, `seed`, weight count (all `u64`), then the weights
    /// as `f64`.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        let s = &self.spec;
        for v in [s.d, s.coupling_pairs, s.hidden, s.hidden_layers] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.theta.len() as u64).to_le_bytes())?;
        for x in &self.theta {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Invalid("not a flow parameter file (bad magic)".into()));
        }
        let mut word = || -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let (d, cp, h, hl) = (word()?, word()?, word()?, word()?);
        let seed = word()?;
        let count = word()? as usize;
        let spec = FlowSpec::with_hidden_layers(d as usize, cp as usize, h as usize, hl as usize)?;
        if count != spec.param_count() {
            return Err(Error::Dimension {
                expected: spec.param_count(),
                got: count,
            });
        }
        let mut theta = Vec::with_capacity(count);
        let mut b = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut b)?;
            theta.push(f64::from_le_bytes(b));
        }
        Ok(Self { spec, theta, seed })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Output of the flow recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct FlowOutput {
    /// `d × M` matrix of transformed samples (one per column).
    pub w: Var,
    /// Sum over the `M` samples of `log|det G_θ'(ξ_s)|` (scalar).
    pub log_det_sum: Var,
}

/// Records `G_θ` on `tape` for the columns of `xi` (`d × M`), with θ given as
/// a `P × 1` node.
pub fn forward_on_tape(spec: &FlowSpec, tape: &mut Tape, theta: Var, xi: Var) -> Result<FlowOutput> {
    let (d, m) = tape.value(xi).shape();
    if d != spec.d {
        return Err(Error::Dimension {
            expected: spec.d,
            got: d,
        });
    }
    if tape.value(theta).shape() != (spec.param_count(), 1) {
        return Err(Error::Shape {
            op: "flow theta",
            lhs: tape.value(theta).shape(),
            rhs: (spec.param_count(), 1),
        });
    }
    let ones = tape.constant(Tensor::row(vec![1.0; m]));
    let slots = spec.slots();
    let mut u = xi;
    let mut log_det = None;
    for (layer, sl) in slots.iter().enumerate() {
        let r = spec.mask(layer);
        let broadcast = |mask: &[f64]| {
            let mut data = Vec::with_capacity(d * m);
            for &x in mask {
                data.extend(std::iter::repeat_n(x, m));
            }
            Tensor::new(d, m, data)
        };
        let r_mat = tape.constant(broadcast(&r)?);
        let rbar: Vec<f64> = r.iter().map(|x| 1.0 - x).collect();
        let rbar_mat = tape.constant(broadcast(&rbar)?);

        let cond = tape.mul(u, rbar_mat)?;
        let mut outs = [cond, cond];
        for (net_idx, net) in sl.iter().enumerate() {
            let mut h = cond;
            for (i, s) in net.iter().enumerate() {
                let w = tape.slice(theta, s.w, s.rows, s.cols)?;
                let b = tape.slice(theta, s.b, s.rows, 1)?;
                let wx = tape.matmul(w, h)?;
                let bb = tape.matmul(b, ones)?;
                let z = tape.add(wx, bb)?;
                h = if i + 1 < net.len() {
                    tape.leaky_relu(z)?
                } else if net_idx == 0 {
                    tape.tanh(z)?
                } else {
                    z
                };
            }
            outs[net_idx] = h;
        }
        let rs = tape.mul(outs[0], r_mat)?;
        let rt = tape.mul(outs[1], r_mat)?;
        let scale = tape.exp(rs)?;
        let scaled = tape.mul(u, scale)?;
        u = tape.add(scaled, rt)?;
        let ld = tape.sum(rs)?;
        log_det = Some(match log_det {
            None => ld,
            Some(acc) => tape.add(acc, ld)?,
        });
    }
    let log_det_sum = log_det.expect("a flow has at least one layer");
    Ok(FlowOutput { w: u, log_det_sum })
}
