//! Small multilayer perceptrons with hand-written backpropagation.
//!
//! An [`Mlp`] is a list of dense layers and elementwise activations. Its
//! parameters live in one flat buffer laid out layer by layer as
//! `weights[out][in]` (row-major) followed by `bias[out]`; the gradient
//! buffer mirrors that layout. Encoders end with a projection onto the unit
//! sphere.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative(self, out: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - out * out,
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
        /// Start of this layer's weights in the flat parameter buffer.
        offset: usize,
    },
    Act(Activation),
}

/// Borrowed view of one parameter block and its gradient.
pub struct ParamView<'a> {
    pub params: &'a mut [f64],
    pub grads: &'a [f64],
}

/// Activation record of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    generation: u64,
    /// `values[k]` is the input to layer `k`; the last entry is the
    /// network output before normalization.
    values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    input_dim: usize,
    output_dim: usize,
    layers: Vec<Layer>,
    normalize: bool,
    params: Vec<f64>,
    grads: Vec<f64>,
    generation: u64,
}

impl Mlp {
    /// Dense layers of the given widths with `activation` between them
    /// (none after the last). `normalize` adds the unit-sphere projection.
    pub fn new(
        widths: &[usize],
        activation: Activation,
        normalize: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::contract(format!("invalid layer widths {widths:?}")));
        }
        let mut layers = Vec::new();
        let mut offset = 0;
        for (k, pair) in widths.windows(2).enumerate() {
            if k > 0 {
                layers.push(Layer::Act(activation));
            }
            layers.push(Layer::Dense {
                inputs: pair[0],
                outputs: pair[1],
                offset,
            });
            offset += pair[0] * pair[1] + pair[1];
        }
        let mut params = vec![0.0; offset];
        for layer in &layers {
            if let Layer::Dense {
                inputs,
                outputs,
                offset,
            } = *layer
            {
                let limit = (6.0 / (inputs + outputs) as f64).sqrt();
                for w in &mut params[offset..offset + inputs * outputs] {
                    *w = rng.random_range(-limit..limit);
                }
            }
        }
        Ok(Self {
            input_dim: widths[0],
            output_dim: *widths.last().unwrap(),
            layers,
            normalize,
            grads: vec![0.0; params.len()],
            params,
            generation: 0,
        })
    }

    /// A parameter-free encoder: the unit-sphere projection alone.
    pub fn identity_normalizer(dim: usize) -> Self {
        Self {
            input_dim: dim,
            output_dim: dim,
            layers: Vec::new(),
            normalize: true,
            params: Vec::new(),
            grads: Vec::new(),
            generation: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn normalizes(&self) -> bool {
        self.normalize
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    /// Mutable access to parameters. Invalidates outstanding tapes.
    pub fn view(&mut self) -> ParamView<'_> {
        self.generation += 1;
        ParamView {
            params: &mut self.params,
            grads: &self.grads,
        }
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.generation += 1;
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim {
            return Err(Error::contract(format!(
                "encoder expects input of dimension {}, got {}",
                self.input_dim,
                input.len()
            )));
        }
        Ok(())
    }

    fn dense(&self, inputs: usize, outputs: usize, offset: usize, x: &[f64]) -> Vec<f64> {
        let w = &self.params[offset..offset + inputs * outputs];
        let b = &self.params[offset + inputs * outputs..offset + inputs * outputs + outputs];
        (0..outputs)
            .map(|o| {
                let row = &w[o * inputs..(o + 1) * inputs];
                b[o] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>()
            })
            .collect()
    }

    fn layer_forward(&self, layer: &Layer, x: &[f64]) -> Vec<f64> {
        match *layer {
            Layer::Dense {
                inputs,
                outputs,
                offset,
            } => self.dense(inputs, outputs, offset, x),
            Layer::Act(act) => x.iter().map(|&v| act.apply(v)).collect(),
        }
    }

    fn finish(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if !self.normalize {
            return Ok(raw.to_vec());
        }
        let n = crate::geometry::norm(raw);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Domain(format!("cannot normalize vector of norm {n}")));
        }
        Ok(raw.iter().map(|v| v / n).collect())
    }

    /// Forward pass without recording a tape.
    pub fn embed(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = self.layer_forward(layer, &x);
        }
        self.finish(&x)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.check_input(input)?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        for layer in &self.layers {
            let next = self.layer_forward(layer, values.last().unwrap());
            values.push(next);
        }
        let out = self.finish(values.last().unwrap())?;
        Ok((
            out,
            Tape {
                generation: self.generation,
                values,
            },
        ))
    }

    /// Accumulates parameter gradients for `upstream = dL/d(output)` and
    /// returns `dL/d(input)`.
    pub fn backward(&mut self, tape: &Tape, upstream: &[f64]) -> Result<Vec<f64>> {
        if tape.generation != self.generation || tape.values.len() != self.layers.len() + 1 {
            return Err(Error::contract("tape does not belong to the current parameters"));
        }
        if upstream.len() != self.output_dim {
            return Err(Error::contract(format!(
                "upstream gradient has dimension {}, expected {}",
                upstream.len(),
                self.output_dim
            )));
        }
        let mut grad = if self.normalize {
            // J = (I - y y^T) / |h|
            let raw = tape.values.last().unwrap();
            let n = crate::geometry::norm(raw);
            let radial: f64 = raw.iter().zip(upstream).map(|(r, g)| r * g).sum::<f64>() / n;
            raw.iter()
                .zip(upstream)
                .map(|(r, g)| (g - radial * r / n) / n)
                .collect()
        } else {
            upstream.to_vec()
        };
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let input = &tape.values[k];
            grad = match *layer {
                Layer::Act(act) => {
                    let out = &tape.values[k + 1];
                    grad.iter()
                        .zip(out)
                        .map(|(g, o)| g * act.derivative(*o))
                        .collect()
                }
                Layer::Dense {
                    inputs,
                    outputs,
                    offset,
                } => {
                    let bias = offset + inputs * outputs;
                    let mut dx = vec![0.0; inputs];
                    for o in 0..outputs {
                        let g = grad[o];
                        self.grads[bias + o] += g;
                        if g == 0.0 {
                            continue;
                        }
                        let row = offset + o * inputs;
                        for i in 0..inputs {
                            self.grads[row + i] += g * input[i];
                            dx[i] += g * self.params[row + i];
                        }
                    }
                    dx
                }
            };
        }
        Ok(grad)
    }
}

/// Architecture of the three modality encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Hidden widths of the data-text matching head.
    pub matcher_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 3,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            matcher_hidden: vec![32],
        }
    }
}

/// Text, video and audio encoders sharing one latent dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStack {
    pub text: Mlp,
    pub video: Mlp,
    pub audio: Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Video,
    Audio,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Video, Modality::Audio];
}

impl EncoderStack {
    /// Input dims are `(text, video, audio)`.
    pub fn new(input_dims: (usize, usize, usize), config: &ModelConfig, seed: u64) -> Result<Self> {
        let build = |d_in: usize, stream: u64| {
            let mut widths = vec![d_in];
            widths.extend(&config.hidden);
            widths.push(config.latent_dim);
            Mlp::new(&widths, config.activation, true, &mut rng::stream(seed, stream))
        };
        // The text encoder is a single learned projection of the caption
        // features, i.e. an embedding table when the input is one-hot.
        let text = Mlp::new(
            &[input_dims.0, config.latent_dim],
            config.activation,
            true,
            &mut rng::stream(seed, streams::TEXT_INIT),
        )?;
        Ok(Self {
            text,
            video: build(input_dims.1, streams::VIDEO_INIT)?,
            audio: build(input_dims.2, streams::AUDIO_INIT)?,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.text.output_dim()
    }

    pub fn encoder(&self, m: Modality) -> &Mlp {
        match m {
            Modality::Text => &self.text,
            Modality::Video => &self.video,
            Modality::Audio => &self.audio,
        }
    }

    pub fn encoder_mut(&mut self, m: Modality) -> &mut Mlp {
        match m {
            Modality::Text => &mut self.text,
            Modality::Video => &mut self.video,
            Modality::Audio => &mut self.audio,
        }
    }

    pub fn zero_grads(&mut self) {
        for m in Modality::ALL {
            self.encoder_mut(m).zero_grads();
        }
    }

    /// Parameters of all encoders concatenated in text, video, audio order.
    pub fn flat_params(&self) -> Vec<f64> {
        Modality::ALL
            .iter()
            .flat_map(|&m| self.encoder(m).params().iter().copied())
            .collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        Modality::ALL
            .iter()
            .flat_map(|&m| self.encoder(m).grads().iter().copied())
            .collect()
    }

    pub fn num_params(&self) -> usize {
        Modality::ALL.iter().map(|&m| self.encoder(m).num_params()).sum()
    }

    /// Forward pass over a whole batch, one tape per row and modality.
    pub fn embed_batch(
        &self,
        text: &[Vec<f64>],
        video: &[Vec<f64>],
        audio: &[Vec<f64>],
    ) -> Result<(TriEmbeddings, StackTapes)> {
        if text.len() != video.len() || text.len() != audio.len() {
            return Err(Error::contract("modalities disagree on batch size"));
        }
        let run = |enc: &Mlp, xs: &[Vec<f64>]| -> Result<(Vec<Vec<f64>>, Vec<Tape>)> {
            xs.iter().map(|x| enc.forward(x)).collect::<Result<Vec<_>>>().map(|v| v.into_iter().unzip())
        };
        let (t, tt) = run(&self.text, text)?;
        let (v, vt) = run(&self.video, video)?;
        let (a, at) = run(&self.audio, audio)?;
        Ok((
            TriEmbeddings {
                text: t,
                video: v,
                audio: a,
            },
            StackTapes {
                text: tt,
                video: vt,
                audio: at,
            },
        ))
    }

    /// Backpropagates per-embedding gradients into every encoder.
    pub fn backward_batch(&mut self, tapes: &StackTapes, grads: &TriEmbeddings) -> Result<()> {
        for (tape, g) in tapes.text.iter().zip(&grads.text) {
            self.text.backward(tape, g)?;
        }
        for (tape, g) in tapes.video.iter().zip(&grads.video) {
            self.video.backward(tape, g)?;
        }
        for (tape, g) in tapes.audio.iter().zip(&grads.audio) {
            self.audio.backward(tape, g)?;
        }
        Ok(())
    }

    pub fn embed_all(&self, m: Modality, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let enc = self.encoder(m);
        xs.iter().map(|x| enc.embed(x)).collect()
    }
}

/// Row-aligned embeddings (or gradients with respect to them) of a batch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriEmbeddings {
    pub text: Vec<Vec<f64>>,
    pub video: Vec<Vec<f64>>,
    pub audio: Vec<Vec<f64>>,
}

impl TriEmbeddings {
    pub fn len(&self) -> usize {
        self.text.len()
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.text.first().map_or(0, Vec::len)
    }

    pub fn zeros_like(other: &TriEmbeddings) -> Self {
        let z = |v: &Vec<Vec<f64>>| v.iter().map(|e| vec![0.0; e.len()]).collect();
        Self {
            text: z(&other.text),
            video: z(&other.video),
            audio: z(&other.audio),
        }
    }

    pub fn modality(&self, m: Modality) -> &[Vec<f64>] {
        match m {
            Modality::Text => &self.text,
            Modality::Video => &self.video,
            Modality::Audio => &self.audio,
        }
    }

    pub fn modality_mut(&mut self, m: Modality) -> &mut Vec<Vec<f64>> {
        match m {
            Modality::Text => &mut self.text,
            Modality::Video => &mut self.video,
            Modality::Audio => &mut self.audio,
        }
    }

    /// `self += scale * other`, row by row.
    pub fn add_scaled(&mut self, other: &TriEmbeddings, scale: f64) {
        for m in Modality::ALL {
            for (a, b) in self.modality_mut(m).iter_mut().zip(other.modality(m)) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += scale * y;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct StackTapes {
    pub text: Vec<Tape>,
    pub video: Vec<Tape>,
    pub audio: Vec<Tape>,
}

// Checkpoint layout (all integers little-endian):
//   b"TRI1"
//   u32 version (= 1)
//   u32 encoder count (= 3: text, video, audio)
//   per encoder:
//     u32 input_dim, u32 output_dim, u8 normalize, u32 layer count
//     per layer: u8 kind (0 dense, 1 tanh, 2 relu); dense adds u32 inputs, u32 outputs
//   per encoder, in the same order:
//     u64 parameter count, then that many f64

const CKPT_MAGIC: &[u8; 4] = b"TRI1";
const CKPT_VERSION: u32 = 1;

pub fn encode_checkpoint(stack: &EncoderStack) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&3u32.to_le_bytes());
    for m in Modality::ALL {
        let enc = stack.encoder(m);
        out.extend_from_slice(&(enc.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(enc.output_dim as u32).to_le_bytes());
        out.push(enc.normalize as u8);
        out.extend_from_slice(&(enc.layers.len() as u32).to_le_bytes());
        for layer in &enc.layers {
            match *layer {
                Layer::Dense {
                    inputs, outputs, ..
                } => {
                    out.push(0);
                    out.extend_from_slice(&(inputs as u32).to_le_bytes());
                    out.extend_from_slice(&(outputs as u32).to_le_bytes());
                }
                Layer::Act(Activation::Tanh) => out.push(1),
                Layer::Act(Activation::Relu) => out.push(2),
            }
        }
    }
    for m in Modality::ALL {
        let enc = stack.encoder(m);
        out.extend_from_slice(&(enc.params.len() as u64).to_le_bytes());
        for p in &enc.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        if self.bytes.len() - self.pos < n {
            return Err(FormatError::Truncated {
                what,
                expected: self.pos + n,
                actual: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<EncoderStack, FormatError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "checkpoint header")?;
    if magic != CKPT_MAGIC {
        return Err(FormatError::BadMagic {
            expected: "TRI1".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = cur.u32("checkpoint header")?;
    if version != CKPT_VERSION {
        return Err(FormatError::BadVersion {
            expected: CKPT_VERSION,
            found: version,
        });
    }
    let count = cur.u32("checkpoint header")?;
    if count != 3 {
        return Err(FormatError::Malformed {
            what: "checkpoint",
            detail: format!("expected 3 encoders, found {count}"),
        });
    }
    let mut encoders = Vec::with_capacity(3);
    for _ in 0..3 {
        let input_dim = cur.u32("encoder shape")? as usize;
        let output_dim = cur.u32("encoder shape")? as usize;
        let normalize = cur.u8("encoder shape")? != 0;
        let n_layers = cur.u32("encoder shape")? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(1024));
        let mut offset = 0;
        let mut width = input_dim;
        for _ in 0..n_layers {
            match cur.u8("layer kind")? {
                0 => {
                    let inputs = cur.u32("layer shape")? as usize;
                    let outputs = cur.u32("layer shape")? as usize;
                    if inputs != width {
                        return Err(FormatError::Malformed {
                            what: "checkpoint",
                            detail: format!("dense layer expects {inputs} inputs after width {width}"),
                        });
                    }
                    layers.push(Layer::Dense {
                        inputs,
                        outputs,
                        offset,
                    });
                    offset += inputs * outputs + outputs;
                    width = outputs;
                }
                1 => layers.push(Layer::Act(Activation::Tanh)),
                2 => layers.push(Layer::Act(Activation::Relu)),
                k => {
                    return Err(FormatError::Malformed {
                        what: "checkpoint",
                        detail: format!("unknown layer kind {k}"),
                    })
                }
            }
        }
        if width != output_dim {
            return Err(FormatError::Malformed {
                what: "checkpoint",
                detail: format!("encoder ends at width {width}, header says {output_dim}"),
            });
        }
        encoders.push(Mlp {
            input_dim,
            output_dim,
            layers,
            normalize,
            params: Vec::new(),
            grads: Vec::new(),
            generation: 0,
        });
    }
    for enc in &mut encoders {
        let expected: usize = enc
            .layers
            .iter()
            .map(|l| match *l {
                Layer::Dense { inputs, outputs, .. } => inputs * outputs + outputs,
                Layer::Act(_) => 0,
            })
            .sum();
        let n = cur.u64("parameter count")? as usize;
        if n != expected {
            return Err(FormatError::Malformed {
                what: "checkpoint",
                detail: format!("parameter count {n} does not match layer shapes ({expected})"),
            });
        }
        let raw = cur.take(n * 8, "parameters")?;
        enc.params = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        enc.grads = vec![0.0; n];
    }
    if cur.pos != bytes.len() {
        return Err(FormatError::TrailingBytes(bytes.len() - cur.pos));
    }
    let latent = encoders[0].output_dim;
    if encoders.iter().any(|e| e.output_dim != latent) {
        return Err(FormatError::Malformed {
            what: "checkpoint",
            detail: "encoders disagree on latent dimension".into(),
        });
    }
    let mut it = encoders.into_iter();
    Ok(EncoderStack {
        text: it.next().unwrap(),
        video: it.next().unwrap(),
        audio: it.next().unwrap(),
    })
}

pub fn save_checkpoint(stack: &EncoderStack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_checkpoint(stack))
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<EncoderStack> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(decode_checkpoint(&bytes)?)
}
