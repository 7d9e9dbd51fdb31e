//! Decoder weights, deterministic presets and the on-disk archive.
//!
//! An archive is a directory holding `manifest.json` plus one tensor blob
//! per named tensor (see [`crate::blob`]). Tensor names:
//!
//! ```text
//! rasa.{l}.{w_q,w_k,w_v,w_r,w_out}      C×C
//! rasa.{l}.ffn_in.{weight,bias}         C×2C, 2C
//! rasa.{l}.ffn_out.{weight,bias}        2C×C, C
//! tasa.{r}.*, mhca.{r}.*                same as rasa
//! mlp.{0,1}.{weight,bias}               C×C, C
//! ```
//!
//! Matrices act on row vectors (`y = x · W + b`).

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Ix1, Ix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{AttentionWeights, LayerKind, NormKind};
use super::embed::GeomEmbeddingParams;
use super::linear::{Activation, Linear};
use super::pool::Pooling;
use crate::blob;
use crate::error::{invalid, Error, Result};

pub const ARCHIVE_FORMAT: &str = "bevloc-decoder-weights";
pub const ARCHIVE_VERSION: u32 = 1;

/// Hyperparameters shared by every layer of the decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub angular_bins: usize,
    pub radial_bins: usize,
    pub channels: usize,
    /// Temperature of the radial-distance embedding (meters).
    pub sigma_r: f64,
    /// Temperature of the relative-angle embedding (degrees).
    pub sigma_a: f64,
    pub heads: usize,
    /// Rounds of TASA + MHCA interaction.
    pub rounds: usize,
    pub rasa_layers: usize,
    pub pooling: Pooling,
    pub activation: Activation,
    pub norm: NormKind,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            angular_bins: 120,
            radial_bins: 40,
            channels: 256,
            sigma_r: 4.8,
            sigma_a: 15.0,
            heads: 4,
            rounds: 3,
            rasa_layers: 1,
            pooling: Pooling::Gem { p: 3.0 },
            activation: Activation::GeluTanh,
            norm: NormKind::Layer,
        }
    }
}

impl NetConfig {
    pub fn with_channels(mut self, channels: usize) -> Self {
        self.channels = channels;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.angular_bins == 0 || self.radial_bins == 0 {
            return invalid("angular and radial bin counts must be positive");
        }
        if self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return invalid(format!("{} channels cannot be split across {} heads", self.channels, self.heads));
        }
        if self.rounds == 0 {
            return invalid("interaction needs at least one round");
        }
        self.radial_embedding()?;
        self.angular_embedding()?;
        self.pooling.validate()
    }

    pub fn radial_embedding(&self) -> Result<GeomEmbeddingParams> {
        GeomEmbeddingParams::new(self.sigma_r, self.channels)
    }

    pub fn angular_embedding(&self) -> Result<GeomEmbeddingParams> {
        GeomEmbeddingParams::new(self.sigma_a, self.channels)
    }
}

/// Two-layer perceptron `C → C → C` applied row-wise after the radial collapse.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
    pub activation: Activation,
}

impl Mlp {
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = self.first.apply(x.view());
        self.activation.apply_inplace(&mut h);
        self.second.apply(h.view())
    }
}

/// All weights of the local-view decoder and interactor.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderWeights {
    pub config: NetConfig,
    pub rasa: Vec<AttentionWeights>,
    pub mlp: Mlp,
    pub tasa: Vec<AttentionWeights>,
    pub mhca: Vec<AttentionWeights>,
}

impl DecoderWeights {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let c = self.config.channels;
        if self.rasa.len() != self.config.rasa_layers {
            return invalid(format!("expected {} RASA layers, found {}", self.config.rasa_layers, self.rasa.len()));
        }
        if self.tasa.len() != self.config.rounds || self.mhca.len() != self.config.rounds {
            return invalid(format!("expected {} interaction rounds", self.config.rounds));
        }
        for layer in self.rasa.iter().chain(&self.tasa).chain(&self.mhca) {
            layer.validate()?;
            if layer.channels() != c || layer.heads != self.config.heads {
                return invalid("layer shape does not match the decoder config");
            }
        }
        for l in [&self.mlp.first, &self.mlp.second] {
            if l.inputs() != c || l.outputs() != c {
                return invalid("MLP layers must be CxC");
            }
        }
        Ok(())
    }

    /// Weights drawn uniformly from `[-1/√C, 1/√C]` with a seeded generator;
    /// biases are zero.
    pub fn seeded(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let bound = 1.0 / (c as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mat = |rows: usize, cols: usize| Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound));
        let mut layer = |kind: LayerKind| -> Result<AttentionWeights> {
            Ok(AttentionWeights {
                kind,
                heads: config.heads,
                w_q: Linear::new(mat(c, c), None)?,
                w_k: Linear::new(mat(c, c), None)?,
                w_v: Linear::new(mat(c, c), None)?,
                w_r: Linear::new(mat(c, c), None)?,
                w_out: Linear::new(mat(c, c), None)?,
                ffn_in: Linear::new(mat(c, 2 * c), Some(Array1::zeros(2 * c)))?,
                ffn_out: Linear::new(mat(2 * c, c), Some(Array1::zeros(c)))?,
                norm: config.norm,
                activation: config.activation,
            })
        };
        let rasa = (0..config.rasa_layers).map(|_| layer(LayerKind::Rasa)).collect::<Result<Vec<_>>>()?;
        let mut tasa = Vec::new();
        let mut mhca = Vec::new();
        for _ in 0..config.rounds {
            tasa.push(layer(LayerKind::Tasa)?);
            mhca.push(layer(LayerKind::Mhca)?);
        }
        let mlp = Mlp {
            first: Linear::new(mat(c, c), Some(Array1::zeros(c)))?,
            second: Linear::new(mat(c, c), Some(Array1::zeros(c)))?,
            activation: config.activation,
        };
        let w = Self {
            config,
            rasa,
            mlp,
            tasa,
            mhca,
        };
        w.validate()?;
        Ok(w)
    }

    /// Weights under which decoding reduces to the normalized radial mean of
    /// each sector and interaction to row normalization.
    ///
    /// RASA has zero query/key/geometry projections (uniform attention),
    /// identity value and output projections, and no feed-forward; the MLP is
    /// the identity; interaction layers have zero value projections. Norms
    /// are disabled and activations are the identity.
    pub fn identity_like(config: NetConfig) -> Result<Self> {
        Self::pass_through(config, Linear::identity)
    }

    /// Like [`identity_like`](Self::identity_like), but the first MLP layer
    /// projects out the channel mean `(I - 11ᵀ/C)`.
    ///
    /// Constant-valued cells (such as the band written by BEV padding)
    /// contribute nothing to the descriptor under this projection.
    pub fn channel_centered(config: NetConfig) -> Result<Self> {
        Self::pass_through(config, |c, bias| {
            let centering = Array2::eye(c) - Array2::from_elem((c, c), 1.0 / c as f64);
            Linear::new(centering, bias.then(|| Array1::zeros(c))).expect("finite")
        })
    }

    fn pass_through(mut config: NetConfig, first_mlp: impl Fn(usize, bool) -> Linear) -> Result<Self> {
        config.norm = NormKind::None;
        config.activation = Activation::Identity;
        config.validate()?;
        let c = config.channels;
        let layer = |kind: LayerKind, value: Linear| AttentionWeights {
            kind,
            heads: config.heads,
            w_q: Linear::zeros(c, c, false),
            w_k: Linear::zeros(c, c, false),
            w_v: value,
            w_r: Linear::zeros(c, c, false),
            w_out: Linear::identity(c, false),
            ffn_in: Linear::zeros(c, 2 * c, true),
            ffn_out: Linear::zeros(2 * c, c, true),
            norm: NormKind::None,
            activation: Activation::Identity,
        };
        let rasa = (0..config.rasa_layers).map(|_| layer(LayerKind::Rasa, Linear::identity(c, false))).collect();
        let tasa = (0..config.rounds).map(|_| layer(LayerKind::Tasa, Linear::zeros(c, c, false))).collect();
        let mhca = (0..config.rounds).map(|_| layer(LayerKind::Mhca, Linear::zeros(c, c, false))).collect();
        let mlp = Mlp {
            first: first_mlp(c, true),
            second: Linear::identity(c, true),
            activation: Activation::Identity,
        };
        let w = Self {
            config,
            rasa,
            mlp,
            tasa,
            mhca,
        };
        w.validate()?;
        Ok(w)
    }

    fn named_tensors(&self) -> Vec<(String, TensorRef)> {
        let mut out = Vec::new();
        let push_layer = |prefix: String, l: &AttentionWeights, out: &mut Vec<(String, TensorRef)>| {
            for (name, lin) in [("w_q", &l.w_q), ("w_k", &l.w_k), ("w_v", &l.w_v), ("w_r", &l.w_r), ("w_out", &l.w_out)] {
                out.push((format!("{prefix}.{name}"), TensorRef::Matrix(lin.weight().clone())));
            }
            for (name, lin) in [("ffn_in", &l.ffn_in), ("ffn_out", &l.ffn_out)] {
                out.push((format!("{prefix}.{name}.weight"), TensorRef::Matrix(lin.weight().clone())));
                out.push((format!("{prefix}.{name}.bias"), TensorRef::Vector(bias_or_zero(lin))));
            }
        };
        for (i, l) in self.rasa.iter().enumerate() {
            push_layer(format!("rasa.{i}"), l, &mut out);
        }
        for (i, l) in self.tasa.iter().enumerate() {
            push_layer(format!("tasa.{i}"), l, &mut out);
        }
        for (i, l) in self.mhca.iter().enumerate() {
            push_layer(format!("mhca.{i}"), l, &mut out);
        }
        for (i, lin) in [&self.mlp.first, &self.mlp.second].into_iter().enumerate() {
            out.push((format!("mlp.{i}.weight"), TensorRef::Matrix(lin.weight().clone())));
            out.push((format!("mlp.{i}.bias"), TensorRef::Vector(bias_or_zero(lin))));
        }
        out
    }

    /// Writes the archive directory (created if missing).
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tensors = Vec::new();
        for (name, t) in self.named_tensors() {
            let file = format!("{name}.bvl");
            let arr = match t {
                TensorRef::Matrix(m) => m.into_dyn(),
                TensorRef::Vector(v) => v.into_dyn(),
            };
            tensors.push(TensorEntry {
                name,
                shape: arr.shape().to_vec(),
                file: file.clone(),
            });
            blob::write(&dir.join(&file), &arr)?;
        }
        let mut layer_graph: Vec<String> = (0..self.rasa.len()).map(|i| format!("rasa.{i}")).collect();
        layer_graph.push("radial_mean".into());
        layer_graph.push("mlp".into());
        layer_graph.push("normalize_rows".into());
        for r in 0..self.tasa.len() {
            layer_graph.push(format!("tasa.{r}"));
            layer_graph.push(format!("mhca.{r}"));
        }
        layer_graph.push("normalize_rows".into());
        let manifest = Manifest {
            format: ARCHIVE_FORMAT.into(),
            version: ARCHIVE_VERSION,
            config: self.config.clone(),
            block: BlockSpec::default(),
            mhca_positional_bias: false,
            radial_collapse: "mean".into(),
            layer_graph,
            tensors,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, Some(e.line()), e.to_string()))?;
        if manifest.format != ARCHIVE_FORMAT || manifest.version != ARCHIVE_VERSION {
            return Err(Error::format(&path, None, format!("unsupported archive {} v{}", manifest.format, manifest.version)));
        }
        if manifest.mhca_positional_bias {
            return Err(Error::format(&path, None, "cross-attention positional bias is not supported"));
        }
        if manifest.radial_collapse != "mean" {
            return Err(Error::format(&path, None, format!("unsupported radial collapse '{}'", manifest.radial_collapse)));
        }
        let config = manifest.config.clone();
        config.validate()?;
        let loader = TensorLoader {
            dir: dir.to_path_buf(),
            manifest: &manifest,
            manifest_path: path.clone(),
        };
        let c = config.channels;
        let attention = |prefix: String, kind: LayerKind| -> Result<AttentionWeights> {
            let lin = |name: &str| -> Result<Linear> { Linear::new(loader.matrix(&format!("{prefix}.{name}"), c, c)?, None) };
            let ffn = |name: &str, i: usize, o: usize| -> Result<Linear> {
                Linear::new(
                    loader.matrix(&format!("{prefix}.{name}.weight"), i, o)?,
                    Some(loader.vector(&format!("{prefix}.{name}.bias"), o)?),
                )
            };
            Ok(AttentionWeights {
                kind,
                heads: config.heads,
                w_q: lin("w_q")?,
                w_k: lin("w_k")?,
                w_v: lin("w_v")?,
                w_r: lin("w_r")?,
                w_out: lin("w_out")?,
                ffn_in: ffn("ffn_in", c, 2 * c)?,
                ffn_out: ffn("ffn_out", 2 * c, c)?,
                norm: config.norm,
                activation: config.activation,
            })
        };
        let rasa = (0..config.rasa_layers).map(|i| attention(format!("rasa.{i}"), LayerKind::Rasa)).collect::<Result<Vec<_>>>()?;
        let tasa = (0..config.rounds).map(|i| attention(format!("tasa.{i}"), LayerKind::Tasa)).collect::<Result<Vec<_>>>()?;
        let mhca = (0..config.rounds).map(|i| attention(format!("mhca.{i}"), LayerKind::Mhca)).collect::<Result<Vec<_>>>()?;
        let mlp_layer = |i: usize| -> Result<Linear> {
            Linear::new(loader.matrix(&format!("mlp.{i}.weight"), c, c)?, Some(loader.vector(&format!("mlp.{i}.bias"), c)?))
        };
        let mlp = Mlp {
            first: mlp_layer(0)?,
            second: mlp_layer(1)?,
            activation: config.activation,
        };
        let w = Self {
            config,
            rasa,
            mlp,
            tasa,
            mhca,
        };
        w.validate()?;
        Ok(w)
    }
}

enum TensorRef {
    Matrix(Array2<f64>),
    Vector(Array1<f64>),
}

fn bias_or_zero(l: &Linear) -> Array1<f64> {
    l.bias().cloned().unwrap_or_else(|| Array1::zeros(l.outputs()))
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

/// Block internals recorded in the manifest so archives are unambiguous.
#[derive(Debug, Serialize, Deserialize)]
struct BlockSpec {
    residual: bool,
    ffn_hidden_factor: usize,
    attention_scale: String,
    layer_norm_eps: f64,
}

impl Default for BlockSpec {
    fn default() -> Self {
        Self {
            residual: true,
            ffn_hidden_factor: 2,
            attention_scale: "1/sqrt(C)".into(),
            layer_norm_eps: 1e-5,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config: NetConfig,
    block: BlockSpec,
    mhca_positional_bias: bool,
    radial_collapse: String,
    layer_graph: Vec<String>,
    tensors: Vec<TensorEntry>,
}

struct TensorLoader<'a> {
    dir: PathBuf,
    manifest: &'a Manifest,
    manifest_path: PathBuf,
}

impl TensorLoader<'_> {
    fn load(&self, name: &str, shape: &[usize]) -> Result<ndarray::ArrayD<f64>> {
        let entry = self
            .manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::format(&self.manifest_path, None, format!("missing tensor '{name}'")))?;
        let path = self.dir.join(&entry.file);
        let arr = blob::read(&path)?;
        if arr.shape() != shape || entry.shape != shape {
            return Err(Error::format(&path, None, format!("tensor '{name}' has shape {:?}, expected {shape:?}", arr.shape())));
        }
        Ok(arr)
    }

    fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<Array2<f64>> {
        Ok(self.load(name, &[rows, cols])?.into_dimensionality::<Ix2>().expect("checked shape"))
    }

    fn vector(&self, name: &str, len: usize) -> Result<Array1<f64>> {
        Ok(self.load(name, &[len])?.into_dimensionality::<Ix1>().expect("checked shape"))
    }
}
