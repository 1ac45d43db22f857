use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Conventions, ModelConfig};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const WEIGHTS_MAGIC: &[u8] = b"BRIDGE-WEIGHTS v1\n";

/// Half-width of the uniform initialiser for generated weights.
pub const INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Component {
    FeatProj,
    Frontend,
    Path1,
    Path2,
    Path3,
    Merge,
    HBranch,
    CBranch,
    Fusion,
    Head,
    Decoder,
}

impl Component {
    pub const ALL: [Component; 11] = [
        Component::FeatProj,
        Component::Frontend,
        Component::Path1,
        Component::Path2,
        Component::Path3,
        Component::Merge,
        Component::HBranch,
        Component::CBranch,
        Component::Fusion,
        Component::Head,
        Component::Decoder,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Component::FeatProj => "feat_proj",
            Component::Frontend => "ResConvSE frontend",
            Component::Path1 => "Path 1 BiGRU",
            Component::Path2 => "Path 2 stride-conv BiGRU",
            Component::Path3 => "Path 3 transformer",
            Component::Merge => "merge MHA",
            Component::HBranch => "H-branch",
            Component::CBranch => "C-branch embeddings",
            Component::Fusion => "CB-GAF",
            Component::Head => "classification head",
            Component::Decoder => "auxiliary decoder",
        }
    }

    pub fn in_t_branch(self) -> bool {
        matches!(
            self,
            Component::FeatProj
                | Component::Frontend
                | Component::Path1
                | Component::Path2
                | Component::Path3
                | Component::Merge
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Weight,
    Bias,
    NormScale,
    NormShift,
    RunningMean,
    RunningVar,
}

impl Role {
    /// Running statistics are buffers, not trainable parameters.
    pub fn trainable(self) -> bool {
        !matches!(self, Role::RunningMean | Role::RunningVar)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub component: Component,
    pub role: Role,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

struct Inventory {
    conv: Conventions,
    component: Component,
    specs: Vec<ParamSpec>,
}

impl Inventory {
    fn push(&mut self, name: String, dims: Vec<usize>, role: Role) {
        self.specs.push(ParamSpec { name, dims, component: self.component, role });
    }

    fn linear(&mut self, p: &str, out: usize, inp: usize) {
        self.push(format!("{p}.weight"), vec![out, inp], Role::Weight);
        if self.conv.linear_bias {
            self.push(format!("{p}.bias"), vec![out], Role::Bias);
        }
    }

    fn conv(&mut self, p: &str, out: usize, in_per_group: usize, k: usize) {
        self.push(format!("{p}.weight"), vec![out, in_per_group, k], Role::Weight);
        if self.conv.conv_bias {
            self.push(format!("{p}.bias"), vec![out], Role::Bias);
        }
    }

    fn layer_norm(&mut self, p: &str, d: usize) {
        if self.conv.norm_affine {
            self.push(format!("{p}.weight"), vec![d], Role::NormScale);
            self.push(format!("{p}.bias"), vec![d], Role::NormShift);
        }
    }

    fn batch_norm(&mut self, p: &str, d: usize) {
        self.layer_norm(p, d);
        self.push(format!("{p}.running_mean"), vec![d], Role::RunningMean);
        self.push(format!("{p}.running_var"), vec![d], Role::RunningVar);
    }

    fn gru(&mut self, p: &str, inp: usize, hidden: usize, layers: usize) {
        for l in 0..layers {
            let layer_in = if l == 0 { inp } else { 2 * hidden };
            for dir in ["fwd", "bwd"] {
                let q = format!("{p}.l{l}.{dir}");
                self.push(format!("{q}.w_ih"), vec![3 * hidden, layer_in], Role::Weight);
                self.push(format!("{q}.w_hh"), vec![3 * hidden, hidden], Role::Weight);
                if self.conv.linear_bias {
                    self.push(format!("{q}.b_ih"), vec![3 * hidden], Role::Bias);
                    if self.conv.gru_double_bias {
                        self.push(format!("{q}.b_hh"), vec![3 * hidden], Role::Bias);
                    }
                }
            }
        }
    }

    fn mha(&mut self, p: &str, d: usize) {
        self.linear(&format!("{p}.in_proj"), 3 * d, d);
        self.linear(&format!("{p}.out_proj"), d, d);
    }

    fn ds_conv(&mut self, p: &str, cin: usize, cout: usize) {
        self.conv(&format!("{p}.dw"), cin, 1, 3);
        self.conv(&format!("{p}.pw"), cout, cin, 1);
        self.batch_norm(&format!("{p}.bn"), cout);
    }
}

/// Every tensor the forward pass reads, in a fixed order.
pub fn layer_inventory(cfg: &ModelConfig, conv: Conventions) -> Vec<ParamSpec> {
    use Component::*;
    let mut inv = Inventory { conv, component: FeatProj, specs: Vec::new() };
    let f = cfg.features;

    inv.linear("feat.fc1", 2 * f, f);
    inv.layer_norm("feat.ln1", 2 * f);
    inv.linear("feat.fc2", f, 2 * f);
    inv.layer_norm("feat.ln2", f);

    inv.component = Frontend;
    let mut cin = f;
    for (b, &cout) in cfg.conv_channels.iter().enumerate() {
        let p = format!("t.p1.block{b}");
        inv.ds_conv(&format!("{p}.ds1"), cin, cout);
        inv.ds_conv(&format!("{p}.ds2"), cout, cout);
        let red = cout / cfg.se_reduction;
        inv.linear(&format!("{p}.se.fc1"), red, cout);
        inv.linear(&format!("{p}.se.fc2"), cout, red);
        if cin != cout {
            inv.conv(&format!("{p}.skip.conv"), cout, cin, 1);
            inv.batch_norm(&format!("{p}.skip.bn"), cout);
        }
        cin = cout;
    }

    inv.component = Path1;
    inv.gru("t.p1.gru", cfg.conv_channels[2], cfg.gru1_hidden, cfg.gru1_layers);

    inv.component = Path2;
    inv.conv("t.p2.conv", cfg.conv_channels[0], f, 3);
    inv.batch_norm("t.p2.bn", cfg.conv_channels[0]);
    inv.gru("t.p2.gru", cfg.conv_channels[0], cfg.gru2_hidden, 1);

    inv.component = Path3;
    let d = cfg.transformer_dim;
    inv.linear("t.p3.proj", d, f);
    inv.push("t.p3.pos".into(), vec![cfg.window, d], Role::Weight);
    inv.push("t.p3.cls".into(), vec![1, d], Role::Weight);
    for l in 0..cfg.transformer_layers {
        let p = format!("t.p3.layer{l}");
        inv.layer_norm(&format!("{p}.ln1"), d);
        inv.mha(&format!("{p}.attn"), d);
        inv.layer_norm(&format!("{p}.ln2"), d);
        inv.linear(&format!("{p}.ff1"), cfg.ffn_dim, d);
        inv.linear(&format!("{p}.ff2"), d, cfg.ffn_dim);
    }

    inv.component = Merge;
    inv.layer_norm("t.merge.ln", cfg.t_merged());
    inv.mha("t.merge.attn", cfg.t_merged());

    inv.component = HBranch;
    inv.linear("h.fc1", cfg.h_hidden, f);
    inv.batch_norm("h.bn1", cfg.h_hidden);
    inv.linear("h.fc2", cfg.h_out, cfg.h_hidden);
    inv.batch_norm("h.bn2", cfg.h_out);

    inv.component = CBranch;
    inv.push("c.ds_embed".into(), vec![cfg.datasets, cfg.embed_dim], Role::Weight);
    inv.push("c.dev_embed".into(), vec![cfg.devices, cfg.embed_dim], Role::Weight);

    inv.component = Fusion;
    let df = cfg.fusion_dim;
    inv.linear("fusion.proj_t", df, cfg.t_merged());
    inv.linear("fusion.proj_c", df, cfg.c_out());
    inv.linear("fusion.proj_h", df, cfg.h_out);
    for b in ["t", "c", "h"] {
        for m in ["q", "k", "v"] {
            inv.linear(&format!("fusion.{b}.{m}"), df, df);
        }
        inv.linear(&format!("fusion.{b}.gate"), df, 2 * df);
    }
    inv.layer_norm("fusion.ln", cfg.fused_dim());

    inv.component = Head;
    let [h1, h2] = cfg.head_hidden;
    inv.linear("head.raw", cfg.raw_dim, f);
    inv.batch_norm("head.raw_bn", cfg.raw_dim);
    inv.linear("head.fc1", h1, cfg.classifier_in());
    inv.batch_norm("head.bn1", h1);
    inv.linear("head.fc2", h2, h1);
    inv.batch_norm("head.bn2", h2);
    inv.linear("head.skip", h2, cfg.classifier_in());
    inv.linear("head.out", cfg.classes, h2);

    inv.component = Decoder;
    inv.linear("decoder.fc1", cfg.decoder_hidden, cfg.fused_dim());
    inv.linear("decoder.fc2", f, cfg.decoder_hidden);

    inv.specs
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("tensor dims {dims:?} need {n} values, got {}", data.len())));
        }
        Ok(Tensor { dims, data })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Trailer {
    conventions: Conventions,
    config: ModelConfig,
}

/// Named single-precision tensors plus the conventions they were laid out under.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore {
    pub config: ModelConfig,
    pub conventions: Conventions,
    pub tensors: BTreeMap<String, Tensor>,
}

impl WeightStore {
    /// Uniform(−0.05, 0.05) for weights, biases, shifts and running means; norm
    /// scales and running variances are centred on 1 instead.
    pub fn random(cfg: &ModelConfig, conv: Conventions, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SplitMix64::new(seed);
        let mut tensors = BTreeMap::new();
        for spec in layer_inventory(cfg, conv) {
            let offset = match spec.role {
                Role::NormScale | Role::RunningVar => 1.0,
                _ => 0.0,
            };
            let data = (0..spec.numel())
                .map(|_| (offset + rng.uniform(-INIT_RANGE, INIT_RANGE)) as f32)
                .collect();
            tensors.insert(spec.name, Tensor { dims: spec.dims, data });
        }
        Ok(WeightStore { config: cfg.clone(), conventions: conv, tensors })
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let inv = layer_inventory(&self.config, self.conventions);
        for spec in &inv {
            let t = self
                .tensors
                .get(&spec.name)
                .ok_or_else(|| Error::Weights(format!("missing tensor {}", spec.name)))?;
            if t.dims != spec.dims {
                return Err(Error::Weights(format!(
                    "tensor {} has dims {:?}, inventory expects {:?}",
                    spec.name, t.dims, spec.dims
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Weights(format!("tensor {} holds non-finite values", spec.name)));
            }
            if spec.role == Role::RunningVar && t.data.iter().any(|&v| v < 0.0) {
                return Err(Error::Weights(format!("tensor {} holds a negative variance", spec.name)));
            }
        }
        if self.tensors.len() != inv.len() {
            let known: std::collections::BTreeSet<&str> = inv.iter().map(|s| s.name.as_str()).collect();
            let extra: Vec<&str> = self.tensors.keys().map(String::as_str).filter(|k| !known.contains(k)).collect();
            return Err(Error::Weights(format!("tensors outside the inventory: {extra:?}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&[f32]> {
        self.tensors
            .get(name)
            .map(|t| t.data.as_slice())
            .ok_or_else(|| Error::Weights(format!("missing tensor {name}")))
    }

    pub fn opt(&self, name: &str) -> Option<&[f32]> {
        self.tensors.get(name).map(|t| t.data.as_slice())
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Vec<f32>> {
        self.tensors
            .get_mut(name)
            .map(|t| &mut t.data)
            .ok_or_else(|| Error::Weights(format!("missing tensor {name}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let trailer = Trailer { conventions: self.conventions, config: self.config.clone() };
        let json = serde_json::to_vec(&trailer).map_err(|e| Error::json("weights trailer", e))?;
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        Ok(out)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Weights(m.to_string());
        let mut magic = [0u8; WEIGHTS_MAGIC.len()];
        bytes.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if magic != WEIGHTS_MAGIC {
            return Err(bad("bad magic line"));
        }
        let u32_at = |b: &mut &[u8]| -> Result<u32> {
            let mut buf = [0u8; 4];
            b.read_exact(&mut buf).map_err(|_| bad("truncated file"))?;
            Ok(u32::from_le_bytes(buf))
        };
        let count = u32_at(&mut bytes)?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let len = u32_at(&mut bytes)? as usize;
            if bytes.len() < len {
                return Err(bad("truncated tensor name"));
            }
            let name = std::str::from_utf8(&bytes[..len]).map_err(|_| bad("tensor name is not UTF-8"))?.to_string();
            bytes = &bytes[len..];
            let rank = u32_at(&mut bytes)? as usize;
            let dims = (0..rank).map(|_| u32_at(&mut bytes).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            if bytes.len() < 4 * n {
                return Err(Error::Weights(format!("truncated data for {name}")));
            }
            let data = bytes[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            bytes = &bytes[4 * n..];
            if tensors.insert(name.clone(), Tensor { dims, data }).is_some() {
                return Err(Error::Weights(format!("tensor {name} appears twice")));
            }
        }
        let len = u32_at(&mut bytes)? as usize;
        if bytes.len() != len {
            return Err(bad("trailer length does not match the remaining bytes"));
        }
        let trailer: Trailer = serde_json::from_slice(bytes).map_err(|e| Error::json("weights trailer", e))?;
        let store = WeightStore { config: trailer.config, conventions: trailer.conventions, tensors };
        store.validate()?;
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
