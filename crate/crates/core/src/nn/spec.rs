//! Declarative model topologies and the builders for the baseline networks
//! and the collaborative residual model.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a residual block's skip projection reads from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkipSource {
    /// The block's own input (the classic two-hop shortcut).
    BlockInput,
    /// The raw model input, regardless of where the block sits.
    ModelInput,
}

/// `out = ReLU(fc2(dropout(ReLU(fc1(x)))) + skip · s)` where `s` is the
/// block input or the model input. The skip always carries its own weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlockSpec {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub dropout_rate: f32,
    pub skip_from: SkipSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerSpec {
    Dense { in_dim: usize, out_dim: usize },
    ReLU,
    Dropout { rate: f32 },
    ResidualBlock(ResidualBlockSpec),
    /// Parallel branches fed by the same input, outputs concatenated in
    /// branch order.
    Concat { branches: Vec<Vec<LayerSpec>> },
    /// Dense projection to label logits followed by a sigmoid.
    SigmoidHead { in_dim: usize, out_dim: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<LayerSpec>,
}

/// Shape of one learned tensor: `(rows, cols)`; weights are `out × in`,
/// biases `1 × out`.
pub type ParamShape = (usize, usize);

impl LayerSpec {
    /// Output width of the concatenation.
    pub fn branch_dims(branches: &[Vec<LayerSpec>], input_dim: usize) -> Vec<usize> {
        branches
            .iter()
            .map(|b| b.iter().fold(input_dim, |d, l| l.output_dim(d)))
            .collect()
    }

    fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            LayerSpec::Dense { out_dim, .. } | LayerSpec::SigmoidHead { out_dim, .. } => *out_dim,
            LayerSpec::ReLU | LayerSpec::Dropout { .. } => input_dim,
            LayerSpec::ResidualBlock(b) => b.out_dim,
            LayerSpec::Concat { branches } => Self::branch_dims(branches, input_dim).iter().sum(),
        }
    }
}

fn check_rate(rate: f32) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::InvalidModel(format!("dropout rate {rate} outside [0, 1)")))
    }
}

impl ModelSpec {
    /// Checks dimension flow, dropout rates and head placement.
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidModel("input and output dims must be >= 1".into()));
        }
        match self.layers.last() {
            Some(LayerSpec::SigmoidHead { out_dim, .. }) if *out_dim == self.output_dim => {}
            Some(LayerSpec::SigmoidHead { out_dim, .. }) => {
                return Err(Error::InvalidModel(format!(
                    "head emits {out_dim} labels but model declares {}",
                    self.output_dim
                )))
            }
            _ => return Err(Error::InvalidModel("model must end in a SigmoidHead".into())),
        }
        let body = &self.layers[..self.layers.len() - 1];
        // A head directly on the sparse input is a plain logistic model.
        let (dim, _) = self.validate_chain(body, self.input_dim, true, "model")?;
        if let Some(LayerSpec::SigmoidHead { in_dim, .. }) = self.layers.last() {
            if *in_dim != dim || *in_dim == 0 {
                return Err(Error::InvalidModel(format!(
                    "head expects {in_dim} inputs but receives {dim}"
                )));
            }
        }
        Ok(())
    }

    /// Returns the output dim and whether the output is still the raw input.
    fn validate_chain(
        &self,
        layers: &[LayerSpec],
        mut dim: usize,
        mut raw: bool,
        ctx: &str,
    ) -> Result<(usize, bool)> {
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                LayerSpec::Dense { in_dim, out_dim } => {
                    if *in_dim != dim || *out_dim == 0 {
                        return Err(Error::InvalidModel(format!(
                            "{ctx} layer {i}: Dense {in_dim}->{out_dim} receives width {dim}"
                        )));
                    }
                    dim = *out_dim;
                    raw = false;
                }
                LayerSpec::ReLU | LayerSpec::Dropout { .. } => {
                    if raw {
                        return Err(Error::InvalidModel(format!(
                            "{ctx} layer {i}: the sparse input must first pass a Dense, ResidualBlock or Concat"
                        )));
                    }
                    if let LayerSpec::Dropout { rate } = layer {
                        check_rate(*rate)?;
                    }
                }
                LayerSpec::ResidualBlock(b) => {
                    if b.in_dim != dim || b.hidden_dim == 0 || b.out_dim == 0 {
                        return Err(Error::InvalidModel(format!(
                            "{ctx} layer {i}: ResidualBlock {}->{}->{} receives width {dim}",
                            b.in_dim, b.hidden_dim, b.out_dim
                        )));
                    }
                    check_rate(b.dropout_rate)?;
                    dim = b.out_dim;
                    raw = false;
                }
                LayerSpec::Concat { branches } => {
                    if branches.is_empty() {
                        return Err(Error::InvalidModel(format!("{ctx} layer {i}: Concat without branches")));
                    }
                    let mut total = 0;
                    for (b, branch) in branches.iter().enumerate() {
                        if branch.is_empty() {
                            return Err(Error::InvalidModel(format!(
                                "{ctx} layer {i}: branch {b} is empty"
                            )));
                        }
                        let (d, r) =
                            self.validate_chain(branch, dim, raw, &format!("{ctx} layer {i} branch {b}"))?;
                        debug_assert!(!r);
                        total += d;
                    }
                    dim = total;
                    raw = false;
                }
                LayerSpec::SigmoidHead { .. } => {
                    return Err(Error::InvalidModel(format!(
                        "{ctx} layer {i}: SigmoidHead allowed only as the final layer"
                    )))
                }
            }
        }
        Ok((dim, raw))
    }

    /// Canonical `(name, shape)` list. Names encode the layer path, e.g.
    /// `l0.b2.l0.fc1.main` is branch 2 of top-level layer 0.
    pub fn param_shapes(&self) -> Vec<(String, ParamShape)> {
        let mut out = Vec::new();
        collect_shapes(&self.layers, self.input_dim, self.input_dim, "", &mut out);
        out
    }

    /// Total learned scalars, computed from the topology alone.
    pub fn parameter_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, (r, c))| r * c).sum()
    }
}

fn collect_shapes(
    layers: &[LayerSpec],
    mut dim: usize,
    model_input: usize,
    prefix: &str,
    out: &mut Vec<(String, ParamShape)>,
) {
    for (i, layer) in layers.iter().enumerate() {
        let p = format!("{prefix}l{i}");
        match layer {
            LayerSpec::Dense { in_dim, out_dim } | LayerSpec::SigmoidHead { in_dim, out_dim } => {
                out.push((format!("{p}.main"), (*out_dim, *in_dim)));
                out.push((format!("{p}.bias"), (1, *out_dim)));
            }
            LayerSpec::ReLU | LayerSpec::Dropout { .. } => {}
            LayerSpec::ResidualBlock(b) => {
                let skip_dim = match b.skip_from {
                    SkipSource::BlockInput => b.in_dim,
                    SkipSource::ModelInput => model_input,
                };
                out.push((format!("{p}.fc1.main"), (b.hidden_dim, b.in_dim)));
                out.push((format!("{p}.fc1.bias"), (1, b.hidden_dim)));
                out.push((format!("{p}.fc2.main"), (b.out_dim, b.hidden_dim)));
                out.push((format!("{p}.fc2.bias"), (1, b.out_dim)));
                out.push((format!("{p}.skip"), (b.out_dim, skip_dim)));
            }
            LayerSpec::Concat { branches } => {
                for (b, branch) in branches.iter().enumerate() {
                    collect_shapes(branch, dim, model_input, &format!("{p}.b{b}."), out);
                }
            }
        }
        dim = layer.output_dim(dim);
    }
}

/// The eight reference networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BaselineId {
    M1,
    M2,
    M3,
    M4,
    M5,
    M6,
    M7,
    M8,
}

impl BaselineId {
    pub const ALL: [BaselineId; 8] = [
        BaselineId::M1,
        BaselineId::M2,
        BaselineId::M3,
        BaselineId::M4,
        BaselineId::M5,
        BaselineId::M6,
        BaselineId::M7,
        BaselineId::M8,
    ];

    /// Hidden widths and whether the network has a dropout layer.
    pub fn layout(self) -> (&'static [usize], bool) {
        match self {
            BaselineId::M1 => (&[600], false),
            BaselineId::M2 => (&[600], true),
            BaselineId::M3 => (&[600, 400], false),
            BaselineId::M4 => (&[600, 400], true),
            BaselineId::M5 => (&[600, 400, 250], false),
            BaselineId::M6 => (&[600, 400, 250], true),
            BaselineId::M7 => (&[600, 400, 250, 200, 150], true),
            BaselineId::M8 => (&[600, 400], true),
        }
    }
}

impl fmt::Display for BaselineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for BaselineId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineId::ALL
            .into_iter()
            .find(|id| id.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown baseline '{s}' (valid: M1..M8)")))
    }
}

pub const BASELINE_DROPOUT: f32 = 0.35;

/// M1–M7 are plain stacks of Dense+ReLU; the networks with a dropout layer
/// place it after the first hidden ReLU. M8 is one residual block 600→400
/// with the dropout inside the block.
pub fn build_baseline(id: BaselineId, input_dim: usize, output_dim: usize) -> Result<ModelSpec> {
    build_baseline_scaled(id, input_dim, output_dim, 1)
}

/// Same topology with every hidden width divided by `divisor` (rounded up,
/// at least 1). Used for cheap verification runs.
pub fn build_baseline_scaled(
    id: BaselineId,
    input_dim: usize,
    output_dim: usize,
    divisor: usize,
) -> Result<ModelSpec> {
    if input_dim == 0 || output_dim == 0 || divisor == 0 {
        return Err(Error::invalid("baseline dims must be >= 1"));
    }
    let (widths, dropout) = id.layout();
    let widths: Vec<usize> = widths.iter().map(|w| w.div_ceil(divisor).max(1)).collect();
    let mut layers = Vec::new();
    let last;
    if id == BaselineId::M8 {
        layers.push(LayerSpec::ResidualBlock(ResidualBlockSpec {
            in_dim: input_dim,
            hidden_dim: widths[0],
            out_dim: widths[1],
            dropout_rate: BASELINE_DROPOUT,
            skip_from: SkipSource::BlockInput,
        }));
        last = widths[1];
    } else {
        let mut dim = input_dim;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(LayerSpec::Dense { in_dim: dim, out_dim: w });
            layers.push(LayerSpec::ReLU);
            if dropout && i == 0 {
                layers.push(LayerSpec::Dropout { rate: BASELINE_DROPOUT });
            }
            dim = w;
        }
        last = dim;
    }
    layers.push(LayerSpec::SigmoidHead {
        in_dim: last,
        out_dim: output_dim,
    });
    let spec = ModelSpec {
        name: id.to_string(),
        input_dim,
        output_dim,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

/// Shape of the collaborative residual model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollabResConfig {
    /// Hidden width of each branch's residual block; one entry per branch.
    pub branch_hidden: Vec<usize>,
    /// Output width of each branch.
    pub branch_out: Vec<usize>,
    /// Dropout rate of each branch.
    pub dropout_rates: Vec<f32>,
    /// Width of the fusion block on top of the concatenation.
    pub fusion_width: usize,
}

impl Default for CollabResConfig {
    fn default() -> Self {
        CollabResConfig::uniform(4, 600, 400, vec![0.1, 0.2, 0.3, 0.4], 600)
    }
}

impl CollabResConfig {
    pub fn uniform(branches: usize, hidden: usize, out: usize, dropout_rates: Vec<f32>, fusion_width: usize) -> Self {
        CollabResConfig {
            branch_hidden: vec![hidden; branches],
            branch_out: vec![out; branches],
            dropout_rates,
            fusion_width,
        }
    }

    pub fn branches(&self) -> usize {
        self.branch_hidden.len()
    }

    /// Hard errors for unusable configurations; the returned strings are
    /// warnings (repeated dropout rates).
    pub fn validate(&self) -> Result<Vec<String>> {
        let k = self.branch_hidden.len();
        if k == 0 {
            return Err(Error::invalid("collabres needs at least one branch"));
        }
        if self.branch_out.len() != k || self.dropout_rates.len() != k {
            return Err(Error::invalid(format!(
                "collabres: {k} branch widths but {} output widths and {} dropout rates",
                self.branch_out.len(),
                self.dropout_rates.len()
            )));
        }
        if self.branch_hidden.iter().chain(&self.branch_out).any(|&w| w == 0) || self.fusion_width == 0 {
            return Err(Error::invalid("collabres widths must be >= 1"));
        }
        for &r in &self.dropout_rates {
            check_rate(r)?;
        }
        let mut warnings = Vec::new();
        for i in 0..k {
            for j in i + 1..k {
                if self.dropout_rates[i] == self.dropout_rates[j] {
                    warnings.push(format!(
                        "branches {i} and {j} share dropout rate {}; branches are meant to differ",
                        self.dropout_rates[i]
                    ));
                }
            }
        }
        Ok(warnings)
    }
}

/// `k` residual branches on the input, concatenated, then a fusion residual
/// block whose skip projects the raw input, then the sigmoid head.
pub fn build_collabres(input_dim: usize, output_dim: usize, cfg: &CollabResConfig) -> Result<ModelSpec> {
    if input_dim == 0 || output_dim == 0 {
        return Err(Error::invalid("collabres dims must be >= 1"));
    }
    for w in cfg.validate()? {
        log::warn!("{w}");
    }
    let branches: Vec<Vec<LayerSpec>> = (0..cfg.branches())
        .map(|b| {
            vec![LayerSpec::ResidualBlock(ResidualBlockSpec {
                in_dim: input_dim,
                hidden_dim: cfg.branch_hidden[b],
                out_dim: cfg.branch_out[b],
                dropout_rate: cfg.dropout_rates[b],
                skip_from: SkipSource::BlockInput,
            })]
        })
        .collect();
    let concat_dim: usize = cfg.branch_out.iter().sum();
    let spec = ModelSpec {
        name: "collabres".into(),
        input_dim,
        output_dim,
        layers: vec![
            LayerSpec::Concat { branches },
            LayerSpec::ResidualBlock(ResidualBlockSpec {
                in_dim: concat_dim,
                hidden_dim: cfg.fusion_width,
                out_dim: cfg.fusion_width,
                dropout_rate: 0.0,
                skip_from: SkipSource::ModelInput,
            }),
            LayerSpec::SigmoidHead {
                in_dim: cfg.fusion_width,
                out_dim: output_dim,
            },
        ],
    };
    spec.validate()?;
    Ok(spec)
}
