//! Forward execution of a [`ModelSpec`] and exact backpropagation through it.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::layers::{
    dense_backward, dense_forward, dense_forward_act, dropout_backward, dropout_forward, project, relu,
    relu_backward, sigmoid_scores, Act, Mode,
};
use crate::nn::params::{Gradients, Parameters};
use crate::nn::spec::{LayerSpec, ModelSpec, SkipSource};
use crate::tensor::{DenseMatrix, Scalar, SeededRng, SparseBinaryMatrix};

/// Cached state of one forward pass, consumed by [`model_backward`].
#[derive(Debug)]
pub struct ForwardTrace<T> {
    pub mode: Mode,
    pub logits: DenseMatrix<T>,
    layers: Vec<LayerTrace<T>>,
}

impl<T> ForwardTrace<T> {
    /// True if any dropout mask was recorded.
    pub fn has_masks(&self) -> bool {
        self.layers.iter().any(LayerTrace::has_masks)
    }
}

#[derive(Debug)]
enum LayerTrace<T> {
    Dense {
        input: Act<T>,
    },
    Relu {
        output: Arc<DenseMatrix<T>>,
    },
    Dropout {
        mask: Option<DenseMatrix<T>>,
    },
    Residual {
        input: Act<T>,
        skip_input: Act<T>,
        hidden: Arc<DenseMatrix<T>>,
        mask: Option<DenseMatrix<T>>,
        fc2_input: Act<T>,
        output: Arc<DenseMatrix<T>>,
    },
    Concat {
        branches: Vec<Vec<LayerTrace<T>>>,
        widths: Vec<usize>,
    },
    Head {
        input: Act<T>,
    },
}

impl<T> LayerTrace<T> {
    fn has_masks(&self) -> bool {
        match self {
            LayerTrace::Dropout { mask } | LayerTrace::Residual { mask, .. } => mask.is_some(),
            LayerTrace::Concat { branches, .. } => branches.iter().flatten().any(LayerTrace::has_masks),
            _ => false,
        }
    }
}

struct Ctx<'a, T> {
    params: &'a Parameters<T>,
    model_input: Act<T>,
    mode: Mode,
}

/// Runs the model on a sparse batch. Returns per-label sigmoid scores and
/// the trace for backpropagation. `Infer` mode never touches `rng`.
pub fn model_forward<T: Scalar>(
    spec: &ModelSpec,
    params: &Parameters<T>,
    batch: &SparseBinaryMatrix,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<(DenseMatrix<T>, ForwardTrace<T>)> {
    let trace = forward_logits(spec, params, batch, mode, rng)?;
    Ok((sigmoid_scores(&trace.logits), trace))
}

/// Forward pass that stops at the logits.
pub fn forward_logits<T: Scalar>(
    spec: &ModelSpec,
    params: &Parameters<T>,
    batch: &SparseBinaryMatrix,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<ForwardTrace<T>> {
    if batch.cols() != spec.input_dim {
        return Err(Error::ShapeMismatch {
            op: "model_forward",
            left: (batch.rows(), batch.cols()),
            right: (spec.input_dim, spec.output_dim),
        });
    }
    params.check_against(spec)?;
    let input = Act::Sparse(Arc::new(batch.clone()));
    let ctx = Ctx {
        params,
        model_input: input.clone(),
        mode,
    };
    let mut layers = Vec::with_capacity(spec.layers.len());
    let out = forward_chain(&ctx, &spec.layers, "", input, rng, &mut layers)?;
    let logits = match out {
        Act::Dense(d) => Arc::try_unwrap(d).unwrap_or_else(|d| (*d).clone()),
        Act::Sparse(_) => return Err(Error::InvalidModel("model produced no logits".into())),
    };
    Ok(ForwardTrace { mode, logits, layers })
}

/// Infer-mode scores without keeping a trace around.
pub fn predict_scores<T: Scalar>(
    spec: &ModelSpec,
    params: &Parameters<T>,
    batch: &SparseBinaryMatrix,
) -> Result<DenseMatrix<T>> {
    // Infer mode never draws, so any generator will do.
    let mut rng = SeededRng::new(0);
    Ok(model_forward(spec, params, batch, Mode::Infer, &mut rng)?.0)
}

fn forward_chain<T: Scalar>(
    ctx: &Ctx<'_, T>,
    layers: &[LayerSpec],
    prefix: &str,
    mut x: Act<T>,
    rng: &mut SeededRng,
    traces: &mut Vec<LayerTrace<T>>,
) -> Result<Act<T>> {
    for (i, layer) in layers.iter().enumerate() {
        let p = format!("{prefix}l{i}");
        x = match layer {
            LayerSpec::Dense { .. } | LayerSpec::SigmoidHead { .. } => {
                let w = ctx.params.get(&format!("{p}.main"))?;
                let b = ctx.params.get(&format!("{p}.bias"))?;
                let out = dense_forward_act(&x, w, b)?;
                traces.push(if matches!(layer, LayerSpec::Dense { .. }) {
                    LayerTrace::Dense { input: x }
                } else {
                    LayerTrace::Head { input: x }
                });
                Act::Dense(Arc::new(out))
            }
            LayerSpec::ReLU => {
                let d = dense_input(&x, &p)?;
                let out = Arc::new(relu(d));
                traces.push(LayerTrace::Relu { output: out.clone() });
                Act::Dense(out)
            }
            LayerSpec::Dropout { rate } => {
                let d = dense_input(&x, &p)?;
                let (y, mask) = dropout_forward(d, *rate, ctx.mode, rng)?;
                traces.push(LayerTrace::Dropout { mask });
                Act::Dense(Arc::new(y))
            }
            LayerSpec::ResidualBlock(spec) => {
                let skip_input = match spec.skip_from {
                    SkipSource::BlockInput => x.clone(),
                    SkipSource::ModelInput => ctx.model_input.clone(),
                };
                let w1 = ctx.params.get(&format!("{p}.fc1.main"))?;
                let b1 = ctx.params.get(&format!("{p}.fc1.bias"))?;
                let w2 = ctx.params.get(&format!("{p}.fc2.main"))?;
                let b2 = ctx.params.get(&format!("{p}.fc2.bias"))?;
                let ws = ctx.params.get(&format!("{p}.skip"))?;
                let hidden = Arc::new(relu(&dense_forward_act(&x, w1, b1)?));
                let (fc2_input, mask) = match dropout_forward(&hidden, spec.dropout_rate, ctx.mode, rng)? {
                    (_, None) => (hidden.clone(), None),
                    (y, mask) => (Arc::new(y), mask),
                };
                let mut z = dense_forward(&fc2_input, w2, b2)?;
                let s = project(&skip_input, ws)?;
                z.add_assign(&s)?;
                let output = Arc::new(relu(&z));
                traces.push(LayerTrace::Residual {
                    input: x,
                    skip_input,
                    hidden,
                    mask,
                    fc2_input: Act::Dense(fc2_input),
                    output: output.clone(),
                });
                Act::Dense(output)
            }
            LayerSpec::Concat { branches } => {
                let mut outs = Vec::with_capacity(branches.len());
                let mut branch_traces = Vec::with_capacity(branches.len());
                for (b, branch) in branches.iter().enumerate() {
                    let mut t = Vec::with_capacity(branch.len());
                    let out = forward_chain(ctx, branch, &format!("{p}.b{b}."), x.clone(), rng, &mut t)?;
                    outs.push(dense_input(&out, &p)?.clone());
                    branch_traces.push(t);
                }
                let widths = outs.iter().map(|o| o.cols()).collect();
                let refs: Vec<&DenseMatrix<T>> = outs.iter().map(|o| o.as_ref()).collect();
                let joined = crate::nn::layers::concat_forward(&refs)?;
                traces.push(LayerTrace::Concat {
                    branches: branch_traces,
                    widths,
                });
                Act::Dense(Arc::new(joined))
            }
        };
    }
    Ok(x)
}

fn dense_input<'a, T: Scalar>(x: &'a Act<T>, at: &str) -> Result<&'a Arc<DenseMatrix<T>>> {
    x.dense()
        .ok_or_else(|| Error::InvalidModel(format!("{at}: layer cannot consume the sparse input")))
}

/// Gradient of the loss w.r.t. every parameter, given the loss gradient
/// w.r.t. the logits. Skip edges add their contribution to the gradient
/// of the block input; dropout masks are replayed from the trace.
pub fn model_backward<T: Scalar>(
    spec: &ModelSpec,
    params: &Parameters<T>,
    trace: &ForwardTrace<T>,
    dlogits: &DenseMatrix<T>,
) -> Result<Gradients<T>> {
    if trace.mode != Mode::Train {
        return Err(Error::InvalidModel("backward requires a Train-mode trace".into()));
    }
    if trace.layers.len() != spec.layers.len() {
        return Err(Error::InvalidModel("trace does not belong to this spec".into()));
    }
    if dlogits.shape() != trace.logits.shape() {
        return Err(Error::ShapeMismatch {
            op: "model_backward",
            left: dlogits.shape(),
            right: trace.logits.shape(),
        });
    }
    let mut grads = Gradients::new();
    backward_chain(&spec.layers, &trace.layers, "", params, dlogits.clone(), &mut grads)?;
    Ok(grads)
}

fn backward_chain<T: Scalar>(
    layers: &[LayerSpec],
    traces: &[LayerTrace<T>],
    prefix: &str,
    params: &Parameters<T>,
    mut dy: DenseMatrix<T>,
    grads: &mut Gradients<T>,
) -> Result<Option<DenseMatrix<T>>> {
    if layers.len() != traces.len() {
        return Err(Error::InvalidModel("trace does not belong to this spec".into()));
    }
    for (i, (layer, trace)) in layers.iter().zip(traces).enumerate().rev() {
        let p = format!("{prefix}l{i}");
        let dx = match (layer, trace) {
            (LayerSpec::Dense { .. }, LayerTrace::Dense { input })
            | (LayerSpec::SigmoidHead { .. }, LayerTrace::Head { input }) => {
                let w = params.get(&format!("{p}.main"))?;
                let g = dense_backward(input, w, &dy, i > 0)?;
                grads.insert(format!("{p}.main"), g.weight);
                grads.insert(format!("{p}.bias"), g.bias);
                g.input
            }
            (LayerSpec::ReLU, LayerTrace::Relu { output }) => Some(relu_backward(output, &dy)),
            (LayerSpec::Dropout { .. }, LayerTrace::Dropout { mask }) => Some(dropout_backward(mask.as_ref(), dy)),
            (
                LayerSpec::ResidualBlock(spec),
                LayerTrace::Residual {
                    input,
                    skip_input,
                    hidden,
                    mask,
                    fc2_input,
                    output,
                },
            ) => {
                let dz = relu_backward(output, &dy);
                let w2 = params.get(&format!("{p}.fc2.main"))?;
                let g2 = dense_backward(fc2_input, w2, &dz, true)?;
                let dh = dropout_backward(mask.as_ref(), g2.input.expect("fc2 input is dense"));
                let dz1 = relu_backward(hidden, &dh);
                let w1 = params.get(&format!("{p}.fc1.main"))?;
                let g1 = dense_backward(input, w1, &dz1, true)?;
                let ws = params.get(&format!("{p}.skip"))?;
                let block_input_skip = spec.skip_from == SkipSource::BlockInput;
                let gs = dense_backward(skip_input, ws, &dz, block_input_skip)?;
                grads.insert(format!("{p}.fc1.main"), g1.weight);
                grads.insert(format!("{p}.fc1.bias"), g1.bias);
                grads.insert(format!("{p}.fc2.main"), g2.weight);
                grads.insert(format!("{p}.fc2.bias"), g2.bias);
                grads.insert(format!("{p}.skip"), gs.weight);
                match (g1.input, gs.input) {
                    (Some(mut main), Some(skip)) => {
                        main.add_assign(&skip)?;
                        Some(main)
                    }
                    (main, _) => main,
                }
            }
            (LayerSpec::Concat { branches }, LayerTrace::Concat { branches: bt, widths }) => {
                let mut dx: Option<DenseMatrix<T>> = None;
                let mut start = 0;
                for (b, (branch, btrace)) in branches.iter().zip(bt).enumerate() {
                    let slice = dy.slice_cols(start, start + widths[b]);
                    start += widths[b];
                    let d = backward_chain(branch, btrace, &format!("{p}.b{b}."), params, slice, grads)?;
                    dx = match (dx, d) {
                        (Some(mut acc), Some(d)) => {
                            acc.add_assign(&d)?;
                            Some(acc)
                        }
                        (acc, d) => acc.or(d),
                    };
                }
                dx
            }
            _ => return Err(Error::InvalidModel(format!("{p}: trace does not match layer"))),
        };
        match dx {
            Some(d) => dy = d,
            None => return Ok(None),
        }
    }
    Ok(Some(dy))
}
