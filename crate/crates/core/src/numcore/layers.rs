use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::graph::{Activation, Graph, Var};
use crate::numcore::tensor::{ParamId, ParamStore, Tensor};

/// Standard deviation of the normal initializer used for every weight.
pub const INIT_STD: f64 = 0.1;

/// Weights of one LSTM cell. Gate rows are laid out as
/// input, forget, output, candidate.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `[4d, input_dim]`
    pub w_input: ParamId,
    /// `[4d, d]`
    pub w_hidden: ParamId,
    /// `[4d]`
    pub bias: ParamId,
}

impl LstmParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let g = 4 * hidden_dim;
        Ok(Self {
            input_dim,
            hidden_dim,
            w_input: store.add(
                format!("{prefix}.w_input"),
                Tensor::normal(&[g, input_dim], INIT_STD, rng),
            )?,
            w_hidden: store.add(
                format!("{prefix}.w_hidden"),
                Tensor::normal(&[g, hidden_dim], INIT_STD, rng),
            )?,
            bias: store.add(format!("{prefix}.bias"), Tensor::normal(&[g], INIT_STD, rng))?,
        })
    }

    /// Looks up an already-registered cell by prefix.
    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |suffix: &str| {
            store
                .id(&format!("{prefix}.{suffix}"))
                .ok_or_else(|| Error::Config(format!("missing parameter {prefix}.{suffix}")))
        };
        let w_input = get("w_input")?;
        let shape = &store.get(w_input).shape;
        Ok(Self {
            input_dim: shape[1],
            hidden_dim: shape[0] / 4,
            w_input,
            w_hidden: get("w_hidden")?,
            bias: get("bias")?,
        })
    }

    pub fn scalar_count(&self) -> usize {
        let g = 4 * self.hidden_dim;
        g * self.input_dim + g * self.hidden_dim + g
    }
}

/// One LSTM step. Returns the new hidden and cell state.
pub fn lstm_step(
    g: &mut Graph<'_>,
    params: &LstmParams,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let d = params.hidden_dim;
    for (what, v, want) in [("x", x, params.input_dim), ("h_prev", h_prev, d), ("c_prev", c_prev, d)] {
        if g.shape(v) != [want] {
            return Err(Error::dim(
                "lstm_step",
                format!("{what} has shape {:?}, expected [{want}]", g.shape(v)),
            ));
        }
    }
    let wi = g.param(params.w_input);
    let wh = g.param(params.w_hidden);
    let b = g.param(params.bias);
    let gates = g.linear(&[(wi, x), (wh, h_prev)], Some(b))?;
    let hc = g.lstm_pointwise(gates, c_prev)?;
    let h = g.slice(hc, 0, d)?;
    let c = g.slice(hc, d, d)?;
    Ok((h, c))
}

/// Runs an LSTM over the unmasked positions of `xs`, in the given direction,
/// starting from `init` (zeros when `None`). Masked positions yield `None` and
/// leave the recurrent state untouched.
pub fn lstm_run(
    g: &mut Graph<'_>,
    params: &LstmParams,
    xs: &[Var],
    mask: &[bool],
    reverse: bool,
    init: Option<(Var, Var)>,
) -> Result<Vec<Option<Var>>> {
    if xs.len() != mask.len() {
        return Err(Error::dim(
            "lstm_run",
            format!("{} inputs vs {} mask entries", xs.len(), mask.len()),
        ));
    }
    let d = params.hidden_dim;
    let (mut h, mut c) = match init {
        Some(s) => s,
        None => (g.zeros(&[d]), g.zeros(&[d])),
    };
    let mut out = vec![None; xs.len()];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..xs.len()).rev())
    } else {
        Box::new(0..xs.len())
    };
    for t in order {
        if !mask[t] {
            continue;
        }
        (h, c) = lstm_step(g, params, xs[t], h, c)?;
        out[t] = Some(h);
    }
    Ok(out)
}

/// Bidirectional encoding: `[forward_h; backward_h]` per position, the zero
/// vector of width `2d` at masked positions.
pub fn bilstm_encode(
    g: &mut Graph<'_>,
    fwd: &LstmParams,
    bwd: &LstmParams,
    xs: &[Var],
    mask: &[bool],
) -> Result<Vec<Var>> {
    if xs.is_empty() {
        return Err(Error::InvalidInput("bilstm_encode over an empty sequence".into()));
    }
    if fwd.hidden_dim != bwd.hidden_dim {
        return Err(Error::dim("bilstm_encode", "forward and backward widths differ"));
    }
    let f = lstm_run(g, fwd, xs, mask, false, None)?;
    let b = lstm_run(g, bwd, xs, mask, true, None)?;
    let width = fwd.hidden_dim + bwd.hidden_dim;
    let mut zero = None;
    f.into_iter()
        .zip(b)
        .map(|pair| match pair {
            (Some(hf), Some(hb)) => g.concat(&[hf, hb]),
            _ => Ok(*zero.get_or_insert_with(|| g.zeros(&[width]))),
        })
        .collect()
}

/// Arithmetic mean over the unmasked entries.
pub fn mean_pool(g: &mut Graph<'_>, xs: &[Var], mask: &[bool]) -> Result<Var> {
    if xs.len() != mask.len() {
        return Err(Error::dim("mean_pool", "inputs and mask differ in length"));
    }
    let kept: Vec<Var> = xs.iter().zip(mask).filter(|(_, &m)| m).map(|(&x, _)| x).collect();
    if kept.is_empty() {
        return Err(Error::InvalidInput("mean_pool with every position masked".into()));
    }
    g.mean_of(&kept)
}

#[derive(Clone, Debug)]
pub struct Dense {
    /// `[out, in]`
    pub weight: ParamId,
    /// `[out]`
    pub bias: ParamId,
    pub activation: Activation,
}

/// Stack of dense layers: `y = act_L(W_L ... act_1(W_1 x + b_1) ... + b_L)`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub layers: Vec<Dense>,
}

impl FeedForward {
    /// Registers layers with the given widths: `dims = [in, h1, ..., out]`.
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() != activations.len() + 1 {
            return Err(Error::Config(format!(
                "{prefix}: {} widths need {} activations",
                dims.len(),
                dims.len().saturating_sub(1)
            )));
        }
        let mut layers = Vec::with_capacity(activations.len());
        for (k, (w, &act)) in dims.windows(2).zip(activations).enumerate() {
            let name = if activations.len() == 1 {
                prefix.to_string()
            } else {
                format!("{prefix}.{k}")
            };
            layers.push(Dense {
                weight: store.add(format!("{name}.weight"), Tensor::normal(&[w[1], w[0]], INIT_STD, rng))?,
                bias: store.add(format!("{name}.bias"), Tensor::normal(&[w[1]], INIT_STD, rng))?,
                activation: act,
            });
        }
        Ok(Self { layers })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            let w = g.param(layer.weight);
            let b = g.param(layer.bias);
            let z = g.linear(&[(w, h)], Some(b))?;
            h = g.activate(z, layer.activation);
        }
        Ok(h)
    }

    pub fn scalar_count(&self, store: &ParamStore) -> usize {
        self.layers
            .iter()
            .map(|l| store.get(l.weight).numel() + store.get(l.bias).numel())
            .sum()
    }
}

/// Inverted dropout with a mask drawn from `rng`; identity when `rate == 0`.
pub fn dropout<R: Rng + ?Sized>(g: &mut Graph<'_>, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
    if rate <= 0.0 {
        return Ok(x);
    }
    if rate >= 1.0 {
        return Err(Error::Config(format!("dropout rate {rate} must be below 1")));
    }
    let keep = 1.0 - rate;
    let mask = (0..g.numel(x))
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    g.dropout_with_mask(x, mask)
}
