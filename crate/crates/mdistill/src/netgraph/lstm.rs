//! Unidirectional LSTM with a recurrent projection layer, stacked
//! `lstm_layers` deep, followed by an output affine. Gate order inside the
//! packed 4H dimension is `[input, forget, candidate, output]`.

use crate::numcore::Matrix;

use super::{column_sums, ModelParams, NetError, NetworkSpec};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(super) struct LstmLayerCache {
    /// Post-activation gate values, T x 4H.
    gates: Matrix,
    /// Cell state, T x H.
    cell: Matrix,
    tanh_cell: Matrix,
    /// Pre-projection output o (*) tanh(c), T x H.
    memory: Matrix,
    /// Projected recurrent output, T x P.
    projected: Matrix,
}

fn run_layer(
    params: &ModelParams,
    spec: &NetworkSpec,
    layer: usize,
    input: &Matrix,
) -> LstmLayerCache {
    let h = spec.hidden_dim;
    let p = spec.lstm_proj_dim;
    let frames = input.rows();
    let wh = params.p(&format!("lstm{layer}.wh"));
    let bias = params.p(&format!("lstm{layer}.b"));
    let proj = params.p(&format!("lstm{layer}.proj"));

    // Input contribution for every frame in one product.
    let mut gates = input.matmul(params.p(&format!("lstm{layer}.wx")));
    gates.add_row_broadcast(bias.row(0));

    let mut cell = Matrix::zeros(frames, h);
    let mut tanh_cell = Matrix::zeros(frames, h);
    let mut memory = Matrix::zeros(frames, h);
    let mut projected = Matrix::zeros(frames, p);
    let mut prev_r = vec![0.0; p];
    let mut prev_c = vec![0.0; h];

    for t in 0..frames {
        {
            // Recurrent contribution r_{t-1} * Wh, then the nonlinearities.
            let z = gates.row_mut(t);
            for (k, &r) in prev_r.iter().enumerate() {
                if r == 0.0 {
                    continue;
                }
                for (zv, &w) in z.iter_mut().zip(wh.row(k)) {
                    *zv += r * w;
                }
            }
            for (idx, zv) in z.iter_mut().enumerate() {
                *zv = if idx < 2 * h || idx >= 3 * h {
                    sigmoid(*zv)
                } else {
                    zv.tanh()
                };
            }
        }
        for k in 0..h {
            let i_g = gates[(t, k)];
            let f_g = gates[(t, h + k)];
            let g_g = gates[(t, 2 * h + k)];
            let o_g = gates[(t, 3 * h + k)];
            let c = f_g * prev_c[k] + i_g * g_g;
            let tc = c.tanh();
            cell[(t, k)] = c;
            tanh_cell[(t, k)] = tc;
            memory[(t, k)] = o_g * tc;
            prev_c[k] = c;
        }
        {
            let m_row = memory.row(t);
            let r_row = projected.row_mut(t);
            for (k, &m) in m_row.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                for (rv, &w) in r_row.iter_mut().zip(proj.row(k)) {
                    *rv += m * w;
                }
            }
            prev_r.copy_from_slice(r_row);
        }
    }

    LstmLayerCache {
        gates,
        cell,
        tanh_cell,
        memory,
        projected,
    }
}

/// Opaque per-layer activation cache produced by [`lstm_forward`].
pub struct LstmCache {
    input: Matrix,
    layers: Vec<LstmLayerCache>,
}

/// Stacked LSTM recurrence over one utterance with zero initial state;
/// returns the last layer's projected hidden sequence (T x P) and the cache
/// for backward.
pub fn lstm_forward(
    params: &ModelParams,
    spec: &NetworkSpec,
    features: &Matrix,
) -> Result<(Matrix, LstmCache), NetError> {
    if features.cols() != spec.input_dim {
        return Err(NetError::DimensionMismatch {
            expected: format!("feature dim {}", spec.input_dim),
            actual: format!("{}", features.cols()),
        });
    }
    let mut layers: Vec<LstmLayerCache> = Vec::with_capacity(spec.lstm_layers);
    for layer in 0..spec.lstm_layers {
        let cache = match layers.last() {
            None => run_layer(params, spec, layer, features),
            Some(prev) => run_layer(params, spec, layer, &prev.projected),
        };
        layers.push(cache);
    }
    let hidden = layers.last().expect("at least one layer").projected.clone();
    Ok((
        hidden,
        LstmCache {
            input: features.clone(),
            layers,
        },
    ))
}

pub(super) fn forward(
    params: &ModelParams,
    spec: &NetworkSpec,
    features: &Matrix,
) -> Result<(Matrix, LstmCache), NetError> {
    let (hidden, cache) = lstm_forward(params, spec, features)?;
    let mut logits = hidden.matmul(params.p("out.w"));
    logits.add_row_broadcast(params.p("out.b").row(0));
    Ok((logits, cache))
}

/// Backward through one layer. `d_projected` holds the gradient arriving at
/// this layer's projected outputs from above; returns the gradient on the
/// layer input.
fn layer_backward(
    params: &ModelParams,
    spec: &NetworkSpec,
    layer: usize,
    input: &Matrix,
    cache: &LstmLayerCache,
    d_projected: &Matrix,
    grads: &mut ModelParams,
) -> Matrix {
    let h = spec.hidden_dim;
    let p = spec.lstm_proj_dim;
    let frames = input.rows();
    let wh = params.p(&format!("lstm{layer}.wh"));
    let proj = params.p(&format!("lstm{layer}.proj"));

    // Pre-activation gate gradients and the total gradient reaching each
    // projected output (upstream plus recurrent carry), filled back to front.
    let mut d_gates = Matrix::zeros(frames, 4 * h);
    let mut d_proj_total = d_projected.clone();
    let mut d_c_carry = vec![0.0; h];

    for t in (0..frames).rev() {
        {
            let dr = d_proj_total.row(t);
            let dz = d_gates.row_mut(t);
            let z = cache.gates.row(t);
            for k in 0..h {
                // Through the projection: d_m[k] = d_r . proj[k, :].
                let mut dm = 0.0;
                for (&drv, &w) in dr.iter().zip(proj.row(k)) {
                    dm += drv * w;
                }
                let (i_g, f_g, g_g, o_g) = (z[k], z[h + k], z[2 * h + k], z[3 * h + k]);
                let tc = cache.tanh_cell[(t, k)];
                let d_o = dm * tc;
                let d_c = d_c_carry[k] + dm * o_g * (1.0 - tc * tc);
                let c_prev = if t == 0 { 0.0 } else { cache.cell[(t - 1, k)] };
                let d_f = d_c * c_prev;
                let d_i = d_c * g_g;
                let d_g = d_c * i_g;
                d_c_carry[k] = d_c * f_g;
                dz[k] = d_i * i_g * (1.0 - i_g);
                dz[h + k] = d_f * f_g * (1.0 - f_g);
                dz[2 * h + k] = d_g * (1.0 - g_g * g_g);
                dz[3 * h + k] = d_o * o_g * (1.0 - o_g);
            }
        }
        if t > 0 {
            // Recurrent carry: d_r_{t-1} += d_z * Wh^T.
            let dz = d_gates.row(t);
            let dr_prev = d_proj_total.row_mut(t - 1);
            for (k, drv) in dr_prev.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (&dzv, &w) in dz.iter().zip(wh.row(k)) {
                    acc += dzv * w;
                }
                *drv += acc;
            }
        }
    }

    // Batched weight gradients.
    grads
        .p_mut(&format!("lstm{layer}.wx"))
        .axpy(1.0, &input.matmul_at_b(&d_gates));
    let mut prev_r = Matrix::zeros(frames, p);
    for t in 1..frames {
        prev_r.row_mut(t).copy_from_slice(cache.projected.row(t - 1));
    }
    grads
        .p_mut(&format!("lstm{layer}.wh"))
        .axpy(1.0, &prev_r.matmul_at_b(&d_gates));
    grads
        .p_mut(&format!("lstm{layer}.b"))
        .axpy(1.0, &column_sums(&d_gates));
    grads
        .p_mut(&format!("lstm{layer}.proj"))
        .axpy(1.0, &cache.memory.matmul_at_b(&d_proj_total));

    d_gates.matmul_a_bt(params.p(&format!("lstm{layer}.wx")))
}

pub(super) fn backward(
    params: &ModelParams,
    spec: &NetworkSpec,
    cache: &LstmCache,
    dlogits: &Matrix,
) -> Result<ModelParams, NetError> {
    let mut grads = ModelParams::zeros(spec);
    let last = &cache.layers.last().expect("layers").projected;
    *grads.p_mut("out.w") = last.matmul_at_b(dlogits);
    *grads.p_mut("out.b") = column_sums(dlogits);
    let mut d_hidden = dlogits.matmul_a_bt(params.p("out.w"));

    for layer in (0..spec.lstm_layers).rev() {
        let input = if layer == 0 {
            &cache.input
        } else {
            &cache.layers[layer - 1].projected
        };
        d_hidden = layer_backward(
            params,
            spec,
            layer,
            input,
            &cache.layers[layer],
            &d_hidden,
            &mut grads,
        );
    }
    Ok(grads)
}
