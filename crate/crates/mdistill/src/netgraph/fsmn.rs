//! Feedforward path with memory blocks:
//! affine -> ReLU -> [memory block -> affine -> ReLU] x blocks -> output affine.

use crate::numcore::Matrix;

use super::{column_sums, ModelParams, NetError, NetworkSpec};

/// Memory block over hidden frames `h` (T x H):
///
/// `p_t = h_t + sum_i a_i (*) h_{t - i*s1} + sum_j b_j (*) h_{t + j*s2}`
///
/// where `(*)` is the elementwise product, `a` holds the look-back tap
/// vectors as rows (i = 1..=N1), `b` the look-ahead taps (j = 1..=N2), and
/// frames outside `[0, T)` contribute zero.
pub fn fsmn_memory_block(
    h: &Matrix,
    a: &Matrix,
    b: &Matrix,
    stride_back: usize,
    stride_ahead: usize,
) -> Result<Matrix, NetError> {
    let dim = h.cols();
    if a.cols() != dim || (b.rows() > 0 && b.cols() != dim) {
        return Err(NetError::DimensionMismatch {
            expected: format!("tap vectors of dim {dim}"),
            actual: format!("a: {}x{}, b: {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
        });
    }
    let frames = h.rows();
    let mut out = h.clone();
    for t in 0..frames {
        let out_row = out.row_mut(t);
        for i in 1..=a.rows() {
            let offset = i * stride_back;
            if offset > t {
                break;
            }
            let tap = a.row(i - 1);
            let src = h.row(t - offset);
            for ((o, &c), &s) in out_row.iter_mut().zip(tap).zip(src) {
                *o += c * s;
            }
        }
        for j in 1..=b.rows() {
            let ahead = t + j * stride_ahead;
            if ahead >= frames {
                break;
            }
            let tap = b.row(j - 1);
            let src = h.row(ahead);
            for ((o, &c), &s) in out_row.iter_mut().zip(tap).zip(src) {
                *o += c * s;
            }
        }
    }
    Ok(out)
}

/// Gradients of the memory block. Returns `(d_h, d_a, d_b)` given the
/// upstream gradient `d_out` and the forward input `h`.
fn memory_block_backward(
    h: &Matrix,
    a: &Matrix,
    b: &Matrix,
    stride_back: usize,
    stride_ahead: usize,
    d_out: &Matrix,
) -> (Matrix, Matrix, Matrix) {
    let frames = h.rows();
    let mut d_h = d_out.clone();
    let mut d_a = Matrix::zeros(a.rows(), a.cols());
    let mut d_b = Matrix::zeros(b.rows(), b.cols());
    for t in 0..frames {
        let g = d_out.row(t);
        for i in 1..=a.rows() {
            let offset = i * stride_back;
            if offset > t {
                break;
            }
            let src_t = t - offset;
            let tap = a.row(i - 1);
            {
                let da_row = d_a.row_mut(i - 1);
                let src = h.row(src_t);
                for ((d, &gv), &s) in da_row.iter_mut().zip(g).zip(src) {
                    *d += gv * s;
                }
            }
            let dh_row = d_h.row_mut(src_t);
            for ((d, &gv), &c) in dh_row.iter_mut().zip(g).zip(tap) {
                *d += gv * c;
            }
        }
        for j in 1..=b.rows() {
            let ahead = t + j * stride_ahead;
            if ahead >= frames {
                break;
            }
            let tap = b.row(j - 1);
            {
                let db_row = d_b.row_mut(j - 1);
                let src = h.row(ahead);
                for ((d, &gv), &s) in db_row.iter_mut().zip(g).zip(src) {
                    *d += gv * s;
                }
            }
            let dh_row = d_h.row_mut(ahead);
            for ((d, &gv), &c) in dh_row.iter_mut().zip(g).zip(tap) {
                *d += gv * c;
            }
        }
    }
    (d_h, d_a, d_b)
}

fn relu_in_place(m: &mut Matrix) {
    for v in m.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `grad` by the ReLU activation pattern of `post` (post-activation
/// values; zero output means zero gradient).
fn relu_backward(grad: &mut Matrix, post: &Matrix) {
    for (g, &p) in grad.data_mut().iter_mut().zip(post.data()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

pub(super) struct FsmnCache {
    input: Matrix,
    /// Post-ReLU hidden activations: index 0 is the input layer, then one
    /// per block.
    relu_outs: Vec<Matrix>,
    /// Memory-block outputs, one per block.
    mem_outs: Vec<Matrix>,
}

pub(super) fn forward(
    params: &ModelParams,
    spec: &NetworkSpec,
    features: &Matrix,
) -> Result<(Matrix, FsmnCache), NetError> {
    let mut h = features.matmul(params.p("in.w"));
    h.add_row_broadcast(params.p("in.b").row(0));
    relu_in_place(&mut h);

    let mut relu_outs = vec![h];
    let mut mem_outs = Vec::with_capacity(spec.fsmn_blocks);
    for k in 0..spec.fsmn_blocks {
        let mem = fsmn_memory_block(
            relu_outs.last().expect("nonempty"),
            params.p(&format!("block{k}.mem_a")),
            params.p(&format!("block{k}.mem_b")),
            spec.stride_back,
            spec.stride_ahead,
        )?;
        let mut next = mem.matmul(params.p(&format!("block{k}.w")));
        next.add_row_broadcast(params.p(&format!("block{k}.b")).row(0));
        relu_in_place(&mut next);
        mem_outs.push(mem);
        relu_outs.push(next);
    }

    let mut logits = relu_outs
        .last()
        .expect("nonempty")
        .matmul(params.p("out.w"));
    logits.add_row_broadcast(params.p("out.b").row(0));
    Ok((
        logits,
        FsmnCache {
            input: features.clone(),
            relu_outs,
            mem_outs,
        },
    ))
}

pub(super) fn backward(
    params: &ModelParams,
    spec: &NetworkSpec,
    cache: &FsmnCache,
    dlogits: &Matrix,
) -> Result<ModelParams, NetError> {
    let mut grads = ModelParams::zeros(spec);

    let last = cache.relu_outs.last().expect("nonempty");
    *grads.p_mut("out.w") = last.matmul_at_b(dlogits);
    *grads.p_mut("out.b") = column_sums(dlogits);
    let mut d_h = dlogits.matmul_a_bt(params.p("out.w"));

    for k in (0..spec.fsmn_blocks).rev() {
        relu_backward(&mut d_h, &cache.relu_outs[k + 1]);
        let mem = &cache.mem_outs[k];
        *grads.p_mut(&format!("block{k}.w")) = mem.matmul_at_b(&d_h);
        *grads.p_mut(&format!("block{k}.b")) = column_sums(&d_h);
        let d_mem = d_h.matmul_a_bt(params.p(&format!("block{k}.w")));
        let (dh_prev, d_a, d_b) = memory_block_backward(
            &cache.relu_outs[k],
            params.p(&format!("block{k}.mem_a")),
            params.p(&format!("block{k}.mem_b")),
            spec.stride_back,
            spec.stride_ahead,
            &d_mem,
        );
        *grads.p_mut(&format!("block{k}.mem_a")) = d_a;
        *grads.p_mut(&format!("block{k}.mem_b")) = d_b;
        d_h = dh_prev;
    }

    relu_backward(&mut d_h, &cache.relu_outs[0]);
    *grads.p_mut("in.w") = cache.input.matmul_at_b(&d_h);
    *grads.p_mut("in.b") = column_sums(&d_h);
    Ok(grads)
}
