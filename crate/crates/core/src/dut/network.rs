//! Forward and reverse-mode passes of the design-under-test.
//!
//! Everything here works on a flat weight vector laid out as
//! [`ArchConfig::tensors`], so the same code serves the float shadow weights
//! (training, finite-difference checks) and the dequantized int8 weights
//! (evaluation, straight-through gradients).

use ndarray::{linalg::general_mat_mul, Array2, ArrayView2, ArrayViewMut2, Axis};

use super::arch::ArchConfig;
use super::dataset::RepDataset;

const LN_EPS: f64 = 1e-5;

struct BlockRefs<'a> {
    g1: &'a [f64],
    b1: &'a [f64],
    wq: ArrayView2<'a, f64>,
    wk: ArrayView2<'a, f64>,
    wv: ArrayView2<'a, f64>,
    wo: ArrayView2<'a, f64>,
    g2: &'a [f64],
    b2: &'a [f64],
    w1: ArrayView2<'a, f64>,
    w2: ArrayView2<'a, f64>,
}

struct HeadRefs<'a> {
    norm: Option<(&'a [f64], &'a [f64])>,
    wc: ArrayView2<'a, f64>,
}

/// Start offsets of each tensor, in layout order.
fn tensor_offsets(arch: &ArchConfig) -> Vec<(usize, Vec<usize>)> {
    let mut out = Vec::new();
    let mut off = 0;
    for t in arch.tensors() {
        let len = t.len();
        out.push((off, t.shape));
        off += len;
    }
    out
}

fn split<'a>(arch: &ArchConfig, w: &'a [f64]) -> (Vec<BlockRefs<'a>>, HeadRefs<'a>) {
    let offs = tensor_offsets(arch);
    let vec_at = |i: usize| -> &'a [f64] {
        let (o, s) = &offs[i];
        &w[*o..*o + s[0]]
    };
    let mat_at = |i: usize| -> ArrayView2<'a, f64> {
        let (o, s) = &offs[i];
        ArrayView2::from_shape((s[0], s[1]), &w[*o..*o + s[0] * s[1]]).expect("layout")
    };
    let mut blocks = Vec::new();
    for b in 0..arch.n_blocks {
        let i = b * 10;
        blocks.push(BlockRefs {
            g1: vec_at(i),
            b1: vec_at(i + 1),
            wq: mat_at(i + 2),
            wk: mat_at(i + 3),
            wv: mat_at(i + 4),
            wo: mat_at(i + 5),
            g2: vec_at(i + 6),
            b2: vec_at(i + 7),
            w1: mat_at(i + 8),
            w2: mat_at(i + 9),
        });
    }
    let h = arch.n_blocks * 10;
    let head = if arch.final_norm {
        HeadRefs { norm: Some((vec_at(h), vec_at(h + 1))), wc: mat_at(h + 2) }
    } else {
        HeadRefs { norm: None, wc: mat_at(h) }
    };
    (blocks, head)
}

struct NormCache {
    xhat: Array2<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &Array2<f64>, g: &[f64], b: &[f64], keep: bool) -> (Array2<f64>, Option<NormCache>) {
    let (rows, d) = x.dim();
    let mut y = Array2::<f64>::zeros((rows, d));
    let mut xhat = if keep { Array2::<f64>::zeros((rows, d)) } else { Array2::zeros((0, 0)) };
    let mut rstds = Vec::with_capacity(if keep { rows } else { 0 });
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        let mut yr = y.row_mut(r);
        for j in 0..d {
            let xh = (row[j] - mean) * rstd;
            yr[j] = g[j] * xh + b[j];
            if keep {
                xhat[[r, j]] = xh;
            }
        }
        if keep {
            rstds.push(rstd);
        }
    }
    (y, keep.then_some(NormCache { xhat, rstd: rstds }))
}

/// Returns dx and accumulates dγ, dβ.
fn layer_norm_backward(dy: &Array2<f64>, g: &[f64], cache: &NormCache, dg: &mut [f64], db: &mut [f64]) -> Array2<f64> {
    let (rows, d) = dy.dim();
    let mut dx = Array2::<f64>::zeros((rows, d));
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            dxhat[j] = dyr[j] * g[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xh[j];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let rstd = cache.rstd[r];
        let mut dxr = dx.row_mut(r);
        for j in 0..d {
            dxr[j] = rstd * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

fn matmul(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    let mut c = Array2::<f64>::zeros((a.nrows(), b.ncols()));
    general_mat_mul(1.0, a, b, 0.0, &mut c);
    c
}

/// `c += a^T b`, used for weight gradients.
fn add_at_b(a: &Array2<f64>, b: &Array2<f64>, c: &mut ArrayViewMut2<f64>) {
    general_mat_mul(1.0, &a.t(), b, 1.0, c);
}

struct AttnCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Softmax probabilities, indexed `[((n * heads + h) * T + t) * T + u]`.
    probs: Vec<f64>,
}

#[allow(clippy::needless_range_loop)]
fn attention(arch: &ArchConfig, q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, keep: bool) -> (Array2<f64>, Vec<f64>) {
    let t_len = arch.seq_len;
    let heads = arch.n_heads;
    let dh = arch.head_dim();
    let n = q.nrows() / t_len;
    let inv = 1.0 / (dh as f64).sqrt();
    let mut ctx = Array2::<f64>::zeros(q.dim());
    let mut probs = if keep { vec![0.0; n * heads * t_len * t_len] } else { Vec::new() };
    let mut row = vec![0.0; t_len];
    for s in 0..n {
        let base = s * t_len;
        for h in 0..heads {
            let c0 = h * dh;
            for t in 0..t_len {
                let qr = q.row(base + t);
                let mut max = f64::NEG_INFINITY;
                for u in 0..t_len {
                    let kr = k.row(base + u);
                    let mut acc = 0.0;
                    for e in c0..c0 + dh {
                        acc += qr[e] * kr[e];
                    }
                    row[u] = acc * inv;
                    max = max.max(row[u]);
                }
                let mut z = 0.0;
                for r in row.iter_mut() {
                    *r = (*r - max).exp();
                    z += *r;
                }
                let mut out = ctx.row_mut(base + t);
                for (u, r) in row.iter_mut().enumerate() {
                    *r /= z;
                    let vr = v.row(base + u);
                    for e in c0..c0 + dh {
                        out[e] += *r * vr[e];
                    }
                }
                if keep {
                    let p0 = ((s * heads + h) * t_len + t) * t_len;
                    probs[p0..p0 + t_len].copy_from_slice(&row);
                }
            }
        }
    }
    (ctx, probs)
}

/// Returns (dq, dk, dv).
fn attention_backward(arch: &ArchConfig, dctx: &Array2<f64>, cache: &AttnCache) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let t_len = arch.seq_len;
    let heads = arch.n_heads;
    let dh = arch.head_dim();
    let n = dctx.nrows() / t_len;
    let inv = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::<f64>::zeros(dctx.dim());
    let mut dk = Array2::<f64>::zeros(dctx.dim());
    let mut dv = Array2::<f64>::zeros(dctx.dim());
    let mut dp = vec![0.0; t_len];
    for s in 0..n {
        let base = s * t_len;
        for h in 0..heads {
            let c0 = h * dh;
            for t in 0..t_len {
                let p0 = ((s * heads + h) * t_len + t) * t_len;
                let p = &cache.probs[p0..p0 + t_len];
                let go = dctx.row(base + t);
                let mut dot = 0.0;
                for u in 0..t_len {
                    let vr = cache.v.row(base + u);
                    let mut acc = 0.0;
                    for e in c0..c0 + dh {
                        acc += go[e] * vr[e];
                    }
                    dp[u] = acc;
                    dot += acc * p[u];
                    let mut dvr = dv.row_mut(base + u);
                    for e in c0..c0 + dh {
                        dvr[e] += p[u] * go[e];
                    }
                }
                for u in 0..t_len {
                    let ds = p[u] * (dp[u] - dot) * inv;
                    if ds == 0.0 {
                        continue;
                    }
                    for e in c0..c0 + dh {
                        dq[[base + t, e]] += ds * cache.k[[base + u, e]];
                        dk[[base + u, e]] += ds * cache.q[[base + t, e]];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

struct BlockCache {
    n1: NormCache,
    h1: Array2<f64>,
    attn: AttnCache,
    ctx: Array2<f64>,
    n2: NormCache,
    h2: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

struct Trace {
    blocks: Vec<BlockCache>,
    nf: Option<NormCache>,
    pooled: Array2<f64>,
}

fn forward_impl(arch: &ArchConfig, w: &[f64], data: &RepDataset, keep: bool) -> (Array2<f64>, Option<Trace>) {
    let (blocks, head) = split(arch, w);
    let n = data.len();
    let t_len = arch.seq_len;
    let d = arch.width;
    let mut x = Array2::from_shape_vec((n * t_len, d), data.inputs().to_vec()).expect("input shape");
    let mut caches = Vec::new();
    for p in &blocks {
        let (h1, n1) = layer_norm(&x, p.g1, p.b1, keep);
        let hv = h1.view();
        let q = matmul(&hv, &p.wq);
        let k = matmul(&hv, &p.wk);
        let v = matmul(&hv, &p.wv);
        let (ctx, probs) = attention(arch, &q, &k, &v, keep);
        general_mat_mul(1.0, &ctx, &p.wo, 1.0, &mut x);
        let (h2, n2) = layer_norm(&x, p.g2, p.b2, keep);
        let pre = matmul(&h2.view(), &p.w1);
        let act = pre.mapv(|z| z.max(0.0));
        general_mat_mul(1.0, &act, &p.w2, 1.0, &mut x);
        if keep {
            caches.push(BlockCache {
                n1: n1.expect("kept"),
                h1,
                attn: AttnCache { q, k, v, probs },
                ctx,
                n2: n2.expect("kept"),
                h2,
                pre,
                act,
            });
        }
    }
    let (hf, nf) = match head.norm {
        Some((g, b)) => layer_norm(&x, g, b, keep),
        None => (x, None),
    };
    let pooled = hf
        .into_shape_with_order((n, t_len, d))
        .expect("pool shape")
        .mean_axis(Axis(1))
        .expect("seq_len > 0");
    let logits = matmul(&pooled.view(), &head.wc);
    let trace = keep.then(|| Trace { blocks: caches, nf, pooled });
    (logits, trace)
}

/// Logits, one row per sample.
pub fn logits(arch: &ArchConfig, weights: &[f64], data: &RepDataset) -> Array2<f64> {
    forward_impl(arch, weights, data, false).0
}

/// Index of the largest logit; ties go to the lowest class index.
pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Mean cross-entropy and per-sample softmax probabilities.
fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let mut probs = logits.clone();
    let mut loss = 0.0;
    for (mut row, &y) in probs.rows_mut().into_iter().zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.mapv_inplace(|v| v / z);
        loss += -(row[y].max(f64::MIN_POSITIVE)).ln();
    }
    (loss / labels.len() as f64, probs)
}

/// Accuracy (argmax, lowest index on ties) and mean cross-entropy.
pub fn accuracy_and_loss(arch: &ArchConfig, weights: &[f64], data: &RepDataset) -> (f64, f64) {
    let lg = logits(arch, weights, data);
    let correct = lg
        .rows()
        .into_iter()
        .zip(data.labels())
        .filter(|(row, &y)| argmax_lowest(row.as_slice().expect("contiguous")) == y)
        .count();
    let (loss, _) = cross_entropy(&lg, data.labels());
    (correct as f64 / data.len() as f64, loss)
}

pub fn loss(arch: &ArchConfig, weights: &[f64], data: &RepDataset) -> f64 {
    cross_entropy(&logits(arch, weights, data), data.labels()).0
}

/// Mean cross-entropy (times `loss_scale`) and its gradient with respect to
/// every weight, in flat layout order.
pub fn loss_and_gradient(arch: &ArchConfig, weights: &[f64], data: &RepDataset, loss_scale: f64) -> (f64, Vec<f64>) {
    let (lg, trace) = forward_impl(arch, weights, data, true);
    let trace = trace.expect("kept");
    let (loss, probs) = cross_entropy(&lg, data.labels());
    let n = data.len();
    let t_len = arch.seq_len;
    let d = arch.width;

    let mut grad = vec![0.0; weights.len()];
    let offs = tensor_offsets(arch);
    let (blocks, head) = split(arch, weights);

    // d(loss)/d(logits) = (p - onehot) / N
    let mut dlogits = probs;
    for (i, &y) in data.labels().iter().enumerate() {
        dlogits[[i, y]] -= 1.0;
    }
    dlogits.mapv_inplace(|v| v * loss_scale / n as f64);

    let hidx = arch.n_blocks * 10;
    {
        let (o, s) = &offs[hidx + if arch.final_norm { 2 } else { 0 }];
        let mut dwc = ArrayViewMut2::from_shape((s[0], s[1]), &mut grad[*o..*o + s[0] * s[1]]).expect("layout");
        add_at_b(&trace.pooled, &dlogits, &mut dwc);
    }
    let dpooled = matmul(&dlogits.view(), &head.wc.t());
    let mut dhf = Array2::<f64>::zeros((n * t_len, d));
    for s in 0..n {
        for t in 0..t_len {
            for j in 0..d {
                dhf[[s * t_len + t, j]] = dpooled[[s, j]] / t_len as f64;
            }
        }
    }
    let mut dx = match (head.norm, &trace.nf) {
        (Some((gf, _)), Some(nf)) => {
            let (og, _) = offs[hidx];
            let (ob, _) = offs[hidx + 1];
            let (gpart, bpart) = grad.split_at_mut(ob);
            layer_norm_backward(&dhf, gf, nf, &mut gpart[og..og + d], &mut bpart[..d])
        }
        _ => dhf,
    };

    for (b, (p, c)) in blocks.iter().zip(&trace.blocks).enumerate().rev() {
        let i = b * 10;
        let f = arch.ffn_hidden;
        let mat_grad = |grad: &mut Vec<f64>, idx: usize, a: &Array2<f64>, g: &Array2<f64>| {
            let (o, s) = &offs[idx];
            let mut view = ArrayViewMut2::from_shape((s[0], s[1]), &mut grad[*o..*o + s[0] * s[1]]).expect("layout");
            add_at_b(a, g, &mut view);
        };
        // x_out = x_mid + relu(LN2(x_mid) W1) W2
        mat_grad(&mut grad, i + 9, &c.act, &dx);
        let mut dpre = matmul(&dx.view(), &p.w2.t());
        ndarray::Zip::from(&mut dpre).and(&c.pre).for_each(|g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        debug_assert_eq!(dpre.ncols(), f);
        mat_grad(&mut grad, i + 8, &c.h2, &dpre);
        let dh2 = matmul(&dpre.view(), &p.w1.t());
        {
            let (og, _) = offs[i + 6];
            let (ob, _) = offs[i + 7];
            let (gpart, bpart) = grad.split_at_mut(ob);
            dx += &layer_norm_backward(&dh2, p.g2, &c.n2, &mut gpart[og..og + d], &mut bpart[..d]);
        }
        // x_mid = x_in + attn(LN1(x_in)) Wo
        mat_grad(&mut grad, i + 5, &c.ctx, &dx);
        let dctx = matmul(&dx.view(), &p.wo.t());
        let (dq, dk, dv) = attention_backward(arch, &dctx, &c.attn);
        mat_grad(&mut grad, i + 2, &c.h1, &dq);
        mat_grad(&mut grad, i + 3, &c.h1, &dk);
        mat_grad(&mut grad, i + 4, &c.h1, &dv);
        let mut dh1 = matmul(&dq.view(), &p.wq.t());
        general_mat_mul(1.0, &dk, &p.wk.t(), 1.0, &mut dh1);
        general_mat_mul(1.0, &dv, &p.wv.t(), 1.0, &mut dh1);
        {
            let (og, _) = offs[i];
            let (ob, _) = offs[i + 1];
            let (gpart, bpart) = grad.split_at_mut(ob);
            dx += &layer_norm_backward(&dh1, p.g1, &c.n1, &mut gpart[og..og + d], &mut bpart[..d]);
        }
    }
    (loss * loss_scale, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> (ArchConfig, Vec<f64>, RepDataset) {
        let arch = ArchConfig { n_blocks: 1, width: 4, n_heads: 2, ffn_hidden: 3, seq_len: 2, n_classes: 3, ..ArchConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Vec<f64> = (0..arch.n_params()).map(|_| rng.random_range(-0.8..0.8)).collect();
        let n = 5;
        let inputs: Vec<f64> = (0..n * arch.input_dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = (0..n).map(|i| i % 3).collect();
        (arch.clone(), w, RepDataset::new(arch.input_dim(), inputs, labels, 3).unwrap())
    }

    #[test]
    fn argmax_ties_go_to_lowest_index() {
        assert_eq!(argmax_lowest(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (base, _, data) = tiny();
        for final_norm in [false, true] {
            let arch = ArchConfig { final_norm, ..base.clone() };
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let w: Vec<f64> = (0..arch.n_params()).map(|_| rng.random_range(-0.8..0.8)).collect();
            let (_, g) = loss_and_gradient(&arch, &w, &data, 1.0);
            let h = 1e-5;
            for i in 0..w.len() {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[i] += h;
                wm[i] -= h;
                let fd = (loss(&arch, &wp, &data) - loss(&arch, &wm, &data)) / (2.0 * h);
                let tol = 1e-6 + 1e-4 * fd.abs().max(g[i].abs());
                assert!((fd - g[i]).abs() <= tol, "final_norm {final_norm} param {i}: analytic {} vs fd {fd}", g[i]);
            }
        }
    }

    #[test]
    fn scaled_loss_doubles_gradient_exactly() {
        let (arch, w, data) = tiny();
        let (l1, g1) = loss_and_gradient(&arch, &w, &data, 1.0);
        let (l2, g2) = loss_and_gradient(&arch, &w, &data, 2.0);
        assert_eq!(l2, 2.0 * l1);
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(*b, 2.0 * *a);
        }
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let (arch, w, data) = tiny();
        let a = logits(&arch, &w, &data);
        let b = logits(&arch, &w, &data);
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
