use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;

use super::config::{LayerSlots, ModelConfig, ParamLayout};
use super::params::{ParameterSet, Tensor};
use super::Real;
use crate::attention::AttentionPattern;
use crate::clintext::EncodedCase;
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;

fn c<T: Real>(x: f64) -> T {
    T::from_f64(x).unwrap()
}

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn signed(label: bool) -> f64 {
    if label {
        1.0
    } else {
        -1.0
    }
}

/// Mean of `ln(1 + exp(-y·z))` with `y = ±1`.
pub fn bce_loss<T: Real>(logits: &[T], labels: &[bool]) -> Result<T> {
    if logits.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "logits vs labels",
            left: logits.len(),
            right: labels.len(),
        });
    }
    if logits.is_empty() {
        return Err(Error::Empty("loss over an empty batch"));
    }
    let total = logits
        .iter()
        .zip(labels)
        .fold(T::zero(), |acc, (&z, &y)| acc + softplus(-z * c::<T>(signed(y))));
    Ok(total / T::from_usize(logits.len()).unwrap())
}

/// d loss / d logit for one case.
fn loss_grad<T: Real>(logit: T, label: bool) -> T {
    let y = c::<T>(signed(label));
    -y * sigmoid(-y * logit)
}

struct LnCache<T> {
    xhat: Array2<T>,
    rstd: Vec<T>,
}

fn layer_norm<T: Real>(x: &Array2<T>, gain: &[T], bias: &[T]) -> (Array2<T>, LnCache<T>) {
    let (n, h) = x.dim();
    let hn = T::from_usize(h).unwrap();
    let eps = c::<T>(LN_EPS);
    let mut xhat = Array2::zeros((n, h));
    let mut y = Array2::zeros((n, h));
    let mut rstd = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.sum() / hn;
        let var = row.fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / hn;
        let r = T::one() / (var + eps).sqrt();
        rstd.push(r);
        for j in 0..h {
            let xh = (row[j] - mean) * r;
            xhat[[i, j]] = xh;
            y[[i, j]] = xh * gain[j] + bias[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward<T: Real>(
    dy: &Array2<T>,
    cache: &LnCache<T>,
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
) -> Array2<T> {
    let (n, h) = dy.dim();
    let hn = T::from_usize(h).unwrap();
    let mut dx = Array2::zeros((n, h));
    let mut dxhat = vec![T::zero(); h];
    for i in 0..n {
        let (mut m1, mut m2) = (T::zero(), T::zero());
        for j in 0..h {
            let d = dy[[i, j]];
            let xh = cache.xhat[[i, j]];
            dgain[j] = dgain[j] + d * xh;
            dbias[j] = dbias[j] + d;
            dxhat[j] = d * gain[j];
            m1 = m1 + dxhat[j];
            m2 = m2 + dxhat[j] * xh;
        }
        m1 = m1 / hn;
        m2 = m2 / hn;
        for j in 0..h {
            dx[[i, j]] = cache.rstd[i] * (dxhat[j] - m1 - cache.xhat[[i, j]] * m2);
        }
    }
    dx
}

fn linear<T: Real>(x: &Array2<T>, w: &Tensor<T>, b: &Tensor<T>) -> Array2<T> {
    let mut y = x.dot(&w.matrix());
    y += &ArrayView1::from(&b.data);
    y
}

/// Accumulates weight and bias gradients and returns `dx`.
fn linear_backward<T: Real>(
    dy: &Array2<T>,
    x: &Array2<T>,
    w: &Tensor<T>,
    dw: &mut Tensor<T>,
    db: &mut Tensor<T>,
) -> Array2<T> {
    general_mat_mul(T::one(), &x.t(), dy, T::one(), &mut dw.matrix_mut());
    for (acc, s) in db.data.iter_mut().zip(dy.sum_axis(Axis(0))) {
        *acc = *acc + s;
    }
    dy.dot(&w.matrix().t())
}

fn gelu_parts<T: Real>(u: T) -> (T, T) {
    let k0 = c::<T>((2.0 / std::f64::consts::PI).sqrt());
    let k1 = c::<T>(0.044_715);
    let half = c::<T>(0.5);
    let t = (k0 * (u + k1 * u * u * u)).tanh();
    let value = half * u * (T::one() + t);
    let deriv = half * (T::one() + t)
        + half * u * (T::one() - t * t) * k0 * (T::one() + c::<T>(3.0) * k1 * u * u);
    (value, deriv)
}

struct LayerCache<T> {
    rows: Vec<Vec<usize>>,
    ln1: LnCache<T>,
    a: Array2<T>,
    qkv: Array2<T>,
    gqkv: Option<Array2<T>>,
    /// Per query row, head-major probabilities over that row's keys.
    probs: Vec<Vec<T>>,
    ctx: Array2<T>,
    ln2: LnCache<T>,
    f: Array2<T>,
    u: Array2<T>,
    g: Array2<T>,
}

/// Saved activations of one case.
pub struct CaseCache<T> {
    ids: Vec<u32>,
    global: Vec<bool>,
    emb_ln: LnCache<T>,
    layers: Vec<LayerCache<T>>,
    h_cls: Vec<T>,
    pooled: Vec<T>,
    pub logit: T,
}

/// Saved activations for a batch, in batch order.
pub struct ActivationCache<T> {
    pub cases: Vec<CaseCache<T>>,
}

fn attention_forward<T: Real>(
    qkv: &Array2<T>,
    gqkv: Option<&Array2<T>>,
    rows: &[Vec<usize>],
    global: &[bool],
    n_heads: usize,
) -> (Array2<T>, Vec<Vec<T>>) {
    let (n, h3) = qkv.dim();
    let h = h3 / 3;
    let dh = h / n_heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let local = qkv.as_slice().expect("standard layout");
    let separate = gqkv.map(|g| g.as_slice().expect("standard layout"));
    let mut ctx = Array2::zeros((n, h));
    let mut probs = Vec::with_capacity(n);
    let mut scores: Vec<T> = Vec::new();
    for i in 0..n {
        let src = match separate {
            Some(g) if global[i] => g,
            _ => local,
        };
        let keys = &rows[i];
        let mut p_row = Vec::with_capacity(n_heads * keys.len());
        let out = ctx.row_mut(i).into_slice().expect("contiguous row");
        for hd in 0..n_heads {
            let q = &src[i * h3 + hd * dh..i * h3 + (hd + 1) * dh];
            scores.clear();
            let mut max = T::neg_infinity();
            for &j in keys {
                let k = &src[j * h3 + h + hd * dh..j * h3 + h + (hd + 1) * dh];
                let s = q.iter().zip(k).fold(T::zero(), |a, (&x, &y)| a + x * y) * scale;
                max = max.max(s);
                scores.push(s);
            }
            let mut sum = T::zero();
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                sum = sum + *s;
            }
            let o = &mut out[hd * dh..(hd + 1) * dh];
            for (&j, s) in keys.iter().zip(scores.iter_mut()) {
                *s = *s / sum;
                let v = &src[j * h3 + 2 * h + hd * dh..j * h3 + 2 * h + (hd + 1) * dh];
                for (oo, &vv) in o.iter_mut().zip(v) {
                    *oo = *oo + *s * vv;
                }
            }
            p_row.extend_from_slice(&scores);
        }
        probs.push(p_row);
    }
    (ctx, probs)
}

fn attention_backward<T: Real>(
    dctx: &Array2<T>,
    cache: &LayerCache<T>,
    global: &[bool],
    n_heads: usize,
) -> (Array2<T>, Option<Array2<T>>) {
    let (n, h3) = cache.qkv.dim();
    let h = h3 / 3;
    let dh = h / n_heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let mut dqkv = Array2::<T>::zeros((n, h3));
    let mut dgqkv = cache.gqkv.as_ref().map(|_| Array2::<T>::zeros((n, h3)));
    let local = cache.qkv.as_slice().unwrap();
    let separate = cache.gqkv.as_ref().map(|g| g.as_slice().unwrap());
    let dctx = dctx.as_standard_layout();
    let dctx = dctx.as_slice().unwrap();
    let mut dp: Vec<T> = Vec::new();
    for i in 0..n {
        let use_global = global[i] && separate.is_some();
        let src = if use_global { separate.unwrap() } else { local };
        let dsrc = if use_global {
            dgqkv.as_mut().unwrap().as_slice_mut().unwrap()
        } else {
            dqkv.as_slice_mut().unwrap()
        };
        let keys = &cache.rows[i];
        let m = keys.len();
        for hd in 0..n_heads {
            let p = &cache.probs[i][hd * m..(hd + 1) * m];
            let dout = &dctx[i * h + hd * dh..i * h + (hd + 1) * dh];
            dp.clear();
            let mut dot = T::zero();
            for (&j, &pt) in keys.iter().zip(p) {
                let vo = j * h3 + 2 * h + hd * dh;
                let v = &src[vo..vo + dh];
                let d = dout.iter().zip(v).fold(T::zero(), |a, (&x, &y)| a + x * y);
                dp.push(d);
                dot = dot + pt * d;
                for (dv, &g) in dsrc[vo..vo + dh].iter_mut().zip(dout) {
                    *dv = *dv + pt * g;
                }
            }
            let qo = i * h3 + hd * dh;
            for ((&j, &pt), &d) in keys.iter().zip(p).zip(&dp) {
                let ds = pt * (d - dot) * scale;
                if ds == T::zero() {
                    continue;
                }
                let ko = j * h3 + h + hd * dh;
                for t in 0..dh {
                    dsrc[qo + t] = dsrc[qo + t] + ds * src[ko + t];
                    dsrc[ko + t] = dsrc[ko + t] + ds * src[qo + t];
                }
            }
        }
    }
    (dqkv, dgqkv)
}

fn check_case(cfg: &ModelConfig, case: &EncodedCase) -> Result<usize> {
    let n = case.attention_len;
    if n == 0 || n > case.ids.len() || n > case.global_mask.len() {
        return Err(Error::OutOfBounds(format!(
            "case {}: attention_len {n} with {} ids",
            case.uid,
            case.ids.len()
        )));
    }
    if n > cfg.max_positions {
        return Err(Error::OutOfBounds(format!(
            "case {}: length {n} exceeds max_positions {}",
            case.uid, cfg.max_positions
        )));
    }
    if let Some(&id) = case.ids[..n].iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(Error::OutOfBounds(format!(
            "case {}: token id {id} >= vocab_size {}",
            case.uid, cfg.vocab_size
        )));
    }
    Ok(n)
}

fn forward_case<T: Real>(
    params: &ParameterSet<T>,
    layout: &ParamLayout,
    cfg: &ModelConfig,
    case: &EncodedCase,
) -> Result<CaseCache<T>> {
    let n = check_case(cfg, case)?;
    let t = &params.tensors;
    let h = cfg.hidden;
    let ids = case.ids[..n].to_vec();
    let global = case.global_mask[..n].to_vec();
    let tok = &t[layout.token].data;
    let pos = &t[layout.position].data;
    let x0 = Array2::from_shape_fn((n, h), |(i, j)| tok[ids[i] as usize * h + j] + pos[i * h + j]);
    let (mut hs, emb_ln) = layer_norm(&x0, &t[layout.emb_norm_g].data, &t[layout.emb_norm_b].data);
    let globals: Vec<usize> = (0..n).filter(|&i| global[i]).collect();
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for (l, s) in layout.layers.iter().enumerate() {
        let pattern = AttentionPattern::new(n, cfg.window, cfg.dilation(l), globals.iter().copied())?;
        let rows: Vec<Vec<usize>> = (0..n).map(|i| pattern.row(i)).collect();
        let (a, ln1) = layer_norm(&hs, &t[s.norm1_g].data, &t[s.norm1_b].data);
        let qkv = linear(&a, &t[s.qkv_w], &t[s.qkv_b]);
        let gqkv = s.global_qkv.map(|(w, b)| linear(&a, &t[w], &t[b]));
        let (ctx, probs) = attention_forward(&qkv, gqkv.as_ref(), &rows, &global, cfg.n_heads);
        hs += &linear(&ctx, &t[s.out_w], &t[s.out_b]);
        let (f, ln2) = layer_norm(&hs, &t[s.norm2_g].data, &t[s.norm2_b].data);
        let u = linear(&f, &t[s.ff1_w], &t[s.ff1_b]);
        let g = u.mapv(|x| gelu_parts(x).0);
        hs += &linear(&g, &t[s.ff2_w], &t[s.ff2_b]);
        layers.push(LayerCache {
            rows,
            ln1,
            a,
            qkv,
            gqkv,
            probs,
            ctx,
            ln2,
            f,
            u,
            g,
        });
    }
    let h_cls = hs.row(0).to_vec();
    let pre = ArrayView1::from(&h_cls).dot(&t[layout.pooler_w].matrix());
    let pooled: Vec<T> = pre
        .iter()
        .zip(&t[layout.pooler_b].data)
        .map(|(&x, &b)| (x + b).tanh())
        .collect();
    let logit = pooled
        .iter()
        .zip(&t[layout.classifier_w].data)
        .fold(t[layout.classifier_b].data[0], |a, (&p, &w)| a + p * w);
    Ok(CaseCache {
        ids,
        global,
        emb_ln,
        layers,
        h_cls,
        pooled,
        logit,
    })
}

fn backward_case<T: Real>(
    params: &ParameterSet<T>,
    layout: &ParamLayout,
    cfg: &ModelConfig,
    cache: &CaseCache<T>,
    dlogit: T,
) -> ParameterSet<T> {
    let t = &params.tensors;
    let mut grads = ParameterSet::zeros_for(layout);
    let gt = &mut grads.tensors;
    let h = cfg.hidden;
    let n = cache.ids.len();

    gt[layout.classifier_b].data[0] = dlogit;
    let wc = &t[layout.classifier_w].data;
    let mut dpre = vec![T::zero(); h];
    for j in 0..h {
        gt[layout.classifier_w].data[j] = cache.pooled[j] * dlogit;
        let dpooled = wc[j] * dlogit;
        dpre[j] = dpooled * (T::one() - cache.pooled[j] * cache.pooled[j]);
    }
    {
        let dwp = &mut gt[layout.pooler_w].data;
        for a in 0..h {
            let x = cache.h_cls[a];
            for b in 0..h {
                dwp[a * h + b] = x * dpre[b];
            }
        }
    }
    gt[layout.pooler_b].data.copy_from_slice(&dpre);
    let wp = t[layout.pooler_w].matrix();
    let mut dh = Array2::<T>::zeros((n, h));
    dh.row_mut(0).assign(&wp.dot(&ArrayView1::from(&dpre)));

    for (l, s) in layout.layers.iter().enumerate().rev() {
        let lc = &cache.layers[l];
        let LayerSlots { .. } = *s;
        // feed-forward block
        let mut dg = {
            let (w2, rest) = pick_two(gt, s.ff2_w, s.ff2_b);
            linear_backward(&dh, &lc.g, &t[s.ff2_w], w2, rest)
        };
        dg.zip_mut_with(&lc.u, |d, &u| *d = *d * gelu_parts(u).1);
        let df = {
            let (w1, b1) = pick_two(gt, s.ff1_w, s.ff1_b);
            linear_backward(&dg, &lc.f, &t[s.ff1_w], w1, b1)
        };
        let dln2 = {
            let (g2, b2) = pick_two(gt, s.norm2_g, s.norm2_b);
            layer_norm_backward(&df, &lc.ln2, &t[s.norm2_g].data, &mut g2.data, &mut b2.data)
        };
        dh += &dln2;
        // attention block
        let dctx = {
            let (wo, bo) = pick_two(gt, s.out_w, s.out_b);
            linear_backward(&dh, &lc.ctx, &t[s.out_w], wo, bo)
        };
        let (dqkv, dgqkv) = attention_backward(&dctx, lc, &cache.global, cfg.n_heads);
        let mut da = {
            let (w, b) = pick_two(gt, s.qkv_w, s.qkv_b);
            linear_backward(&dqkv, &lc.a, &t[s.qkv_w], w, b)
        };
        if let (Some((gw, gb)), Some(dg)) = (s.global_qkv, dgqkv.as_ref()) {
            let (w, b) = pick_two(gt, gw, gb);
            da += &linear_backward(dg, &lc.a, &t[gw], w, b);
        }
        let dln1 = {
            let (g1, b1) = pick_two(gt, s.norm1_g, s.norm1_b);
            layer_norm_backward(&da, &lc.ln1, &t[s.norm1_g].data, &mut g1.data, &mut b1.data)
        };
        dh += &dln1;
    }

    let dx0 = {
        let (g, b) = pick_two(gt, layout.emb_norm_g, layout.emb_norm_b);
        layer_norm_backward(&dh, &cache.emb_ln, &t[layout.emb_norm_g].data, &mut g.data, &mut b.data)
    };
    for i in 0..n {
        let row = dx0.row(i);
        let tok_off = cache.ids[i] as usize * h;
        for j in 0..h {
            let v = row[j];
            let tk = &mut gt[layout.token].data[tok_off + j];
            *tk = *tk + v;
            gt[layout.position].data[i * h + j] = gt[layout.position].data[i * h + j] + v;
        }
    }
    grads
}

/// Two distinct mutable tensors from the same vector.
fn pick_two<T>(ts: &mut [Tensor<T>], a: usize, b: usize) -> (&mut Tensor<T>, &mut Tensor<T>) {
    assert!(a < b, "layout order");
    let (lo, hi) = ts.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

fn check_params<T: Real>(params: &ParameterSet<T>, layout: &ParamLayout) -> Result<()> {
    if params.tensors.len() != layout.entries.len() {
        return Err(Error::ShapeMismatch {
            name: "parameter set".into(),
            detail: format!(
                "{} tensors, config implies {}",
                params.tensors.len(),
                layout.entries.len()
            ),
        });
    }
    for (t, (name, shape)) in params.tensors.iter().zip(&layout.entries) {
        if &t.name != name || &t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
            return Err(Error::ShapeMismatch {
                name: name.clone(),
                detail: format!("found {} {:?}, expected {:?}", t.name, t.shape, shape),
            });
        }
    }
    Ok(())
}

/// Forward pass over a batch. Cases are independent; results are in batch order.
pub fn forward<T: Real>(
    params: &ParameterSet<T>,
    batch: &[EncodedCase],
    cfg: &ModelConfig,
) -> Result<(Vec<T>, ActivationCache<T>)> {
    let layout = ParamLayout::new(cfg);
    check_params(params, &layout)?;
    let cases: Vec<CaseCache<T>> = batch
        .par_iter()
        .map(|c| forward_case(params, &layout, cfg, c))
        .collect::<Result<_>>()?;
    let logits = cases.iter().map(|c| c.logit).collect();
    Ok((logits, ActivationCache { cases }))
}

/// Logit of a single case without keeping activations.
pub fn case_logit<T: Real>(params: &ParameterSet<T>, cfg: &ModelConfig, case: &EncodedCase) -> Result<T> {
    let layout = ParamLayout::new(cfg);
    check_params(params, &layout)?;
    Ok(forward_case(params, &layout, cfg, case)?.logit)
}

/// Gradient of the mean BCE loss over the cached batch.
///
/// Per-case gradients may be computed in parallel; they are summed in batch
/// order so the result does not depend on the thread count.
pub fn backward<T: Real>(
    params: &ParameterSet<T>,
    cfg: &ModelConfig,
    cache: &ActivationCache<T>,
    labels: &[bool],
) -> Result<ParameterSet<T>> {
    let layout = ParamLayout::new(cfg);
    check_params(params, &layout)?;
    if cache.cases.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "cached cases vs labels",
            left: cache.cases.len(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Empty("backward over an empty batch"));
    }
    if let Some(c) = cache.cases.iter().find(|c| c.layers.len() != cfg.n_layers) {
        return Err(Error::ShapeMismatch {
            name: "activation cache".into(),
            detail: format!("{} cached layers for {} configured", c.layers.len(), cfg.n_layers),
        });
    }
    let per_case: Vec<ParameterSet<T>> = cache
        .cases
        .par_iter()
        .zip(labels.par_iter())
        .map(|(c, &y)| backward_case(params, &layout, cfg, c, loss_grad(c.logit, y)))
        .collect();
    let mut iter = per_case.into_iter();
    let mut total = iter.next().unwrap();
    for g in iter {
        total.add_assign(&g);
    }
    total.scale(T::one() / T::from_usize(labels.len()).unwrap());
    Ok(total)
}

/// Forward and backward for one case: `(loss, logit, gradient of that case's loss)`.
pub fn case_gradient<T: Real>(
    params: &ParameterSet<T>,
    cfg: &ModelConfig,
    case: &EncodedCase,
    label: bool,
) -> Result<(T, T, ParameterSet<T>)> {
    let layout = ParamLayout::new(cfg);
    check_params(params, &layout)?;
    let cache = forward_case(params, &layout, cfg, case)?;
    let loss = softplus(-cache.logit * c::<T>(signed(label)));
    let grads = backward_case(params, &layout, cfg, &cache, loss_grad(cache.logit, label));
    Ok((loss, cache.logit, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::dense_reference_attention;
    use crate::model::init_parameters;
    use rand::Rng;

    pub(crate) fn tiny_cfg(separate: bool) -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            hidden: 8,
            intermediate: 16,
            vocab_size: 20,
            max_positions: 16,
            window: 2,
            dilation_per_layer: vec![1, 2],
            separate_global_projections: separate,
            seed: 3,
        }
    }

    pub(crate) fn random_case(uid: &str, n: usize, vocab: usize, seed: u64) -> EncodedCase {
        let mut rng = crate::rng::stream(seed, 0);
        let ids: Vec<u32> = (0..n)
            .map(|i| if i == 0 { 1 } else { rng.random_range(3..vocab as u32) })
            .collect();
        let global_mask: Vec<bool> = (0..n).map(|i| i == 0 || rng.random_bool(0.2)).collect();
        EncodedCase {
            uid: uid.into(),
            attention_len: n,
            ids,
            global_mask,
            label: Some(seed % 2 == 0),
        }
    }

    #[test]
    fn loss_examples() {
        assert!((bce_loss(&[0.0f64], &[true]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_loss(&[0.0f64], &[false]).unwrap() - 0.693_147).abs() < 1e-6);
        let l = bce_loss(&[50.0f64], &[true]).unwrap();
        assert!(l.is_finite() && l < 1e-20);
        let l = bce_loss(&[-1000.0f32], &[true]).unwrap();
        assert!((l - 1000.0).abs() < 1e-3);
        assert!((bce_loss(&[0.0f64, 0.0], &[true, false]).unwrap() - 0.693_147).abs() < 1e-6);
        assert!(bce_loss::<f64>(&[], &[]).is_err());
        assert!(bce_loss(&[0.0f64], &[true, false]).is_err());
    }

    #[test]
    fn batch_independence() {
        let cfg = tiny_cfg(true);
        let p = init_parameters::<f32>(&cfg).unwrap();
        let a = random_case("a", 9, 20, 1);
        let b = random_case("b", 12, 20, 2);
        let (one, _) = forward(&p, std::slice::from_ref(&a), &cfg).unwrap();
        let (two, _) = forward(&p, &[b, a.clone()], &cfg).unwrap();
        assert_eq!(one[0].to_bits(), two[1].to_bits());
        assert_eq!(case_logit(&p, &cfg, &a).unwrap().to_bits(), one[0].to_bits());
    }

    #[test]
    fn zero_head_gives_zero_logit() {
        let cfg = tiny_cfg(false);
        let mut p = init_parameters::<f64>(&cfg).unwrap();
        p.get_mut("classifier.weight").unwrap().data.fill(0.0);
        p.get_mut("classifier.bias").unwrap().data.fill(0.0);
        let (logits, _) = forward(&p, &[random_case("a", 7, 20, 4)], &cfg).unwrap();
        assert_eq!(logits[0], 0.0);
    }

    #[test]
    fn padding_is_neutral() {
        let cfg = tiny_cfg(true);
        let p = init_parameters::<f32>(&cfg).unwrap();
        let a = random_case("a", 6, 20, 5);
        let mut padded = a.clone();
        padded.ids.extend([0, 0, 0]);
        padded.global_mask.extend([false, true, false]);
        assert_eq!(
            case_logit(&p, &cfg, &a).unwrap().to_bits(),
            case_logit(&p, &cfg, &padded).unwrap().to_bits()
        );
    }

    #[test]
    fn bounds_are_checked() {
        let cfg = tiny_cfg(true);
        let p = init_parameters::<f32>(&cfg).unwrap();
        let mut a = random_case("a", 6, 20, 5);
        a.ids[2] = 20;
        assert!(matches!(case_logit(&p, &cfg, &a), Err(Error::OutOfBounds(_))));
        let long = random_case("b", 17, 20, 5);
        assert!(matches!(case_logit(&p, &cfg, &long), Err(Error::OutOfBounds(_))));
        let other = init_parameters::<f32>(&ModelConfig { hidden: 4, ..cfg.clone() }).unwrap();
        assert!(matches!(case_logit(&other, &cfg, &random_case("c", 4, 20, 1)), Err(Error::ShapeMismatch { .. })));
    }

    /// Straightforward dense forward written independently of the sparse
    /// kernels: every row attends to every position through the masked
    /// reference attention.
    fn dense_forward(p: &ParameterSet<f64>, cfg: &ModelConfig, case: &EncodedCase) -> f64 {
        let get = |n: &str| p.get(n).unwrap();
        let mat = |n: &str| get(n).matrix().to_owned();
        let vecv = |n: &str| ndarray::Array1::from(get(n).data.clone());
        let ln = |x: &Array2<f64>, g: &str, b: &str| {
            let (g, b) = (vecv(g), vecv(b));
            let mut y = x.clone();
            for mut row in y.rows_mut() {
                let mean = row.mean().unwrap();
                let var = row.mapv(|v| (v - mean).powi(2)).mean().unwrap();
                row.mapv_inplace(|v| (v - mean) / (var + 1e-5).sqrt());
                let scaled = &row * &g + &b;
                row.assign(&scaled);
            }
            y
        };
        let gelu = |u: f64| 0.5 * u * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (u + 0.044715 * u.powi(3))).tanh());
        let n = case.attention_len;
        let h = cfg.hidden;
        let dh = h / cfg.n_heads;
        let tok = mat("embeddings.token.weight");
        let pos = mat("embeddings.position.weight");
        let x = Array2::from_shape_fn((n, h), |(i, j)| tok[[case.ids[i] as usize, j]] + pos[[i, j]]);
        let mut hs = ln(&x, "embeddings.norm.gain", "embeddings.norm.bias");
        let mask = Array2::from_elem((n, n), true);
        for l in 0..cfg.n_layers {
            let name = |s: &str| format!("layer{l}.{s}");
            let a = ln(&hs, &name("norm1.gain"), &name("norm1.bias"));
            let proj = if cfg.separate_global_projections { "global_qkv_proj" } else { "qkv_proj" };
            let qkv = a.dot(&mat(&name(&format!("{proj}.weight")))) + vecv(&name(&format!("{proj}.bias")));
            let mut ctx = Array2::zeros((n, h));
            for hd in 0..cfg.n_heads {
                let sl = |off: usize| qkv.slice(ndarray::s![.., off + hd * dh..off + (hd + 1) * dh]).to_owned();
                let out = dense_reference_attention(sl(0).view(), sl(h).view(), sl(2 * h).view(), mask.view(), 1.0 / (dh as f64).sqrt()).unwrap();
                ctx.slice_mut(ndarray::s![.., hd * dh..(hd + 1) * dh]).assign(&out.output);
            }
            hs = hs + ctx.dot(&mat(&name("attn_out.weight"))) + vecv(&name("attn_out.bias"));
            let f = ln(&hs, &name("norm2.gain"), &name("norm2.bias"));
            let u = f.dot(&mat(&name("ff1.weight"))) + vecv(&name("ff1.bias"));
            hs = hs + u.mapv(gelu).dot(&mat(&name("ff2.weight"))) + vecv(&name("ff2.bias"));
        }
        let pooled = (hs.row(0).dot(&mat("pooler.weight")) + vecv("pooler.bias")).mapv(f64::tanh);
        pooled.dot(&vecv("classifier.weight")) + get("classifier.bias").data[0]
    }

    #[test]
    fn saturated_forward_matches_dense_oracle() {
        for separate in [false, true] {
            let cfg = tiny_cfg(separate);
            let p = init_parameters::<f64>(&cfg).unwrap();
            for n in 1..=8 {
                let mut case = random_case("a", n, 20, n as u64);
                case.global_mask = vec![true; n];
                let sparse = case_logit(&p, &cfg, &case).unwrap();
                let dense = dense_forward(&p, &cfg, &case);
                assert!((sparse - dense).abs() < 1e-6, "n={n} separate={separate}: {sparse} vs {dense}");
            }
        }
    }

    #[test]
    fn local_attention_matches_attention_module() {
        // layer-0 context with shared projections equals sparse_attention per head
        let cfg = tiny_cfg(false);
        let p = init_parameters::<f64>(&cfg).unwrap();
        let case = random_case("a", 11, 20, 9);
        let layout = ParamLayout::new(&cfg);
        let cache = forward_case(&p, &layout, &cfg, &case).unwrap();
        let lc = &cache.layers[0];
        let globals: Vec<usize> = (0..11).filter(|&i| case.global_mask[i]).collect();
        let pattern = AttentionPattern::new(11, cfg.window, cfg.dilation(0), globals).unwrap();
        let dh = cfg.head_dim();
        for hd in 0..cfg.n_heads {
            let sl = |off: usize| lc.qkv.slice(ndarray::s![.., off + hd * dh..off + (hd + 1) * dh]).to_owned();
            let out = crate::attention::sparse_attention(sl(0).view(), sl(8).view(), sl(16).view(), &pattern, 1.0 / (dh as f64).sqrt()).unwrap();
            let mine = lc.ctx.slice(ndarray::s![.., hd * dh..(hd + 1) * dh]);
            let diff = (&out.output - &mine).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(diff < 1e-12);
        }
    }

    #[test]
    fn unused_positions_get_zero_gradient() {
        let cfg = tiny_cfg(true);
        let p = init_parameters::<f64>(&cfg).unwrap();
        let case = random_case("a", 5, 20, 2);
        let (_, _, g) = case_gradient(&p, &cfg, &case, true).unwrap();
        let pos = &g.get("embeddings.position.weight").unwrap().data;
        assert!(pos[5 * cfg.hidden..].iter().all(|&x| x == 0.0));
        assert!(pos[..5 * cfg.hidden].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn duplicated_batch_gives_same_mean_gradient() {
        let cfg = tiny_cfg(true);
        let p = init_parameters::<f64>(&cfg).unwrap();
        let batch = vec![random_case("a", 6, 20, 1), random_case("b", 9, 20, 2)];
        let labels = [true, false];
        let (_, cache) = forward(&p, &batch, &cfg).unwrap();
        let g1 = backward(&p, &cfg, &cache, &labels).unwrap();
        let doubled: Vec<_> = batch.iter().chain(&batch).cloned().collect();
        let (_, cache2) = forward(&p, &doubled, &cfg).unwrap();
        let g2 = backward(&p, &cfg, &cache2, &[true, false, true, false]).unwrap();
        for (a, b) in g1.tensors.iter().zip(&g2.tensors) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()), "{}", a.name);
            }
        }
    }
}
