//! Forward and reverse-mode passes over an architecture's layer graph.
//!
//! Each layer consumes the sum of its producers' outputs (or the network
//! input), applies conv/fc, optional bias, optional per-channel affine, then
//! ReLU (all but the classifier) and optional max pooling. An fc layer whose
//! input still has spatial extent global-average-pools it first.

use super::data::{Batch, Dataset};
use super::ops::{col2im, gemm_acc, gemm_nt_acc, gemm_tn, im2col, maxpool, ConvGeom};
use super::{NetworkWeights, Scalar};
use crate::arch::{ArchitectureSpec, LayerKind, LayerSpec};
use crate::error::{Error, Result};

/// Activations retained by [`forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    batch: usize,
    /// Per layer: its (summed, pooled-if-fc) input.
    inputs: Vec<Vec<T>>,
    /// Per layer: linear output before the affine.
    lin: Vec<Vec<T>>,
    /// Per layer: post-activation output before pooling (logits for the classifier).
    act: Vec<Vec<T>>,
    pooled: Vec<Option<(Vec<T>, Vec<u32>)>>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Output of layer `i` as seen by its consumers.
    pub fn output(&self, i: usize) -> &[T] {
        match &self.pooled[i] {
            Some((o, _)) => o,
            None => &self.act[i],
        }
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }
}

fn geom(l: &LayerSpec) -> ConvGeom {
    match l.kind {
        LayerKind::Conv => ConvGeom {
            c_in: l.c_in,
            h: l.in_h,
            w: l.in_w,
            k: l.kernel,
            stride: l.stride,
            pad: l.padding,
            oh: l.conv_h,
            ow: l.conv_w,
        },
        LayerKind::Fc => ConvGeom {
            c_in: l.c_in,
            h: 1,
            w: 1,
            k: 1,
            stride: 1,
            pad: 0,
            oh: 1,
            ow: 1,
        },
    }
}

fn check_shapes<T: Scalar>(weights: &NetworkWeights<T>, arch: &ArchitectureSpec, batch: &Batch<T>) -> Result<()> {
    if weights.layers.len() != arch.layers.len()
        || arch
            .layers
            .iter()
            .zip(&weights.layers)
            .any(|(l, p)| p.weight.len() != l.c_out * l.filter_len())
    {
        return Err(Error::Validation(format!("weights do not match architecture {}", arch.name)));
    }
    if batch.shape != arch.input_shape {
        return Err(Error::Validation(format!(
            "batch shape {:?} does not match architecture input {:?}",
            batch.shape, arch.input_shape
        )));
    }
    let per = batch.shape.iter().product::<usize>();
    if batch.inputs.len() != per * batch.labels.len() || batch.labels.is_empty() {
        return Err(Error::Validation("batch inputs and labels disagree in size".into()));
    }
    Ok(())
}

/// Run the network on `batch`, returning logits (`batch x classes`) and the cache.
pub fn forward<T: Scalar>(
    weights: &NetworkWeights<T>,
    arch: &ArchitectureSpec,
    batch: &Batch<T>,
) -> Result<(Vec<T>, ForwardCache<T>)> {
    check_shapes(weights, arch, batch)?;
    let n = arch.layers.len();
    let b = batch.labels.len();
    let mut cache = ForwardCache {
        batch: b,
        inputs: vec![Vec::new(); n],
        lin: vec![Vec::new(); n],
        act: vec![Vec::new(); n],
        pooled: vec![None; n],
    };

    for &i in arch.order() {
        let l = &arch.layers[i];
        let p = &weights.layers[i];
        let plane = l.in_h * l.in_w;
        let mut x = match arch.producers(i) {
            [] => batch.inputs.clone(),
            [first, rest @ ..] => {
                let mut s = cache.output(*first).to_vec();
                for &r in rest {
                    for (a, &v) in s.iter_mut().zip(cache.output(r)) {
                        *a += v;
                    }
                }
                s
            }
        };
        if l.kind == LayerKind::Fc && plane > 1 {
            x = global_avg_pool(&x, b * l.c_in, plane);
        }

        let g = geom(l);
        let (q, pp) = (g.rows(), g.cols());
        let in_len = l.c_in * g.h * g.w;
        let out_len = l.c_out * pp;
        let mut lin = vec![T::zero(); b * out_len];
        let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); q * pp] };
        for s in 0..b {
            let xs = &x[s * in_len..(s + 1) * in_len];
            let cols_ref: &[T] = if g.is_pointwise() {
                xs
            } else {
                im2col(xs, &g, &mut cols);
                &cols
            };
            let out = &mut lin[s * out_len..(s + 1) * out_len];
            gemm_acc(&p.weight, cols_ref, out, l.c_out, q, pp);
            if let Some(bias) = &p.bias {
                for (c, &bv) in bias.iter().enumerate() {
                    out[c * pp..(c + 1) * pp].iter_mut().for_each(|v| *v += bv);
                }
            }
        }

        let mut act = lin.clone();
        if let (Some(scale), Some(shift)) = (&p.scale, &p.shift) {
            for s in 0..b {
                for c in 0..l.c_out {
                    let (sc, sh) = (scale[c], shift[c]);
                    let base = s * out_len + c * pp;
                    act[base..base + pp].iter_mut().for_each(|v| *v = sc * *v + sh);
                }
            }
        }
        if i != arch.classifier_id {
            act.iter_mut().for_each(|v| {
                if *v < T::zero() {
                    *v = T::zero()
                }
            });
        }
        if let Some(pool) = l.pool {
            let ol = l.c_out * l.out_h * l.out_w;
            let mut out = vec![T::zero(); b * ol];
            let mut arg = vec![0u32; b * ol];
            for s in 0..b {
                maxpool(
                    &act[s * out_len..(s + 1) * out_len],
                    l.c_out,
                    l.conv_h,
                    l.conv_w,
                    pool.kernel,
                    pool.stride,
                    pool.padding,
                    l.out_h,
                    l.out_w,
                    &mut out[s * ol..(s + 1) * ol],
                    &mut arg[s * ol..(s + 1) * ol],
                );
            }
            cache.pooled[i] = Some((out, arg));
        }
        cache.inputs[i] = x;
        if p.scale.is_some() {
            cache.lin[i] = lin;
        }
        cache.act[i] = act;
    }
    let logits = cache.act[arch.classifier_id].clone();
    Ok((logits, cache))
}

fn global_avg_pool<T: Scalar>(x: &[T], planes: usize, plane: usize) -> Vec<T> {
    let inv = T::one() / T::from_usize(plane).unwrap();
    (0..planes)
        .map(|i| x[i * plane..(i + 1) * plane].iter().fold(T::zero(), |a, &v| a + v) * inv)
        .collect()
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
fn softmax_xent<T: Scalar>(logits: &[T], labels: &[usize], classes: usize) -> (T, Vec<T>) {
    let b = labels.len();
    let inv_b = T::one() / T::from_usize(b).unwrap();
    let mut grad = vec![T::zero(); logits.len()];
    let mut loss = T::zero();
    for (s, &y) in labels.iter().enumerate() {
        let row = &logits[s * classes..(s + 1) * classes];
        let m = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        let z: T = row.iter().map(|&v| (v - m).exp()).sum();
        let lse = m + z.ln();
        loss += lse - row[y];
        let g = &mut grad[s * classes..(s + 1) * classes];
        for (c, gv) in g.iter_mut().enumerate() {
            let p = (row[c] - lse).exp();
            *gv = (p - if c == y { T::one() } else { T::zero() }) * inv_b;
        }
    }
    (loss * inv_b, grad)
}

/// Mean cross-entropy loss and gradients for every parameter tensor.
pub fn loss_and_grads<T: Scalar>(
    weights: &NetworkWeights<T>,
    arch: &ArchitectureSpec,
    batch: &Batch<T>,
) -> Result<(T, NetworkWeights<T>)> {
    let classes = arch.num_classes();
    if batch.labels.iter().any(|&y| y >= classes) {
        return Err(Error::Validation(format!("labels must be < {classes}")));
    }
    let (logits, cache) = forward(weights, arch, batch)?;
    let (loss, dlogits) = softmax_xent(&logits, &batch.labels, classes);
    if !loss.is_finite() {
        return Err(Error::Training {
            epoch: 0,
            message: "non-finite loss".into(),
            trace: Vec::new(),
        });
    }
    let grads = backward(weights, arch, &cache, dlogits);
    Ok((loss, grads))
}

fn backward<T: Scalar>(
    weights: &NetworkWeights<T>,
    arch: &ArchitectureSpec,
    cache: &ForwardCache<T>,
    dlogits: Vec<T>,
) -> NetworkWeights<T> {
    let b = cache.batch;
    let mut grads = NetworkWeights::zeros(arch);
    let mut g_out: Vec<Option<Vec<T>>> = vec![None; arch.layers.len()];
    g_out[arch.classifier_id] = Some(dlogits);

    for &i in arch.order().iter().rev() {
        let l = &arch.layers[i];
        let p = &weights.layers[i];
        let gp = &mut grads.layers[i];
        let Some(g) = g_out[i].take() else { continue };
        let g_act = match &cache.pooled[i] {
            Some((_, arg)) => {
                let per = l.c_out * l.conv_h * l.conv_w;
                let ol = l.c_out * l.out_h * l.out_w;
                let mut ga = vec![T::zero(); b * per];
                for s in 0..b {
                    for o in 0..ol {
                        ga[s * per + arg[s * ol + o] as usize] += g[s * ol + o];
                    }
                }
                ga
            }
            None => g,
        };
        let act = &cache.act[i];
        let mut g_lin = g_act;
        if i != arch.classifier_id {
            for (gv, &a) in g_lin.iter_mut().zip(act) {
                if a <= T::zero() {
                    *gv = T::zero();
                }
            }
        }
        let g_cfg = geom(l);
        let pp = g_cfg.cols();
        let out_len = l.c_out * pp;
        if let (Some(scale), Some(gs), Some(gsh)) = (&p.scale, gp.scale.as_mut(), gp.shift.as_mut()) {
            let lin = &cache.lin[i];
            for s in 0..b {
                for c in 0..l.c_out {
                    let base = s * out_len + c * pp;
                    let gz = &mut g_lin[base..base + pp];
                    let li = &lin[base..base + pp];
                    let mut a = T::zero();
                    let mut sh = T::zero();
                    for (gv, &lv) in gz.iter().zip(li) {
                        a += *gv * lv;
                        sh += *gv;
                    }
                    gs[c] += a;
                    gsh[c] += sh;
                    gz.iter_mut().for_each(|v| *v *= scale[c]);
                }
            }
        }
        if let Some(gb) = gp.bias.as_mut() {
            for s in 0..b {
                for (c, gc) in gb.iter_mut().enumerate() {
                    let base = s * out_len + c * pp;
                    *gc += g_lin[base..base + pp].iter().fold(T::zero(), |a, &v| a + v);
                }
            }
        }

        let need_input = !arch.producers(i).is_empty();
        let q = g_cfg.rows();
        let in_len = l.c_in * g_cfg.h * g_cfg.w;
        let x = &cache.inputs[i];
        let mut g_x = if need_input { vec![T::zero(); b * in_len] } else { Vec::new() };
        let mut cols = if g_cfg.is_pointwise() { Vec::new() } else { vec![T::zero(); q * pp] };
        let mut dcols = vec![T::zero(); q * pp];
        for s in 0..b {
            let xs = &x[s * in_len..(s + 1) * in_len];
            let cols_ref: &[T] = if g_cfg.is_pointwise() {
                xs
            } else {
                im2col(xs, &g_cfg, &mut cols);
                &cols
            };
            let gs = &g_lin[s * out_len..(s + 1) * out_len];
            gemm_nt_acc(gs, cols_ref, &mut gp.weight, l.c_out, q, pp);
            if need_input {
                let gxs = &mut g_x[s * in_len..(s + 1) * in_len];
                if g_cfg.is_pointwise() {
                    gemm_tn(&p.weight, gs, gxs, l.c_out, q, pp);
                } else {
                    gemm_tn(&p.weight, gs, &mut dcols, l.c_out, q, pp);
                    col2im(&dcols, &g_cfg, gxs);
                }
            }
        }
        if !need_input {
            continue;
        }
        let plane = l.in_h * l.in_w;
        if l.kind == LayerKind::Fc && plane > 1 {
            let inv = T::one() / T::from_usize(plane).unwrap();
            g_x = g_x.iter().flat_map(|&v| std::iter::repeat_n(v * inv, plane)).collect();
        }
        let producers = arch.producers(i);
        for (k, &pr) in producers.iter().enumerate() {
            match &mut g_out[pr] {
                Some(acc) => acc.iter_mut().zip(&g_x).for_each(|(a, &v)| *a += v),
                slot @ None => {
                    *slot = Some(if k + 1 == producers.len() {
                        std::mem::take(&mut g_x)
                    } else {
                        g_x.clone()
                    })
                }
            }
        }
    }
    grads
}

/// Predicted class per sample; ties resolve to the lowest class index.
pub fn predict<T: Scalar>(weights: &NetworkWeights<T>, arch: &ArchitectureSpec, batch: &Batch<T>) -> Result<Vec<usize>> {
    let (logits, _) = forward(weights, arch, batch)?;
    Ok(argmax_rows(&logits, arch.num_classes()))
}

pub(crate) fn argmax_rows<T: Scalar>(logits: &[T], classes: usize) -> Vec<usize> {
    logits
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for c in 1..classes {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Top-1 accuracy over a dataset split.
pub fn evaluate<T: Scalar>(weights: &NetworkWeights<T>, arch: &ArchitectureSpec, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Validation("cannot evaluate on an empty split".into()));
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(256) {
        let batch = data.batch::<T>(chunk);
        let pred = predict(weights, arch, &batch)?;
        correct += pred.iter().zip(&batch.labels).filter(|(p, y)| p == y).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ArchitectureSpec;
    use crate::builtin;
    use crate::nn::init_weights;

    fn random_batch<T: Scalar>(arch: &ArchitectureSpec, b: usize, seed: u64) -> Batch<T> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let per: usize = arch.input_shape.iter().product();
        Batch {
            inputs: (0..b * per).map(|_| T::from_f64(rng.random_range(-1.0..1.0)).unwrap()).collect(),
            labels: (0..b).map(|i| i % arch.num_classes()).collect(),
            shape: arch.input_shape,
        }
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let a = builtin::resnet_tiny();
        let w = NetworkWeights::<f32>::zeros(&a);
        let (logits, _) = forward(&w, &a, &random_batch(&a, 3, 1)).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pointwise_identity_passes_input() {
        let a = ArchitectureSpec::from_json(
            r#"{"name":"id","input":[1,3,3],"layers":[
            {"id":0,"kind":"conv","c_in":1,"c_out":1,"k":1,"stride":1,"pad":0,"bias":false,"affine":true,"prunable":true},
            {"id":1,"kind":"fc","c_in":1,"c_out":2,"k":1,"stride":1,"pad":0,"bias":false,"prunable":false}],
            "edges":[[0,1]],"classifier":1}"#,
        )
        .unwrap();
        let mut w: NetworkWeights<f64> = init_weights(&a, 0);
        w.layers[0].weight[0] = 1.0;
        let batch = random_batch::<f64>(&a, 2, 3);
        let (_, cache) = forward(&w, &a, &batch).unwrap();
        assert_eq!(cache.lin[0], batch.inputs);
        let relu: Vec<f64> = batch.inputs.iter().map(|v| v.max(0.0)).collect();
        assert_eq!(cache.output(0), &relu[..]);
    }

    /// Direct per-pixel MAC summation over the whole resnet-tiny graph.
    fn naive_forward(w: &NetworkWeights<f64>, a: &ArchitectureSpec, batch: &Batch<f64>) -> Vec<f64> {
        let b = batch.labels.len();
        let mut outs: Vec<Vec<f64>> = vec![Vec::new(); a.layers.len()];
        for &i in a.order() {
            let l = &a.layers[i];
            let p = &w.layers[i];
            let in_len = l.c_in * l.in_h * l.in_w;
            let mut x = vec![0.0; b * in_len];
            if a.producers(i).is_empty() {
                x.copy_from_slice(&batch.inputs);
            }
            for &pr in a.producers(i) {
                for (xv, ov) in x.iter_mut().zip(&outs[pr]) {
                    *xv += ov;
                }
            }
            let mut out = Vec::new();
            for s in 0..b {
                let xs = &x[s * in_len..(s + 1) * in_len];
                for co in 0..l.c_out {
                    for oy in 0..l.conv_h {
                        for ox in 0..l.conv_w {
                            let mut acc = 0.0;
                            for ci in 0..l.c_in {
                                if l.kind == LayerKind::Fc {
                                    let plane = l.in_h * l.in_w;
                                    let m: f64 = xs[ci * plane..(ci + 1) * plane].iter().sum::<f64>() / plane as f64;
                                    acc += p.weight[co * l.c_in + ci] * m;
                                    continue;
                                }
                                for ky in 0..l.kernel {
                                    for kx in 0..l.kernel {
                                        let iy = (oy * l.stride + ky) as isize - l.padding as isize;
                                        let ix = (ox * l.stride + kx) as isize - l.padding as isize;
                                        if iy < 0 || ix < 0 || iy as usize >= l.in_h || ix as usize >= l.in_w {
                                            continue;
                                        }
                                        acc += p.weight[((co * l.c_in + ci) * l.kernel + ky) * l.kernel + kx]
                                            * xs[(ci * l.in_h + iy as usize) * l.in_w + ix as usize];
                                    }
                                }
                            }
                            if let Some(bias) = &p.bias {
                                acc += bias[co];
                            }
                            if let (Some(sc), Some(sh)) = (&p.scale, &p.shift) {
                                acc = sc[co] * acc + sh[co];
                            }
                            if i != a.classifier_id {
                                acc = acc.max(0.0);
                            }
                            out.push(acc);
                        }
                    }
                }
            }
            outs[i] = out;
        }
        outs[a.classifier_id].clone()
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let a = builtin::resnet_tiny();
        let mut w: NetworkWeights<f64> = init_weights(&a, 5);
        // non-trivial affine and bias values
        for (li, l) in w.layers.iter_mut().enumerate() {
            if let Some(s) = l.scale.as_mut() {
                s.iter_mut().enumerate().for_each(|(c, v)| *v = 0.5 + 0.1 * ((c + li) % 7) as f64);
            }
            if let Some(s) = l.shift.as_mut() {
                s.iter_mut().enumerate().for_each(|(c, v)| *v = 0.05 * ((c * 3 + li) % 5) as f64 - 0.1);
            }
        }
        let batch = random_batch::<f64>(&a, 3, 9);
        let (logits, _) = forward(&w, &a, &batch).unwrap();
        let oracle = naive_forward(&w, &a, &batch);
        for (x, y) in logits.iter().zip(&oracle) {
            assert!((x - y).abs() <= 1e-6 * y.abs().max(1e-6), "{x} vs {y}");
        }
    }

    #[test]
    fn uniform_logits_loss_is_ln_c() {
        let a = builtin::chain3();
        let w = NetworkWeights::<f64>::zeros(&a);
        let (loss, _) = loss_and_grads(&w, &a, &random_batch(&a, 4, 2)).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicated_sample_keeps_gradient() {
        let a = builtin::chain3();
        let w: NetworkWeights<f64> = init_weights(&a, 3);
        let one = random_batch::<f64>(&a, 1, 4);
        let mut two = one.clone();
        two.inputs.extend_from_slice(&one.inputs.clone());
        two.labels.push(one.labels[0]);
        let (l1, g1) = loss_and_grads(&w, &a, &one).unwrap();
        let (l2, g2) = loss_and_grads(&w, &a, &two).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (x, y) in g1.values().zip(g2.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = builtin::chain3();
        let w: NetworkWeights<f32> = init_weights(&a, 1);
        let b = random_batch::<f32>(&builtin::resnet_tiny(), 2, 1);
        assert!(forward(&w, &a, &b).is_err());
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax_rows(&[1.0f32, 3.0, 3.0, 0.0, 0.0, 0.0], 3), vec![1, 0]);
    }
}
