//! Index-by-index reference implementation of the model and shared fixtures.
//!
//! Nothing here touches the tape: every quantity is recomputed with plain
//! loops over the padded layout, reading parameters by name.
#![allow(dead_code)]

use cicd_core::data::{EncodedInstance, Vocab};
use cicd_core::{Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Softmax over the entries where `keep` holds; others are zero.
pub fn softmax_where(x: &[f64], keep: &[bool]) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    for i in 0..x.len() {
        if keep[i] && x[i] > m {
            m = x[i];
        }
    }
    let mut z = 0.0;
    let mut out = vec![0.0; x.len()];
    for i in 0..x.len() {
        if keep[i] {
            out[i] = (x[i] - m).exp();
            z += out[i];
        }
    }
    for v in &mut out {
        *v /= z;
    }
    out
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    softmax_where(x, &vec![true; x.len()])
}

struct P<'a>(&'a Model);

impl P<'_> {
    fn mat(&self, name: &str) -> Mat {
        let t = self.0.params.by_name(name).unwrap_or_else(|| panic!("no parameter {name}"));
        (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
    }
    fn vec(&self, name: &str) -> Vec<f64> {
        self.0.params.by_name(name).unwrap_or_else(|| panic!("no parameter {name}")).values().to_vec()
    }
    fn has(&self, name: &str) -> bool {
        self.0.params.by_name(name).is_some()
    }
}

fn mv(m: &Mat, x: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, x)).collect()
}

/// Unidirectional LSTM over unmasked positions, state carried across masked
/// ones; masked outputs are zero.
pub fn lstm_dir(xs: &[Vec<f64>], mask: &[bool], wx: &Mat, wh: &Mat, b: &[f64], reverse: bool) -> Mat {
    let hdim = wh[0].len();
    let t_len = xs.len();
    let mut h = vec![0.0; hdim];
    let mut c = vec![0.0; hdim];
    let mut out = vec![vec![0.0; hdim]; t_len];
    let order: Vec<usize> = if reverse { (0..t_len).rev().collect() } else { (0..t_len).collect() };
    for t in order {
        if !mask[t] {
            continue;
        }
        let mut z = vec![0.0; 4 * hdim];
        for r in 0..4 * hdim {
            z[r] = b[r];
            for k in 0..xs[t].len() {
                z[r] += wx[r][k] * xs[t][k];
            }
            for k in 0..hdim {
                z[r] += wh[r][k] * h[k];
            }
        }
        for u in 0..hdim {
            let i = sigmoid(z[u]);
            let f = sigmoid(z[hdim + u]);
            let g = z[2 * hdim + u].tanh();
            let o = sigmoid(z[3 * hdim + u]);
            c[u] = f * c[u] + i * g;
            h[u] = o * c[u].tanh();
        }
        out[t] = h.clone();
    }
    out
}

fn bilstm(model: &Model, prefix: &str, ids: &[u32], mask: &[bool]) -> Mat {
    let p = P(model);
    let emb = p.mat("embedding");
    let xs: Mat = ids.iter().map(|&i| emb[i as usize].clone()).collect();
    let f = lstm_dir(
        &xs,
        mask,
        &p.mat(&format!("{prefix}.fwd.w_x")),
        &p.mat(&format!("{prefix}.fwd.w_h")),
        &p.vec(&format!("{prefix}.fwd.b")),
        false,
    );
    let b = lstm_dir(
        &xs,
        mask,
        &p.mat(&format!("{prefix}.bwd.w_x")),
        &p.mat(&format!("{prefix}.bwd.w_h")),
        &p.vec(&format!("{prefix}.bwd.b")),
        true,
    );
    f.into_iter().zip(b).map(|(mut x, y)| {
        x.extend(y);
        x
    }).collect()
}

fn last_unmasked(mask: &[bool]) -> Option<usize> {
    (0..mask.len()).rev().find(|&j| mask[j])
}

/// Aggregated claim vector for every article word: `a_j = Σ_k α_jk hc_k` with
/// `α_j = softmax_k(hr_jᵀ W1 hc_k)` over unmasked claim positions.
pub fn matching(hr: &Mat, hr_mask: &[bool], hc: &Mat, hc_mask: &[bool], w1: &Mat) -> (Mat, Mat) {
    let width = hc[0].len();
    let mut a = vec![vec![0.0; width]; hr.len()];
    let mut alpha = vec![vec![0.0; hc.len()]; hr.len()];
    for j in 0..hr.len() {
        if !hr_mask[j] {
            continue;
        }
        let mut s = vec![0.0; hc.len()];
        for k in 0..hc.len() {
            let mut acc = 0.0;
            for x in 0..width {
                for y in 0..width {
                    acc += hr[j][x] * w1[x][y] * hc[k][y];
                }
            }
            s[k] = acc;
        }
        alpha[j] = softmax_where(&s, hc_mask);
        for k in 0..hc.len() {
            for x in 0..width {
                a[j][x] += alpha[j][k] * hc[k][x];
            }
        }
    }
    (a, alpha)
}

/// `A[m][n] = exp(u_m·v_n) / Σ_i exp(u_i·v_n)`.
pub fn diff_matrix(hrs: &Mat, wm: &Mat, bm: &[f64], wn: &Mat, bn: &[f64]) -> Mat {
    let n = hrs.len();
    let u: Mat = hrs.iter().map(|h| mv(wm, h).iter().zip(bm).map(|(a, b)| (a + b).tanh()).collect()).collect();
    let v: Mat = hrs.iter().map(|h| mv(wn, h).iter().zip(bn).map(|(a, b)| (a + b).tanh()).collect()).collect();
    let mut a = vec![vec![0.0; n]; n];
    for col in 0..n {
        let z: f64 = (0..n).map(|i| dot(&u[i], &v[col]).exp()).sum();
        for m in 0..n {
            a[m][col] = dot(&u[m], &v[col]).exp() / z;
        }
    }
    a
}

pub fn scores(a: &Mat) -> Vec<f64> {
    let n = a.len();
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|m| {
            let mut s = 0.0;
            for j in 0..n {
                if j != m {
                    s += (a[m][j] + a[j][m]) / 2.0;
                }
            }
            -s / (n - 1) as f64
        })
        .collect()
}

/// Enumerates every subset of size `min(k, n)` and returns the one no
/// outsider beats: each member scores higher than every non-member, or
/// ties with a lower index.
pub fn brute_force_select(d: &[f64], k: usize) -> Vec<usize> {
    let n = d.len();
    let size = k.min(n);
    let mut found = Vec::new();
    for bits in 0u32..(1 << n) {
        if bits.count_ones() as usize != size {
            continue;
        }
        let inside = |i: usize| bits & (1 << i) != 0;
        let ok = (0..n).filter(|&m| inside(m)).all(|m| {
            (0..n)
                .filter(|&o| !inside(o))
                .all(|o| d[m] > d[o] || (d[m] == d[o] && m < o))
        });
        if ok {
            found.push((0..n).filter(|&i| inside(i)).collect::<Vec<_>>());
        }
    }
    assert_eq!(found.len(), 1, "selection rule must define a unique subset");
    found.pop().unwrap()
}

/// `(r_in, c_in, weights)` for article state `h` against the claim.
pub fn co_attention(h: &[f64], hc: &Mat, hc_mask: &[bool]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let s: Vec<f64> = hc.iter().map(|row| dot(row, h)).collect();
    let w = softmax_where(&s, hc_mask);
    let mut r_in = h.to_vec();
    for k in 0..hc.len() {
        for x in 0..h.len() {
            r_in[x] += w[k] * hc[k][x];
        }
    }
    let last = last_unmasked(hc_mask).expect("claim has a token");
    let c_in: Vec<f64> = (0..h.len()).map(|x| hc[last][x] + w[last] * h[x]).collect();
    (r_in, c_in, w)
}

#[derive(Debug, Clone)]
pub struct Reference {
    /// Per step, `[N][l]` combined attention (word attention without merge).
    pub gamma: Vec<Mat>,
    pub g: Mat,
    pub a: Mat,
    pub chosen: Vec<usize>,
    pub local: Vec<f64>,
    pub probs: Vec<f64>,
    pub ce: f64,
    pub kl: Option<f64>,
    pub loss: f64,
    /// Per article, `[l][p]` matching attention.
    pub match_alpha: Vec<Mat>,
    /// Claim attention of each fragment, keyed by article.
    pub fragment_weights: Vec<(usize, Vec<f64>)>,
}

fn kl(g: &[f64], i: &[f64]) -> f64 {
    let gp = softmax(g);
    let ip = softmax(i);
    (0..g.len()).map(|k| gp[k] * ((gp[k] + 1e-12).ln() - (ip[k] + 1e-12).ln())).sum()
}

/// Evaluation-mode forward pass computed with loops.
pub fn reference(model: &Model, inst: &EncodedInstance) -> Reference {
    let cfg = &model.config;
    let c = cfg.components;
    let p = P(model);
    let s = cfg.state_width();
    let n = inst.n_articles;
    let hc = bilstm(model, "claim_encoder", &inst.claim_ids, &inst.claim_mask);

    let mut gamma = Vec::new();
    let mut g = Vec::new();
    let mut match_alpha = Vec::new();
    if c.ced {
        let mut hr = Vec::new();
        let mut hs = Vec::new();
        let mut nonempty = Vec::new();
        for i in 0..n {
            let (ids, mask) = inst.article(i);
            let mut states = bilstm(model, "ced.article_encoder", ids, mask);
            hs.push(last_unmasked(mask).map_or(vec![0.0; s], |j| states[j].clone()));
            nonempty.push(mask.iter().any(|&m| m));
            if c.matching {
                let (a, alpha) = matching(&states, mask, &hc, &inst.claim_mask, &p.mat("ced.w1"));
                for j in 0..states.len() {
                    if mask[j] {
                        for x in 0..s {
                            states[j][x] += a[j][x];
                        }
                    }
                }
                match_alpha.push(alpha);
            }
            hr.push(states);
        }
        let mean: Vec<f64> = (0..s).map(|x| hs.iter().map(|r| r[x]).sum::<f64>() / n as f64).collect();
        let mut h: Vec<f64> = mv(&p.mat("ced.init.w"), &mean)
            .iter()
            .zip(p.vec("ced.init.b"))
            .map(|(a, b)| (a + b).tanh())
            .collect();
        let mut cell = vec![0.0; s];
        let mut x = p.vec("ced.start");
        let (dec_w, dec_b, w4) = (p.mat("ced.decoder.w"), p.vec("ced.decoder.b"), p.mat("ced.w4"));
        for _ in 0..cfg.o {
            let xh: Vec<f64> = x.iter().chain(&h).copied().collect();
            let z: Vec<f64> = mv(&dec_w, &xh).iter().zip(&dec_b).map(|(a, b)| a + b).collect();
            for u in 0..s {
                let ig = sigmoid(z[u]);
                let fg = sigmoid(z[s + u]);
                let gg = z[2 * s + u].tanh();
                let og = sigmoid(z[3 * s + u]);
                cell[u] = fg * cell[u] + ig * gg;
                h[u] = og * cell[u].tanh();
            }
            let alpha: Mat = (0..n)
                .map(|i| {
                    (0..cfg.l)
                        .map(|j| if c.word_attention { dot(&hr[i][j], &mv(&p.mat("ced.w3"), &h)) } else { 0.0 })
                        .collect()
                })
                .collect();
            let beta: Vec<f64> = (0..n)
                .map(|i| if c.sentence_attention { dot(&hs[i], &mv(&p.mat("ced.w2"), &h)) } else { 0.0 })
                .collect();
            let mut flat = Vec::new();
            let mut keep = Vec::new();
            for i in 0..n {
                let (_, mask) = inst.article(i);
                for j in 0..cfg.l {
                    flat.push(if c.merge { alpha[i][j] + beta[i] } else { alpha[i][j] });
                    keep.push(mask[j]);
                }
            }
            let gam = softmax_where(&flat, &keep);
            let mut ctx = vec![0.0; s];
            for i in 0..n {
                for j in 0..cfg.l {
                    for x in 0..s {
                        ctx[x] += gam[i * cfg.l + j] * hr[i][j][x];
                    }
                }
            }
            if !c.merge {
                let bn = softmax_where(&beta, &nonempty);
                for i in 0..n {
                    for x in 0..s {
                        ctx[x] += bn[i] * hs[i][x];
                    }
                }
            }
            gamma.push((0..n).map(|i| gam[i * cfg.l..(i + 1) * cfg.l].to_vec()).collect());
            let hctx: Vec<f64> = h.iter().chain(&ctx).copied().collect();
            let h_hat: Vec<f64> = mv(&w4, &hctx).iter().map(|v| v.tanh()).collect();
            g.push(h_hat.clone());
            x = h_hat;
        }
    }

    let mut a = Vec::new();
    let mut chosen = Vec::new();
    let mut local = Vec::new();
    let mut fragment_weights = Vec::new();
    if c.isi {
        let prefix = if cfg.share_encoder && c.ced { "ced.article_encoder" } else { "isi.sentence_encoder" };
        let hrs: Mat = (0..n)
            .map(|i| {
                let (ids, mask) = inst.article(i);
                let states = bilstm(model, prefix, ids, mask);
                last_unmasked(mask).map_or(vec![0.0; s], |j| states[j].clone())
            })
            .collect();
        a = diff_matrix(&hrs, &p.mat("isi.w_m"), &p.vec("isi.b_m"), &p.mat("isi.w_n"), &p.vec("isi.b_n"));
        chosen = brute_force_select(&scores(&a), cfg.k);
        let slots: Vec<Vec<usize>> = if c.selection {
            chosen.iter().map(|&i| vec![i]).collect()
        } else if n <= cfg.k {
            (0..n).map(|i| vec![i]).collect()
        } else {
            (0..cfg.k).map(|sl| (0..n).filter(|&i| i * cfg.k / n == sl).collect()).collect()
        };
        let last = last_unmasked(&inst.claim_mask).unwrap();
        for slot in &slots {
            let mut acc = vec![0.0; 2 * s];
            for &i in slot {
                let frag: Vec<f64> = if c.interaction {
                    let (r_in, c_in, w) = co_attention(&hrs[i], &hc, &inst.claim_mask);
                    fragment_weights.push((i, w));
                    r_in.into_iter().chain(c_in).collect()
                } else {
                    hrs[i].iter().chain(&hc[last]).copied().collect()
                };
                for x in 0..2 * s {
                    acc[x] += frag[x];
                }
            }
            local.extend(acc.iter().map(|v| v / slot.len() as f64));
        }
        local.resize(cfg.k * 2 * s, 0.0);
    }

    let g_flat: Vec<f64> = g.iter().flatten().copied().collect();
    let evidence: Vec<f64> = g_flat.iter().chain(&local).copied().collect();
    let logits: Vec<f64> = mv(&p.mat("classifier.w_p"), &evidence)
        .iter()
        .zip(p.vec("classifier.b_p"))
        .map(|(a, b)| a + b)
        .collect();
    let probs = softmax(&logits);
    let ce = -(probs[inst.label] + 1e-12).ln();
    let kl = if c.ced && c.isi {
        Some(if p.has("proj.g") {
            kl(&mv(&p.mat("proj.g"), &g_flat), &mv(&p.mat("proj.i"), &local))
        } else {
            kl(&g_flat, &local)
        })
    } else {
        None
    };
    let loss = ce + cfg.alpha * kl.unwrap_or(0.0);
    Reference {
        gamma,
        g,
        a,
        chosen,
        local,
        probs,
        ce,
        kl,
        loss,
        match_alpha,
        fragment_weights,
    }
}

// ---- fixtures ----

pub fn vocab(n_words: usize) -> Vocab {
    let mut t: Vec<String> = ["<pad>", "<unk>", "<bos>"].map(String::from).to_vec();
    t.extend((0..n_words).map(|i| format!("t{i}")));
    Vocab::from_tokens(t, 1).unwrap()
}

/// Micro configuration: d=8, d_h=4, p=4, l=6, k=2, o=4, two classes.
pub fn micro_config() -> ModelConfig {
    let mut c = ModelConfig::synthetic();
    c.d = 8;
    c.d_h = 4;
    c.p = 4;
    c.l = 6;
    c.k = 2;
    c.o = 4;
    c
}

/// A model with every parameter (biases included) drawn from
/// uniform(−scale, scale), so attention maps are far from uniform.
pub fn random_model(cfg: ModelConfig, n_words: usize, seed: u64, scale: f64) -> Model {
    let mut m = Model::new(cfg, vocab(n_words)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = m.params.ids().collect();
    for id in ids {
        for v in m.params.get_mut(id).values_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
    m
}

/// Random ragged instance with `n` articles; article lengths in `0..=l`
/// when `allow_empty`, else `1..=l`.
pub fn random_instance(rng: &mut impl Rng, cfg: &ModelConfig, vocab_len: usize, n: usize, allow_empty: bool) -> EncodedInstance {
    let pad = |rng: &mut dyn rand::RngCore, len: usize, real: usize| -> (Vec<u32>, Vec<bool>) {
        let ids = (0..len).map(|j| if j < real { rng.gen_range(1..vocab_len as u32) } else { 0 }).collect();
        let mask = (0..len).map(|j| j < real).collect();
        (ids, mask)
    };
    let claim_len = rng.gen_range(1..=cfg.p);
    let (claim_ids, claim_mask) = pad(rng, cfg.p, claim_len);
    let mut article_ids = Vec::new();
    let mut article_mask = Vec::new();
    for i in 0..n {
        // keep at least one nonempty article
        let lo = if allow_empty && i > 0 { 0 } else { 1 };
        let len = rng.gen_range(lo..=cfg.l);
        let (ids, mask) = pad(rng, cfg.l, len);
        article_ids.extend(ids);
        article_mask.extend(mask);
    }
    EncodedInstance {
        claim_ids,
        claim_mask,
        article_ids,
        article_mask,
        n_articles: n,
        l: cfg.l,
        p: cfg.p,
        label: rng.gen_range(0..cfg.n_classes()),
    }
}
