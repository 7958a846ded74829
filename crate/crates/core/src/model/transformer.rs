use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::linalg::{
    add_bias, add_column_sums, gelu, gelu_grad, gemm, layer_norm, layer_norm_backward, matmul, matmul_nt, matmul_tn,
    softmax_in_place, View,
};

/// Offsets of one block's tensors inside the flat weight vector.
#[derive(Clone, Debug)]
pub(crate) struct BlockLayout {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w_qkv: usize,
    pub b_qkv: usize,
    pub w_o: usize,
    pub b_o: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w_fc: usize,
    pub b_fc: usize,
    pub w_proj: usize,
    pub b_proj: usize,
}

/// Named tensors of the transformer in a single flat buffer.
#[derive(Clone, Debug)]
pub struct Layout {
    pub(crate) width: usize,
    pub(crate) vocab: usize,
    pub(crate) positions: usize,
    pub(crate) heads: usize,
    pub(crate) wte: usize,
    pub(crate) wpe: usize,
    pub(crate) blocks: Vec<BlockLayout>,
    pub(crate) lnf_g: usize,
    pub(crate) lnf_b: usize,
    pub(crate) total: usize,
}

impl Layout {
    pub fn new(config: &ModelConfig, vocab: usize) -> Self {
        let d = config.width;
        let mut at = 0;
        let mut take = |n: usize| {
            let start = at;
            at += n;
            start
        };
        let wte = take(vocab * d);
        let wpe = take((config.context + 1) * d);
        let blocks = (0..config.layers)
            .map(|_| BlockLayout {
                ln1_g: take(d),
                ln1_b: take(d),
                w_qkv: take(d * 3 * d),
                b_qkv: take(3 * d),
                w_o: take(d * d),
                b_o: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w_fc: take(d * 4 * d),
                b_fc: take(4 * d),
                w_proj: take(4 * d * d),
                b_proj: take(d),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        Self {
            width: d,
            vocab,
            positions: config.context + 1,
            heads: config.heads,
            wte,
            wpe,
            blocks,
            lnf_g,
            lnf_b,
            total: at,
        }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// `(name, offset, shape)` for every tensor, in storage order.
    pub fn tensors(&self) -> Vec<(String, usize, Vec<usize>)> {
        let d = self.width;
        let mut out = vec![
            ("wte".to_string(), self.wte, vec![self.vocab, d]),
            ("wpe".to_string(), self.wpe, vec![self.positions, d]),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, offset, shape) in [
                ("ln1.g", b.ln1_g, vec![d]),
                ("ln1.b", b.ln1_b, vec![d]),
                ("attn.w_qkv", b.w_qkv, vec![d, 3 * d]),
                ("attn.b_qkv", b.b_qkv, vec![3 * d]),
                ("attn.w_o", b.w_o, vec![d, d]),
                ("attn.b_o", b.b_o, vec![d]),
                ("ln2.g", b.ln2_g, vec![d]),
                ("ln2.b", b.ln2_b, vec![d]),
                ("mlp.w_fc", b.w_fc, vec![d, 4 * d]),
                ("mlp.b_fc", b.b_fc, vec![4 * d]),
                ("mlp.w_proj", b.w_proj, vec![4 * d, d]),
                ("mlp.b_proj", b.b_proj, vec![d]),
            ] {
                out.push((format!("block{i}.{name}"), offset, shape));
            }
        }
        out.push(("lnf.g".to_string(), self.lnf_g, vec![d]));
        out.push(("lnf.b".to_string(), self.lnf_b, vec![d]));
        out
    }

    /// Normal(0, 0.02) weights, residual projections scaled down by depth,
    /// unit layer-norm gains and zero biases.
    pub fn init<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.width;
        let mut w = vec![0.0; self.total];
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let residual = Normal::new(0.0, 0.02 / (2.0 * self.blocks.len() as f64).sqrt()).expect("valid std");
        let mut fill = |w: &mut [f64], dist: &Normal<f64>| w.iter_mut().for_each(|v| *v = dist.sample(rng));
        fill(&mut w[self.wte..self.wte + self.vocab * d], &normal);
        fill(&mut w[self.wpe..self.wpe + self.positions * d], &normal);
        for b in &self.blocks {
            w[b.ln1_g..b.ln1_g + d].fill(1.0);
            w[b.ln2_g..b.ln2_g + d].fill(1.0);
            fill(&mut w[b.w_qkv..b.w_qkv + 3 * d * d], &normal);
            fill(&mut w[b.w_o..b.w_o + d * d], &residual);
            fill(&mut w[b.w_fc..b.w_fc + 4 * d * d], &normal);
            fill(&mut w[b.w_proj..b.w_proj + 4 * d * d], &residual);
        }
        w[self.lnf_g..self.lnf_g + d].fill(1.0);
        w
    }

    /// Offsets of every bias and layer-norm vector.
    pub fn bias_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let d = self.width;
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend([
                b.ln1_g..b.ln1_g + 2 * d,
                b.b_qkv..b.b_qkv + 3 * d,
                b.b_o..b.b_o + 3 * d,
                b.b_fc..b.b_fc + 4 * d,
                b.b_proj..b.b_proj + d,
            ]);
        }
        out.push(self.lnf_g..self.lnf_g + 2 * d);
        out
    }
}

struct BlockCache {
    x_in: Vec<f64>,
    ln1: Vec<f64>,
    ln1_mean: Vec<f64>,
    ln1_rstd: Vec<f64>,
    qkv: Vec<f64>,
    probs: Vec<f64>,
    attn: Vec<f64>,
    x_mid: Vec<f64>,
    ln2: Vec<f64>,
    ln2_mean: Vec<f64>,
    ln2_rstd: Vec<f64>,
    fc_pre: Vec<f64>,
    fc_act: Vec<f64>,
}

/// Everything the backward pass needs from one forward pass.
pub struct Activations {
    n: usize,
    blocks: Vec<BlockCache>,
    /// Residual stream after the last block, `n × width`.
    pub(crate) x_final: Vec<f64>,
    lnf: Vec<f64>,
    lnf_mean: Vec<f64>,
    lnf_rstd: Vec<f64>,
}

impl Activations {
    pub fn positions(&self) -> usize {
        self.n
    }

    pub(crate) fn final_norm(&self) -> &[f64] {
        &self.lnf
    }

    /// Residual stream entering each block, then the final one.
    pub fn layer_outputs(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.blocks.iter().map(|b| b.x_in.as_slice()).collect();
        out.push(&self.x_final);
        out
    }
}

fn attention_forward(layout: &Layout, qkv: &[f64], n: usize, probs: &mut [f64], attn: &mut [f64]) {
    let d = layout.width;
    let h = layout.heads;
    let dh = d / h;
    let scale = 1.0 / (dh as f64).sqrt();
    for head in 0..h {
        let p = &mut probs[head * n * n..(head + 1) * n * n];
        let q = View::at(head * dh, n, dh, 3 * d);
        let k = View::at(d + head * dh, n, dh, 3 * d);
        gemm(scale, qkv, q, qkv, k.t(), 0.0, p, View::dense(n, n));
        for i in 0..n {
            let row = &mut p[i * n..(i + 1) * n];
            softmax_in_place(&mut row[..=i]);
            row[i + 1..].fill(0.0);
        }
        let v = View::at(2 * d + head * dh, n, dh, 3 * d);
        gemm(1.0, p, View::dense(n, n), qkv, v, 0.0, attn, View::at(head * dh, n, dh, d));
    }
}

/// Forward pass over `inputs`, an `n × width` block of input embeddings
/// before positional embeddings are added.
pub(crate) fn forward(w: &[f64], layout: &Layout, inputs: &[f64]) -> Activations {
    let d = layout.width;
    let n = inputs.len() / d;
    assert!(n <= layout.positions, "sequence longer than the positional table");
    let mut x = inputs.to_vec();
    for (p, row) in x.chunks_exact_mut(d).enumerate() {
        let pos = &w[layout.wpe + p * d..layout.wpe + (p + 1) * d];
        row.iter_mut().zip(pos).for_each(|(v, e)| *v += e);
    }
    let mut blocks = Vec::with_capacity(layout.blocks.len());
    for b in &layout.blocks {
        let mut c = BlockCache {
            x_in: x.clone(),
            ln1: vec![0.0; n * d],
            ln1_mean: vec![0.0; n],
            ln1_rstd: vec![0.0; n],
            qkv: vec![0.0; n * 3 * d],
            probs: vec![0.0; layout.heads * n * n],
            attn: vec![0.0; n * d],
            x_mid: Vec::new(),
            ln2: vec![0.0; n * d],
            ln2_mean: vec![0.0; n],
            ln2_rstd: vec![0.0; n],
            fc_pre: vec![0.0; n * 4 * d],
            fc_act: vec![0.0; n * 4 * d],
        };
        layer_norm(&x, &w[b.ln1_g..b.ln1_g + d], &w[b.ln1_b..b.ln1_b + d], &mut c.ln1, &mut c.ln1_mean, &mut c.ln1_rstd);
        matmul(&c.ln1, &w[b.w_qkv..b.w_qkv + 3 * d * d], &mut c.qkv, n, d, 3 * d, false);
        add_bias(&mut c.qkv, &w[b.b_qkv..b.b_qkv + 3 * d]);
        attention_forward(layout, &c.qkv, n, &mut c.probs, &mut c.attn);
        matmul(&c.attn, &w[b.w_o..b.w_o + d * d], &mut x, n, d, d, true);
        add_bias(&mut x, &w[b.b_o..b.b_o + d]);
        c.x_mid = x.clone();
        layer_norm(&x, &w[b.ln2_g..b.ln2_g + d], &w[b.ln2_b..b.ln2_b + d], &mut c.ln2, &mut c.ln2_mean, &mut c.ln2_rstd);
        matmul(&c.ln2, &w[b.w_fc..b.w_fc + 4 * d * d], &mut c.fc_pre, n, d, 4 * d, false);
        add_bias(&mut c.fc_pre, &w[b.b_fc..b.b_fc + 4 * d]);
        for (a, z) in c.fc_act.iter_mut().zip(&c.fc_pre) {
            *a = gelu(*z);
        }
        matmul(&c.fc_act, &w[b.w_proj..b.w_proj + 4 * d * d], &mut x, n, 4 * d, d, true);
        add_bias(&mut x, &w[b.b_proj..b.b_proj + d]);
        blocks.push(c);
    }
    let mut lnf = vec![0.0; n * d];
    let mut lnf_mean = vec![0.0; n];
    let mut lnf_rstd = vec![0.0; n];
    layer_norm(&x, &w[layout.lnf_g..layout.lnf_g + d], &w[layout.lnf_b..layout.lnf_b + d], &mut lnf, &mut lnf_mean, &mut lnf_rstd);
    Activations { n, blocks, x_final: x, lnf, lnf_mean, lnf_rstd }
}

/// Logits for the first `rows` positions, `rows × vocab`.
pub(crate) fn logits(w: &[f64], layout: &Layout, acts: &Activations, rows: usize) -> Vec<f64> {
    let d = layout.width;
    let mut out = vec![0.0; rows * layout.vocab];
    matmul_nt(&acts.lnf[..rows * d], &w[layout.wte..layout.wte + layout.vocab * d], &mut out, rows, d, layout.vocab, false);
    out
}

/// Cross-entropy of `targets[p]` at position `p`; returns the summed loss
/// and `dlogits` already multiplied by `scale`.
pub(crate) fn cross_entropy(logits: &mut [f64], targets: &[u32], vocab: usize, scale: f64) -> f64 {
    let mut loss = 0.0;
    for (row, &t) in logits.chunks_exact_mut(vocab).zip(targets) {
        softmax_in_place(row);
        loss -= row[t as usize].max(f64::MIN_POSITIVE).ln();
        row[t as usize] -= 1.0;
        row.iter_mut().for_each(|v| *v *= scale);
    }
    loss
}

fn attention_backward(layout: &Layout, c: &BlockCache, n: usize, dattn: &[f64], dqkv: &mut [f64]) {
    let d = layout.width;
    let h = layout.heads;
    let dh = d / h;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dp = vec![0.0; n * n];
    for head in 0..h {
        let p = &c.probs[head * n * n..(head + 1) * n * n];
        let q = View::at(head * dh, n, dh, 3 * d);
        let k = View::at(d + head * dh, n, dh, 3 * d);
        let v = View::at(2 * d + head * dh, n, dh, 3 * d);
        let dout = View::at(head * dh, n, dh, d);
        gemm(1.0, dattn, dout, &c.qkv, v.t(), 0.0, &mut dp, View::dense(n, n));
        gemm(1.0, p, View::dense(n, n).t(), dattn, dout, 0.0, dqkv, v);
        for i in 0..n {
            let prow = &p[i * n..i * n + i + 1];
            let drow = &mut dp[i * n..(i + 1) * n];
            let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
            for j in 0..=i {
                drow[j] = prow[j] * (drow[j] - dot);
            }
            drow[i + 1..].fill(0.0);
        }
        gemm(scale, &dp, View::dense(n, n), &c.qkv, k, 0.0, dqkv, q);
        gemm(scale, &dp, View::dense(n, n).t(), &c.qkv, q, 0.0, dqkv, k);
    }
}

/// Backpropagates `dlnf` (gradient at the final layer-norm output,
/// `n × width`) and returns the gradient at the inputs. Weight gradients
/// are accumulated into `grad` when given.
pub(crate) fn backward(w: &[f64], layout: &Layout, acts: &Activations, dlnf: &[f64], mut grad: Option<&mut [f64]>) -> Vec<f64> {
    let d = layout.width;
    let n = acts.n;
    let mut dx = vec![0.0; n * d];
    {
        let (dg, db) = match grad.as_deref_mut() {
            Some(g) => {
                let (a, b) = g[layout.lnf_g..layout.lnf_g + 2 * d].split_at_mut(d);
                (Some(a), Some(b))
            }
            None => (None, None),
        };
        layer_norm_backward(dlnf, &acts.x_final, &w[layout.lnf_g..layout.lnf_g + d], &acts.lnf_mean, &acts.lnf_rstd, &mut dx, dg, db);
    }
    let mut dfc = vec![0.0; n * 4 * d];
    let mut dln = vec![0.0; n * d];
    let mut dattn = vec![0.0; n * d];
    let mut dqkv = vec![0.0; n * 3 * d];
    for (b, c) in layout.blocks.iter().zip(&acts.blocks).rev() {
        // MLP branch.
        if let Some(g) = grad.as_deref_mut() {
            matmul_tn(&c.fc_act, &dx, &mut g[b.w_proj..b.w_proj + 4 * d * d], n, 4 * d, d, true);
            add_column_sums(&mut g[b.b_proj..b.b_proj + d], &dx);
        }
        matmul_nt(&dx, &w[b.w_proj..b.w_proj + 4 * d * d], &mut dfc, n, d, 4 * d, false);
        for (g, z) in dfc.iter_mut().zip(&c.fc_pre) {
            *g *= gelu_grad(*z);
        }
        if let Some(g) = grad.as_deref_mut() {
            matmul_tn(&c.ln2, &dfc, &mut g[b.w_fc..b.w_fc + 4 * d * d], n, d, 4 * d, true);
            add_column_sums(&mut g[b.b_fc..b.b_fc + 4 * d], &dfc);
        }
        matmul_nt(&dfc, &w[b.w_fc..b.w_fc + 4 * d * d], &mut dln, n, 4 * d, d, false);
        {
            let (dg, db) = match grad.as_deref_mut() {
                Some(g) => (Some(&mut g[b.ln2_g..b.ln2_g + d]), None),
                None => (None, None),
            };
            layer_norm_backward(&dln, &c.x_mid, &w[b.ln2_g..b.ln2_g + d], &c.ln2_mean, &c.ln2_rstd, &mut dx, dg, db);
            if let Some(g) = grad.as_deref_mut() {
                add_column_sums(&mut g[b.ln2_b..b.ln2_b + d], &dln);
            }
        }
        // Attention branch.
        if let Some(g) = grad.as_deref_mut() {
            matmul_tn(&c.attn, &dx, &mut g[b.w_o..b.w_o + d * d], n, d, d, true);
            add_column_sums(&mut g[b.b_o..b.b_o + d], &dx);
        }
        matmul_nt(&dx, &w[b.w_o..b.w_o + d * d], &mut dattn, n, d, d, false);
        attention_backward(layout, c, n, &dattn, &mut dqkv);
        if let Some(g) = grad.as_deref_mut() {
            matmul_tn(&c.ln1, &dqkv, &mut g[b.w_qkv..b.w_qkv + 3 * d * d], n, d, 3 * d, true);
            add_column_sums(&mut g[b.b_qkv..b.b_qkv + 3 * d], &dqkv);
        }
        matmul_nt(&dqkv, &w[b.w_qkv..b.w_qkv + 3 * d * d], &mut dln, n, 3 * d, d, false);
        let dg = grad.as_deref_mut().map(|g| &mut g[b.ln1_g..b.ln1_g + d]);
        layer_norm_backward(&dln, &c.x_in, &w[b.ln1_g..b.ln1_g + d], &c.ln1_mean, &c.ln1_rstd, &mut dx, dg, None);
        if let Some(g) = grad.as_deref_mut() {
            add_column_sums(&mut g[b.ln1_b..b.ln1_b + d], &dln);
        }
    }
    if let Some(g) = grad {
        for (p, row) in dx.chunks_exact(d).enumerate() {
            let dst = &mut g[layout.wpe + p * d..layout.wpe + (p + 1) * d];
            dst.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
    }
    dx
}

/// Incremental decoding with cached keys and values.
pub struct Decoder<'w> {
    w: &'w [f64],
    layout: &'w Layout,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

impl<'w> Decoder<'w> {
    pub fn new(w: &'w [f64], layout: &'w Layout) -> Self {
        let cap = layout.positions * layout.width;
        Self {
            w,
            layout,
            keys: vec![Vec::with_capacity(cap); layout.blocks.len()],
            values: vec![Vec::with_capacity(cap); layout.blocks.len()],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.layout.positions
    }

    /// Appends one input embedding and returns the final layer-norm output
    /// at its position.
    pub fn push(&mut self, input: &[f64]) -> Vec<f64> {
        let (w, layout) = (self.w, self.layout);
        let d = layout.width;
        let h = layout.heads;
        let dh = d / h;
        let p = self.len;
        assert!(p < layout.positions, "decoder context is full");
        let mut x: Vec<f64> = input.iter().zip(&w[layout.wpe + p * d..layout.wpe + (p + 1) * d]).map(|(a, b)| a + b).collect();
        let (mut ln, mut mean, mut rstd) = (vec![0.0; d], [0.0], [0.0]);
        let mut qkv = vec![0.0; 3 * d];
        let mut attn = vec![0.0; d];
        let mut scores = vec![0.0; p + 1];
        let mut fc = vec![0.0; 4 * d];
        let scale = 1.0 / (dh as f64).sqrt();
        for (l, b) in layout.blocks.iter().enumerate() {
            layer_norm(&x, &w[b.ln1_g..b.ln1_g + d], &w[b.ln1_b..b.ln1_b + d], &mut ln, &mut mean, &mut rstd);
            matmul(&ln, &w[b.w_qkv..b.w_qkv + 3 * d * d], &mut qkv, 1, d, 3 * d, false);
            add_bias(&mut qkv, &w[b.b_qkv..b.b_qkv + 3 * d]);
            self.keys[l].extend_from_slice(&qkv[d..2 * d]);
            self.values[l].extend_from_slice(&qkv[2 * d..]);
            let (keys, values) = (&self.keys[l], &self.values[l]);
            for head in 0..h {
                let q = &qkv[head * dh..(head + 1) * dh];
                for (j, s) in scores.iter_mut().enumerate() {
                    let k = &keys[j * d + head * dh..j * d + (head + 1) * dh];
                    *s = scale * q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>();
                }
                softmax_in_place(&mut scores);
                let out = &mut attn[head * dh..(head + 1) * dh];
                out.fill(0.0);
                for (j, s) in scores.iter().enumerate() {
                    let v = &values[j * d + head * dh..j * d + (head + 1) * dh];
                    out.iter_mut().zip(v).for_each(|(o, v)| *o += s * v);
                }
            }
            matmul(&attn, &w[b.w_o..b.w_o + d * d], &mut x, 1, d, d, true);
            add_bias(&mut x, &w[b.b_o..b.b_o + d]);
            layer_norm(&x, &w[b.ln2_g..b.ln2_g + d], &w[b.ln2_b..b.ln2_b + d], &mut ln, &mut mean, &mut rstd);
            matmul(&ln, &w[b.w_fc..b.w_fc + 4 * d * d], &mut fc, 1, d, 4 * d, false);
            add_bias(&mut fc, &w[b.b_fc..b.b_fc + 4 * d]);
            fc.iter_mut().for_each(|v| *v = gelu(*v));
            matmul(&fc, &w[b.w_proj..b.w_proj + 4 * d * d], &mut x, 1, 4 * d, d, true);
            add_bias(&mut x, &w[b.b_proj..b.b_proj + d]);
        }
        layer_norm(&x, &w[layout.lnf_g..layout.lnf_g + d], &w[layout.lnf_b..layout.lnf_b + d], &mut ln, &mut mean, &mut rstd);
        self.len += 1;
        ln
    }

    /// Vocabulary logits for a final layer-norm output.
    pub fn logits(&self, hidden: &[f64]) -> Vec<f64> {
        let d = self.layout.width;
        let mut out = vec![0.0; self.layout.vocab];
        matmul_nt(hidden, &self.w[self.layout.wte..self.layout.wte + self.layout.vocab * d], &mut out, 1, d, self.layout.vocab, false);
        out
    }
}
