use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::embedder::{SoftToken, StudentEmbedder};
use super::tokenizer::Tokenizer;
use super::transformer::{backward, cross_entropy, forward, logits, Activations, Decoder, Layout};
use super::ModelError;

/// Transformer weights, student embedder and tokenizer.
#[derive(Clone, Debug)]
pub struct LanguageModel {
    pub(crate) config: ModelConfig,
    pub(crate) tokenizer: Tokenizer,
    pub(crate) layout: Layout,
    pub(crate) weights: Vec<f64>,
    pub(crate) embedder: StudentEmbedder,
}

/// Gradient buffers shaped like the trainable parameters.
#[derive(Clone, Debug)]
pub(crate) struct Grads {
    pub weights: Vec<f64>,
    pub mlp: Vec<f64>,
    pub table: Vec<f64>,
}

impl Grads {
    pub fn zeros(model: &LanguageModel) -> Self {
        Self {
            weights: vec![0.0; model.weights.len()],
            mlp: vec![0.0; model.embedder.mlp.len()],
            table: vec![0.0; model.embedder.table.len()],
        }
    }

    pub fn clear(&mut self) {
        self.weights.fill(0.0);
        self.mlp.fill(0.0);
        self.table.fill(0.0);
    }
}

impl LanguageModel {
    pub fn new(config: ModelConfig, tokenizer: Tokenizer, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if tokenizer.vocab_size() > config.vocab_size {
            return Err(ModelError::InvalidConfig(format!(
                "tokenizer has {} entries, config allows {}",
                tokenizer.vocab_size(),
                config.vocab_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = Layout::new(&config, tokenizer.vocab_size());
        let weights = layout.init(&mut rng);
        let embedder = StudentEmbedder::new(config.width, config.embedder_hidden, &mut rng);
        Ok(Self { config, tokenizer, layout, weights, embedder })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn embedder(&self) -> &StudentEmbedder {
        &self.embedder
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Flat transformer weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.embedder.mlp.len() + self.embedder.table.len()
    }

    /// Soft token followed by token embeddings, `(tokens + 1) × width`.
    fn inputs(&self, soft: &[f64], tokens: &[u32]) -> Vec<f64> {
        let d = self.config.width;
        let mut x = Vec::with_capacity((tokens.len() + 1) * d);
        x.extend_from_slice(soft);
        let wte = &self.weights[self.layout.wte..];
        for &t in tokens {
            x.extend_from_slice(&wte[t as usize * d..(t as usize + 1) * d]);
        }
        x
    }

    pub(crate) fn run(&self, row: usize, tokens: &[u32]) -> (SoftToken, Activations) {
        let soft = self.embedder.forward(row);
        let acts = forward(&self.weights, &self.layout, &self.inputs(&soft.out, tokens));
        (soft, acts)
    }

    /// Summed next-token loss over `tokens`, where the soft-token position
    /// predicts the first token. Gradients of `scale * loss` are added to
    /// `grads`; transformer weight gradients only when `weight_grads` is set.
    pub(crate) fn loss_and_grad(
        &self,
        row: usize,
        tokens: &[u32],
        scale: f64,
        grads: Option<(&mut Grads, bool)>,
    ) -> f64 {
        let d = self.config.width;
        let t = tokens.len();
        let (soft, acts) = self.run(row, tokens);
        let mut lg = logits(&self.weights, &self.layout, &acts, t);
        let vocab = self.layout.vocab;
        let loss = cross_entropy(&mut lg, tokens, vocab, scale);
        let Some((grads, weight_grads)) = grads else {
            return loss;
        };
        let wte = self.layout.wte..self.layout.wte + vocab * d;
        let lnf = acts.final_norm();
        let mut dlnf = vec![0.0; (t + 1) * d];
        super::linalg::matmul(&lg, &self.weights[wte.clone()], &mut dlnf[..t * d], t, vocab, d, false);
        if weight_grads {
            super::linalg::matmul_tn(&lg, &lnf[..t * d], &mut grads.weights[wte], t, vocab, d, true);
        }
        let dx = backward(
            &self.weights,
            &self.layout,
            &acts,
            &dlnf,
            if weight_grads { Some(&mut grads.weights) } else { None },
        );
        if weight_grads {
            let base = self.layout.wte;
            for (p, &tok) in tokens.iter().enumerate() {
                let src = &dx[(p + 1) * d..(p + 2) * d];
                let dst = &mut grads.weights[base + tok as usize * d..base + (tok as usize + 1) * d];
                dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
            }
        }
        self.embedder.backward(&soft, &dx[..d], &mut grads.mlp, Some(&mut grads.table));
        loss
    }

    /// Mean next-token loss in nats.
    pub fn loss(&self, text: &str, student_id: Option<&str>) -> Result<f64, ModelError> {
        let tokens = self.tokenizer.encode(text);
        if tokens.is_empty() {
            return Err(ModelError::InvalidArgument("empty text".into()));
        }
        if tokens.len() > self.config.context {
            return Err(ModelError::PrefixTooLong { tokens: tokens.len(), context: self.config.context });
        }
        let row = self.embedder.row_of(student_id);
        Ok(self.loss_and_grad(row, &tokens, 1.0, None) / tokens.len() as f64)
    }

    /// Logits at every token position, `tokens × vocab`; row `p` scores the
    /// token following `tokens[..p]`.
    pub fn token_logits(&self, tokens: &[u32], student_id: Option<&str>) -> Vec<f64> {
        let (_, acts) = self.run(self.embedder.row_of(student_id), tokens);
        logits(&self.weights, &self.layout, &acts, tokens.len() + 1)
    }

    /// Mean of the last block's outputs over every position, soft token
    /// included; `None` when the text exceeds the context.
    pub fn embed_code(&self, text: &str, student_id: Option<&str>) -> Option<Vec<f64>> {
        self.layer_means(text, student_id).map(|mut layers| layers.pop().expect("at least one layer"))
    }

    /// Per-layer mean representations: the block inputs followed by the
    /// last block output.
    pub fn layer_means(&self, text: &str, student_id: Option<&str>) -> Option<Vec<Vec<f64>>> {
        let tokens = self.tokenizer.encode(text);
        if tokens.len() > self.config.context {
            return None;
        }
        let d = self.config.width;
        let (_, acts) = self.run(self.embedder.row_of(student_id), &tokens);
        let n = acts.positions() as f64;
        Some(
            acts.layer_outputs()
                .into_iter()
                .map(|x| {
                    let mut mean = vec![0.0; d];
                    for row in x.chunks_exact(d) {
                        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
                    }
                    mean.iter_mut().for_each(|m| *m /= n);
                    mean
                })
                .collect(),
        )
    }

    /// First-layer activation of the student perceptron; UNKNOWN for
    /// students without a row.
    pub fn student_embedding(&self, student_id: &str) -> Vec<f64> {
        self.embedder.hidden_activation(Some(student_id))
    }

    /// A decoder primed with the student's soft token.
    pub fn decoder(&self, student_id: Option<&str>) -> (Decoder<'_>, Vec<f64>) {
        let soft = self.embedder.forward(self.embedder.row_of(student_id));
        let mut dec = Decoder::new(&self.weights, &self.layout);
        let h = dec.push(&soft.out);
        (dec, h)
    }

    pub(crate) fn token_embedding(&self, token: u32) -> &[f64] {
        let d = self.config.width;
        let s = self.layout.wte + token as usize * d;
        &self.weights[s..s + d]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model(seed: u64) -> LanguageModel {
        let mut m = LanguageModel::new(ModelConfig::tiny(), Tokenizer::bytes_only(), seed).unwrap();
        // Perturb layer-norm gains and biases so their gradients are exercised.
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for r in m.layout.bias_ranges() {
            for v in &mut m.weights[r] {
                *v += 0.1 * rand::Rng::random_range(&mut rng, -1.0..1.0);
            }
        }
        for v in m.embedder.mlp.iter_mut().chain(m.embedder.table.iter_mut()) {
            *v += 0.1 * rand::Rng::random_range(&mut rng, -1.0..1.0);
        }
        let init = m.embedder.row(0).to_vec();
        m.embedder.add_student("s1", &init.iter().map(|v| v + 0.05).collect::<Vec<_>>());
        m
    }

    #[test]
    fn soft_token_adds_one_position() {
        let m = tiny_model(1);
        let tokens = m.tokenizer.encode("fd 10\nrt 90");
        let (_, acts) = m.run(0, &tokens);
        assert_eq!(acts.positions(), tokens.len() + 1);
        let loss = m.loss_and_grad(0, &tokens, 1.0, None);
        let per_token: f64 = (0..tokens.len())
            .map(|p| {
                let mut row = logits(&m.weights, &m.layout, &acts, tokens.len())[p * m.layout.vocab..(p + 1) * m.layout.vocab].to_vec();
                super::super::linalg::softmax_in_place(&mut row);
                -row[tokens[p] as usize].ln()
            })
            .sum();
        assert!((loss - per_token).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = tiny_model(3);
        let tokens = m.tokenizer.encode("pen red\nfd 10");
        let row = 1;
        let mut grads = Grads::zeros(&m);
        m.loss_and_grad(row, &tokens, 1.0, Some((&mut grads, true)));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-5;
        let check = |analytic: f64, perturb: &dyn Fn(&mut LanguageModel, f64)| {
            let mut p = m.clone();
            perturb(&mut p, h);
            let mut q = m.clone();
            perturb(&mut q, -h);
            let fd = (p.loss_and_grad(row, &tokens, 1.0, None) - q.loss_and_grad(row, &tokens, 1.0, None)) / (2.0 * h);
            let denom = fd.abs().max(analytic.abs()).max(1e-4);
            let rel = (fd - analytic).abs() / denom;
            assert!(rel <= 1e-4, "analytic {analytic} vs numeric {fd} (rel {rel})");
        };
        let mut picks: Vec<usize> = m
            .layout
            .tensors()
            .iter()
            .flat_map(|(_, off, shape)| {
                let n: usize = shape.iter().product();
                [*off, off + n / 2, off + n - 1]
            })
            .collect();
        // Embedding rows actually used by the sequence.
        picks.extend(tokens.iter().map(|&t| m.layout.wte + t as usize * m.config.width + 3));
        for _ in 0..40 {
            picks.push(rand::Rng::random_range(&mut rng, 0..m.weights.len()));
        }
        for i in picks {
            if grads.weights[i].abs() < 1e-9 {
                continue;
            }
            check(grads.weights[i], &|mm, e| mm.weights[i] += e);
        }
        for i in 0..m.embedder.mlp.len() {
            check(grads.mlp[i], &|mm, e| mm.embedder.mlp[i] += e);
        }
        for i in row * m.config.width..(row + 1) * m.config.width {
            check(grads.table[i], &|mm, e| mm.embedder.table[i] += e);
        }
    }

    #[test]
    fn later_tokens_do_not_change_earlier_logits() {
        let m = tiny_model(4);
        let a = m.tokenizer.encode("fd 10\nrt 90\npen red");
        let mut b = a.clone();
        let cut = 6;
        for t in &mut b[cut..] {
            *t = 5 + ((*t + 17) % 256);
        }
        let la = m.token_logits(&a, None);
        let lb = m.token_logits(&b, None);
        let v = m.layout.vocab;
        assert_eq!(la[..(cut + 1) * v], lb[..(cut + 1) * v]);
        assert_ne!(la[(cut + 1) * v..], lb[(cut + 1) * v..]);
    }

    #[test]
    fn decoder_matches_full_forward() {
        let m = tiny_model(5);
        let tokens = m.tokenizer.encode("dot blue, 20\nfd 5");
        let full = m.token_logits(&tokens, Some("s1"));
        let (mut dec, mut h) = m.decoder(Some("s1"));
        let v = m.layout.vocab;
        for (p, &t) in tokens.iter().enumerate() {
            let step = dec.logits(&h);
            for (a, b) in step.iter().zip(&full[p * v..(p + 1) * v]) {
                assert!((a - b).abs() < 1e-10);
            }
            h = dec.push(m.token_embedding(t));
        }
        assert_eq!(dec.len(), tokens.len() + 1);
    }

    #[test]
    fn embeddings_have_model_width() {
        let m = tiny_model(6);
        let e = m.embed_code("fd 1", Some("s1")).unwrap();
        assert_eq!(e.len(), 16);
        assert!(e.iter().all(|v| v.is_finite()));
        assert_eq!(Some(e), m.embed_code("fd 1", Some("s1")));
        assert!(m.embed_code(&"x".repeat(200), None).is_none());
        assert_eq!(m.student_embedding("nobody").len(), 8);
        assert_eq!(m.student_embedding("nobody"), m.embedder.hidden_activation(None));
    }
}
