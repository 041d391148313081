//! Models trained by simulated clients.

use rand_distr::{Distribution, Normal};

use crate::vector::{ParamVector, SeedPath};

/// A differentiable model over flat parameters.
pub trait Model: Send + Sync {
    type Example: Clone + Send + Sync;

    fn dim(&self) -> usize;

    fn init_params(&self, seed: &SeedPath) -> ParamVector;

    /// One gradient step `θ ← θ − lr·∇ℓ(θ; batch)` on the mean batch loss.
    /// Returns the mean loss at the pre-step parameters.
    fn sgd_step(&self, params: &mut [f64], batch: &[Self::Example], lr: f64) -> f64;

    fn loss(&self, params: &[f64], example: &Self::Example) -> f64;

    /// Whether the top-1 prediction matches the label.
    fn is_correct(&self, params: &[f64], example: &Self::Example) -> bool;
}

/// Fraction of `examples` predicted correctly; 0 for an empty set.
pub fn accuracy<M: Model>(model: &M, params: &ParamVector, examples: &[M::Example]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let hits = examples
        .iter()
        .filter(|e| model.is_correct(params.as_slice(), e))
        .count();
    hits as f64 / examples.len() as f64
}

/// Mean loss over `examples`; 0 for an empty set.
pub fn mean_loss<M: Model>(model: &M, params: &ParamVector, examples: &[M::Example]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    examples
        .iter()
        .map(|e| model.loss(params.as_slice(), e))
        .sum::<f64>()
        / examples.len() as f64
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    for l in logits.iter_mut() {
        *l /= total;
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// A next-token example: preceding tokens (most recent last) and the target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenExample {
    pub context: Vec<u32>,
    pub target: u32,
}

/// Softmax regression from a bag of context tokens to the next token.
///
/// Parameters: an input-major `vocab × vocab` weight table followed by
/// `vocab` output biases. The context representation is the mean of the
/// one-hot vectors of its tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct BagOfWordsNextToken {
    pub vocab: usize,
}

impl BagOfWordsNextToken {
    pub fn new(vocab: usize) -> Self {
        BagOfWordsNextToken { vocab }
    }

    fn logits(&self, params: &[f64], context: &[u32], out: &mut [f64]) {
        let v = self.vocab;
        out.copy_from_slice(&params[v * v..v * v + v]);
        if context.is_empty() {
            return;
        }
        let w = 1.0 / context.len() as f64;
        for &tok in context {
            let row = &params[tok as usize * v..(tok as usize + 1) * v];
            for (o, r) in out.iter_mut().zip(row) {
                *o += w * r;
            }
        }
    }
}

impl Model for BagOfWordsNextToken {
    type Example = TokenExample;

    fn dim(&self) -> usize {
        self.vocab * self.vocab + self.vocab
    }

    fn init_params(&self, _seed: &SeedPath) -> ParamVector {
        ParamVector::zeros(self.dim())
    }

    fn sgd_step(&self, params: &mut [f64], batch: &[TokenExample], lr: f64) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        let v = self.vocab;
        // Residuals p − onehot(target) for every example, all at the pre-step point.
        let mut residuals = vec![0.0; batch.len() * v];
        let mut loss = 0.0;
        for (ex, res) in batch.iter().zip(residuals.chunks_mut(v)) {
            self.logits(params, &ex.context, res);
            softmax_in_place(res);
            loss -= res[ex.target as usize].max(1e-300).ln();
            res[ex.target as usize] -= 1.0;
        }
        let step = lr / batch.len() as f64;
        for (ex, res) in batch.iter().zip(residuals.chunks(v)) {
            if !ex.context.is_empty() {
                let w = step / ex.context.len() as f64;
                for &tok in &ex.context {
                    let row = &mut params[tok as usize * v..(tok as usize + 1) * v];
                    for (p, r) in row.iter_mut().zip(res) {
                        *p -= w * r;
                    }
                }
            }
            for (p, r) in params[v * v..].iter_mut().zip(res) {
                *p -= step * r;
            }
        }
        loss / batch.len() as f64
    }

    fn loss(&self, params: &[f64], example: &TokenExample) -> f64 {
        let mut out = vec![0.0; self.vocab];
        self.logits(params, &example.context, &mut out);
        softmax_in_place(&mut out);
        -out[example.target as usize].max(1e-300).ln()
    }

    fn is_correct(&self, params: &[f64], example: &TokenExample) -> bool {
        let mut out = vec![0.0; self.vocab];
        self.logits(params, &example.context, &mut out);
        argmax(&out) == example.target as usize
    }
}

/// A labelled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: u32,
}

/// Multinomial logistic regression; parameters are a class-major
/// `classes × features` weight table followed by `classes` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticRegression {
    pub features: usize,
    pub classes: usize,
}

impl LogisticRegression {
    pub fn new(features: usize, classes: usize) -> Self {
        LogisticRegression { features, classes }
    }

    fn logits(&self, params: &[f64], x: &[f64], out: &mut [f64]) {
        let f = self.features;
        for (c, o) in out.iter_mut().enumerate() {
            let w = &params[c * f..(c + 1) * f];
            *o = params[self.classes * f + c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

impl Model for LogisticRegression {
    type Example = LabeledExample;

    fn dim(&self) -> usize {
        self.classes * (self.features + 1)
    }

    fn init_params(&self, seed: &SeedPath) -> ParamVector {
        let normal = Normal::new(0.0, 0.01).expect("valid stddev");
        let mut rng = seed.rng();
        ParamVector::from_vec((0..self.dim()).map(|_| normal.sample(&mut rng)).collect())
    }

    fn sgd_step(&self, params: &mut [f64], batch: &[LabeledExample], lr: f64) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        let (f, k) = (self.features, self.classes);
        let mut grad = vec![0.0; self.dim()];
        let mut probs = vec![0.0; k];
        let mut loss = 0.0;
        for ex in batch {
            self.logits(params, &ex.features, &mut probs);
            softmax_in_place(&mut probs);
            loss -= probs[ex.label as usize].max(1e-300).ln();
            probs[ex.label as usize] -= 1.0;
            for (c, r) in probs.iter().enumerate() {
                for (g, x) in grad[c * f..(c + 1) * f].iter_mut().zip(&ex.features) {
                    *g += r * x;
                }
                grad[k * f + c] += r;
            }
        }
        let step = lr / batch.len() as f64;
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= step * g;
        }
        loss / batch.len() as f64
    }

    fn loss(&self, params: &[f64], example: &LabeledExample) -> f64 {
        let mut out = vec![0.0; self.classes];
        self.logits(params, &example.features, &mut out);
        softmax_in_place(&mut out);
        -out[example.label as usize].max(1e-300).ln()
    }

    fn is_correct(&self, params: &[f64], example: &LabeledExample) -> bool {
        let mut out = vec![0.0; self.classes];
        self.logits(params, &example.features, &mut out);
        argmax(&out) == example.label as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences of the mean batch loss.
    fn numeric_grad<M: Model>(model: &M, params: &[f64], batch: &[M::Example]) -> Vec<f64> {
        let h = 1e-6;
        let mean = |p: &[f64]| batch.iter().map(|e| model.loss(p, e)).sum::<f64>() / batch.len() as f64;
        (0..params.len())
            .map(|i| {
                let mut plus = params.to_vec();
                let mut minus = params.to_vec();
                plus[i] += h;
                minus[i] -= h;
                (mean(&plus) - mean(&minus)) / (2.0 * h)
            })
            .collect()
    }

    fn check_step<M: Model>(model: &M, params: &[f64], batch: &[M::Example]) {
        let lr = 0.3;
        let expected = numeric_grad(model, params, batch);
        let mut stepped = params.to_vec();
        model.sgd_step(&mut stepped, batch, lr);
        for i in 0..params.len() {
            let implied = (params[i] - stepped[i]) / lr;
            assert!((implied - expected[i]).abs() < 1e-6, "coordinate {i}: {implied} vs {}", expected[i]);
        }
    }

    #[test]
    fn next_token_gradient_matches_finite_differences() {
        let model = BagOfWordsNextToken::new(4);
        let params: Vec<f64> = (0..model.dim()).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.1).collect();
        let batch = vec![
            TokenExample { context: vec![0, 2], target: 1 },
            TokenExample { context: vec![3], target: 3 },
            TokenExample { context: vec![], target: 0 },
            TokenExample { context: vec![2, 2], target: 2 },
        ];
        check_step(&model, &params, &batch);
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let model = LogisticRegression::new(3, 3);
        let params: Vec<f64> = (0..model.dim()).map(|i| ((i * 5 % 7) as f64 - 3.0) * 0.2).collect();
        let batch = vec![
            LabeledExample { features: vec![1.0, -0.5, 2.0], label: 0 },
            LabeledExample { features: vec![0.1, 0.3, -1.0], label: 2 },
        ];
        check_step(&model, &params, &batch);
    }

    #[test]
    fn accuracy_of_trained_bigram() {
        let model = BagOfWordsNextToken::new(3);
        let data: Vec<_> = (0..3u32)
            .map(|t| TokenExample { context: vec![t], target: (t + 1) % 3 })
            .collect();
        let mut params = model.init_params(&SeedPath::new(0));
        assert!(mean_loss(&model, &params, &data) > 1.0);
        for _ in 0..200 {
            model.sgd_step(params.as_mut_slice(), &data, 1.0);
        }
        assert_eq!(accuracy(&model, &params, &data), 1.0);
        assert_eq!(accuracy(&model, &params, &[]), 0.0);
    }
}
