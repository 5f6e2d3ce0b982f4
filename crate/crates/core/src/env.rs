//! Synthetic sparse-hit recommendation environment.
//!
//! Each prompt has one uniformly drawn target item. The policy is tabular:
//! every prompt owns its own logits for the three levels of the hierarchical
//! categorical `p(a) · p(b | a) · p(c | a, b)`, so log-probabilities, the full
//! item distribution and KL are all exact.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{stream_rng, Stream};
use crate::sid::{render_sid, CatalogShape, IdSet, ResponseText, SemanticId};

/// Text emitted for a corrupted response. It carries three grammar tokens, the
/// same as a valid ID, but in an order that never parses.
pub const MALFORMED_TEXT: &str = "<c_0><b_0><a_0>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub prompt_id: usize,
    pub target: SemanticId,
    pub ground_truth_text: ResponseText,
}

impl PromptSpec {
    pub fn new(prompt_id: usize, target: SemanticId) -> Self {
        PromptSpec { prompt_id, target, ground_truth_text: render_sid(target) }
    }

    pub fn target_set(&self) -> IdSet {
        IdSet::single(self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub shape: CatalogShape,
    pub prompts: Vec<PromptSpec>,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn prompt(&self, prompt_id: usize) -> Result<&PromptSpec> {
        self.prompts
            .get(prompt_id)
            .ok_or(Error::PromptOutOfRange { prompt_id, num_prompts: self.prompts.len() })
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.prompts.iter().enumerate() {
            if p.prompt_id != i {
                return Err(Error::InvalidConfig("prompt ids must be 0..n in order"));
            }
            if !p.target.in_bounds(&self.shape) {
                let t = p.target;
                return Err(Error::OutOfBounds { a: t.a, b: t.b, c: t.c });
            }
        }
        Ok(())
    }
}

/// `num_prompts` prompts with uniform targets, drawn from the dataset stream.
pub fn generate_dataset(shape: CatalogShape, num_prompts: usize, seed: u64) -> Result<Dataset> {
    if num_prompts == 0 {
        return Err(Error::InvalidConfig("num_prompts must be at least 1"));
    }
    let mut rng = stream_rng(seed, Stream::Dataset, 0, 0);
    let size = shape.size();
    let prompts = (0..num_prompts)
        .map(|q| PromptSpec::new(q, shape.id_at(rng.gen_range(0..size))))
        .collect();
    Ok(Dataset { shape, prompts, seed })
}

/// Per-prompt hierarchical categorical policy.
///
/// Parameters are stored level by level, row-major in
/// `(prompt, a, b, c)`. The flat parameter layout used by gradients is
/// `logits_a ++ logits_b ++ logits_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub shape: CatalogShape,
    pub num_prompts: usize,
    pub logits_a: Vec<f64>,
    pub logits_b: Vec<f64>,
    pub logits_c: Vec<f64>,
}

impl TabularPolicy {
    /// All-zero logits: the uniform distribution over the catalog.
    pub fn uniform(shape: CatalogShape, num_prompts: usize) -> Self {
        let (na, nb, nc) = dims(&shape);
        TabularPolicy {
            shape,
            num_prompts,
            logits_a: vec![0.0; num_prompts * na],
            logits_b: vec![0.0; num_prompts * na * nb],
            logits_c: vec![0.0; num_prompts * na * nb * nc],
        }
    }

    /// Logits drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(
        shape: CatalogShape,
        num_prompts: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = TabularPolicy::uniform(shape, num_prompts);
        for z in p.params_mut() {
            *z = rng.gen_range(-scale..=scale);
        }
        p
    }

    pub fn num_params(&self) -> usize {
        self.logits_a.len() + self.logits_b.len() + self.logits_c.len()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> + '_ {
        self.logits_a.iter().chain(&self.logits_b).chain(&self.logits_c)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.logits_a.iter_mut().chain(self.logits_b.iter_mut()).chain(self.logits_c.iter_mut())
    }

    /// Mutable access to one parameter in the flat layout.
    pub fn param_mut(&mut self, index: usize) -> &mut f64 {
        let na = self.logits_a.len();
        let nb = self.logits_b.len();
        if index < na {
            &mut self.logits_a[index]
        } else if index < na + nb {
            &mut self.logits_b[index - na]
        } else {
            &mut self.logits_c[index - na - nb]
        }
    }

    pub fn same_layout(&self, other: &TabularPolicy) -> bool {
        self.shape == other.shape && self.num_prompts == other.num_prompts
    }

    pub fn validate(&self) -> Result<()> {
        let (na, nb, nc) = dims(&self.shape);
        let p = self.num_prompts;
        let lens = [
            (p * na, self.logits_a.len()),
            (p * na * nb, self.logits_b.len()),
            (p * na * nb * nc, self.logits_c.len()),
        ];
        for (expected, found) in lens {
            if expected != found {
                return Err(Error::LengthMismatch { expected, found });
            }
        }
        if self.params().any(|z| !z.is_finite()) {
            return Err(Error::InvalidConfig("policy logits must be finite"));
        }
        Ok(())
    }

    fn check_prompt(&self, prompt_id: usize) -> Result<()> {
        if prompt_id < self.num_prompts {
            Ok(())
        } else {
            Err(Error::PromptOutOfRange { prompt_id, num_prompts: self.num_prompts })
        }
    }

    pub(crate) fn offset_a(&self, q: usize) -> usize {
        q * self.shape.n_a() as usize
    }

    pub(crate) fn offset_b(&self, q: usize, a: usize) -> usize {
        (q * self.shape.n_a() as usize + a) * self.shape.n_b() as usize
    }

    pub(crate) fn offset_c(&self, q: usize, a: usize, b: usize) -> usize {
        let (na, nb, nc) = dims(&self.shape);
        ((q * na + a) * nb + b) * nc
    }

    pub(crate) fn row_a(&self, q: usize) -> &[f64] {
        let o = self.offset_a(q);
        &self.logits_a[o..o + self.shape.n_a() as usize]
    }

    pub(crate) fn row_b(&self, q: usize, a: usize) -> &[f64] {
        let o = self.offset_b(q, a);
        &self.logits_b[o..o + self.shape.n_b() as usize]
    }

    pub(crate) fn row_c(&self, q: usize, a: usize, b: usize) -> &[f64] {
        let o = self.offset_c(q, a, b);
        &self.logits_c[o..o + self.shape.n_c() as usize]
    }

    /// Full item distribution for one prompt, in flat-index order.
    pub fn item_distribution(&self, prompt_id: usize) -> Result<Vec<f64>> {
        self.check_prompt(prompt_id)?;
        let (na, nb, nc) = dims(&self.shape);
        let mut pa = vec![0.0; na];
        let mut pb = vec![0.0; nb];
        let mut pc = vec![0.0; nc];
        let mut out = Vec::with_capacity(self.shape.size());
        math::softmax_into(self.row_a(prompt_id), &mut pa);
        for (a, &wa) in pa.iter().enumerate() {
            math::softmax_into(self.row_b(prompt_id, a), &mut pb);
            for (b, &wb) in pb.iter().enumerate() {
                math::softmax_into(self.row_c(prompt_id, a, b), &mut pc);
                out.extend(pc.iter().map(|&wc| wa * wb * wc));
            }
        }
        Ok(out)
    }

    /// `log p(a) + log p(b | a) + log p(c | a, b)`.
    pub fn log_prob(&self, prompt_id: usize, id: SemanticId) -> Result<f64> {
        self.check_prompt(prompt_id)?;
        if !id.in_bounds(&self.shape) {
            return Err(Error::OutOfBounds { a: id.a, b: id.b, c: id.c });
        }
        let (a, b, c) = (id.a as usize, id.b as usize, id.c as usize);
        Ok(math::log_softmax_at(self.row_a(prompt_id), a)
            + math::log_softmax_at(self.row_b(prompt_id, a), b)
            + math::log_softmax_at(self.row_c(prompt_id, a, b), c))
    }

    /// One ancestral draw: three uniforms, one per level.
    pub fn sample_id<R: Rng + ?Sized>(&self, prompt_id: usize, rng: &mut R) -> Result<SemanticId> {
        self.check_prompt(prompt_id)?;
        let a = sample_row(self.row_a(prompt_id), rng);
        let b = sample_row(self.row_b(prompt_id, a), rng);
        let c = sample_row(self.row_c(prompt_id, a, b), rng);
        Ok(SemanticId { a: a as u32, b: b as u32, c: c as u32 })
    }
}

fn dims(shape: &CatalogShape) -> (usize, usize, usize) {
    (shape.n_a() as usize, shape.n_b() as usize, shape.n_c() as usize)
}

fn sample_row<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> usize {
    let mut probs = vec![0.0; logits.len()];
    math::softmax_into(logits, &mut probs);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // Rounding left `acc` a hair below 1; fall back to the last positive entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(logits.len() - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledResponse {
    pub text: ResponseText,
    /// The triple the policy actually drew, kept even when the text is corrupted.
    pub id: SemanticId,
    pub logprob_old: f64,
    pub valid: bool,
}

/// Draws `g` independent responses from `policy` for `prompt`.
///
/// Per response the stream yields three level uniforms and then one
/// corruption uniform (drawn even when `malform_rate` is 0), so the stream
/// layout does not depend on the rate.
pub fn sample_group<R: Rng + ?Sized>(
    policy: &TabularPolicy,
    prompt: &PromptSpec,
    g: usize,
    rng: &mut R,
    malform_rate: f64,
) -> Result<Vec<SampledResponse>> {
    if g < 2 {
        return Err(Error::InvalidConfig("group size must be at least 2"));
    }
    if !(0.0..1.0).contains(&malform_rate) {
        return Err(Error::InvalidConfig("malform_rate must lie in [0, 1)"));
    }
    (0..g)
        .map(|_| {
            let id = policy.sample_id(prompt.prompt_id, rng)?;
            let logprob_old = policy.log_prob(prompt.prompt_id, id)?;
            let corrupt = rng.gen::<f64>() < malform_rate;
            let text = if corrupt { ResponseText::new(MALFORMED_TEXT) } else { render_sid(id) };
            Ok(SampledResponse { text, id, logprob_old, valid: !corrupt })
        })
        .collect()
}
