use super::{ModelError, ParamVars, PromptEmbedding, TemporalMode};
use crate::numerics::{Mask, Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-12;

/// Sinusoidal positions: `sin` on even columns, `cos` on odd ones, with
/// wavelength `10000^(2i/d)` for column pair `i`.
pub fn positional_encoding(steps: usize, d: usize) -> Tensor {
    Tensor::from_fn(steps, d, |t, c| {
        let i = (c / 2) as f64;
        let angle = t as f64 / 10000f64.powf(2.0 * i / d as f64);
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[derive(Clone, Debug)]
pub struct TemporalVars {
    pub prior: Var,
    pub energy: Var,
    pub attn_global: Var,
    pub attn_local: Option<Var>,
    pub c_global: Var,
    pub c_local: Option<Var>,
    pub z_time: Var,
}

#[derive(Clone, Debug)]
pub struct SemanticVars {
    pub query: Var,
    pub attn: Var,
    pub context: Var,
    pub z_sem: Var,
}

#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub x_proj: Var,
    pub temporal: TemporalVars,
    pub semantic: SemanticVars,
    /// `T×1`
    pub logits: Var,
    pub valid: Vec<bool>,
}

/// Values of one forward pass, detached from the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub logits: Vec<f64>,
    pub x_proj: Tensor,
    pub prior: Tensor,
    pub energy: Tensor,
    pub attn_global: Tensor,
    pub attn_local: Option<Tensor>,
    pub c_global: Tensor,
    pub c_local: Option<Tensor>,
    pub z_time: Tensor,
    pub text_attn: Tensor,
    pub z_sem: Tensor,
    pub valid: Vec<bool>,
}

impl ForwardVars {
    pub fn trace(&self, tape: &Tape) -> ForwardTrace {
        let t = &self.temporal;
        ForwardTrace {
            logits: tape.value(self.logits).data().to_vec(),
            x_proj: tape.value(self.x_proj).clone(),
            prior: tape.value(t.prior).clone(),
            energy: tape.value(t.energy).clone(),
            attn_global: tape.value(t.attn_global).clone(),
            attn_local: t.attn_local.map(|v| tape.value(v).clone()),
            c_global: tape.value(t.c_global).clone(),
            c_local: t.c_local.map(|v| tape.value(v).clone()),
            z_time: tape.value(t.z_time).clone(),
            text_attn: tape.value(self.semantic.attn).clone(),
            z_sem: tape.value(self.semantic.z_sem).clone(),
            valid: self.valid.clone(),
        }
    }
}

fn check_valid(rows: usize, valid: &[bool]) -> Result<(), ModelError> {
    if valid.len() != rows {
        return Err(ModelError::Shape {
            what: "validity mask length",
            expected: rows,
            actual: valid.len(),
        });
    }
    if !valid.iter().any(|&v| v) {
        return Err(ModelError::NoValidSteps);
    }
    Ok(())
}

fn attend(tape: &mut Tape, q: Var, k: Var, v: Var, extra: Option<Var>, mask: Option<&Mask>) -> Result<(Var, Var, Var), ModelError> {
    let d = tape.value(q).cols();
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt)?;
    let mut energy = tape.scale(scores, 1.0 / (d as f64).sqrt());
    if let Some(bias) = extra {
        energy = tape.add(energy, bias)?;
    }
    let attn = tape.row_softmax(energy, mask)?;
    let ctx = tape.matmul(attn, v)?;
    Ok((energy, attn, ctx))
}

/// Dual-stream temporal attention over projected step features.
pub fn temporal_context(
    tape: &mut Tape,
    p: &ParamVars,
    x_proj: Var,
    valid: &[bool],
) -> Result<TemporalVars, ModelError> {
    let steps = tape.value(x_proj).rows();
    check_valid(steps, valid)?;
    let q = tape.matmul(x_proj, p.w_q_time)?;
    let k = tape.matmul(x_proj, p.w_k_time)?;
    let v = tape.matmul(x_proj, p.w_v_time)?;

    // G[i,j] = exp(-|γ(i-j)² + β|)
    let dist2 = tape.leaf(Tensor::from_fn(steps, steps, |i, j| {
        let d = i as f64 - j as f64;
        d * d
    }));
    let scaled = tape.mul_scalar(dist2, p.gamma)?;
    let shifted = tape.add_scalar(scaled, p.beta)?;
    let mag = tape.abs(shifted);
    let neg = tape.neg(mag);
    let prior = tape.exp(neg);

    let global_mask = Mask::columns(steps, valid);
    let (energy, attn_global, c_global) = attend(tape, q, k, v, Some(prior), Some(&global_mask))?;

    let (attn_local, c_local, mut z_time) = match p.mode {
        TemporalMode::Dual => {
            let attn_local = tape.row_softmax(energy, Some(&Mask::causal(valid)))?;
            let c_local = tape.matmul(attn_local, v)?;
            let gap = tape.sub(c_global, c_local)?;
            let gate = tape.sigmoid(p.alpha);
            let mixed = tape.mul_scalar(gap, gate)?;
            let z = tape.add(c_local, mixed)?;
            (Some(attn_local), Some(c_local), z)
        }
        TemporalMode::GlobalOnly => (None, None, c_global),
    };
    if valid.iter().any(|&v| !v) {
        let d = tape.value(z_time).cols();
        let keep = tape.leaf(Tensor::from_fn(steps, d, |r, _| if valid[r] { 1.0 } else { 0.0 }));
        z_time = tape.mul(z_time, keep)?;
    }
    Ok(TemporalVars {
        prior,
        energy,
        attn_global,
        attn_local,
        c_global,
        c_local,
        z_time,
    })
}

/// Cross-attention from steps to prompt tokens, with the projected query as
/// the residual branch before layer norm.
pub fn semantic_alignment(
    tape: &mut Tape,
    p: &ParamVars,
    z_time: Var,
    z_task: Var,
) -> Result<SemanticVars, ModelError> {
    if tape.value(z_task).rows() == 0 {
        return Err(ModelError::EmptyPrompt);
    }
    let query = tape.matmul(z_time, p.w_q)?;
    let k = tape.matmul(z_task, p.w_k)?;
    let v = tape.matmul(z_task, p.w_v)?;
    let (_, attn, context) = attend(tape, query, k, v, None, None)?;
    let residual = tape.add(context, query)?;
    let z_sem = tape.layer_norm(residual, p.ln_gain, p.ln_bias, LAYER_NORM_EPS)?;
    Ok(SemanticVars {
        query,
        attn,
        context,
        z_sem,
    })
}

/// One logit per step.
pub fn classify(tape: &mut Tape, p: &ParamVars, z_sem: Var) -> Result<Var, ModelError> {
    let raw = tape.matmul(z_sem, p.w_out)?;
    Ok(tape.add_scalar(raw, p.b_out)?)
}

pub fn forward(
    tape: &mut Tape,
    p: &ParamVars,
    features: &Tensor,
    prompt: &PromptEmbedding,
    valid: &[bool],
) -> Result<ForwardVars, ModelError> {
    let (fd, d) = tape.value(p.w_in).shape();
    if features.cols() != fd {
        return Err(ModelError::Shape {
            what: "feature width",
            expected: fd,
            actual: features.cols(),
        });
    }
    if prompt.matrix.cols() != d {
        return Err(ModelError::Shape {
            what: "prompt embedding width",
            expected: d,
            actual: prompt.matrix.cols(),
        });
    }
    check_valid(features.rows(), valid)?;
    let x = tape.leaf(features.clone());
    let projected = tape.matmul(x, p.w_in)?;
    let pe = tape.leaf(positional_encoding(features.rows(), d));
    let x_proj = tape.add(projected, pe)?;
    let temporal = temporal_context(tape, p, x_proj, valid)?;
    let z_task = tape.leaf(prompt.matrix.clone());
    let semantic = semantic_alignment(tape, p, temporal.z_time, z_task)?;
    let logits = classify(tape, p, semantic.z_sem)?;
    Ok(ForwardVars {
        x_proj,
        temporal,
        semantic,
        logits,
        valid: valid.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{embed_prompts, ModelConfig, ModelParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(mode: TemporalMode) -> ModelParams {
        ModelParams::init(ModelConfig {
            feature_dim: 8,
            d_model: 8,
            prompt_seed: 1,
            init_seed: 2,
            temporal: mode,
        })
        .unwrap()
    }

    fn random_features(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Tensor {
        Tensor::from_fn(t, d, |_, _| rng.random_range(-1.0..1.0))
    }

    fn prompt(d: usize) -> PromptEmbedding {
        embed_prompts("robot NOT IN lion AND green ball", "robot IN lion AND green ball", d, 1).unwrap()
    }

    #[test]
    fn positional_encoding_examples() {
        let pe = positional_encoding(512, 64);
        for c in 0..64 {
            assert_eq!(pe.get(0, c), if c % 2 == 0 { 0.0 } else { 1.0 });
        }
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        for a in 0..512 {
            for b in (a + 1)..512 {
                assert!(pe.row(a) != pe.row(b), "rows {a} and {b}");
            }
        }
        let t = 3.0f64;
        assert!((pe.get(3, 2) - (t / 10000f64.powf(2.0 / 64.0)).sin()).abs() < 1e-15);
    }

    #[test]
    fn zero_prior_parameters_shift_energy_by_one() {
        let mut params = small(TemporalMode::Dual);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_features(&mut rng, 5, 8);
        let base = params.trace(&f, &prompt(8)).unwrap();
        params.gamma = Tensor::scalar(0.0);
        params.beta = Tensor::scalar(0.0);
        let flat = params.trace(&f, &prompt(8)).unwrap();
        assert!(flat.prior.data().iter().all(|&g| g == 1.0));
        assert_ne!(flat.energy, base.energy);
        // E - 1 equals the raw scaled scores, so both streams match a softmax
        // over the scores alone
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let x = tape.leaf(flat.x_proj.clone());
        let q = tape.matmul(x, p.w_q_time).unwrap();
        let k = tape.matmul(x, p.w_k_time).unwrap();
        let kt = tape.transpose(k);
        let s = tape.matmul(q, kt).unwrap();
        let s = tape.scale(s, 1.0 / 8f64.sqrt());
        let a = tape.row_softmax(s, Some(&Mask::all(5, 5))).unwrap();
        for (x, y) in tape.value(a).data().iter().zip(flat.attn_global.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in tape.value(s).data().iter().zip(flat.energy.data()) {
            assert!((x + 1.0 - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gate_averages_streams() {
        let params = small(TemporalMode::Dual);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tr = params.trace(&random_features(&mut rng, 7, 8), &prompt(8)).unwrap();
        let (g, l) = (&tr.c_global, tr.c_local.as_ref().unwrap());
        for i in 0..g.len() {
            assert!((tr.z_time.data()[i] - 0.5 * (g.data()[i] + l.data()[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_is_convex_for_any_gate() {
        let mut params = small(TemporalMode::Dual);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_features(&mut rng, 6, 8);
        for alpha in [-4.0, -0.3, 0.0, 1.7, 6.0] {
            params.alpha = Tensor::scalar(alpha);
            let tr = params.trace(&f, &prompt(8)).unwrap();
            let l = tr.c_local.as_ref().unwrap();
            for i in 0..l.len() {
                let (lo, hi) = (tr.c_global.data()[i].min(l.data()[i]), tr.c_global.data()[i].max(l.data()[i]));
                let z = tr.z_time.data()[i];
                assert!(z >= lo - 1e-12 && z <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn single_step_returns_value_row() {
        let mut params = small(TemporalMode::Dual);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = random_features(&mut rng, 1, 8);
        for alpha in [-2.0, 0.0, 3.0] {
            params.alpha = Tensor::scalar(alpha);
            let tr = params.trace(&f, &prompt(8)).unwrap();
            let v = tr.x_proj.matmul(&params.w_v_time).unwrap();
            for (a, b) in tr.z_time.data().iter().zip(v.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prior_is_symmetric() {
        let mut params = small(TemporalMode::Dual);
        params.gamma = Tensor::scalar(-0.37);
        params.beta = Tensor::scalar(0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tr = params.trace(&random_features(&mut rng, 9, 8), &prompt(8)).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(tr.prior.get(i, j), tr.prior.get(j, i));
            }
        }
    }

    #[test]
    fn local_stream_ignores_future_steps() {
        let params = small(TemporalMode::Dual);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let t = rng.random_range(2..12);
            let f = random_features(&mut rng, t, 8);
            let cut = rng.random_range(1..t);
            let mut g = f.clone();
            for r in cut..t {
                for c in 0..8 {
                    g.set(r, c, rng.random_range(-1.0..1.0));
                }
            }
            let a = params.trace(&f, &prompt(8)).unwrap();
            let b = params.trace(&g, &prompt(8)).unwrap();
            let (la, lb) = (a.c_local.unwrap(), b.c_local.unwrap());
            for r in 0..cut {
                assert_eq!(la.row(r), lb.row(r));
            }
            assert_ne!(a.c_global.row(0), b.c_global.row(0));
        }
    }

    #[test]
    fn single_token_prompt_gives_constant_context() {
        let params = small(TemporalMode::Dual);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let one = embed_prompts("lion", "x", 8, 0).unwrap();
        let one = PromptEmbedding {
            tokens: vec![one.tokens[0].clone()],
            matrix: Tensor::new(1, 8, one.matrix.row(0).to_vec()).unwrap(),
        };
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let out = forward(&mut tape, &p, &random_features(&mut rng, 5, 8), &one, &[true; 5]).unwrap();
        let ctx = tape.value(out.semantic.context);
        let v = one.matrix.matmul(&params.w_v).unwrap();
        for r in 0..5 {
            for (a, b) in ctx.row(r).iter().zip(v.row(0)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn aligned_rows_are_standardised() {
        let params = small(TemporalMode::Dual);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let tr = params.trace(&random_features(&mut rng, 11, 8), &prompt(8)).unwrap();
        for r in 0..11 {
            let row = tr.z_sem.row(r);
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn prompt_token_order_does_not_matter() {
        let params = small(TemporalMode::Dual);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = random_features(&mut rng, 6, 8);
        let a = embed_prompts("robot NOT IN lion", "AND green ball", 8, 1).unwrap();
        let b = embed_prompts("ball green AND", "lion IN NOT robot", 8, 1).unwrap();
        let (ta, tb) = (params.trace(&f, &a).unwrap(), params.trace(&f, &b).unwrap());
        for (x, y) in ta.z_sem.data().iter().zip(tb.z_sem.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn classifier_is_linear() {
        let mut params = small(TemporalMode::Dual);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let f = random_features(&mut rng, 4, 8);
        params.w_out = Tensor::zeros(8, 1);
        params.b_out = Tensor::scalar(0.0);
        assert!(params.predict(&f, &prompt(8)).unwrap().iter().all(|&p| p == 0.5));
        let mut params = small(TemporalMode::Dual);
        params.b_out = Tensor::scalar(0.7);
        let base = params.logits(&f, &prompt(8)).unwrap();
        params.w_out = params.w_out.map(|w| 2.0 * w);
        let doubled = params.logits(&f, &prompt(8)).unwrap();
        for (a, b) in base.iter().zip(&doubled) {
            assert!(((b - 0.7) - 2.0 * (a - 0.7)).abs() < 1e-12);
        }
    }

    #[test]
    fn logits_finite_under_fuzzing() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for i in 0..1000 {
            let params = ModelParams::init(ModelConfig {
                feature_dim: 6,
                d_model: 4,
                init_seed: i,
                ..ModelConfig::default()
            })
            .unwrap();
            let t = rng.random_range(1..10);
            let f = Tensor::from_fn(t, 6, |_, _| rng.random_range(-3.0..3.0));
            let logits = params.logits(&f, &prompt(4)).unwrap();
            assert!(logits.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn padded_rows_do_not_leak() {
        let params = small(TemporalMode::Dual);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut f = random_features(&mut rng, 8, 8);
        let valid = [true, true, true, true, true, false, false, false];
        let a = params.trace_masked(&f, &prompt(8), &valid).unwrap();
        for r in 5..8 {
            for c in 0..8 {
                f.set(r, c, rng.random_range(-9.0..9.0));
            }
        }
        let b = params.trace_masked(&f, &prompt(8), &valid).unwrap();
        assert_eq!(a.logits, b.logits);
        assert!(a.z_time.row(6).iter().all(|&v| v == 0.0));
        let unpadded = params.trace(&Tensor::from_fn(5, 8, |r, c| f.get(r, c)), &prompt(8)).unwrap();
        for (x, y) in unpadded.logits.iter().zip(&a.logits[..5]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn global_only_ignores_gate() {
        let mut params = small(TemporalMode::GlobalOnly);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let f = random_features(&mut rng, 6, 8);
        let a = params.trace(&f, &prompt(8)).unwrap();
        params.alpha = Tensor::scalar(-3.0);
        let b = params.trace(&f, &prompt(8)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.z_time, a.c_global);
        assert!(a.c_local.is_none());
    }

    #[test]
    fn shape_errors() {
        let params = small(TemporalMode::Dual);
        let f = Tensor::zeros(3, 5);
        assert!(matches!(params.trace(&f, &prompt(8)), Err(ModelError::Shape { expected: 8, actual: 5, .. })));
        let f = Tensor::zeros(3, 8);
        assert!(matches!(params.trace(&f, &prompt(4)), Err(ModelError::Shape { .. })));
        assert!(matches!(params.trace_masked(&f, &prompt(8), &[false; 3]), Err(ModelError::NoValidSteps)));
    }
}
