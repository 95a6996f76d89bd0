// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic property checks shared by the integration tests and the
//! acceptance suite. Each check returns `Err(description)` on the first
//! violation.

#![allow(dead_code)]

use std::f64::consts::TAU;

use lglb::intervention::{interpolate, logit_diff_variation, patch_run, reciprocal_rank, InterventionSpec, Payload};
use lglb::model::{self, forward, loss_and_grads, loss_value, Intervention, ModelConfig, ModelParams, ModelVariant, Site};
use lglb::tasks::{gen_addk, gen_addk_aligned, gen_circle, gen_rect, rect, AddKSpec, CircleSpec, CircleTrajectory, Direction, RectSpec, SequenceBatch, Sequences, TaskFamily, TaskParam};
use lglb::train::{Checkpoint, DataMode, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

pub fn tiny_token_config(vocab_size: usize, max_seq_len: usize) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 1,
        d_model: 8,
        d_mlp: 16,
        max_seq_len,
        ln_eps: 1e-5,
        variant: ModelVariant::Token { vocab_size },
    }
}

pub fn tiny_point_config(max_seq_len: usize) -> ModelConfig {
    ModelConfig {
        variant: ModelVariant::Continuous {
            input_dim: 2,
            output_dim: 2,
        },
        ..tiny_token_config(2, max_seq_len)
    }
}

pub fn tiny_addk() -> AddKSpec {
    AddKSpec::new(20, 3, vec![1, 3, 6]).unwrap()
}

/// Initialized weights with extra noise so every gradient is far from zero.
pub fn noisy_params(config: &ModelConfig, seed: u64, sd: f64) -> ModelParams {
    let mut params = ModelParams::init(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (_, t) in params.named_mut() {
        for x in t.data_mut() {
            *x += sd * (rng.random::<f64>() * 2.0 - 1.0);
        }
    }
    params
}

fn param_slot(params: &mut ModelParams, tensor: usize, index: usize) -> &mut f64 {
    let mut named = params.named_mut();
    let (_, t) = named.swap_remove(tensor);
    &mut t.data_mut()[index]
}

/// Central differences against `loss_and_grads` at random coordinates of
/// random tiny models, token and point variants alternating.
pub fn gradient_agreement(trials: usize) -> Check {
    let h = 1e-5;
    for trial in 0..trials as u64 {
        let (config, batch) = if trial % 2 == 0 {
            let spec = tiny_addk();
            let batch = gen_addk(&spec, (trial as usize / 2) % 3, 3, trial).map_err(|e| e.to_string())?;
            (tiny_token_config(20, 8), batch)
        } else {
            let spec = CircleSpec::new(13, vec![1.5]).unwrap();
            let batch = gen_circle(&spec, 1.5, None, 2, trial).map_err(|e| e.to_string())?;
            (tiny_point_config(14), batch)
        };
        let mut params = noisy_params(&config, trial, 0.3);
        let input = batch.model_input().map_err(|e| e.to_string())?;
        let targets = batch.loss_targets();
        let (_, grads) = loss_and_grads(&params, &config, &input, &targets).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        for _ in 0..4 {
            let tensor = rng.random_range(0..grads.len());
            let index = rng.random_range(0..grads[tensor].len());
            let orig = *param_slot(&mut params, tensor, index);
            *param_slot(&mut params, tensor, index) = orig + h;
            let up = loss_value(&params, &config, &input, &targets).map_err(|e| e.to_string())?;
            *param_slot(&mut params, tensor, index) = orig - h;
            let down = loss_value(&params, &config, &input, &targets).map_err(|e| e.to_string())?;
            *param_slot(&mut params, tensor, index) = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads[tensor][index];
            if (fd - an).abs() > 1e-6 + 1e-4 * fd.abs().max(an.abs()) {
                let name = &params.named()[tensor].0;
                return Err(format!("trial {trial}: d loss / d {name}[{index}] analytic {an:e} vs numeric {fd:e}"));
            }
        }
    }
    Ok(())
}

fn near(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Generator invariants over `cases` seeds.
pub fn generator_invariants(cases: u64) -> Check {
    for seed in 0..cases {
        let spec = AddKSpec::new(50, 4, vec![1, 7, 13]).unwrap();
        for task in 0..3 {
            let k = spec.offsets[task];
            let batch = gen_addk(&spec, task, 20, seed).map_err(|e| e.to_string())?;
            let Sequences::Tokens(seqs) = &batch.sequences else {
                return Err("add-k produced points".into());
            };
            for s in seqs {
                if s.len() != 2 * (spec.n_examples + 1) {
                    return Err(format!("add-k sequence of length {}", s.len()));
                }
                for pair in s.chunks(2) {
                    if pair[1] != pair[0] + k || pair[1] >= spec.vocab_size {
                        return Err(format!("add-k pair {pair:?} breaks y − x = {k} inside V"));
                    }
                }
            }
        }
        let (a, b) = gen_addk_aligned(&spec, 0, 2, 10, seed).map_err(|e| e.to_string())?;
        if a.queries() != b.queries() {
            return Err("aligned batches disagree on queries".into());
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = rng.random_range(0.5..4.0);
        let n = [13, 25, 37][rng.random_range(0..3)];
        let t = CircleTrajectory::sample(r, n, None, &mut rng).map_err(|e| e.to_string())?;
        if t.points.len() != n + 1 {
            return Err(format!("circle trajectory has {} points for n = {n}", t.points.len()));
        }
        for p in &t.points {
            if !near(p[0].hypot(p[1]), r, 1e-12) {
                return Err(format!("circle point {p:?} off radius {r}"));
            }
        }
        for (i, s) in t.steps.iter().enumerate() {
            if *s != t.steps[i - i % t.period] || !(0.0..=1.0).contains(s) {
                return Err(format!("step {i} breaks period-{} blocks", t.period));
            }
        }
        let unit = TAU / n as f64;
        for i in 1..t.angles.len() {
            let d = t.angles[i] - t.angles[i - 1];
            if !near(d, t.direction.sign() * unit * t.steps[i], 1e-12) {
                return Err(format!("angle increment {d} disagrees with step {}", t.steps[i]));
            }
        }
        let circle = CircleSpec::new(n, vec![r]).unwrap();
        let cw = gen_circle(&circle, r, Some(Direction::Cw), 4, seed).map_err(|e| e.to_string())?;
        if cw.directions.iter().any(|d| *d != Some(Direction::Cw)) {
            return Err("fixed direction not honoured".into());
        }

        let (sa, sb) = (rng.random_range(1.0..4.0), rng.random_range(1.0..4.0));
        let rspec = RectSpec::new(5, 15, vec![(sa, sb)]).unwrap();
        let loop_pts = rect::boundary_loop(sa, sb, 5).map_err(|e| e.to_string())?;
        if loop_pts.len() != 16 {
            return Err(format!("boundary loop of {} points", loop_pts.len()));
        }
        let batch = gen_rect(&rspec, sa, sb, None, 8, seed).map_err(|e| e.to_string())?;
        let Sequences::Points(seqs) = &batch.sequences else {
            return Err("rectangle produced tokens".into());
        };
        for s in seqs {
            if s.len() != 15 {
                return Err(format!("rectangle walk of length {}", s.len()));
            }
            for p in s {
                let on_x = near(p[0].abs(), sa / 2.0, 1e-12) && p[1].abs() <= sb / 2.0 + 1e-12;
                let on_y = near(p[1].abs(), sb / 2.0, 1e-12) && p[0].abs() <= sa / 2.0 + 1e-12;
                if !(on_x || on_y) {
                    return Err(format!("point {p:?} off the {sa} × {sb} boundary"));
                }
            }
            for w in s.windows(2) {
                let step = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
                let (ea, eb) = (sa / 4.0, sb / 4.0);
                if !(near(step, ea, 1e-9) || near(step, eb, 1e-9)) {
                    return Err(format!("walk step {step} is not one boundary spacing"));
                }
            }
        }
    }
    Ok(())
}

/// Sort-based rank of `token`: its position after ordering by descending
/// logit, ties by index.
pub fn rank_oracle(logits: &[f64], token: usize) -> f64 {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&i, &j| logits[j].total_cmp(&logits[i]).then(i.cmp(&j)));
    1.0 / (1 + idx.iter().position(|&i| i == token).unwrap()) as f64
}

fn tiny_token_model(seed: u64) -> (ModelConfig, ModelParams, AddKSpec) {
    let config = tiny_token_config(20, 8);
    (config.clone(), noisy_params(&config, seed, 0.5), tiny_addk())
}

/// Patch metrics recomputed from plain forward passes, and reciprocal rank
/// against a sort-based oracle.
pub fn patch_oracles(cases: u64) -> Check {
    for seed in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits: Vec<f64> = (0..30).map(|_| (rng.random_range(0..8)) as f64).collect();
        for t in 0..logits.len() {
            let rr = reciprocal_rank(&logits, t).map_err(|e| e.to_string())?;
            if rr != rank_oracle(&logits, t) {
                return Err(format!("reciprocal rank of {t} is {rr}, oracle {}", rank_oracle(&logits, t)));
            }
        }

        let (config, params, spec) = tiny_token_model(seed);
        let (normal, alt) = gen_addk_aligned(&spec, 0, 2, 6, seed).map_err(|e| e.to_string())?;
        let site = [Site::attn_out(1), Site::mlp_out(0), Site::resid_post(0)][seed as usize % 3];
        let pos = normal.answer_position();
        let report = patch_run(&params, &config, &normal, &alt, &InterventionSpec::new(site, vec![pos], Payload::Donor))
            .map_err(|e| e.to_string())?;

        let seq_len = normal.input_len();
        let alt_fwd = forward(&params, &config, &alt.model_input().unwrap(), &[site], &[]).map_err(|e| e.to_string())?;
        let donor = alt_fwd.trace.unwrap().rows_at(site, pos).map_err(|e| e.to_string())?;
        let input = normal.model_input().unwrap();
        let plain = forward(&params, &config, &input, &[], &[]).map_err(|e| e.to_string())?;
        let patched = forward(&params, &config, &input, &[], &[Intervention::per_sequence(site, pos, donor)])
            .map_err(|e| e.to_string())?;
        let (tn, ta) = (normal.answers().unwrap(), alt.answers().unwrap());
        let n = normal.len() as f64;
        let (mut d_norm, mut d_patch) = (0.0, 0.0);
        for i in 0..normal.len() {
            let b = plain.at(seq_len, i, pos);
            let a = patched.at(seq_len, i, pos);
            d_norm += (b[tn[i]] - b[ta[i]]) / n;
            d_patch += (a[tn[i]] - a[ta[i]]) / n;
            let s = &report.samples[i];
            if !near(s.rr_alt_after, rank_oracle(a, ta[i]), 0.0) || !near(s.rr_norm_before, rank_oracle(b, tn[i]), 0.0) {
                return Err(format!("sample {i}: reciprocal ranks disagree with the oracle"));
            }
        }
        let expected = (d_norm - d_patch) / d_norm;
        let got = report.delta_bar.ok_or("Δ̄ undefined")?;
        if !near(report.delta_norm, d_norm, 1e-9) || !near(got, expected, 1e-9 * (1.0 + expected.abs())) {
            return Err(format!("Δ̄ {got} vs oracle {expected} at {site}"));
        }
    }
    if logit_diff_variation(5e-10, 1.0).is_some() {
        return Err("Δ̄ defined for a vanishing baseline".into());
    }
    Ok(())
}

/// Same inputs as `batch`, final answers shifted to offset `k`.
fn relabelled(batch: &SequenceBatch, k: usize) -> SequenceBatch {
    let mut out = batch.clone();
    if let Sequences::Tokens(seqs) = &mut out.sequences {
        for s in seqs {
            let n = s.len();
            s[n - 1] = s[n - 2] + k;
        }
    }
    out.params = vec![TaskParam::Offset(k); out.len()];
    out
}

/// Patching a run with its own activations changes nothing and gives Δ̄ = 0.
pub fn identity_patch(cases: u64) -> Check {
    for seed in 0..cases {
        let (config, params, spec) = tiny_token_model(seed);
        let batch = gen_addk(&spec, 2, 5, seed).map_err(|e| e.to_string())?;
        let input = batch.model_input().unwrap();
        let plain = forward(&params, &config, &input, &[], &[]).map_err(|e| e.to_string())?;
        for site in [Site::attn_out(0), Site::mlp_hidden(1), Site::mlp_out(1), Site::resid_post(1)] {
            let positions: Vec<usize> = (0..batch.input_len()).collect();
            let ivs = InterventionSpec::new(site, positions, Payload::Donor)
                .resolve(&params, &config, Some(&batch))
                .map_err(|e| e.to_string())?;
            let patched = forward(&params, &config, &input, &[], &ivs).map_err(|e| e.to_string())?;
            if patched.outputs != plain.outputs {
                return Err(format!("self-patch at {site} changed the outputs"));
            }
            let alt = relabelled(&batch, 1);
            let pos = batch.answer_position();
            let report = patch_run(&params, &config, &batch, &alt, &InterventionSpec::new(site, vec![pos], Payload::Donor))
                .map_err(|e| e.to_string())?;
            match report.delta_bar {
                Some(0.0) => {}
                other => return Err(format!("identity patch at {site} gave Δ̄ = {other:?}")),
            }
        }
    }
    Ok(())
}

/// Steering payloads are affine in β: the output under `(1 − β)a + βb`
/// equals the output under the explicit vector, `β = 0` and `β = 1` recover
/// the endpoints, and `scale` multiplies the payload.
pub fn steer_patch_linearity(cases: u64) -> Check {
    let d = 8;
    for seed in 0..cases {
        let (config, params, spec) = tiny_token_model(seed);
        let batch = gen_addk(&spec, 1, 4, seed).map_err(|e| e.to_string())?;
        let input = batch.model_input().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let beta = rng.random_range(0.0..=1.0);
        let site = Site::attn_out(1);
        let pos = batch.answer_position();
        let run = |payload: Payload, scale: f64| -> Result<_, String> {
            let mut s = InterventionSpec::new(site, vec![pos], payload);
            s.scale = scale;
            let ivs = s.resolve(&params, &config, None).map_err(|e| e.to_string())?;
            Ok(forward(&params, &config, &input, &[], &ivs).map_err(|e| e.to_string())?.outputs)
        };
        let mixed = interpolate(&a, &b, beta);
        for (j, m) in mixed.iter().enumerate() {
            if !near(*m, (1.0 - beta) * a[j] + beta * b[j], 1e-15) {
                return Err("interpolate is not (1 − β)a + βb".into());
            }
        }
        let steered = run(Payload::Interpolate { a: a.clone(), b: b.clone(), beta }, 1.0)?;
        if steered != run(Payload::Vector(mixed), 1.0)? {
            return Err(format!("β = {beta}: interpolation differs from the explicit vector"));
        }
        if run(Payload::Interpolate { a: a.clone(), b: b.clone(), beta: 0.0 }, 1.0)? != run(Payload::Vector(a.clone()), 1.0)?
            || run(Payload::Interpolate { a: a.clone(), b: b.clone(), beta: 1.0 }, 1.0)? != run(Payload::Vector(b.clone()), 1.0)?
        {
            return Err("β endpoints do not reproduce the task vectors".into());
        }
        let doubled: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
        if run(Payload::Vector(a.clone()), 2.0)? != run(Payload::Vector(doubled), 1.0)? {
            return Err("scale is not a multiplier on the payload".into());
        }
        let at_site = forward(&params, &config, &input, &[site], &[Intervention::shared(site, pos, b.clone())])
            .map_err(|e| e.to_string())?;
        let trace = at_site.trace.unwrap();
        for s in 0..batch.len() {
            if trace.at(site, s, pos).map_err(|e| e.to_string())? != b.as_slice() {
                return Err("the intervened site does not hold the payload".into());
            }
        }
    }
    Ok(())
}

fn tiny_trainer(seed: u64) -> Trainer {
    let spec = tiny_addk();
    let config = tiny_token_config(20, 8);
    let mut train = TrainConfig::addk(3, seed);
    train.iterations = 6;
    train.batch_size = 8;
    train.eval_every = 0;
    train.data = DataMode::Fixed { size: 64 };
    Trainer::new(config, TaskFamily::AddK(spec), train).unwrap()
}

/// Checkpoints serialize to identical bytes after a round trip, and a run
/// resumed from a mid-training checkpoint matches an uninterrupted one bit
/// for bit.
pub fn checkpoint_roundtrip(dir: &std::path::Path) -> Check {
    let mut straight = tiny_trainer(3);
    straight.run_until(6, |_| {}).map_err(|e| e.to_string())?;

    let mut first = tiny_trainer(3);
    first.run_until(3, |_| {}).map_err(|e| e.to_string())?;
    let bytes = first.checkpoint().to_bytes().map_err(|e| e.to_string())?;
    let back = Checkpoint::from_bytes(&bytes).map_err(|e| e.to_string())?;
    if back != *first.checkpoint() || back.to_bytes().map_err(|e| e.to_string())? != bytes {
        return Err("checkpoint bytes do not round-trip".into());
    }
    let path = dir.join("mid.ckpt");
    lglb::train::save_checkpoint(&back, &path).map_err(|e| e.to_string())?;
    let loaded = lglb::train::load_checkpoint(&path).map_err(|e| e.to_string())?;
    if loaded != back {
        return Err("checkpoint file does not round-trip".into());
    }
    let mut resumed = Trainer::from_checkpoint(loaded).map_err(|e| e.to_string())?;
    resumed.run_until(6, |_| {}).map_err(|e| e.to_string())?;
    if resumed.checkpoint() != straight.checkpoint() {
        return Err("resumed training diverged from the uninterrupted run".into());
    }
    let mut corrupt = bytes.clone();
    let last = corrupt.len() - 1;
    corrupt[last] ^= 1;
    if Checkpoint::from_bytes(&corrupt).is_ok() {
        return Err("corrupted checkpoint was accepted".into());
    }
    Ok(())
}

/// Outputs and recorded activations at position `i` do not depend on inputs
/// after `i`.
pub fn causal_mask(cases: u64) -> Check {
    for seed in 0..cases {
        let (config, params, _) = tiny_token_model(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = 8;
        let seq: Vec<usize> = (0..len).map(|_| rng.random_range(0..20)).collect();
        let cut = rng.random_range(0..len - 1);
        let mut other = seq.clone();
        for t in other.iter_mut().skip(cut + 1) {
            *t = (*t + 1 + rng.random_range(0..18)) % 20;
        }
        let sites = [Site::attn_out(0), Site::mlp_hidden(0), Site::attn_out(1), Site::resid_post(1)];
        let run = |s: &Vec<usize>| forward(&params, &config, &model::ModelInput::tokens(std::slice::from_ref(s)).unwrap(), &sites, &[]);
        let (a, b) = (run(&seq).map_err(|e| e.to_string())?, run(&other).map_err(|e| e.to_string())?);
        for p in 0..=cut {
            if a.at(len, 0, p) != b.at(len, 0, p) {
                return Err(format!("output at {p} changed when inputs after {cut} changed"));
            }
            let (ta, tb) = (a.trace.as_ref().unwrap(), b.trace.as_ref().unwrap());
            for site in sites {
                if ta.at(site, 0, p).unwrap() != tb.at(site, 0, p).unwrap() {
                    return Err(format!("{site} at {p} changed when inputs after {cut} changed"));
                }
            }
        }
        if a.at(len, 0, len - 1) == b.at(len, 0, len - 1) {
            return Err("the last position ignores its own input".into());
        }

        let pconfig = tiny_point_config(6);
        let pparams = noisy_params(&pconfig, seed, 0.5);
        let pts: Vec<[f64; 2]> = (0..6).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let mut moved = pts.clone();
        moved[5] = [moved[5][0] + 1.0, moved[5][1] - 1.0];
        let pa = forward(&pparams, &pconfig, &model::ModelInput::points(&[pts]).unwrap(), &[], &[]).map_err(|e| e.to_string())?;
        let pb = forward(&pparams, &pconfig, &model::ModelInput::points(&[moved]).unwrap(), &[], &[]).map_err(|e| e.to_string())?;
        for p in 0..5 {
            if pa.at(6, 0, p) != pb.at(6, 0, p) {
                return Err(format!("point output at {p} saw a later input"));
            }
        }
    }
    Ok(())
}
