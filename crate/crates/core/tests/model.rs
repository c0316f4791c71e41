use act_core::audio::PatchSequence;
use act_core::model::{
    ActModel, AttentionMask, DecoderConfig, DecoderVariant, EncoderConfig, ForwardCtx, ModelConfig,
};
use act_core::numerics::{param_gradcheck, Graph, Tensor};
use act_core::text::{EOS, SOS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_config(d: usize, heads: usize, enc_layers: usize, dec_layers: usize) -> ModelConfig {
    let encoder = EncoderConfig {
        d_model: d,
        heads,
        layers: enc_layers,
        ffn_dim: 2 * d,
        dropout: 0.0,
        patch_frames: 2,
        mel_bins: 4,
        max_patches: 8,
    };
    let decoder = DecoderConfig {
        d_model: d,
        heads,
        layers: dec_layers,
        ffn_dim: 2 * d,
        dropout: 0.0,
    };
    ModelConfig::new(encoder, decoder, 9, 3)
}

fn random_patches(n: usize, t: usize, f: usize, rng: &mut impl Rng) -> PatchSequence {
    let data = (0..n * t * f).map(|_| rng.gen_range(-2.0..2.0)).collect();
    PatchSequence::new(data, n, t, f).unwrap()
}

fn zero_param(m: &mut ActModel, name: &str) {
    let id = m.params.id(name).unwrap_or_else(|| panic!("no {name}"));
    m.params.get_mut(id).data_mut().fill(0.0);
}

fn rows_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn zero_embedding_weights_give_zero_rows() {
    let mut m = ActModel::new(toy_config(8, 2, 1, 1), 1).unwrap();
    for n in ["encoder.patch_embed", "encoder.cls_token", "encoder.pos_embed"] {
        zero_param(&mut m, n);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = random_patches(5, 2, 4, &mut rng);
    let mut g = Graph::new();
    let e = m.embed_patches(&mut g, &p, &mut ForwardCtx::eval()).unwrap();
    assert_eq!(g.shape(e), &[6, 8]);
    assert!(g.value(e).data().iter().all(|&v| v == 0.0));
}

#[test]
fn full_scale_patch_count_gives_126_rows() {
    let encoder = EncoderConfig {
        layers: 0,
        ..EncoderConfig::full_scale()
    };
    let cfg = ModelConfig::new(encoder, DecoderConfig { layers: 0, ..DecoderConfig::default() }, 5, 1);
    let m = ActModel::new(cfg, 0).unwrap();
    let p = PatchSequence::new(vec![0.1; 125 * 256], 125, 4, 64).unwrap();
    let mut g = Graph::new();
    let e = m.embed_patches(&mut g, &p, &mut ForwardCtx::eval()).unwrap();
    assert_eq!(g.shape(e), &[126, 768]);
}

#[test]
fn too_many_patches_rejected() {
    let m = ActModel::new(toy_config(8, 2, 1, 1), 1).unwrap();
    let p = PatchSequence::new(vec![0.0; 9 * 8], 9, 2, 4).unwrap();
    let mut g = Graph::new();
    assert!(m.embed_patches(&mut g, &p, &mut ForwardCtx::eval()).is_err());
}

#[test]
fn patch_perturbation_is_local_in_embedding() {
    let m = ActModel::new(toy_config(8, 2, 1, 1), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = random_patches(5, 2, 4, &mut rng);
    let embed = |p: &PatchSequence| {
        let mut g = Graph::new();
        let e = m.embed_patches(&mut g, p, &mut ForwardCtx::eval()).unwrap();
        g.value(e).clone()
    };
    let base = embed(&p);
    for j in 0..5 {
        let mut q = p.clone();
        q.data[j * 8 + 3] += 0.7;
        let out = embed(&q);
        for r in 0..6 {
            let same = base.row(r) == out.row(r);
            assert_eq!(same, r != j + 1, "patch {j} row {r}");
        }
    }
}

#[test]
fn single_key_attention_returns_projected_value() {
    let m = ActModel::new(toy_config(4, 1, 1, 1), 5).unwrap();
    let mut g = Graph::new();
    let xq = g.constant(Tensor::matrix(1, 4, vec![0.3, -0.1, 2.0, 0.5]).unwrap());
    let xkv = g.constant(Tensor::matrix(1, 4, vec![1.0, 0.2, -0.4, 0.9]).unwrap());
    let mut ctx = ForwardCtx::eval().recording();
    let out = m
        .attention_block(&mut g, "encoder.layers.0.attn", xq, xkv, None, &mut ctx)
        .unwrap();
    let w = g.value(ctx.attention[0].heads[0]).data().to_vec();
    assert_eq!(w, vec![1.0]);
    // expected: (xkv·W_v + b_v)·W_o + b_o
    let p = |n: &str| m.params.by_name(&format!("encoder.layers.0.attn.{n}")).unwrap().clone();
    let kv = Tensor::matrix(1, 4, vec![1.0, 0.2, -0.4, 0.9]).unwrap();
    let v = kv.matmul(&p("w_v")).unwrap();
    let v: Vec<f64> = v.data().iter().zip(p("b_v").data()).map(|(a, b)| a + b).collect();
    let o = Tensor::matrix(1, 4, v).unwrap().matmul(&p("w_o")).unwrap();
    for (j, x) in o.data().iter().enumerate() {
        let expect = x + p("b_o").data()[j];
        assert!((g.value(out).data()[j] - expect).abs() < 1e-14);
    }
}

#[test]
fn identical_keys_give_uniform_weights() {
    let m = ActModel::new(toy_config(8, 2, 1, 1), 6).unwrap();
    let mut g = Graph::new();
    let xq = g.constant(Tensor::randn(&[3, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(1)));
    let row = [0.4, -1.0, 0.2, 0.0, 1.5, -0.3, 0.8, 0.1];
    let xkv = g.constant(Tensor::matrix(5, 8, row.repeat(5)).unwrap());
    let mut ctx = ForwardCtx::eval().recording();
    m.attention_block(&mut g, "encoder.layers.0.attn", xq, xkv, None, &mut ctx)
        .unwrap();
    for &h in &ctx.attention[0].heads {
        for &w in g.value(h).data() {
            assert!((w - 0.2).abs() < 1e-15);
        }
    }
}

#[test]
fn attention_matches_dense_oracle() {
    let m = ActModel::new(toy_config(2, 1, 1, 1), 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let xq_t = Tensor::randn(&[2, 2], 1.0, &mut rng);
    let xkv_t = Tensor::randn(&[2, 2], 1.0, &mut rng);
    let mut g = Graph::new();
    let xq = g.constant(xq_t.clone());
    let xkv = g.constant(xkv_t.clone());
    let out = m
        .attention_block(&mut g, "encoder.layers.0.attn", xq, xkv, None, &mut ForwardCtx::eval())
        .unwrap();

    // Hand-rolled Softmax(QKᵀ/√d_k)V·W_o with explicit loops.
    let p = |n: &str| m.params.by_name(&format!("encoder.layers.0.attn.{n}")).unwrap().clone();
    let lin = |x: &Tensor, w: &Tensor, b: &Tensor| -> [[f64; 2]; 2] {
        let mut o = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                o[i][j] = b.data()[j] + (0..2).map(|k| x.get(&[i, k]) * w.get(&[k, j])).sum::<f64>();
            }
        }
        o
    };
    let q = lin(&xq_t, &p("w_q"), &p("b_q"));
    let k = lin(&xkv_t, &p("w_k"), &Tensor::zeros(&[2]));
    let v = lin(&xkv_t, &p("w_v"), &p("b_v"));
    let mut heads = [[0.0; 2]; 2];
    for i in 0..2 {
        let s: Vec<f64> = (0..2)
            .map(|j| (q[i][0] * k[j][0] + q[i][1] * k[j][1]) / 2f64.sqrt())
            .collect();
        let z: f64 = s.iter().map(|x| x.exp()).sum();
        for c in 0..2 {
            heads[i][c] = (0..2).map(|j| s[j].exp() / z * v[j][c]).sum();
        }
    }
    let heads_t = Tensor::matrix(2, 2, heads.concat()).unwrap();
    let expected = lin(&heads_t, &p("w_o"), &p("b_o"));
    assert!(rows_close(g.value(out).data(), &expected.concat(), 1e-13));
}

#[test]
fn mask_shape_checked() {
    let m = ActModel::new(toy_config(4, 2, 1, 1), 1).unwrap();
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[3, 4]));
    let mask = AttentionMask::Additive(Tensor::zeros(&[2, 3]));
    let r = m.attention_block(&mut g, "encoder.layers.0.attn", x, x, Some(&mask), &mut ForwardCtx::eval());
    assert!(matches!(r, Err(act_core::Error::InvalidArgument(_))));
}

#[test]
fn zero_sublayers_reduce_encoder_to_final_norm() {
    let mut m = ActModel::new(toy_config(8, 2, 2, 1), 9).unwrap();
    for l in 0..2 {
        for n in ["attn.w_o", "attn.b_o", "ffn.w2", "ffn.b2"] {
            zero_param(&mut m, &format!("encoder.layers.{l}.{n}"));
        }
    }
    let x = Tensor::randn(&[4, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(2));
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let out = m.encoder_forward(&mut g, xv, &mut ForwardCtx::eval()).unwrap();
    let gamma = m.params.by_name("encoder.final_ln.gamma").unwrap();
    let beta = m.params.by_name("encoder.final_ln.beta").unwrap();
    let expected = act_core::numerics::layer_norm(&x, gamma, beta, 1e-5).unwrap();
    assert!(rows_close(g.value(out).data(), expected.data(), 1e-12));
}

#[test]
fn encoder_is_permutation_equivariant_without_positions() {
    let m = ActModel::new(toy_config(8, 2, 2, 1), 10).unwrap();
    let x = Tensor::randn(&[5, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(3));
    let perm = [3, 0, 4, 1, 2];
    let px: Vec<f64> = perm.iter().flat_map(|&r| x.row(r).to_vec()).collect();
    let px = Tensor::matrix(5, 8, px).unwrap();
    let run = |t: &Tensor| {
        let mut g = Graph::new();
        let v = g.constant(t.clone());
        let o = m.encoder_forward(&mut g, v, &mut ForwardCtx::eval()).unwrap();
        g.value(o).clone()
    };
    let a = run(&x);
    let b = run(&px);
    for (i, &r) in perm.iter().enumerate() {
        assert!(rows_close(b.row(i), a.row(r), 1e-12));
    }
}

#[test]
fn class_token_sees_every_patch() {
    let m = ActModel::new(toy_config(8, 2, 2, 1), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random_patches(6, 2, 4, &mut rng);
    let cls = |p: &PatchSequence| {
        let mut g = Graph::new();
        let e = m.encode(&mut g, p, &mut ForwardCtx::eval()).unwrap();
        g.value(e).row(0).to_vec()
    };
    let base = cls(&p);
    for j in 0..6 {
        let mut q = p.clone();
        q.data[j * 8] += 0.5;
        assert_ne!(cls(&q), base, "patch {j}");
    }
}

fn memory_for(m: &ActModel, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = random_patches(4, 2, 4, &mut rng);
    m.encode_memory(&p).unwrap()
}

#[test]
fn decoder_is_causal() {
    let m = ActModel::new(toy_config(8, 2, 1, 2), 12).unwrap();
    let mem = memory_for(&m, 1);
    let logits = |toks: &[usize]| {
        let mut g = Graph::new();
        let mv = g.constant(mem.clone());
        let l = m.decoder_forward(&mut g, toks, mv, &mut ForwardCtx::eval()).unwrap();
        g.value(l).clone()
    };
    let toks = [SOS, 4, 7, 5, 8, 6];
    let base = logits(&toks);
    assert_eq!(base.shape(), &[6, 9]);
    for j in 1..toks.len() {
        let mut t = toks;
        t[j] = if t[j] == 4 { 5 } else { 4 };
        let out = logits(&t);
        for r in 0..j {
            assert_eq!(out.row(r), base.row(r), "row {r} moved when token {j} changed");
        }
        assert_ne!(out.row(j), base.row(j));
    }
}

#[test]
fn sos_only_prefix_gives_one_row() {
    let m = ActModel::new(toy_config(8, 2, 1, 1), 13).unwrap();
    let mem = memory_for(&m, 2);
    let mut g = Graph::new();
    let mv = g.constant(mem);
    let l = m.decoder_forward(&mut g, &[SOS], mv, &mut ForwardCtx::eval()).unwrap();
    assert_eq!(g.shape(l), &[1, 9]);
    assert!(m.decoder_forward(&mut g, &[], mv, &mut ForwardCtx::eval()).is_err());
}

#[test]
fn attention_rows_are_distributions_and_masked() {
    let m = ActModel::new(toy_config(8, 2, 2, 2), 14).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = random_patches(5, 2, 4, &mut rng);
    let mut g = Graph::new();
    let mut ctx = ForwardCtx::eval().recording();
    let enc = m.encode(&mut g, &p, &mut ctx).unwrap();
    m.decoder_forward(&mut g, &[SOS, 4, 5, 6, EOS], enc, &mut ctx).unwrap();
    assert_eq!(ctx.attention.len(), 2 + 2 * 2);
    for rec in &ctx.attention {
        for &h in &rec.heads {
            let t = g.value(h);
            for r in 0..t.rows() {
                let s: f64 = t.row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-6, "{} row {r}", rec.site);
                if rec.site.ends_with("self_attn") && rec.site.starts_with("decoder") {
                    assert!(t.row(r)[r + 1..].iter().all(|&w| w == 0.0));
                }
            }
        }
    }
}

#[test]
fn zero_tag_head_gives_half() {
    let mut m = ActModel::new(toy_config(8, 2, 1, 1), 15).unwrap();
    zero_param(&mut m, "tag_head.weight");
    zero_param(&mut m, "tag_head.bias");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = random_patches(3, 2, 4, &mut rng);
    let mut g = Graph::new();
    let enc = m.encode(&mut g, &p, &mut ForwardCtx::eval()).unwrap();
    let probs = m.tagging_head_forward(&mut g, enc).unwrap();
    assert_eq!(g.value(probs).data(), &[0.5, 0.5, 0.5]);
}

#[test]
fn eval_mode_is_deterministic_and_train_mode_uses_dropout() {
    let mut cfg = toy_config(8, 2, 1, 1);
    cfg.encoder.dropout = 0.3;
    cfg.decoder.dropout = 0.3;
    let m = ActModel::new(cfg, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = random_patches(3, 2, 4, &mut rng);
    let run = |ctx: &mut ForwardCtx| {
        let mut g = Graph::new();
        let enc = m.encode(&mut g, &p, ctx).unwrap();
        let l = m.decoder_forward(&mut g, &[SOS, 4, 5], enc, ctx).unwrap();
        g.value(l).clone()
    };
    assert_eq!(run(&mut ForwardCtx::eval()), run(&mut ForwardCtx::eval()));
    assert_eq!(run(&mut ForwardCtx::train(3)), run(&mut ForwardCtx::train(3)));
    assert_ne!(run(&mut ForwardCtx::train(3)), run(&mut ForwardCtx::eval()));
}

#[test]
fn decoder_param_counts_match_closed_form() {
    let frozen = [
        (DecoderVariant::Small, 14_209_693usize),
        (DecoderVariant::Medium, 22_615_709),
        (DecoderVariant::Large, 31_021_725),
    ];
    for (v, expected) in frozen {
        let cfg = ModelConfig::new(EncoderConfig::full_scale(), DecoderConfig::variant(v), 5277, 527);
        assert_eq!(cfg.decoder_param_count(), expected, "{v:?}");
        let from_layout: usize = ActModel::param_shapes(&cfg)
            .iter()
            .filter(|(n, _)| n.starts_with("decoder."))
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        assert_eq!(from_layout, expected, "{v:?}");
    }
}

#[test]
fn from_params_names_mismatched_tensor() {
    let cfg = toy_config(8, 2, 1, 1);
    let m = ActModel::new(cfg.clone(), 1).unwrap();
    let mut bigger = cfg.clone();
    bigger.encoder.d_model = 16;
    bigger.decoder.d_model = 16;
    let err = ActModel::from_params(bigger, m.params.clone()).unwrap_err();
    assert!(err.to_string().contains("encoder.patch_embed"), "{err}");
}

#[test]
fn toy_model_passes_gradient_check() {
    let mut cfg = toy_config(8, 2, 2, 1);
    cfg.init_std = 0.5;
    let m = ActModel::new(cfg, 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = random_patches(3, 2, 4, &mut rng);
    let tokens = [SOS, 4, 6, 5, EOS];
    let report = param_gradcheck(
        &m.params,
        |g, store| {
            let mm = ActModel::from_params(m.config.clone(), store.clone())?;
            let mut ctx = ForwardCtx::eval();
            let enc = mm.encode(g, &p, &mut ctx)?;
            let logits = mm.decoder_forward(g, &tokens[..4], enc, &mut ctx)?;
            let targets: Vec<Option<usize>> = tokens[1..].iter().map(|&t| Some(t)).collect();
            let ce = g.smoothed_cross_entropy(logits, &targets, 0.1)?;
            let tag = mm.tagging_logits(g, enc)?;
            let bce = g.bce_with_logits(tag, &[1.0, 0.0, 1.0])?;
            g.add(ce, bce)
        },
        1e-4,
    )
    .unwrap();
    assert!(
        report.max_relative_error < 1e-4,
        "{} at {:?}",
        report.max_relative_error,
        report.worst
    );
}
