mod common;

use common::{path, rel_err};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rnnt_ner::corpus::GoldAlignment;
use rnnt_ner::model::{Architecture, EncoderKind, LossKind, Model, ModelConfig};

fn tiny(arch: Architecture, encoder: EncoderKind, seed: u64) -> Model {
    Model::new(ModelConfig {
        architecture: arch,
        encoder,
        input_vocab: 6,
        num_labels: 3,
        hidden: 3,
        layers: 2,
        heads: 1,
        window: 2,
        init_scale: 0.5,
        seed,
    })
    .unwrap()
}

fn worst_fd_error(model: &Model, tokens: &[u32], gold: &GoldAlignment, loss: LossKind) -> f64 {
    let (_, grads) = model.loss_and_gradients(tokens, gold, loss).unwrap();
    let analytic: Vec<f64> = grads.tensors().into_iter().flat_map(|(_, m)| m.data.clone()).collect();
    let mut worst = 0.0f64;
    let mut k = 0;
    for ti in 0..model.tensors().len() {
        for i in 0..model.tensors()[ti].1.data.len() {
            let x = model.tensors()[ti].1.data[i];
            let f = |v: f64| {
                let mut m = model.clone();
                m.tensors_mut()[ti].data[i] = v;
                m.loss(tokens, gold, loss).unwrap()
            };
            worst = worst.max(rel_err(common::central_diff(f, x, 1e-5), analytic[k]));
            k += 1;
        }
    }
    worst
}

#[test]
fn pipeline_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for encoder in [EncoderKind::Attention, EncoderKind::Bigru] {
        let tokens: Vec<u32> = (0..4).map(|_| rng.gen_range(0..6)).collect();
        let gold = GoldAlignment { targets: vec![rng.gen_range(0..3), rng.gen_range(0..3)], path: path(&[0, 1, 0, 1]) };
        let m = tiny(Architecture::Rnnt, encoder, rng.gen());
        for loss in [LossKind::Unconstrained, LossKind::Fixed, LossKind::Constrained { delta: 1 }] {
            let err = worst_fd_error(&m, &tokens, &gold, loss);
            assert!(err < 1e-4, "{encoder:?} {loss:?}: {err}");
        }
        let s = tiny(Architecture::Seq2seq, encoder, rng.gen());
        let err = worst_fd_error(&s, &tokens, &gold, LossKind::Fixed);
        assert!(err < 1e-4, "{encoder:?} seq2seq: {err}");
    }
}

#[test]
fn lattice_rows_are_distributions() {
    let m = tiny(Architecture::Rnnt, EncoderKind::Attention, 3);
    let lat = m.build_lattice(&[1, 2, 3, 4, 5], &[0, 2, 1]).unwrap();
    for t in 0..5 {
        for u in 0..3 {
            let mass = lat.label(t, u).exp() + lat.blank(t, u).exp();
            assert!(mass <= 1.0 + 1e-12);
        }
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for arch in [Architecture::Rnnt, Architecture::Seq2seq] {
        let m = tiny(arch, EncoderKind::Bigru, 9);
        let p = dir.path().join("m.bin");
        m.save(&p).unwrap();
        assert_eq!(Model::load(&p).unwrap(), m);
    }
}
