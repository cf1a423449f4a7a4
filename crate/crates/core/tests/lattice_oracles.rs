mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rnnt_ner::lattice::{
    forward, loss_constrained, loss_fixed, loss_gradients, loss_unconstrained, ConstraintMask, Lattice, LatticeBatch,
    LossMode,
};

#[test]
fn unconstrained_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let (t, u) = (rng.gen_range(1..=6), rng.gen_range(0..=5));
        let lat = random_lattice(&mut rng, t, u);
        let got = loss_unconstrained(&lat).unwrap();
        assert!((got - brute_unconstrained(&lat)).abs() < 1e-9, "T={t} U={u}");
    }
}

#[test]
fn constrained_matches_filtered_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let (t, u) = (rng.gen_range(1..=6), rng.gen_range(0..=5));
        let lat = random_lattice(&mut rng, t, u);
        let gold = random_counts(&mut rng, t, u);
        let (dt, du) = (rng.gen_range(0..=3), rng.gen_range(0..=3));
        let got = loss_constrained(&lat, &path(&gold), dt, du).unwrap();
        let want = brute_constrained(&lat, &gold, dt, du);
        assert!((got - want).abs() < 1e-9, "T={t} U={u} gold={gold:?} delta=({dt},{du}): {got} vs {want}");
    }
}

#[test]
fn mode_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let (t, u) = (rng.gen_range(1..=6), rng.gen_range(0..=5));
        let lat = random_lattice(&mut rng, t, u);
        let gold = path(&random_counts(&mut rng, t, u));
        let fixed = loss_fixed(&lat, &gold).unwrap();
        assert!((loss_constrained(&lat, &gold, 0, 0).unwrap() - fixed).abs() <= 1e-12);
        let all = loss_unconstrained(&lat).unwrap();
        assert!((loss_constrained(&lat, &gold, t, u).unwrap() - all).abs() <= 1e-12);
        let mut prev = f64::NEG_INFINITY;
        for d in 0..=t.max(u) {
            let ll = loss_constrained(&lat, &gold, d, d).unwrap();
            assert!(ll >= prev, "log-likelihood fell at delta {d}");
            prev = ll;
        }
    }
}

#[test]
fn long_lattices_stay_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let lat = random_lattice(&mut rng, 400, 60);
    let ll = loss_unconstrained(&lat).unwrap();
    assert!(ll.is_finite() && ll < 0.0);
}

fn set(lat: &mut Lattice, is_label: bool, t: usize, u: usize, v: f64) {
    if is_label {
        lat.set_label(t, u, v).unwrap()
    } else {
        lat.set_blank(t, u, v).unwrap()
    }
}

#[test]
fn lattice_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for case in 0..30 {
        let (nt, nu) = (rng.gen_range(1..=5), rng.gen_range(0..=4));
        let lat = random_lattice(&mut rng, nt, nu);
        let gold = path(&random_counts(&mut rng, nt, nu));
        let mode = match case % 3 {
            0 => LossMode::Unconstrained,
            1 => LossMode::Fixed(&gold),
            _ => LossMode::Constrained { path: &gold, delta_t: 1, delta_u: 1 },
        };
        let g = loss_gradients(&lat, mode).unwrap();
        for t in 0..nt {
            for u in 0..=nu {
                for is_label in [true, false] {
                    if is_label && u == nu {
                        continue;
                    }
                    let x = if is_label { lat.label(t, u) } else { lat.blank(t, u) };
                    let nll = |v: f64| {
                        let mut l = lat.clone();
                        set(&mut l, is_label, t, u, v);
                        -mode.loglik(&l).unwrap()
                    };
                    let fd = central_diff(nll, x, 1e-5);
                    let an = if is_label { g.label(t, u) } else { g.blank(t, u) };
                    assert!(rel_err(fd, an) < 1e-5, "case {case} ({t},{u}) label={is_label}: fd {fd} vs {an}");
                }
            }
        }
    }
}

#[test]
fn occupancies_sum_to_path_length() {
    // every path has T + U steps, so the NLL gradients sum to -(T + U)
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..20 {
        let (nt, nu) = (rng.gen_range(1..=8), rng.gen_range(0..=6));
        let lat = random_lattice(&mut rng, nt, nu);
        let g = loss_gradients(&lat, LossMode::Unconstrained).unwrap();
        let total: f64 = g.d_label.iter().chain(&g.d_blank).sum();
        assert!((total + (nt + nu) as f64).abs() < 1e-9);
    }
}

#[test]
fn batch_forward_equals_single_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let items: Vec<Lattice> = (0..5)
        .map(|_| {
            let (t, u) = (rng.gen_range(1..=7), rng.gen_range(0..=4));
            random_lattice(&mut rng, t, u)
        })
        .collect();
    let batch = LatticeBatch::from_lattices(&items);
    let out = batch.forward_all(None).unwrap();
    for (lat, r) in items.iter().zip(&out) {
        assert_eq!(r.total, forward(lat, None).unwrap().total);
    }
}

#[test]
fn lattice_binary_matches_golden_bytes() {
    let lat = Lattice::new(2, 1, vec![-0.5, -0.25], vec![-1.0, -2.0, -0.125, -4.0]).unwrap();
    let golden = std::fs::read(fixture("lattice_t2_u1.bin")).unwrap();
    assert_eq!(lat.to_bytes().unwrap(), golden);
    assert_eq!(Lattice::from_bytes(&golden).unwrap(), lat);
}

#[test]
fn mask_binary_matches_golden_bytes() {
    let mask = ConstraintMask::from_path(&path(&[1, 0, 1]), 1, 0);
    let golden = std::fs::read(fixture("mask_t3_u2_dt1_du0.bin")).unwrap();
    assert_eq!(mask.to_bytes().unwrap(), golden);
}
