mod common;

use blockadmm::ProxTerm;
use common::{grid_prox, is_planar, random_case, KINDS};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn prox_matches_grid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for kind in KINDS {
        let n = if is_planar(kind) { 2 } else { 1 };
        for _ in 0..40 {
            let case = random_case(kind, n, &mut rng);
            let p = case.term.prox(&case.v, case.t).unwrap();
            let g = grid_prox(&case);
            assert!(
                (&p - &g).amax() <= 1e-3,
                "{kind}: prox {p:?} vs grid {g:?} (v = {:?}, t = {})",
                case.v,
                case.t
            );
            // The exact prox is never beaten by a grid point.
            assert!(case.objective(p.as_slice()) <= case.objective(g.as_slice()) + 1e-12);
        }
    }
}

#[test]
fn l1_moreau_decomposition() {
    // v = prox_{tλ|·|}(v) + Π_{[−tλ, tλ]}(v)
    let v = DVector::from_vec(vec![-2.0, -0.3, 0.0, 0.4, 1.7]);
    let (t, lambda) = (0.5, 1.2);
    let p = ProxTerm::l1(lambda).prox(&v, t).unwrap();
    let k = t * lambda;
    let proj = v.map(|x| x.clamp(-k, k));
    assert!((p + proj - &v).amax() <= 1e-15);
}

proptest! {
    #[test]
    fn prox_is_nonexpansive(seed in any::<u64>(), kind_idx in 0..KINDS.len()) {
        let kind = KINDS[kind_idx];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_case(kind, 4, &mut rng);
        let mut b = random_case(kind, 4, &mut rng);
        b.term = a.term.clone();
        b.t = a.t;
        let pa = a.term.prox(&a.v, a.t).unwrap();
        let pb = a.term.prox(&b.v, a.t).unwrap();
        let lhs = (&pa - &pb).norm_squared();
        // Firm nonexpansiveness implies the plain bound.
        prop_assert!(lhs <= (&pa - &pb).dot(&(&a.v - &b.v)) + 1e-12);
        prop_assert!(lhs.sqrt() <= (&a.v - &b.v).norm() + 1e-12);
    }
}
