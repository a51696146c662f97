mod common;

use common::{conjugate, divisibility_classes, iterate_kernel_oracle, morse_pair, morse_relations_oracle, orbit, synthetic, Block, Mat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use symgeo::iteration::{
    iterate_analysis, lcm_closure, morse_relations_check, nullity_of_iterate, nullity_partition, GrowthClass,
};
use symgeo::morse::{MorseContext, MorseOptions};
use symgeo::transport::PoincareMap;

fn classes(p: &Mat, n_max: usize) -> (Vec<u64>, Vec<Vec<usize>>) {
    let part = nullity_partition(&PoincareMap::new(p.clone()), p.nrows() / 2, n_max).unwrap();
    assert!(part.is_partition && part.nullity_constant && part.s_bound_holds);
    let mut members: Vec<Vec<usize>> = part.classes.iter().map(|c| c.members.clone()).filter(|m| !m.is_empty()).collect();
    members.sort();
    (part.m_values, members)
}

#[test]
fn rotation_by_a_third_plus_identity() {
    let p = PoincareMap::new(synthetic(&[Block::Rot(1.0 / 3.0), Block::Rot(0.0)]));
    let got: Vec<usize> = (1..=3).map(|n| nullity_of_iterate(&p, n).unwrap().nullity).collect();
    assert_eq!(got, vec![2, 2, 4]);
    for n in 1..=3 {
        assert_eq!(got[n - 1], iterate_kernel_oracle(&p.matrix, n, 1e-9));
    }
}

#[test]
fn torus_shear_has_nullity_two() {
    let p = PoincareMap::new(synthetic(&[Block::Shear, Block::Shear]));
    for n in [1, 2, 7, 40] {
        let r = nullity_of_iterate(&p, n).unwrap();
        assert_eq!(r.nullity, 2);
        assert!(!r.fallback);
    }
}

#[test]
fn third_and_quarter_turns_give_four_classes() {
    let p = synthetic(&[Block::Rot(1.0 / 3.0), Block::Rot(1.0 / 4.0)]);
    let (m, members) = classes(&p, 24);
    assert_eq!(m, vec![1, 3, 4, 12]);
    assert_eq!(members, divisibility_classes(&[3, 4], 24));
}

#[test]
fn hyperbolic_blocks_do_not_add_classes() {
    let p = synthetic(&[Block::Rot(1.0 / 3.0), Block::Hyperbolic(1.5)]);
    assert_eq!(classes(&p, 12).0, vec![1, 3]);
    let q = synthetic(&[Block::Hyperbolic(2.0), Block::Rot(0.0)]);
    let (m, members) = classes(&q, 10);
    assert_eq!(m, vec![1]);
    assert_eq!(members, vec![(1..=10).collect::<Vec<_>>()]);
    assert_eq!(lcm_closure(&[]), vec![1]);
}

#[test]
fn partition_matches_divisibility_enumeration() {
    let irrational = 2f64.sqrt() - 1.0;
    let maps: Vec<(Mat, Vec<u64>)> = vec![
        (synthetic(&[Block::Rot(1.0 / 6.0), Block::Rot(1.0 / 4.0), Block::Rot(0.0)]), vec![4, 6]),
        (synthetic(&[Block::Rot(2.0 / 5.0), Block::Shear]), vec![5]),
        (synthetic(&[Block::Rot(irrational), Block::Rot(1.0 / 7.0), Block::Hyperbolic(1.05)]), vec![7]),
        (conjugate(&synthetic(&[Block::Rot(1.0 / 3.0), Block::Rot(1.0 / 4.0)]), 11), vec![3, 4]),
        (synthetic(&[Block::Rot(0.5), Block::Rot(1.0 / 3.0), Block::Rot(1.0 / 5.0), Block::Rot(0.0)]), vec![2, 3, 5]),
        (conjugate(&synthetic(&[Block::Shear, Block::Rot(3.0 / 8.0)]), 12), vec![8]),
    ];
    for (i, (p, denoms)) in maps.iter().enumerate() {
        let part = nullity_partition(&PoincareMap::new(p.clone()), p.nrows() / 2, 64).unwrap();
        assert_eq!(&part.denominators, denoms, "map {i}");
        assert!(part.is_partition && part.s_bound_holds && !part.fallback_used, "map {i}");
        assert!(part.s <= 1 << (p.nrows() / 2));
        let mut members: Vec<Vec<usize>> =
            part.classes.iter().map(|c| c.members.clone()).filter(|m| !m.is_empty()).collect();
        members.sort();
        assert_eq!(members, divisibility_classes(denoms, 64), "map {i}");
        for n in 1..=64 {
            let fast = nullity_of_iterate(&PoincareMap::new(p.clone()), n).unwrap().nullity;
            assert_eq!(fast, iterate_kernel_oracle(p, n, 1e-8), "map {i} N = {n}");
        }
        assert!(part.nullity_constant, "map {i}");
    }
}

#[test]
fn iterate_nullity_at_one_matches_the_report() {
    for file in ["cylinder.spec", "s2xr.spec", "s2xr-twisted.spec", "screw.spec"] {
        let ctx = MorseContext::new(&orbit(file), MorseOptions::default()).unwrap();
        let r = ctx.index_report(1).unwrap();
        assert_eq!(nullity_of_iterate(ctx.poincare(), 1).unwrap().nullity, r.nullity, "{file}");
    }
}

#[test]
fn cylinder_iterates_are_bounded() {
    let ctx = MorseContext::new(&orbit("cylinder.spec"), MorseOptions::default()).unwrap();
    let t = iterate_analysis(&ctx, 12, false).unwrap();
    assert!(t.bounds_hold() && t.all_converged);
    assert_eq!(t.growth_class, GrowthClass::Bounded);
    assert!(t.reports.values().all(|r| r.mu == 0 && r.nullity == 2));
    assert!(t.row_seconds.is_none());
}

#[test]
fn s2xr_iterates_grow() {
    let ctx = MorseContext::new(&orbit("s2xr.spec"), MorseOptions::default()).unwrap();
    let t = iterate_analysis(&ctx, 8, true).unwrap();
    assert!(t.bounds_hold() && t.all_converged);
    assert_eq!(t.growth_class, GrowthClass::Superlinear);
    let mu: Vec<usize> = t.reports.values().map(|r| r.mu).collect();
    assert!(mu.windows(2).all(|w| w[0] < w[1]), "{mu:?}");
    let first = &t.bounds[0];
    assert_eq!((first.maslov_deviation, first.cz_deviation), (0, Some(0)));
    assert!(t.bounds.iter().all(|b| b.nullity_agrees));
    assert_eq!(t.row_seconds.as_ref().map(|s| s.len()), Some(8));
}

#[test]
fn morse_relation_hand_cases() {
    let r = morse_relations_check(&[3, 1, 4], &[3, 1, 4]);
    assert!(r.holds && r.q.iter().all(|&q| q == 0));
    let r = morse_relations_check(&[2, 1, 0], &[1, 0, 0]);
    assert!(r.holds);
    assert_eq!(r.q, vec![1, 0, 0, 0]);
    let r = morse_relations_check(&[0, 1], &[1, 0]);
    assert!(!r.holds && !r.weak_holds);
    assert_eq!(r.q[0], -1);
}

#[test]
fn morse_relations_match_the_division_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut strong = 0;
    for i in 0..200 {
        let (mu, beta) = morse_pair(&mut rng, i);
        let r = morse_relations_check(&mu, &beta);
        assert_eq!((r.holds, r.weak_holds), morse_relations_oracle(&mu, &beta), "μ {mu:?} β {beta:?}");
        assert!(!r.holds || r.weak_holds);
        strong += r.holds as usize;
    }
    assert!(strong >= 50, "only {strong} pairs satisfy the relations");
}
