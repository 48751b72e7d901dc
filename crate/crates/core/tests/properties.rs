use dygc::analysis::{jaccard, jaccard_continuity};
use dygc::condense::apportion;
use dygc::gradflow::{Tape, Tensor};
use dygc::graphstore::Adjacency;
use dygc::spikegen::{SpikeConfig, SpikingGenerator};
use proptest::prelude::*;

fn adjacency(n: usize) -> impl Strategy<Value = Adjacency> {
    proptest::collection::vec((0..n, 0..n), 0..3 * n).prop_map(move |pairs| {
        let pairs: Vec<_> = pairs.into_iter().filter(|(u, v)| u != v).collect();
        Adjacency::from_edges(n, pairs).unwrap()
    })
}

proptest! {
    #[test]
    fn jaccard_symmetric_and_bounded(a in adjacency(6), b in adjacency(6)) {
        let ab = jaccard(&a, &b);
        prop_assert_eq!(ab, jaccard(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(jaccard(&a, &a), 1.0);
    }

    #[test]
    fn continuity_has_one_entry_per_transition(snaps in proptest::collection::vec(adjacency(4), 1..5)) {
        prop_assert_eq!(jaccard_continuity(&snaps).len(), snaps.len() - 1);
    }

    #[test]
    fn apportion_fills_every_seat(sizes in proptest::collection::vec(1usize..50, 1..6), extra in 0usize..40) {
        let m = sizes.len() + extra;
        let seats = apportion(&sizes, m).unwrap();
        prop_assert_eq!(seats.iter().sum::<usize>(), m);
        prop_assert!(seats.iter().all(|&s| s >= 1));
    }

    #[test]
    fn generated_snapshots_are_simple_graphs(
        xs in proptest::collection::vec(-2.0f64..2.0, 3 * 5 * 2),
        tau_raw in -3.0f64..3.0,
        u_th_raw in -1.0f64..1.0,
    ) {
        let gen = SpikingGenerator::<f64>::new(2, tau_raw, u_th_raw, &SpikeConfig::default()).unwrap();
        let x = Tensor::new(&[3, 5, 2], xs).unwrap();
        let tape = Tape::new();
        for s in gen.bind(&tape).generate(tape.constant(x)).unwrap() {
            let s = s.value();
            for i in 0..5 {
                prop_assert_eq!(s.at2(i, i), 0.0);
                for j in 0..5 {
                    prop_assert!(s.at2(i, j) == 0.0 || s.at2(i, j) == 1.0);
                    prop_assert_eq!(s.at2(i, j), s.at2(j, i));
                }
            }
        }
    }
}
