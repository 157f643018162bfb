use proptest::prelude::*;
use rand::rngs::SmallRng;
use rand::SeedableRng;

use radiobc::bits::Bits;
use radiobc::broadcast::multi_message_known;
use radiobc::constants::Constants;
use radiobc::engine::{trace_hash, EngineConfig, Trace};
use radiobc::gather::{gathering_algorithm, GatherPlan};
use radiobc::graph::{ceil_log2, generate_graph, GraphFamily};
use radiobc::gst::{build_gst_oracle, validate_gst, virtual_distances, GstLabels};
use radiobc::harness::potential_trace;
use radiobc::primitives::NoisePolicy;
use radiobc::rlnc::{Generation, KnowledgeSpace};

fn family() -> impl Strategy<Value = GraphFamily> {
    prop_oneof![
        (2usize..40).prop_map(|n| GraphFamily::Path { n }),
        (3usize..30).prop_map(|n| GraphFamily::Cycle { n }),
        (2usize..30).prop_map(|n| GraphFamily::Star { n }),
        (1usize..6, 1usize..8).prop_map(|(rows, cols)| GraphFamily::Grid { rows, cols }),
        (2usize..40).prop_map(|n| GraphFamily::RandomTree { n }),
        (4usize..40, 0.1f64..0.5).prop_map(|(n, p)| GraphFamily::GnpConnected { n, p }),
        (1usize..10, 0usize..4).prop_map(|(spine, legs)| GraphFamily::Caterpillar { spine, legs }),
    ]
}

fn mu_of(mask: u32, g: usize) -> Bits {
    Bits::from_bools(&(0..g).map(|i| mask >> i & 1 == 1).collect::<Vec<_>>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn oracle_gst_is_valid_and_vdist_bounded(f in family(), seed in 0u64..1000) {
        let g = generate_graph(&f, seed).unwrap();
        let labels = build_gst_oracle(&g, 0);
        let report = validate_gst(&g, &labels);
        prop_assert!(report.ok(), "{:?}", report.violations);
        let l = ceil_log2(g.node_count()).max(1) as u32;
        prop_assert!(virtual_distances(&g, &labels).iter().all(|&d| d <= 2 * l));
        let back = GstLabels::parse(&labels.export()).unwrap();
        prop_assert_eq!(back, labels);
    }

    #[test]
    fn knowledge_stays_consistent(g in 1usize..24, inserts in 0usize..40, seed in 0u64..1000) {
        let mut rng = SmallRng::seed_from_u64(seed);
        let gen = Generation::random(0, g, 16, &mut rng);
        let full = KnowledgeSpace::full(&gen);
        let mut x = KnowledgeSpace::new(0, g, 16);
        for _ in 0..inserts {
            let before = x.rank();
            let (c, b) = full.encode_random(&mut rng).unwrap();
            let innovative = x.insert(c, b).unwrap();
            prop_assert_eq!(x.rank(), before + usize::from(innovative));
        }
        prop_assert!(x.rank() <= g);
        prop_assert!(x.consistent_with(&gen));
        prop_assert_eq!(x.decode().is_some(), x.is_full());
        if let Some(m) = x.decode() {
            prop_assert_eq!(m, gen.messages);
        }
    }

    /// A node decodes exactly when it is infected by every nonzero `mu`.
    #[test]
    fn infected_by_all_iff_decodable(g in 1usize..=12, rank in 0usize..=12, seed in 0u64..1000) {
        let mut rng = SmallRng::seed_from_u64(seed);
        let gen = Generation::random(0, g, 4, &mut rng);
        let full = KnowledgeSpace::full(&gen);
        let mut x = KnowledgeSpace::new(0, g, 4);
        while x.rank() < rank.min(g) {
            let (c, b) = full.encode_random(&mut rng).unwrap();
            x.insert(c, b).unwrap();
        }
        let all = (1u32..1 << g).all(|m| x.is_infected(&mu_of(m, g)).unwrap());
        prop_assert_eq!(all, x.decode().is_some());
        // Uninfected vectors form the orthogonal complement: 2^(g − rank) of them, zero included.
        let uninfected = (1u32..1 << g).filter(|&m| !x.is_infected(&mu_of(m, g)).unwrap()).count();
        prop_assert_eq!(uninfected + 1, 1usize << (g - x.rank()));
    }

    #[test]
    fn gathering_copies_arrive_on_time_or_conflict(f in family(), k in 1usize..6, seed in 0u64..1000) {
        let g = generate_graph(&f, seed).unwrap();
        let mut rng = SmallRng::seed_from_u64(seed);
        let origins: Vec<usize> = (0..k).map(|i| (i * 7 + seed as usize) % g.node_count()).collect();
        let plan = GatherPlan::random(&g, 0, &origins, 1, &mut rng).unwrap();
        let r = gathering_algorithm(&g, &plan, &EngineConfig::with_seed(seed));
        prop_assert!(r.trace.transmissions().all(|(round, _, _)| round <= plan.round_cap()));
        for (i, x) in plan.copies.iter().enumerate() {
            let origin = plan.origins[x.message];
            match r.arrivals[i] {
                Some(a) => prop_assert_eq!(a, plan.dist(x)),
                None if origin == plan.root => {}
                None => {
                    // Lost copies always have a rival within distance 2.
                    let rival = plan.copies.iter().enumerate().any(|(j, y)| {
                        j != i && plan.origins[y.message] != plan.root && plan.dist(x).abs_diff(plan.dist(y)) <= 2
                    });
                    prop_assert!(rival, "copy {i} lost without a conflicting copy");
                }
            }
        }
    }

    #[test]
    fn same_seed_same_trace(f in family(), seed in 0u64..1000) {
        let g = generate_graph(&f, seed).unwrap();
        let msgs = vec![Bits::random(8, &mut SmallRng::seed_from_u64(seed)); 2];
        let c = Constants::default();
        let run = |s| multi_message_known(&g, 0, &msgs, NoisePolicy::Noise, &c, &EngineConfig::with_seed(s)).unwrap();
        let (a, b) = (run(seed), run(seed));
        prop_assert_eq!(trace_hash(&a.trace), trace_hash(&b.trace));
        prop_assert_eq!(Trace::parse(&a.trace.export()).unwrap(), a.trace);
    }

    #[test]
    fn potential_never_increases(f in family(), seed in 0u64..1000, target in 0usize..1000) {
        let g = generate_graph(&f, seed).unwrap();
        let mut rng = SmallRng::seed_from_u64(seed);
        let msgs: Vec<Bits> = (0..3).map(|_| Bits::random(8, &mut rng)).collect();
        let r = multi_message_known(&g, 0, &msgs, NoisePolicy::Noise, &Constants::default(), &EngineConfig::with_seed(seed)).unwrap();
        let labels = r.labels.as_ref().unwrap();
        let w = r.windows[0];
        let phi = potential_trace(&r.trace, labels, target % g.node_count(), None, w.log_n, Some(w)).unwrap();
        prop_assert!(phi.windows(2).all(|x| x[1] <= x[0]));
        if r.success() {
            prop_assert_eq!(*phi.last().unwrap(), 0);
        }
    }
}

#[test]
fn gather_then_broadcast_smoke() {
    let g = generate_graph(&GraphFamily::GnpConnected { n: 40, p: 0.15 }, 3).unwrap();
    let mut rng = SmallRng::seed_from_u64(3);
    let origins = [5, 17, 33, 39];
    let plan = GatherPlan::random(&g, 0, &origins, 1, &mut rng).unwrap();
    let gathered = gathering_algorithm(&g, &plan, &EngineConfig::with_seed(3));
    assert!(gathered.all_received());
    let msgs: Vec<Bits> = (0..origins.len()).map(|_| Bits::random(16, &mut rng)).collect();
    let r = multi_message_known(&g, 0, &msgs, NoisePolicy::Noise, &Constants::default(), &EngineConfig::with_seed(3)).unwrap();
    assert!(r.success(), "{:?}", r.failure);
}
