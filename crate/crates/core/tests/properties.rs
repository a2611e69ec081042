use fedq::chains::{induced_chain, stationary_distribution, stationary_residual, BehaviorPolicy};
use fedq::federated::{aggregate, importance_weights, sync_local_update};
use fedq::mdp::{bellman_operator, QTable, TabularMdp};
use proptest::prelude::*;

fn normalize(w: Vec<f64>) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

prop_compose! {
    fn arb_mdp()(ns in 1usize..5, na in 1usize..5)
        (gamma in 0.0..0.99f64,
         rewards in prop::collection::vec(0.0..=1.0f64, ns * na),
         weights in prop::collection::vec(prop::collection::vec(0.01..1.0f64, ns), ns * na),
         ns in Just(ns), na in Just(na)) -> TabularMdp {
        let transition = weights.into_iter().flat_map(normalize).collect();
        TabularMdp::new(ns, na, gamma, rewards, transition).unwrap()
    }
}

fn arb_table(mdp: &TabularMdp) -> impl Strategy<Value = QTable> {
    let (ns, na, b) = (mdp.n_states(), mdp.n_actions(), mdp.value_bound());
    prop::collection::vec(0.0..=b, ns * na).prop_map(move |v| QTable::from_vec(ns, na, v).unwrap())
}

fn mdp_and_tables() -> impl Strategy<Value = (TabularMdp, QTable, QTable)> {
    arb_mdp().prop_flat_map(|m| {
        let (a, b) = (arb_table(&m), arb_table(&m));
        (Just(m), a, b)
    })
}

proptest! {
    #[test]
    fn bellman_operator_is_a_gamma_contraction((mdp, q1, q2) in mdp_and_tables()) {
        let d = bellman_operator(&mdp, &q1).unwrap().linf_distance(&bellman_operator(&mdp, &q2).unwrap()).unwrap();
        prop_assert!(d <= mdp.gamma() * q1.linf_distance(&q2).unwrap() + 1e-12);
    }

    #[test]
    fn bellman_operator_is_monotone((mdp, q1, q2) in mdp_and_tables()) {
        let lo: Vec<f64> = q1.as_slice().iter().zip(q2.as_slice()).map(|(a, b)| a.min(*b)).collect();
        let lo = QTable::from_vec(mdp.n_states(), mdp.n_actions(), lo).unwrap();
        let (t_lo, t_hi) = (bellman_operator(&mdp, &lo).unwrap(), bellman_operator(&mdp, &q1).unwrap());
        for (a, b) in t_lo.as_slice().iter().zip(t_hi.as_slice()) {
            prop_assert!(a <= b);
        }
        let (v_lo, v_hi) = (lo.greedy_value(), q1.greedy_value());
        for (a, b) in v_lo.iter().zip(&v_hi) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn sync_update_stays_in_value_range(
        (mdp, q, _) in mdp_and_tables(),
        eta in 0.0..=1.0f64,
        seed in any::<u64>(),
    ) {
        let mut rng = fedq::RngStream::new(seed, 0, 0);
        let draws = fedq::samplers::generative_draw(&mdp, &mut rng);
        let next = sync_local_update(&mdp, &q, &draws, eta);
        prop_assert!(next.min_entry() >= 0.0);
        prop_assert!(next.max_entry() <= mdp.value_bound() * (1.0 + 1e-15));
    }

    #[test]
    fn importance_weights_sum_to_one_and_follow_visits(
        counts in prop::collection::vec(prop::collection::vec(0u32..200, 3), 1..12),
        eta in 0.001..0.999f64,
    ) {
        let refs: Vec<&[u32]> = counts.iter().map(|c| c.as_slice()).collect();
        let w = importance_weights(&refs, eta).unwrap();
        for pair in 0..3 {
            let ws = w.pair(pair);
            prop_assert!((ws.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for i in 0..ws.len() {
                // Strictly positive in exact arithmetic; may underflow for eta near 1.
                prop_assert!(ws[i] >= 0.0);
                for j in 0..ws.len() {
                    if counts[i][pair] > counts[j][pair] {
                        prop_assert!(ws[i] >= ws[j]);
                    }
                    if counts[i][pair] == counts[j][pair] {
                        prop_assert_eq!(ws[i], ws[j]);
                    }
                }
            }
        }
        // Adding the same number of visits to every agent leaves the weights unchanged.
        let shifted: Vec<Vec<u32>> = counts.iter().map(|c| c.iter().map(|n| n + 7).collect()).collect();
        let refs: Vec<&[u32]> = shifted.iter().map(|c| c.as_slice()).collect();
        let w2 = importance_weights(&refs, eta).unwrap();
        for pair in 0..3 {
            for (a, b) in w.pair(pair).iter().zip(w2.pair(pair)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn aggregate_stays_within_local_range(
        tables in prop::collection::vec(prop::collection::vec(0.0..10.0f64, 4), 1..8),
        counts in prop::collection::vec(prop::collection::vec(0u32..50, 4), 8),
        eta in 0.01..0.99f64,
    ) {
        let k = tables.len();
        let qs: Vec<QTable> = tables.into_iter().map(|v| QTable::from_vec(2, 2, v).unwrap()).collect();
        let refs: Vec<&QTable> = qs.iter().collect();
        let count_refs: Vec<&[u32]> = counts[..k].iter().map(|c| c.as_slice()).collect();
        let w = importance_weights(&count_refs, eta).unwrap();
        let global = aggregate(&refs, &w).unwrap();
        for pair in 0..4 {
            let lo = qs.iter().map(|q| q.as_slice()[pair]).fold(f64::INFINITY, f64::min);
            let hi = qs.iter().map(|q| q.as_slice()[pair]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(global.as_slice()[pair] >= lo && global.as_slice()[pair] <= hi);
        }
    }

    #[test]
    fn stationary_occupancy_is_a_fixed_point(mdp in arb_mdp(), seed in any::<u64>()) {
        let mut rng = fedq::RngStream::new(seed, 0, 0);
        let rows = (0..mdp.n_states())
            .map(|_| normalize((0..mdp.n_actions()).map(|_| rng.uniform() + 0.01).collect()))
            .collect();
        let policy = BehaviorPolicy::from_rows(rows).unwrap();
        let chain = induced_chain(&mdp, &policy).unwrap();
        let st = stationary_distribution(&chain, &policy.start_distribution(0), 1e-12, 1_000_000).unwrap();
        prop_assert!(stationary_residual(&chain, &st.occupancy) <= 1e-12);
        prop_assert!((st.occupancy.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(st.occupancy.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn mdp_json_round_trip(mdp in arb_mdp()) {
        let back = TabularMdp::from_json(&mdp.to_json()).unwrap();
        prop_assert_eq!(back, mdp);
    }
}
