use fastslow::exact::{kernel, mul_transpose, rank};
use fastslow::model::{Reaction, Timescale};
use fastslow::{build_structure, networks, parse_network, Network};
use proptest::prelude::*;

fn zero(m: &[Vec<i64>]) -> bool {
    m.iter().flatten().all(|&v| v == 0)
}

#[test]
fn shipped_networks_have_exact_conservation_structure() {
    for (name, text) in networks::ALL {
        let net = parse_network(text).unwrap();
        let st = build_structure(&net);
        assert!(zero(&mul_transpose(&st.g, &st.q)), "{name}: G Qᵀ ≠ 0");
        let g_fast: Vec<Vec<i64>> = st.fast_rows.iter().map(|&r| st.g[r].clone()).collect();
        assert!(
            zero(&mul_transpose(&g_fast, &st.q_fast)),
            "{name}: G_fast Q_fastᵀ ≠ 0"
        );
        assert_eq!(st.m() + st.rank_g, st.species, "{name}");
        assert_eq!(
            st.m_fast() + rank(&g_fast, st.species),
            st.species,
            "{name}"
        );
        assert!(
            st.check_invariants().is_empty(),
            "{name}: {:?}",
            st.check_invariants()
        );
    }
}

#[test]
fn chain_and_binding_bases() {
    let chain = build_structure(&networks::by_name("chain").unwrap());
    assert_eq!(chain.q, vec![vec![1, 1, 1]]);
    assert_eq!(chain.q_fast, vec![vec![1, 1, 1], vec![0, 0, 1]]);
    let binding = build_structure(&networks::by_name("binding").unwrap());
    assert_eq!(binding.m_fast(), 3);
    assert_eq!(binding.g_fast.len(), 2);
}

#[test]
fn invalid_fast_extensions_are_rejected() {
    let st = build_structure(&networks::by_name("chain").unwrap());
    // (1,0,0) is not conserved by A <-> B.
    assert!(st
        .with_fast_extension(vec![vec![1, 1, 1], vec![1, 0, 0]])
        .is_err());
    // Missing the slow conservation law (1,1,1) in the span.
    assert!(st.with_fast_extension(vec![vec![0, 0, 1]]).is_err());
    assert!(st
        .with_fast_extension(vec![vec![1, 1, 1], vec![1, 1, 2]])
        .is_ok());
}

fn random_network() -> impl Strategy<Value = Network> {
    (2usize..5).prop_flat_map(|n| {
        let reaction = (
            prop::collection::vec(0u32..3, n),
            prop::collection::vec(0u32..3, n),
            any::<bool>(),
        );
        prop::collection::vec(reaction, 1..5).prop_filter_map("degenerate reaction", move |rs| {
            let species: Vec<String> = (0..n).map(|i| format!("S{i}")).collect();
            let reactions: Vec<Reaction> = rs
                .into_iter()
                .filter(|(a, b, _)| a != b)
                .map(|(gp, gm, fast)| Reaction {
                    gamma_plus: gp,
                    gamma_minus: gm,
                    k_plus: 1.0,
                    k_minus: 1.0,
                    timescale: if fast {
                        Timescale::Fast
                    } else {
                        Timescale::Slow
                    },
                })
                .collect();
            if reactions.is_empty() {
                return None;
            }
            Network::new(species, reactions).ok()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn conservation_laws_annihilate_reaction_vectors(net in random_network()) {
        let st = build_structure(&net);
        prop_assert!(zero(&mul_transpose(&st.g, &st.q)));
        prop_assert_eq!(st.m() + st.rank_g, st.species);
        let g_fast: Vec<Vec<i64>> = st.fast_rows.iter().map(|&r| st.g[r].clone()).collect();
        prop_assert!(zero(&mul_transpose(&g_fast, &st.q_fast)));
        prop_assert_eq!(st.m_fast() + rank(&g_fast, st.species), st.species);
        // Q_fast contains the span of Q.
        let mut stacked = st.q_fast.clone();
        stacked.extend(st.q.iter().cloned());
        prop_assert_eq!(rank(&stacked, st.species), st.m_fast());
        prop_assert!(st.check_invariants().is_empty());
    }

    #[test]
    fn kernel_is_a_basis(rows in prop::collection::vec(prop::collection::vec(-3i64..4, 5), 1..5)) {
        let k = kernel(&rows, 5);
        prop_assert!(zero(&mul_transpose(&rows, &k)));
        prop_assert_eq!(k.len() + rank(&rows, 5), 5);
        prop_assert_eq!(rank(&k, 5), k.len());
    }
}
