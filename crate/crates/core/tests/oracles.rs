//! Derived values checked against independent, deliberately naive oracles.

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recgym_core::agents::Mlp;
use recgym_core::bicluster::{bimax, Bicluster, BimaxConfig};
use recgym_core::env::{reward_for, Action};
use recgym_core::experiment::moving_average;
use recgym_core::grid::{h, jaccard, Board, DistanceMatrix};
use recgym_core::ingest::{
    read_session_log, write_session_log, ActionType, RatingMatrix, Session, SessionEvent,
};

/// Plain nested-loop forward pass: ReLU on hidden layers, identity output.
fn oracle_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
    let sizes = net.sizes();
    let mut a = x.to_vec();
    for l in 0..net.num_layers() {
        let (w, b) = net.layer(l);
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let mut z = vec![0.0; n_out];
        for j in 0..n_out {
            z[j] = b[j];
            for i in 0..n_in {
                z[j] += w[j * n_in + i] * a[i];
            }
        }
        if l + 1 < net.num_layers() {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        a = z;
    }
    a
}

#[test]
fn forward_matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for _ in 0..50 {
        let sizes = [
            rng.gen_range(1..6),
            rng.gen_range(1..6),
            rng.gen_range(1..6),
            rng.gen_range(1..4),
        ];
        let net = Mlp::random(&sizes, &mut rng).unwrap();
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let got = net.forward(&x).unwrap();
        let want = oracle_forward(&net, &x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{got:?} vs {want:?}");
        }
    }
}

#[test]
fn backward_matches_central_differences_of_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let h = 1e-5;
    for _ in 0..20 {
        let sizes = [
            rng.gen_range(1..5),
            rng.gen_range(2..6),
            rng.gen_range(1..4),
        ];
        let mut net = Mlp::zeros(&sizes).unwrap();
        let params: Vec<f64> = (0..net.num_params())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        net.set_params(&params).unwrap();
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let up: Vec<f64> = (0..sizes[2]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |n: &Mlp| {
            oracle_forward(n, &x)
                .iter()
                .zip(&up)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let analytic = net
            .backward(&net.forward_cached(&x).unwrap(), &up)
            .unwrap()
            .flat();
        let params = net.params();
        for i in 0..params.len() {
            let mut p = net.clone();
            let mut v = params.clone();
            v[i] += h;
            p.set_params(&v).unwrap();
            let plus = loss(&p);
            v[i] -= 2.0 * h;
            p.set_params(&v).unwrap();
            let fd = (plus - loss(&p)) / (2.0 * h);
            assert!(
                (fd - analytic[i]).abs() < 1e-6 * (1.0 + fd.abs()),
                "param {i}: {fd} vs {}",
                analytic[i]
            );
        }
    }
}

/// Every maximal all-ones submatrix, by enumerating user subsets and
/// closing each over items, then over users.
fn brute_force_biclusters(
    rows: &[Vec<u8>],
    min_users: usize,
    min_items: usize,
) -> BTreeSet<Bicluster> {
    let (nu, ni) = (rows.len(), rows.first().map_or(0, Vec::len));
    let mut out = BTreeSet::new();
    for mask in 1u32..(1 << nu) {
        let users: Vec<usize> = (0..nu).filter(|u| mask >> u & 1 == 1).collect();
        let items: Vec<usize> = (0..ni)
            .filter(|&i| users.iter().all(|&u| rows[u][i] == 1))
            .collect();
        if items.is_empty() {
            continue;
        }
        let closed: Vec<usize> = (0..nu)
            .filter(|&u| items.iter().all(|&i| rows[u][i] == 1))
            .collect();
        if closed == users && users.len() >= min_users && items.len() >= min_items {
            out.insert(Bicluster { users, items });
        }
    }
    out
}

fn dense(max: usize) -> impl Strategy<Value = Vec<Vec<u8>>> {
    (1..=max, 1..=max)
        .prop_flat_map(|(r, c)| prop::collection::vec(prop::collection::vec(0u8..=1, c), r))
}

proptest! {
    #[test]
    fn bimax_equals_brute_force(rows in dense(6), min_users in 1usize..3, min_items in 1usize..3) {
        let m = RatingMatrix::from_dense(&rows).unwrap();
        let cfg = BimaxConfig { min_users, min_items, max_biclusters: None };
        let got: BTreeSet<Bicluster> = bimax(&m, &cfg).unwrap().into_iter().collect();
        prop_assert_eq!(got, brute_force_biclusters(&rows, min_users, min_items));
    }

    #[test]
    fn jaccard_matches_set_definition(
        a in prop::collection::btree_set(0usize..30, 0..12),
        b in prop::collection::btree_set(0usize..30, 0..12),
    ) {
        let av: Vec<usize> = a.iter().copied().collect();
        let bv: Vec<usize> = b.iter().copied().collect();
        let union = a.union(&b).count();
        let want = if union == 0 { 1.0 } else { a.intersection(&b).count() as f64 / union as f64 };
        prop_assert!((jaccard(&av, &bv) - want).abs() < 1e-15);
        prop_assert_eq!(jaccard(&av, &bv), jaccard(&bv, &av));
    }

    #[test]
    fn ranked_reward_is_reciprocal_position(perm in Just((0..25usize).collect::<Vec<_>>()).prop_shuffle(), t in 0usize..25) {
        let cands = vec![vec![0.0; 3]; 25];
        let (r, rank) = reward_for(&Action::RankedList(perm.clone()), t, &cands).unwrap();
        let pos = perm.iter().position(|&k| k == t).unwrap() + 1;
        prop_assert_eq!(rank, Some(pos));
        prop_assert_eq!(r, 1.0 / pos as f64);
    }

    #[test]
    fn moving_average_matches_naive_mean(values in prop::collection::vec(-5.0f64..5.0, 1..60), w in 1usize..10) {
        let got = moving_average(&values, w).unwrap();
        for (t, g) in got.iter().enumerate() {
            let lo = (t + 1).saturating_sub(w);
            let win = &values[lo..=t];
            let want = win.iter().sum::<f64>() / win.len() as f64;
            prop_assert!((g - want).abs() < 1e-9);
        }
    }

    #[test]
    fn h_matches_explicit_neighbour_scan(n in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = n * n;
        let raw: Vec<f64> = (0..m * m).map(|_| rng.gen_range(0.0..1.0)).collect();
        let dist = DistanceMatrix::from_fn(m, |a, b| if a == b { 0.0 } else { raw[a.min(b) * m + a.max(b)] });
        let mut cells: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            cells.swap(i, rng.gen_range(0..=i));
        }
        let board = Board::from_cells(n, cells.clone()).unwrap();
        // each ordered pair of 4-neighbours, so every adjacency counts twice
        let mut want = 0.0;
        for x in 0..n {
            for y in 0..n {
                for (dx, dy) in [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)] {
                    let (u, v) = (x as i64 + dx, y as i64 + dy);
                    if u >= 0 && v >= 0 && (u as usize) < n && (v as usize) < n {
                        want += dist.get(cells[x * n + y], cells[u as usize * n + v as usize]);
                    }
                }
            }
        }
        prop_assert!((h(&board, &dist) - want).abs() < 1e-9);
    }
}

fn event(
    session: &str,
    step: u32,
    action: ActionType,
    reference: &str,
    imps: &[String],
    prices: &[i64],
) -> SessionEvent {
    SessionEvent {
        user_id: format!("u_{session}"),
        session_id: session.to_string(),
        timestamp: 1_541_000_000 + step as i64,
        step,
        action_type: action,
        reference: reference.to_string(),
        platform: "AU".into(),
        city: "Sydney, Australia".into(),
        device: "mobile".into(),
        current_filters: if action == ActionType::ClickoutItem {
            vec!["Pool".into()]
        } else {
            vec![]
        },
        impressions: imps.to_vec(),
        prices: prices.to_vec(),
    }
}

prop_compose! {
    fn arb_session(idx: usize)(n_click in 1usize..4, n_imp in 1usize..=25, extra in 0usize..3) -> Session {
        let sid = format!("s{idx}");
        let imps: Vec<String> = (0..n_imp).map(|k| format!("{}", 1000 + k)).collect();
        let prices: Vec<i64> = (0..n_imp).map(|k| 50 + k as i64).collect();
        let mut events = Vec::new();
        let mut step = 0;
        for c in 0..n_click {
            for _ in 0..extra {
                step += 1;
                events.push(event(&sid, step, ActionType::InteractionItemImage, &imps[c % n_imp], &[], &[]));
            }
            step += 1;
            events.push(event(&sid, step, ActionType::ClickoutItem, &imps[(c * 7) % n_imp], &imps, &prices));
        }
        Session::new(sid, events).unwrap()
    }
}

proptest! {
    #[test]
    fn session_log_round_trips(a in arb_session(0), b in arb_session(1)) {
        let sessions = vec![a, b];
        let mut buf = Vec::new();
        write_session_log(&sessions, &mut buf).unwrap();
        let back = read_session_log(buf.as_slice()).unwrap();
        prop_assert_eq!(back.report.rejected(), 0);
        prop_assert_eq!(back.sessions, sessions);
    }
}
