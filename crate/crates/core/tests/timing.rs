use proptest::prelude::*;
use scd_core::timing::{
    closed_form_round_time, simulate, speedup_report, ClientTiming, Protocol, Schedule,
};

fn timing() -> impl Strategy<Value = ClientTiming> {
    (0.01f64..5.0, 0.01f64..5.0, 0.01f64..5.0, 0.01f64..5.0).prop_map(|(g, p, u, d)| ClientTiming {
        t_gm_epoch: g,
        t_pm_epoch: p,
        t_up: u,
        t_down: d,
    })
}

fn totals(s: &Schedule, t: &[ClientTiming], agg: f64) -> (f64, f64) {
    (
        simulate(s, t, agg, Protocol::ComputeAndWait).unwrap().total,
        simulate(s, t, agg, Protocol::WaitFree).unwrap().total,
    )
}

#[test]
fn example_configuration_gives_one_and_a_half() {
    let t = ClientTiming {
        t_gm_epoch: 2.0,
        t_pm_epoch: 3.0,
        t_up: 1.5,
        t_down: 2.5,
    };
    let s = Schedule::full(4, 10, 1, 1);
    let (cw, wf) = totals(&s, &[t; 4], 0.0);
    assert_eq!((cw, wf), (90.0, 60.0));
    assert_eq!(
        closed_form_round_time(&t, 1, 1, 0.0, Protocol::ComputeAndWait),
        9.0
    );
    assert_eq!(
        closed_form_round_time(&t, 1, 1, 0.0, Protocol::WaitFree),
        6.0
    );
    let cw_tl = simulate(&s, &[t; 4], 0.0, Protocol::ComputeAndWait).unwrap();
    let wf_tl = simulate(&s, &[t; 4], 0.0, Protocol::WaitFree).unwrap();
    let acc: Vec<f64> = (1..=10).map(|r| r as f64 / 10.0).collect();
    let rep = speedup_report(&cw_tl, &wf_tl, &acc, 1.0).unwrap();
    assert_eq!(rep.rounds_to_target, Some(10));
    assert_eq!(rep.speedup, Some(1.5));
    let never = speedup_report(&cw_tl, &wf_tl, &acc, 1.1).unwrap();
    assert!(!never.reached && never.speedup.is_none());
}

#[test]
fn degenerate_overlap_gives_equal_totals() {
    let s = Schedule::full(3, 4, 2, 3);
    let no_pm = ClientTiming {
        t_gm_epoch: 1.0,
        t_pm_epoch: 0.0,
        t_up: 2.0,
        t_down: 1.0,
    };
    let (a, b) = totals(&s, &[no_pm; 3], 0.5);
    assert_eq!(a, b);
    let no_comm = ClientTiming {
        t_gm_epoch: 1.0,
        t_pm_epoch: 2.0,
        t_up: 0.0,
        t_down: 0.0,
    };
    let (a, b) = totals(&s, &[no_comm; 3], 0.0);
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn homogeneous_simulation_equals_closed_form(
        t in timing(),
        agg in 0.0f64..2.0,
        eg in 0usize..4,
        ep in 0usize..4,
        n in 1usize..6,
        rounds in 1usize..12,
    ) {
        let s = Schedule::full(n, rounds, eg, ep);
        for p in [Protocol::ComputeAndWait, Protocol::WaitFree] {
            let tl = simulate(&s, &vec![t; n], agg, p).unwrap();
            let per_round = closed_form_round_time(&t, eg, ep, agg, p);
            prop_assert!((tl.total - per_round * rounds as f64).abs() <= 1e-9 * tl.total.max(1.0));
            for (i, r) in tl.rounds.iter().enumerate() {
                prop_assert!((r.end - per_round * (i + 1) as f64).abs() <= 1e-9 * r.end.max(1.0));
            }
        }
    }

    #[test]
    fn wait_free_is_strictly_faster_when_there_is_overlap(
        ts in prop::collection::vec(timing(), 1..6),
        agg in 0.0f64..1.0,
        ep in 1usize..4,
        rounds in 1usize..6,
    ) {
        let s = Schedule::full(ts.len(), rounds, 1, ep);
        let (cw, wf) = totals(&s, &ts, agg);
        prop_assert!(wf < cw, "wf {} cw {}", wf, cw);
    }

    #[test]
    fn speedup_is_scale_invariant(
        ts in prop::collection::vec(timing(), 1..5),
        agg in 0.0f64..1.0,
        c in 0.01f64..100.0,
    ) {
        let s = Schedule::full(ts.len(), 5, 1, 2);
        let (cw, wf) = totals(&s, &ts, agg);
        let scaled: Vec<ClientTiming> = ts.iter().map(|t| t.scaled(c)).collect();
        let (cw2, wf2) = totals(&s, &scaled, agg * c);
        prop_assert!((cw2 - c * cw).abs() <= 1e-9 * cw2);
        prop_assert!((wf2 - c * wf).abs() <= 1e-9 * wf2);
        prop_assert!(((cw2 / wf2) - (cw / wf)).abs() <= 1e-9 * (cw / wf));
    }

    #[test]
    fn aggregation_waits_for_the_slowest_upload(
        ts in prop::collection::vec(timing(), 1..6),
        agg in 0.0f64..1.0,
    ) {
        let s = Schedule::full(ts.len(), 3, 1, 1);
        for p in [Protocol::ComputeAndWait, Protocol::WaitFree] {
            let tl = simulate(&s, &ts, agg, p).unwrap();
            for r in &tl.rounds {
                let slowest = r.clients.iter().map(|c| c.upload_complete).fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(r.aggregation_start, slowest);
                prop_assert_eq!(r.aggregation_complete, slowest + agg);
                for c in &r.clients {
                    prop_assert!(c.start <= c.upload_start && c.upload_start <= c.upload_complete);
                    prop_assert!(c.upload_complete <= r.aggregation_start);
                    prop_assert!(r.aggregation_complete <= c.broadcast_complete);
                    prop_assert!(c.pm_complete <= r.end && c.broadcast_complete <= r.end);
                }
            }
        }
    }
}
