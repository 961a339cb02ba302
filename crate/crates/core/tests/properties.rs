use proptest::prelude::*;
use qkdloop_core::channel::AbortRule;
use qkdloop_core::controller::{reward, Action, ActionBox, ActionMask, RewardConfig, SafetyBounds};
use qkdloop_core::rates::{link_key_rate, LinkParams, ProtocolConfig, ProtocolKind};
use qkdloop_core::ControlState;

fn any_state() -> impl Strategy<Value = ControlState> {
    (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64, -20.0..20.0f64, -20.0..20.0f64)
        .prop_map(|(mu_s, mu_w, p_z, theta_c, phi_c)| ControlState { mu_s, mu_w, p_z, theta_c, phi_c })
}

fn reward_cfg() -> RewardConfig {
    RewardConfig { skr_ref: 1e6, ..RewardConfig::default() }
}

proptest! {
    #[test]
    fn safety_filter_lands_inside(c in any_state()) {
        let b = SafetyBounds::default();
        let f = b.filter(&c);
        prop_assert!(b.contains(&f), "{f:?}");
        prop_assert_eq!(b.filter(&f), f);
    }

    #[test]
    fn safety_filter_survives_nan(c in any_state(), which in 0usize..5) {
        let b = SafetyBounds::default();
        let mut a = c.as_array();
        a[which] = f64::NAN;
        let c = ControlState { mu_s: a[0], mu_w: a[1], p_z: a[2], theta_c: a[3], phi_c: a[4] };
        prop_assert!(b.contains(&b.filter(&c)));
    }

    #[test]
    fn bounded_actions_stay_in_box(u in prop::collection::vec(-3.0..3.0f64, 4)) {
        let boxes = ActionBox::default();
        let a = Action::from_unit(&u, &ActionMask::for_protocol(ProtocolKind::Bb84Decoy), &boxes).unwrap();
        prop_assert!(a.d_mu_s.abs() <= boxes.d_mu && a.d_mu_w.abs() <= boxes.d_mu);
        prop_assert!(a.d_pz.abs() <= boxes.d_pz && a.d_theta_c.abs() <= boxes.d_theta);
        prop_assert_eq!(a.d_phi_c, 0.0);
    }

    #[test]
    fn rate_falls_with_distance(d in 0.0..150.0f64, step in 1.0..30.0f64, which in 0usize..3) {
        let cfg = [ProtocolConfig::bb84(), ProtocolConfig::e91(), ProtocolConfig::cow()][which];
        let near = link_key_rate(&LinkParams::default().at_distance(d), &cfg, 0.0).unwrap();
        let far = link_key_rate(&LinkParams::default().at_distance(d + step), &cfg, 0.0).unwrap();
        prop_assert!(far.report.r_bps <= near.report.r_bps * (1.0 + 1e-12));
        prop_assert!(near.report.r_finite <= near.report.r_per_pulse.max(0.0) + 1e-18);
    }

    #[test]
    fn reward_monotone(skr in 0.0..1e7f64, q in 0.0..0.5f64, ds in 0.0..1e6f64, dq in 0.0..0.1f64) {
        let cfg = reward_cfg();
        prop_assert!(reward(skr + ds, q, false, &cfg) >= reward(skr, q, false, &cfg));
        prop_assert!(reward(skr, q + dq, false, &cfg) <= reward(skr, q, false, &cfg));
        prop_assert!(reward(skr, q, true, &cfg) < reward(skr, q, false, &cfg));
    }

    #[test]
    fn reward_scales_with_reference(skr in 0.0..1e7f64, k in 0.1..10.0f64) {
        let cfg = reward_cfg();
        let scaled = RewardConfig { skr_ref: cfg.skr_ref * k, ..cfg };
        let a = reward(skr * k, 0.0, false, &scaled);
        let b = reward(skr, 0.0, false, &cfg);
        prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
    }

    #[test]
    fn abort_needs_consecutive_excess(qbers in prop::collection::vec(0.0..0.2f64, 1..60), k in 1usize..4) {
        let mut rule = AbortRule::new(0.11, k);
        let mut run = 0;
        for &q in &qbers {
            run = if q > 0.11 { run + 1 } else { 0 };
            let fired = rule.observe(q);
            prop_assert_eq!(fired, run >= k);
            if fired {
                run = 0;
            }
        }
    }
}
