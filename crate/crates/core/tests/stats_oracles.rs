use std::f64::consts::PI;

use lsd_core::numerics::Rng;
use lsd_core::stats::{
    bonferroni, cohens_d, ks_uniform_statistic, student_t_sf, welch_ttest, GroupSummary, TTestMode,
};
use proptest::prelude::*;

/// Two-sided Student-t tail for integer dof from the closed-form finite series.
fn series_t_sf(t: f64, dof: u32) -> f64 {
    let theta = (t.abs() / f64::from(dof).sqrt()).atan();
    let (s, c) = theta.sin_cos();
    let c2 = c * c;
    let inside = if dof % 2 == 1 {
        let mut sum = 0.0;
        if dof > 1 {
            let mut term = 1.0;
            sum = 1.0;
            let mut k = 1;
            while 2 * k + 1 < dof {
                term *= f64::from(2 * k) / f64::from(2 * k + 1) * c2;
                sum += term;
                k += 1;
            }
        }
        2.0 / PI * (theta + s * c * sum)
    } else {
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1;
        while 2 * k < dof {
            term *= f64::from(2 * k - 1) / f64::from(2 * k) * c2;
            sum += term;
            k += 1;
        }
        s * sum
    };
    1.0 - inside
}

struct Textbook {
    t: f64,
    dof: f64,
    d: f64,
}

fn textbook_welch(f: &[f64], h: &[f64]) -> Textbook {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (nf, mf, vf) = stats(f);
    let (nh, mh, vh) = stats(h);
    let a = vf / nf;
    let b = vh / nh;
    Textbook {
        t: (mf - mh) / (a + b).sqrt(),
        dof: (a + b) * (a + b) / (a * a / (nf - 1.0) + b * b / (nh - 1.0)),
        d: (mf - mh) / ((vf + vh) / 2.0).sqrt(),
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn welch_and_cohen_match_textbook_on_random_fixtures() {
    let mut rng = Rng::new(2024);
    for i in 0..100 {
        let nf = 2 + rng.below(40);
        let nh = 2 + rng.below(40);
        let sf = 0.1 + 3.0 * rng.uniform();
        let sh = 0.1 + 3.0 * rng.uniform();
        let shift = 2.0 * rng.normal();
        let f: Vec<f64> = (0..nf).map(|_| sf * rng.normal() + shift).collect();
        let h: Vec<f64> = (0..nh).map(|_| sh * rng.normal()).collect();
        let ours = welch_ttest("m", &f, &h, TTestMode::Welch).unwrap();
        let oracle = textbook_welch(&f, &h);
        assert!(close(ours.t_stat, oracle.t, 1e-9), "fixture {i}: t");
        assert!(close(ours.dof, oracle.dof, 1e-9), "fixture {i}: dof");
        assert!(close(ours.cohens_d, oracle.d, 1e-9), "fixture {i}: d");
        let (d, _) = cohens_d(&ours.group_factual, &ours.group_halluc).unwrap();
        assert_eq!(d, ours.cohens_d);
    }
}

#[test]
fn pooled_mode_p_matches_series() {
    let mut rng = Rng::new(77);
    for _ in 0..50 {
        let n = 2 + rng.below(30);
        let f: Vec<f64> = (0..n).map(|_| rng.normal() + 0.5).collect();
        let h: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let r = welch_ttest("m", &f, &h, TTestMode::Pooled).unwrap();
        let oracle = series_t_sf(r.t_stat, (2 * n - 2) as u32);
        assert!((r.p_value - oracle).abs() < 1e-10);
    }
}

#[test]
fn t_tail_matches_series_oracle() {
    for dof in [1u32, 2, 5, 10, 30, 100] {
        for k in -400..=400 {
            let t = k as f64 * 0.025;
            let ours = student_t_sf(t, f64::from(dof));
            let oracle = series_t_sf(t, dof);
            assert!((ours - oracle).abs() < 1e-10, "t={t} dof={dof}: {ours} vs {oracle}");
        }
    }
}

#[test]
fn t_tail_approaches_normal() {
    for k in 0..=60 {
        let t = k as f64 * 0.1;
        let normal = libm::erfc(t / 2f64.sqrt());
        assert!((student_t_sf(t, 1e6) - normal).abs() < 1e-6, "t={t}");
    }
}

#[test]
fn t_tail_monotone_in_abs_t() {
    for dof in [1.0, 3.5, 10.0, 250.0] {
        let mut prev = 1.0;
        for k in 1..=500 {
            let p = student_t_sf(k as f64 * 0.05, dof);
            assert!(p <= prev);
            prev = p;
        }
    }
}

#[test]
fn welch_p_values_are_uniform_under_the_null() {
    let mut rng = Rng::new(99);
    let p: Vec<f64> = (0..2000)
        .map(|_| {
            let f: Vec<f64> = (0..15).map(|_| rng.normal()).collect();
            let h: Vec<f64> = (0..25).map(|_| 3.0 * rng.normal()).collect();
            welch_ttest("m", &f, &h, TTestMode::Welch).unwrap().p_value
        })
        .collect();
    let ks = ks_uniform_statistic(&p);
    assert!(ks < 0.05, "KS statistic {ks}");
}

fn summary(x: &[f64]) -> GroupSummary {
    GroupSummary::from_samples(x).unwrap()
}

proptest! {
    #[test]
    fn cohens_d_symmetries(
        f in proptest::collection::vec(-10.0f64..10.0, 2..20),
        h in proptest::collection::vec(-10.0f64..10.0, 2..20),
        shift in -100.0f64..100.0,
        c in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
    ) {
        let Ok((d, _)) = cohens_d(&summary(&f), &summary(&h)) else { return Ok(()); };
        let (swapped, _) = cohens_d(&summary(&h), &summary(&f)).unwrap();
        prop_assert!((d + swapped).abs() < 1e-12);

        let fs: Vec<f64> = f.iter().map(|x| x + shift).collect();
        let hs: Vec<f64> = h.iter().map(|x| x + shift).collect();
        let (shifted, _) = cohens_d(&summary(&fs), &summary(&hs)).unwrap();
        prop_assert!((d - shifted).abs() < 1e-8 * d.abs().max(1.0));

        let fc: Vec<f64> = f.iter().map(|x| x * c).collect();
        let hc: Vec<f64> = h.iter().map(|x| x * c).collect();
        let (scaled, _) = cohens_d(&summary(&fc), &summary(&hc)).unwrap();
        prop_assert!((scaled - c.signum() * d).abs() < 1e-9 * d.abs().max(1.0));
    }

    #[test]
    fn bonferroni_never_reduces(p in proptest::collection::vec(0.0f64..=1.0, 0..30), extra in 0usize..20) {
        let m = p.len() + extra;
        for (orig, adj) in p.iter().zip(bonferroni(&p, m)) {
            prop_assert!(adj >= *orig);
            prop_assert!(adj <= 1.0);
        }
    }
}
