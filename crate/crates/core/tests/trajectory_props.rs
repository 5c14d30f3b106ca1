use aescope_core::trajectory::{
    flower_waveform, raster_waveform, spiral_waveform, validate_trajectory, FlowerParams, Region, SpiralMode, SpiralParams,
};
use proptest::prelude::*;

fn flower(r0: f64, amp: f64, petals: usize, n: usize) -> FlowerParams<f64> {
    FlowerParams { center: [10.0, 10.0], r0_um: r0, amp_um: amp, petals, n_samples: n, sample_rate_hz: 1000.0 }
}

fn radii(samples: &[[f64; 2]], c: [f64; 2]) -> Vec<f64> {
    samples.iter().map(|p| (p[0] - c[0]).hypot(p[1] - c[1])).collect()
}

#[test]
fn six_petals_six_radius_maxima() {
    let t = flower_waveform(&flower(4.0, 1.0, 6, 721)).unwrap();
    let r = radii(&t.samples, [10.0, 10.0]);
    // closed path: drop the duplicate endpoint and count cyclically
    let r = &r[..r.len() - 1];
    let n = r.len();
    let maxima = (0..n).filter(|&i| r[i] > r[(i + n - 1) % n] && r[i] >= r[(i + 1) % n]).count();
    assert_eq!(maxima, 6);
}

#[test]
fn unit_pitch_spiral_radius_after_one_turn() {
    let p = SpiralParams {
        center: [0.0, 0.0],
        r_max_um: 5.0,
        pitch_um: 1.0,
        mode: SpiralMode::ConstantAngularVelocity,
        sample_rate_hz: 1000.0,
        points_per_turn: 100,
    };
    let t = spiral_waveform(&p).unwrap();
    let theta = |s: &[f64; 2], k: usize| s[1].atan2(s[0]).rem_euclid(std::f64::consts::TAU) + std::f64::consts::TAU * k as f64;
    // samples are 2 pi / 100 apart, so sample 100 is the one at one full turn
    let s = t.samples[100];
    assert!((theta(&s, 1) - std::f64::consts::TAU).abs() < 1e-9);
    assert!((s[0].hypot(s[1]) - 1.0).abs() <= 0.01);
}

#[test]
fn out_of_window_sample_indexed() {
    let mut t = raster_waveform(Region::new(0.0, 0.0, 1.0, 1.0), 2, 3, 1000.0, Region::window(5.0)).unwrap();
    t.samples[4] = [-1.0, 1.0];
    let v = validate_trajectory(&t, &Region::window(5.0), 1e9);
    assert_eq!(v.len(), 1);
    assert!(matches!(v[0], aescope_core::trajectory::Violation::OutOfWindow { index: 4, .. }));
}

proptest! {
    #[test]
    fn flower_bounded_and_closed(r0 in 0.5f64..10.0, frac in 0.0f64..0.99, petals in 0usize..12, n in 16usize..2000) {
        let amp = r0 * frac;
        let t = flower_waveform(&flower(r0, amp, petals, n)).unwrap();
        prop_assert_eq!(t.samples.len(), n);
        prop_assert!(t.closed);
        let first = t.samples[0];
        let last = t.samples[n - 1];
        prop_assert!((first[0] - last[0]).hypot(first[1] - last[1]) < 1e-6);
        for r in radii(&t.samples, [10.0, 10.0]) {
            prop_assert!(r >= r0 - amp - 1e-9 && r <= r0 + amp + 1e-9);
        }
    }

    #[test]
    fn spiral_bounded_by_rmax(r_max in 0.5f64..10.0, frac in 0.02f64..1.0, linear in any::<bool>(), ppt in 8usize..128) {
        let pitch = r_max * frac;
        let mode = if linear { SpiralMode::ConstantLinearVelocity } else { SpiralMode::ConstantAngularVelocity };
        let p = SpiralParams { center: [1.0, -2.0], r_max_um: r_max, pitch_um: pitch, mode, sample_rate_hz: 500.0, points_per_turn: ppt };
        let t = spiral_waveform(&p).unwrap();
        prop_assert!(t.samples.len() >= 2);
        for r in radii(&t.samples, [1.0, -2.0]) {
            prop_assert!(r <= r_max + 1e-9);
        }
    }

    #[test]
    fn raster_count_and_serpentine(lines in 1usize..40, pts in 2usize..40) {
        let t = raster_waveform(Region::new(0.5, 0.5, 4.5, 3.0), lines, pts, 100.0, Region::window(5.0)).unwrap();
        prop_assert_eq!(t.samples.len(), lines * pts);
        for l in 0..lines {
            let row = &t.samples[l * pts..(l + 1) * pts];
            let increasing = row[1][0] > row[0][0];
            prop_assert_eq!(increasing, l % 2 == 0);
        }
        prop_assert!(validate_trajectory(&t, &Region::window(5.0), 1e9).is_empty());
    }
}
