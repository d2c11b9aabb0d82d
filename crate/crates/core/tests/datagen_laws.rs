//! Distributional checks on the generators and the Nursery corruption.

use fairconf::datagen::{
    corrupt_group, gen_eight_subgroup, gen_metric_eval, gen_synthetic_xnor, nursery_surrogate, Dataset,
    LABEL_DRIVER_COLUMN,
};
use fairconf::diffcore::RngStream;

fn flag_rate(d: &Dataset) -> f64 {
    let f = d.unfair_flag.as_ref().unwrap();
    f.iter().filter(|&&x| x).count() as f64 / f.len() as f64
}

/// Exact probability of (flag, sextile of the driver, label).
fn label_law(flagged: bool, sextile: usize, label: usize) -> f64 {
    let cell = 0.5 / 6.0;
    if flagged {
        let base = if sextile < 3 { 0 } else { 3 };
        if (base..base + 3).contains(&label) {
            cell / 3.0
        } else {
            0.0
        }
    } else if label == sextile {
        cell
    } else {
        0.0
    }
}

#[test]
fn xnor_label_law_total_variation() {
    let n = 100_000;
    let d = gen_synthetic_xnor(n, &mut RngStream::new(31));
    let flags = d.unfair_flag.as_ref().unwrap();
    let mut counts = [[[0usize; 6]; 6]; 2];
    for i in 0..n {
        let sextile = ((6.0 * d.features[(i, LABEL_DRIVER_COLUMN)]).floor() as usize).min(5);
        counts[usize::from(flags[i])][sextile][d.labels[i]] += 1;
    }
    let mut tv = 0.0;
    for f in 0..2 {
        for s in 0..6 {
            for y in 0..6 {
                tv += (counts[f][s][y] as f64 / n as f64 - label_law(f == 1, s, y)).abs();
            }
        }
    }
    assert!(0.5 * tv <= 0.02, "total variation {}", 0.5 * tv);
}

#[test]
fn protected_group_frequencies() {
    let n = 100_000;
    let cases = [
        (flag_rate(&gen_synthetic_xnor(n, &mut RngStream::new(1))), 0.5),
        (flag_rate(&gen_eight_subgroup(n, &mut RngStream::new(2))), 0.5),
        (flag_rate(&gen_metric_eval(n, &mut RngStream::new(3))), 0.18),
    ];
    for (got, want) in cases {
        assert!((got - want).abs() <= 0.01, "rate {got} vs {want}");
    }
}

#[test]
fn metric_eval_labels_follow_the_driver() {
    let d = gen_metric_eval(5000, &mut RngStream::new(8));
    let flags = d.unfair_flag.as_ref().unwrap();
    for i in 0..d.len() {
        let x2 = d.features[(i, 2)];
        if flags[i] {
            assert_eq!(d.labels[i] / 3, usize::from(x2 >= 0.5));
        } else {
            assert_eq!(d.labels[i], ((6.0 * x2).floor() as usize).min(5));
        }
    }
}

#[test]
fn corruption_spreads_labels_in_the_group() {
    let base = nursery_surrogate();
    let probe = corrupt_group(&base, &mut RngStream::new(0)).unwrap();
    let idx: Vec<usize> = (0..base.len()).filter(|&i| probe.unfair_flag.as_ref().unwrap()[i]).collect();
    assert!(!idx.is_empty());
    let mut centred = base.subset(&idx);
    centred.labels.iter_mut().for_each(|y| *y = 2);
    let mut hist = [0usize; 5];
    let mut draws = 0;
    let mut seed = 0;
    while draws < 10_000 {
        let c = corrupt_group(&centred, &mut RngStream::new(seed)).unwrap();
        for &y in &c.labels {
            hist[y] += 1;
        }
        draws += c.len();
        seed += 1;
    }
    let entropy: f64 = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / draws as f64;
            -p * p.ln()
        })
        .sum();
    assert!(entropy >= 1.3, "entropy {entropy} nats, histogram {hist:?}");
    assert!(hist.iter().all(|&c| c > 0));
}

#[test]
fn corruption_leaves_other_rows_alone() {
    let base = nursery_surrogate();
    let c = corrupt_group(&base, &mut RngStream::new(4)).unwrap();
    let flags = c.unfair_flag.as_ref().unwrap();
    for i in 0..base.len() {
        if !flags[i] {
            assert_eq!(c.labels[i], base.labels[i]);
        }
    }
    assert_eq!(c.features, base.features);
}
