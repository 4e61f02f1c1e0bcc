use denovas::data::std_dev;
use denovas::experiments::{
    descending_grid, gaussian_width_heuristic, run_benchmark, BenchConfig, SyntheticDesign, TauGrid,
};
use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[test]
fn designs_are_calibrated_to_their_snr() {
    let designs = [
        SyntheticDesign::additive2(1),
        SyntheticDesign::two_way2(1),
        SyntheticDesign::three_way6(1),
        SyntheticDesign::radial(1),
        SyntheticDesign::pairwise(4, 20, 100, 1),
        SyntheticDesign::degenerate(1),
    ];
    for design in designs {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let inst = design.instantiate(&mut rng).unwrap();
        let draw = inst.draw(100_000, &mut rng);
        let ratio = (std_dev(draw.signal.view()) / std_dev(draw.noise.view())).powi(2);
        assert!(
            (ratio / design.snr - 1.0).abs() <= 0.05,
            "{}: {ratio} vs {}",
            design.kind,
            design.snr
        );
    }
}

#[test]
fn datasets_are_reproducible_and_noiseless_limit_is_exact() {
    let design = SyntheticDesign::radial(5);
    let (a, _, _) = design.generate().unwrap();
    let (b, _, _) = design.generate().unwrap();
    assert_eq!(a.x, b.x);
    assert_eq!(a.y, b.y);

    let clean = SyntheticDesign {
        snr: f64::INFINITY,
        ..SyntheticDesign::two_way2(5)
    };
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let inst = clean.instantiate(&mut rng).unwrap();
    let draw = inst.draw(50, &mut rng);
    let data = draw.clone().into_dataset().unwrap();
    for i in 0..50 {
        assert_eq!(data.y[i], inst.signal(draw.x.row(i).as_slice().unwrap()));
    }
}

fn brute_force_width(x: &Array2<f64>, k: usize) -> f64 {
    let n = x.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let mut all = Vec::new();
        for j in 0..n {
            if i != j {
                let d2: f64 = (0..x.ncols()).map(|c| (x[[i, c]] - x[[j, c]]).powi(2)).sum();
                all.push(d2.sqrt());
            }
        }
        all.sort_by(f64::total_cmp);
        total += all[k - 1];
    }
    total / n as f64
}

#[test]
fn width_heuristic_examples() {
    let square = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
    assert_eq!(gaussian_width_heuristic(square.view(), 1).unwrap(), 1.0);
    let twins = array![[0.5, 0.5], [0.5, 0.5]];
    assert_eq!(gaussian_width_heuristic(twins.view(), 1).unwrap(), 0.0);
    // k ≥ n falls back to n − 1
    assert_eq!(
        gaussian_width_heuristic(square.view(), 20).unwrap(),
        gaussian_width_heuristic(square.view(), 3).unwrap()
    );

    let grid = Array2::from_shape_fn((49, 2), |(i, c)| if c == 0 { (i % 7) as f64 * 0.3 } else { (i / 7) as f64 * 0.3 });
    for k in [1, 4, 20] {
        let got = gaussian_width_heuristic(grid.view(), k).unwrap();
        assert!((got - brute_force_width(&grid, k)).abs() <= 1e-12);
    }
}

#[test]
fn single_rep_single_tau_summary_is_that_record() {
    let design = SyntheticDesign::degenerate(3);
    let cfg = BenchConfig {
        reps: 1,
        taus: TauGrid::Explicit(vec![0.01]),
        ..BenchConfig::for_design(&design)
    };
    let summary = run_benchmark(&design, &cfg).unwrap();
    assert_eq!(summary.records.len(), 1);
    let rec = &summary.records[0];
    assert_eq!(rec.tau_star, Some(0.01));
    let stat = summary.selection_error.unwrap();
    assert_eq!((stat.mean, stat.std, stat.count), (rec.selection_error.unwrap(), 0.0, 1));
}

#[test]
fn tau_grid_spans_requested_range() {
    let g = descending_grid(2.0, 1e-3, 30);
    assert_eq!(g.len(), 30);
    assert!((g[0] - 2.0).abs() < 1e-15 && (g[29] - 2e-3).abs() < 1e-15);
    assert!(g.windows(2).all(|w| w[0] > w[1]));
}
