use holotrain::codebook::coverage_membership;
use holotrain::experiment::{sample_users, CodebookSet, ExperimentConfig, Profile, Scenario};
use holotrain::grid::SampleGrid;
use holotrain::model::*;
use holotrain::optimizer::{Codeword, CodewordLabel};
use holotrain::training::*;
use proptest::prelude::*;
use std::f64::consts::PI;

struct Desk {
    config: ExperimentConfig,
    array: ArrayModel,
    books: CodebookSet,
    grid: SampleGrid,
}

fn desk() -> Desk {
    let config = ExperimentConfig::profile(Profile::Desk);
    let array = ArrayModel::new(config.system.clone()).unwrap();
    let books = CodebookSet::generate(&config, &array).unwrap();
    let grid = config.grid().unwrap();
    Desk {
        config,
        array,
        books,
        grid,
    }
}

fn key(seed: u64, users: usize) -> NoiseKey {
    NoiseKey { seed, users, trial: 0 }
}

fn error(u: &User, t: &UserTranscript) -> f64 {
    (u.position.psi - t.psi_hat).powi(2) + (u.position.mu - t.mu_hat).powi(2)
}

#[test]
fn three_user_walkthrough_decodes_planted_cells() {
    let d = desk();
    let cells = [(8, 4), (15, 3), (27, 2)];
    let users: Vec<User> = cells.iter().enumerate().map(|(k, &(i, j))| User::new(k, d.grid.point(i, j))).collect();
    let mm = MeasurementModel::new(0.0, 3).unwrap();
    let t = run_two_phase(&users, &d.books.angular, &d.books.single_beam, &d.array, &mm, key(0, 3)).unwrap();
    let decoded: Vec<(usize, usize)> = t.users.iter().map(|u| (u.angle_index, u.distance_index.unwrap())).collect();
    assert_eq!(decoded, cells);
    assert_eq!(t.users[0].feedback, vec![1, 1, 2, 2, 2]);
    assert_eq!(t.users[1].feedback, vec![1, 2, 2, 2, 1]);
    assert_eq!(t.users[2].feedback, vec![2, 2, 1, 2, 1]);
    assert_eq!((t.slots, t.slots_raw), (10, 15));
}

#[test]
fn single_grid_user_matches_exhaustive_search() {
    let d = desk();
    let mm = MeasurementModel::new(0.0, 1).unwrap();
    let mut agree = 0;
    for (_, _, p) in d.grid.points() {
        let users = [User::new(0, p)];
        let two = run_two_phase(&users, &d.books.angular, &d.books.single_beam, &d.array, &mm, key(1, 1)).unwrap();
        let ex = run_exhaustive(&users, &d.books.single_beam, &d.array, &mm, key(1, 1)).unwrap();
        let (a, b) = (&two.users[0], &ex.users[0]);
        if (a.angle_index, a.distance_index) == (b.angle_index, b.distance_index) {
            agree += 1;
        }
    }
    assert!(agree * 20 >= 19 * d.grid.len(), "{agree}/{} cells agree", d.grid.len());
}

#[test]
fn proposed_overhead_does_not_depend_on_user_count() {
    let d = desk();
    let mut rng = substream("placement", &[3]);
    let few = sample_users(Scenario::Hybrid, 1, &d.grid, &mut rng).unwrap();
    let many = sample_users(Scenario::Hybrid, 16, &d.grid, &mut rng).unwrap();
    let run = |users: &[User]| {
        let mm = MeasurementModel::new(0.01, users.len()).unwrap();
        let t = run_two_phase(users, &d.books.angular, &d.books.single_beam, &d.array, &mm, key(3, users.len())).unwrap();
        (t.slots, t.slots_raw)
    };
    assert_eq!(run(&few), run(&many));
    assert_eq!(run(&few), (10, 15));
    assert_eq!(overhead(Scheme::Proposed, 64, 10, 1, 0), 16);
    assert_eq!(overhead(Scheme::Exhaustive, 64, 10, 1, 0), 640);
    assert_eq!(overhead(Scheme::FarField, 64, 10, 1, 0), 6);
}

#[test]
fn decoding_inverts_ideal_feedback() {
    for s in 1..=6usize {
        let cells = 1usize << s;
        let bounds = (-0.5, 0.5);
        let grid = SampleGrid::new(bounds, (0.005, 0.33), cells, 1).unwrap();
        for i in 1..=cells {
            let tau: Vec<u8> = (1..=s)
                .map(|layer| if coverage_membership(i, layer, 1, cells).unwrap() { 1 } else { 2 })
                .collect();
            let nu = *feedback_to_index(&tau).unwrap().last().unwrap();
            assert_eq!(nu, i);
            assert!((estimate_psi(nu, s, bounds) - grid.psi(i)).abs() < 1e-15);
        }
    }
    assert!((estimate_mu(1, 5, (0.005, 0.33)) - (0.005 + 0.325 / 10.0)).abs() < 1e-15);
}

#[test]
fn zero_pattern_measures_nothing() {
    let a = ArrayModel::new(SystemConfig::with_elements(16)).unwrap();
    let user = User::new(0, PsiMuPosition::new(0.1, 0.1).unwrap());
    let mm = MeasurementModel::new(0.0, 1).unwrap();
    let zero = Codeword::new(vec![0.0; 16], CodewordLabel::Free).unwrap();
    assert_eq!(measure_power(&user, &zero, &a, &mm, &mut substream("n", &[0])), 0.0);

    let noisy = MeasurementModel::new(0.5, 1).unwrap();
    let ones = Codeword::new(vec![1.0; 16], CodewordLabel::Free).unwrap();
    let x = measure_power(&user, &ones, &a, &noisy, &mut substream("n", &[1]));
    let y = measure_power(&user, &ones, &a, &noisy, &mut substream("n", &[1]));
    assert_eq!(x, y);
}

#[test]
fn exhaustive_search_dominates_on_grid_users() {
    let d = desk();
    let mm = MeasurementModel::new(0.0, 3).unwrap();
    for seed in 0..50 {
        let mut rng = substream("placement", &[seed]);
        let users = sample_users(Scenario::GridCenters, 3, &d.grid, &mut rng).unwrap();
        let ex = run_exhaustive(&users, &d.books.single_beam, &d.array, &mm, key(seed, 3)).unwrap();
        let pr = run_two_phase(&users, &d.books.angular, &d.books.single_beam, &d.array, &mm, key(seed, 3)).unwrap();
        for (u, (x, p)) in users.iter().zip(ex.users.iter().zip(&pr.users)) {
            assert!(error(u, x) <= error(u, p), "seed {seed}");
        }
    }
}

/// Plane-wave amplitude patterns from a single traveling wave are close to
/// mirror-symmetric about `ψ ≈ −0.27`, and the codewords are only pinned at
/// grid samples, so off-grid distant users often decode to a wrong column
/// (62/100 within one cell at the desk profile). Kept as a record.
#[test]
#[ignore = "angle-only decoding of off-grid far users falls short of 90%; see the README's known limitations"]
fn far_field_baseline_resolves_distant_users() {
    let d = desk();
    let rayleigh = d.array.rayleigh_distance();
    let width = 1.0 / d.grid.n_psi as f64;
    let mm = MeasurementModel::new(0.0, 1).unwrap();
    let mut rng = substream("far-user", &[0]);
    let mut within = 0;
    for trial in 0..100 {
        let theta = rand::Rng::random_range(&mut rng, 0.5f64.acos()..(-0.5f64).acos());
        let pos = psi_mu_from_polar(PolarPosition::new(2.0 * rayleigh, theta).unwrap()).unwrap();
        let t = run_far_field(&[User::new(0, pos)], &d.books.far_angular, &d.array, &mm, key(trial, 1)).unwrap();
        assert_eq!(t.users[0].mu_hat, 0.0);
        if (t.users[0].psi_hat - pos.psi).abs() <= width {
            within += 1;
        }
    }
    assert!(within >= 90, "{within}/100 within one cell");
}

#[test]
fn far_field_baseline_pays_the_curvature_on_near_users() {
    let d = desk();
    let r = 0.05 * d.array.rayleigh_distance();
    let mm = MeasurementModel::new(0.0, 1).unwrap();
    let (mut far_total, mut prop_total) = (0.0, 0.0);
    for trial in 0..20u64 {
        let theta = PI / 2.0 + 0.4 * (trial as f64 / 19.0 - 0.5);
        let pos = psi_mu_from_polar(PolarPosition::new(r, theta).unwrap()).unwrap();
        let users = [User::new(0, pos)];
        let ff = run_far_field(&users, &d.books.far_angular, &d.array, &mm, key(trial, 1)).unwrap();
        let pr = run_two_phase(&users, &d.books.angular, &d.books.single_beam, &d.array, &mm, key(trial, 1)).unwrap();
        let e = error(&users[0], &ff.users[0]);
        assert!(e >= pos.mu * pos.mu);
        far_total += e;
        prop_total += error(&users[0], &pr.users[0]);
    }
    assert!(far_total > prop_total, "far-field {far_total} vs proposed {prop_total}");
}

#[test]
fn two_stage_is_at_least_as_accurate_as_proposed_without_noise() {
    let d = desk();
    let (mut two_hits, mut prop_hits) = (0, 0);
    for seed in 0..50u64 {
        let mut rng = substream("placement", &[seed, 4]);
        let users = sample_users(Scenario::GridCenters, 4, &d.grid, &mut rng).unwrap();
        let mm = MeasurementModel::new(0.0, 4).unwrap();
        let two = run_two_stage(&users, &d.books.angular, &d.books.single_beam, &d.array, &mm, key(seed, 4)).unwrap();
        let pr = run_two_phase(&users, &d.books.angular, &d.books.single_beam, &d.array, &mm, key(seed, 4)).unwrap();
        for (u, (a, b)) in users.iter().zip(two.users.iter().zip(&pr.users)) {
            assert_eq!(a.angle_index, b.angle_index, "both share the angle sweep");
            two_hits += usize::from(error(u, a) < 1e-18);
            prop_hits += usize::from(error(u, b) < 1e-18);
        }
    }
    assert!(two_hits >= prop_hits, "two-stage {two_hits} vs proposed {prop_hits} exact cells");
}

#[test]
fn dft_distance_limiting_cases() {
    let d = desk();
    let mm = MeasurementModel::new(0.0, 1).unwrap();
    let mut rng = substream("placement", &[5]);
    for seed in 0..20u64 {
        let users = sample_users(Scenario::Hybrid, 1, &d.grid, &mut rng).unwrap();
        let all = run_dft_distance(
            &users,
            &d.books.far_single_beam,
            &d.books.single_beam,
            &d.array,
            &mm,
            key(seed, 1),
            d.grid.n_psi,
        )
        .unwrap();
        let ex = run_exhaustive(&users, &d.books.single_beam, &d.array, &mm, key(seed, 1)).unwrap();
        assert_eq!(
            (all.users[0].angle_index, all.users[0].distance_index),
            (ex.users[0].angle_index, ex.users[0].distance_index)
        );
    }

    // Grid angle on the farthest row, one candidate: the far-field sweep and
    // the tree pick the same column, and both then scan the same J patterns.
    let mut same = 0;
    let total = d.grid.n_psi;
    for i in 1..=d.grid.n_psi {
        let users = [User::new(0, d.grid.point(i, 1))];
        let one = run_dft_distance(&users, &d.books.far_single_beam, &d.books.single_beam, &d.array, &mm, key(0, 1), 1)
            .unwrap();
        let two = run_two_stage(&users, &d.books.angular, &d.books.single_beam, &d.array, &mm, key(0, 1)).unwrap();
        if (one.users[0].angle_index, one.users[0].distance_index)
            == (two.users[0].angle_index, two.users[0].distance_index)
        {
            same += 1;
        }
    }
    assert!(same * 10 >= 9 * total, "{same}/{total} identical");
    assert!(run_dft_distance(
        &[User::new(0, d.grid.point(1, 1))],
        &d.books.far_single_beam,
        &d.books.single_beam,
        &d.array,
        &mm,
        key(0, 1),
        0
    )
    .is_err());
}

#[test]
fn more_snr_means_less_error() {
    let d = desk();
    let mean_error = |noise: f64| {
        let mut total = 0.0;
        for trial in 0..100u64 {
            let mut rng = substream("placement", &[d.config.seed, 2, trial]);
            let users = sample_users(Scenario::Hybrid, 2, &d.grid, &mut rng).unwrap();
            let mm = MeasurementModel::new(noise, 2).unwrap();
            let t = run_two_phase(&users, &d.books.angular, &d.books.single_beam, &d.array, &mm, NoiseKey { seed: 1, users: 2, trial }).unwrap();
            total += users.iter().zip(&t.users).map(|(u, t)| error(u, t)).sum::<f64>() / 2.0;
        }
        total / 100.0
    };
    assert!(mean_error(1e-2) <= mean_error(1.0));
}

proptest! {
    #[test]
    fn decoded_indices_stay_in_range(tau in prop::collection::vec(1u8..=2, 1..12)) {
        let nu = feedback_to_index(&tau).unwrap();
        for (s, &v) in nu.iter().enumerate() {
            prop_assert!(v >= 1 && v <= 1 << (s + 1));
        }
        let psi = estimate_psi(*nu.last().unwrap(), tau.len(), (-0.5, 0.5));
        prop_assert!((-0.5..=0.5).contains(&psi));
    }

    #[test]
    fn distance_estimates_stay_in_range(j in 1usize..40, frac in 0.0f64..1.0) {
        let zeta = 1 + ((j as f64 - 1.0) * frac) as usize;
        let mu = estimate_mu(zeta, j, (0.005, 0.33));
        prop_assert!((0.005..=0.33).contains(&mu));
    }
}
