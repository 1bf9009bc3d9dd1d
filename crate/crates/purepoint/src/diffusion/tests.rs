use std::sync::LazyLock;

use ndarray::{arr2, Array1, Array2};
use rand::Rng;

use crate::geom::{chamfer_distance, flat_l2_norm, LabeledCloud, PointCloud};
use crate::rng::{named_stream, normal_matrix, stream};
use crate::testutil::{toy_diffusion_config as toy_config, TOY_DIFFUSION as TOY};

use super::*;

fn random_cloud(seed: u64, n: usize) -> PointCloud {
    PointCloud::new(normal_matrix(&mut stream(seed), n, 3).mapv(|v| (v * 0.3).clamp(-1.0, 1.0)))
        .unwrap()
}

/// Clouds of i.i.d. Gaussian points, the fixture with a known analytic score.
const GAUSS_SIGMA: f64 = 0.4;

fn gauss_cloud(i: u64) -> PointCloud {
    let pts = normal_matrix(&mut named_stream(123, "gauss", &[i]), 48, 3) * GAUSS_SIGMA;
    PointCloud::new(pts).unwrap()
}

/// Model trained on the Gaussian fixture (coarse phase then a fine phase at a
/// lower rate), plus the initial and final losses of the run.
static GAUSS: LazyLock<(DiffusionModel, f64, f64)> = LazyLock::new(|| {
    let data: Vec<LabeledCloud> = (0..24)
        .map(|i| LabeledCloud::new(gauss_cloud(i), 0, 1).unwrap())
        .collect();
    let mut model = DiffusionModel::new(toy_config(), 6).unwrap();
    let coarse = train_diffusion(
        &mut model,
        &data,
        &DiffusionTrainConfig {
            epochs: 200,
            batch_size: 8,
            lr: 3e-3,
            t_range: None,
            seed: 10,
        },
    )
    .unwrap();
    let fine = train_diffusion(
        &mut model,
        &data,
        &DiffusionTrainConfig {
            epochs: 120,
            batch_size: 8,
            lr: 5e-4,
            t_range: None,
            seed: 11,
        },
    )
    .unwrap();
    (model, coarse.initial_loss, *fine.loss.last().unwrap())
});

#[test]
fn forward_step_zero_beta_is_identity() {
    let s = NoiseSchedule::from_betas_unchecked(vec![0.0; 4]);
    let x = random_cloud(1, 10);
    let out = forward_step(&x, 2, &s, &mut stream(2)).unwrap();
    assert_eq!(out.points(), x.points());
}

#[test]
fn forward_step_rejects_out_of_range_steps() {
    let s = NoiseSchedule::default();
    let x = random_cloud(2, 4);
    assert!(forward_step(&x, 0, &s, &mut stream(0)).is_err());
    assert!(forward_step(&x, 201, &s, &mut stream(0)).is_err());
}

#[test]
fn forward_step_moments_match_mc_oracle() {
    let s = NoiseSchedule::default();
    let t = 200; // beta = 0.05
    let beta = s.beta(t).unwrap();
    let x = PointCloud::new(arr2(&[[0.4, -0.2, 0.1], [-0.5, 0.3, 0.0]])).unwrap();
    let n_draws = 10_000;
    let mut rng = stream(7);
    let mut sum = Array2::<f64>::zeros((2, 3));
    let mut sum_sq = Array2::<f64>::zeros((2, 3));
    for _ in 0..n_draws {
        let y = forward_step(&x, t, &s, &mut rng).unwrap();
        sum += y.points();
        sum_sq += &y.points().mapv(|v| v * v);
    }
    let mean = sum / n_draws as f64;
    let expected_mean = x.points() * (1.0 - beta).sqrt();
    let mean_tol = 3.0 * (beta / n_draws as f64).sqrt();
    for (m, e) in mean.iter().zip(expected_mean.iter()) {
        assert!((m - e).abs() < mean_tol, "mean {m} vs {e}");
    }
    let var = &sum_sq / n_draws as f64 - &mean.mapv(|v| v * v);
    let var_tol = 3.0 * beta * (2.0 / (n_draws as f64 - 1.0)).sqrt();
    for v in var.iter() {
        assert!((v - beta).abs() < var_tol, "var {v} vs {beta}");
    }
}

#[test]
fn closed_form_at_t0_is_exact_identity() {
    let s = NoiseSchedule::default();
    let x = random_cloud(3, 6);
    let (out, eps) = diffuse_closed_form(&x, 0, &s, &mut stream(4)).unwrap();
    assert_eq!(out.points(), x.points());
    assert!(eps.iter().all(|&v| v == 0.0));
}

#[test]
fn closed_form_at_t_max_is_near_standard_normal() {
    let s = NoiseSchedule::default();
    // keep the signal term well below the Monte-Carlo bound on the mean
    let x = PointCloud::new(arr2(&[[0.05, -0.03, 0.02]])).unwrap();
    let n_draws = 10_000;
    let mut rng = stream(8);
    let mut sum = [0.0; 3];
    let mut sum_sq = [0.0; 3];
    for _ in 0..n_draws {
        let (y, _) = diffuse_closed_form(&x, 200, &s, &mut rng).unwrap();
        for d in 0..3 {
            sum[d] += y.points()[[0, d]];
            sum_sq[d] += y.points()[[0, d]].powi(2);
        }
    }
    for d in 0..3 {
        let mean = sum[d] / n_draws as f64;
        let var = sum_sq[d] / n_draws as f64 - mean * mean;
        assert!(mean.abs() < 3.0 / (n_draws as f64).sqrt(), "mean {mean}");
        assert!(
            (var - 1.0).abs() < 3.0 * (2.0 / n_draws as f64).sqrt(),
            "var {var}"
        );
    }
}

#[test]
fn closed_form_matches_chained_moments_at_t5() {
    let s = NoiseSchedule::default();
    let x0 = PointCloud::new(arr2(&[[0.3, -0.4, 0.2]])).unwrap();
    let t_star = 5;
    let n_draws = 10_000;

    let mut rng = stream(9);
    let mut draw_stats = |chained: bool| -> ([f64; 3], [f64; 3]) {
        let mut sum = [0.0; 3];
        let mut sum_sq = [0.0; 3];
        for _ in 0..n_draws {
            let y = if chained {
                let mut cur = x0.clone();
                for t in 1..=t_star {
                    cur = forward_step(&cur, t, &s, &mut rng).unwrap();
                }
                cur
            } else {
                diffuse_closed_form(&x0, t_star, &s, &mut rng).unwrap().0
            };
            for d in 0..3 {
                sum[d] += y.points()[[0, d]];
                sum_sq[d] += y.points()[[0, d]].powi(2);
            }
        }
        let mut mean = [0.0; 3];
        let mut var = [0.0; 3];
        for d in 0..3 {
            mean[d] = sum[d] / n_draws as f64;
            var[d] = sum_sq[d] / n_draws as f64 - mean[d] * mean[d];
        }
        (mean, var)
    };

    let (mean_c, var_c) = draw_stats(false);
    let (mean_i, var_i) = draw_stats(true);
    let marginal_var = 1.0 - s.alpha_bar(t_star).unwrap();
    let mean_tol = 3.0 * (2.0 * marginal_var / n_draws as f64).sqrt();
    let var_tol = 3.0 * marginal_var * 2.0 * (2.0 / n_draws as f64).sqrt();
    for d in 0..3 {
        assert!(
            (mean_c[d] - mean_i[d]).abs() < mean_tol,
            "mean {} vs {}",
            mean_c[d],
            mean_i[d]
        );
        assert!(
            (var_c[d] - var_i[d]).abs() < var_tol,
            "var {} vs {}",
            var_c[d],
            var_i[d]
        );
    }
}

#[test]
fn fresh_model_is_an_exact_zero_predictor() {
    let model = DiffusionModel::new(toy_config(), 3).unwrap();
    let x = random_cloud(5, 8);
    let z = model.encode(&x).unwrap();
    let eps = model.eps_theta(x.points(), 7.0, &z).unwrap();
    assert!(eps.iter().all(|&v| v == 0.0));

    // with eps = 0 the deterministic reverse step is a pure rescale
    let t = 5;
    let out = reverse_step(&model, &x, t, &z, &mut stream(0), false).unwrap();
    let alpha = model.schedule.alpha(t).unwrap();
    let expected = x.points() / alpha.sqrt();
    for (a, b) in out.points().iter().zip(expected.iter()) {
        assert!((a - b).abs() < 1e-15);
    }

    let score = score_from_eps(&model, &x, t, &z).unwrap();
    assert!(score.iter().all(|&v| v == 0.0));
}

#[test]
fn perfect_noise_oracle_inverts_the_t1_diffusion() {
    let s = NoiseSchedule::default();
    let x0 = random_cloud(6, 12);
    let (x1, eps) = diffuse_closed_form(&x0, 1, &s, &mut stream(7)).unwrap();
    let rec = reverse_step_with_eps(&x1, 1, &s, &eps, &mut stream(8), false).unwrap();
    for (a, b) in rec.points().iter().zip(x0.points().iter()) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn stochastic_reverse_adds_exactly_the_drawn_noise() {
    let s = NoiseSchedule::default();
    let x = random_cloud(9, 6);
    let eps = normal_matrix(&mut stream(10), 6, 3);
    let t = 5;
    let det = reverse_step_with_eps(&x, t, &s, &eps, &mut stream(11), false).unwrap();
    let sto = reverse_step_with_eps(&x, t, &s, &eps, &mut stream(12), true).unwrap();
    let xi = normal_matrix(&mut stream(12), 6, 3);
    let beta = s.beta(t).unwrap();
    let expect = det.points() + &(xi * beta.sqrt());
    for (a, b) in sto.points().iter().zip(expect.iter()) {
        assert!((a - b).abs() < 1e-15);
    }

    // no noise is added at the final step even in stochastic mode
    let det1 = reverse_step_with_eps(&x, 1, &s, &eps, &mut stream(13), false).unwrap();
    let sto1 = reverse_step_with_eps(&x, 1, &s, &eps, &mut stream(14), true).unwrap();
    assert_eq!(det1.points(), sto1.points());
}

#[test]
fn reverse_step_rejects_out_of_range_steps() {
    let s = NoiseSchedule::default();
    let x = random_cloud(15, 4);
    let eps = Array2::zeros((4, 3));
    assert!(reverse_step_with_eps(&x, 0, &s, &eps, &mut stream(0), false).is_err());
    assert!(reverse_step_with_eps(&x, 201, &s, &eps, &mut stream(0), false).is_err());
}

#[test]
fn score_is_linear_in_the_noise_estimate() {
    let s = NoiseSchedule::default();
    let eps = normal_matrix(&mut stream(16), 5, 3);
    let a = score_from_eps_array(&eps, 10, &s).unwrap();
    let b = score_from_eps_array(&(&eps * 2.5), 10, &s).unwrap();
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((y - 2.5 * x).abs() < 1e-12);
    }
}

#[test]
fn score_is_undefined_when_alpha_bar_is_one() {
    let s = NoiseSchedule::from_betas_unchecked(vec![0.0; 4]);
    let eps = Array2::zeros((3, 3));
    assert!(score_from_eps_array(&eps, 2, &s).is_err());
}

#[test]
fn zero_beta_sde_is_the_identity() {
    let mut model = DiffusionModel::new(toy_config(), 4).unwrap();
    model.schedule = NoiseSchedule::from_betas_unchecked(vec![0.0; 40]);
    let x = random_cloud(17, 10);
    let z = model.encode(&x).unwrap();
    for stochastic in [false, true] {
        let out =
            sde_reverse_integrate(&model, &x, 10, &z, &mut stream(18), 10, stochastic).unwrap();
        assert_eq!(out.points(), x.points());
    }
}

#[test]
fn sde_validates_inputs() {
    let model = DiffusionModel::new(toy_config(), 4).unwrap();
    let x = random_cloud(19, 4);
    let z = model.encode(&x).unwrap();
    assert!(sde_reverse_integrate(&model, &x, 0, &z, &mut stream(0), 5, false).is_err());
    assert!(sde_reverse_integrate(&model, &x, 41, &z, &mut stream(0), 5, false).is_err());
    assert!(sde_reverse_integrate(&model, &x, 10, &z, &mut stream(0), 0, false).is_err());
}

#[test]
fn sde_reports_non_finite_states() {
    let mut model = DiffusionModel::new(toy_config(), 4).unwrap();
    let x = random_cloud(20, 6);
    let z = model.encode(&x).unwrap();
    let idx = model.params.names().position(|n| n == "eps_out.w").unwrap();
    model.params.values_mut()[idx].fill(f64::NAN);
    let err = sde_reverse_integrate(&model, &x, 10, &z, &mut stream(21), 10, false);
    assert!(err.is_err());
}

#[test]
fn sde_is_deterministic_per_seed() {
    let (model, data) = &*TOY;
    let x = &data.test[1].cloud;
    let z = model.encode(x).unwrap();
    let a = sde_reverse_integrate(model, x, 10, &z, &mut stream(30), 10, true).unwrap();
    let b = sde_reverse_integrate(model, x, 10, &z, &mut stream(30), 10, true).unwrap();
    let c = sde_reverse_integrate(model, x, 10, &z, &mut stream(31), 10, true).unwrap();
    assert_eq!(a.points(), b.points());
    assert!(a.points() != c.points());
}

#[test]
fn encoder_is_permutation_invariant() {
    let model = DiffusionModel::new(toy_config(), 7).unwrap();
    let x = random_cloud(22, 16);
    let mut rev = x.points().to_owned();
    for (i, row) in x.points().rows().into_iter().rev().enumerate() {
        rev.row_mut(i).assign(&row);
    }
    let za = model.encode(&x).unwrap();
    let zb = model.encode(&PointCloud::new(rev).unwrap()).unwrap();
    assert_eq!(za.values(), zb.values());
}

#[test]
fn eps_theta_validates_shapes() {
    let model = DiffusionModel::new(toy_config(), 7).unwrap();
    let x = random_cloud(23, 6);
    let z = model.encode(&x).unwrap();
    let out = model.eps_theta(x.points(), 3.0, &z).unwrap();
    assert_eq!(out.dim(), (6, 3));
    let bad_z = LatentCode::new(Array1::zeros(7)).unwrap();
    assert!(model.eps_theta(x.points(), 3.0, &bad_z).is_err());
    assert!(model
        .eps_theta(&Array2::zeros((4, 2)), 3.0, &z)
        .is_err());
}

#[test]
fn eps_vjp_matches_finite_differences() {
    let mut model = DiffusionModel::new(toy_config(), 8).unwrap();
    // zero-init output has zero gradient w.r.t. the inputs; nudge it
    let idx = model.params.names().position(|n| n == "eps_out.w").unwrap();
    model.params.values_mut()[idx] = normal_matrix(&mut stream(24), 32, 3) * 0.2;
    let x = normal_matrix(&mut stream(25), 5, 3);
    let z = LatentCode::new(normal_matrix(&mut stream(26), 1, 16).row(0).to_owned()).unwrap();
    let upstream = normal_matrix(&mut stream(27), 5, 3);
    let (gx, gz) = model.eps_vjp(&x, 4.0, &z, &upstream).unwrap();

    let scalar = |xp: &Array2<f64>, zp: &LatentCode| -> f64 {
        (model.eps_theta(xp, 4.0, zp).unwrap() * &upstream).sum()
    };
    let h = 1e-5;
    let mut rng = stream(28);
    for _ in 0..10 {
        let i = rng.random_range(0..5);
        let d = rng.random_range(0..3);
        let mut plus = x.clone();
        plus[[i, d]] += h;
        let mut minus = x.clone();
        minus[[i, d]] -= h;
        let fd = (scalar(&plus, &z) - scalar(&minus, &z)) / (2.0 * h);
        assert!(
            (fd - gx[[i, d]]).abs() / fd.abs().max(gx[[i, d]].abs()).max(1e-6) < 1e-4,
            "x ({i},{d}): {fd} vs {}",
            gx[[i, d]]
        );
    }
    for j in [0usize, 5, 11, 15] {
        let mut plus = z.values().clone();
        plus[j] += h;
        let mut minus = z.values().clone();
        minus[j] -= h;
        let fd = (scalar(&x, &LatentCode::new(plus).unwrap())
            - scalar(&x, &LatentCode::new(minus).unwrap()))
            / (2.0 * h);
        assert!(
            (fd - gz[j]).abs() / fd.abs().max(gz[j].abs()).max(1e-6) < 1e-4,
            "z {j}: {fd} vs {}",
            gz[j]
        );
    }
}

#[test]
fn encoder_vjp_matches_finite_differences() {
    let model = DiffusionModel::new(toy_config(), 9).unwrap();
    let x = random_cloud(29, 6);
    let upstream = normal_matrix(&mut stream(30), 1, 16).row(0).to_owned();
    let g = model.encoder_vjp(&x, &upstream).unwrap();
    let scalar = |pts: &Array2<f64>| -> f64 {
        let z = model.encode(&PointCloud::new(pts.clone()).unwrap()).unwrap();
        (z.values() * &upstream).sum()
    };
    let h = 1e-5;
    let mut rng = stream(31);
    for _ in 0..10 {
        let i = rng.random_range(0..6);
        let d = rng.random_range(0..3);
        let mut plus = x.points().to_owned();
        plus[[i, d]] += h;
        let mut minus = x.points().to_owned();
        minus[[i, d]] -= h;
        let fd = (scalar(&plus) - scalar(&minus)) / (2.0 * h);
        assert!(
            (fd - g[[i, d]]).abs() / fd.abs().max(g[[i, d]].abs()).max(1e-6) < 1e-4,
            "({i},{d}): {fd} vs {}",
            g[[i, d]]
        );
    }
}

#[test]
fn checkpoint_roundtrip_reproduces_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = DiffusionModel::new(toy_config(), 10).unwrap();
    // custom schedule must survive the roundtrip too
    model.schedule = NoiseSchedule::linear(40, 2e-4, 0.03).unwrap();
    let path = dir.path().join("diffusion.ppar");
    model.save(&path).unwrap();
    let restored = DiffusionModel::load(&path).unwrap();
    assert_eq!(model.config, restored.config);
    assert_eq!(model.schedule, restored.schedule);
    let x = random_cloud(32, 8);
    let z = model.encode(&x).unwrap();
    let zr = restored.encode(&x).unwrap();
    assert_eq!(z.values(), zr.values());
    assert_eq!(
        model.eps_theta(x.points(), 6.0, &z).unwrap(),
        restored.eps_theta(x.points(), 6.0, &zr).unwrap()
    );
}

#[test]
fn zero_epoch_training_reports_initial_loss_near_three() {
    let data: Vec<LabeledCloud> = (0..8)
        .map(|i| LabeledCloud::new(gauss_cloud(50 + i), 0, 1).unwrap())
        .collect();
    let mut model = DiffusionModel::new(toy_config(), 11).unwrap();
    let before = model.params.clone();
    let report = train_diffusion(
        &mut model,
        &data,
        &DiffusionTrainConfig {
            epochs: 0,
            ..DiffusionTrainConfig::default()
        },
    )
    .unwrap();
    assert_eq!(model.params, before);
    assert!(report.loss.is_empty());
    assert!(
        (report.initial_loss - 3.0).abs() < 0.4,
        "initial loss {}",
        report.initial_loss
    );
}

#[test]
fn training_is_deterministic() {
    let data: Vec<LabeledCloud> = (0..6)
        .map(|i| LabeledCloud::new(gauss_cloud(60 + i), 0, 1).unwrap())
        .collect();
    let cfg = DiffusionTrainConfig {
        epochs: 3,
        batch_size: 4,
        lr: 2e-3,
        t_range: None,
        seed: 33,
    };
    let mut a = DiffusionModel::new(toy_config(), 12).unwrap();
    let ra = train_diffusion(&mut a, &data, &cfg).unwrap();
    let mut b = DiffusionModel::new(toy_config(), 12).unwrap();
    let rb = train_diffusion(&mut b, &data, &cfg).unwrap();
    assert_eq!(ra.loss, rb.loss);
    assert_eq!(a.params, b.params);
}

#[test]
fn non_finite_loss_is_an_error() {
    let data = vec![LabeledCloud::new(gauss_cloud(70), 0, 1).unwrap()];
    let mut model = DiffusionModel::new(toy_config(), 13).unwrap();
    let idx = model.params.names().position(|n| n == "eps_out.w").unwrap();
    model.params.values_mut()[idx].fill(1e300);
    assert!(train_diffusion(&mut model, &data, &DiffusionTrainConfig::default()).is_err());
}

#[test]
fn training_loss_starts_near_three_and_at_least_halves() {
    let (_, initial, final_loss) = &*GAUSS;
    assert!((initial - 3.0).abs() < 0.3, "initial loss {initial}");
    assert!(
        *final_loss <= 0.5 * initial,
        "final {final_loss} vs initial {initial}"
    );
}

#[test]
fn trained_encoder_separates_shape_classes() {
    let (model, data) = &*TOY;
    let zs: Vec<(usize, Array1<f64>)> = data
        .test
        .iter()
        .map(|s| (s.label, model.encode(&s.cloud).unwrap().values().clone()))
        .collect();
    let mut good = 0;
    let mut total = 0;
    for (i, (la, za)) in zs.iter().enumerate() {
        for (j, (lb, zb)) in zs.iter().enumerate() {
            if i == j || la != lb {
                continue;
            }
            for (lc, zc) in &zs {
                if lc == la {
                    continue;
                }
                let dp = (za - zb).mapv(|v| v * v).sum();
                let dn = (za - zc).mapv(|v| v * v).sum();
                total += 1;
                if dp < dn {
                    good += 1;
                }
            }
        }
    }
    assert!(total > 0);
    let frac = good as f64 / total as f64;
    assert!(frac >= 0.7, "triplet fraction {frac} ({good}/{total})");
}

#[test]
fn sde_matches_the_ddpm_chain_on_a_matched_grid() {
    let (model, data) = &*TOY;
    let x_a = &data.test[0].cloud;
    let z = model.encode(x_a).unwrap();
    let mut rng = named_stream(77, "grid", &[]);
    let (xt, _) = diffuse_closed_form(x_a, 10, &model.schedule, &mut rng).unwrap();
    let mut chain = xt.clone();
    for t in (1..=10).rev() {
        chain = reverse_step(model, &chain, t, &z, &mut rng, false).unwrap();
    }
    let sde = sde_reverse_integrate(model, &xt, 10, &z, &mut rng, 10, false).unwrap();
    let rel = chamfer_distance(&sde, &chain) / chamfer_distance(&xt, &chain);
    assert!(rel < 0.05, "relative chamfer {rel}");
}

#[test]
fn sde_step_halving_shows_first_order_convergence() {
    let (model, data) = &*TOY;
    let x_a = &data.test[2].cloud;
    let z = model.encode(x_a).unwrap();
    let mut rng = named_stream(78, "conv", &[]);
    let (xt, _) = diffuse_closed_form(x_a, 10, &model.schedule, &mut rng).unwrap();
    let run = |steps: usize| sde_reverse_integrate(model, &xt, 10, &z, &mut stream(0), steps, false);
    let a = run(5).unwrap();
    let b = run(10).unwrap();
    let c = run(20).unwrap();
    let coarse = flat_l2_norm(&(a.points() - b.points()));
    let fine = flat_l2_norm(&(b.points() - c.points()));
    assert!(fine < coarse, "no convergence trend: {coarse} then {fine}");
}

#[test]
fn trained_score_matches_the_analytic_gaussian_score() {
    let (model, _, _) = &*GAUSS;
    for t in [20usize, 40] {
        let mut rels = Vec::new();
        for i in 100..106 {
            let clean = gauss_cloud(i);
            let z = model.encode(&clean).unwrap();
            let mut rng = named_stream(9, "score", &[i, t as u64]);
            let (xt, _) = diffuse_closed_form(&clean, t, &model.schedule, &mut rng).unwrap();
            let s_model = score_from_eps(model, &xt, t, &z).unwrap();
            let ab = model.schedule.alpha_bar(t).unwrap();
            let var = ab * GAUSS_SIGMA * GAUSS_SIGMA + (1.0 - ab);
            let s_true: Array2<f64> = xt.points() * (-1.0 / var);
            rels.push(flat_l2_norm(&(&s_model - &s_true)) / flat_l2_norm(&s_true));
        }
        rels.sort_by(f64::total_cmp);
        let median = rels[rels.len() / 2];
        assert!(median < 0.10, "t={t}: median rel err {median} ({rels:?})");
    }
}
