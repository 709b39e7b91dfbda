use macect::mbir::{
    proximal_solve, qggmrf_reconstruct, ForwardModelTerm, ProxOptions, ProxSolver, QggmrfOptions, QggmrfPrior,
    QggmrfSolver,
};
use macect::metrics::nrmse;
use macect::phantom::{add_noise, make_cracked_cylinder, NoiseModel, PhantomSpec};
use macect::projector::forward_project;
use macect::{Grid, ScanGeometry, Sinogram, Volume};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_volume(grid: Grid, seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Volume::from_fn(grid, |_, _, _| rng.random_range(0.0..1.0))
}

fn small_truth() -> Volume {
    let mut spec = PhantomSpec::default();
    spec.dims = [24, 24, 3];
    spec.cylinder_radius = 10.0;
    spec.cracks.iter_mut().for_each(|c| {
        let [a, b] = c.radial_range.unwrap();
        c.radial_range = Some([a / 5.0, b / 5.0]);
    });
    spec.concentric_crack = None;
    make_cracked_cylinder(&spec).unwrap()
}

fn tight(solver: ProxSolver) -> ProxOptions {
    ProxOptions {
        solver,
        tol: 1e-11,
        max_iters: 20_000,
    }
}

#[test]
fn proximal_solution_matches_dense_normal_equations() {
    let grid = Grid::new(8, 7, 2);
    let g = ScanGeometry::four_view(&grid);
    let truth = random_volume(grid, 1);
    let y = add_noise(&forward_project(&truth, &g).unwrap(), &NoiseModel::new(0.1, 2)).unwrap();
    let fm = ForwardModelTerm::new(y, 0.7).unwrap();
    let w = random_volume(grid, 3);
    let sigma = 0.8;

    let n = grid.len();
    let mut a = DMatrix::zeros(g.len(), n);
    for p in 0..n {
        let mut e = Volume::zeros(grid);
        e.data_mut()[p] = 1.0;
        for (r, v) in forward_project(&e, &g).unwrap().data().iter().enumerate() {
            a[(r, p)] = *v;
        }
    }
    let lam = DMatrix::from_diagonal(&(DVector::from_column_slice(fm.sinogram().weights()) / fm.alpha()));
    let h = a.transpose() * &lam * &a + DMatrix::identity(n, n) / (sigma * sigma);
    let b = a.transpose() * &lam * DVector::from_column_slice(fm.sinogram().data())
        + DVector::from_column_slice(w.data()) / (sigma * sigma);
    let oracle = h.cholesky().unwrap().solve(&b);
    let oracle = Volume::from_vec(grid, oracle.as_slice().to_vec()).unwrap();

    for solver in [ProxSolver::Icd, ProxSolver::Cg] {
        let out = proximal_solve(&fm, &w, sigma, &tight(solver), None).unwrap();
        assert!(out.converged, "{solver:?}");
        assert!(out.volume.distance(&oracle) / oracle.norm() < 1e-6, "{solver:?}");
    }
}

#[test]
fn proximal_map_is_homogeneous() {
    let grid = Grid::new(10, 10, 2);
    let g = ScanGeometry::four_view(&grid);
    let y = forward_project(&random_volume(grid, 4), &g).unwrap();
    let w = random_volume(grid, 5);
    let s = 3.5;
    let ys = Sinogram::from_vec(g.clone(), y.data().iter().map(|v| s * v).collect()).unwrap();
    let base = proximal_solve(&ForwardModelTerm::new(y, 1.0).unwrap(), &w, 0.6, &tight(ProxSolver::Cg), None).unwrap();
    let scaled = proximal_solve(
        &ForwardModelTerm::new(ys, 1.0).unwrap(),
        &w.map(|v| s * v),
        0.6,
        &tight(ProxSolver::Cg),
        None,
    )
    .unwrap();
    let expect = base.volume.map(|v| s * v);
    assert!(scaled.volume.distance(&expect) / expect.norm() < 1e-8);
}

#[test]
fn weak_proximal_term_recovers_noiseless_dense_data() {
    let truth = small_truth();
    let g = ScanGeometry::equiangular(truth.grid(), 90);
    let fm = ForwardModelTerm::new(forward_project(&truth, &g).unwrap(), 1.0).unwrap();
    let out = proximal_solve(&fm, &Volume::zeros(*truth.grid()), 100.0, &tight(ProxSolver::Cg), None).unwrap();
    let err = nrmse(&out.volume, &truth).unwrap();
    assert!(err < 0.02, "{err}");
}

#[test]
fn qggmrf_descends_every_pass() {
    let truth = small_truth();
    let g = ScanGeometry::four_view(truth.grid());
    let y = add_noise(&forward_project(&truth, &g).unwrap(), &NoiseModel::new(0.2, 5)).unwrap();
    let fm = ForwardModelTerm::new(y, 1.0).unwrap();
    let prior = QggmrfPrior {
        sigma_x: 0.1,
        t: 0.1,
        ..Default::default()
    };
    for solver in [QggmrfSolver::Icd, QggmrfSolver::Majorize { inner: 5 }] {
        let opts = QggmrfOptions {
            max_passes: 10,
            stop_rel_change: 0.0,
            solver,
        };
        let out = qggmrf_reconstruct(&fm, &prior, &Volume::zeros(*truth.grid()), &opts).unwrap();
        assert_eq!(out.costs.len(), 11);
        for pair in out.costs.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-12), "{solver:?}: {pair:?}");
        }
    }
}

#[test]
fn qggmrf_recovers_noiseless_dense_data() {
    let truth = small_truth();
    let g = ScanGeometry::equiangular(truth.grid(), 90);
    let fm = ForwardModelTerm::new(forward_project(&truth, &g).unwrap(), 1.0).unwrap();
    let opts = QggmrfOptions {
        max_passes: 60,
        ..Default::default()
    };
    let prior = QggmrfPrior {
        sigma_x: 0.2,
        ..Default::default()
    };
    let out = qggmrf_reconstruct(&fm, &prior, &Volume::zeros(*truth.grid()), &opts).unwrap();
    let err = nrmse(&out.volume, &truth).unwrap();
    assert!(err < 0.05, "{err} after {} passes", out.passes);
}

#[test]
fn qggmrf_solvers_reach_the_same_minimum() {
    let truth = small_truth();
    let g = ScanGeometry::four_view(truth.grid());
    let y = add_noise(&forward_project(&truth, &g).unwrap(), &NoiseModel::new(0.2, 6)).unwrap();
    let fm = ForwardModelTerm::new(y, 1.0).unwrap();
    let prior = QggmrfPrior {
        sigma_x: 0.3,
        ..Default::default()
    };
    let run = |solver, passes| {
        let opts = QggmrfOptions {
            max_passes: passes,
            stop_rel_change: 0.0,
            solver,
        };
        qggmrf_reconstruct(&fm, &prior, &Volume::zeros(*truth.grid()), &opts).unwrap()
    };
    let icd = run(QggmrfSolver::Icd, 400);
    let maj = run(QggmrfSolver::Majorize { inner: 20 }, 100);
    let (ci, cm) = (*icd.costs.last().unwrap(), *maj.costs.last().unwrap());
    assert!((ci - cm).abs() < 1e-4 * ci, "{ci} vs {cm}");
}
