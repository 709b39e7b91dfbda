use std::time::Instant;

use macect::agents::{
    quadratic_proximal_agent, Agent, AgentKind, ForwardModelAgent, NlmVolumeAgent, NlmVolumeConfig,
};
use macect::mace::{
    apply_g, apply_l, compute_mu, equilibrium_residual, mace_solve, mace_solve_with_observer, MaceConfig,
    MaceSolver, StateStack,
};
use macect::mbir::{ForwardModelTerm, ProxOptions, ProxSolver};
use macect::phantom::{add_noise, make_cracked_cylinder, NoiseModel, PhantomSpec};
use macect::projector::forward_project;
use macect::{Grid, ScanGeometry, Volume};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_volume(grid: Grid, seed: u64, scale: f64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Volume::from_fn(grid, |_, _, _| scale * rng.random_range(-1.0..1.0))
}

fn tight() -> ProxOptions {
    ProxOptions {
        solver: ProxSolver::Cg,
        tol: 1e-12,
        max_iters: 10_000,
    }
}

/// Noisy 4-view data of a 16x16x4 cylinder.
fn problem() -> (ForwardModelTerm, Volume) {
    let spec = PhantomSpec::cylinder([16, 16, 4], 6.0, 1.0);
    let truth = make_cracked_cylinder(&spec).unwrap();
    let g = ScanGeometry::four_view(truth.grid());
    let y = add_noise(&forward_project(&truth, &g).unwrap(), &NoiseModel::new(0.05, 11)).unwrap();
    (ForwardModelTerm::new(y, 1.0).unwrap(), truth)
}

/// Dense system matrix, one projected unit vector per column.
fn dense_a(grid: Grid, g: &ScanGeometry) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(g.len(), grid.len());
    for p in 0..grid.len() {
        let mut e = Volume::zeros(grid);
        e.data_mut()[p] = 1.0;
        let col = forward_project(&e, g).unwrap();
        for (r, v) in col.data().iter().enumerate() {
            a[(r, p)] = *v;
        }
    }
    a
}

/// `argmin (1/2α)‖y − Ax‖²_Λ + Σ β_k (λ_k/2)‖x − m_k‖²` by a dense Cholesky solve.
fn dense_map(fm: &ForwardModelTerm, grid: Grid, priors: &[(f64, f64, &Volume)]) -> Volume {
    let a = dense_a(grid, fm.geometry());
    let lam = DVector::from_column_slice(fm.sinogram().weights()) / fm.alpha();
    let y = DVector::from_column_slice(fm.sinogram().data());
    let mut at_lam = a.transpose();
    for (r, mut col) in at_lam.column_iter_mut().enumerate() {
        col *= lam[r];
    }
    let mut h = &at_lam * &a;
    let mut b = &at_lam * &y;
    for &(beta, lambda, m) in priors {
        for p in 0..grid.len() {
            h[(p, p)] += beta * lambda;
            b[p] += beta * lambda * m.data()[p];
        }
    }
    let x = h.cholesky().expect("normal matrix is positive definite").solve(&b);
    Volume::from_vec(grid, x.as_slice().to_vec()).unwrap()
}

#[test]
fn converged_proximal_agents_give_the_map_estimate() {
    let started = Instant::now();
    let (fm, truth) = problem();
    let grid = *truth.grid();
    let m1 = truth.map(|v| 0.9 * v);
    let m2 = random_volume(grid, 3, 0.5);
    let (l1, l2, b1, b2) = (2.0, 0.5, 1.0, 0.5);
    let sigma = 0.5;
    let mut agents: Vec<Box<dyn Agent>> = vec![
        Box::new(ForwardModelAgent::new(fm.clone(), sigma, tight()).unwrap()),
        Box::new(quadratic_proximal_agent(m1.clone(), l1, sigma).unwrap()),
        Box::new(quadratic_proximal_agent(m2.clone(), l2, sigma).unwrap()),
    ];
    let cfg = MaceConfig {
        betas: vec![b1, b2],
        residual_tol: 1e-9,
        max_iters: 2000,
        ..Default::default()
    };
    let (x_hat, log) = mace_solve(&mut agents, &cfg, &Volume::zeros(grid)).unwrap();
    assert!(log.converged);
    let oracle = dense_map(&fm, grid, &[(b1, l1, &m1), (b2, l2, &m2)]);
    let err = x_hat.distance(&oracle) / oracle.norm();
    assert!(err <= 1e-4, "relative error {err}");
    assert!(started.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn converged_state_is_a_fixed_point() {
    let (fm, truth) = problem();
    let grid = *truth.grid();
    let mut agents: Vec<Box<dyn Agent>> = vec![
        Box::new(ForwardModelAgent::new(fm, 0.5, tight()).unwrap()),
        Box::new(quadratic_proximal_agent(truth.clone(), 1.0, 0.5).unwrap()),
    ];
    let cfg = MaceConfig {
        betas: vec![1.0],
        ..Default::default()
    };
    let mut solver = MaceSolver::new(&mut agents, &cfg, &Volume::zeros(grid)).unwrap();
    let mut residual = f64::INFINITY;
    for _ in 0..500 {
        residual = solver.step().unwrap();
        if residual < 1e-10 {
            break;
        }
    }
    assert!(residual < 1e-4);
    let w = solver.state().clone();
    solver.step().unwrap();
    assert!(solver.state().distance(&w) <= 1e-8 * w.norm());
}

/// Consensus ADMM over agents `F_i` with weights `μ`:
/// `x_i = F_i(v − u_i)`, `v = Σ μ_i (x_i + u_i)`, `u_i += x_i − v`.
fn consensus_admm(agents: &mut [Box<dyn Agent>], mu: &[f64], init: &Volume, iters: usize) -> Vec<Vec<Volume>> {
    let n = agents.len();
    let mut v = init.clone();
    let mut u = vec![Volume::zeros(*init.grid()); n];
    let mut history = Vec::new();
    for _ in 0..iters {
        let x: Vec<Volume> = (0..n)
            .map(|i| agents[i].apply(&v.zip_map(&u[i], |a, b| a - b)).unwrap())
            .collect();
        let mut next = Volume::zeros(*init.grid());
        for i in 0..n {
            next.axpy(mu[i], &x[i].zip_map(&u[i], |a, b| a + b));
        }
        for i in 0..n {
            let xi = &x[i];
            u[i] = u[i].zip_map(xi, |a, b| a + b).zip_map(&next, |a, b| a - b);
        }
        v = next;
        history.push(x);
    }
    history
}

fn pnp_agents(fm: &ForwardModelTerm, sigma: f64) -> Vec<Box<dyn Agent>> {
    vec![
        Box::new(ForwardModelAgent::new(fm.clone(), sigma, tight()).unwrap().cold()),
        Box::new(
            NlmVolumeAgent::new(NlmVolumeConfig {
                strength: 0.3,
                patch_radius: 1,
                search_radius: 1,
            })
            .unwrap(),
        ),
    ]
}

#[test]
fn half_step_with_one_prior_is_plug_and_play_admm() {
    let (fm, truth) = problem();
    let init = truth.map(|v| 0.5 * v);
    let sigma = 0.4;
    let cfg = MaceConfig {
        rho: 0.5,
        betas: vec![1.0],
        residual_tol: 0.0,
        max_iters: 20,
        ..Default::default()
    };
    let mut mace_iterates = Vec::new();
    let mut agents = pnp_agents(&fm, sigma);
    mace_solve_with_observer(&mut agents, &cfg, &init, |_, x| mace_iterates.push(x.clone())).unwrap();
    let mu = compute_mu(&cfg.betas).unwrap();
    let admm = consensus_admm(&mut pnp_agents(&fm, sigma), &mu, &init, 20);
    assert_eq!(mace_iterates.len(), 20);
    for (it, (m, a)) in mace_iterates.iter().zip(&admm).enumerate() {
        for k in 0..2 {
            let err = m.get(k).distance(&a[k]) / a[k].norm();
            assert!(err <= 1e-8, "iteration {} agent {k}: {err}", it + 1);
        }
    }
}

#[test]
fn prior_order_does_not_matter() {
    let (fm, truth) = problem();
    let grid = *truth.grid();
    let m1 = truth.clone();
    let m2 = random_volume(grid, 5, 1.0);
    let run = |swap: bool| {
        let q1: Box<dyn Agent> = Box::new(quadratic_proximal_agent(m1.clone(), 1.0, 0.5).unwrap());
        let q2: Box<dyn Agent> = Box::new(quadratic_proximal_agent(m2.clone(), 3.0, 0.5).unwrap());
        let fwd: Box<dyn Agent> = Box::new(ForwardModelAgent::new(fm.clone(), 0.5, tight()).unwrap());
        let (agents, betas) = if swap {
            (vec![fwd, q2, q1], vec![0.3, 2.0])
        } else {
            (vec![fwd, q1, q2], vec![2.0, 0.3])
        };
        let mut agents = agents;
        let cfg = MaceConfig {
            betas,
            residual_tol: 1e-9,
            max_iters: 2000,
            ..Default::default()
        };
        mace_solve(&mut agents, &cfg, &Volume::zeros(grid)).unwrap().0
    };
    let (a, b) = (run(false), run(true));
    assert!(a.distance(&b) / a.norm() < 1e-6);
}

#[test]
fn residual_vanishes_at_consensus() {
    let grid = Grid::new(4, 4, 2);
    let w = StateStack::replicate(&random_volume(grid, 9, 1.0), 3).unwrap();
    let mut agents: Vec<Box<dyn Agent>> = vec![Box::new(Ident), Box::new(Ident), Box::new(Ident)];
    let mu = compute_mu(&[1.0, 2.0]).unwrap();
    assert_eq!(equilibrium_residual(&mut agents, &w, &mu).unwrap(), 0.0);
}

struct Ident;

impl Agent for Ident {
    fn name(&self) -> &str {
        "identity"
    }
    fn kind(&self) -> AgentKind {
        AgentKind::Geometric
    }
    fn apply(&mut self, x: &Volume) -> macect::Result<Volume> {
        Ok(x.clone())
    }
}

#[test]
fn identity_agents_keep_the_stack() {
    let grid = Grid::new(4, 4, 2);
    let w = StateStack::new(vec![random_volume(grid, 1, 1.0), random_volume(grid, 2, 1.0)]).unwrap();
    let mut agents: Vec<Box<dyn Agent>> = vec![Box::new(Ident), Box::new(Ident)];
    assert_eq!(apply_l(&mut agents, &w).unwrap(), w);
}

#[test]
fn only_the_changed_slot_changes() {
    let grid = Grid::new(4, 4, 2);
    let a = random_volume(grid, 1, 1.0);
    let b = random_volume(grid, 2, 1.0);
    let mut agents: Vec<Box<dyn Agent>> = vec![
        Box::new(quadratic_proximal_agent(Volume::zeros(grid), 1.0, 1.0).unwrap()),
        Box::new(quadratic_proximal_agent(Volume::filled(grid, 1.0), 2.0, 1.0).unwrap()),
    ];
    let before = apply_l(&mut agents, &StateStack::new(vec![a.clone(), b.clone()]).unwrap()).unwrap();
    let after = apply_l(&mut agents, &StateStack::new(vec![a, b.map(|v| v + 1.0)]).unwrap()).unwrap();
    assert_eq!(before.get(0), after.get(0));
    assert_ne!(before.get(1), after.get(1));
}

#[test]
fn solver_is_deterministic() {
    let (fm, truth) = problem();
    let run = || {
        let mut agents = pnp_agents(&fm, 0.4);
        let cfg = MaceConfig {
            betas: vec![1.0],
            max_iters: 5,
            residual_tol: 0.0,
            ..Default::default()
        };
        mace_solve(&mut agents, &cfg, &truth).unwrap()
    };
    let (x1, l1) = run();
    let (x2, l2) = run();
    assert_eq!(x1, x2);
    assert_eq!(l1.residuals(), l2.residuals());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mu_is_a_probability_vector(betas in prop::collection::vec(0.0f64..10.0, 0..6)) {
        let mu = compute_mu(&betas).unwrap();
        prop_assert_eq!(mu.len(), betas.len() + 1);
        prop_assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(mu[0] > 0.0 && mu.iter().all(|&m| m >= 0.0));
    }

    #[test]
    fn averaging_is_idempotent(seed in any::<u64>(), betas in prop::collection::vec(0.0f64..4.0, 1..4)) {
        let grid = Grid::new(3, 3, 2);
        let states = (0..=betas.len()).map(|k| random_volume(grid, seed ^ k as u64, 2.0)).collect();
        let w = StateStack::new(states).unwrap();
        let mu = compute_mu(&betas).unwrap();
        let g = apply_g(&w, &mu).unwrap();
        let gg = apply_g(&g, &mu).unwrap();
        prop_assert!(gg.distance(&g) <= 1e-12 * (1.0 + g.norm()));
    }
}
