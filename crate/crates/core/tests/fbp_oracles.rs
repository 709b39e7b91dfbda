use macect::fbp::{fbp_reconstruct, FbpConfig, Padding};
use macect::metrics::nrmse;
use macect::phantom::{make_cracked_cylinder, PhantomSpec};
use macect::projector::forward_project;
use macect::{Grid, ScanGeometry, Sinogram, Volume};

fn disk(n: usize, radius: f64) -> Volume {
    make_cracked_cylinder(&PhantomSpec::cylinder([n, n, 1], radius, 1.0)).unwrap()
}

#[test]
fn zero_sinogram_gives_zero_volume() {
    let grid = Grid::new(16, 16, 2);
    let g = ScanGeometry::four_view(&grid);
    let out = fbp_reconstruct(&Sinogram::zeros(g.clone()), &g, &grid, &FbpConfig::default()).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn dense_views_reconstruct_the_disk() {
    let truth = disk(121, 50.0);
    let mut g = ScanGeometry::equiangular(truth.grid(), 180);
    g.channel_pitch = 0.5;
    g.n_channels = 2 * g.n_channels - 1;
    let s = forward_project(&truth, &g).unwrap();
    let out = fbp_reconstruct(&s, &g, truth.grid(), &FbpConfig::default()).unwrap();
    let err = nrmse(&out, &truth).unwrap();
    assert!(err < 0.05, "{err}");
}

#[test]
fn constant_rows_are_rejected() {
    let grid = Grid::new(32, 32, 1);
    let g = ScanGeometry::equiangular(&grid, 30);
    let s = Sinogram::from_vec(g.clone(), vec![2.0; g.len()]).unwrap();
    let out = fbp_reconstruct(&s, &g, &grid, &FbpConfig::default()).unwrap();
    let mean_abs = out.data().iter().map(|v| v.abs()).sum::<f64>() / out.len() as f64;
    assert!(mean_abs < 1e-3 * 2.0, "{mean_abs}");
}

#[test]
fn reconstruction_is_linear() {
    let grid = Grid::new(20, 20, 2);
    let g = ScanGeometry::four_view(&grid);
    let a = Sinogram::from_vec(g.clone(), (0..g.len()).map(|i| ((i * 7) % 13) as f64).collect()).unwrap();
    let b = Sinogram::from_vec(g.clone(), (0..g.len()).map(|i| ((i * 3) % 5) as f64 - 2.0).collect()).unwrap();
    let ab = Sinogram::from_vec(g.clone(), a.data().iter().zip(b.data()).map(|(x, y)| 2.0 * x - 0.5 * y).collect())
        .unwrap();
    for padding in [Padding::Zero, Padding::Edge] {
        let cfg = FbpConfig {
            padding,
            ..Default::default()
        };
        let (ra, rb) = (fbp_reconstruct(&a, &g, &grid, &cfg).unwrap(), fbp_reconstruct(&b, &g, &grid, &cfg).unwrap());
        let rab = fbp_reconstruct(&ab, &g, &grid, &cfg).unwrap();
        let expect = ra.zip_map(&rb, |x, y| 2.0 * x - 0.5 * y);
        assert!(rab.distance(&expect) <= 1e-10 * expect.norm());
    }
}

#[test]
fn more_views_do_not_hurt_smooth_objects() {
    let grid = Grid::new(64, 64, 1);
    let blob = Volume::from_fn(grid, |i, j, _| {
        let (x, y) = grid.voxel_center(i, j);
        (-(x * x + (y - 4.0).powi(2)) / 80.0).exp()
    });
    let err = |n: usize| {
        let g = ScanGeometry::equiangular(&grid, n);
        let s = forward_project(&blob, &g).unwrap();
        nrmse(&fbp_reconstruct(&s, &g, &grid, &FbpConfig::default()).unwrap(), &blob).unwrap()
    };
    let mut last = f64::INFINITY;
    for n in [12, 24, 48, 96] {
        let e = err(n);
        assert!(e <= last, "{n} views: {e} > {last}");
        last = e;
    }
}

#[test]
fn fewer_than_one_view_is_rejected() {
    let grid = Grid::new(8, 8, 1);
    let g = ScanGeometry::new(vec![], 13, 1.0, 1);
    let s = Sinogram::zeros(g.clone());
    assert!(fbp_reconstruct(&s, &g, &grid, &FbpConfig::default()).unwrap_err().is_config());
}
