//! The collocation solver on y'' = -y, y(0) = 0, y(pi/2) = 1, whose solution
//! is sin t: adaptive accuracy and fourth-order convergence on fixed meshes.

use std::f64::consts::FRAC_PI_2;

use softland::bvp::{self, BvpOptions, BvpSystem};

struct Oscillator;

impl BvpSystem for Oscillator {
    fn dim(&self) -> usize {
        2
    }
    fn left_count(&self) -> usize {
        1
    }
    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = y[1];
        dy[1] = -y[0];
    }
    fn bc_left(&self, ya: &[f64], r: &mut [f64]) {
        r[0] = ya[0];
    }
    fn bc_right(&self, yb: &[f64], r: &mut [f64]) {
        r[0] = yb[0] - 1.0;
    }
}

fn mesh(m: usize) -> Vec<f64> {
    (0..m).map(|k| FRAC_PI_2 * k as f64 / (m - 1) as f64).collect()
}

fn main() {
    let opts = BvpOptions { tol: 1e-10, bc_tol: 1e-12, ..Default::default() };
    let sol = bvp::solve(&Oscillator, mesh(5), vec![0.0; 10], &opts).expect("oscillator converges");
    let err = (0..=200).map(|k| FRAC_PI_2 * k as f64 / 200.0).map(|t| (sol.eval(t)[0] - t.sin()).abs()).fold(0.0, f64::max);
    println!("adaptive: {} nodes, max error {err:.2e}", sol.nodes());

    let fixed = BvpOptions { tol: 1e-14, bc_tol: 1e-14, ..Default::default() };
    let mut previous: Option<f64> = None;
    for m in [5, 9, 17, 33, 65] {
        let s = bvp::solve_fixed_mesh(&Oscillator, mesh(m), vec![0.0; 2 * m], &fixed).expect("fixed mesh converges");
        let err = s.x.iter().map(|&t| (s.eval(t)[0] - t.sin()).abs()).fold(0.0, f64::max);
        match previous {
            Some(e) => println!("{m:>3} nodes: error {err:.3e}, observed order {:.2}", (e / err).log2()),
            None => println!("{m:>3} nodes: error {err:.3e}"),
        }
        previous = Some(err);
    }
}
