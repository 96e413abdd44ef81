use l0denoise::data::*;
use l0denoise::hull::*;
use l0denoise::model::*;
use l0denoise::relax::*;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let rounds: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(4);
    let cfg = SyntheticConfig { n, s: 10, h: 10, sigma: 0.5, seed: 42 };
    let y_hat = gen_true_signal(&cfg).unwrap();
    let (y, _t) = add_noise_and_scale(&y_hat, cfg.sigma, derived_seed(cfg.seed, 1)).unwrap();
    let mut priors = SparsityPriors::regularized(0.0);
    priors.kappa = 0.01;
    let inst = ProblemInstance::chain(y, 0.3, priors).unwrap();
    let off = inst.mmatrix().off;

    let mut master = build_relaxation(&inst, RelaxationKind::Decomp);
    for round in 1..=rounds {
        let t = std::time::Instant::now();
        let sol = master.solve();
        println!(
            "round {round}: obj {:.9} status {:?} iters {} cuts_total {} in {:.2?}",
            sol.objective, sol.status, sol.cone_iterations, master.num_cuts(), t.elapsed()
        );
        if sol.status != SolveStatus::Optimal { break; }
        let mut added = 0;
        for (e, &(i, j, q)) in off.iter().enumerate() {
            if q == 0.0 { continue; }
            let p = LiftedPair {
                z1: sol.z[i], z2: sol.z[j], x1: sol.x[i], x2: sol.x[j],
                g11: sol.gamma_diag[i], g12: sol.gamma_edge[e], g22: sol.gamma_diag[j],
            };
            if p.persp_slack() < -1e-6 || cut_violation(&p) <= 1e-6 { continue; }
            let d = optimal_cut_weight(&p);
            if !(d > 0.0) { continue; }
            if master.register_cut(i, j, d.clamp(1e-6, 1e6)) { added += 1; }
        }
        println!("  separation added {added} cuts");
        if added == 0 { break; }
    }
}
