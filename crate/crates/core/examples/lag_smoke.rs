use l0denoise::cutting::*;
use l0denoise::data::*;
use l0denoise::lagrangian::*;
use l0denoise::model::*;

fn main() {
    let cfg = SyntheticConfig { n: 5000, s: 10, h: 10, sigma: 0.5, seed: 42 };
    let y_hat = gen_true_signal(&cfg).unwrap();
    let (y, _t) = add_noise_and_scale(&y_hat, cfg.sigma, derived_seed(cfg.seed, 1)).unwrap();
    let mut priors = SparsityPriors::regularized(0.0);
    priors.kappa = 0.01;
    let inst = ProblemInstance::chain(y, 0.3, priors).unwrap();

    let tight = CuttingSurfaceConfig { rel_improvement_stop: 1e-9, ..Default::default() };
    let t0 = std::time::Instant::now();
    let direct = solve_decomp(&inst, &tight).unwrap();
    println!("direct tight: obj {:.6} rounds {} cuts {} status {:?} in {:.2?}",
        direct.objective, direct.iterations, direct.cuts_added, direct.status, t0.elapsed());

    for m in [5usize, 10] {
        let t = std::time::Instant::now();
        let rep = run_subgradient(&inst, &LagrangianConfig::with_blocks(m)).unwrap();
        println!("m={m}: dual {:.6} status {:?} updates {} solves {} in {:.2?}  (direct - dual = {:.3e})",
            rep.objective, rep.status, rep.iterations, rep.cuts_added, t.elapsed(), direct.objective - rep.objective);
        assert!(rep.objective <= direct.objective + 1e-6, "weak duality violated");
    }
}
