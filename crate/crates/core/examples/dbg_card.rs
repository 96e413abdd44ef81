use l0denoise::cutting::*;
use l0denoise::data::*;
use l0denoise::model::*;

fn main() {
    let cfg = SyntheticConfig { n: 1000, s: 10, h: 10, sigma: 0.5, seed: 42 };
    let y_hat = gen_true_signal(&cfg).unwrap();
    let (y, _t) = add_noise_and_scale(&y_hat, cfg.sigma, derived_seed(cfg.seed, 1)).unwrap();
    let inst = ProblemInstance::chain(y, 1.0, SparsityPriors::cardinality(100)).unwrap();
    let tight = CuttingSurfaceConfig {
        rel_improvement_stop: 1e-9,
        max_rounds: 40,
        trace_path: Some("/tmp/rounds_card.csv".into()),
        ..Default::default()
    };
    let t = std::time::Instant::now();
    let rep = solve_decomp(&inst, &tight).unwrap();
    println!("cardinality n=1000: obj {:.6} rounds {} cuts {} status {:?} in {:.2?}",
        rep.objective, rep.iterations, rep.cuts_added, rep.status, t.elapsed());
    print!("{}", std::fs::read_to_string("/tmp/rounds_card.csv").unwrap());
}
