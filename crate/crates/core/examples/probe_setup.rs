use romx_core::benchmark::{
    run_setup, RomVariant, RunOptions, SetupId, SetupSpec,
};
use romx_core::rb::Grid;
use romx_core::smc::Strategy;
use std::time::Instant;

fn main() {
    let amplitude: f64 = std::env::args()
        .nth(1)
        .and_then(|v| v.parse().ok())
        .unwrap_or(1.0);
    let setup_arg = std::env::args().nth(2).unwrap_or_else(|| "i".into());
    let grid = Grid::new(16, 16).unwrap();
    let id = SetupId::parse(&setup_arg).unwrap();
    let mut setup = SetupSpec::paper(id);
    setup.amplitude = amplitude;
    let opts = RunOptions::new(7);
    let t0 = Instant::now();
    let outcome = run_setup(&grid, &setup, &opts).unwrap();
    println!(
        "setup {} amplitude {} took {:?}, mean|x| = {:.4e}, zeta = {:.4e}",
        setup_arg,
        amplitude,
        t0.elapsed(),
        outcome.mean_traj_norm,
        outcome.zeta
    );
    for rom in [RomVariant::Pod, RomVariant::PodStar, RomVariant::Dmd, RomVariant::DmdStar] {
        for strategy in Strategy::ALL {
            let ks = outcome.curve.k_values(rom, strategy);
            if ks.is_empty() {
                continue;
            }
            print!("{:11} {:9}:", rom.label(), strategy.label());
            for k in ks {
                let e = outcome.curve.get(rom, strategy, k).unwrap();
                print!(" k{k}={:.2e}", e / outcome.mean_traj_norm);
            }
            println!();
        }
    }
    // Sandwich lower-bound violations (dmd): rom_err_sq >= star_err_sq.
    let mut viol = 0usize;
    let mut worst: f64 = 0.0;
    let mut by_family = std::collections::BTreeMap::new();
    for r in &outcome.sandwich {
        let tol = 1e-8 * r.star_err_sq.max(1e-300);
        if r.rom_err_sq + tol < r.star_err_sq {
            viol += 1;
            *by_family
                .entry(format!("{:?}/{}/k{}", r.family, r.strategy.label(), r.k))
                .or_insert(0usize) += 1;
            worst = worst.max((r.star_err_sq - r.rom_err_sq) / r.star_err_sq.max(1e-300));
        }
        if let Some(c) = r.bound_c {
            if r.rom_err_sq > c * r.star_err_sq * (1.0 + 1e-8) {
                println!(
                    "UPPER violation: {:?} {} k={} traj={} rom={:.3e} c*lower={:.3e}",
                    r.family, r.strategy, r.k, r.traj_index, r.rom_err_sq, c * r.star_err_sq
                );
            }
        }
    }
    println!("lower-bound violations: {viol} (worst rel gap {worst:.2e}) of {}", outcome.sandwich.len());
    for (k, v) in by_family {
        println!("  {k}: {v}");
    }
}
