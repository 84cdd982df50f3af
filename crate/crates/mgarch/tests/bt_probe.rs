mod common;

use mgarch::experiments::estimation_design;
use mgarch::{
    entry_losses, matrix_garch_forecasts, rolling_backtest, simulate, BacktestEngine,
    BacktestOptions, BaselineModel, FitOptions, InnovationLaw,
};
use nalgebra::DMatrix;

#[test]
#[ignore]
fn bt_probe() {
    // criterion 8 direction: MF-GARCH SD vs equal weights
    let mut wins = 0;
    let reps = 10;
    let t0 = std::time::Instant::now();
    for rep in 0..reps {
        let (panel, _, _) = common::simulate_factor_panel(10, 10, 350, 1.0, 8800 + rep);
        let opts = BacktestOptions {
            t_train: 300,
            t_test: 50,
            refit_every: 10,
            ..BacktestOptions::default()
        };
        let mf = rolling_backtest(
            &panel,
            &BacktestEngine::MatrixFactorGarch { k1: Some(3), k2: Some(3) },
            &opts,
        )
        .unwrap();
        let ew = rolling_backtest(&panel, &BacktestEngine::EqualWeights, &opts).unwrap();
        if mf.sd <= ew.sd {
            wins += 1;
        }
        println!("rep {rep}: mf sd {:.4} ew sd {:.4} carried {}", mf.sd, ew.sd, mf.carried.iter().filter(|&&c| c).count());
    }
    println!("criterion8 probe: {wins}/{reps} wins, {:.1}s/rep", t0.elapsed().as_secs_f64() / reps as f64);

    // criterion 9 direction: matrix GARCH MSE vs univariate / row / col BEKK
    let theta = estimation_design();
    let t1 = std::time::Instant::now();
    let mut sums = [0.0f64; 4];
    let reps9 = 5;
    for rep in 0..reps9 {
        let panel = simulate(&theta, 1100, 0, &InnovationLaw::MatrixNormal, 9900 + rep).unwrap();
        let realized: Vec<DMatrix<f64>> = (1000..1100).map(|t| panel.get(t).clone()).collect();
        let opts = FitOptions { multistarts: 1, compute_sandwich: false, ..FitOptions::default() };
        let vars = |covs: &[DMatrix<f64>]| -> Vec<DMatrix<f64>> {
            covs.iter()
                .map(|c| DMatrix::from_fn(3, 3, |i, j| c[(j * 3 + i, j * 3 + i)]))
                .collect()
        };
        let mg = matrix_garch_forecasts(&panel, 1000, &opts).unwrap();
        sums[0] += entry_losses(&vars(&mg), &realized).unwrap().mean.mse;
        for (k, model) in [BaselineModel::UnivariateGarch, BaselineModel::DiagBekkRow, BaselineModel::DiagBekkColumn]
            .iter()
            .enumerate()
        {
            let covs = mgarch::baseline_forecasts(&panel, *model, 1000).unwrap();
            sums[k + 1] += entry_losses(&vars(&covs), &realized).unwrap().mean.mse;
        }
    }
    println!(
        "criterion9 probe ({:.1}s/rep): matrix {:.4} univariate {:.4} bekk-row {:.4} bekk-col {:.4}",
        t1.elapsed().as_secs_f64() / reps9 as f64,
        sums[0] / reps9 as f64,
        sums[1] / reps9 as f64,
        sums[2] / reps9 as f64,
        sums[3] / reps9 as f64
    );
}
