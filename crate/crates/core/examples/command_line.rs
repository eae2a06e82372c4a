//! The command-line workflow driven in-process: simulate, estimate and
//! diagnose into a temporary directory.

use factor_garch::cli::cli_dispatch;

fn main() {
    let dir = std::env::temp_dir().join("factor-garch-cli-example");
    std::fs::create_dir_all(&dir).unwrap();
    let config = dir.join("run.toml");
    std::fs::write(
        &config,
        "[run]\nn_iterations = 600\nburn_in = 200\nseed = 2\n\n[simulation]\nseed = 3\nn_periods = 100\nn_series = 4\n",
    )
    .unwrap();
    let s = |p: &std::path::Path| p.display().to_string();
    let steps: Vec<Vec<String>> = vec![
        vec!["simulate".into(), "--config".into(), s(&config), "--out".into(), s(&dir.join("sim"))],
        vec!["estimate".into(), "--config".into(), s(&config), "--data".into(), s(&dir.join("sim")), "--out".into(), s(&dir.join("est"))],
        vec!["diagnose".into(), "--draws".into(), s(&dir.join("est")), "--out".into(), s(&dir.join("diag"))],
        vec!["order-series".into(), "--data".into(), s(&dir.join("sim")), "--depth".into(), "3".into()],
    ];
    for args in steps {
        let code = cli_dispatch(std::iter::once("factor-garch".to_string()).chain(args.clone()));
        println!("factor-garch {} -> exit {code}", args[0]);
        if code != 0 {
            std::process::exit(code);
        }
    }
    println!("outputs under {}", dir.display());
}
