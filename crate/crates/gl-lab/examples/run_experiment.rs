//! Driving a full experiment through the harness: load a TOML config,
//! shrink it for a quick demonstration, run the micro-vs-SBE comparison,
//! and read back the verdicts and CSV artifacts it wrote.

use gl_lab::harness::{run, ExperimentConfig};

fn main() -> gl_lab::Result<()> {
    let toml_text = std::fs::read_to_string("configs/compare.toml")
        .map_err(|e| gl_lab::Error::usage(format!("run from the workspace root: {e}")))?;
    let mut cfg = ExperimentConfig::from_toml(&toml_text)?;
    cfg.replicas = 40;
    cfg.out_dir = "out/example-compare".into();

    let artifact = run(&cfg)?;
    for (check, pass) in &artifact.verdicts {
        println!("{} {check}", if *pass { "PASS" } else { "FAIL" });
    }
    for table in &artifact.tables {
        println!(
            "table `{}`: {} columns × {} rows",
            table.name,
            table.header.len(),
            table.rows.len()
        );
    }
    println!("artifacts written under {}", cfg.out_dir);
    Ok(())
}
