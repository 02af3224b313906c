//! Command-line entry point: train / sweep / fit / bound / lincond / plot.
//! Errors print as a single machine-parseable line on stderr; exit codes
//! are 0 (ok), 2 (configuration error), 3 (runtime failure).

use crate::analysis::{fit_convergence, lincond_demo, apriori_error_bound, BoundParams};
use crate::config::{apply_override, config_from_value, default_key_table};
use crate::error::{Error, Result};
use crate::plot::{emit_plots, read_xy_csv};
use crate::train::{sweep, train_run};
use serde_json::Value;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

const USAGE: &str = "\
pinnlab - physics-informed solvers for CH/NSCH with convergence measurement

USAGE:
    pinnlab <SUBCOMMAND> [FLAGS]

SUBCOMMANDS:
    train    run one training job
             --config <file.json>   run configuration (defaults when absent)
             --set key.path=value   override a config leaf (repeatable)
             --out <dir>            output directory (overrides out_dir)
    sweep    train many networks over seeds x step budgets
             --config <file.json>, --set ... as for train
             --seeds 1,2,3          master seeds (default 1,2,3,4)
             --budgets 800,3200     total step budgets (default 1000,4000)
             --out <dir>            sweep output root
    fit      log-log convergence fit from a (loss, error) CSV
             --in <file.csv>        input table (e.g. a sweep.csv)
             --out <file.json>      write the FitResult as JSON
             --loss-col <name>      loss column (default: loss)
             --err-col <name>       error column (default: error)
    bound    evaluate the a-priori error bound
             --eps <v> --t <v> [--alpha1..--alpha4 <v>] [--lambda <v>]
             [--c8 <v>] [--c9 <v>]
    lincond  exact ill-conditioned linear-system demonstration
             [--out <file.json>]    write the report (stdout otherwise)
    plot     emit SVG figures from a run or sweep directory
             --dir <dir>            directory with records.csv / sweep.csv
             [--out <dir>]          where to write SVGs (default: --dir)
    help     print this text

ENVIRONMENT:
    PINNLAB_THREADS   cap the number of worker threads

EXIT CODES:
    0 ok, 2 configuration error, 3 runtime failure
";

fn print_help() {
    println!("{USAGE}");
    println!("CONFIG KEYS (JSON paths) AND DEFAULTS:");
    for (key, default) in default_key_table() {
        println!("    {key:<34} {default}");
    }
}

struct Flags {
    values: HashMap<String, String>,
    sets: Vec<String>,
}

fn parse_flags(args: &[String], allowed: &[&str]) -> Result<Flags> {
    let mut values = HashMap::new();
    let mut sets = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let flag = args[i].as_str();
        if !flag.starts_with("--") {
            return Err(Error::Config(vec![format!("unexpected argument '{flag}'")]));
        }
        let name = &flag[2..];
        if !allowed.contains(&name) {
            return Err(Error::Config(vec![format!("unknown flag '--{name}'")]));
        }
        let value = args
            .get(i + 1)
            .ok_or_else(|| Error::Config(vec![format!("flag '--{name}' needs a value")]))?
            .clone();
        if name == "set" {
            sets.push(value);
        } else {
            values.insert(name.to_string(), value);
        }
        i += 2;
    }
    Ok(Flags { values, sets })
}

impl Flags {
    fn get(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(|s| s.as_str())
    }

    fn parse_f64(&self, name: &str, default: f64) -> Result<f64> {
        match self.get(name) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| {
                Error::Config(vec![format!("flag '--{name}': '{raw}' is not a number")])
            }),
        }
    }

    fn parse_u64_list(&self, name: &str, default: &[u64]) -> Result<Vec<u64>> {
        match self.get(name) {
            None => Ok(default.to_vec()),
            Some(raw) => raw
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    s.trim().parse::<u64>().map_err(|_| {
                        Error::Config(vec![format!("flag '--{name}': '{s}' is not an integer")])
                    })
                })
                .collect(),
        }
    }
}

fn load_config_with_overrides(flags: &Flags) -> Result<crate::config::RunConfig> {
    let mut tree: Value = match flags.get("config") {
        Some(path) => {
            let text = std::fs::read_to_string(Path::new(path)).map_err(|e| {
                Error::Config(vec![format!("--config {path}: {e}")])
            })?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(vec![format!("{path}: {e}")]))?
        }
        None => Value::Object(serde_json::Map::new()),
    };
    for assignment in &flags.sets {
        apply_override(&mut tree, assignment)?;
    }
    config_from_value(tree)
}

fn cmd_train(args: &[String]) -> Result<()> {
    let flags = parse_flags(args, &["config", "set", "out"])?;
    let cfg = load_config_with_overrides(&flags)?;
    let out = flags.get("out").map(PathBuf::from);
    let summary = train_run(&cfg, out.as_deref())?;
    let m = &summary.manifest;
    println!(
        "run complete: {} steps in {:.1}s -> {}",
        m.steps,
        m.wall_ms as f64 / 1000.0,
        summary.out_dir.display()
    );
    println!(
        "loss: initial {:.4e} (unweighted {:.4e}) -> final eval {:.4e} (unweighted {:.4e})",
        m.initial_loss.total,
        m.initial_loss.total_unweighted,
        m.final_eval_loss.total,
        m.final_eval_loss.total_unweighted
    );
    if let Some(err) = &m.final_errors {
        println!(
            "errors: space-time phi {:.4e}, u {:.4e}; final-time phi {:.4e}, u {:.4e}",
            err.spacetime.phi, err.spacetime.u, err.final_time.phi, err.final_time.u
        );
    }
    println!("ladder checkpoints: {}", m.ladder.len());
    Ok(())
}

fn cmd_sweep(args: &[String]) -> Result<()> {
    let flags = parse_flags(args, &["config", "set", "out", "seeds", "budgets"])?;
    let cfg = load_config_with_overrides(&flags)?;
    let seeds = flags.parse_u64_list("seeds", &[1, 2, 3, 4])?;
    let budgets = flags.parse_u64_list("budgets", &[1000, 4000])?;
    let out = flags
        .get("out")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(&cfg.out_dir).join("sweep"));
    let table = sweep(&cfg, &seeds, &budgets, &out)?;
    let ok = table.rows.iter().filter(|r| r.status == "ok").count();
    println!(
        "sweep complete: {} runs ({} ok) -> {}",
        table.rows.len(),
        ok,
        table.csv_path.display()
    );
    Ok(())
}

fn cmd_fit(args: &[String]) -> Result<()> {
    let flags = parse_flags(args, &["in", "out", "loss-col", "err-col"])?;
    let input = flags
        .get("in")
        .ok_or_else(|| Error::Config(vec!["fit: --in <file.csv> is required".into()]))?;
    let loss_col = flags.get("loss-col").unwrap_or("loss");
    let err_col = flags.get("err-col").unwrap_or("error");
    let (pairs, skipped) = read_xy_csv(Path::new(input), loss_col, err_col)
        .map_err(|e| Error::Config(vec![format!("--in {input}: {e}")]))?;
    if skipped > 0 {
        eprintln!("fit: skipped {skipped} rows without finite ({loss_col}, {err_col})");
    }
    let fit = fit_convergence(&pairs)?;
    println!(
        "n = {:.6}, log10C = {:.6}, C = {:.6}, r2 = {:.6}, points = {}",
        fit.n, fit.log10_c, fit.c, fit.r2, fit.count
    );
    if let Some(out) = flags.get("out") {
        std::fs::write(Path::new(out), serde_json::to_string_pretty(&fit)?)?;
    }
    Ok(())
}

fn fmt_value(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if (1e-4..1e7).contains(&v.abs()) {
        let s = format!("{v:.6}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.9e}")
    }
}

fn cmd_bound(args: &[String]) -> Result<()> {
    let flags = parse_flags(
        args,
        &[
            "eps", "t", "alpha1", "alpha2", "alpha3", "alpha4", "lambda", "c8", "c9",
        ],
    )?;
    let d = BoundParams::default();
    let params = BoundParams {
        eps: flags.parse_f64("eps", d.eps)?,
        t: flags.parse_f64("t", d.t)?,
        alpha1: flags.parse_f64("alpha1", d.alpha1)?,
        alpha2: flags.parse_f64("alpha2", d.alpha2)?,
        alpha3: flags.parse_f64("alpha3", d.alpha3)?,
        alpha4: flags.parse_f64("alpha4", d.alpha4)?,
        lambda: flags.parse_f64("lambda", d.lambda)?,
        c8: flags.parse_f64("c8", d.c8)?,
        c9: flags.parse_f64("c9", d.c9)?,
    };
    params.validate()?;
    println!("{}", fmt_value(apriori_error_bound(&params)));
    Ok(())
}

fn cmd_lincond(args: &[String]) -> Result<()> {
    let flags = parse_flags(args, &["out"])?;
    let report = lincond_demo();
    let json = serde_json::to_string_pretty(&report)?;
    match flags.get("out") {
        Some(path) => std::fs::write(Path::new(path), json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_plot(args: &[String]) -> Result<()> {
    let flags = parse_flags(args, &["dir", "out"])?;
    let dir = flags
        .get("dir")
        .ok_or_else(|| Error::Config(vec!["plot: --dir <directory> is required".into()]))?;
    let dir = PathBuf::from(dir);
    if !dir.is_dir() {
        return Err(Error::Config(vec![format!(
            "plot: '{}' is not a directory",
            dir.display()
        )]));
    }
    let out = flags.get("out").map(PathBuf::from).unwrap_or_else(|| dir.clone());
    let (files, fit) = emit_plots(&dir, &out)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    if let Some(fit) = fit {
        println!("fit overlay: n = {:.4}, C = {:.5}", fit.n, fit.c);
    }
    Ok(())
}

/// Run one CLI invocation; returns the process exit code.
pub fn dispatch(args: Vec<String>) -> i32 {
    let Some(cmd) = args.first().map(|s| s.as_str()) else {
        print_help();
        return 2;
    };
    let rest = &args[1..];
    let result = match cmd {
        "train" => cmd_train(rest),
        "sweep" => cmd_sweep(rest),
        "fit" => cmd_fit(rest),
        "bound" => cmd_bound(rest),
        "lincond" => cmd_lincond(rest),
        "plot" => cmd_plot(rest),
        "help" | "--help" | "-h" => {
            print_help();
            return 0;
        }
        other => {
            eprintln!("error: config: unknown subcommand '{other}' (see 'pinnlab help')");
            return 2;
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let kind = if e.is_config() { "config" } else { "runtime" };
            // single machine-parseable line
            let msg = e.to_string().replace('\n', "; ");
            eprintln!("error: {kind}: {msg}");
            if e.is_config() {
                2
            } else {
                3
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flags_and_subcommands_are_config_errors() {
        assert_eq!(dispatch(vec!["frobnicate".into()]), 2);
        assert_eq!(
            dispatch(vec!["bound".into(), "--nope".into(), "1".into()]),
            2
        );
    }

    #[test]
    fn bound_formats_cleanly() {
        assert_eq!(fmt_value(0.005000000000000001), "0.005");
        assert_eq!(fmt_value(0.0), "0");
        assert_eq!(fmt_value(2.5), "2.5");
        assert!(fmt_value(3.2e-9).contains('e'));
    }

    #[test]
    fn missing_required_flag_is_config_error() {
        assert_eq!(dispatch(vec!["fit".into()]), 2);
        assert_eq!(dispatch(vec!["plot".into()]), 2);
    }
}
