use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use hetshadow::enclosure::{self, CenterSpec, SaddleVar, Suitability, WTubeParams};
use hetshadow::hset::GridSpec;
use hetshadow::model::LatticeModel;
use hetshadow::shadow::{self, ChainConfig, ShootConfig};
use hetshadow::{plot, portrait};

#[derive(Parser)]
#[command(name = "hetshadow", version, about = "Heteroclinic-chain shadowing for toy-model lattices")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Model TOML file, or one of the built-ins `ck`, `ck-dissipative`.
    #[arg(long, default_value = "ck")]
    model: String,
    /// Lattice size for built-in models.
    #[arg(long, default_value_t = 3)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the structural hypotheses of a model.
    VerifyModel {
        #[command(flatten)]
        common: Common,
    },
    /// Phase portrait of the reduced two-mode field for the pair (j, k).
    Portrait {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        j: usize,
        #[arg(long, default_value_t = 2)]
        k: usize,
        /// Streamline seeds per axis.
        #[arg(long, default_value_t = 14)]
        grid: usize,
    },
    /// Suitability table of the resonant monomials up to degree 9.
    Classify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.01)]
        sigma: f64,
        #[arg(long = "T", default_value_t = 12.0)]
        t: f64,
    },
    /// Tube and center-band checks on the synthetic normal-form system.
    Enclosure {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.01)]
        sigma: f64,
        #[arg(long = "T", default_value_t = 12.0)]
        t: f64,
        /// Number of initial conditions.
        #[arg(long, default_value_t = 20)]
        grid: usize,
    },
    /// Build and check the covering chain.
    Covering {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.01)]
        sigma: f64,
        #[arg(long = "T", default_value_t = 18.0)]
        t: f64,
        /// Face points per dimension.
        #[arg(long, default_value_t = 3)]
        grid: usize,
    },
    /// Shoot for an orbit through the chain sets and export it.
    Shadow {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.01)]
        sigma: f64,
        /// Passage time; defaults to the smallest T with a constructible chain.
        #[arg(long = "T")]
        t: Option<f64>,
        #[arg(long, default_value_t = 3)]
        grid: usize,
    },
}

enum Fail {
    Config(String),
    Check(String),
}

type Res = Result<(), Fail>;

fn cfg<E: std::fmt::Display>(e: E) -> Fail {
    Fail::Config(e.to_string())
}

fn load_model(c: &Common) -> Result<LatticeModel, Fail> {
    match c.model.as_str() {
        "ck" | "ck-dissipative" if c.n < 3 => Err(Fail::Config(format!("n = {} (need n >= 3)", c.n))),
        "ck" => Ok(LatticeModel::ck(c.n)),
        "ck-dissipative" => Ok(LatticeModel::ck_dissipative(c.n)),
        p => {
            let text = fs::read_to_string(p).map_err(|e| Fail::Config(format!("{p}: {e}")))?;
            LatticeModel::from_toml(&text).map_err(|e| Fail::Config(format!("{p}: {e}")))
        }
    }
}

/// Write through a temporary file in the same directory, then rename.
fn write_atomic(dir: &Path, name: &str, data: &str) -> Res {
    fs::create_dir_all(dir).map_err(|e| Fail::Config(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    let mut tmp = tempfile_in(dir, name).map_err(|e| Fail::Config(format!("{}: {e}", path.display())))?;
    let io = (|| {
        tmp.1.write_all(data.as_bytes())?;
        tmp.1.sync_all()?;
        fs::rename(&tmp.0, &path)
    })();
    if let Err(e) = io {
        let _ = fs::remove_file(&tmp.0);
        return Err(Fail::Config(format!("{}: {e}", path.display())));
    }
    Ok(())
}

fn tempfile_in(dir: &Path, name: &str) -> std::io::Result<(PathBuf, fs::File)> {
    let p = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let f = fs::OpenOptions::new().write(true).create_new(true).open(&p)?;
    Ok((p, f))
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

fn verify_model(c: &Common) -> Res {
    let m = load_model(c)?;
    let rep = m.check_hypotheses(100, c.seed);
    let failures = rep.failures(1e-10);
    let out = serde_json::json!({ "report": rep, "failures": failures, "pass": failures.is_empty() });
    let text = json(&out);
    write_atomic(&c.out, "verify-model.json", &text)?;
    print!("{text}");
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Fail::Check(format!("failing hypotheses: {}", failures.join(", "))))
    }
}

fn portrait_cmd(c: &Common, j: usize, k: usize, grid: usize) -> Res {
    let m = load_model(c)?;
    let p = portrait::portrait(&m, j, k, grid).map_err(cfg)?;
    let stem = format!("portrait_{j}_{k}");
    write_atomic(&c.out, &format!("{stem}.svg"), &portrait::to_svg(&p))?;
    write_atomic(&c.out, &format!("{stem}.csv"), &portrait::to_csv(&m, &p))?;
    use portrait::EqKind::*;
    let summary = serde_json::json!({
        "j": j, "k": k,
        "saddles": p.count(Saddle), "centers": p.count(Center),
        "attractors": p.count(Attractor), "repellers": p.count(Repeller),
        "non_isolated_points": p.degenerate.len(),
        "lines": p.lines, "equilibria": p.equilibria,
    });
    let text = json(&summary);
    write_atomic(&c.out, &format!("{stem}.json"), &text)?;
    println!(
        "pair ({j},{k}): {} saddles, {} centers, {} attractors, {} repellers",
        p.count(Saddle),
        p.count(Center),
        p.count(Attractor),
        p.count(Repeller)
    );
    Ok(())
}

fn classify(c: &Common, sigma: f64, t: f64) -> Res {
    let p = WTubeParams::new(t, sigma, 1.0, 1, 0).map_err(cfg)?;
    let mut csv = String::from("variable,monomial,class,a,suitability\n");
    let mut unsuitable = 0;
    for v in SaddleVar::ALL {
        for r in enclosure::enumerate_and_classify(9, v, &p).map_err(cfg)? {
            csv.push_str(&format!("{},{},{:?},{},{:?}\n", v.name(), r.label, r.class, r.a, r.suitability));
            if r.suitability == Suitability::PotentiallySuitable {
                println!("{:<4} {:<16} {:?} PotentiallySuitable", v.name(), r.label, r.class);
            }
            if r.suitability == Suitability::Unsuitable {
                unsuitable += 1;
            }
        }
    }
    write_atomic(&c.out, "classify.csv", &csv)?;
    if unsuitable > 0 {
        return Err(Fail::Check(format!("{unsuitable} unsuitable monomials")));
    }
    Ok(())
}

fn enclosure_cmd(c: &Common, sigma: f64, t: f64, count: usize) -> Res {
    let p = WTubeParams::new(t, sigma, 1.0, 1, 0).map_err(cfg)?;
    let one = Complex64::new(1.0, 0.0);
    let sys = enclosure::build_synthetic_nf_system(enclosure::all_resonant_cubics(), vec![CenterSpec { nu: 1.0, coupling: [one, -one, one, -one] }]).map_err(cfg)?;
    let ics = enclosure::sample_ics(&p, 1, count, c.seed);
    let tube = enclosure::verify_theorem_fen(&sys, &p, &ics, &[0.0, 0.5, 1.0]).map_err(|e| Fail::Check(e.to_string()))?;
    let center = enclosure::verify_center_modulus(&sys, &p, &ics, None).map_err(|e| Fail::Check(e.to_string()))?;
    let pass = tube.contained && center.contained;
    let text = json(&serde_json::json!({ "tube": tube, "center": center, "pass": pass }));
    write_atomic(&c.out, "enclosure.json", &text)?;
    println!("tubes contained: {} (worst slack {:?}); center band: {} (worst ratio {:.3e})", tube.contained, tube.worst_slack, center.contained, center.worst_log_ratio);
    if pass {
        Ok(())
    } else {
        Err(Fail::Check("enclosure violated".into()))
    }
}

fn chain_config(m: &LatticeModel, c: &Common, sigma: f64, t: f64, grid: usize) -> Result<ChainConfig, Fail> {
    let cc = ChainConfig { grid: GridSpec { face: grid.max(2), interior: 2 }, seed: c.seed, ..ChainConfig::new(m.n, sigma, t) };
    cc.validate().map_err(cfg)?;
    Ok(cc)
}

fn covering(c: &Common, sigma: f64, t: f64, grid: usize) -> Res {
    let m = load_model(c)?;
    let cc = chain_config(&m, c, sigma, t, grid)?;
    let r = shadow::verify_chain(&m, &cc).map_err(|e| Fail::Check(e.to_string()))?;
    write_atomic(&c.out, "covering.json", &(r.to_json() + "\n"))?;
    for l in &r.links {
        let status = if l.pass() { "pass" } else { "FAIL" };
        match (&l.verdict, &l.error) {
            (Some(v), _) => println!("{status} {:<24} entry {:+.3e} exit {:+.3e}", l.name, v.entry_margin, v.exit_margin),
            (None, e) => println!("{status} {:<24} {}", l.name, e.as_deref().unwrap_or("")),
        }
    }
    for s in &r.construction {
        println!("construction: {s}");
    }
    match r.first_failure() {
        None if r.pass => Ok(()),
        Some(l) => Err(Fail::Check(format!("link {} failed", l.name))),
        None => Err(Fail::Check("chain not verified".into())),
    }
}

fn shadow_cmd(c: &Common, sigma: f64, t: Option<f64>, grid: usize) -> Res {
    let m = load_model(c)?;
    let start = Instant::now();
    let t = match t {
        Some(t) => t,
        None => match shadow::min_constructible_t(&m, sigma, 10.0, 100.0, 24, c.seed).map_err(|e| Fail::Check(e.to_string()))? {
            Some((t, _)) => t,
            None => return Err(Fail::Check("no constructible T up to 100".into())),
        },
    };
    let cc = chain_config(&m, c, sigma, t, grid)?;
    let r = shadow::verify_chain(&m, &cc).map_err(|e| Fail::Check(e.to_string()))?;
    let o = shadow::shoot_shadowing_orbit(&m, &r, &ShootConfig::default()).map_err(|e| Fail::Check(e.to_string()))?;
    let series: Vec<(String, Vec<(f64, f64)>)> = o.mass_series().into_iter().enumerate().map(|(l, s)| (format!("|b{}|^2", l + 1), s)).collect();
    let svg = plot::line_chart(&series, &format!("mass cascade, n = {}, T = {t}", m.n), "t", "|b_l(t)|^2");
    write_atomic(&c.out, "mass.svg", &svg)?;
    write_atomic(&c.out, "orbit.csv", &o.orbit_csv())?;
    write_atomic(&c.out, "mass.csv", &o.mass_csv())?;
    write_atomic(&c.out, "shadow.json", &json(&serde_json::json!({ "chain": r, "orbit": o })))?;
    println!(
        "T = {t}: residual {:.3e}, dominance {:?}, max |b{}|^2 = {:.4}, entered in order: {}, {:.1} s",
        o.residual,
        o.dominance,
        m.n,
        o.max_last_mass,
        o.entered_in_order,
        start.elapsed().as_secs_f64()
    );
    if o.success() {
        Ok(())
    } else {
        Err(Fail::Check("orbit does not shadow the chain".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("HETSHADOW_THREADS") {
        match v.parse::<usize>() {
            Ok(k) if k > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
            }
            _ => {
                eprintln!("error: HETSHADOW_THREADS must be a positive integer");
                return ExitCode::from(2);
            }
        }
    }
    let res = match &cli.cmd {
        Cmd::VerifyModel { common } => verify_model(common),
        Cmd::Portrait { common, j, k, grid } => portrait_cmd(common, *j, *k, *grid),
        Cmd::Classify { common, sigma, t } => classify(common, *sigma, *t),
        Cmd::Enclosure { common, sigma, t, grid } => enclosure_cmd(common, *sigma, *t, *grid),
        Cmd::Covering { common, sigma, t, grid } => covering(common, *sigma, *t, *grid),
        Cmd::Shadow { common, sigma, t, grid } => shadow_cmd(common, *sigma, *t, *grid),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Fail::Check(m)) => {
            eprintln!("check failed: {m}");
            ExitCode::from(1)
        }
    }
}
